use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{seed_count, CorpusRecipe, SeedSampling};
use crate::diffusion::{DiffusionSpec, DEFAULT_ROUNDS};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::inference::{BudgetConstraint, InferenceConfig, Scorer};
use crate::seeds::derive_seed;
use crate::trainer::TrainConfig;

/// Where the graph comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum GraphSource {
    /// Synthetic stand-in for the Jazz musicians network.
    JazzLike,
    ErdosRenyi { nodes: usize, edges: usize },
    EdgeList { path: PathBuf, directed: bool },
}

/// How a budget fraction becomes a constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetKind {
    /// `round(fraction * |V|)` seeds.
    #[default]
    Count,
    /// Total seed out-degree at most `floor(fraction * sum of out-degrees)`.
    DegreeSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Deepim,
    DeepimStudent,
    Degree,
    Greedy,
    Celf,
    Ris,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Deepim => "deepim",
            Method::DeepimStudent => "deepim_student",
            Method::Degree => "degree",
            Method::Greedy => "greedy",
            Method::Celf => "celf",
            Method::Ris => "ris",
        }
    }

    /// Produced by the `infer` stage rather than `baseline`.
    pub fn is_learned(self) -> bool {
        matches!(self, Method::Deepim | Method::DeepimStudent)
    }

    pub fn scorer(self) -> Option<Scorer> {
        match self {
            Method::Deepim => Some(Scorer::Teacher),
            Method::DeepimStudent => Some(Scorer::Student),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub fractions: Vec<f64>,
    pub sets_per_fraction: usize,
    pub rounds: usize,
    pub sampling: SeedSampling,
}

impl Default for DataConfig {
    fn default() -> Self {
        let r = CorpusRecipe::standard(0);
        DataConfig {
            fractions: r.fractions,
            sets_per_fraction: r.sets_per_fraction,
            rounds: r.rounds,
            sampling: r.sampling,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    /// Worlds behind each greedy / CELF spread evaluation.
    pub mc_rounds: usize,
    pub rr_sets: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            mc_rounds: DEFAULT_ROUNDS,
            rr_sets: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingConfig {
    pub sizes: Vec<usize>,
    /// Erdos-Renyi graphs get `edges_per_node * n` directed edges.
    pub edges_per_node: usize,
    pub sets_per_fraction: usize,
    pub corpus_rounds: usize,
    pub epochs: usize,
    pub iterations: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            sizes: vec![1000, 5000, 10_000],
            edges_per_node: 5,
            sets_per_fraction: 2,
            corpus_rounds: 10,
            epochs: 1,
            iterations: 10,
        }
    }
}

/// Everything a pipeline run needs. Loaded from TOML; every field except
/// `graph` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_budgets")]
    pub budgets: Vec<f64>,
    #[serde(default)]
    pub budget_kind: BudgetKind,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Evaluation rounds per (method, budget) cell.
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    pub graph: GraphSource,
    #[serde(default = "default_diffusion")]
    pub diffusion: DiffusionSpec,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub infer: InferenceConfig,
    #[serde(default)]
    pub baselines: BaselineConfig,
    #[serde(default)]
    pub timing: TimingConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

fn default_budgets() -> Vec<f64> {
    vec![0.01, 0.05, 0.10, 0.20]
}

fn default_methods() -> Vec<Method> {
    vec![Method::Deepim, Method::Degree, Method::Celf]
}

fn default_rounds() -> usize {
    DEFAULT_ROUNDS
}

fn default_diffusion() -> DiffusionSpec {
    DiffusionSpec::Ic
}

/// Labels for [`derive_seed`] so every stage draws from its own stream.
pub(crate) mod stream {
    pub const GRAPH: u64 = 1;
    pub const CORPUS: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const BASELINE: u64 = 5;
    pub const EVALUATE: u64 = 6;
    pub const TIMING: u64 = 7;
}

impl ExperimentConfig {
    /// A Jazz-like IC experiment with all defaults.
    pub fn jazz(out: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            seed: 0,
            out: out.into(),
            budgets: default_budgets(),
            budget_kind: BudgetKind::Count,
            methods: default_methods(),
            rounds: DEFAULT_ROUNDS,
            graph: GraphSource::JazzLike,
            diffusion: DiffusionSpec::Ic,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            infer: InferenceConfig::default(),
            baselines: BaselineConfig::default(),
            timing: TimingConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let config = |m: String| Err(Error::Config(m));
        if self.methods.is_empty() {
            return config("methods list is empty".into());
        }
        if self.budgets.is_empty() {
            return config("budget list is empty".into());
        }
        if let Some(b) = self.budgets.iter().find(|&&b| !(b > 0.0 && b <= 1.0)) {
            return config(format!("budget {b} is outside (0, 1]"));
        }
        if self.rounds == 0 {
            return config("rounds must be at least 1".into());
        }
        if self.methods.contains(&Method::Ris) {
            if self.diffusion != DiffusionSpec::Ic {
                return config("ris supports only the ic model".into());
            }
            if self.budget_kind != BudgetKind::Count {
                return config("ris supports only count budgets".into());
            }
        }
        if self.data.sets_per_fraction == 0 || self.data.rounds == 0 || self.data.fractions.is_empty() {
            return config("data needs fractions, sets_per_fraction > 0 and rounds > 0".into());
        }
        if self.baselines.mc_rounds == 0 || self.baselines.rr_sets == 0 {
            return config("baseline rounds and rr_sets must be positive".into());
        }
        let as_config = |e: Error| Error::Config(e.to_string());
        self.diffusion.validate().map_err(as_config)?;
        self.train.validate().map_err(as_config)?;
        self.infer.validate().map_err(as_config)?;
        Ok(())
    }

    pub fn stream_seed(&self, label: u64) -> u64 {
        derive_seed(self.seed, label)
    }

    pub fn recipe(&self) -> CorpusRecipe {
        CorpusRecipe {
            fractions: self.data.fractions.clone(),
            sets_per_fraction: self.data.sets_per_fraction,
            rounds: self.data.rounds,
            sampling: self.data.sampling,
            rng_seed: self.stream_seed(stream::CORPUS),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            rng_seed: self.stream_seed(stream::TRAIN),
            ..self.train.clone()
        }
    }

    pub fn constraint(&self, g: &Graph, fraction: f64) -> Result<BudgetConstraint> {
        Ok(match self.budget_kind {
            BudgetKind::Count => BudgetConstraint::Count {
                k: seed_count(g.node_count(), fraction)?,
            },
            BudgetKind::DegreeSum => {
                let total: usize = g.out_degrees().iter().sum();
                BudgetConstraint::DegreeSum {
                    k: (fraction * total as f64).floor(),
                }
            }
        })
    }
}

/// `0.05 -> "5pct"`, `0.025 -> "2.5pct"`.
pub fn budget_label(fraction: f64) -> String {
    let pct = format!("{:.4}", fraction * 100.0);
    let pct = pct.trim_end_matches('0').trim_end_matches('.');
    format!("{pct}pct")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [graph]
        source = "jazz_like"
    "#;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.budgets, vec![0.01, 0.05, 0.10, 0.20]);
        assert_eq!(cfg.rounds, 100);
        assert_eq!(cfg.diffusion, DiffusionSpec::Ic);
        assert_eq!(cfg.train.epochs, 300);
        assert_eq!(cfg.infer.lr, 1e-4);
    }

    #[test]
    fn sections_parse() {
        let text = r#"
            seed = 9
            budgets = [0.1]
            budget_kind = "degree_sum"
            methods = ["deepim", "celf"]
            [graph]
            source = "erdos_renyi"
            nodes = 50
            edges = 200
            [diffusion]
            model = "lt"
            threshold_low = 0.3
            threshold_high = 0.6
            [train]
            epochs = 5
            [infer]
            scorer = "student"
        "#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.graph, GraphSource::ErdosRenyi { nodes: 50, edges: 200 });
        assert_eq!(cfg.diffusion, DiffusionSpec::lt());
        assert_eq!(cfg.budget_kind, BudgetKind::DegreeSum);
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.infer.scorer, Scorer::Student);
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        for bad in [
            "methods = []\n[graph]\nsource = \"jazz_like\"",
            "budgets = [0.0]\n[graph]\nsource = \"jazz_like\"",
            "budgets = [1.5]\n[graph]\nsource = \"jazz_like\"",
            "rounds = 0\n[graph]\nsource = \"jazz_like\"",
            "methods = [\"ris\"]\n[graph]\nsource = \"jazz_like\"\n[diffusion]\nmodel = \"sis\"\ninfect_prob = 0.1\nrecover_prob = 0.1\nhorizon = 5",
            "bogus = 1\n[graph]\nsource = \"jazz_like\"",
            "[graph]\nsource = \"nowhere\"",
            "[graph]\nsource = \"jazz_like\"\n[train]\nlr = -1.0",
        ] {
            let err = ExperimentConfig::from_toml_str(bad).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{bad}: {err}");
        }
    }

    #[test]
    fn budget_labels() {
        assert_eq!(budget_label(0.01), "1pct");
        assert_eq!(budget_label(0.10), "10pct");
        assert_eq!(budget_label(0.025), "2.5pct");
        assert_eq!(budget_label(1.0), "100pct");
    }

    #[test]
    fn degree_sum_budget_is_a_fraction_of_total_degree() {
        let g = crate::graph::jazz_like(1);
        let mut cfg = ExperimentConfig::jazz("x");
        cfg.budget_kind = BudgetKind::DegreeSum;
        let total: usize = g.out_degrees().iter().sum();
        match cfg.constraint(&g, 0.1).unwrap() {
            BudgetConstraint::DegreeSum { k } => assert_eq!(k, (total as f64 * 0.1).floor()),
            other => panic!("{other:?}"),
        }
    }
}
