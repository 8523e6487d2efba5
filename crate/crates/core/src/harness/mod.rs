//! Staged batch pipeline: graph, corpus, training, inference, baselines,
//! evaluation and reporting.
//!
//! Each stage reads its inputs from the run directory, writes versioned
//! artifacts, and records a [`StageManifest`] with the hashes of what it
//! read and wrote. Downstream stages refuse to run on missing upstream
//! artifacts ([`Error::MissingArtifact`], naming the stage to run) or on
//! artifacts that no longer match their manifest or the current config
//! ([`Error::StaleArtifact`]). Everything under the run directory except
//! `timings/` and `wall_times.csv` is a pure function of the config.

pub mod artifacts;
pub mod config;
pub mod report;
pub mod timing;

use std::fs::File;
use std::io::BufReader;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::baselines::{celf, degree_topk, greedy, ris_greedy, BaselineResult};
use crate::dataset::{build_corpus, load_corpus, save_corpus, TrainingCorpus};
use crate::diffusion::mc_estimate;
use crate::error::{Error, Result};
use crate::graph::{erdos_renyi, jazz_like, load_edge_list, read_snapshot, with_index_labels, write_snapshot, LoadedGraph};
use crate::inference::{infer, BudgetConstraint, InferenceConfig};
use crate::models::ModelBundle;
use crate::seeds::SeedVector;
use crate::trainer::{train_with, TrainReport};

pub use artifacts::{StageManifest, Workspace};
pub use config::{budget_label, BudgetKind, ExperimentConfig, GraphSource, Method};
pub use report::{ResultRow, ResultTable};

use artifacts::MANIFEST_VERSION;
use config::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    GenGraph,
    GenData,
    Train,
    Infer,
    Baseline,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::GenGraph,
        Stage::GenData,
        Stage::Train,
        Stage::Infer,
        Stage::Baseline,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenGraph => "gen-graph",
            Stage::GenData => "gen-data",
            Stage::Train => "train",
            Stage::Infer => "infer",
            Stage::Baseline => "baseline",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    pub fn parse(s: &str) -> Result<Stage> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// Process exit status for an error: 2 for configuration problems, 3 for
/// missing or stale upstream artifacts, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::MissingArtifact { .. } | Error::StaleArtifact { .. } => 3,
        _ => 1,
    }
}

/// A chosen seed set, from either the inference or the baseline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub method: String,
    pub budget: f64,
    pub constraint: BudgetConstraint,
    pub seeds: Vec<usize>,
    pub cost: f64,
    #[serde(default)]
    pub details: Value,
}

/// Re-simulated spread of one selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub method: String,
    pub budget: f64,
    pub seeds: usize,
    pub cost: f64,
    pub mean_spread: f64,
    pub spread_stddev: f64,
    pub rounds: usize,
    pub infected_pct: f64,
    pub stddev_pct: f64,
}

const GRAPH_FILE: &str = "graph.bin";
const GRAPH_SUMMARY: &str = "graph.json";
const CORPUS_STEM: &str = "corpus";
const MODEL_STEM: &str = "model";
const TRAIN_REPORT: &str = "train_report.json";
const TRAIN_LOSS: &str = "train_loss.csv";
const INFER_FILE: &str = "infer/selections.json";
const BASELINE_FILE: &str = "baselines.json";
const EVAL_FILE: &str = "evaluation.json";
const RESULTS_CSV: &str = "results.csv";
const RESULTS_TXT: &str = "results.txt";
const WALL_TIMES: &str = "wall_times.csv";

type Progress = Box<dyn Fn(&str) + Send + Sync>;

/// Runs stages of one experiment against one run directory.
pub struct Pipeline {
    cfg: ExperimentConfig,
    ws: Workspace,
    progress: Option<Progress>,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let ws = Workspace::new(cfg.out.clone());
        Ok(Pipeline {
            cfg,
            ws,
            progress: None,
        })
    }

    /// Receives one line per notable step (epochs, jobs).
    pub fn with_progress(mut self, f: impl Fn(&str) + Send + Sync + 'static) -> Self {
        self.progress = Some(Box::new(f));
        self
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    fn note(&self, msg: &str) {
        if let Some(p) = &self.progress {
            p(msg);
        }
    }

    pub fn run(&self, stage: Stage) -> Result<()> {
        let start = Instant::now();
        let jobs = match stage {
            Stage::GenGraph => self.gen_graph()?,
            Stage::GenData => self.gen_data()?,
            Stage::Train => self.train()?,
            Stage::Infer => self.infer()?,
            Stage::Baseline => self.baseline()?,
            Stage::Evaluate => self.evaluate()?,
            Stage::Report => self.report()?,
        };
        let timing = json!({ "total_s": start.elapsed().as_secs_f64(), "jobs": jobs });
        self.ws.write_timing(stage, &timing)
    }

    /// Every stage in order; returns the final table.
    pub fn run_all(&self) -> Result<ResultTable> {
        for s in Stage::ALL {
            if self.skipped(s) {
                continue;
            }
            self.note(&format!("stage {}", s.name()));
            self.run(s)?;
        }
        self.table()
    }

    /// Stages with nothing to do for the configured methods.
    fn skipped(&self, s: Stage) -> bool {
        let learned = self.cfg.methods.iter().any(|m| m.is_learned());
        let classic = self.cfg.methods.iter().any(|m| !m.is_learned());
        match s {
            Stage::GenData | Stage::Train | Stage::Infer => !learned,
            Stage::Baseline => !classic,
            _ => false,
        }
    }

    /// Teacher and student inference times on synthetic graphs; writes
    /// `timing.csv`. Wall times, so not reproducible.
    pub fn timing(&self) -> Result<Vec<timing::TimingRow>> {
        let rows = timing::measure(&self.cfg.timing, &self.cfg.train, self.cfg.stream_seed(stream::TIMING))?;
        self.ws.write_bytes("timing.csv", timing::to_csv(&rows).as_bytes())?;
        Ok(rows)
    }

    pub fn table(&self) -> Result<ResultTable> {
        self.ws.require(Stage::Report, &self.fingerprint(Stage::Report))?;
        let text = std::fs::read_to_string(self.ws.path(RESULTS_CSV))?;
        ResultTable::from_csv(&text)
    }

    fn methods(&self, learned: bool) -> Vec<Method> {
        self.cfg
            .methods
            .iter()
            .copied()
            .filter(|m| m.is_learned() == learned)
            .collect()
    }

    /// Hash of the config sections `stage` and its upstream depend on.
    pub fn fingerprint(&self, stage: Stage) -> String {
        let c = &self.cfg;
        let graph = json!({ "seed": c.seed, "graph": c.graph });
        let data = json!({ "graph": graph, "diffusion": c.diffusion, "data": c.data });
        let train = json!({ "data": data, "train": c.train });
        let budgets = json!({ "budgets": c.budgets, "budget_kind": c.budget_kind });
        let infer = json!({ "train": train, "infer": c.infer, "budgets": budgets, "methods": self.methods(true) });
        let baseline = json!({
            "graph": graph,
            "diffusion": c.diffusion,
            "baselines": c.baselines,
            "budgets": budgets,
            "methods": self.methods(false),
        });
        let evaluate = json!({ "infer": infer, "baseline": baseline, "rounds": c.rounds });
        let v = match stage {
            Stage::GenGraph => graph,
            Stage::GenData => data,
            Stage::Train => train,
            Stage::Infer => infer,
            Stage::Baseline => baseline,
            Stage::Evaluate => evaluate,
            Stage::Report => json!({ "evaluate": evaluate, "report": 1 }),
        };
        crate::autograd::checkpoint::sha256_hex(v.to_string().as_bytes())
    }

    fn record(
        &self,
        stage: Stage,
        stage_seed: u64,
        upstream: &[&StageManifest],
        outputs: &[String],
        extra: Value,
    ) -> Result<()> {
        let mut inputs = std::collections::BTreeMap::new();
        for m in upstream {
            inputs.extend(m.outputs.clone());
        }
        let m = StageManifest {
            stage: stage.name().into(),
            version: MANIFEST_VERSION,
            seed: self.cfg.seed,
            stage_seed,
            config_fingerprint: self.fingerprint(stage),
            inputs,
            outputs: self.ws.hashes(outputs)?,
            extra,
        };
        self.ws.write_manifest(stage, &m)
    }

    fn require(&self, stage: Stage) -> Result<StageManifest> {
        self.ws.require(stage, &self.fingerprint(stage))
    }

    /// The run's graph; requires `gen-graph`.
    pub fn load_graph(&self) -> Result<LoadedGraph> {
        self.require(Stage::GenGraph)?;
        read_snapshot(BufReader::new(File::open(self.ws.path(GRAPH_FILE))?))
    }

    pub fn load_corpus(&self) -> Result<TrainingCorpus> {
        self.require(Stage::GenData)?;
        load_corpus(&self.ws.path(CORPUS_STEM))
    }

    pub fn load_bundle(&self) -> Result<ModelBundle> {
        self.require(Stage::Train)?;
        ModelBundle::load(&self.ws.path(MODEL_STEM))
    }

    pub fn load_selections(&self) -> Result<Vec<Selection>> {
        let mut all = Vec::new();
        if !self.methods(true).is_empty() {
            self.require(Stage::Infer)?;
            all.extend(self.ws.read_json::<Vec<Selection>>(INFER_FILE)?);
        }
        if !self.methods(false).is_empty() {
            self.require(Stage::Baseline)?;
            all.extend(self.ws.read_json::<Vec<Selection>>(BASELINE_FILE)?);
        }
        let rank = |s: &Selection| {
            let m = self.cfg.methods.iter().position(|m| m.name() == s.method);
            let b = self.cfg.budgets.iter().position(|&b| b == s.budget);
            (m, b)
        };
        all.sort_by_key(rank);
        Ok(all)
    }

    pub fn load_evaluations(&self) -> Result<Vec<Evaluation>> {
        self.require(Stage::Evaluate)?;
        self.ws.read_json(EVAL_FILE)
    }

    fn gen_graph(&self) -> Result<Value> {
        let seed = self.cfg.stream_seed(stream::GRAPH);
        let mut upstream_inputs = Vec::new();
        let loaded = match &self.cfg.graph {
            GraphSource::JazzLike => with_index_labels(jazz_like(seed)),
            GraphSource::ErdosRenyi { nodes, edges } => {
                with_index_labels(erdos_renyi(*nodes, *edges, seed).map_err(|e| Error::Config(e.to_string()))?)
            }
            GraphSource::EdgeList { path, directed } => {
                let file = File::open(path)
                    .map_err(|e| Error::Config(format!("cannot open edge list {}: {e}", path.display())))?;
                upstream_inputs.push(std::fs::canonicalize(path)?.display().to_string());
                load_edge_list(BufReader::new(file), *directed)?
            }
        };
        let mut bytes = Vec::new();
        write_snapshot(&loaded, &mut bytes)?;
        self.ws.write_bytes(GRAPH_FILE, &bytes)?;
        let g = &loaded.graph;
        let summary = json!({
            "nodes": g.node_count(),
            "edges": g.edge_count(),
            "undirected": g.is_undirected(),
            "content_hash": g.content_hash(),
            "self_loops_dropped": loaded.stats.self_loops,
            "duplicates_dropped": loaded.stats.duplicate_edges,
        });
        self.ws.write_json(GRAPH_SUMMARY, &summary)?;
        let external = StageManifest {
            stage: "external".into(),
            version: MANIFEST_VERSION,
            seed: self.cfg.seed,
            stage_seed: seed,
            config_fingerprint: String::new(),
            inputs: Default::default(),
            outputs: self.ws.hashes(&upstream_inputs)?,
            extra: Value::Null,
        };
        self.record(
            Stage::GenGraph,
            seed,
            &[&external],
            &[GRAPH_FILE.into(), GRAPH_SUMMARY.into()],
            summary,
        )?;
        Ok(Value::Null)
    }

    fn gen_data(&self) -> Result<Value> {
        let up = self.require(Stage::GenGraph)?;
        let g = self.load_graph()?.graph;
        let recipe = self.cfg.recipe();
        let corpus = build_corpus(&g, &self.cfg.diffusion, &recipe)?;
        let stem = self.ws.path(CORPUS_STEM);
        save_corpus(&stem, &corpus)?;
        self.record(
            Stage::GenData,
            recipe.rng_seed,
            &[&up],
            &["corpus.bin".into(), "corpus.json".into()],
            json!({ "pairs": corpus.len() }),
        )?;
        Ok(Value::Null)
    }

    fn train(&self) -> Result<Value> {
        let ups = [self.require(Stage::GenGraph)?, self.require(Stage::GenData)?];
        let g = self.load_graph()?.graph;
        let corpus = self.load_corpus()?;
        let cfg = self.cfg.train_config();
        let (bundle, report): (ModelBundle, TrainReport) = train_with(&g, &corpus, &cfg, |e| {
            self.note(&format!(
                "epoch {} loss {:.5} (rec {:.5}, pred {:.5}, distill {:.5})",
                e.epoch, e.total, e.reconstruction, e.prediction, e.distillation
            ))
        })?;
        bundle.save(&self.ws.path(MODEL_STEM))?;
        self.ws.write_json(TRAIN_REPORT, &report)?;
        let mut csv = String::from("epoch,total,reconstruction,prediction,distillation\n");
        for e in &report.epochs {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.total, e.reconstruction, e.prediction, e.distillation
            ));
        }
        self.ws.write_bytes(TRAIN_LOSS, csv.as_bytes())?;
        self.record(
            Stage::Train,
            cfg.rng_seed,
            &[&ups[0], &ups[1]],
            &[
                "model.bin".into(),
                "model.json".into(),
                TRAIN_REPORT.into(),
                TRAIN_LOSS.into(),
            ],
            json!({ "fit": report.fit, "steps": report.steps }),
        )?;
        Ok(Value::Null)
    }

    fn infer(&self) -> Result<Value> {
        let ups = [
            self.require(Stage::GenGraph)?,
            self.require(Stage::GenData)?,
            self.require(Stage::Train)?,
        ];
        let loaded = self.load_graph()?;
        let g = &loaded.graph;
        let corpus = self.load_corpus()?;
        let bundle = self.load_bundle()?;
        let mut selections = Vec::new();
        let mut outputs = vec![INFER_FILE.to_string()];
        let mut jobs = serde_json::Map::new();
        for method in self.methods(true) {
            let icfg = InferenceConfig {
                scorer: method.scorer().expect("learned method"),
                ..self.cfg.infer.clone()
            };
            for &b in &self.cfg.budgets {
                let c = self.cfg.constraint(g, b)?;
                let start = Instant::now();
                let r = infer(&bundle, g, &c, &icfg, &corpus)?;
                let secs = start.elapsed().as_secs_f64();
                let dir = format!("infer/{}/{}", method.name(), budget_label(b));
                r.write_outputs(&self.ws.path(&dir), Some(&loaded.labels))?;
                for f in ["seeds.json", "seeds.txt", "trajectory.csv"] {
                    outputs.push(format!("{dir}/{f}"));
                }
                jobs.insert(format!("{}/{}", method.name(), budget_label(b)), json!(secs));
                self.note(&format!(
                    "{} {}: {} seeds, y_soft {:.2} -> {:.2}",
                    method.name(),
                    budget_label(b),
                    r.seeds.count(),
                    r.initial_y_soft,
                    r.final_y_soft
                ));
                selections.push(Selection {
                    method: method.name().into(),
                    budget: b,
                    constraint: c,
                    seeds: r.seeds.indices(),
                    cost: r.cost,
                    details: json!({
                        "initial_y_soft": r.initial_y_soft,
                        "final_y_soft": r.final_y_soft,
                        "final_y_hard": r.final_y_hard,
                    }),
                });
            }
        }
        self.ws.write_json(INFER_FILE, &selections)?;
        self.record(Stage::Infer, 0, &[&ups[0], &ups[1], &ups[2]], &outputs, Value::Null)?;
        Ok(Value::Object(jobs))
    }

    fn baseline(&self) -> Result<Value> {
        let up = self.require(Stage::GenGraph)?;
        let g = self.load_graph()?.graph;
        let seed = self.cfg.stream_seed(stream::BASELINE);
        let spec = &self.cfg.diffusion;
        let bc = &self.cfg.baselines;
        let mut selections = Vec::new();
        let mut jobs = serde_json::Map::new();
        for method in self.methods(false) {
            for &b in &self.cfg.budgets {
                let c = self.cfg.constraint(&g, b)?;
                let r: BaselineResult = match method {
                    Method::Degree => degree_topk(&g, &c)?,
                    Method::Greedy => greedy(&g, &c, spec, bc.mc_rounds, seed)?,
                    Method::Celf => celf(&g, &c, spec, bc.mc_rounds, seed)?,
                    Method::Ris => match c {
                        BudgetConstraint::Count { k } => ris_greedy(&g, k, bc.rr_sets, spec, seed)?,
                        _ => return Err(Error::Config("ris supports only count budgets".into())),
                    },
                    Method::Deepim | Method::DeepimStudent => unreachable!("learned methods run in infer"),
                };
                jobs.insert(format!("{}/{}", method.name(), budget_label(b)), json!(r.wall_time_s));
                self.note(&format!("{} {}: {} seeds", method.name(), budget_label(b), r.seeds.count()));
                selections.push(Selection {
                    method: method.name().into(),
                    budget: b,
                    constraint: c,
                    seeds: r.seeds.indices(),
                    cost: r.cost,
                    details: json!({
                        "estimated_spread": r.estimated_spread,
                        "evaluations": r.evaluations,
                        "gains": r.gains,
                    }),
                });
            }
        }
        self.ws.write_json(BASELINE_FILE, &selections)?;
        self.record(Stage::Baseline, seed, &[&up], &[BASELINE_FILE.into()], Value::Null)?;
        Ok(Value::Object(jobs))
    }

    fn evaluate(&self) -> Result<Value> {
        let mut ups = vec![self.require(Stage::GenGraph)?];
        if !self.methods(true).is_empty() {
            ups.push(self.require(Stage::Infer)?);
        }
        if !self.methods(false).is_empty() {
            ups.push(self.require(Stage::Baseline)?);
        }
        let g = self.load_graph()?.graph;
        let seed = self.cfg.stream_seed(stream::EVALUATE);
        let used = [self.cfg.recipe().rng_seed, self.cfg.stream_seed(stream::BASELINE)];
        if used.contains(&seed) {
            return Err(Error::Invariant(
                "evaluation seed collides with a corpus or baseline seed".into(),
            ));
        }
        let n = g.node_count() as f64;
        let mut evals = Vec::new();
        for s in self.load_selections()? {
            let seeds = SeedVector::from_indices(g.node_count(), &s.seeds)?;
            if !s.constraint.is_satisfied(&g, &seeds) {
                return Err(Error::Invariant(format!(
                    "{} at {} violates its budget",
                    s.method,
                    budget_label(s.budget)
                )));
            }
            let est = mc_estimate(&g, &seeds, &self.cfg.diffusion, self.cfg.rounds, seed)?;
            evals.push(Evaluation {
                method: s.method,
                budget: s.budget,
                seeds: s.seeds.len(),
                cost: s.cost,
                mean_spread: est.mean_spread,
                spread_stddev: est.spread_stddev,
                rounds: est.rounds,
                infected_pct: 100.0 * est.mean_spread / n,
                stddev_pct: 100.0 * est.spread_stddev / n,
            });
        }
        self.ws.write_json(EVAL_FILE, &evals)?;
        let refs: Vec<&StageManifest> = ups.iter().collect();
        self.record(
            Stage::Evaluate,
            seed,
            &refs,
            &[EVAL_FILE.into()],
            json!({ "disjoint_from": used }),
        )?;
        Ok(Value::Null)
    }

    fn report(&self) -> Result<Value> {
        let up = self.require(Stage::Evaluate)?;
        let evals = self.load_evaluations()?;
        let mut times = serde_json::Map::new();
        for st in [Stage::Infer, Stage::Baseline] {
            if let Some(Value::Object(jobs)) = self.ws.read_timing(st).and_then(|t| t.get("jobs").cloned()) {
                times.extend(jobs);
            }
        }
        let rows = evals
            .into_iter()
            .map(|e| {
                let key = format!("{}/{}", e.method, budget_label(e.budget));
                ResultRow {
                    wall_time_s: times.get(&key).and_then(Value::as_f64),
                    method: e.method,
                    budget: e.budget,
                    seeds: e.seeds,
                    cost: e.cost,
                    infected_pct: e.infected_pct,
                    stddev_pct: e.stddev_pct,
                }
            })
            .collect();
        let table = ResultTable { rows };
        table.validate()?;
        self.ws.write_bytes(RESULTS_CSV, table.to_csv().as_bytes())?;
        self.ws.write_bytes(RESULTS_TXT, table.to_text().as_bytes())?;
        self.ws.write_bytes(WALL_TIMES, table.wall_time_csv().as_bytes())?;
        self.record(
            Stage::Report,
            0,
            &[&up],
            &[RESULTS_CSV.into(), RESULTS_TXT.into()],
            Value::Null,
        )?;
        Ok(Value::Null)
    }
}
