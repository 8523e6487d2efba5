//! Inference wall time of the teacher and student scorers as the graph grows.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{build_corpus, CorpusRecipe};
use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};
use crate::graph::erdos_renyi;
use crate::inference::{infer, BudgetConstraint, InferenceConfig, Scorer};
use crate::seeds::derive_seed;
use crate::trainer::{train, TrainConfig};

use super::config::TimingConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub nodes: usize,
    pub edges: usize,
    pub teacher_s: f64,
    pub student_s: f64,
}

impl TimingRow {
    pub fn student_faster(&self) -> bool {
        self.student_s < self.teacher_s
    }
}

/// For every size: an Erdos-Renyi digraph with `edges_per_node * n` edges, a
/// small IC corpus, a briefly trained bundle, then one timed inference run
/// per scorer at a 1% count budget.
pub fn measure(cfg: &TimingConfig, base: &TrainConfig, rng_seed: u64) -> Result<Vec<TimingRow>> {
    if cfg.sizes.is_empty() {
        return Err(Error::Config("timing needs at least one graph size".into()));
    }
    if cfg.iterations == 0 || cfg.epochs == 0 || cfg.sets_per_fraction == 0 || cfg.corpus_rounds == 0 {
        return Err(Error::Config("timing iterations, epochs, sets and rounds must be positive".into()));
    }
    let mut rows = Vec::with_capacity(cfg.sizes.len());
    for &n in &cfg.sizes {
        let seed = derive_seed(rng_seed, n as u64);
        let g = erdos_renyi(n, cfg.edges_per_node * n, seed).map_err(|e| Error::Config(e.to_string()))?;
        let recipe = CorpusRecipe {
            sets_per_fraction: cfg.sets_per_fraction,
            rounds: cfg.corpus_rounds,
            ..CorpusRecipe::standard(derive_seed(seed, 1))
        };
        let corpus = build_corpus(&g, &DiffusionSpec::Ic, &recipe)?;
        let tcfg = TrainConfig {
            epochs: cfg.epochs,
            rng_seed: derive_seed(seed, 2),
            ..base.clone()
        };
        let (bundle, _) = train(&g, &corpus, &tcfg)?;
        let c = BudgetConstraint::Count { k: (n / 100).max(1) };
        let mut secs = [0.0; 2];
        for (slot, scorer) in [Scorer::Teacher, Scorer::Student].into_iter().enumerate() {
            let icfg = InferenceConfig {
                iterations: cfg.iterations,
                scorer,
                keep_best: false,
                ..InferenceConfig::default()
            };
            let start = Instant::now();
            infer(&bundle, &g, &c, &icfg, &corpus)?;
            secs[slot] = start.elapsed().as_secs_f64();
        }
        rows.push(TimingRow {
            nodes: n,
            edges: g.edge_count(),
            teacher_s: secs[0],
            student_s: secs[1],
        });
    }
    Ok(rows)
}

pub fn to_csv(rows: &[TimingRow]) -> String {
    let mut out = String::from("nodes,edges,teacher_s,student_s,student_faster\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{}",
            r.nodes,
            r.edges,
            r.teacher_s,
            r.student_s,
            r.student_faster()
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_size_list_is_an_error() {
        let cfg = TimingConfig {
            sizes: vec![],
            ..TimingConfig::default()
        };
        assert!(matches!(
            measure(&cfg, &TrainConfig::default(), 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn small_sizes_produce_rows() {
        let cfg = TimingConfig {
            sizes: vec![100, 200],
            edges_per_node: 3,
            sets_per_fraction: 1,
            corpus_rounds: 2,
            epochs: 1,
            iterations: 2,
        };
        let mut train = TrainConfig::default();
        train.model.encoder_widths = vec![16, 8];
        train.model.heads = 2;
        train.model.head_dim = 4;
        train.model.student_widths = vec![8];
        let rows = measure(&cfg, &train, 3).unwrap();
        assert_eq!(rows.iter().map(|r| r.nodes).collect::<Vec<_>>(), vec![100, 200]);
        assert!(rows.iter().all(|r| r.teacher_s > 0.0 && r.student_s > 0.0));
        let csv = to_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
    }
}
