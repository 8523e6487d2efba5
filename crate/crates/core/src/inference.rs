//! Seed selection by projected gradient search in the latent space.
//!
//! Starting from the mean training encoding, the latent `z` is moved by Adam
//! to minimize
//!
//! ```text
//! -sum_i [x_i ln x_hat_i + (1 - x_i) ln(1 - x_hat_i)] + (target - y)^2
//! ```
//!
//! with `x_hat = decode(z)`, `x = project_phi(x_hat)` the budget-feasible
//! binary set, `target = |V|` by default, and `y` either the surrogate's
//! soft spread of `x_hat` (teacher) or the student's estimate from `z`.
//! Only `z` is updated; the bundle is borrowed immutably.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autograd::checkpoint::write_atomic;
use crate::autograd::{adam_step, AdamState, Reduction, Tape, Tensor};
use crate::dataset::TrainingCorpus;
use crate::error::{Error, Result};
use crate::graph::{degree_costs, Graph};
use crate::models::{MessageGraph, ModelBundle, Surrogate};
use crate::seeds::SeedVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BudgetConstraint {
    /// At most `k` seeds.
    Count { k: usize },
    /// Total out-degree of the seeds at most `k`.
    DegreeSum { k: f64 },
    /// `sum(cost[i])` over the seeds at most `k`.
    GenericCost { cost: Vec<f64>, k: f64 },
}

impl BudgetConstraint {
    pub fn limit(&self) -> f64 {
        match self {
            BudgetConstraint::Count { k } => *k as f64,
            BudgetConstraint::DegreeSum { k } | BudgetConstraint::GenericCost { k, .. } => *k,
        }
    }

    /// Per-node cost under this constraint.
    pub fn costs(&self, g: &Graph) -> Vec<f64> {
        match self {
            BudgetConstraint::Count { .. } => vec![1.0; g.node_count()],
            BudgetConstraint::DegreeSum { .. } => degree_costs(g),
            BudgetConstraint::GenericCost { cost, .. } => cost.clone(),
        }
    }

    pub fn validate(&self, g: &Graph) -> Result<()> {
        let k = self.limit();
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::invalid(format!("budget must be positive, got {k}")));
        }
        if let BudgetConstraint::GenericCost { cost, .. } = self {
            if cost.len() != g.node_count() {
                return Err(Error::invalid("cost vector length differs from the node count"));
            }
            if cost.iter().any(|&c| !(c >= 0.0 && c.is_finite())) {
                return Err(Error::invalid("costs must be finite and non-negative"));
            }
        }
        let costs = self.costs(g);
        if !costs.iter().any(|&c| c <= k) {
            return Err(Error::Infeasible(format!("no node fits within a budget of {k}")));
        }
        Ok(())
    }

    pub fn total_cost(&self, g: &Graph, seeds: &SeedVector) -> f64 {
        let costs = self.costs(g);
        seeds.indices().into_iter().map(|i| costs[i]).sum()
    }

    pub fn is_satisfied(&self, g: &Graph, seeds: &SeedVector) -> bool {
        seeds.len() == g.node_count() && self.total_cost(g, seeds) <= self.limit()
    }
}

/// Projects relaxed probabilities onto a feasible binary seed set.
///
/// `Count` keeps the `k` largest entries. Cost budgets take every zero-cost
/// node, then scan the rest by `x_i / c_i` and add each node that still fits.
/// Ties go to the lower node id.
pub fn project_phi(x: &[f64], c: &BudgetConstraint, g: &Graph) -> Result<SeedVector> {
    let n = g.node_count();
    if x.len() != n {
        return Err(Error::invalid(format!("relaxed vector has length {} for {n} nodes", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("relaxed vector has non-finite entries"));
    }
    c.validate(g)?;
    let mut seeds = SeedVector::empty(n);
    match c {
        BudgetConstraint::Count { k } => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
            for &i in order.iter().take(*k) {
                seeds.insert(i);
            }
        }
        _ => {
            let costs = c.costs(g);
            let limit = c.limit();
            let (free, priced): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| costs[i] == 0.0);
            for i in free {
                seeds.insert(i);
            }
            let mut order = priced;
            let ratio = |i: usize| x[i] / costs[i];
            order.sort_by(|&a, &b| ratio(b).total_cmp(&ratio(a)).then(a.cmp(&b)));
            let mut spent = 0.0;
            for i in order {
                if spent + costs[i] <= limit {
                    spent += costs[i];
                    seeds.insert(i);
                }
            }
        }
    }
    Ok(seeds)
}

/// What supplies `y` in the inference objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    /// Soft spread of the decoded vector under the attention surrogate.
    #[default]
    Teacher,
    /// Student network on the latent; no graph pass.
    Student,
}

/// Which vector the teacher scores inside the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreInput {
    /// The decoded probabilities `x_hat`.
    #[default]
    Relaxed,
    /// The projected binary set in the forward pass, with its gradient
    /// passed unchanged to the decoder's output logits (straight-through).
    Projected,
}

/// Update rule for the latent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentOptimizer {
    #[default]
    Adam,
    /// `z -= lr * grad / |grad|`: a fixed-length step along the gradient.
    NormalizedGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub iterations: usize,
    pub lr: f64,
    pub scorer: Scorer,
    pub score_input: ScoreInput,
    pub optimizer: LatentOptimizer,
    /// Spread the objective aims for; `None` means every node.
    pub target_spread: Option<f64>,
    /// Return the best projected set seen instead of the last one. Sets are
    /// ranked by the active scorer.
    pub keep_best: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            iterations: 300,
            lr: 1e-4,
            scorer: Scorer::Teacher,
            score_input: ScoreInput::Relaxed,
            optimizer: LatentOptimizer::Adam,
            target_spread: None,
            keep_best: true,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("inference needs at least one iteration"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("inference learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub loss: f64,
    /// Scorer output for the relaxed iterate (teacher `y_soft` or student).
    pub score: f64,
    /// Seeds in the projected set.
    pub seed_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub seeds: SeedVector,
    pub cost: f64,
    /// Teacher soft spread of the projected set at the starting latent.
    pub initial_y_soft: f64,
    /// Teacher soft spread of the returned set.
    pub final_y_soft: f64,
    pub final_y_hard: usize,
    pub trajectory: Vec<TrajectoryPoint>,
    /// Latent that produced the returned set.
    pub latent: Vec<f64>,
}

/// Mean encoding of the corpus seed vectors.
pub fn init_latent(bundle: &ModelBundle, corpus: &TrainingCorpus) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("cannot initialize a latent from an empty corpus".into()));
    }
    let d = bundle.arch.latent_dim();
    let mut sum = vec![0.0; d];
    for chunk in corpus.pairs.chunks(128) {
        let xs: Vec<f64> = chunk.iter().flat_map(|p| p.seeds.to_f64()).collect();
        let z = bundle.encode_batch(chunk.len(), xs)?;
        for r in 0..chunk.len() {
            for (s, v) in sum.iter_mut().zip(z.row_slice(r)) {
                *s += v;
            }
        }
    }
    let m = corpus.len() as f64;
    Ok(sum.into_iter().map(|s| s / m).collect())
}

struct Scored {
    loss: f64,
    score: f64,
    grad: Tensor,
    projected: SeedVector,
}

fn objective(
    bundle: &ModelBundle,
    g: &Graph,
    mg: &MessageGraph,
    c: &BudgetConstraint,
    cfg: &InferenceConfig,
    target: f64,
    z: &[f64],
) -> Result<Scored> {
    let n = g.node_count();
    let mut tape = Tape::new();
    let bd = bundle.decoder.params.bind(&mut tape, false);
    let zv = tape.leaf(Tensor::row(z.to_vec()), true);
    let (logits, x_hat) = bundle.decoder.forward_with_logits(&mut tape, &bd, zv)?;
    let projected = project_phi(tape.value(x_hat).data(), c, g)?;
    let anchor = tape.bce_loss(x_hat, Arc::new(Tensor::row(projected.to_f64())), Reduction::Sum)?;
    let y = match cfg.scorer {
        Scorer::Teacher => {
            let bs = bundle.surrogate.params.bind(&mut tape, false);
            let input = match cfg.score_input {
                ScoreInput::Relaxed => x_hat,
                ScoreInput::Projected => {
                    let shift: Vec<f64> = (tape.value(logits).data().iter())
                        .zip(projected.flags())
                        .map(|(&l, &b)| b as u8 as f64 - l)
                        .collect();
                    let shift = tape.leaf(Tensor::row(shift), false);
                    tape.add(logits, shift)?
                }
            };
            let col = tape.reshape(input, n, 1)?;
            let tau = bundle.surrogate.forward(&mut tape, &bs, mg, col)?;
            Surrogate::soft_spread(&mut tape, mg, tau)?
        }
        Scorer::Student => {
            let bl = bundle.student.params.bind(&mut tape, false);
            bundle.student.forward(&mut tape, &bl, zv)?
        }
    };
    let score = tape.value(y).item();
    let gap = tape.scale(y, -1.0);
    let gap = tape.add_scalar(gap, target);
    let sq = tape.mul(gap, gap)?;
    let loss = tape.add(anchor, sq)?;
    let loss_value = tape.value(loss).item();
    let mut grads = tape.backward(loss)?;
    let grad = grads.take(zv).unwrap_or_else(|| Tensor::zeros(1, z.len()));
    Ok(Scored {
        loss: loss_value,
        score,
        grad,
        projected,
    })
}

/// Search loss at latent `z` and its gradient, against spread target `target`.
pub fn latent_loss(
    bundle: &ModelBundle,
    g: &Graph,
    c: &BudgetConstraint,
    cfg: &InferenceConfig,
    target: f64,
    z: &[f64],
) -> Result<(f64, Vec<f64>)> {
    bundle.check_graph(g)?;
    let mg = MessageGraph::new(g, 1);
    let s = objective(bundle, g, &mg, c, cfg, target, z)?;
    Ok((s.loss, s.grad.into_data()))
}

/// Full search from the mean corpus encoding.
pub fn infer(
    bundle: &ModelBundle,
    g: &Graph,
    c: &BudgetConstraint,
    cfg: &InferenceConfig,
    corpus: &TrainingCorpus,
) -> Result<InferenceResult> {
    let z0 = init_latent(bundle, corpus)?;
    infer_from(bundle, g, c, cfg, z0)
}

/// Search starting from an explicit latent, e.g. a previous solution.
pub fn infer_from(
    bundle: &ModelBundle,
    g: &Graph,
    c: &BudgetConstraint,
    cfg: &InferenceConfig,
    z0: Vec<f64>,
) -> Result<InferenceResult> {
    cfg.validate()?;
    c.validate(g)?;
    if bundle.node_count() != g.node_count() {
        return Err(Error::invalid("bundle and graph differ in node count"));
    }
    if z0.len() != bundle.arch.latent_dim() {
        return Err(Error::invalid("starting latent has the wrong dimension"));
    }
    bundle.surrogate.check_nonneg()?;
    let mg = MessageGraph::new(g, 1);
    let target = cfg.target_spread.unwrap_or(g.node_count() as f64);
    let teacher_soft = |s: &SeedVector| -> Result<f64> { Ok(bundle.seed_spread(&mg, s)?.0) };

    let mut z = Tensor::row(z0);
    let mut opt = AdamState::new([z.len()]);
    let mut trajectory = Vec::with_capacity(cfg.iterations);
    let mut initial = None;
    let mut best: Option<(f64, SeedVector, Vec<f64>)> = None;
    for it in 0..cfg.iterations {
        let s = objective(bundle, g, &mg, c, cfg, target, z.data())?;
        if !s.loss.is_finite() {
            return Err(Error::NonFinite {
                stage: "inference",
                index: it,
            });
        }
        if initial.is_none() {
            initial = Some(teacher_soft(&s.projected)?);
        }
        if cfg.keep_best {
            let rank = match cfg.scorer {
                Scorer::Teacher => teacher_soft(&s.projected)?,
                Scorer::Student => s.score,
            };
            if best.as_ref().is_none_or(|(b, _, _)| rank > *b) {
                best = Some((rank, s.projected.clone(), z.data().to_vec()));
            }
        }
        trajectory.push(TrajectoryPoint {
            iteration: it,
            loss: s.loss,
            score: s.score,
            seed_count: s.projected.count(),
        });
        match cfg.optimizer {
            LatentOptimizer::Adam => adam_step(&mut [&mut z], &[Some(&s.grad)], &mut opt, cfg.lr),
            LatentOptimizer::NormalizedGradient => {
                let norm = s.grad.data().iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > 0.0 {
                    let step = cfg.lr / norm;
                    for (v, g) in z.data_mut().iter_mut().zip(s.grad.data()) {
                        *v -= step * g;
                    }
                }
            }
        }
    }
    let last_x = bundle.decode(z.data())?;
    let last = project_phi(&last_x, c, g)?;
    let mut chosen = (last, z.into_data());
    if let Some((rank, seeds, latent)) = best {
        let last_rank = match cfg.scorer {
            Scorer::Teacher => teacher_soft(&chosen.0)?,
            Scorer::Student => bundle.student_spread(&chosen.1)?,
        };
        if rank > last_rank {
            chosen = (seeds, latent);
        }
    }
    let (seeds, latent) = chosen;
    let (final_soft, final_hard) = bundle.seed_spread(&mg, &seeds)?;
    Ok(InferenceResult {
        cost: c.total_cost(g, &seeds),
        seeds,
        initial_y_soft: initial.expect("at least one iteration"),
        final_y_soft: final_soft,
        final_y_hard: final_hard,
        trajectory,
        latent,
    })
}

impl InferenceResult {
    /// Writes `seeds.json`, `seeds.txt` and `trajectory.csv` under `dir`.
    pub fn write_outputs(&self, dir: &Path, labels: Option<&[String]>) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let ids = self.seeds.indices();
        let mut json = serde_json::json!({
            "seeds": ids,
            "count": ids.len(),
            "cost": self.cost,
            "initial_y_soft": self.initial_y_soft,
            "final_y_soft": self.final_y_soft,
            "final_y_hard": self.final_y_hard,
        });
        if let Some(labels) = labels {
            json["labels"] = ids.iter().map(|&i| labels[i].clone()).collect();
        }
        write_atomic(&dir.join("seeds.json"), serde_json::to_string_pretty(&json)?.as_bytes())?;
        let text: String = ids.iter().map(|i| format!("{i}\n")).collect();
        write_atomic(&dir.join("seeds.txt"), text.as_bytes())?;
        let mut csv = Vec::new();
        writeln!(csv, "iteration,loss,score,seed_count")?;
        for p in &self.trajectory {
            writeln!(csv, "{},{},{},{}", p.iteration, p.loss, p.score, p.seed_count)?;
        }
        write_atomic(&dir.join("trajectory.csv"), &csv)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_corpus, CorpusRecipe, SeedSampling};
    use crate::diffusion::DiffusionSpec;
    use crate::graph::erdos_renyi;
    use crate::models::{Architecture, AttentionNorm};
    use proptest::prelude::*;

    fn star(leaves: usize) -> Graph {
        let edges: Vec<(usize, usize)> = (1..=leaves).map(|v| (0, v)).collect();
        Graph::from_edges(leaves + 1, &edges, true).unwrap().0
    }

    #[test]
    fn count_projection_is_top_k() {
        let g = erdos_renyi(3, 2, 0).unwrap();
        let s = project_phi(&[0.9, 0.1, 0.5], &BudgetConstraint::Count { k: 2 }, &g).unwrap();
        assert_eq!(s.indices(), vec![0, 2]);
        let tie = project_phi(&[0.5, 0.5, 0.5], &BudgetConstraint::Count { k: 2 }, &g).unwrap();
        assert_eq!(tie.indices(), vec![0, 1]);
        let all = project_phi(&[0.1; 3], &BudgetConstraint::Count { k: 10 }, &g).unwrap();
        assert_eq!(all.count(), 3);
    }

    #[test]
    fn degree_budget_prefers_leaves_on_a_star() {
        let g = star(6);
        let s = project_phi(&[0.5; 7], &BudgetConstraint::DegreeSum { k: 6.0 }, &g).unwrap();
        assert_eq!(s.indices(), vec![1, 2, 3, 4, 5, 6]);
        // A much more probable hub wins once its ratio beats the leaves'.
        let mut x = vec![0.1; 7];
        x[0] = 0.9;
        let s = project_phi(&x, &BudgetConstraint::DegreeSum { k: 6.0 }, &g).unwrap();
        assert_eq!(s.indices(), vec![0]);
    }

    #[test]
    fn zero_cost_nodes_are_free() {
        let g = erdos_renyi(4, 3, 0).unwrap();
        let c = BudgetConstraint::GenericCost {
            cost: vec![0.0, 2.0, 1.0, 0.0],
            k: 1.5,
        };
        let s = project_phi(&[0.0, 0.9, 0.2, 0.1], &c, &g).unwrap();
        assert_eq!(s.indices(), vec![0, 2, 3]);
    }

    #[test]
    fn unaffordable_budget_is_infeasible() {
        let g = star(3);
        let c = BudgetConstraint::GenericCost {
            cost: vec![3.0, 2.0, 2.0, 2.0],
            k: 1.0,
        };
        assert!(matches!(project_phi(&[0.5; 4], &c, &g), Err(Error::Infeasible(_))));
        assert!(BudgetConstraint::Count { k: 0 }.validate(&g).is_err());
    }

    proptest! {
        #[test]
        fn projection_is_always_feasible(
            x in prop::collection::vec(0.0f64..1.0, 12),
            cost in prop::collection::vec(0.0f64..4.0, 12),
            k in 0.5f64..10.0,
            count in 1usize..15,
        ) {
            let g = erdos_renyi(12, 30, 1).unwrap();
            let budgets = [
                BudgetConstraint::Count { k: count },
                BudgetConstraint::DegreeSum { k: k + 5.0 },
                BudgetConstraint::GenericCost { cost, k },
            ];
            for c in budgets {
                if c.validate(&g).is_err() {
                    continue;
                }
                let s = project_phi(&x, &c, &g).unwrap();
                prop_assert!(c.is_satisfied(&g, &s));
            }
        }
    }

    fn tiny_bundle() -> (Graph, ModelBundle, TrainingCorpus) {
        let g = erdos_renyi(20, 50, 2).unwrap();
        let arch = Architecture {
            node_count: 20,
            encoder_widths: vec![12, 6],
            heads: 2,
            head_dim: 3,
            attention: AttentionNorm::DegreeGate,
            student_widths: vec![4],
            xi: 0.5,
        };
        let bundle = ModelBundle::init(arch, &g, 3).unwrap();
        let recipe = CorpusRecipe {
            fractions: vec![0.1],
            sets_per_fraction: 5,
            rounds: 5,
            sampling: SeedSampling::Uniform,
            rng_seed: 1,
        };
        let corpus = build_corpus(&g, &DiffusionSpec::Ic, &recipe).unwrap();
        (g, bundle, corpus)
    }

    #[test]
    fn init_latent_is_the_mean_encoding() {
        let (_, bundle, corpus) = tiny_bundle();
        let mut one = corpus.clone();
        one.pairs.truncate(1);
        let z = init_latent(&bundle, &one).unwrap();
        assert_eq!(z, bundle.encode(&one.pairs[0].seeds.to_f64()).unwrap());
        let mut rev = corpus.clone();
        rev.pairs.reverse();
        let a = init_latent(&bundle, &corpus).unwrap();
        let b = init_latent(&bundle, &rev).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let mut empty = corpus;
        empty.pairs.clear();
        assert!(init_latent(&bundle, &empty).is_err());
    }

    #[test]
    fn inference_is_feasible_and_leaves_the_bundle_alone() {
        let (g, bundle, corpus) = tiny_bundle();
        let before = bundle.clone();
        let cfg = InferenceConfig {
            iterations: 20,
            lr: 1e-2,
            ..InferenceConfig::default()
        };
        for scorer in [Scorer::Teacher, Scorer::Student] {
            for c in [BudgetConstraint::Count { k: 3 }, BudgetConstraint::DegreeSum { k: 12.0 }] {
                let cfg = InferenceConfig { scorer, ..cfg.clone() };
                let r = infer(&bundle, &g, &c, &cfg, &corpus).unwrap();
                assert!(c.is_satisfied(&g, &r.seeds));
                assert_eq!(r.trajectory.len(), 20);
                if scorer == Scorer::Teacher {
                    assert!(r.final_y_soft >= r.initial_y_soft - 1e-9);
                }
            }
        }
        assert_eq!(bundle, before);
    }

    #[test]
    fn full_budget_selects_every_node() {
        let (g, bundle, corpus) = tiny_bundle();
        let cfg = InferenceConfig {
            iterations: 3,
            ..InferenceConfig::default()
        };
        let r = infer(&bundle, &g, &BudgetConstraint::Count { k: 20 }, &cfg, &corpus).unwrap();
        assert_eq!(r.seeds.count(), 20);
    }

    #[test]
    fn outputs_are_written() {
        let (g, bundle, corpus) = tiny_bundle();
        let cfg = InferenceConfig {
            iterations: 2,
            ..InferenceConfig::default()
        };
        let r = infer(&bundle, &g, &BudgetConstraint::Count { k: 2 }, &cfg, &corpus).unwrap();
        let dir = tempfile::tempdir().unwrap();
        r.write_outputs(dir.path(), None).unwrap();
        let txt = std::fs::read_to_string(dir.path().join("seeds.txt")).unwrap();
        assert_eq!(txt.lines().count(), 2);
        let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
    }
}
