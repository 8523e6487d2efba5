//! Stochastic diffusion processes and Monte-Carlo spread estimation.
//!
//! All simulators are driven by a 64-bit *world key*. Every random decision
//! (edge coin, threshold, recovery) is a hash of the key and the decision's
//! identity, so two runs with the same key see the same world whatever seed
//! set they start from. That makes comparisons between seed sets use common
//! random numbers and keeps MC rounds independent of execution order.
//!
//! Edge influence follows the weighted-cascade convention: an edge into `v`
//! carries weight `1 / in_degree(v)`.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::seeds::{derive_seed, unit_hash, SeedVector};

pub const DEFAULT_ROUNDS: usize = 100;
pub const DEFAULT_SIS_HORIZON: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum DiffusionSpec {
    /// Independent cascade with `p(u, v) = 1 / in_degree(v)`.
    Ic,
    /// Linear threshold, thresholds uniform in `[threshold_low, threshold_high]`.
    Lt {
        threshold_low: f64,
        threshold_high: f64,
    },
    /// Susceptible-infectious-susceptible run for exactly `horizon` steps.
    Sis {
        infect_prob: f64,
        recover_prob: f64,
        horizon: usize,
    },
}

impl DiffusionSpec {
    pub fn lt() -> Self {
        DiffusionSpec::Lt {
            threshold_low: 0.3,
            threshold_high: 0.6,
        }
    }

    pub fn sis() -> Self {
        DiffusionSpec::Sis {
            infect_prob: 0.001,
            recover_prob: 0.001,
            horizon: DEFAULT_SIS_HORIZON,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DiffusionSpec::Ic => "ic",
            DiffusionSpec::Lt { .. } => "lt",
            DiffusionSpec::Sis { .. } => "sis",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        match *self {
            DiffusionSpec::Ic => Ok(()),
            DiffusionSpec::Lt {
                threshold_low,
                threshold_high,
            } => {
                if !unit(threshold_low) || !unit(threshold_high) || threshold_low > threshold_high {
                    return Err(Error::invalid(format!(
                        "LT thresholds must satisfy 0 <= low <= high <= 1, got [{threshold_low}, {threshold_high}]"
                    )));
                }
                Ok(())
            }
            DiffusionSpec::Sis {
                infect_prob,
                recover_prob,
                horizon,
            } => {
                if !unit(infect_prob) || !unit(recover_prob) {
                    return Err(Error::invalid("SIS probabilities must lie in [0, 1]"));
                }
                if horizon == 0 {
                    return Err(Error::invalid("SIS horizon must be at least 1"));
                }
                Ok(())
            }
        }
    }
}

/// One realization of a diffusion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InfectionOutcome {
    /// Nodes ever infected (for IC/LT: the final active set).
    pub infected: Vec<bool>,
    /// Number of `true` entries in `infected`.
    pub spread: usize,
    /// Nodes infected at the last step. Equals `spread` for progressive models.
    pub final_step_infected: usize,
}

impl InfectionOutcome {
    fn progressive(infected: Vec<bool>) -> Self {
        let spread = infected.iter().filter(|&&b| b).count();
        InfectionOutcome {
            infected,
            spread,
            final_step_infected: spread,
        }
    }
}

const LT_THRESHOLD_TAG: u64 = 0x4C54;

fn edge_live(key: u64, edge_id: usize, p: f64) -> bool {
    unit_hash(key, edge_id as u64, 0) < p
}

/// IC realization in the live-edge world selected by `key`.
pub fn ic_world(g: &Graph, seeds: &SeedVector, key: u64) -> Result<InfectionOutcome> {
    seeds.check_len(g.node_count())?;
    let mut active = seeds.flags().to_vec();
    let mut frontier: VecDeque<usize> = seeds.indices().into();
    while let Some(u) = frontier.pop_front() {
        for (eid, v) in g.out_edges(u) {
            if !active[v] && edge_live(key, eid, g.cascade_weight(v)) {
                active[v] = true;
                frontier.push_back(v);
            }
        }
    }
    Ok(InfectionOutcome::progressive(active))
}

/// One independent-cascade run. Each newly activated node gets a single
/// chance per out-edge `(u, v)` succeeding with probability `1 / in_degree(v)`.
pub fn ic_simulate<R: Rng + ?Sized>(
    g: &Graph,
    seeds: &SeedVector,
    rng: &mut R,
) -> Result<InfectionOutcome> {
    ic_world(g, seeds, rng.random())
}

/// Linear-threshold fixpoint for explicit thresholds. `v` activates once the
/// fraction of its in-neighbors that are active reaches `thresholds[v]`.
pub fn lt_simulate(g: &Graph, seeds: &SeedVector, thresholds: &[f64]) -> Result<InfectionOutcome> {
    seeds.check_len(g.node_count())?;
    if thresholds.len() != g.node_count() {
        return Err(Error::invalid("threshold vector length differs from node count"));
    }
    if let Some(bad) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::invalid(format!("threshold {bad} outside [0, 1]")));
    }
    let mut active = seeds.flags().to_vec();
    let mut active_in = vec![0usize; g.node_count()];
    let mut frontier: VecDeque<usize> = seeds.indices().into();
    while let Some(u) = frontier.pop_front() {
        for &v in g.out_neighbors(u) {
            if active[v] {
                continue;
            }
            active_in[v] += 1;
            if active_in[v] as f64 / g.in_degree(v) as f64 >= thresholds[v] {
                active[v] = true;
                frontier.push_back(v);
            }
        }
    }
    Ok(InfectionOutcome::progressive(active))
}

/// Thresholds of the LT world selected by `key`.
pub fn lt_thresholds(node_count: usize, low: f64, high: f64, key: u64) -> Vec<f64> {
    (0..node_count)
        .map(|v| low + (high - low) * unit_hash(key, v as u64, LT_THRESHOLD_TAG))
        .collect()
}

/// SIS realization. Each step, every node infected at the start of the step
/// infects each susceptible out-neighbor with `infect_prob` and then recovers
/// with `recover_prob`; updates are synchronous.
pub fn sis_world(
    g: &Graph,
    seeds: &SeedVector,
    infect_prob: f64,
    recover_prob: f64,
    horizon: usize,
    key: u64,
) -> Result<InfectionOutcome> {
    seeds.check_len(g.node_count())?;
    let n = g.node_count();
    let mut current = seeds.flags().to_vec();
    let mut ever = current.clone();
    let mut infected_list = seeds.indices();
    let mut next = vec![false; n];
    for step in 0..horizon as u64 {
        next.copy_from_slice(&current);
        for &u in &infected_list {
            for (eid, v) in g.out_edges(u) {
                if !current[v] && unit_hash(key, eid as u64, 4 * step + 1) < infect_prob {
                    next[v] = true;
                }
            }
            if unit_hash(key, u as u64, 4 * step + 3) < recover_prob {
                next[u] = false;
            }
        }
        std::mem::swap(&mut current, &mut next);
        infected_list.clear();
        for (v, &c) in current.iter().enumerate() {
            if c {
                infected_list.push(v);
                ever[v] = true;
            }
        }
        if infected_list.is_empty() {
            break;
        }
    }
    let spread = ever.iter().filter(|&&b| b).count();
    Ok(InfectionOutcome {
        infected: ever,
        spread,
        final_step_infected: infected_list.len(),
    })
}

pub fn sis_simulate<R: Rng + ?Sized>(
    g: &Graph,
    seeds: &SeedVector,
    spec: &DiffusionSpec,
    rng: &mut R,
) -> Result<InfectionOutcome> {
    match *spec {
        DiffusionSpec::Sis {
            infect_prob,
            recover_prob,
            horizon,
        } => {
            spec.validate()?;
            sis_world(g, seeds, infect_prob, recover_prob, horizon, rng.random())
        }
        _ => Err(Error::invalid("sis_simulate requires an SIS spec")),
    }
}

/// Runs any model in the world selected by `key`.
pub fn simulate_world(
    g: &Graph,
    seeds: &SeedVector,
    spec: &DiffusionSpec,
    key: u64,
) -> Result<InfectionOutcome> {
    match *spec {
        DiffusionSpec::Ic => ic_world(g, seeds, key),
        DiffusionSpec::Lt {
            threshold_low,
            threshold_high,
        } => {
            let thresholds = lt_thresholds(g.node_count(), threshold_low, threshold_high, key);
            lt_simulate(g, seeds, &thresholds)
        }
        DiffusionSpec::Sis {
            infect_prob,
            recover_prob,
            horizon,
        } => sis_world(g, seeds, infect_prob, recover_prob, horizon, key),
    }
}

/// World key of MC round `round` under `rng_seed`.
pub fn round_key(rng_seed: u64, round: usize) -> u64 {
    derive_seed(rng_seed, round as u64)
}

/// Monte-Carlo summary of a seed set's spread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadEstimate {
    pub mean_spread: f64,
    pub spread_stddev: f64,
    pub rounds: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub node_frequency: Vec<f64>,
}

impl SpreadEstimate {
    pub fn standard_error(&self) -> f64 {
        self.spread_stddev / (self.rounds as f64).sqrt()
    }

    /// JSON summary without the per-node vector.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "mean": self.mean_spread,
            "stddev": self.spread_stddev,
            "rounds": self.rounds,
        })
    }

    pub fn write_frequency_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "node,frequency")?;
        for (i, f) in self.node_frequency.iter().enumerate() {
            writeln!(out, "{i},{f}")?;
        }
        Ok(())
    }
}

fn check_rounds(rounds: usize) -> Result<()> {
    if rounds == 0 {
        return Err(Error::invalid("rounds must be at least 1"));
    }
    Ok(())
}

/// Averages `rounds` independent simulations. Round `r` uses the world
/// `round_key(rng_seed, r)`, so estimates are reproducible and two seed sets
/// estimated with the same `rng_seed` share worlds.
pub fn mc_estimate(
    g: &Graph,
    seeds: &SeedVector,
    spec: &DiffusionSpec,
    rounds: usize,
    rng_seed: u64,
) -> Result<SpreadEstimate> {
    check_rounds(rounds)?;
    spec.validate()?;
    seeds.check_len(g.node_count())?;
    let outcomes: Vec<InfectionOutcome> = (0..rounds)
        .into_par_iter()
        .map(|r| simulate_world(g, seeds, spec, round_key(rng_seed, r)))
        .collect::<Result<_>>()?;
    let mut counts = vec![0u64; g.node_count()];
    let mut spreads = Vec::with_capacity(rounds);
    for o in &outcomes {
        for (c, &b) in counts.iter_mut().zip(&o.infected) {
            *c += b as u64;
        }
        spreads.push(o.spread as f64);
    }
    let (mean, stddev) = mean_stddev(&spreads);
    Ok(SpreadEstimate {
        mean_spread: mean,
        spread_stddev: stddev,
        rounds,
        node_frequency: counts.iter().map(|&c| c as f64 / rounds as f64).collect(),
    })
}

/// Sum of spreads over `rounds` worlds. Integer-valued, so marginal gains
/// computed from it are exact.
pub fn spread_total(
    g: &Graph,
    seeds: &SeedVector,
    spec: &DiffusionSpec,
    rounds: usize,
    rng_seed: u64,
) -> Result<u64> {
    check_rounds(rounds)?;
    (0..rounds)
        .into_par_iter()
        .map(|r| simulate_world(g, seeds, spec, round_key(rng_seed, r)).map(|o| o.spread as u64))
        .try_reduce(|| 0, |a, b| Ok(a + b))
}

/// Returns mean and sample standard deviation (zero for a single value).
pub(crate) fn mean_stddev(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub const EXACT_EDGE_LIMIT: usize = 20;

/// Exact expected IC spread by enumerating all `2^|E|` live-edge worlds.
pub fn exact_ic_spread(g: &Graph, seeds: &SeedVector) -> Result<f64> {
    seeds.check_len(g.node_count())?;
    let m = g.edge_count();
    if m > EXACT_EDGE_LIMIT {
        return Err(Error::TooManyEdges {
            edges: m,
            limit: EXACT_EDGE_LIMIT,
        });
    }
    let edges = g.edges();
    let probs: Vec<f64> = edges.iter().map(|&(_, v)| g.cascade_weight(v)).collect();
    let seed_ids = seeds.indices();
    let mut expected = 0.0;
    let mut reached = vec![false; g.node_count()];
    let mut stack = Vec::new();
    for mask in 0u32..(1u32 << m) {
        let mut weight = 1.0;
        for (e, p) in probs.iter().enumerate() {
            weight *= if mask & (1 << e) != 0 { *p } else { 1.0 - p };
        }
        if weight == 0.0 {
            continue;
        }
        reached.iter_mut().for_each(|r| *r = false);
        stack.clear();
        for &s in &seed_ids {
            reached[s] = true;
            stack.push(s);
        }
        let mut count = seed_ids.len();
        while let Some(u) = stack.pop() {
            for (eid, v) in g.out_edges(u) {
                if mask & (1 << eid) != 0 && !reached[v] {
                    reached[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        expected += weight * count as f64;
    }
    Ok(expected)
}
