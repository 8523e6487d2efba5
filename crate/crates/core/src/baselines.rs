//! Classical seed selection: Monte-Carlo greedy, CELF, degree top-k and
//! reverse-reachable-set greedy.
//!
//! Greedy and CELF score candidates with [`spread_total`] over one fixed
//! batch of worlds, so every marginal gain is an exact integer difference
//! and both solvers see identical numbers. Under IC the per-world spread is
//! a coverage function, hence submodular, and CELF's lazy bounds are valid:
//! the two return the same set.
//!
//! For cost budgets both selection rules are run (largest gain, and largest
//! gain per unit cost) and the better set is kept.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{exact_ic_spread, spread_total, DiffusionSpec};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::inference::BudgetConstraint;
use crate::seeds::{derive_seed, SeedVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub method: String,
    pub seeds: SeedVector,
    pub cost: f64,
    /// The method's own spread estimate (not an independent evaluation).
    pub estimated_spread: f64,
    /// Marginal gain of each selected node, in selection order.
    pub gains: Vec<f64>,
    /// Number of spread evaluations (or RR sets sampled for RIS).
    pub evaluations: usize,
    /// Kept out of serialized output so artifacts stay reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl BaselineResult {
    /// JSON in the same shape as the inference output.
    pub fn to_json(&self) -> serde_json::Value {
        let ids = self.seeds.indices();
        serde_json::json!({
            "method": self.method,
            "seeds": ids,
            "count": ids.len(),
            "cost": self.cost,
            "estimated_spread": self.estimated_spread,
            "gains": self.gains,
            "evaluations": self.evaluations,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rule {
    Gain,
    Ratio,
}

/// Selection key; larger is better. Zero-cost nodes rank above every priced
/// node under the ratio rule.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Key {
    free: bool,
    value: f64,
}

impl Key {
    fn new(rule: Rule, gain: f64, cost: f64) -> Key {
        match rule {
            Rule::Gain => Key { free: false, value: gain },
            Rule::Ratio if cost == 0.0 => Key { free: true, value: gain },
            Rule::Ratio => Key {
                free: false,
                value: gain / cost,
            },
        }
    }

    fn cmp(&self, other: &Key) -> Ordering {
        self.free
            .cmp(&other.free)
            .then(self.value.total_cmp(&other.value))
    }
}

type Oracle<'a> = dyn Fn(&SeedVector) -> Result<f64> + Sync + 'a;

struct Evaluator<'a> {
    oracle: &'a Oracle<'a>,
    n: usize,
    evaluations: usize,
}

impl Evaluator<'_> {
    fn total(&mut self, s: &SeedVector) -> Result<f64> {
        self.evaluations += 1;
        (self.oracle)(s)
    }

    /// Totals of `base + {v}` for each candidate, evaluated in parallel.
    fn totals_with(&mut self, base: &SeedVector, candidates: &[usize]) -> Result<Vec<f64>> {
        self.evaluations += candidates.len();
        candidates
            .par_iter()
            .map(|&v| {
                let mut s = base.clone();
                s.insert(v);
                (self.oracle)(&s)
            })
            .collect()
    }
}

struct Selection {
    seeds: SeedVector,
    total: f64,
    gains: Vec<f64>,
}

fn check_inputs(g: &Graph, c: &BudgetConstraint, spec: &DiffusionSpec, rounds: usize) -> Result<()> {
    c.validate(g)?;
    spec.validate()?;
    if rounds == 0 {
        return Err(Error::invalid("rounds must be at least 1"));
    }
    Ok(())
}

type RuleFn = fn(&mut Evaluator, &[f64], f64, Rule) -> Result<Selection>;

fn run(
    method: &str,
    g: &Graph,
    c: &BudgetConstraint,
    oracle: &Oracle,
    scale: f64,
    rule_fn: RuleFn,
) -> Result<BaselineResult> {
    let start = Instant::now();
    c.validate(g)?;
    let costs = c.costs(g);
    let mut ev = Evaluator {
        oracle,
        n: g.node_count(),
        evaluations: 0,
    };
    let picks = rules_for(c)
        .iter()
        .map(|&rule| rule_fn(&mut ev, &costs, c.limit(), rule))
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(method, g, c, scale, picks, ev.evaluations, start))
}

fn rules_for(c: &BudgetConstraint) -> &'static [Rule] {
    match c {
        BudgetConstraint::Count { .. } => &[Rule::Gain],
        _ => &[Rule::Gain, Rule::Ratio],
    }
}

fn greedy_rule(ev: &mut Evaluator, costs: &[f64], limit: f64, rule: Rule) -> Result<Selection> {
    let n = ev.n;
    let mut seeds = SeedVector::empty(n);
    let mut total = ev.total(&seeds)?;
    let mut spent = 0.0;
    let mut gains = Vec::new();
    loop {
        let candidates: Vec<usize> = (0..n)
            .filter(|&v| !seeds.contains(v) && spent + costs[v] <= limit)
            .collect();
        if candidates.is_empty() {
            break;
        }
        let totals = ev.totals_with(&seeds, &candidates)?;
        let mut best: Option<(Key, usize, f64)> = None;
        for (&v, &t) in candidates.iter().zip(&totals) {
            let key = Key::new(rule, t - total, costs[v]);
            // Strictly better only, so the lowest id wins ties.
            if best.is_none_or(|(b, _, _)| key.cmp(&b) == Ordering::Greater) {
                best = Some((key, v, t));
            }
        }
        let (_, v, t) = best.expect("non-empty candidates");
        gains.push(t - total);
        seeds.insert(v);
        spent += costs[v];
        total = t;
    }
    Ok(Selection { seeds, total, gains })
}

fn finish(
    method: &str,
    g: &Graph,
    c: &BudgetConstraint,
    scale: f64,
    picks: Vec<Selection>,
    evaluations: usize,
    start: Instant,
) -> BaselineResult {
    // Keep the first rule's answer on ties.
    let best = picks
        .into_iter()
        .reduce(|a, b| if b.total > a.total { b } else { a })
        .expect("at least one rule");
    BaselineResult {
        method: method.into(),
        cost: c.total_cost(g, &best.seeds),
        seeds: best.seeds,
        estimated_spread: best.total / scale,
        gains: best.gains.iter().map(|&x| x / scale).collect(),
        evaluations,
        wall_time_s: start.elapsed().as_secs_f64(),
    }
}

/// Hill climbing: repeatedly adds the affordable node with the largest
/// estimated marginal gain until nothing fits.
pub fn greedy(
    g: &Graph,
    c: &BudgetConstraint,
    spec: &DiffusionSpec,
    rounds: usize,
    rng_seed: u64,
) -> Result<BaselineResult> {
    check_inputs(g, c, spec, rounds)?;
    let oracle = |s: &SeedVector| spread_total(g, s, spec, rounds, rng_seed).map(|t| t as f64);
    run("greedy", g, c, &oracle, rounds as f64, greedy_rule)
}

#[derive(Debug)]
struct Entry {
    key: Key,
    node: usize,
    gain: f64,
    /// Selection round in which `gain` was computed.
    fresh_at: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // Max-heap on key, then on lower node id.
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.cmp(&other.key).then(other.node.cmp(&self.node))
    }
}

fn celf_rule(ev: &mut Evaluator, costs: &[f64], limit: f64, rule: Rule) -> Result<Selection> {
    let n = ev.n;
    let mut seeds = SeedVector::empty(n);
    let mut total = ev.total(&seeds)?;
    let all: Vec<usize> = (0..n).filter(|&v| costs[v] <= limit).collect();
    let first = ev.totals_with(&seeds, &all)?;
    let mut heap: BinaryHeap<Entry> = all
        .iter()
        .zip(&first)
        .map(|(&v, &t)| Entry {
            key: Key::new(rule, t - total, costs[v]),
            node: v,
            gain: t - total,
            fresh_at: 0,
        })
        .collect();
    let mut spent = 0.0;
    let mut gains = Vec::new();
    let mut round = 0;
    while let Some(top) = heap.pop() {
        if spent + costs[top.node] > limit {
            // The remaining budget only shrinks, so this node never fits again.
            continue;
        }
        if top.fresh_at == round {
            seeds.insert(top.node);
            spent += costs[top.node];
            total += top.gain;
            gains.push(top.gain);
            round += 1;
            continue;
        }
        let t = ev.totals_with(&seeds, &[top.node])?[0];
        let gain = t - total;
        heap.push(Entry {
            key: Key::new(rule, gain, costs[top.node]),
            node: top.node,
            gain,
            fresh_at: round,
        });
    }
    Ok(Selection { seeds, total, gains })
}

/// Greedy on exact expected IC spreads, for graphs small enough to
/// enumerate (see [`exact_ic_spread`]).
pub fn greedy_exact(g: &Graph, c: &BudgetConstraint) -> Result<BaselineResult> {
    let oracle = |s: &SeedVector| exact_ic_spread(g, s);
    run("greedy_exact", g, c, &oracle, 1.0, greedy_rule)
}

/// Lazy greedy with a max-priority queue of stale marginal gains.
pub fn celf(
    g: &Graph,
    c: &BudgetConstraint,
    spec: &DiffusionSpec,
    rounds: usize,
    rng_seed: u64,
) -> Result<BaselineResult> {
    check_inputs(g, c, spec, rounds)?;
    let oracle = |s: &SeedVector| spread_total(g, s, spec, rounds, rng_seed).map(|t| t as f64);
    run("celf", g, c, &oracle, rounds as f64, celf_rule)
}

/// Highest out-degree nodes that still fit, ties to the lower id.
pub fn degree_topk(g: &Graph, c: &BudgetConstraint) -> Result<BaselineResult> {
    let start = Instant::now();
    c.validate(g)?;
    let costs = c.costs(g);
    let n = g.node_count();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| g.out_degree(b).cmp(&g.out_degree(a)).then(a.cmp(&b)));
    let mut seeds = SeedVector::empty(n);
    let mut spent = 0.0;
    let mut count_left = match c {
        BudgetConstraint::Count { k } => *k,
        _ => usize::MAX,
    };
    for v in order {
        if count_left == 0 {
            break;
        }
        if spent + costs[v] <= c.limit() {
            spent += costs[v];
            seeds.insert(v);
            count_left -= 1;
        }
    }
    Ok(BaselineResult {
        method: "degree".into(),
        cost: spent,
        gains: Vec::new(),
        estimated_spread: f64::NAN,
        seeds,
        evaluations: 0,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// One reverse-reachable set from a uniformly random root under the
/// weighted cascade.
pub fn sample_rr_set(g: &Graph, rng: &mut impl Rng) -> Vec<usize> {
    let n = g.node_count();
    let root = rng.random_range(0..n);
    let mut seen = vec![false; n];
    seen[root] = true;
    let mut out = vec![root];
    let mut queue = VecDeque::from([root]);
    while let Some(w) = queue.pop_front() {
        let p = g.cascade_weight(w);
        for &u in g.in_neighbors(w) {
            if !seen[u] && rng.random::<f64>() < p {
                seen[u] = true;
                out.push(u);
                queue.push_back(u);
            }
        }
    }
    out
}

/// Greedy maximum coverage over `num_rr_sets` RR sets (IC only). The spread
/// estimate is `|V|` times the covered fraction.
pub fn ris_greedy(
    g: &Graph,
    k: usize,
    num_rr_sets: usize,
    spec: &DiffusionSpec,
    rng_seed: u64,
) -> Result<BaselineResult> {
    let start = Instant::now();
    if num_rr_sets == 0 {
        return Err(Error::invalid("RIS needs at least one RR set"));
    }
    if !matches!(spec, DiffusionSpec::Ic) {
        return Err(Error::invalid("RIS sampling is implemented for IC only"));
    }
    let c = BudgetConstraint::Count { k };
    c.validate(g)?;
    let n = g.node_count();
    let sets: Vec<Vec<usize>> = (0..num_rr_sets)
        .into_par_iter()
        .map(|i| sample_rr_set(g, &mut ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, i as u64))))
        .collect();
    let mut member_of: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, s) in sets.iter().enumerate() {
        for &v in s {
            member_of[v].push(i);
        }
    }
    let mut count: Vec<usize> = member_of.iter().map(|m| m.len()).collect();
    let mut covered = vec![false; num_rr_sets];
    let mut covered_total = 0usize;
    let mut seeds = SeedVector::empty(n);
    let mut gains = Vec::new();
    for _ in 0..k.min(n) {
        let v = (0..n)
            .filter(|&v| !seeds.contains(v))
            .max_by(|&a, &b| count[a].cmp(&count[b]).then(b.cmp(&a)))
            .expect("fewer seeds than nodes");
        seeds.insert(v);
        gains.push(count[v] as f64 * n as f64 / num_rr_sets as f64);
        covered_total += count[v];
        for &i in &member_of[v] {
            if !covered[i] {
                covered[i] = true;
                for &u in &sets[i] {
                    count[u] -= 1;
                }
            }
        }
    }
    Ok(BaselineResult {
        method: "ris".into(),
        cost: seeds.count() as f64,
        seeds,
        estimated_spread: n as f64 * covered_total as f64 / num_rr_sets as f64,
        gains,
        evaluations: num_rr_sets,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
