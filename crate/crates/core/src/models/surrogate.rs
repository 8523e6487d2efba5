//! Monotone attention diffusion surrogate.
//!
//! Two rounds of multi-head attention message passing over in-neighbors
//! (plus a self edge) turn a relaxed seed indicator into per-node infection
//! probabilities `tau`. Every weight and attention vector is kept
//! non-negative, and every stage is a composition of non-decreasing maps,
//! so `tau` cannot decrease when the seed vector grows.
//!
//! The default [`AttentionNorm::DegreeGate`] scores edges with
//! `sigmoid(leaky_relu(a_dst . Wh_i + a_src . Wh_j))`, scaled by
//! `1 / in_degree(i)` on neighbor edges (self edges keep weight 1). Row-wise
//! softmax normalization ([`AttentionNorm::Softmax`], the textbook GAT) is
//! available too, but it is not monotone once hidden features are real
//! valued: raising a low-valued neighbor's feature raises its attention
//! share and can pull the convex combination down.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::params::uniform;
use crate::autograd::{clamp_nonneg, Bound, Params, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;

pub const LEAKY_SLOPE: f64 = 0.2;

/// Parameter left unconstrained: the output bias only shifts the logit.
pub const FREE_PARAM: &str = "out.b";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionNorm {
    DegreeGate,
    Softmax,
}

/// Edge lists of `batch` disjoint copies of a graph, self edges included.
#[derive(Debug, Clone)]
pub struct MessageGraph {
    pub node_count: usize,
    pub batch: usize,
    pub src: Arc<Vec<u32>>,
    pub dst: Arc<Vec<u32>>,
    /// `1` on self edges, `1 / in_degree(dst)` on neighbor edges.
    pub gate_scale: Arc<Vec<f64>>,
    /// Row `r` of the batched node matrix belongs to sample `sample_of[r]`.
    pub sample_of: Arc<Vec<u32>>,
}

impl MessageGraph {
    pub fn new(g: &Graph, batch: usize) -> Self {
        let n = g.node_count();
        let per = n + g.edge_count();
        let mut src = Vec::with_capacity(per * batch);
        let mut dst = Vec::with_capacity(per * batch);
        let mut scale = Vec::with_capacity(per * batch);
        for b in 0..batch {
            let off = (b * n) as u32;
            for v in 0..n {
                src.push(off + v as u32);
                dst.push(off + v as u32);
                scale.push(1.0);
                let d = g.in_degree(v);
                for &u in g.in_neighbors(v) {
                    src.push(off + u as u32);
                    dst.push(off + v as u32);
                    scale.push(1.0 / d as f64);
                }
            }
        }
        let sample_of = (0..batch * n).map(|r| (r / n) as u32).collect();
        MessageGraph {
            node_count: n,
            batch,
            src: Arc::new(src),
            dst: Arc::new(dst),
            gate_scale: Arc::new(scale),
            sample_of: Arc::new(sample_of),
        }
    }

    pub fn rows(&self) -> usize {
        self.node_count * self.batch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub heads: usize,
    pub head_dim: usize,
    pub norm: AttentionNorm,
    pub params: Params,
}

impl Surrogate {
    /// Random non-negative initialization.
    pub fn new<R: Rng + ?Sized>(heads: usize, head_dim: usize, norm: AttentionNorm, rng: &mut R) -> Self {
        let width = heads * head_dim;
        let mut params = Params::new();
        params.insert("l1.w", uniform(rng, 1, width, 0.0, 1.0));
        params.insert("l1.att_dst", uniform(rng, 1, width, 0.0, 0.2));
        params.insert("l1.att_src", uniform(rng, 1, width, 0.0, 0.2));
        params.insert("l1.b", Tensor::zeros(1, width));
        params.insert("l2.w", uniform(rng, width, width, 0.0, 2.0 / width as f64));
        params.insert("l2.att_dst", uniform(rng, 1, width, 0.0, 0.2 / head_dim as f64));
        params.insert("l2.att_src", uniform(rng, 1, width, 0.0, 0.2 / head_dim as f64));
        params.insert("l2.b", Tensor::zeros(1, head_dim));
        params.insert("out.w", uniform(rng, head_dim, 1, 0.0, 2.0 / head_dim as f64));
        params.insert("out.b", Tensor::scalar(-1.0));
        Surrogate {
            heads,
            head_dim,
            norm,
            params,
        }
    }

    /// Entirely random non-negative parameters with the given upper bound,
    /// used by property tests.
    pub fn random_nonneg<R: Rng + ?Sized>(
        heads: usize,
        head_dim: usize,
        norm: AttentionNorm,
        high: f64,
        rng: &mut R,
    ) -> Self {
        let mut s = Surrogate::new(heads, head_dim, norm, rng);
        for (name, t) in s.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect::<Vec<_>>() {
            let fresh = if name == FREE_PARAM {
                uniform(rng, 1, 1, -high, high)
            } else {
                uniform(rng, t.rows(), t.cols(), 0.0, high)
            };
            s.params.insert(name, fresh);
        }
        s
    }

    pub fn from_params(heads: usize, head_dim: usize, norm: AttentionNorm, params: Params) -> Result<Self> {
        let s = Surrogate {
            heads,
            head_dim,
            norm,
            params,
        };
        for (name, shape) in s.expected_shapes() {
            let got = s
                .params
                .get(&name)
                .ok_or_else(|| Error::Format(format!("missing surrogate parameter {name}")))?;
            if [got.rows(), got.cols()] != shape {
                return Err(Error::Format(format!("surrogate parameter {name} has wrong shape")));
            }
        }
        Ok(s)
    }

    fn expected_shapes(&self) -> Vec<(String, [usize; 2])> {
        let width = self.heads * self.head_dim;
        let mut shapes = Vec::new();
        for (layer, fan_in, bias) in [("l1", 1, width), ("l2", width, self.head_dim)] {
            shapes.push((format!("{layer}.w"), [fan_in, width]));
            shapes.push((format!("{layer}.att_dst"), [1, width]));
            shapes.push((format!("{layer}.att_src"), [1, width]));
            shapes.push((format!("{layer}.b"), [1, bias]));
        }
        shapes.push(("out.w".into(), [self.head_dim, 1]));
        shapes.push(("out.b".into(), [1, 1]));
        shapes
    }

    pub fn is_constrained(name: &str) -> bool {
        name != FREE_PARAM
    }

    /// Projects every constrained tensor onto the non-negative orthant.
    pub fn project(&mut self) {
        for (name, t) in self.params.iter_mut() {
            if Self::is_constrained(name) {
                clamp_nonneg(t);
            }
        }
    }

    /// Smallest entry over the constrained tensors.
    pub fn min_constrained(&self) -> f64 {
        self.params
            .iter()
            .filter(|(n, _)| Self::is_constrained(n))
            .map(|(_, t)| t.min())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn check_nonneg(&self) -> Result<()> {
        for (name, t) in self.params.iter().filter(|(n, _)| Self::is_constrained(n)) {
            if t.min() < 0.0 {
                return Err(Error::Invariant(format!(
                    "surrogate parameter {name} has negative entry {}",
                    t.min()
                )));
            }
        }
        Ok(())
    }

    fn layer(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        prefix: &str,
        input: Var,
        mg: &MessageGraph,
        average: bool,
    ) -> Result<Var> {
        let w = bound.var(&format!("{prefix}.w"))?;
        let att_dst = bound.var(&format!("{prefix}.att_dst"))?;
        let att_src = bound.var(&format!("{prefix}.att_src"))?;
        let bias = bound.var(&format!("{prefix}.b"))?;
        let projected = tape.matmul(input, w)?;
        let score_dst = tape.head_dot(projected, att_dst, self.heads)?;
        let score_src = tape.head_dot(projected, att_src, self.heads)?;
        let e_dst = tape.gather_rows(score_dst, mg.dst.clone())?;
        let e_src = tape.gather_rows(score_src, mg.src.clone())?;
        let logits = tape.add(e_dst, e_src)?;
        let logits = tape.leaky_relu(logits, LEAKY_SLOPE);
        let gate = match self.norm {
            AttentionNorm::DegreeGate => {
                let g = tape.sigmoid(logits);
                tape.scale_rows(g, mg.gate_scale.clone())?
            }
            AttentionNorm::Softmax => tape.segment_softmax(logits, mg.dst.clone(), mg.rows())?,
        };
        let agg = tape.edge_aggregate(projected, gate, mg.src.clone(), mg.dst.clone(), self.heads)?;
        let agg = if average {
            tape.head_mean(agg, self.heads)?
        } else {
            agg
        };
        let h = tape.add(agg, bias)?;
        Ok(tape.relu(h))
    }

    /// `x` is `[batch * node_count, 1]`; returns `tau` with the same shape.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, mg: &MessageGraph, x: Var) -> Result<Var> {
        let xv = tape.value(x);
        if xv.rows() != mg.rows() || xv.cols() != 1 {
            return Err(Error::ShapeMismatch {
                op: "surrogate input",
                left: xv.dims(),
                right: vec![mg.rows(), 1],
            });
        }
        let h1 = self.layer(tape, bound, "l1", x, mg, false)?;
        let h2 = self.layer(tape, bound, "l2", h1, mg, true)?;
        let w = bound.var("out.w")?;
        let b = bound.var("out.b")?;
        let logits = tape.matmul(h2, w)?;
        let logits = tape.add(logits, b)?;
        Ok(tape.sigmoid(logits))
    }

    /// Per-sample soft spread `sum(tau)`, `[batch, 1]`.
    pub fn soft_spread(tape: &mut Tape, mg: &MessageGraph, tau: Var) -> Result<Var> {
        tape.segment_sum(tau, mg.sample_of.clone(), mg.batch)
    }

    /// `tau` for each row of `xs` (`batch` relaxed seed vectors of length n).
    pub fn tau(&self, mg: &MessageGraph, xs: &[f64]) -> Result<Vec<f64>> {
        self.check_nonneg()?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let x = tape.constant(Tensor::column(xs.to_vec()));
        let tau = self.forward(&mut tape, &bound, mg, x)?;
        Ok(tape.value(tau).data().to_vec())
    }
}

/// `(y_soft, y_hard)`: the l1 mass of `tau` and the count of entries at or
/// above `xi`.
pub fn spread_from_tau(tau: &[f64], xi: f64) -> (f64, usize) {
    (tau.iter().sum(), tau.iter().filter(|&&t| t >= xi).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::gradcheck;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_graph() -> Graph {
        let edges = [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 5), (5, 3), (1, 4)];
        Graph::from_edges(6, &edges, false).unwrap().0
    }

    #[test]
    fn message_graph_has_self_edges_and_degree_scale() {
        let g = small_graph();
        let mg = MessageGraph::new(&g, 2);
        assert_eq!(mg.src.len(), 2 * (6 + g.edge_count()));
        let node3: Vec<usize> = (0..mg.dst.len()).filter(|&e| mg.dst[e] == 3).collect();
        assert_eq!(node3.len(), 1 + g.in_degree(3));
        for e in node3 {
            let expected = if mg.src[e] == 3 { 1.0 } else { 1.0 / g.in_degree(3) as f64 };
            assert_eq!(mg.gate_scale[e], expected);
        }
        assert_eq!(mg.sample_of[6], 1);
        assert!(mg.dst[6 + g.edge_count()..].iter().all(|&d| d >= 6));
    }

    #[test]
    fn batched_rows_match_single_samples() {
        let g = small_graph();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = Surrogate::new(2, 4, AttentionNorm::DegreeGate, &mut rng);
        let a = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let b = [0.0, 0.0, 0.3, 0.0, 1.0, 0.0];
        let both: Vec<f64> = a.iter().chain(&b).copied().collect();
        let batched = s.tau(&MessageGraph::new(&g, 2), &both).unwrap();
        let one = MessageGraph::new(&g, 1);
        let ta = s.tau(&one, &a).unwrap();
        let tb = s.tau(&one, &b).unwrap();
        for (x, y) in batched.iter().zip(ta.iter().chain(&tb)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_clamps_all_but_output_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = Surrogate::new(2, 3, AttentionNorm::DegreeGate, &mut rng);
        for (_, t) in s.params.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v -= 5.0);
        }
        assert!(s.check_nonneg().is_err());
        s.project();
        assert_eq!(s.min_constrained(), 0.0);
        assert_eq!(s.params.get(FREE_PARAM).unwrap().item(), -6.0);
        s.check_nonneg().unwrap();
    }

    #[test]
    fn negative_weights_are_refused_at_inference() {
        let g = small_graph();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = Surrogate::new(2, 3, AttentionNorm::DegreeGate, &mut rng);
        s.params.get_mut("l2.w").unwrap().data_mut()[0] = -0.1;
        let err = s.tau(&MessageGraph::new(&g, 1), &[0.0; 6]).unwrap_err();
        assert!(matches!(err, Error::Invariant(_)));
    }

    fn grad_inputs(s: &Surrogate, x: &[f64]) -> Vec<Tensor> {
        let mut inputs: Vec<Tensor> = s.params.iter().map(|(_, t)| t.clone()).collect();
        inputs.push(Tensor::column(x.to_vec()));
        inputs
    }

    fn check_gradients(norm: AttentionNorm) {
        let g = small_graph();
        let mg = MessageGraph::new(&g, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = Surrogate::random_nonneg(2, 3, norm, 0.8, &mut rng);
        // Strictly positive inputs keep every attention logit away from the
        // leaky-relu kink at zero.
        let x: Vec<f64> = (0..12).map(|i| 0.1 + 0.8 * (i as f64 * 0.37).fract()).collect();
        let inputs = grad_inputs(&s, &x);
        let report = gradcheck::check(
            &inputs,
            |tape, vars| {
                let (pv, xv) = vars.split_at(vars.len() - 1);
                let bound = Bound::from_vars(&s.params, pv)?;
                let tau = s.forward(tape, &bound, &mg, xv[0])?;
                let y = Surrogate::soft_spread(tape, &mg, tau)?;
                let y2 = tape.mul(y, y)?;
                Ok(tape.sum(y2))
            },
            200,
            1e-5,
            &mut rng,
        )
        .unwrap();
        assert!(report.passes(1e-5, 1e-8), "{:?}", report.worst);
    }

    #[test]
    fn degree_gate_gradients_match_finite_differences() {
        check_gradients(AttentionNorm::DegreeGate);
    }

    #[test]
    fn softmax_gradients_match_finite_differences() {
        check_gradients(AttentionNorm::Softmax);
    }

    /// Random non-negative softmax surrogates do break monotonicity: adding
    /// a seed lowers some node's probability.
    #[test]
    fn softmax_attention_is_not_monotone() {
        let g = small_graph();
        let mg = MessageGraph::new(&g, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut worst = 0.0f64;
        for _ in 0..300 {
            let s = Surrogate::random_nonneg(2, 3, AttentionNorm::Softmax, 1.0, &mut rng);
            let base: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
            let t0 = s.tau(&mg, &base).unwrap();
            for j in 0..6 {
                let mut up = base.clone();
                up[j] = 1.0;
                let t1 = s.tau(&mg, &up).unwrap();
                for (a, b) in t0.iter().zip(&t1) {
                    worst = worst.max(a - b);
                }
            }
        }
        assert!(worst > 1e-6, "no violation found, worst drop {worst}");
    }

    fn arb_case() -> impl Strategy<Value = (u64, Vec<f64>, Vec<f64>)> {
        (
            any::<u64>(),
            prop::collection::vec(0.0f64..1.0, 6),
            prop::collection::vec(0.0f64..1.0, 6),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn degree_gate_is_monotone((seed, base, bump) in arb_case()) {
            let g = small_graph();
            let mg = MessageGraph::new(&g, 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = Surrogate::random_nonneg(2, 3, AttentionNorm::DegreeGate, 3.0, &mut rng);
            let lo: Vec<f64> = base.iter().zip(&bump).map(|(b, d)| b * (1.0 - d)).collect();
            let t_lo = s.tau(&mg, &lo).unwrap();
            let t_hi = s.tau(&mg, &base).unwrap();
            for (a, b) in t_lo.iter().zip(&t_hi) {
                prop_assert!(*b >= *a - 1e-12, "tau dropped from {a} to {b}");
            }
        }

        #[test]
        fn tau_is_a_probability((seed, x, _) in arb_case()) {
            let g = small_graph();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = Surrogate::random_nonneg(2, 3, AttentionNorm::DegreeGate, 2.0, &mut rng);
            let tau = s.tau(&MessageGraph::new(&g, 1), &x).unwrap();
            prop_assert!(tau.iter().all(|t| (0.0..=1.0).contains(t)));
        }
    }
}
