//! With non-negative weights the degree-gated attention surrogate can only
//! raise infection probabilities when a seed's weight grows. Softmax
//! attention with the same weights does not share that guarantee.

use deepim::graph::erdos_renyi;
use deepim::models::{AttentionNorm, MessageGraph, Surrogate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn worst_drop(norm: AttentionNorm, trials: usize) -> deepim::Result<f64> {
    let n = 8;
    let g = erdos_renyi(n, 16, 2)?;
    let mg = MessageGraph::new(&g, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let s = Surrogate::random_nonneg(2, 3, norm, 1.0, &mut rng);
        let base: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let before = s.tau(&mg, &base)?;
        let mut raised = base.clone();
        raised[rng.random_range(0..n)] = 1.0;
        let after = s.tau(&mg, &raised)?;
        worst = before.iter().zip(&after).map(|(a, b)| a - b).fold(worst, f64::max);
    }
    Ok(worst)
}

fn main() -> deepim::Result<()> {
    for norm in [AttentionNorm::DegreeGate, AttentionNorm::Softmax] {
        let drop = worst_drop(norm, 500)?;
        println!("{norm:?}: largest probability drop after raising one input {drop:.2e}");
    }
    Ok(())
}
