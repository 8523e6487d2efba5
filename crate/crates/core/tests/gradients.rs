//! Every tape op against central differences. Each loss ends in a weighted
//! sum so that the upstream gradient is not all ones.

use std::sync::Arc;

use deepim::autograd::gradcheck::check;
use deepim::autograd::{Reduction, Tape, Tensor, Var};
use deepim::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
const REL: f64 = 1e-4;
const ABS: f64 = 1e-7;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

fn positive(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(0.05..0.95)).collect()).unwrap()
}

/// Dots `v` with fixed pseudo-random weights.
fn weighted_sum(tape: &mut Tape, v: Var) -> Result<Var> {
    let t = tape.value(v);
    let (r, c) = (t.rows(), t.cols());
    let w: Vec<f64> = (0..r * c).map(|i| ((i * 7919 % 13) as f64 - 6.0) / 5.0).collect();
    let w = tape.constant(Tensor::matrix(r, c, w)?);
    let p = tape.mul(v, w)?;
    Ok(tape.sum(p))
}

fn assert_op<F>(name: &str, inputs: Vec<Tensor>, f: F)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64);
    let total: usize = inputs.iter().map(|t| t.len()).sum();
    let report = check(&inputs, |tape, v| f(tape, v).and_then(|y| weighted_sum(tape, y)), total.min(40), H, &mut rng)
        .unwrap();
    assert!(
        report.passes(REL, ABS),
        "{name}: worst probe {:?} (rel {:.2e})",
        report.worst,
        report.max_rel_error
    );
}

#[test]
fn matmul_add_sub_mul() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert_op("matmul", vec![random(&mut rng, 3, 4), random(&mut rng, 4, 2)], |t, v| t.matmul(v[0], v[1]));
    assert_op("add", vec![random(&mut rng, 3, 4), random(&mut rng, 3, 4)], |t, v| t.add(v[0], v[1]));
    assert_op("add_row", vec![random(&mut rng, 3, 4), random(&mut rng, 1, 4)], |t, v| t.add(v[0], v[1]));
    assert_op("sub", vec![random(&mut rng, 2, 5), random(&mut rng, 2, 5)], |t, v| t.sub(v[0], v[1]));
    assert_op("mul", vec![random(&mut rng, 2, 5), random(&mut rng, 2, 5)], |t, v| t.mul(v[0], v[1]));
    assert_op("mul_self", vec![random(&mut rng, 2, 3)], |t, v| t.mul(v[0], v[0]));
}

#[test]
fn shape_and_scalar_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    assert_op("scale", vec![random(&mut rng, 3, 3)], |t, v| Ok(t.scale(v[0], -2.5)));
    assert_op("add_scalar", vec![random(&mut rng, 3, 3)], |t, v| {
        let y = t.add_scalar(v[0], 0.7);
        t.mul(y, y)
    });
    assert_op("reshape", vec![random(&mut rng, 2, 6)], |t, v| t.reshape(v[0], 4, 3));
    assert_op("concat", vec![random(&mut rng, 3, 2), random(&mut rng, 3, 4)], |t, v| t.concat(&[v[0], v[1]]));
    assert_op("sum", vec![random(&mut rng, 3, 3)], |t, v| {
        let s = t.sum(v[0]);
        t.mul(s, s)
    });
    assert_op("mean", vec![random(&mut rng, 3, 3)], |t, v| {
        let s = t.mean(v[0]);
        t.mul(s, s)
    });
}

#[test]
fn activations() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    assert_op("sigmoid", vec![random(&mut rng, 4, 4)], |t, v| Ok(t.sigmoid(v[0])));
    assert_op("softplus", vec![random(&mut rng, 4, 4)], |t, v| Ok(t.softplus(v[0])));
    // Values are drawn away from the kink at zero.
    let away = |rng: &mut ChaCha8Rng| {
        let mut x = random(rng, 4, 4);
        for v in x.data_mut() {
            if v.abs() < 0.05 {
                *v += 0.1;
            }
        }
        x
    };
    assert_op("relu", vec![away(&mut rng)], |t, v| Ok(t.relu(v[0])));
    assert_op("leaky_relu", vec![away(&mut rng)], |t, v| Ok(t.leaky_relu(v[0], 0.2)));
}

#[test]
fn segment_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let segs = Arc::new(vec![0u32, 2, 0, 1, 2, 2]);
    let s = segs.clone();
    assert_op("segment_softmax", vec![random(&mut rng, 6, 3)], move |t, v| t.segment_softmax(v[0], s.clone(), 3));
    let s = segs.clone();
    assert_op("segment_sum", vec![random(&mut rng, 6, 2)], move |t, v| t.segment_sum(v[0], s.clone(), 4));
    let idx = Arc::new(vec![3u32, 0, 3, 1, 1]);
    assert_op("gather_rows", vec![random(&mut rng, 4, 3)], move |t, v| t.gather_rows(v[0], idx.clone()));
    let f = Arc::new(vec![0.5, -1.0, 2.0]);
    assert_op("scale_rows", vec![random(&mut rng, 3, 4)], move |t, v| t.scale_rows(v[0], f.clone()));
}

#[test]
fn attention_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    assert_op("head_dot", vec![random(&mut rng, 5, 6), random(&mut rng, 1, 6)], |t, v| t.head_dot(v[0], v[1], 3));
    let src = Arc::new(vec![0u32, 1, 2, 3, 3, 0]);
    let dst = Arc::new(vec![1u32, 2, 0, 0, 1, 1]);
    assert_op(
        "edge_aggregate",
        vec![random(&mut rng, 4, 6), random(&mut rng, 6, 2)],
        move |t, v| t.edge_aggregate(v[0], v[1], src.clone(), dst.clone(), 2),
    );
    assert_op("head_mean", vec![random(&mut rng, 3, 8)], |t, v| t.head_mean(v[0], 4));
}

#[test]
fn losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for reduction in [Reduction::Sum, Reduction::Mean] {
        let target = Arc::new(positive(&mut rng, 3, 4));
        let t2 = target.clone();
        assert_op("bce", vec![positive(&mut rng, 3, 4)], move |t, v| t.bce_loss(v[0], t2.clone(), reduction));
        assert_op("mse", vec![random(&mut rng, 3, 4)], move |t, v| t.mse_loss(v[0], target.clone(), reduction));
    }
}

#[test]
fn composite_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inputs = vec![random(&mut rng, 4, 3), random(&mut rng, 3, 6), random(&mut rng, 1, 6)];
    assert_op("chain", inputs, |t, v| {
        let h = t.matmul(v[0], v[1])?;
        let h = t.add(h, v[2])?;
        let h = t.sigmoid(h);
        let d = t.head_dot(h, v[2], 2)?;
        let m = t.head_mean(h, 2)?;
        let s = t.softplus(m);
        let p = t.concat(&[s, d])?;
        let p2 = t.mul(p, p)?;
        Ok(t.scale(p2, 0.5))
    });
}
