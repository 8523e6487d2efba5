//! Record a small computation on a tape, differentiate it, and confirm the
//! gradient with central differences.

use deepim::autograd::gradcheck::check;
use deepim::autograd::{Reduction, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn main() -> deepim::Result<()> {
    let x = Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 0.0, 1.5, -0.5])?;
    let w = Tensor::matrix(3, 1, vec![0.3, -0.2, 0.1])?;
    let target = Arc::new(Tensor::column(vec![1.0, 0.0]));

    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.leaf(w.clone(), true);
    let logits = tape.matmul(xv, wv)?;
    let p = tape.sigmoid(logits);
    let loss = tape.bce_loss(p, target.clone(), Reduction::Mean)?;
    println!("loss {:.6}", tape.value(loss).item());
    let grads = tape.backward(loss)?;
    println!("dL/dw {:?}", grads.get(wv).map(|g| g.data().to_vec()));

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let report = check(
        &[w],
        |t, v| {
            let xv = t.constant(x.clone());
            let l = t.matmul(xv, v[0])?;
            let p = t.sigmoid(l);
            t.bce_loss(p, target.clone(), Reduction::Mean)
        },
        3,
        1e-6,
        &mut rng,
    )?;
    println!("finite differences: max relative error {:.2e}", report.max_rel_error);
    Ok(())
}
