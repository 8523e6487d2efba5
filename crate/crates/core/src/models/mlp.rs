use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::params::{glorot_uniform, he_uniform};
use crate::autograd::{Bound, Params, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Softplus,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Softplus => tape.softplus(x),
        }
    }
}

/// Stack of affine layers `widths[i] -> widths[i+1]`. Parameters are named
/// `l{i}.w` (`[in, out]`) and `l{i}.b` (`[1, out]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
    pub params: Params,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid(format!("invalid layer widths {widths:?}")));
        }
        let mut params = Params::new();
        let layers = widths.len() - 1;
        for i in 0..layers {
            let (fan_in, fan_out) = (widths[i], widths[i + 1]);
            let w = if i + 1 == layers && output != Activation::Relu {
                glorot_uniform(rng, fan_in, fan_out)
            } else {
                he_uniform(rng, fan_in, fan_out)
            };
            params.insert(format!("l{i}.w"), w);
            params.insert(format!("l{i}.b"), Tensor::zeros(1, fan_out));
        }
        Ok(Mlp {
            widths: widths.to_vec(),
            hidden,
            output,
            params,
        })
    }

    /// Rebuilds from stored parameters, checking every layer shape.
    pub fn from_params(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        params: Params,
    ) -> Result<Self> {
        for i in 0..widths.len() - 1 {
            for (name, shape) in [
                (format!("l{i}.w"), [widths[i], widths[i + 1]]),
                (format!("l{i}.b"), [1, widths[i + 1]]),
            ] {
                let t = params
                    .get(&name)
                    .ok_or_else(|| Error::Format(format!("missing parameter {name}")))?;
                if [t.rows(), t.cols()] != shape {
                    return Err(Error::Format(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )));
                }
            }
        }
        Ok(Mlp {
            widths: widths.to_vec(),
            hidden,
            output,
            params,
        })
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("at least two widths")
    }

    /// `x` is `[batch, input_width]`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        Ok(self.forward_with_logits(tape, bound, x)?.1)
    }

    /// Like [`Mlp::forward`], also returning the last layer's pre-activation.
    pub fn forward_with_logits(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<(Var, Var)> {
        let cols = tape.value(x).cols();
        if cols != self.input_width() {
            return Err(Error::ShapeMismatch {
                op: "mlp input",
                left: vec![tape.value(x).rows(), cols],
                right: vec![self.input_width(), self.widths[1]],
            });
        }
        let layers = self.widths.len() - 1;
        let mut h = x;
        let mut lin = x;
        for i in 0..layers {
            let w = bound.var(&format!("l{i}.w"))?;
            let b = bound.var(&format!("l{i}.b"))?;
            lin = tape.matmul(h, w)?;
            lin = tape.add(lin, b)?;
            let act = if i + 1 == layers { self.output } else { self.hidden };
            h = act.apply(tape, lin);
        }
        Ok((lin, h))
    }

    /// Forward pass on plain rows without gradient tracking.
    pub fn eval(&self, rows: usize, input: Vec<f64>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let x = tape.constant(Tensor::matrix(rows, self.input_width(), input)?);
        let y = self.forward(&mut tape, &bound, x)?;
        Ok(tape.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_degenerate_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(Mlp::new(&[3], Activation::Relu, Activation::Identity, &mut rng).is_err());
        assert!(Mlp::new(&[3, 0, 1], Activation::Relu, Activation::Identity, &mut rng).is_err());
    }

    #[test]
    fn wrong_input_width_is_a_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Mlp::new(&[3, 4, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        assert!(m.eval(1, vec![0.0; 2]).is_err());
        let mut tape = Tape::new();
        let bound = m.params.bind(&mut tape, false);
        let x = tape.constant(Tensor::zeros(1, 2));
        assert!(matches!(m.forward(&mut tape, &bound, x), Err(Error::ShapeMismatch { .. })));
        assert_eq!(m.eval(2, vec![0.5; 6]).unwrap().shape(), &[2, 1]);
    }

    #[test]
    fn from_params_checks_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Mlp::new(&[3, 4, 2], Activation::Relu, Activation::Sigmoid, &mut rng).unwrap();
        assert!(Mlp::from_params(&[3, 4, 2], m.hidden, m.output, m.params.clone()).is_ok());
        assert!(Mlp::from_params(&[3, 5, 2], m.hidden, m.output, m.params.clone()).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for output in [Activation::Sigmoid, Activation::Softplus, Activation::Identity] {
            let m = Mlp::new(&[5, 7, 6, 2], Activation::Relu, output, &mut rng).unwrap();
            let mut inputs: Vec<Tensor> = m.params.iter().map(|(_, t)| t.clone()).collect();
            inputs.push(crate::autograd::params::uniform(&mut rng, 3, 5, -1.0, 1.0));
            let report = gradcheck::check(
                &inputs,
                |tape, vars| {
                    let (pv, xv) = vars.split_at(vars.len() - 1);
                    let bound = Bound::from_vars(&m.params, pv)?;
                    let y = m.forward(tape, &bound, xv[0])?;
                    let y2 = tape.mul(y, y)?;
                    Ok(tape.sum(y2))
                },
                150,
                1e-5,
                &mut rng,
            )
            .unwrap();
            assert!(report.passes(1e-5, 1e-8), "{output:?}: {:?}", report.worst);
        }
    }
}
