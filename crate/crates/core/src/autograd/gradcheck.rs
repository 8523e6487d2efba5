//! Central finite-difference oracle for tape gradients.

use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so gradients that are zero up
/// to roundoff do not blow the ratio up.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub probes: usize,
    pub max_rel_error: f64,
    /// `(input, element, analytic, numeric)` of the worst probe.
    pub worst: Option<(usize, usize, f64, f64)>,
    /// `(input, element, analytic, numeric)` of every probe.
    pub samples: Vec<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    /// True when every probe is within `rel_tol` relative error or, for
    /// gradients that vanish analytically, within `abs_tol` absolute error.
    pub fn passes(&self, rel_tol: f64, abs_tol: f64) -> bool {
        self.samples
            .iter()
            .all(|&(_, _, a, n)| relative_error(a, n) <= rel_tol || (a - n).abs() <= abs_tol)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares backward-pass gradients of `f` with respect to `inputs` against
/// central differences at `probes` randomly chosen coordinates.
pub fn check<F, R>(inputs: &[Tensor], f: F, probes: usize, h: f64, rng: &mut R) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    R: Rng + ?Sized,
{
    let total: usize = inputs.iter().map(|t| t.len()).sum();
    if total == 0 {
        return Err(Error::invalid("gradient check needs at least one input value"));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Option<Tensor>> = vars.iter().map(|&v| grads.get(v).cloned()).collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut work = inputs.to_vec();
    let mut report = GradCheckReport {
        probes,
        max_rel_error: 0.0,
        worst: None,
        samples: Vec::with_capacity(probes),
    };
    for _ in 0..probes {
        let mut flat = rng.random_range(0..total);
        let mut which = 0;
        while flat >= work[which].len() {
            flat -= work[which].len();
            which += 1;
        }
        let original = work[which].data()[flat];
        work[which].data_mut()[flat] = original + h;
        let up = eval(&work)?;
        work[which].data_mut()[flat] = original - h;
        let down = eval(&work)?;
        work[which].data_mut()[flat] = original;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[which].as_ref().map_or(0.0, |g| g.data()[flat]);
        let err = relative_error(a, numeric);
        report.samples.push((which, flat, a, numeric));
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((which, flat, a, numeric));
        }
    }
    Ok(report)
}
