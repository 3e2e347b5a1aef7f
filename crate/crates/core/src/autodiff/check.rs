//! Central finite-difference gradient checking.

use super::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Outcome of a gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// max over coordinates of `|ad - fd| / (|fd| + 1e-8)`.
    pub max_rel_err: f64,
    pub coordinates: usize,
}

/// Compares tape gradients of `f` against central differences with step `h`
/// for every coordinate of every tensor in `params`.
///
/// `f` must rebuild the same deterministic computation on each call.
pub fn check_gradients<F>(params: &[Tensor], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut worst = 0.0f64;
    let mut coordinates = 0;
    let mut work = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var, params[pi].len());
        for j in 0..params[pi].len() {
            let orig = work[pi].data()[j];
            work[pi].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[pi].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = (analytic[j] - fd).abs() / (fd.abs() + 1e-8);
            worst = worst.max(rel);
            coordinates += 1;
        }
    }
    Ok(GradCheck {
        max_rel_err: worst,
        coordinates,
    })
}
