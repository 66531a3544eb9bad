use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Compares reverse-mode gradients against central differences.
///
/// `f` builds a scalar loss on a fresh tape from the given parameter
/// handles. Returns the maximum over all coordinates of
/// `|analytic − numeric| / (|analytic| + eps)`.
pub fn finite_difference_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidConfig(format!(
            "finite-difference step {eps} outside [1e-7, 1e-3]"
        )));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();

    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|p| tape.constant(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.scalar(loss))
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst = 0.0_f64;
    for p in 0..params.len() {
        for i in 0..params[p].data().len() {
            let orig = params[p].data()[i];
            work[p].data_mut()[i] = orig + eps;
            let up = eval(&work)?;
            work[p].data_mut()[i] = orig - eps;
            let down = eval(&work)?;
            work[p].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[p].data()[i];
            worst = worst.max((a - numeric).abs() / (a.abs() + eps));
        }
    }
    Ok(worst)
}
