use alloc::vec::Vec;

use super::{Graph, Tensor, Var};
use crate::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central finite differences, over every element of every input.
///
/// Returns `max |g_auto - g_fd| / max(|g_auto|, |g_fd|, 1e-8)`.
pub fn grad_check<F>(inputs: &[Tensor<f64>], mut f: F) -> Result<f64>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |f: &mut F, xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone(), false)).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone(), true)).collect();
    let out = f(&mut g, &vars)?;
    let mut grads = g.backward(out);
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| grads.take_or_zeros(v, x.shape()))
        .collect();

    let mut worst = 0.0f64;
    let mut xs = inputs.to_vec();
    for k in 0..xs.len() {
        for i in 0..xs[k].len() {
            let orig = xs[k].data()[i];
            xs[k].data_mut()[i] = orig + FD_STEP;
            let up = eval(&mut f, &xs)?;
            xs[k].data_mut()[i] = orig - FD_STEP;
            let down = eval(&mut f, &xs)?;
            xs[k].data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * FD_STEP);
            let an = analytic[k].data()[i];
            let denom = an.abs().max(fd.abs()).max(1e-8);
            worst = worst.max((an - fd).abs() / denom);
        }
    }
    Ok(worst)
}
