//! Central-difference verification of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct GradCheckReport<T> {
    pub max_rel_error: T,
    pub worst_index: usize,
    pub analytic: Vec<T>,
    pub numeric: Vec<T>,
}

/// Largest per-coordinate relative error between the tape gradient of the
/// scalar function `f` at `x` and a central difference with step `h`.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, h: T) -> Result<T>
where
    T: Scalar,
    F: for<'t> Fn(&mut Tape<'t, T>, Var) -> Result<Var>,
{
    grad_check_report(f, x, h).map(|r| r.max_rel_error)
}

pub fn grad_check_report<T, F>(f: F, x: &Tensor<T>, h: T) -> Result<GradCheckReport<T>>
where
    T: Scalar,
    F: for<'t> Fn(&mut Tape<'t, T>, Var) -> Result<Var>,
{
    if !x.is_finite() {
        return Err(Error::NonFinite("grad_check input"));
    }
    let analytic = {
        let input = x.clone().with_requires_grad(true);
        let mut tape = Tape::new();
        let v = tape.leaf(&input);
        let out = f(&mut tape, v)?;
        let grads = tape.backward(out)?;
        grads.get(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![T::zero(); x.numel()])
    };

    let eval = |probe: &Tensor<T>| -> Result<T> {
        let mut tape = Tape::new();
        let v = tape.leaf(probe);
        let out = f(&mut tape, v)?;
        if tape.value(out).len() != 1 {
            return Err(Error::Tape("grad_check function must return a scalar".into()));
        }
        Ok(tape.item(out))
    };

    let two = T::of(2.0);
    let floor = T::of(1e-8);
    let mut probe = x.clone();
    let mut numeric = Vec::with_capacity(x.numel());
    let mut max_rel_error = T::zero();
    let mut worst_index = 0;
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let num = (plus - minus) / (two * h);
        let ana = analytic[i];
        let denom = ana.abs().max(num.abs()).max(floor);
        let rel = (ana - num).abs() / denom;
        if rel > max_rel_error || rel.is_nan() {
            max_rel_error = rel;
            worst_index = i;
        }
        numeric.push(num);
    }
    Ok(GradCheckReport { max_rel_error, worst_index, analytic, numeric })
}
