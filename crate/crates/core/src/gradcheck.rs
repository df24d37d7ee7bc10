//! Central finite-difference checks of analytic gradients.

use crate::autograd::{backward, Var};
use crate::error::Result;
use crate::params::{ParamStore, ParamVars};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
    pub max_rel_err: f64,
    /// `name[index]` of the worst coordinate.
    pub worst: String,
    pub coords: usize,
}

/// Compares backprop gradients of the scalar `f` against central differences
/// with step `h`, on up to `per_array` evenly spaced coordinates of every
/// array in `store`. Inputs to be checked go into the store like parameters.
pub fn check_gradients(
    store: &ParamStore<f64>,
    h: f64,
    per_array: usize,
    f: impl Fn(&ParamVars<f64>) -> Result<Var<f64>>,
) -> Result<GradCheck> {
    let vars = store.vars(true);
    let loss = f(&vars)?;
    let mut grads = backward(&loss);
    let analytic = vars.gradients(&mut grads);
    drop(vars);

    let eval = |s: &ParamStore<f64>| -> Result<f64> { Ok(f(&s.vars(false))?.value().item()) };
    let mut report = GradCheck { max_rel_err: 0.0, worst: String::new(), coords: 0 };
    let mut probe = store.clone();
    for (name, t) in store.iter() {
        let len = t.len();
        let k = per_array.min(len);
        for j in 0..k {
            let i = j * len / k;
            let orig = t.data()[i];
            probe.get_mut(name).expect("same names").data_mut()[i] = orig + h;
            let fp = eval(&probe)?;
            probe.get_mut(name).expect("same names").data_mut()[i] = orig - h;
            let fm = eval(&probe)?;
            probe.get_mut(name).expect("same names").data_mut()[i] = orig;
            let num = (fp - fm) / (2.0 * h);
            let a = analytic[name].data()[i];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-6);
            report.coords += 1;
            if rel > report.max_rel_err || report.worst.is_empty() {
                report.max_rel_err = rel.max(report.max_rel_err);
                report.worst = format!("{name}[{i}]");
            }
        }
    }
    Ok(report)
}
