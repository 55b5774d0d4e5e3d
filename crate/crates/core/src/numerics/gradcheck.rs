use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Gradients below this magnitude are compared absolutely rather than
/// relatively.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// `(parameter index, element index)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn eval<F>(params: &[Tensor], f: &F) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let out = f(&mut tape, &vars)?;
    Ok((tape, vars, out))
}

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences with step [`FD_STEP`], perturbing every parameter entry.
pub fn grad_check<F>(params: &[Tensor], f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (mut tape, vars, out) = eval(params, &f)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| tape.grad(*v).map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec))
        .collect();
    drop(tape);

    let mut probe = params.to_vec();
    let mut report = GradCheck {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for (pi, grad) in analytic.iter().enumerate() {
        for (ei, &g) in grad.iter().enumerate() {
            let orig = probe[pi].data()[ei];
            probe[pi].data_mut()[ei] = orig + FD_STEP;
            let (t, _, o) = eval(&probe, &f)?;
            let plus = t.scalar(o);
            probe[pi].data_mut()[ei] = orig - FD_STEP;
            let (t, _, o) = eval(&probe, &f)?;
            let minus = t.scalar(o);
            probe[pi].data_mut()[ei] = orig;

            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let rel = rel_err(g, numeric);
            report.max_abs_err = report.max_abs_err.max((g - numeric).abs());
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (pi, ei);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
