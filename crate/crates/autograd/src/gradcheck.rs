//! Central finite-difference gradient checking.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Relative step: each coordinate `w` is perturbed by `step * (1 + |w|)`.
    pub step: f64,
    /// Lower bound on the denominator of the relative error.
    pub floor: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(param, flat index, analytic, finite difference)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Compares the tape gradient of `loss(params)` against central differences.
///
/// `loss` is evaluated on a fresh tape each time with the parameters bound as
/// trainable leaves, so it must be a pure function of its inputs.
pub fn check_gradients<F>(params: &[Tensor], loss: F, cfg: GradCheck) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = params.iter().map(|p| tape.param(p.clone())).collect();
        let out = loss(&tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter().map(|v| grads.get_or_zeros(*v)).collect()
    };

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = ps.iter().map(|p| tape.param(p.clone())).collect();
        Ok(loss(&tape, &vars)?.item())
    };

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    for p in 0..params.len() {
        for i in 0..params[p].numel() {
            let w = params[p].data()[i];
            let h = cfg.step * (1.0 + w.abs());
            work[p].data_mut()[i] = w + h;
            let up = eval(&work)?;
            work[p].data_mut()[i] = w - h;
            let down = eval(&work)?;
            work[p].data_mut()[i] = w;
            let fd = (up - down) / (2.0 * h);
            let a = analytic[p].data()[i];
            let rel = (a - fd).abs() / fd.abs().max(cfg.floor);
            report.checked += 1;
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel);
                report.worst = Some((p, i, a, fd));
            }
        }
    }
    Ok(report)
}
