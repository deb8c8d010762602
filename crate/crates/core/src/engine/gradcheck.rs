//! Central finite-difference gradient checking.
//!
//! The check only evaluates forward values, so it stays independent of the
//! backward rules it is used to validate.

use super::{EngineError, Graph, Tensor, Var};

/// Step used by the central difference.
pub const STEP: f64 = 1e-5;

/// Denominator floor in the relative error, so that gradients that are
/// zero analytically do not divide by zero.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares backward gradients of `build` with central differences for
/// every element of every input. `build` receives the inputs registered as
/// gradient-carrying leaves and must return a scalar.
#[allow(clippy::needless_range_loop)]
pub fn check<F>(inputs: &[Tensor], build: F) -> Result<GradCheckReport, EngineError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, EngineError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| g.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64, EngineError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        g.value(out).item().ok_or_else(|| EngineError::NonScalarLoss(g.shape(out).to_vec()))
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, input: 0, element: 0, analytic: 0.0, numeric: 0.0 };
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + STEP;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - STEP;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let err = relative_error(analytic[i][j], numeric);
            if err > report.max_rel_error {
                report =
                    GradCheckReport { max_rel_error: err, input: i, element: j, analytic: analytic[i][j], numeric };
            }
        }
    }
    Ok(report)
}
