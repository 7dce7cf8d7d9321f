use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Outcome of comparing reverse-mode gradients to central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// `|analytic - numeric| / max(|analytic|, |numeric|, floor)`, maximized
    /// over every checked coordinate.
    pub max_relative_error: f64,
    /// (input, element) of the worst coordinate.
    pub worst: (usize, usize),
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error <= tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks `f` at `inputs`. `f` must build a scalar on the given tape from the
/// supplied leaves; it is called once for the analytic pass and twice per
/// coordinate for the numeric pass.
pub fn check_gradients<F>(inputs: &[Tensor], step: f64, floor: f64, f: F) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let leaves: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&tape, &leaves)?;
        let grads = loss.backward()?;
        leaves.iter().map(|&v| grads.get(v)).collect()
    };

    let eval = |point: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let leaves: Vec<Var> = point.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &leaves)?.item())
    };

    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut point = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].values()[j];
            point[i].values_mut()[j] = x0 + step;
            let up = eval(&point)?;
            point[i].values_mut()[j] = x0 - step;
            let down = eval(&point)?;
            point[i].values_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(analytic[i].values()[j], numeric, floor);
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = (i, j);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
