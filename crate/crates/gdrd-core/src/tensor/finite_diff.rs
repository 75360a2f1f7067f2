//! Central-difference gradient verification.
//!
//! The checker rebuilds the computation from scratch for every probe, so the
//! closure must construct its graph purely from the leaf tensors it is given.
//! Checks run in `f64`: with a probe step of 1e-5 the truncation and rounding
//! errors both land well below the 1e-4 acceptance threshold, which `f32`
//! could not promise.

use super::{Tensor, TensorError};

/// Relative-error floor: differences are measured against
/// max(|analytic|, |numeric|, `ABS_FLOOR`) so near-zero gradients do not
/// produce spurious relative blow-ups.
pub const ABS_FLOOR: f64 = 1e-8;

/// Probe step for central differences.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Pass threshold on the worst relative error.
pub const DEFAULT_TOL: f64 = 1e-4;

/// One leaf the checker perturbs: a label for reporting, a shape and the
/// base-point data.
#[derive(Debug, Clone)]
pub struct ProbeInput {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ProbeInput {
    pub fn new(name: &str, shape: &[usize], data: Vec<f64>) -> Self {
        ProbeInput {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        }
    }
}

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error over every element of every input.
    pub max_rel_err: f64,
    /// Which input held the worst element.
    pub worst_input: String,
    /// Flat index of the worst element within that input.
    pub worst_index: usize,
    pub tolerance: f64,
    pub pass: bool,
}

/// Compares reverse-mode gradients of a scalar-valued function against
/// central differences at the given base point.
///
/// `f` receives one tracked leaf per entry of `inputs`, in order, and must
/// return a scalar tensor.
pub fn grad_check<F>(inputs: &[ProbeInput], f: F, eps: f64, tol: f64) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>, TensorError>,
{
    // Analytic pass.
    let leaves: Vec<Tensor<f64>> = inputs
        .iter()
        .map(|p| Tensor::param(&p.shape, p.data.clone()))
        .collect::<Result<_, _>>()?;
    let loss = f(&leaves)?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.grad().expect("param leaves always carry a gradient buffer"))
        .collect();

    let eval = |probe: usize, index: usize, delta: f64| -> Result<f64, TensorError> {
        let leaves: Vec<Tensor<f64>> = inputs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut data = p.data.clone();
                if i == probe {
                    data[index] += delta;
                }
                Tensor::from_vec(&p.shape, data)
            })
            .collect::<Result<_, _>>()?;
        f(&leaves)?.item()
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_input: inputs.first().map(|p| p.name.clone()).unwrap_or_default(),
        worst_index: 0,
        tolerance: tol,
        pass: true,
    };
    for (i, probe) in inputs.iter().enumerate() {
        for j in 0..probe.data.len() {
            let plus = eval(i, j, eps)?;
            let minus = eval(i, j, -eps)?;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[i][j];
            let denom = a.abs().max(numeric.abs()).max(ABS_FLOOR);
            let rel = (a - numeric).abs() / denom;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_input = probe.name.clone();
                report.worst_index = j;
            }
        }
    }
    report.pass = report.max_rel_err <= tol;
    Ok(report)
}

/// [`grad_check`] with the standard step and tolerance.
pub fn grad_check_default<F>(inputs: &[ProbeInput], f: F) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>, TensorError>,
{
    grad_check(inputs, f, DEFAULT_EPS, DEFAULT_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_passes() {
        let inputs = vec![ProbeInput::new("x", &[3], vec![0.5, -1.25, 2.0])];
        let report = grad_check_default(&inputs, |leaves| leaves[0].squared_l2_norm()).unwrap();
        assert!(report.pass, "max_rel_err = {}", report.max_rel_err);
    }

    #[test]
    fn two_input_product_passes() {
        let inputs = vec![
            ProbeInput::new("a", &[2, 2], vec![0.3, -0.7, 1.1, 0.9]),
            ProbeInput::new("b", &[2, 2], vec![-0.2, 0.8, 0.4, -1.3]),
        ];
        let report = grad_check_default(&inputs, |leaves| leaves[0].matmul(&leaves[1])?.squared_l2_norm()).unwrap();
        assert!(report.pass, "max_rel_err = {}", report.max_rel_err);
    }

    #[test]
    fn deliberately_wrong_backward_fails() {
        let inputs = vec![ProbeInput::new("x", &[2], vec![0.4, -0.9])];
        let report = grad_check_default(&inputs, |leaves| {
            leaves[0].broken_scale(2.0)?.squared_l2_norm()
        })
        .unwrap();
        assert!(!report.pass);
        assert!(report.max_rel_err > 0.01);
        assert_eq!(report.worst_input, "x");
    }

    #[test]
    fn zero_gradient_does_not_blow_up_relative_error() {
        // loss = sum(relu(x)) with all-negative x: gradient is exactly zero
        // both ways; the absolute floor keeps the ratio finite.
        let inputs = vec![ProbeInput::new("x", &[3], vec![-1.0, -2.0, -0.5])];
        let report = grad_check_default(&inputs, |leaves| leaves[0].relu()?.sum(None)).unwrap();
        assert!(report.pass);
        assert_eq!(report.max_rel_err, 0.0);
    }
}
