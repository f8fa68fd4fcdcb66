//! Central finite-difference gradient checking in 64-bit.

use super::{Result, Tensor, TensorError};

/// Denominator floor for relative errors so that coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, coordinate)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Checks the reverse-mode gradient of a scalar function against central
/// differences `(f(x+h) - f(x-h)) / 2h`, one coordinate at a time.
///
/// `f` must be deterministic. Inputs are re-wrapped as fresh leaves so the
/// caller's tensors are never mutated.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let leaves: Vec<Tensor<f64>> = inputs
        .iter()
        .map(|t| Tensor::param(t.shape(), t.data().to_vec()))
        .collect::<Result<_>>()?;
    let loss = f(&leaves)?;
    if loss.numel() != 1 {
        return Err(TensorError::NonScalarLoss(loss.shape().to_vec()));
    }
    let grads = loss.leaf_gradients()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|leaf| {
            grads
                .iter()
                .find(|(t, _)| t.id() == leaf.id())
                .map(|(_, g)| g.clone())
                .unwrap_or_else(|| vec![0.0; leaf.numel()])
        })
        .collect();
    compare_gradients(
        |xs| f(xs).map(|l| l.data()[0]),
        inputs,
        &analytic,
        h,
        tol,
    )
}

/// Compares caller-supplied gradients with central differences of `f`.
pub fn compare_gradients<F>(
    f: F,
    inputs: &[Tensor<f64>],
    analytic: &[Vec<f64>],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<f64>,
{
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
        tolerance: tol,
        passed: true,
    };
    let mut current: Vec<Tensor<f64>> = inputs.iter().map(Tensor::detach).collect();
    for (i, input) in inputs.iter().enumerate() {
        if analytic[i].len() != input.numel() {
            return Err(TensorError::DataLength {
                shape: input.shape().to_vec(),
                expected: input.numel(),
                actual: analytic[i].len(),
            });
        }
        let mut data = input.data().to_vec();
        for j in 0..data.len() {
            let orig = data[j];
            data[j] = orig + h;
            current[i] = Tensor::new(input.shape(), data.clone())?;
            let plus = f(&current)?;
            data[j] = orig - h;
            current[i] = Tensor::new(input.shape(), data.clone())?;
            let minus = f(&current)?;
            data[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic[i][j], numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || err.is_nan() || report.worst.is_none() {
                report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
                report.worst = Some((i, j));
            }
        }
        current[i] = input.detach();
    }
    report.passed = report.max_rel_error < tol && report.max_rel_error.is_finite();
    Ok(report)
}
