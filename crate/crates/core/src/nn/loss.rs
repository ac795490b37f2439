use super::ops::log_sum_exp;
use super::params::Mat;
use crate::{Error, Result};

fn check(logits: &Mat, targets: &[u32]) -> Result<()> {
    if logits.nrows() != targets.len() {
        return Err(Error::LengthMismatch {
            left: logits.nrows(),
            right: targets.len(),
        });
    }
    if let Some(&t) = targets.iter().find(|&&t| t as usize >= logits.ncols()) {
        return Err(Error::InvalidArgument(format!(
            "target id {t} outside vocabulary of {}",
            logits.ncols()
        )));
    }
    Ok(())
}

/// Mean token negative log-likelihood of `targets` under row-wise softmax.
pub fn cross_entropy(logits: &Mat, targets: &[u32]) -> Result<f64> {
    check(logits, targets)?;
    if targets.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(targets)
        .map(|(row, &t)| log_sum_exp(row) - row[t as usize])
        .sum();
    Ok(total / targets.len() as f64)
}

/// Summed negative log-likelihood and its gradient with respect to the
/// logits, scaled by `scale`.
pub fn cross_entropy_grad(logits: &Mat, targets: &[u32], scale: f64) -> Result<(f64, Mat)> {
    check(logits, targets)?;
    let mut grad = logits.clone();
    let mut total = 0.0;
    for (mut row, &t) in grad.rows_mut().into_iter().zip(targets) {
        let lse = log_sum_exp(row.view());
        total += lse - row[t as usize];
        row.mapv_inplace(|x| (x - lse).exp() * scale);
        row[t as usize] -= scale;
    }
    Ok((total, grad))
}
