//! Alignment, uniformity and Spearman rank correlation.

use crate::error::{Error, Result};
use crate::tensor::{norm, Matrix};

/// Rows passed to alignment and uniformity must have unit norm within this tolerance.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

fn check_unit_rows(m: &Matrix) -> Result<()> {
    for (row, values) in m.row_iter().enumerate() {
        let n = norm(values);
        if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::NotNormalized { row, norm: n });
        }
    }
    Ok(())
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean squared distance between row `i` of `x` and row `i` of `y`.
pub fn alignment_loss(x: &Matrix, y: &Matrix) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::Shape(format!(
            "alignment pairs of shape {:?} and {:?}",
            x.shape(),
            y.shape()
        )));
    }
    if x.rows() == 0 {
        return Err(Error::InsufficientData("alignment needs at least one pair".into()));
    }
    check_unit_rows(x)?;
    check_unit_rows(y)?;
    let total: f64 = x
        .row_iter()
        .zip(y.row_iter())
        .map(|(a, b)| squared_distance(a, b))
        .sum();
    Ok(total / x.rows() as f64)
}

/// `log` of the mean Gaussian potential `exp(−2‖x−y‖²)` over all unordered distinct pairs of rows.
pub fn uniformity_loss(points: &Matrix) -> Result<f64> {
    let n = points.rows();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "uniformity needs at least 2 points, got {n}"
        )));
    }
    check_unit_rows(points)?;
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            total += (-2.0 * squared_distance(points.row(i), points.row(j))).exp();
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok((total / pairs).ln())
}

/// 1-based ranks, ties sharing the average of the positions they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let rank = (start + end + 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "one of the inputs is constant".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ: Pearson correlation of the average-rank vectors.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "spearman on vectors of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData(
            "spearman needs at least 2 observations".into(),
        ));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spearman input contains NaN or infinity".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}
