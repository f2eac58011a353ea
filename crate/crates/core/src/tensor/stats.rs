use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Maximum absolute cosine similarity between `v` and the columns of `basis`,
/// together with the smallest column index attaining it.
pub fn max_abs_cosine(v: &[f64], basis: &Matrix) -> Result<(f64, usize)> {
    if v.len() != basis.rows() {
        return Err(Error::invalid(format!(
            "vector length {} does not match basis row count {}",
            v.len(),
            basis.rows()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("vector has non-finite entries"));
    }
    let v_norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if v_norm == 0.0 {
        return Err(Error::invalid("zero vector has no direction"));
    }

    let mut best = (f64::NEG_INFINITY, 0);
    for j in 0..basis.cols() {
        let mut dot = 0.0;
        let mut col_sq = 0.0;
        for (i, &vi) in v.iter().enumerate() {
            let b = basis.get(i, j);
            dot += vi * b;
            col_sq += b * b;
        }
        if col_sq == 0.0 {
            return Err(Error::invalid(format!("basis column {j} is zero")));
        }
        let cos = (dot.abs() / (v_norm * col_sq.sqrt())).min(1.0);
        if cos > best.0 {
            best = (cos, j);
        }
    }
    Ok(best)
}

/// Effective rank of a non-negative spectrum: the exponential of the Shannon
/// entropy of trace-normalized values. Zero values contribute nothing.
pub fn effective_rank(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("empty spectrum"));
    }
    if values.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::invalid("spectrum must be finite and non-negative"));
    }
    let total: f64 = values.iter().sum();
    if total == 0.0 {
        return Err(Error::invalid("all-zero spectrum has no effective rank"));
    }
    let entropy: f64 = values
        .iter()
        .filter(|&&s| s > 0.0)
        .map(|&s| {
            let p = s / total;
            -p * p.ln()
        })
        .sum();
    Ok(entropy.exp())
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(Error::invalid("need at least 3 observations"));
    }
    if xs.iter().chain(ys).any(|x| !x.is_finite()) {
        return Err(Error::invalid("observations must be finite"));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);

    let n = rx.len() as f64;
    let mean_x = rx.iter().sum::<f64>() / n;
    let mean_y = ry.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den_x = 0.0;
    let mut den_y = 0.0;
    for (x, y) in rx.iter().zip(&ry) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        num += dx * dy;
        den_x += dx * dx;
        den_y += dy * dy;
    }
    if den_x == 0.0 || den_y == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "an argument has zero rank variance".into(),
        ));
    }
    Ok((num / (den_x * den_y).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; runs of equal values share the average of their positions.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite values"));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share rank mean of (i+1)..=(j+1)
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}
