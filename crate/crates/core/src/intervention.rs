//! Causal edits to tuned checkpoints: scaling or removing individual
//! singular directions, rank-one injections, and low-rank adapter merging.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::spectral::ModelIntruderReport;
use crate::tensor::{svd, Matrix};

/// Default multiplier grid for scaling sweeps.
pub const DEFAULT_LAMBDA_GRID: [f64; 7] = [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0];

/// Low-rank adapter: update `(alpha / rank) * b * a` over a frozen base.
#[derive(Debug, Clone)]
pub struct LoraAdapter {
    b: Matrix,
    a: Matrix,
    alpha: f64,
    rank: usize,
}

impl LoraAdapter {
    /// `b` is `m x r`, `a` is `r x n`; `r` must not exceed `min(m, n)`.
    pub fn new(b: Matrix, a: Matrix, alpha: f64) -> Result<Self> {
        if b.cols() != a.rows() {
            return Err(Error::invalid(format!(
                "inner dimensions disagree: b is {}x{}, a is {}x{}",
                b.rows(),
                b.cols(),
                a.rows(),
                a.cols()
            )));
        }
        let rank = b.cols();
        if rank > b.rows().min(a.cols()) {
            return Err(Error::invalid(format!(
                "rank {rank} exceeds min({}, {})",
                b.rows(),
                a.cols()
            )));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
        }
        Ok(Self { b, a, alpha, rank })
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// The merged update `(alpha / rank) * b * a`.
    pub fn update(&self) -> Matrix {
        self.b.matmul(&self.a).scale(self.scaling())
    }

    /// Replaces `b`, keeping its shape.
    pub fn set_b(&mut self, b: Matrix) -> Result<()> {
        if (b.rows(), b.cols()) != (self.b.rows(), self.b.cols()) {
            return Err(Error::invalid(format!(
                "b must stay {}x{}",
                self.b.rows(),
                self.b.cols()
            )));
        }
        self.b = b;
        Ok(())
    }

    /// Replaces `a`, keeping its shape.
    pub fn set_a(&mut self, a: Matrix) -> Result<()> {
        if (a.rows(), a.cols()) != (self.a.rows(), self.a.cols()) {
            return Err(Error::invalid(format!(
                "a must stay {}x{}",
                self.a.rows(),
                self.a.cols()
            )));
        }
        self.a = a;
        Ok(())
    }
}

/// Merges an adapter into its base weights: `base + (alpha / rank) * b * a`.
pub fn merge_adapter(base: &Matrix, adapter: &LoraAdapter) -> Result<Matrix> {
    if (adapter.b.rows(), adapter.a.cols()) != (base.rows(), base.cols()) {
        return Err(Error::invalid(format!(
            "adapter produces a {}x{} update, base is {}x{}",
            adapter.b.rows(),
            adapter.a.cols(),
            base.rows(),
            base.cols()
        )));
    }
    Ok(base.add(&adapter.update()))
}

/// Returns `tuned + (lambda - 1) * sigma_i * u_i v_i^T` for the `i`-th
/// singular triplet of `tuned`. `lambda = 1` returns the input bitwise
/// unchanged; `lambda = 0` removes the direction.
pub fn scale_direction(tuned: &Matrix, index: usize, lambda: f64) -> Result<Matrix> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!(
            "lambda must be finite and non-negative, got {lambda}"
        )));
    }
    let p = tuned.rows().min(tuned.cols());
    if index >= p {
        return Err(Error::invalid(format!(
            "direction index {index} out of range for a {}x{} matrix",
            tuned.rows(),
            tuned.cols()
        )));
    }
    if lambda == 1.0 {
        return Ok(tuned.clone());
    }
    let decomp = svd(tuned)?;
    let u = decomp.left.column(index);
    let v = decomp.right_t.row(index);
    let outer = Matrix::outer(&u, v);
    Ok(tuned.add_scaled(&outer, (lambda - 1.0) * decomp.values[index]))
}

/// Per-tensor scaling targets: one `(direction index, lambda)` entry for each
/// tensor to edit. Serializes as a JSON map `name -> {index, lambda}`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScalingPlan {
    entries: BTreeMap<String, PlanEntry>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PlanEntry {
    pub index: usize,
    pub lambda: f64,
}

impl ScalingPlan {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, tensor: impl Into<String>, index: usize, lambda: f64) {
        self.entries.insert(tensor.into(), PlanEntry { index, lambda });
    }

    pub fn get(&self, tensor: &str) -> Option<&PlanEntry> {
        self.entries.get(tensor)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &PlanEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        serde_json::from_str(json)
            .map_err(|e| Error::invalid(format!("unreadable scaling plan: {e}")))
    }
}

/// Builds a plan targeting, in each matrix that has at least one intruder,
/// the intruder with the largest singular value (ties break toward the
/// smaller rank index). Matrices without intruders are omitted.
pub fn select_top_intruders(report: &ModelIntruderReport, lambda: f64) -> ScalingPlan {
    let mut plan = ScalingPlan::new();
    for matrix in &report.matrices {
        let top = matrix.intruders.iter().max_by(|a, b| {
            a.sigma
                .partial_cmp(&b.sigma)
                .expect("sigmas are finite")
                // ties: prefer the smaller rank, i.e. treat it as larger
                .then_with(|| b.rank.cmp(&a.rank))
        });
        if let Some(hit) = top {
            plan.set(matrix.tensor.clone(), hit.rank, lambda);
        }
    }
    plan
}

/// Applies a scaling plan, copying unlisted tensors verbatim.
pub fn apply_plan(tuned: &Checkpoint, plan: &ScalingPlan) -> Result<Checkpoint> {
    for (name, _) in plan.iter() {
        if tuned.get(name).is_none() {
            return Err(Error::Mismatch(format!(
                "plan targets tensor `{name}` not present in the checkpoint"
            )));
        }
    }
    let mut edited = Checkpoint::new();
    for (key, value) in tuned.metadata() {
        edited.set_metadata(key.clone(), value.clone());
    }
    for (name, matrix) in tuned.iter() {
        let new_matrix = match plan.get(name) {
            Some(entry) => scale_direction(matrix, entry.index, entry.lambda)?,
            None => matrix.clone(),
        };
        edited.insert(name, new_matrix)?;
    }
    Ok(edited)
}

/// Returns `w + lambda * v v^T` for a square `w` and unit vector `v`.
pub fn inject_rank_one(w: &Matrix, v: &[f64], lambda: f64) -> Result<Matrix> {
    if w.rows() != w.cols() {
        return Err(Error::invalid(format!(
            "rank-one injection needs a square matrix, got {}x{}",
            w.rows(),
            w.cols()
        )));
    }
    if v.len() != w.rows() {
        return Err(Error::invalid(format!(
            "vector length {} does not match matrix size {}",
            v.len(),
            w.rows()
        )));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!("vector norm {norm} is not 1")));
    }
    if !lambda.is_finite() {
        return Err(Error::invalid("lambda must be finite"));
    }
    Ok(w.add_scaled(&Matrix::outer(v, v), lambda))
}
