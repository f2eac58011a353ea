//! Intruder-dimension detection and the comparisons built on it: threshold
//! sweeps, base-vs-tuned similarity grids, traces of singular directions
//! across training snapshots, and rank correlation of intruder counts with
//! behavioral metrics.
//!
//! A tuned singular vector is an intruder when its maximum absolute cosine
//! similarity against *all* singular vectors of the base matrix falls below
//! a threshold. Only the top `k` tuned vectors (by singular value) are
//! examined; the base side is never truncated.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointPair};
use crate::error::{Error, Result};
use crate::tensor::{max_abs_cosine, spearman, svd, Matrix};

pub const DEFAULT_EPSILON: f64 = 0.5;
pub const DEFAULT_K: usize = 10;

/// Detection thresholds: cosine cutoff and number of tuned vectors examined.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScanConfig {
    /// Cosine similarity threshold in (0, 1).
    pub epsilon: f64,
    /// Number of top tuned singular vectors to examine.
    pub k: usize,
    /// Compare right singular vectors instead of left ones.
    #[serde(default)]
    pub scan_right: bool,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            k: DEFAULT_K,
            scan_right: false,
        }
    }
}

impl ScanConfig {
    pub fn new(epsilon: f64, k: usize) -> Result<Self> {
        let cfg = Self {
            epsilon,
            k,
            scan_right: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        Ok(())
    }
}

/// One flagged tuned singular vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntruderHit {
    /// Rank of the vector in the tuned spectrum (0 = largest singular value).
    pub rank: usize,
    /// Maximum absolute cosine against all base singular vectors.
    pub max_cos: f64,
    /// Singular value paired with the vector.
    pub sigma: f64,
}

/// Scan result for a single weight matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixIntruderReport {
    /// Tensor name; empty for direct single-matrix scans.
    pub tensor: String,
    pub n_intruders: usize,
    /// Flagged vectors in increasing rank order.
    pub intruders: Vec<IntruderHit>,
    /// Number of tuned vectors actually examined.
    pub k_used: usize,
    /// True when `k` exceeded the matrix dimension and was clamped.
    pub k_clamped: bool,
}

/// Scan result for a whole checkpoint pair, matrices in lexicographic order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelIntruderReport {
    pub epsilon: f64,
    pub k: usize,
    pub matrices: Vec<MatrixIntruderReport>,
    pub total: usize,
}

/// Absolute cosines between the top base and top tuned singular vectors.
#[derive(Debug, Clone)]
pub struct SimilarityGrid {
    /// Tensor name; empty for direct single-matrix grids.
    pub tensor: String,
    /// `k0 x kt`; entry `(i, j)` compares base rank `i` with tuned rank `j`.
    pub grid: Matrix,
}

/// `(max_cos, sigma)` per examined tuned rank, the raw material every scan
/// and sweep counts against.
fn rank_profile(
    base: &Matrix,
    tuned: &Matrix,
    k: usize,
    scan_right: bool,
) -> Result<Vec<(f64, f64)>> {
    let base_svd = svd(base)?;
    let tuned_svd = svd(tuned)?;
    let (basis, vectors) = if scan_right {
        (base_svd.right_t.transpose(), tuned_svd.right_t.transpose())
    } else {
        (base_svd.left, tuned_svd.left)
    };
    let mut profile = Vec::with_capacity(k);
    for rank in 0..k {
        let vector = vectors.column(rank);
        let (max_cos, _) = max_abs_cosine(&vector, &basis)?;
        profile.push((max_cos, tuned_svd.values[rank]));
    }
    Ok(profile)
}

fn check_same_shape(base: &Matrix, tuned: &Matrix) -> Result<()> {
    if (base.rows(), base.cols()) != (tuned.rows(), tuned.cols()) {
        return Err(Error::invalid(format!(
            "shape mismatch: base {}x{}, tuned {}x{}",
            base.rows(),
            base.cols(),
            tuned.rows(),
            tuned.cols()
        )));
    }
    Ok(())
}

/// Flags intruders among the top `cfg.k` tuned singular vectors of one matrix.
///
/// `cfg.k` must not exceed `min(rows, cols)`; model-level scans clamp instead.
pub fn count_intruders(
    base: &Matrix,
    tuned: &Matrix,
    cfg: &ScanConfig,
) -> Result<MatrixIntruderReport> {
    cfg.validate()?;
    check_same_shape(base, tuned)?;
    let p = base.rows().min(base.cols());
    if cfg.k > p {
        return Err(Error::invalid(format!(
            "k = {} out of range for a {}x{} matrix",
            cfg.k,
            base.rows(),
            base.cols()
        )));
    }
    let profile = rank_profile(base, tuned, cfg.k, cfg.scan_right)?;
    Ok(report_from_profile(String::new(), &profile, cfg.epsilon, cfg.k, false))
}

fn report_from_profile(
    tensor: String,
    profile: &[(f64, f64)],
    epsilon: f64,
    k_used: usize,
    k_clamped: bool,
) -> MatrixIntruderReport {
    let intruders: Vec<IntruderHit> = profile
        .iter()
        .enumerate()
        .filter(|(_, (max_cos, _))| *max_cos < epsilon)
        .map(|(rank, &(max_cos, sigma))| IntruderHit {
            rank,
            max_cos,
            sigma,
        })
        .collect();
    MatrixIntruderReport {
        tensor,
        n_intruders: intruders.len(),
        intruders,
        k_used,
        k_clamped,
    }
}

/// Per-matrix rank profiles for a validated pair, `k` clamped per matrix.
fn pair_profiles(
    pair: &CheckpointPair,
    k: usize,
    scan_right: bool,
) -> Result<Vec<(String, Vec<(f64, f64)>, bool)>> {
    let mut out = Vec::with_capacity(pair.base().len());
    for (name, base_m) in pair.base().iter() {
        let tuned_m = pair.tuned().get(name).expect("pair is validated");
        let p = base_m.rows().min(base_m.cols());
        let k_used = k.min(p);
        let profile = rank_profile(base_m, tuned_m, k_used, scan_right)?;
        out.push((name.to_string(), profile, k_used < k));
    }
    Ok(out)
}

/// Scans every matrix of a pair and sums the intruder counts.
pub fn scan_pair(pair: &CheckpointPair, cfg: &ScanConfig) -> Result<ModelIntruderReport> {
    cfg.validate()?;
    let mut matrices = Vec::new();
    for (name, profile, clamped) in pair_profiles(pair, cfg.k, cfg.scan_right)? {
        let k_used = profile.len();
        matrices.push(report_from_profile(name, &profile, cfg.epsilon, k_used, clamped));
    }
    let total = matrices.iter().map(|m| m.n_intruders).sum();
    Ok(ModelIntruderReport {
        epsilon: cfg.epsilon,
        k: cfg.k,
        matrices,
        total,
    })
}

/// Model-level intruder totals across a grid of thresholds.
pub fn epsilon_sweep(
    pair: &CheckpointPair,
    epsilons: &[f64],
    k: usize,
) -> Result<Vec<(f64, usize)>> {
    if epsilons.is_empty() {
        return Err(Error::invalid("epsilon grid is empty"));
    }
    for window in epsilons.windows(2) {
        if window[1] <= window[0] {
            return Err(Error::invalid("epsilon grid must be strictly increasing"));
        }
    }
    if epsilons.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return Err(Error::invalid("epsilon grid values must lie in (0, 1)"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let profiles = pair_profiles(pair, k, false)?;
    Ok(epsilons
        .iter()
        .map(|&eps| {
            let total = profiles
                .iter()
                .flat_map(|(_, profile, _)| profile)
                .filter(|(max_cos, _)| *max_cos < eps)
                .count();
            (eps, total)
        })
        .collect())
}

/// Model-level intruder totals across a grid of examined-vector counts.
pub fn k_sweep(pair: &CheckpointPair, ks: &[usize], epsilon: f64) -> Result<Vec<(usize, usize)>> {
    if ks.is_empty() {
        return Err(Error::invalid("k grid is empty"));
    }
    for window in ks.windows(2) {
        if window[1] <= window[0] {
            return Err(Error::invalid("k grid must be strictly increasing"));
        }
    }
    if ks[0] == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid("epsilon must lie in (0, 1)"));
    }
    let k_max = *ks.last().expect("nonempty");
    for (name, m) in pair.base().iter() {
        let p = m.rows().min(m.cols());
        if k_max > p {
            return Err(Error::invalid(format!(
                "k = {k_max} exceeds min dimension {p} of tensor `{name}`"
            )));
        }
    }
    let profiles = pair_profiles(pair, k_max, false)?;
    Ok(ks
        .iter()
        .map(|&k| {
            let total = profiles
                .iter()
                .flat_map(|(_, profile, _)| profile.iter().take(k))
                .filter(|(max_cos, _)| *max_cos < epsilon)
                .count();
            (k, total)
        })
        .collect())
}

/// Absolute cosines between the top `k0` base and top `kt` tuned left
/// singular vectors.
pub fn similarity_grid(
    base: &Matrix,
    tuned: &Matrix,
    k0: usize,
    kt: usize,
) -> Result<SimilarityGrid> {
    check_same_shape(base, tuned)?;
    let p = base.rows().min(base.cols());
    if k0 == 0 || kt == 0 || k0 > p || kt > p {
        return Err(Error::invalid(format!(
            "grid size {k0}x{kt} out of range for a {}x{} matrix",
            base.rows(),
            base.cols()
        )));
    }
    let base_svd = svd(base)?;
    let tuned_svd = svd(tuned)?;
    let grid = Matrix::from_fn(k0, kt, |i, j| {
        let bi = base_svd.left.column(i);
        let tj = tuned_svd.left.column(j);
        let dot: f64 = bi.iter().zip(&tj).map(|(a, b)| a * b).sum();
        let nb: f64 = bi.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nt: f64 = tj.iter().map(|x| x * x).sum::<f64>().sqrt();
        (dot.abs() / (nb * nt)).min(1.0)
    });
    Ok(SimilarityGrid {
        tensor: String::new(),
        grid,
    })
}

/// One snapshot's view of the tracked tuned ranks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: u64,
    /// Max absolute cosine to the base vectors, aligned with `ranks`.
    pub max_cos: Vec<f64>,
    /// Singular values, aligned with `ranks`.
    pub sigmas: Vec<f64>,
}

/// Evolution of tuned singular directions across ordered snapshots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolutionTrace {
    pub tensor: String,
    pub ranks: Vec<usize>,
    pub points: Vec<TracePoint>,
}

/// Tracks `ranks` of `tensor` across snapshots, comparing each against the
/// base checkpoint. Snapshot steps come from `step` metadata when present,
/// falling back to ordinal position.
pub fn evolution_trace(
    snapshots: &[Checkpoint],
    tensor: &str,
    ranks: &[usize],
    base: &Checkpoint,
) -> Result<EvolutionTrace> {
    if snapshots.len() < 2 {
        return Err(Error::invalid("need at least 2 snapshots"));
    }
    if ranks.is_empty() {
        return Err(Error::invalid("no ranks to track"));
    }
    let base_m = base
        .get(tensor)
        .ok_or_else(|| Error::Mismatch(format!("tensor `{tensor}` missing from base")))?;
    let p = base_m.rows().min(base_m.cols());
    if let Some(&bad) = ranks.iter().find(|&&r| r >= p) {
        return Err(Error::invalid(format!(
            "tracked rank {bad} out of range for tensor `{tensor}` (min dimension {p})"
        )));
    }
    let base_svd = svd(base_m)?;

    let mut points = Vec::with_capacity(snapshots.len());
    let mut last_step = None;
    for (ordinal, snapshot) in snapshots.iter().enumerate() {
        let m = snapshot.get(tensor).ok_or_else(|| {
            Error::Mismatch(format!("tensor `{tensor}` missing from snapshot {ordinal}"))
        })?;
        if (m.rows(), m.cols()) != (base_m.rows(), base_m.cols()) {
            return Err(Error::Mismatch(format!(
                "tensor `{tensor}` changed shape in snapshot {ordinal}"
            )));
        }
        let step = match snapshot.metadata().get("step") {
            Some(raw) => raw.parse::<u64>().map_err(|_| {
                Error::invalid(format!("snapshot {ordinal} has unparseable step `{raw}`"))
            })?,
            None => ordinal as u64,
        };
        if let Some(prev) = last_step {
            if step <= prev {
                return Err(Error::invalid(format!(
                    "snapshot steps must be strictly increasing ({prev} then {step})"
                )));
            }
        }
        last_step = Some(step);

        let snap_svd = svd(m)?;
        let mut max_cos = Vec::with_capacity(ranks.len());
        let mut sigmas = Vec::with_capacity(ranks.len());
        for &rank in ranks {
            let vector = snap_svd.left.column(rank);
            let (mc, _) = max_abs_cosine(&vector, &base_svd.left)?;
            max_cos.push(mc);
            sigmas.push(snap_svd.values[rank]);
        }
        points.push(TracePoint {
            step,
            max_cos,
            sigmas,
        });
    }
    Ok(EvolutionTrace {
        tensor: tensor.to_string(),
        ranks: ranks.to_vec(),
        points,
    })
}

/// Spearman correlation between per-run intruder totals and a metric.
pub fn correlate(totals: &[usize], metric: &[f64]) -> Result<f64> {
    let xs: Vec<f64> = totals.iter().map(|&t| t as f64).collect();
    spearman(&xs, metric)
}

impl ModelIntruderReport {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per matrix; list-valued cells are `;`-joined.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("tensor,n_intruders,indices,cosines,sigmas\n");
        for m in &self.matrices {
            let indices = join_with(m.intruders.iter().map(|h| h.rank.to_string()));
            let cosines = join_with(m.intruders.iter().map(|h| h.max_cos.to_string()));
            let sigmas = join_with(m.intruders.iter().map(|h| h.sigma.to_string()));
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                csv_field(&m.tensor),
                m.n_intruders,
                indices,
                cosines,
                sigmas
            ));
        }
        out
    }
}

impl SimilarityGrid {
    /// Plain numeric CSV; row `i` is base rank `i`, column `j` tuned rank `j`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for i in 0..self.grid.rows() {
            let row: Vec<String> = (0..self.grid.cols())
                .map(|j| self.grid.get(i, j).to_string())
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn join_with(items: impl Iterator<Item = String>) -> String {
    items.collect::<Vec<_>>().join(";")
}

/// Quotes a CSV field when it contains a delimiter, quote, or newline.
pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
