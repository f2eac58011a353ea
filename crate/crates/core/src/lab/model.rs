use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::lab::task::{Batch, Dataset};
use crate::tensor::{Matrix, SeededRng};

/// Trainable body: two stacked linear layers with a ReLU after each,
/// `w1` is `hidden x input_dim`, `w2` is `hidden x hidden`. Per-task
/// classification heads sit on top and are excluded from spectral analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub w1: Matrix,
    pub w2: Matrix,
}

impl Body {
    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    /// Random initialization with per-layer scale `1/sqrt(fan_in)`.
    pub fn random(input_dim: usize, hidden_dim: usize, rng: &mut SeededRng) -> Body {
        let w1 = rng.normal_matrix(hidden_dim, input_dim, 1.0 / (input_dim as f64).sqrt());
        let w2 = rng.normal_matrix(hidden_dim, hidden_dim, 1.0 / (hidden_dim as f64).sqrt());
        Body { w1, w2 }
    }

    /// Hidden features `relu(w2 relu(w1 x))` for column-wise inputs.
    pub fn features(&self, inputs: &Matrix) -> Matrix {
        let z1 = self.w1.matmul(inputs).map(relu);
        self.w2.matmul(&z1).map(relu)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        c.insert("w1", self.w1.clone()).expect("fresh checkpoint");
        c.insert("w2", self.w2.clone()).expect("fresh checkpoint");
        c
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Body> {
        let w1 = ckpt
            .get("w1")
            .ok_or_else(|| Error::Mismatch("checkpoint has no tensor `w1`".into()))?
            .clone();
        let w2 = ckpt
            .get("w2")
            .ok_or_else(|| Error::Mismatch("checkpoint has no tensor `w2`".into()))?
            .clone();
        if w2.rows() != w1.rows() || w2.cols() != w1.rows() {
            return Err(Error::Mismatch(format!(
                "body shapes disagree: w1 is {}x{}, w2 is {}x{}",
                w1.rows(),
                w1.cols(),
                w2.rows(),
                w2.cols()
            )));
        }
        Ok(Body { w1, w2 })
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Gradients of the mean cross-entropy with respect to every trainable
/// matrix of the two-layer body plus head.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w1: Matrix,
    pub w2: Matrix,
    pub head: Matrix,
}

pub(crate) struct ForwardPass {
    a1: Matrix,
    z1: Matrix,
    a2: Matrix,
    z2: Matrix,
    probs: Matrix,
    pub loss: f64,
}

/// Forward pass caching pre-activations for the backward pass.
pub(crate) fn forward(w1: &Matrix, w2: &Matrix, head: &Matrix, batch: &Batch) -> ForwardPass {
    let a1 = w1.matmul(&batch.inputs);
    let z1 = a1.map(relu);
    let a2 = w2.matmul(&z1);
    let z2 = a2.map(relu);
    let logits = head.matmul(&z2);
    let (probs, loss) = softmax_cross_entropy(&logits, &batch.labels);
    ForwardPass {
        a1,
        z1,
        a2,
        z2,
        probs,
        loss,
    }
}

/// Mean cross-entropy over columns plus the softmax probabilities.
fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> (Matrix, f64) {
    let classes = logits.rows();
    let batch = logits.cols();
    debug_assert_eq!(batch, labels.len());
    let mut probs = Matrix::zeros(classes, batch);
    let mut loss = 0.0;
    for j in 0..batch {
        let col: Vec<f64> = (0..classes).map(|i| logits.get(i, j)).collect();
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = col.iter().map(|&x| (x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for i in 0..classes {
            probs.set(i, j, exps[i] / total);
        }
        loss -= (exps[labels[j]] / total).ln();
    }
    (probs, loss / batch as f64)
}

/// Backward pass for the mean cross-entropy; all gradients are taken at the
/// weights used in `pass`.
pub(crate) fn backward(
    w2: &Matrix,
    head: &Matrix,
    batch: &Batch,
    pass: &ForwardPass,
) -> Gradients {
    let classes = head.rows();
    let n = batch.labels.len() as f64;
    let mut dlogits = pass.probs.clone();
    for (j, &label) in batch.labels.iter().enumerate() {
        dlogits.set(label, j, dlogits.get(label, j) - 1.0);
    }
    let dlogits = dlogits.scale(1.0 / n);
    debug_assert_eq!(dlogits.rows(), classes);

    let g_head = dlogits.matmul_nt(&pass.z2);
    let dz2 = head.matmul_tn(&dlogits);
    let da2 = mask_by_positive(&dz2, &pass.a2);
    let g_w2 = da2.matmul_nt(&pass.z1);
    let dz1 = w2.matmul_tn(&da2);
    let da1 = mask_by_positive(&dz1, &pass.a1);
    let g_w1 = da1.matmul_nt(&batch.inputs);

    Gradients {
        w1: g_w1,
        w2: g_w2,
        head: g_head,
    }
}

/// Zeroes entries of `grad` where the matching pre-activation is not positive.
fn mask_by_positive(grad: &Matrix, preact: &Matrix) -> Matrix {
    Matrix::from_fn(grad.rows(), grad.cols(), |i, j| {
        if preact.get(i, j) > 0.0 {
            grad.get(i, j)
        } else {
            0.0
        }
    })
}

/// Deterministic head fit: full-batch gradient descent on the convex
/// softmax cross-entropy from a zero initialization, body frozen.
#[derive(Debug, Clone, Copy)]
pub struct HeadFitConfig {
    pub steps: usize,
    pub lr: f64,
}

impl Default for HeadFitConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            lr: 0.5,
        }
    }
}

/// Fits a fresh `classes x hidden` head on the frozen body.
pub fn fit_head(body: &Body, data: &Dataset, classes: usize, cfg: &HeadFitConfig) -> Matrix {
    let features = body.features(&data.inputs);
    let n = data.len() as f64;
    let mut head = Matrix::zeros(classes, body.hidden_dim());
    for _ in 0..cfg.steps {
        let logits = head.matmul(&features);
        let (probs, _) = softmax_cross_entropy(&logits, &data.labels);
        let mut dlogits = probs;
        for (j, &label) in data.labels.iter().enumerate() {
            dlogits.set(label, j, dlogits.get(label, j) - 1.0);
        }
        let grad = dlogits.scale(1.0 / n).matmul_nt(&features);
        head.add_scaled_inplace(&grad, -cfg.lr);
    }
    head
}

/// Fraction of samples whose arg-max logit matches the label
/// (ties resolve to the smallest class index).
pub fn accuracy(body: &Body, head: &Matrix, data: &Dataset) -> f64 {
    let logits = head.matmul(&body.features(&data.inputs));
    let mut correct = 0usize;
    for (j, &label) in data.labels.iter().enumerate() {
        let mut best = (0usize, f64::NEG_INFINITY);
        for i in 0..logits.rows() {
            let v = logits.get(i, j);
            if v > best.1 {
                best = (i, v);
            }
        }
        if best.0 == label {
            correct += 1;
        }
    }
    correct as f64 / data.len() as f64
}

/// Mean cross-entropy of the frozen body and head on a dataset.
pub fn mean_loss(body: &Body, head: &Matrix, data: &Dataset) -> f64 {
    let logits = head.matmul(&body.features(&data.inputs));
    softmax_cross_entropy(&logits, &data.labels).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lab::task::{make_task, TaskSpec};

    #[test]
    fn softmax_probabilities_are_normalized() {
        let logits = Matrix::from_rows(&[vec![2.0, -1.0], vec![0.5, 3.0], vec![-1.0, 0.0]]).unwrap();
        let (probs, loss) = softmax_cross_entropy(&logits, &[0, 1]);
        for j in 0..2 {
            let total: f64 = (0..3).map(|i| probs.get(i, j)).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        assert!(loss > 0.0 && loss.is_finite());
    }

    #[test]
    fn zero_head_has_uniform_loss() {
        let logits = Matrix::zeros(4, 3);
        let (_, loss) = softmax_cross_entropy(&logits, &[0, 1, 2]);
        assert!((loss - 4.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn body_checkpoint_roundtrip() {
        let mut rng = SeededRng::new(3);
        let body = Body::random(8, 6, &mut rng);
        let ckpt = body.to_checkpoint();
        assert_eq!(ckpt.names(), vec!["w1", "w2"]);
        let back = Body::from_checkpoint(&ckpt).unwrap();
        assert_eq!(back, body);
    }

    #[test]
    fn from_checkpoint_rejects_incoherent_shapes() {
        let mut c = Checkpoint::new();
        c.insert("w1", Matrix::zeros(6, 8)).unwrap();
        c.insert("w2", Matrix::zeros(5, 5)).unwrap();
        assert!(Body::from_checkpoint(&c).is_err());
        let mut c = Checkpoint::new();
        c.insert("w1", Matrix::zeros(6, 8)).unwrap();
        assert!(Body::from_checkpoint(&c).is_err());
    }

    #[test]
    fn fitted_head_separates_an_easy_task_through_a_random_body() {
        let spec = TaskSpec {
            id: "easy".into(),
            input_dim: 16,
            classes: 2,
            train_n: 128,
            test_n: 64,
            seed: 2,
            margin: 6.0,
            noise: 0.5,
        };
        let task = make_task(&spec).unwrap();
        let mut rng = SeededRng::new(1);
        let body = Body::random(16, 16, &mut rng);
        let head = fit_head(&body, &task.train, 2, &HeadFitConfig::default());
        let acc = accuracy(&body, &head, &task.test);
        assert!(acc >= 0.95, "accuracy {acc}");
    }
}
