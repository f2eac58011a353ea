use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, SeededRng};

/// Recipe for a synthetic classification task: Gaussian clusters around
/// seeded class means of radius `margin`, with isotropic noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub input_dim: usize,
    pub classes: usize,
    pub train_n: usize,
    pub test_n: usize,
    pub seed: u64,
    /// Distance of each class mean from the origin.
    pub margin: f64,
    /// Standard deviation of per-sample noise.
    pub noise: f64,
}

/// Samples stored column-wise: `inputs` is `input_dim x n`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Gathers the given sample indices into a batch.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        let dim = self.inputs.rows();
        let inputs = Matrix::from_fn(dim, indices.len(), |i, j| self.inputs.get(i, indices[j]));
        let labels = indices.iter().map(|&idx| self.labels[idx]).collect();
        Batch { inputs, labels }
    }
}

/// One minibatch, columns are samples.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

/// A generated task with disjoint train and test splits.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub spec: TaskSpec,
    pub train: Dataset,
    pub test: Dataset,
}

/// Deterministically generates a task from its spec. Labels are assigned
/// round-robin, so class counts are balanced within one sample; train and
/// test are drawn as separate stretches of the seeded stream.
pub fn make_task(spec: &TaskSpec) -> Result<SyntheticTask> {
    if spec.input_dim == 0 {
        return Err(Error::invalid("input_dim must be positive"));
    }
    if spec.classes < 2 {
        return Err(Error::invalid("need at least 2 classes"));
    }
    if spec.train_n == 0 || spec.test_n == 0 {
        return Err(Error::invalid("train and test sample counts must be positive"));
    }
    if !(spec.margin > 0.0 && spec.margin.is_finite()) {
        return Err(Error::invalid("margin must be positive and finite"));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::invalid("noise must be non-negative and finite"));
    }

    let mut rng = SeededRng::new(spec.seed);
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            rng.unit_vector(spec.input_dim)
                .into_iter()
                .map(|x| x * spec.margin)
                .collect()
        })
        .collect();

    let mut draw = |n: usize| -> Dataset {
        let mut data = vec![0.0; spec.input_dim * n];
        let mut labels = Vec::with_capacity(n);
        for sample in 0..n {
            let label = sample % spec.classes;
            labels.push(label);
            for dim in 0..spec.input_dim {
                data[dim * n + sample] = means[label][dim] + spec.noise * rng.normal();
            }
        }
        Dataset {
            inputs: Matrix::new(spec.input_dim, n, data).expect("finite gaussian samples"),
            labels,
        }
    };

    let train = draw(spec.train_n);
    let test = draw(spec.test_n);
    Ok(SyntheticTask {
        spec: spec.clone(),
        train,
        test,
    })
}
