use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{split_tasks, LabeledDataset, TaskStream};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gaussian-cluster benchmark: one isotropic cluster per class whose mean
/// lies on a sphere of radius `separation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub classes_per_task: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub test_samples_per_class: usize,
    /// Per-coordinate standard deviation of every cluster.
    pub cluster_spread: f32,
    /// Radius of the sphere holding the class means; `4 · cluster_spread` when unset.
    pub separation: Option<f32>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 20,
            classes_per_task: 4,
            dim: 32,
            samples_per_class: 150,
            test_samples_per_class: 50,
            cluster_spread: 1.0,
            separation: None,
        }
    }
}

impl SyntheticSpec {
    pub fn separation(&self) -> f32 {
        self.separation.unwrap_or(4.0 * self.cluster_spread)
    }

    pub fn num_tasks(&self) -> usize {
        self.n_classes / self.classes_per_task.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes_per_task == 0 || self.n_classes % self.classes_per_task != 0 {
            return Err(Error::config(format!(
                "{} classes not divisible into tasks of {}",
                self.n_classes, self.classes_per_task
            )));
        }
        if !(self.cluster_spread > 0.0) {
            return Err(Error::config("cluster spread must be > 0"));
        }
        if self.dim == 0 || self.samples_per_class == 0 || self.test_samples_per_class == 0 {
            return Err(Error::config("dim and per-class sample counts must be > 0"));
        }
        if !(self.separation() > 0.0) {
            return Err(Error::config("separation must be > 0"));
        }
        Ok(())
    }
}

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

fn unit_vector<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Class means on the sphere, rejection-sampled so every pair is at least
/// `separation` apart.
fn class_means<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let sep = f64::from(spec.separation());
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(spec.n_classes);
    for _ in 0..spec.n_classes {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let cand: Vec<f64> = unit_vector(spec.dim, rng)
                .into_iter()
                .map(|x| x * sep)
                .collect();
            let ok = means.iter().all(|m| {
                m.iter()
                    .zip(&cand)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
                    >= sep
            });
            if ok {
                means.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::config(format!(
                "cannot place {} separated class means in dimension {}",
                spec.n_classes, spec.dim
            )));
        }
    }
    Ok(means)
}

/// Generates `(train, test)` datasets with original labels `0..n_classes`.
pub fn make_synthetic_dataset(
    spec: &SyntheticSpec,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset, Vec<Vec<f64>>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = class_means(spec, &mut rng)?;
    let spread = f64::from(spec.cluster_spread);
    let draw = |per_class: usize, rng: &mut ChaCha8Rng| {
        let mut data = Vec::with_capacity(spec.n_classes * per_class * spec.dim);
        let mut labels = Vec::with_capacity(spec.n_classes * per_class);
        for (c, mean) in means.iter().enumerate() {
            for _ in 0..per_class {
                for &m in mean {
                    let z: f64 = StandardNormal.sample(rng);
                    data.push((m + spread * z) as f32);
                }
                labels.push(c);
            }
        }
        (data, labels)
    };
    let (train_data, train_labels) = draw(spec.samples_per_class, &mut rng);
    let (test_data, test_labels) = draw(spec.test_samples_per_class, &mut rng);

    let (lo, hi) = train_data
        .iter()
        .chain(&test_data)
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let pad = 3.0 * spec.cluster_spread;
    let range = (lo - pad, hi + pad);

    let train = LabeledDataset::new(
        Tensor::matrix(train_labels.len(), spec.dim, train_data)?,
        train_labels,
        range,
    )?;
    let test = LabeledDataset::new(
        Tensor::matrix(test_labels.len(), spec.dim, test_data)?,
        test_labels,
        range,
    )?;
    Ok((train, test, means))
}

/// Synthetic dataset split into `n_classes / classes_per_task` tasks, with
/// `seed` driving both the cluster geometry and the class order.
pub fn make_synthetic_stream(spec: &SyntheticSpec, seed: u64) -> Result<TaskStream> {
    let (train, test, _) = make_synthetic_dataset(spec, seed)?;
    split_tasks(&train, &test, spec.num_tasks(), seed)
}
