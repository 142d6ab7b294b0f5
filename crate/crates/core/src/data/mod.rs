//! Labeled datasets and class-incremental task streams.

mod io;
mod synthetic;

use std::collections::BTreeSet;
use std::sync::{Arc, Weak};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use io::{load_image_dataset, write_csv, write_idx, write_raw_u8, ImageFormat, RAW_U8_MAGIC};
pub use synthetic::{make_synthetic_dataset, make_synthetic_stream, SyntheticSpec};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Immutable labeled sample collection. Cloning shares the sample buffer.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    samples: Arc<Tensor>,
    labels: Arc<[usize]>,
    class_ids: Vec<usize>,
    pixel_range: (f32, f32),
}

impl LabeledDataset {
    pub fn new(samples: Tensor, labels: Vec<usize>, pixel_range: (f32, f32)) -> Result<Self> {
        if labels.len() != samples.batch_size() {
            return Err(Error::Dimension {
                context: "dataset labels",
                expected: samples.batch_size(),
                actual: labels.len(),
            });
        }
        let (lo, hi) = pixel_range;
        if !(lo <= hi) {
            return Err(Error::config(format!(
                "invalid pixel range {pixel_range:?}"
            )));
        }
        if let Some(v) = samples.data().iter().find(|&&v| !(lo..=hi).contains(&v)) {
            return Err(Error::config(format!(
                "sample value {v} outside pixel range {pixel_range:?}"
            )));
        }
        let class_ids = labels
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Ok(Self {
            samples: Arc::new(samples),
            labels: labels.into(),
            class_ids,
            pixel_range,
        })
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn pixel_range(&self) -> (f32, f32) {
        self.pixel_range
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        self.samples.sample_shape()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        self.samples.row(i)
    }

    /// Indices of the samples labeled `class`, ascending.
    pub fn indices_of(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == class).then_some(i))
            .collect()
    }

    /// Copies the given samples into a new dataset (no shared storage).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let samples = self.samples.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(samples, labels, self.pixel_range)
    }

    /// Weak handle on the sample buffer, for auditing when data is released.
    pub fn storage_handle(&self) -> Weak<Tensor> {
        Arc::downgrade(&self.samples)
    }

    /// Concatenates datasets with identical sample shapes.
    pub fn concat(parts: &[&LabeledDataset]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyTask)?;
        let rows: Vec<&[f32]> = parts.iter().flat_map(|d| d.samples.rows()).collect();
        let labels = parts
            .iter()
            .flat_map(|d| d.labels.iter().copied())
            .collect();
        let lo = parts
            .iter()
            .map(|d| d.pixel_range.0)
            .fold(f32::INFINITY, f32::min);
        let hi = parts
            .iter()
            .map(|d| d.pixel_range.1)
            .fold(f32::NEG_INFINITY, f32::max);
        let samples = Tensor::from_rows(first.sample_shape(), &rows)?;
        Self::new(samples, labels, (lo, hi))
    }

    /// Per-class seeded holdout split into `(train, test)`.
    pub fn stratified_split(&self, test_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::config("test fraction must be in [0, 1)"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for &c in &self.class_ids {
            let mut idx = self.indices_of(c);
            idx.shuffle(&mut rng);
            let n_test = ((idx.len() as f64) * test_fraction).round() as usize;
            let n_test = n_test.min(idx.len().saturating_sub(1));
            test.extend_from_slice(&idx[..n_test]);
            train.extend_from_slice(&idx[n_test..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        if test.is_empty() {
            return Err(Error::config("holdout split produced an empty test set"));
        }
        Ok((self.subset(&train)?, self.subset(&test)?))
    }

    /// Relabels through `map` (old label → new label).
    fn relabel(&self, map: &[usize]) -> Result<Self> {
        let labels = self.labels.iter().map(|&l| map[l]).collect();
        Ok(Self {
            samples: Arc::clone(&self.samples),
            labels,
            class_ids: {
                let mut ids: Vec<usize> = self.class_ids.iter().map(|&c| map[c]).collect();
                ids.sort_unstable();
                ids
            },
            pixel_range: self.pixel_range,
        })
    }
}

/// Ordered sequence of class-disjoint tasks with matching held-out sets.
///
/// Labels are remapped so that task `t` holds the contiguous range
/// `t·k .. (t+1)·k`; `class_order[new_label]` gives the original class id.
#[derive(Debug, Clone)]
pub struct TaskStream {
    pub tasks: Vec<LabeledDataset>,
    pub test_tasks: Vec<LabeledDataset>,
    pub class_order_seed: u64,
    pub class_order: Vec<usize>,
}

impl TaskStream {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_order.len()
    }

    /// Checks disjointness, coverage and train/test consistency.
    pub fn validate(&self) -> Result<()> {
        if self.tasks.len() != self.test_tasks.len() {
            return Err(Error::config("train/test task counts differ"));
        }
        let mut seen = BTreeSet::new();
        for (train, test) in self.tasks.iter().zip(&self.test_tasks) {
            if train.class_ids() != test.class_ids() {
                return Err(Error::config("train/test class sets differ within a task"));
            }
            for &c in train.class_ids() {
                if !seen.insert(c) {
                    return Err(Error::config(format!("class {c} appears in two tasks")));
                }
            }
            if Arc::ptr_eq(&train.samples, &test.samples) {
                return Err(Error::config("train and test share sample storage"));
            }
        }
        let expected: BTreeSet<usize> = (0..self.class_order.len()).collect();
        if seen != expected {
            return Err(Error::config("task classes do not cover the dataset"));
        }
        Ok(())
    }
}

/// Shuffles classes with `class_order_seed`, remaps labels to order position,
/// and partitions into `num_tasks` equal consecutive groups.
pub fn split_tasks(
    train: &LabeledDataset,
    test: &LabeledDataset,
    num_tasks: usize,
    class_order_seed: u64,
) -> Result<TaskStream> {
    let classes = train.class_ids().to_vec();
    if num_tasks == 0 || classes.len() % num_tasks != 0 {
        return Err(Error::config(format!(
            "{} classes cannot be split into {num_tasks} equal tasks",
            classes.len()
        )));
    }
    if test.class_ids() != classes.as_slice() {
        return Err(Error::config(
            "train and test datasets hold different classes",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(class_order_seed);
    let mut order = classes.clone();
    order.shuffle(&mut rng);

    let max_id = classes.iter().copied().max().unwrap_or(0);
    let mut map = vec![usize::MAX; max_id + 1];
    for (pos, &c) in order.iter().enumerate() {
        map[c] = pos;
    }
    let train = train.relabel(&map)?;
    let test = test.relabel(&map)?;

    let per = classes.len() / num_tasks;
    let mut tasks = Vec::with_capacity(num_tasks);
    let mut test_tasks = Vec::with_capacity(num_tasks);
    for t in 0..num_tasks {
        let range = t * per..(t + 1) * per;
        let mut idx: Vec<usize> = (0..train.len())
            .filter(|&i| range.contains(&train.labels()[i]))
            .collect();
        idx.shuffle(&mut rng);
        tasks.push(train.subset(&idx)?);
        let tidx: Vec<usize> = (0..test.len())
            .filter(|&i| range.contains(&test.labels()[i]))
            .collect();
        test_tasks.push(test.subset(&tidx)?);
    }
    let stream = TaskStream {
        tasks,
        test_tasks,
        class_order_seed,
        class_order: order,
    };
    stream.validate()?;
    Ok(stream)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n_classes: usize, per_class: usize) -> LabeledDataset {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for c in 0..n_classes {
            for i in 0..per_class {
                data.push(c as f32);
                data.push(i as f32);
                labels.push(c);
            }
        }
        LabeledDataset::new(
            Tensor::matrix(labels.len(), 2, data).unwrap(),
            labels,
            (0.0, 1000.0),
        )
        .unwrap()
    }

    #[test]
    fn rejects_values_outside_range() {
        let t = Tensor::matrix(1, 2, vec![0.0, 2.0]).unwrap();
        assert!(LabeledDataset::new(t, vec![0], (0.0, 1.0)).is_err());
    }

    #[test]
    fn single_task_holds_all_classes() {
        let d = toy(6, 4);
        let s = split_tasks(&d, &toy(6, 2), 1, 1993).unwrap();
        assert_eq!(s.tasks.len(), 1);
        assert_eq!(s.tasks[0].class_ids(), &[0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn hundred_classes_ten_tasks() {
        let d = toy(100, 2);
        let s = split_tasks(&d, &toy(100, 1), 10, 1993).unwrap();
        for (t, task) in s.tasks.iter().enumerate() {
            assert_eq!(task.class_ids().len(), 10);
            assert_eq!(task.class_ids()[0], t * 10);
        }
    }

    #[test]
    fn non_divisible_split_is_config_error() {
        let d = toy(5, 2);
        assert!(matches!(
            split_tasks(&d, &toy(5, 1), 2, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn different_seeds_change_membership() {
        let d = toy(20, 2);
        let test = toy(20, 1);
        let a = split_tasks(&d, &test, 5, 0).unwrap();
        let b = split_tasks(&d, &test, 5, 1).unwrap();
        a.validate().unwrap();
        b.validate().unwrap();
        assert_ne!(a.class_order, b.class_order);
        for (x, y) in a.tasks.iter().zip(&b.tasks) {
            assert_eq!(x.class_ids().len(), y.class_ids().len());
        }
    }

    #[test]
    fn remapping_preserves_samples() {
        let d = toy(4, 3);
        let s = split_tasks(&d, &toy(4, 1), 2, 7).unwrap();
        for task in &s.tasks {
            for i in 0..task.len() {
                let original = s.class_order[task.labels()[i]];
                assert_eq!(task.sample(i)[0], original as f32);
            }
        }
    }

    #[test]
    fn stratified_split_is_disjoint_and_complete() {
        let d = toy(3, 10);
        let (train, test) = d.stratified_split(0.2, 4).unwrap();
        assert_eq!(train.len() + test.len(), 30);
        assert_eq!(test.len(), 6);
        assert_eq!(train.class_ids(), test.class_ids());
    }
}
