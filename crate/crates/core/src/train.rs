//! Per-task training: cross-entropy over every seen class plus
//! temperature-softened distillation of the old-class logits towards a frozen
//! copy of the previous network.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::loss;
use crate::net::{LossSpec, Network, Sgd};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs_first_task: usize,
    pub epochs_later_tasks: usize,
    pub lr_first_task: f64,
    pub lr_later_tasks: f64,
    /// Learning-rate milestones as fractions of the task's epoch budget.
    pub milestones: Vec<f64>,
    pub lr_decay: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Distillation strength λ; zero trains plain fine-tuning.
    pub lambda: f64,
    pub temperature: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_first_task: 30,
            epochs_later_tasks: 30,
            // Unnormalized desk-scale networks collapse at 0.1.
            lr_first_task: 0.02,
            lr_later_tasks: 0.01,
            milestones: vec![0.3, 0.6, 0.8],
            lr_decay: 10.0,
            momentum: 0.9,
            weight_decay: 5e-4,
            lambda: 10.0,
            temperature: 2.0,
            batch_size: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::config("temperature must be > 0"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::config("lambda must be >= 0"));
        }
        if !(self.lr_first_task > 0.0 && self.lr_later_tasks > 0.0) {
            return Err(Error::config("learning rates must be > 0"));
        }
        if !(self.lr_decay >= 1.0) {
            return Err(Error::config("lr decay factor must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must be in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight decay must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be > 0"));
        }
        let ordered = self.milestones.windows(2).all(|w| w[0] < w[1]);
        let inside = self.milestones.iter().all(|&m| m > 0.0 && m < 1.0);
        if !ordered || !inside {
            return Err(Error::config(
                "milestones must be strictly increasing fractions in (0, 1)",
            ));
        }
        Ok(())
    }

    pub fn epochs(&self, first_task: bool) -> usize {
        if first_task {
            self.epochs_first_task
        } else {
            self.epochs_later_tasks
        }
    }

    /// Milestone epochs for a budget of `epochs`, deduplicated.
    pub fn milestone_epochs(&self, epochs: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .milestones
            .iter()
            .map(|m| (m * epochs as f64).round() as usize)
            .filter(|&e| e > 0 && e < epochs)
            .collect();
        out.dedup();
        out
    }

    /// Step schedule: the base rate divided by `lr_decay` once per passed milestone.
    pub fn learning_rate(&self, first_task: bool, epoch: usize) -> f64 {
        let base = if first_task {
            self.lr_first_task
        } else {
            self.lr_later_tasks
        };
        let passed = self
            .milestone_epochs(self.epochs(first_task))
            .iter()
            .filter(|&&m| epoch >= m)
            .count();
        base / self.lr_decay.powi(passed as i32)
    }
}

/// Batch-mean cross-entropy of the softened teacher distribution against the
/// softened student distribution. Both tensors hold only old-class columns.
pub fn distillation_loss(student: &Tensor, teacher: &Tensor, temperature: f64) -> Result<f64> {
    if student.shape() != teacher.shape() {
        return Err(Error::Dimension {
            context: "distillation logits",
            expected: teacher.data().len(),
            actual: student.data().len(),
        });
    }
    let cols = student.row_len();
    Ok(loss::distillation(student.data(), cols, teacher.data(), cols, temperature)?.0)
}

/// `CE(h_t(x), y) + λ · KD` where `old_classes` is the number of classes seen
/// before the current task (0 on the first task, which disables distillation).
pub fn task_loss(
    net: &Network,
    teacher: Option<&Network>,
    batch: &Tensor,
    labels: &[usize],
    old_classes: usize,
    cfg: &TrainConfig,
) -> Result<f64> {
    if old_classes == 0 || cfg.lambda == 0.0 {
        return Ok(net
            .loss_and_gradient(batch, labels, &LossSpec::CrossEntropy)?
            .0);
    }
    let teacher = teacher.ok_or_else(|| {
        Error::config("a frozen teacher is required once old classes exist and lambda > 0")
    })?;
    if teacher.num_classes() != old_classes {
        return Err(Error::Dimension {
            context: "teacher head",
            expected: old_classes,
            actual: teacher.num_classes(),
        });
    }
    let teacher_logits = teacher.forward_logits(batch)?;
    let spec = LossSpec::Distillation {
        teacher_logits: &teacher_logits,
        lambda: cfg.lambda,
        temperature: cfg.temperature,
    };
    Ok(net.loss_and_gradient(batch, labels, &spec)?.0)
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub task: usize,
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: Network,
    pub log: Vec<EpochLog>,
}

/// Top-1 accuracy of the classifier head.
pub fn head_accuracy(net: &Network, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyTask);
    }
    let logits = net.forward_logits(data.samples())?;
    let correct = logits
        .rows()
        .zip(data.labels())
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Index of the largest entry; the first one wins ties.
pub(crate) fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Trains a copy of `net_prev` on `task`.
///
/// The copy's head is grown by the task's class count first. When `net_prev`
/// already has classes it acts as the frozen teacher; it is only ever
/// borrowed immutably. `task_index` is used for logs and error reports.
pub fn train_task(
    net_prev: &Network,
    task: &LabeledDataset,
    cfg: &TrainConfig,
    task_index: usize,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if task.is_empty() {
        return Err(Error::EmptyTask);
    }
    let old = net_prev.num_classes();
    let first = old == 0;
    let total = old + task.class_ids().len();
    if let Some(&bad) = task.labels().iter().find(|&&y| y < old || y >= total) {
        return Err(Error::Label {
            label: bad,
            classes: total,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = net_prev.clone();
    net.extend_head(task.class_ids().len(), &mut rng);

    let distill = !first && cfg.lambda > 0.0;
    let teacher_logits = if distill {
        Some(net_prev.forward_logits(task.samples())?)
    } else {
        None
    };

    let mut opt = Sgd::new(cfg.momentum as f32, cfg.weight_decay as f32)?;
    let mut order: Vec<usize> = (0..task.len()).collect();
    let mut log = Vec::new();
    for epoch in 0..cfg.epochs(first) {
        let lr = cfg.learning_rate(first, epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = task.samples().select_rows(idx)?;
            let labels: Vec<usize> = idx.iter().map(|&i| task.labels()[i]).collect();
            let teacher_batch = match &teacher_logits {
                Some(t) => Some(t.select_rows(idx)?),
                None => None,
            };
            let spec = match &teacher_batch {
                Some(t) => LossSpec::Distillation {
                    teacher_logits: t,
                    lambda: cfg.lambda,
                    temperature: cfg.temperature,
                },
                None => LossSpec::CrossEntropy,
            };
            let diverged = || Error::Divergence {
                task: task_index,
                epoch,
                batch: b,
            };
            let (value, grads) = match net.loss_and_gradient(&batch, &labels, &spec) {
                Ok(v) => v,
                Err(Error::Numeric(_)) => return Err(diverged()),
                Err(e) => return Err(e),
            };
            if !value.is_finite() || !grads.is_finite() {
                return Err(diverged());
            }
            opt.step(&mut net, &grads, lr as f32)?;
            loss_sum += value * idx.len() as f64;
        }
        let train_acc = match head_accuracy(&net, task) {
            Ok(a) => a,
            Err(Error::Numeric(_)) => {
                return Err(Error::Divergence {
                    task: task_index,
                    epoch,
                    batch: order.len().div_ceil(cfg.batch_size),
                })
            }
            Err(e) => return Err(e),
        };
        log.push(EpochLog {
            task: task_index,
            epoch,
            lr,
            train_loss: loss_sum / task.len() as f64,
            train_acc,
        });
    }
    Ok(TrainOutcome { net, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Architecture, Dense, Layer};

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "{a} vs {b}");
    }

    #[test]
    fn hand_distillation_value() {
        let t = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        // softmax(0.5, 0) = (0.6225, 0.3775); entropy = 0.66285
        let p1 = 1.0 / (1.0 + (-0.5f64).exp());
        let expected = -(p1 * p1.ln() + (1.0 - p1) * (1.0 - p1).ln());
        let got = distillation_loss(&t, &t, 2.0).unwrap();
        assert_close(got, expected, 1e-12);
        assert_close(got, 0.66285, 1e-4);
    }

    #[test]
    fn self_distillation_is_minimum() {
        let teacher = Tensor::matrix(1, 3, vec![0.3, -1.0, 2.0]).unwrap();
        let at_teacher = distillation_loss(&teacher, &teacher, 2.0).unwrap();
        for delta in [-0.5f32, 0.2, 1.0] {
            let mut s = teacher.clone();
            s.data_mut()[0] += delta;
            assert!(distillation_loss(&s, &teacher, 2.0).unwrap() > at_teacher);
        }
    }

    #[test]
    fn high_temperature_tends_to_log_classes() {
        let s = Tensor::matrix(1, 4, vec![3.0, -1.0, 0.5, 2.0]).unwrap();
        let t = Tensor::matrix(1, 4, vec![-2.0, 1.0, 0.0, 4.0]).unwrap();
        assert_close(distillation_loss(&s, &t, 1e7).unwrap(), 4f64.ln(), 1e-6);
    }

    #[test]
    fn distillation_shape_mismatch() {
        let s = Tensor::matrix(1, 3, vec![0.0; 3]).unwrap();
        let t = Tensor::matrix(1, 2, vec![0.0; 2]).unwrap();
        assert!(matches!(
            distillation_loss(&s, &t, 2.0),
            Err(Error::Dimension { .. })
        ));
    }

    fn linear_net(rows: usize, head: Vec<f32>) -> Network {
        let dense = Dense::new(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0; 2]).unwrap();
        let mut net = Network::from_layers(vec![2], vec![Layer::Dense(dense)]).unwrap();
        net.set_head(rows, head).unwrap();
        net
    }

    #[test]
    fn task_loss_composes_ce_and_distillation() {
        let teacher = linear_net(2, vec![1.0, 0.0, 0.0, 1.0]);
        let student = linear_net(3, vec![0.5, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let cfg = TrainConfig::default();
        let total = task_loss(&student, Some(&teacher), &x, &[2], 2, &cfg).unwrap();

        // Student logits (0.5, 2, 3), teacher (1, 2).
        let z = [0.5f64, 2.0, 3.0];
        let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
        let ce = lse - z[2];
        let p = [1.0f64 / 2.0, 2.0 / 2.0];
        let q = [0.5f64 / 2.0, 2.0 / 2.0];
        let lse_p = p.iter().map(|v| v.exp()).sum::<f64>().ln();
        let lse_q = q.iter().map(|v| v.exp()).sum::<f64>().ln();
        let kd: f64 = -(0..2)
            .map(|i| (p[i] - lse_p).exp() * (q[i] - lse_q))
            .sum::<f64>();
        assert_close(total, ce + 10.0 * kd, 1e-6);
    }

    #[test]
    fn zero_lambda_and_first_task_use_plain_ce() {
        let student = linear_net(3, vec![0.5, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let ce = student
            .loss_and_gradient(&x, &[1], &LossSpec::CrossEntropy)
            .unwrap()
            .0;
        let cfg0 = TrainConfig {
            lambda: 0.0,
            ..Default::default()
        };
        assert_eq!(task_loss(&student, None, &x, &[1], 2, &cfg0).unwrap(), ce);
        assert_eq!(
            task_loss(&student, None, &x, &[1], 0, &TrainConfig::default()).unwrap(),
            ce
        );
        assert!(matches!(
            task_loss(&student, None, &x, &[1], 2, &TrainConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn schedule_steps_at_milestones() {
        let cfg = TrainConfig {
            epochs_first_task: 10,
            ..Default::default()
        };
        assert_eq!(cfg.milestone_epochs(10), vec![3, 6, 8]);
        assert_close(cfg.learning_rate(true, 2), 0.02, 1e-15);
        assert_close(cfg.learning_rate(true, 3), 0.002, 1e-15);
        assert_close(cfg.learning_rate(true, 9), 2e-5, 1e-15);
        assert_close(cfg.learning_rate(false, 0), 0.01, 1e-15);
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            TrainConfig {
                temperature: 0.0,
                ..Default::default()
            },
            TrainConfig {
                lambda: -1.0,
                ..Default::default()
            },
            TrainConfig {
                milestones: vec![0.6, 0.3],
                ..Default::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    fn two_blob_task() -> LabeledDataset {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            let y = i % 2;
            let c = if y == 0 { -2.0 } else { 2.0 };
            for _ in 0..4 {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push((c + 0.5 * z) as f32);
            }
            labels.push(y);
        }
        LabeledDataset::new(Tensor::matrix(200, 4, data).unwrap(), labels, (-10.0, 10.0)).unwrap()
    }

    fn small_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs_first_task: epochs,
            epochs_later_tasks: epochs,
            batch_size: 32,
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_only_grows_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Network::new(&[4], &Architecture::default_mlp(), &mut rng).unwrap();
        let out = train_task(&net, &two_blob_task(), &small_cfg(0), 0, 1).unwrap();
        assert_eq!(out.net.num_classes(), 2);
        assert_eq!(out.net.layers(), net.layers());
        assert!(out.log.is_empty());
    }

    #[test]
    fn separable_task_is_learned_deterministically() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Network::new(&[4], &Architecture::default_mlp(), &mut rng).unwrap();
        let task = two_blob_task();
        let a = train_task(&net, &task, &small_cfg(10), 0, 9).unwrap();
        let b = train_task(&net, &task, &small_cfg(10), 0, 9).unwrap();
        assert_eq!(a.net.fingerprint(), b.net.fingerprint());
        assert!(head_accuracy(&a.net, &task).unwrap() > 0.95);
        assert!(a.log.last().unwrap().train_loss <= a.log[0].train_loss);
    }

    #[test]
    fn labels_outside_new_range_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Network::new(&[4], &Architecture::default_mlp(), &mut rng).unwrap();
        net.extend_head(2, &mut rng);
        // Labels 0/1 belong to the old classes.
        assert!(matches!(
            train_task(&net, &two_blob_task(), &small_cfg(1), 1, 0),
            Err(Error::Label { .. })
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Network::new(&[4], &Architecture::default_mlp(), &mut rng).unwrap();
        let cfg = TrainConfig {
            lr_first_task: 1e30,
            ..small_cfg(3)
        };
        assert!(matches!(
            train_task(&net, &two_blob_task(), &cfg, 0, 0),
            Err(Error::Divergence { task: 0, .. })
        ));
    }
}
