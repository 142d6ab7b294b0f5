//! Targeted perturbation of current-task samples towards an old-class
//! prototype in the old feature space.
//!
//! Each iteration moves every sample by exactly `alpha` along the unit
//! direction that decreases `‖f_old(x) − P‖²`, then clips to the valid range.
//! There is no perturbation budget beyond the range clip.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::net::{Network, Objective};
use crate::proto::{ncm_classify, PrototypeStore};
use crate::tensor::{squared_distance, Tensor};

/// Gradients with a smaller per-sample norm leave that sample untouched.
pub const MIN_GRAD_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub alpha: f32,
    pub iterations: usize,
    pub m: usize,
    pub pixel_range: (f32, f32),
}

impl AttackConfig {
    /// Default step: 25/255 on `[0, 1]` images, a tenth of the range otherwise.
    pub fn default_alpha(pixel_range: (f32, f32)) -> f32 {
        if pixel_range == (0.0, 1.0) {
            25.0 / 255.0
        } else {
            0.1 * (pixel_range.1 - pixel_range.0)
        }
    }

    pub fn with_defaults(pixel_range: (f32, f32)) -> Self {
        Self {
            alpha: Self::default_alpha(pixel_range),
            iterations: 3,
            m: 100,
            pixel_range,
        }
    }

    /// `iterations == 0` is accepted: it leaves the selected samples unperturbed.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("attack step alpha must be > 0"));
        }
        if self.m == 0 {
            return Err(Error::config("attack sample count m must be >= 1"));
        }
        let (lo, hi) = self.pixel_range;
        if !(lo <= hi) {
            return Err(Error::config("invalid pixel range"));
        }
        Ok(())
    }

    pub fn clip(&self, v: f32) -> f32 {
        v.clamp(self.pixel_range.0, self.pixel_range.1)
    }
}

/// Indices of the `min(m, n)` rows of `features` nearest to `prototype`,
/// ordered by distance then index.
pub fn closest_rows(features: &Tensor, prototype: &[f32], m: usize) -> Result<Vec<usize>> {
    if features.row_len() != prototype.len() {
        return Err(Error::Dimension {
            context: "selection prototype",
            expected: features.row_len(),
            actual: prototype.len(),
        });
    }
    let mut scored: Vec<(f64, usize)> = features
        .rows()
        .enumerate()
        .map(|(i, f)| (squared_distance(f, prototype), i))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(m).map(|(_, i)| i).collect())
}

/// The `min(m, n)` current samples whose old-space embeddings are nearest
/// to `prototype`, as indices into `data`.
pub fn select_closest(
    net_prev: &Network,
    data: &LabeledDataset,
    prototype: &[f32],
    m: usize,
) -> Result<Vec<usize>> {
    if data.is_empty() {
        return Err(Error::EmptyTask);
    }
    let feats = crate::proto::embed(net_prev, data.samples())?;
    closest_rows(&feats, prototype, m)
}

/// One normalized step towards `prototype`; returns how many samples moved.
fn step_towards(
    net_prev: &Network,
    x: &mut Tensor,
    prototype: &[f32],
    cfg: &AttackConfig,
) -> Result<usize> {
    // Summing the per-sample objectives keeps every sample's gradient
    // identical to what it would get on its own.
    let grad = net_prev.input_gradient(
        x,
        &Objective::PrototypeDistance {
            prototype,
            mean: false,
        },
    )?;
    let mut moved = 0;
    for s in 0..x.batch_size() {
        let g = grad.row(s);
        let gn = crate::tensor::norm(g);
        if gn < MIN_GRAD_NORM {
            continue;
        }
        moved += 1;
        let scale = f64::from(cfg.alpha) / gn;
        for (v, &gi) in x.row_mut(s).iter_mut().zip(g) {
            *v = cfg.clip((f64::from(*v) - scale * f64::from(gi)) as f32);
        }
    }
    x.ensure_finite("adversarial samples")?;
    Ok(moved)
}

/// Runs `cfg.iterations` normalized steps on copies of `samples`.
pub fn perturb_towards(
    net_prev: &Network,
    samples: &Tensor,
    prototype: &[f32],
    cfg: &AttackConfig,
) -> Result<Tensor> {
    Ok(run_attack(net_prev, samples, prototype, cfg, false)?.samples)
}

/// Outcome of one perturbation run.
#[derive(Debug, Clone)]
pub struct AttackRun {
    pub samples: Tensor,
    /// Mean old-space distance to the prototype before the first step and
    /// after every step; empty unless requested.
    pub mean_distance: Vec<f64>,
    /// Input-gradient evaluations performed.
    pub backward_passes: usize,
}

/// [`perturb_towards`] with bookkeeping. `trace` records the mean distance
/// to the prototype after every step, at the cost of extra forward passes.
pub fn run_attack(
    net_prev: &Network,
    samples: &Tensor,
    prototype: &[f32],
    cfg: &AttackConfig,
    trace: bool,
) -> Result<AttackRun> {
    cfg.validate()?;
    if prototype.len() != net_prev.feature_dim() {
        return Err(Error::Dimension {
            context: "attack prototype",
            expected: net_prev.feature_dim(),
            actual: prototype.len(),
        });
    }
    let mean_dist = |x: &Tensor| -> Result<f64> {
        let f = net_prev.forward_features(x)?;
        Ok(f.rows()
            .map(|r| squared_distance(r, prototype).sqrt())
            .sum::<f64>()
            / f.batch_size() as f64)
    };
    let mut x = samples.clone();
    let mut mean_distance = Vec::new();
    if trace {
        mean_distance.push(mean_dist(&x)?);
    }
    let mut backward_passes = 0;
    for _ in 0..cfg.iterations {
        step_towards(net_prev, &mut x, prototype, cfg)?;
        backward_passes += 1;
        if trace {
            mean_distance.push(mean_dist(&x)?);
        }
    }
    Ok(AttackRun {
        samples: x,
        mean_distance,
        backward_passes,
    })
}

/// Perturbed samples for one target class with their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialBatch {
    pub samples: Tensor,
    pub source_indices: Vec<usize>,
    pub target_class: usize,
    pub success_mask: Vec<bool>,
}

impl AdversarialBatch {
    pub fn successes(&self) -> usize {
        self.success_mask.iter().filter(|&&s| s).count()
    }

    /// The successful samples, or `None` when there are none.
    pub fn successful_samples(&self) -> Result<Option<Tensor>> {
        let idx: Vec<usize> = (0..self.success_mask.len())
            .filter(|&j| self.success_mask[j])
            .collect();
        if idx.is_empty() {
            return Ok(None);
        }
        Ok(Some(self.samples.select_rows(&idx)?))
    }

    /// Writes `(original, perturbation, adversarial)` triples to a binary sidecar.
    ///
    /// Layout, little-endian: `"ADVT"`, `u32` count, `u32` row length,
    /// `u32` target class; then per sample a `u32` source index, a `u8`
    /// success flag and three `f32` rows.
    pub fn write_sidecar(&self, originals: &Tensor, path: &Path) -> Result<()> {
        let d = self.samples.row_len();
        let mut out = Vec::with_capacity(16 + self.source_indices.len() * (5 + 12 * d));
        out.extend_from_slice(b"ADVT");
        for v in [self.source_indices.len(), d, self.target_class] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for (j, &src) in self.source_indices.iter().enumerate() {
            out.extend_from_slice(&(src as u32).to_le_bytes());
            out.push(u8::from(self.success_mask[j]));
            let orig = originals.row(src);
            let adv = self.samples.row(j);
            for v in orig {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for (a, o) in adv.iter().zip(orig) {
                out.extend_from_slice(&(a - o).to_le_bytes());
            }
            for v in adv {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Marks the samples whose old-space nearest prototype is `target`.
///
/// When `introduced_before` is set, only classes introduced before that task
/// compete in the nearest-prototype search.
pub fn filter_successful(
    net_prev: &Network,
    adv: Tensor,
    source_indices: Vec<usize>,
    store: &PrototypeStore,
    target: usize,
    introduced_before: Option<usize>,
) -> Result<AdversarialBatch> {
    let restricted;
    let store = match introduced_before {
        Some(t) => {
            restricted = store.introduced_before(t);
            &restricted
        }
        None => store,
    };
    if store.get(target).is_none() {
        return Err(Error::Target(target));
    }
    if source_indices.len() != adv.batch_size() {
        return Err(Error::Dimension {
            context: "adversarial provenance",
            expected: adv.batch_size(),
            actual: source_indices.len(),
        });
    }
    let feats = net_prev.forward_features(&adv)?;
    let success_mask = feats
        .rows()
        .map(|f| ncm_classify(f, store).map(|c| c == target))
        .collect::<Result<Vec<_>>>()?;
    Ok(AdversarialBatch {
        samples: adv,
        source_indices,
        target_class: target,
        success_mask,
    })
}
