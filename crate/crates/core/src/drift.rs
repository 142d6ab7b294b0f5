//! Prototype drift estimation and compensation.
//!
//! * ADC: perturb the current samples nearest to each old prototype towards
//!   it in the old space, keep the ones the old model now assigns to that
//!   class, and average their old→new embedding displacement.
//! * SDC: Gaussian-weighted average of the displacement of every current
//!   sample, weighted by old-space distance to the prototype.
//! * NME: recompute old prototypes from a small exemplar memory.
//! * Oracle: displacement of the true class mean, from retained old data.
//!   Evaluation only.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{closest_rows, filter_successful, run_attack, AttackConfig};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::net::Network;
use crate::proto::{class_means, compute_prototypes, embed, PrototypeStore};
use crate::tensor::Tensor;

/// Estimates whose norm falls below this are too small to have a direction.
pub const MIN_DRIFT_NORM: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMethod {
    Adc,
    Sdc,
    Nme,
    Oracle,
}

impl fmt::Display for DriftMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DriftMethod::Adc => "adc",
            DriftMethod::Sdc => "sdc",
            DriftMethod::Nme => "nme",
            DriftMethod::Oracle => "oracle",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassDrift {
    pub delta: Vec<f64>,
    pub n_contributing: usize,
}

impl ClassDrift {
    pub fn norm(&self) -> f64 {
        self.delta.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Per-class drift vectors with the method that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftEstimate {
    pub method: DriftMethod,
    pub feature_dim: usize,
    pub per_class: BTreeMap<usize, ClassDrift>,
}

impl DriftEstimate {
    pub fn new(method: DriftMethod, feature_dim: usize) -> Self {
        Self {
            method,
            feature_dim,
            per_class: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, class: usize, drift: ClassDrift) -> Result<()> {
        if drift.delta.len() != self.feature_dim {
            return Err(Error::Dimension {
                context: "drift vector",
                expected: self.feature_dim,
                actual: drift.delta.len(),
            });
        }
        self.per_class.insert(class, drift);
        Ok(())
    }

    pub fn get(&self, class: usize) -> Option<&ClassDrift> {
        self.per_class.get(&class)
    }

    pub fn classes(&self) -> Vec<usize> {
        self.per_class.keys().copied().collect()
    }

    /// Displacement from `before` to `after` for every class of `before`.
    pub fn between(
        method: DriftMethod,
        before: &PrototypeStore,
        after: &PrototypeStore,
    ) -> Result<Self> {
        let mut out = Self::new(method, before.feature_dim());
        for (c, p) in before.iter() {
            let q = after
                .vector(c)
                .ok_or_else(|| Error::Evaluation(format!("class {c} missing after update")))?;
            let delta = q
                .iter()
                .zip(&p.vector)
                .map(|(&a, &b)| f64::from(a) - f64::from(b))
                .collect();
            out.insert(
                c,
                ClassDrift {
                    delta,
                    n_contributing: 0,
                },
            )?;
        }
        Ok(out)
    }

    /// `P + Δ` for every class in the estimate; other classes are copied.
    pub fn apply(&self, store: &PrototypeStore, task: usize) -> Result<PrototypeStore> {
        if store.feature_dim() != self.feature_dim {
            return Err(Error::Dimension {
                context: "drift application",
                expected: store.feature_dim(),
                actual: self.feature_dim,
            });
        }
        let mut out = PrototypeStore::new(store.feature_dim());
        for (c, p) in store.iter() {
            match self.per_class.get(&c) {
                Some(d) => {
                    let v = p
                        .vector
                        .iter()
                        .zip(&d.delta)
                        .map(|(&a, &b)| (f64::from(a) + b) as f32)
                        .collect();
                    out.insert(c, v, p.introduced, task)?;
                }
                None => out.insert(c, p.vector.clone(), p.introduced, p.last_updated)?,
            }
        }
        if let Some(c) = self.per_class.keys().find(|c| store.get(**c).is_none()) {
            return Err(Error::Evaluation(format!("drift for unknown class {c}")));
        }
        Ok(out)
    }
}

/// Result of compensating the old prototypes for one task.
#[derive(Debug, Clone)]
pub struct Compensation {
    pub store: PrototypeStore,
    pub estimate: DriftEstimate,
    /// Input-gradient evaluations spent, one per class per attack iteration.
    pub backward_passes: usize,
}

fn check_pair(net_prev: &Network, net_new: &Network, current: &LabeledDataset) -> Result<()> {
    if current.is_empty() {
        return Err(Error::EmptyTask);
    }
    if net_prev.feature_dim() != net_new.feature_dim() {
        return Err(Error::Dimension {
            context: "feature spaces",
            expected: net_prev.feature_dim(),
            actual: net_new.feature_dim(),
        });
    }
    Ok(())
}

/// Mean of `f_new(x) − f_prev(x)` over the rows of `x`.
pub fn mean_displacement(net_prev: &Network, net_new: &Network, x: &Tensor) -> Result<Vec<f64>> {
    let old = net_prev.forward_features(x)?;
    let new = net_new.forward_features(x)?;
    let n = x.batch_size() as f64;
    let mut acc = vec![0.0; net_prev.feature_dim()];
    for (o, w) in old.rows().zip(new.rows()) {
        for ((a, &ov), &nv) in acc.iter_mut().zip(o).zip(w) {
            *a += f64::from(nv) - f64::from(ov);
        }
    }
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// Adversarial drift compensation of every prototype in `store`.
///
/// `store` must hold only old classes; it also supplies the competitors in
/// the success test. With `iterations == 0` nothing is perturbed and the
/// drift is the plain mean over the `m` nearest current samples.
pub fn adc_compensate(
    net_prev: &Network,
    net_new: &Network,
    store: &PrototypeStore,
    current: &LabeledDataset,
    cfg: &AttackConfig,
    task: usize,
) -> Result<Compensation> {
    cfg.validate()?;
    check_pair(net_prev, net_new, current)?;
    let old_feats = embed(net_prev, current.samples())?;
    let classes = store.classes();
    let drifts = classes
        .par_iter()
        .map(|&k| {
            let proto = store.vector(k).expect("class listed by store");
            let idx = closest_rows(&old_feats, proto, cfg.m)?;
            let x = current.samples().select_rows(&idx)?;
            if cfg.iterations == 0 {
                let delta = mean_displacement(net_prev, net_new, &x)?;
                let drift = ClassDrift {
                    delta,
                    n_contributing: idx.len(),
                };
                return Ok((drift, 0));
            }
            let run = run_attack(net_prev, &x, proto, cfg, false)?;
            let batch = filter_successful(net_prev, run.samples, idx, store, k, None)?;
            let drift = match batch.successful_samples()? {
                Some(hits) => ClassDrift {
                    delta: mean_displacement(net_prev, net_new, &hits)?,
                    n_contributing: hits.batch_size(),
                },
                None => {
                    log::warn!(
                        "task {task}: no adversarial sample reached class {k}; prototype kept"
                    );
                    ClassDrift {
                        delta: vec![0.0; store.feature_dim()],
                        n_contributing: 0,
                    }
                }
            };
            Ok((drift, run.backward_passes))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut estimate = DriftEstimate::new(DriftMethod::Adc, store.feature_dim());
    let mut backward_passes = 0;
    for (k, (d, passes)) in classes.iter().zip(drifts) {
        estimate.insert(*k, d)?;
        backward_passes += passes;
    }
    Ok(Compensation {
        store: estimate.apply(store, task)?,
        estimate,
        backward_passes,
    })
}

/// Semantic drift compensation with a Gaussian window of width `sigma`
/// around each prototype in the old space.
pub fn sdc_compensate(
    net_prev: &Network,
    net_new: &Network,
    store: &PrototypeStore,
    current: &LabeledDataset,
    sigma: f64,
    task: usize,
) -> Result<Compensation> {
    if !(sigma > 0.0) {
        return Err(Error::config("sdc sigma must be > 0"));
    }
    check_pair(net_prev, net_new, current)?;
    let old = embed(net_prev, current.samples())?;
    let new = embed(net_new, current.samples())?;
    let d = store.feature_dim();
    let deltas: Vec<Vec<f64>> = old
        .rows()
        .zip(new.rows())
        .map(|(o, w)| {
            o.iter()
                .zip(w)
                .map(|(&a, &b)| f64::from(b) - f64::from(a))
                .collect()
        })
        .collect();
    let mut estimate = DriftEstimate::new(DriftMethod::Sdc, d);
    for (k, p) in store.iter() {
        let mut acc = vec![0.0; d];
        let mut total = 0.0;
        let mut contributing = 0;
        for (o, delta) in old.rows().zip(&deltas) {
            let dist2 = crate::tensor::squared_distance(o, &p.vector);
            let w = (-dist2 / (2.0 * sigma * sigma)).exp();
            if w > 0.0 {
                contributing += 1;
                total += w;
                for (a, &v) in acc.iter_mut().zip(delta) {
                    *a += w * v;
                }
            }
        }
        let delta = if total > 0.0 {
            acc.into_iter().map(|v| v / total).collect()
        } else {
            log::warn!("task {task}: every sdc weight for class {k} underflowed; prototype kept");
            vec![0.0; d]
        };
        estimate.insert(
            k,
            ClassDrift {
                delta,
                n_contributing: contributing,
            },
        )?;
    }
    Ok(Compensation {
        store: estimate.apply(store, task)?,
        estimate,
        backward_passes: 0,
    })
}

/// Old-task training data retained for evaluation only. No compensation
/// method accepts this type.
#[derive(Debug, Clone, Default)]
pub struct SealedOldData {
    classes: BTreeMap<usize, (usize, LabeledDataset)>,
}

impl SealedOldData {
    pub fn new() -> Self {
        Self::default()
    }

    /// Copies every class of `data` (seen in `task`) into the sealed store.
    pub fn retain(&mut self, data: &LabeledDataset, task: usize) -> Result<()> {
        for &c in data.class_ids() {
            self.classes
                .insert(c, (task, data.subset(&data.indices_of(c))?));
        }
        Ok(())
    }

    pub fn classes(&self) -> Vec<usize> {
        self.classes.keys().copied().collect()
    }

    fn class(&self, c: usize) -> Result<&(usize, LabeledDataset)> {
        self.classes.get(&c).ok_or(Error::OracleUnavailable(c))
    }
}

/// True drift of each listed class: its mean under `net_new` minus its mean
/// under `net_prev`, both over the retained data.
pub fn oracle_drift(
    net_prev: &Network,
    net_new: &Network,
    old: &SealedOldData,
    classes: &[usize],
) -> Result<DriftEstimate> {
    let mut out = DriftEstimate::new(DriftMethod::Oracle, net_new.feature_dim());
    for &c in classes {
        let (_, data) = old.class(c)?;
        let before = class_means(&embed(net_prev, data.samples())?, data.labels());
        let after = class_means(&embed(net_new, data.samples())?, data.labels());
        let delta = after[&c]
            .iter()
            .zip(&before[&c])
            .map(|(a, b)| a - b)
            .collect();
        out.insert(
            c,
            ClassDrift {
                delta,
                n_contributing: data.len(),
            },
        )?;
    }
    Ok(out)
}

/// Prototypes of every retained class recomputed under `net`.
pub fn oracle_prototypes(
    net: &Network,
    old: &SealedOldData,
    task: usize,
) -> Result<PrototypeStore> {
    let mut store = PrototypeStore::new(net.feature_dim());
    for (&c, (introduced, data)) in &old.classes {
        let p = compute_prototypes(net, data, task)?;
        store.insert(
            c,
            p.vector(c).expect("class present").to_vec(),
            *introduced,
            task,
        )?;
    }
    Ok(store)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExemplarPolicy {
    #[default]
    Herding,
    Random,
}

/// Raw samples kept per class for the exemplar baseline.
#[derive(Debug, Clone, Default)]
pub struct ExemplarStore {
    /// Per-class cap; `None` keeps whole classes.
    pub per_class: Option<usize>,
    classes: BTreeMap<usize, (usize, LabeledDataset)>,
}

impl ExemplarStore {
    pub fn new(per_class: Option<usize>) -> Self {
        Self {
            per_class,
            classes: BTreeMap::new(),
        }
    }

    pub fn classes(&self) -> Vec<usize> {
        self.classes.keys().copied().collect()
    }

    pub fn class(&self, c: usize) -> Option<&LabeledDataset> {
        self.classes.get(&c).map(|(_, d)| d)
    }

    pub fn total(&self) -> usize {
        self.classes.values().map(|(_, d)| d.len()).sum()
    }

    /// Total capacity for the classes held, if bounded.
    pub fn budget(&self) -> Option<usize> {
        self.per_class.map(|e| e * self.classes.len())
    }

    pub fn extend(&mut self, other: ExemplarStore) {
        self.classes.extend(other.classes);
    }
}

fn herding(feats: &Tensor, e: usize) -> Vec<usize> {
    let n = feats.batch_size();
    let d = feats.row_len();
    let mean: Vec<f64> = (0..d)
        .map(|j| feats.rows().map(|r| f64::from(r[j])).sum::<f64>() / n as f64)
        .collect();
    let mut chosen = Vec::with_capacity(e);
    let mut taken = vec![false; n];
    let mut sum = vec![0.0f64; d];
    for k in 0..e {
        let mut best: Option<(f64, usize)> = None;
        for (i, r) in feats.rows().enumerate() {
            if taken[i] {
                continue;
            }
            let dist: f64 = (0..d)
                .map(|j| {
                    let v = mean[j] - (sum[j] + f64::from(r[j])) / (k + 1) as f64;
                    v * v
                })
                .sum();
            match best {
                Some((bd, _)) if dist >= bd => {}
                _ => best = Some((dist, i)),
            }
        }
        let (_, i) = best.expect("fewer exemplars than samples");
        taken[i] = true;
        chosen.push(i);
        for (s, &v) in sum.iter_mut().zip(feats.row(i)) {
            *s += f64::from(v);
        }
    }
    chosen
}

/// Chooses up to `per_class` exemplars of every class in `data`.
///
/// Herding greedily keeps the running exemplar mean closest to the class
/// mean under `net`; random draws a seeded subset. Classes no larger than
/// the budget are kept whole in their original order.
pub fn select_exemplars(
    net: &Network,
    data: &LabeledDataset,
    per_class: Option<usize>,
    policy: ExemplarPolicy,
    seed: u64,
    task: usize,
) -> Result<ExemplarStore> {
    if per_class == Some(0) {
        return Err(Error::config("exemplar budget must be >= 1"));
    }
    let mut store = ExemplarStore::new(per_class);
    for &c in data.class_ids() {
        let idx = data.indices_of(c);
        let keep = match per_class {
            Some(e) if e < idx.len() => match policy {
                ExemplarPolicy::Herding => {
                    let feats = embed(net, &data.samples().select_rows(&idx)?)?;
                    herding(&feats, e).into_iter().map(|j| idx[j]).collect()
                }
                ExemplarPolicy::Random => {
                    let mut rng = ChaCha8Rng::seed_from_u64(
                        seed ^ (c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                    );
                    let mut pick: Vec<usize> = sample(&mut rng, idx.len(), e)
                        .into_iter()
                        .map(|j| idx[j])
                        .collect();
                    pick.sort_unstable();
                    pick
                }
            },
            _ => idx,
        };
        store.classes.insert(c, (task, data.subset(&keep)?));
    }
    Ok(store)
}

/// Old-class prototypes recomputed as exemplar means under `net_new`.
pub fn nme_prototypes(
    net_new: &Network,
    exemplars: &ExemplarStore,
    task: usize,
) -> Result<PrototypeStore> {
    let mut store = PrototypeStore::new(net_new.feature_dim());
    for (&c, (introduced, data)) in &exemplars.classes {
        if data.is_empty() {
            return Err(Error::EmptyClass(c));
        }
        let p = compute_prototypes(net_new, data, task)?;
        store.insert(
            c,
            p.vector(c).expect("class present").to_vec(),
            *introduced,
            task,
        )?;
    }
    Ok(store)
}

/// Cosine similarity, or `None` when either vector is shorter than
/// [`MIN_DRIFT_NORM`].
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < MIN_DRIFT_NORM || nb < MIN_DRIFT_NORM {
        return None;
    }
    Some(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// Per-class cosine similarity between an estimate and the true drift.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftQuality {
    pub per_class: BTreeMap<usize, Option<f64>>,
}

impl DriftQuality {
    /// Mean over classes with a defined similarity.
    pub fn mean(&self) -> Option<f64> {
        let defined: Vec<f64> = self.per_class.values().flatten().copied().collect();
        if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        }
    }

    pub fn undefined(&self) -> usize {
        self.per_class.values().filter(|v| v.is_none()).count()
    }
}

pub fn drift_quality(estimate: &DriftEstimate, truth: &DriftEstimate) -> Result<DriftQuality> {
    if truth.method != DriftMethod::Oracle {
        return Err(Error::Evaluation(
            "reference drift must come from the oracle".into(),
        ));
    }
    if estimate.classes() != truth.classes() {
        return Err(Error::Evaluation(format!(
            "class sets differ: {:?} vs {:?}",
            estimate.classes(),
            truth.classes()
        )));
    }
    let per_class = estimate
        .per_class
        .iter()
        .map(|(c, d)| (*c, cosine(&d.delta, &truth.per_class[c].delta)))
        .collect();
    Ok(DriftQuality { per_class })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Dense, Layer};

    fn affine_net(d: usize, bias: f32) -> Network {
        let mut w = vec![0.0; d * d];
        for i in 0..d {
            w[i * d + i] = 1.0;
        }
        let layer = Dense::new(d, d, w, vec![bias; d]).unwrap();
        Network::from_layers(vec![d], vec![Layer::Dense(layer)]).unwrap()
    }

    fn current() -> LabeledDataset {
        let data = vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 3.0, 3.0, 2.5, 3.5];
        LabeledDataset::new(
            Tensor::matrix(5, 2, data).unwrap(),
            vec![2, 2, 2, 3, 3],
            (-10.0, 10.0),
        )
        .unwrap()
    }

    fn old_store() -> PrototypeStore {
        let mut s = PrototypeStore::new(2);
        s.insert(0, vec![0.2, 0.2], 0, 0).unwrap();
        s.insert(1, vec![3.0, 3.0], 0, 0).unwrap();
        s
    }

    fn attack() -> AttackConfig {
        AttackConfig {
            alpha: 0.3,
            iterations: 3,
            m: 3,
            pixel_range: (-10.0, 10.0),
        }
    }

    #[test]
    fn identical_nets_give_zero_drift() {
        let net = affine_net(2, 0.0);
        let adc = adc_compensate(&net, &net, &old_store(), &current(), &attack(), 1).unwrap();
        let sdc = sdc_compensate(&net, &net, &old_store(), &current(), 0.3, 1).unwrap();
        for comp in [&adc, &sdc] {
            for d in comp.estimate.per_class.values() {
                assert!(d.delta.iter().all(|&v| v == 0.0));
            }
            for (c, p) in comp.store.iter() {
                assert_eq!(p.vector, old_store().vector(c).unwrap());
            }
        }
        assert_eq!(adc.backward_passes, 6);
    }

    #[test]
    fn constant_shift_is_recovered() {
        let prev = affine_net(2, 0.0);
        let new = affine_net(2, 0.75);
        let adc = adc_compensate(&prev, &new, &old_store(), &current(), &attack(), 1).unwrap();
        let sdc = sdc_compensate(&prev, &new, &old_store(), &current(), 0.3, 1).unwrap();
        for comp in [adc, sdc] {
            for d in comp.estimate.per_class.values() {
                assert!(d.delta.iter().all(|&v| (v - 0.75).abs() < 1e-6));
            }
            assert_eq!(comp.store.get(0).unwrap().last_updated, 1);
        }
    }

    #[test]
    fn sdc_single_sample_ignores_sigma() {
        let prev = affine_net(2, 0.0);
        let mut new = affine_net(2, 0.0);
        if let Layer::Dense(d) = &mut new.layers_mut()[0] {
            d.weight[0] = 2.0;
        }
        let one = LabeledDataset::new(
            Tensor::matrix(1, 2, vec![1.5, -1.0]).unwrap(),
            vec![5],
            (-10.0, 10.0),
        )
        .unwrap();
        for sigma in [0.3, 5.0] {
            let c = sdc_compensate(&prev, &new, &old_store(), &one, sigma, 1).unwrap();
            assert_eq!(c.estimate.get(0).unwrap().delta, vec![1.5, 0.0]);
        }
    }

    #[test]
    fn sdc_underflow_keeps_prototype() {
        let prev = affine_net(2, 0.0);
        let new = affine_net(2, 1.0);
        let mut far = PrototypeStore::new(2);
        far.insert(0, vec![1000.0, 1000.0], 0, 0).unwrap();
        let c = sdc_compensate(&prev, &new, &far, &current(), 0.3, 1).unwrap();
        let d = c.estimate.get(0).unwrap();
        assert_eq!(d.n_contributing, 0);
        assert_eq!(d.delta, vec![0.0, 0.0]);
        assert!(sdc_compensate(&prev, &new, &far, &current(), 0.0, 1).is_err());
    }

    #[test]
    fn adc_empty_task_and_zero_success() {
        let net = affine_net(2, 0.0);
        // Class 0 sits far from every current sample and class 1 blocks the path.
        let mut s = PrototypeStore::new(2);
        s.insert(0, vec![-9.0, -9.0], 0, 0).unwrap();
        s.insert(1, vec![3.0, 3.0], 0, 0).unwrap();
        let cfg = AttackConfig {
            alpha: 0.01,
            iterations: 1,
            m: 1,
            pixel_range: (-10.0, 10.0),
        };
        let c = adc_compensate(&net, &affine_net(2, 1.0), &s, &current(), &cfg, 1).unwrap();
        let d0 = c.estimate.get(0).unwrap();
        assert_eq!(d0.n_contributing, 0);
        assert_eq!(d0.delta, vec![0.0, 0.0]);
        assert_eq!(c.store.vector(0).unwrap(), &[-9.0, -9.0]);
    }

    #[test]
    fn oracle_matches_recomputed_prototypes() {
        let prev = affine_net(2, 0.0);
        let new = affine_net(2, -0.5);
        let mut sealed = SealedOldData::new();
        sealed.retain(&current(), 0).unwrap();
        let est = oracle_drift(&prev, &new, &sealed, &[2, 3]).unwrap();
        let before = compute_prototypes(&prev, &current(), 0).unwrap();
        let after = compute_prototypes(&new, &current(), 0).unwrap();
        for c in [2, 3] {
            let expected: Vec<f64> = after
                .vector(c)
                .unwrap()
                .iter()
                .zip(before.vector(c).unwrap())
                .map(|(a, b)| f64::from(*a) - f64::from(*b))
                .collect();
            for (a, b) in est.get(c).unwrap().delta.iter().zip(expected) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        assert!(matches!(
            oracle_drift(&prev, &new, &sealed, &[7]),
            Err(Error::OracleUnavailable(7))
        ));
    }

    #[test]
    fn exemplar_policies() {
        let net = affine_net(2, 0.0);
        let data = current();
        let all = select_exemplars(&net, &data, Some(3), ExemplarPolicy::Herding, 0, 0).unwrap();
        assert_eq!(
            all.class(2).unwrap().samples(),
            data.subset(&[0, 1, 2]).unwrap().samples()
        );
        // Class 2 mean is (1/3, 1/3); every sample is equally far, lowest index wins.
        let one = select_exemplars(&net, &data, Some(1), ExemplarPolicy::Herding, 0, 0).unwrap();
        assert_eq!(one.class(2).unwrap().sample(0), &[0.0, 0.0]);
        let r1 = select_exemplars(&net, &data, Some(2), ExemplarPolicy::Random, 5, 0).unwrap();
        let r2 = select_exemplars(&net, &data, Some(2), ExemplarPolicy::Random, 5, 0).unwrap();
        assert_eq!(
            r1.class(2).unwrap().samples(),
            r2.class(2).unwrap().samples()
        );
        assert_eq!(r1.total(), 4);
        assert_eq!(r1.budget(), Some(4));
        assert!(select_exemplars(&net, &data, Some(0), ExemplarPolicy::Random, 0, 0).is_err());
    }

    #[test]
    fn nme_full_memory_equals_oracle() {
        let new = affine_net(2, 0.25);
        let data = current();
        let ex = select_exemplars(&new, &data, None, ExemplarPolicy::Herding, 0, 0).unwrap();
        let mut sealed = SealedOldData::new();
        sealed.retain(&data, 0).unwrap();
        assert_eq!(
            nme_prototypes(&new, &ex, 1).unwrap(),
            oracle_prototypes(&new, &sealed, 1).unwrap()
        );
    }

    #[test]
    fn quality_signs_and_errors() {
        let mut truth = DriftEstimate::new(DriftMethod::Oracle, 2);
        truth
            .insert(
                0,
                ClassDrift {
                    delta: vec![1.0, 2.0],
                    n_contributing: 1,
                },
            )
            .unwrap();
        truth
            .insert(
                1,
                ClassDrift {
                    delta: vec![0.0, 0.0],
                    n_contributing: 1,
                },
            )
            .unwrap();
        let mut est = truth.clone();
        est.method = DriftMethod::Adc;
        let q = drift_quality(&est, &truth).unwrap();
        assert!((q.per_class[&0].unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(q.per_class[&1], None);
        assert_eq!(q.undefined(), 1);
        est.per_class.get_mut(&0).unwrap().delta = vec![-1.0, -2.0];
        assert!((drift_quality(&est, &truth).unwrap().mean().unwrap() + 1.0).abs() < 1e-12);
        est.per_class.remove(&1);
        assert!(drift_quality(&est, &truth).is_err());
        assert!(drift_quality(&truth, &est).is_err());
    }
}
