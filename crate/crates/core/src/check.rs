//! Self-checks run by `adc check`: analytic gradients against finite
//! differences, and the core routines against brute-force recomputation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attack::closest_rows;
use crate::drift::{adc_compensate, sdc_compensate};
use crate::error::Result;
use crate::eval::expected_backward_passes;
use crate::net::{Architecture, LossSpec, Network, Objective};
use crate::proto::{compute_prototypes, ncm_classify, PrototypeStore};
use crate::reference::{fd_input_gradient, fd_param_gradient, GradCheck, RefObjective, FD_STEP};
use crate::tensor::{squared_distance, Tensor};
use crate::{AttackConfig, LabeledDataset};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn small_mlp(rng: &mut ChaCha8Rng, classes: usize) -> Result<Network> {
    let arch = Architecture::Mlp {
        hidden: vec![12, 10],
        feature_dim: 6,
        final_relu: true,
    };
    let mut net = Network::new(&[5], &arch, rng)?;
    net.extend_head(classes, rng);
    Ok(net)
}

fn small_conv(rng: &mut ChaCha8Rng, classes: usize) -> Result<Network> {
    let arch = Architecture::Conv {
        channels: 3,
        kernel: 3,
        feature_dim: 5,
    };
    let mut net = Network::new(&[1, 5, 5], &arch, rng)?;
    net.extend_head(classes, rng);
    Ok(net)
}

/// Input and parameter gradients of `draws` random networks.
pub fn gradient_check(seed: u64, draws: usize) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = GradCheck::default();
    for draw in 0..draws {
        let net = if draw % 2 == 0 {
            small_mlp(&mut rng, 4)?
        } else {
            small_conv(&mut rng, 4)?
        };
        let n = 3;
        let batch = Tensor::new(
            std::iter::once(n)
                .chain(net.input_shape().iter().copied())
                .collect(),
            uniform(&mut rng, n * net.input_len(), -1.0, 1.0),
        )?;
        let proto = uniform(&mut rng, net.feature_dim(), -0.5, 0.5);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();

        let analytic = net.input_gradient(
            &batch,
            &Objective::PrototypeDistance {
                prototype: &proto,
                mean: true,
            },
        )?;
        let fd = fd_input_gradient(
            &net,
            &batch,
            &RefObjective::PrototypeDistance {
                prototype: proto.iter().map(|&v| f64::from(v)).collect(),
                mean: true,
            },
            FD_STEP,
        );
        total = total.merge(GradCheck::compare(analytic.data(), &fd));

        let teacher = Tensor::matrix(n, 2, uniform(&mut rng, n * 2, -2.0, 2.0))?;
        let spec = LossSpec::Distillation {
            teacher_logits: &teacher,
            lambda: 10.0,
            temperature: 2.0,
        };
        let grads = net.param_gradient(&batch, &labels, &spec)?;
        let fd = fd_param_gradient(
            &net,
            &batch,
            &RefObjective::Distillation {
                labels: labels.clone(),
                teacher_logits: teacher
                    .rows()
                    .map(|r| r.iter().map(|&v| f64::from(v)).collect())
                    .collect(),
                lambda: 10.0,
                temperature: 2.0,
            },
            FD_STEP,
        );
        total = total.merge(GradCheck::compare(&grads.flat(), &fd));
    }
    Ok(total)
}

/// NCM against an exhaustive scan with explicit tie handling.
fn ncm_check(rng: &mut ChaCha8Rng) -> Result<bool> {
    let mut store = PrototypeStore::new(4);
    let protos: Vec<Vec<f32>> = (0..50).map(|_| uniform(rng, 4, -1.0, 1.0)).collect();
    for (c, p) in protos.iter().enumerate() {
        store.insert(c, p.clone(), 0, 0)?;
    }
    for _ in 0..1000 {
        let q = uniform(rng, 4, -1.0, 1.0);
        let d: Vec<f64> = protos.iter().map(|p| squared_distance(&q, p)).collect();
        let min = d.iter().copied().fold(f64::INFINITY, f64::min);
        let expected = d.iter().position(|&v| v == min).expect("non-empty");
        if ncm_classify(&q, &store)? != expected {
            return Ok(false);
        }
    }
    Ok(true)
}

fn prototype_check(rng: &mut ChaCha8Rng) -> Result<bool> {
    let net = small_mlp(rng, 1)?;
    let n = 40;
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let x = Tensor::matrix(n, 5, uniform(rng, n * 5, -1.0, 1.0))?;
    let data = LabeledDataset::new(x, labels, (-1.0, 1.0))?;
    let store = compute_prototypes(&net, &data, 0)?;
    let feats = net.forward_features(data.samples())?;
    for c in 0..3 {
        let rows: Vec<&[f32]> = feats
            .rows()
            .zip(data.labels())
            .filter(|(_, &y)| y == c)
            .map(|(r, _)| r)
            .collect();
        for j in 0..net.feature_dim() {
            let mean = rows.iter().map(|r| f64::from(r[j])).sum::<f64>() / rows.len() as f64;
            if (mean - f64::from(store.vector(c).expect("class")[j])).abs() >= 1e-6 {
                return Ok(false);
            }
        }
    }
    let sorted = closest_rows(&feats, store.vector(0).expect("class"), 7)?;
    let mut brute: Vec<(f64, usize)> = feats
        .rows()
        .enumerate()
        .map(|(i, r)| (squared_distance(r, store.vector(0).expect("class")), i))
        .collect();
    brute.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    Ok(sorted == brute.iter().take(7).map(|p| p.1).collect::<Vec<_>>())
}

fn identity_drift_check(rng: &mut ChaCha8Rng) -> Result<bool> {
    let net = small_mlp(rng, 2)?;
    let n = 30;
    let x = Tensor::matrix(n, 5, uniform(rng, n * 5, -1.0, 1.0))?;
    let data = LabeledDataset::new(x, (0..n).map(|i| 2 + i % 2).collect(), (-1.0, 1.0))?;
    let mut old = PrototypeStore::new(net.feature_dim());
    for c in 0..2 {
        old.insert(c, uniform(rng, net.feature_dim(), 0.0, 0.5), 0, 0)?;
    }
    let cfg = AttackConfig::with_defaults((-1.0, 1.0));
    let adc = adc_compensate(&net, &net, &old, &data, &cfg, 1)?;
    let sdc = sdc_compensate(&net, &net, &old, &data, 0.3, 1)?;
    Ok([adc, sdc].iter().all(|c| {
        c.estimate
            .per_class
            .values()
            .all(|d| d.delta.iter().all(|v| v.abs() < 1e-6))
            && c.store == {
                let mut s = old.clone();
                for (k, p) in old.iter() {
                    s.insert(k, p.vector.clone(), p.introduced, 1)
                        .expect("valid");
                }
                s
            }
    }))
}

/// Runs every self-check.
pub fn run_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grads = gradient_check(seed, 20)?;
    let passes = expected_backward_passes(10, 10, 3);
    Ok(vec![
        CheckResult {
            name: "gradients vs finite differences",
            passed: grads.passes(),
            detail: format!(
                "{} coords, {} kinked, {:.4} within rel tol, max rel {:.2e}",
                grads.coords,
                grads.kinked,
                grads.rel_fraction(),
                grads.max_rel
            ),
        },
        CheckResult {
            name: "ncm vs exhaustive scan",
            passed: ncm_check(&mut rng)?,
            detail: "50 prototypes, 1000 queries".into(),
        },
        CheckResult {
            name: "prototypes and selection vs brute force",
            passed: prototype_check(&mut rng)?,
            detail: "two-pass mean, full sort".into(),
        },
        CheckResult {
            name: "identical networks give zero drift",
            passed: identity_drift_check(&mut rng)?,
            detail: "adc and sdc".into(),
        },
        CheckResult {
            name: "backward pass accounting",
            passed: passes == 1350,
            detail: format!("10 tasks x 10 classes, 3 iterations: {passes}"),
        },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for r in run_checks(5).unwrap() {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
