//! Softmax cross-entropy and temperature-softened logit distillation.
//!
//! Every function returns the batch-mean loss together with its gradient
//! with respect to the (student) logits, so the network can backpropagate
//! from there. Softmax always subtracts the row maximum first.

use crate::error::{Error, Result};

/// Numerically stable softmax of `logits / temperature`, computed in `f64`.
pub fn softmax(logits: &[f32], temperature: f64) -> Vec<f64> {
    let max = logits
        .iter()
        .map(|&z| f64::from(z) / temperature)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .map(|&z| (f64::from(z) / temperature - max).exp())
        .collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log_softmax(logits / temperature)` without forming the probabilities first.
pub fn log_softmax(logits: &[f32], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|&z| f64::from(z) / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scaled.into_iter().map(|s| s - lse).collect()
}

/// Mean cross-entropy of `logits` (shape `n × classes`) against integer labels.
pub fn cross_entropy(logits: &[f32], classes: usize, labels: &[usize]) -> Result<(f64, Vec<f32>)> {
    let n = labels.len();
    if logits.len() != n * classes {
        return Err(Error::Dimension {
            context: "cross-entropy logits",
            expected: n * classes,
            actual: logits.len(),
        });
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0f32; logits.len()];
    let scale = 1.0 / n as f64;
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Label { label: y, classes });
        }
        let row = &logits[i * classes..(i + 1) * classes];
        let logp = log_softmax(row, 1.0);
        loss -= logp[y];
        for (c, lp) in logp.iter().enumerate() {
            let p = lp.exp();
            let target = if c == y { 1.0 } else { 0.0 };
            grad[i * classes + c] = ((p - target) * scale) as f32;
        }
    }
    Ok((loss * scale, grad))
}

/// Distillation loss between student and teacher logits over the same
/// `old_classes` columns.
///
/// `student` has row stride `student_stride` (it may carry extra new-class
/// columns that are ignored); `teacher` is dense `n × old_classes`. The
/// returned gradient has the student's full layout, zero outside the old
/// columns. No gradient is produced for the teacher.
pub fn distillation(
    student: &[f32],
    student_stride: usize,
    teacher: &[f32],
    old_classes: usize,
    temperature: f64,
) -> Result<(f64, Vec<f32>)> {
    if temperature <= 0.0 {
        return Err(Error::config("temperature must be positive"));
    }
    if old_classes == 0 || old_classes > student_stride {
        return Err(Error::Dimension {
            context: "distillation old-class columns",
            expected: student_stride,
            actual: old_classes,
        });
    }
    if teacher.len() % old_classes != 0 {
        return Err(Error::Dimension {
            context: "distillation teacher logits",
            expected: old_classes,
            actual: teacher.len(),
        });
    }
    let n = teacher.len() / old_classes;
    if student.len() != n * student_stride {
        return Err(Error::Dimension {
            context: "distillation student logits",
            expected: n * student_stride,
            actual: student.len(),
        });
    }
    let scale = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0f32; student.len()];
    for i in 0..n {
        let s = &student[i * student_stride..i * student_stride + old_classes];
        let t = &teacher[i * old_classes..(i + 1) * old_classes];
        let p_teacher = softmax(t, temperature);
        let logq = log_softmax(s, temperature);
        loss -= p_teacher
            .iter()
            .zip(&logq)
            .map(|(p, lq)| p * lq)
            .sum::<f64>();
        for c in 0..old_classes {
            let q = logq[c].exp();
            grad[i * student_stride + c] = ((q - p_teacher[c]) * scale / temperature) as f32;
        }
    }
    Ok((loss * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let p = softmax(&[0.0, 0.0, 0.0, 0.0], 1.0);
        for v in p {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_survives_large_logits() {
        let p = softmax(&[1000.0, 999.0], 1.0);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        assert!(matches!(
            cross_entropy(&[0.0, 0.0], 2, &[2]),
            Err(Error::Label {
                label: 2,
                classes: 2
            })
        ));
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let (loss, grad) = cross_entropy(&[1.0, 0.0], 2, &[0]).unwrap();
        let p0 = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((loss + p0.ln()).abs() < 1e-12);
        assert!((f64::from(grad[0]) - (p0 - 1.0)).abs() < 1e-7);
        assert!((f64::from(grad[1]) - (1.0 - p0)).abs() < 1e-7);
    }

    #[test]
    fn distillation_ignores_new_columns() {
        let (_, grad) = distillation(&[1.0, 0.0, 5.0], 3, &[0.0, 1.0], 2, 2.0).unwrap();
        assert_eq!(grad[2], 0.0);
    }
}
