use crate::error::{Error, Result};
use crate::net::{GradientSet, Network};

/// SGD with heavy-ball momentum and coupled L2 weight decay:
///
/// ```text
/// g' = g + weight_decay · θ
/// v  = momentum · v + g'
/// θ  = θ − lr · v
/// ```
///
/// Velocity buffers live as long as the optimizer; create a fresh `Sgd`
/// per task to reset them.
#[derive(Debug, Clone)]
pub struct Sgd {
    momentum: f32,
    weight_decay: f32,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(momentum: f32, weight_decay: f32) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum {momentum} outside [0, 1)")));
        }
        if weight_decay < 0.0 || !weight_decay.is_finite() {
            return Err(Error::config(format!(
                "weight decay {weight_decay} must be >= 0"
            )));
        }
        Ok(Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }

    pub fn velocity(&self) -> &[Vec<f32>] {
        &self.velocity
    }

    pub fn step(&mut self, net: &mut Network, grads: &GradientSet, lr: f32) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::config(format!("learning rate {lr} must be > 0")));
        }
        if !grads.is_finite() {
            return Err(Error::Numeric("sgd gradient"));
        }
        let mut params = net.params_mut();
        if grads.tensors.len() != params.len() {
            return Err(Error::Dimension {
                context: "gradient set",
                expected: params.len(),
                actual: grads.tensors.len(),
            });
        }
        // The head may have grown since the last step; grow velocity with it.
        self.velocity.resize_with(params.len(), Vec::new);
        for ((p, g), v) in params
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.velocity)
        {
            if g.len() != p.len() {
                return Err(Error::Dimension {
                    context: "gradient tensor",
                    expected: p.len(),
                    actual: g.len(),
                });
            }
            v.resize(p.len(), 0.0);
            for ((theta, &gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                let gi = gi + self.weight_decay * *theta;
                *vi = self.momentum * *vi + gi;
                *theta -= lr * *vi;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Dense, Layer};

    fn scalar_net(w: f32) -> Network {
        let dense = Dense::new(1, 1, vec![w], vec![0.0]).unwrap();
        Network::from_layers(vec![1], vec![Layer::Dense(dense)]).unwrap()
    }

    fn grads(g: f32) -> GradientSet {
        GradientSet {
            tensors: vec![vec![g], vec![0.0], vec![]],
        }
    }

    #[test]
    fn plain_step() {
        let mut net = scalar_net(1.0);
        let mut opt = Sgd::new(0.0, 0.0).unwrap();
        opt.step(&mut net, &grads(0.5), 0.1).unwrap();
        assert_eq!(net.params()[0], &[1.0 - 0.1 * 0.5]);
    }

    #[test]
    fn momentum_second_step_uses_1_9_g() {
        let mut net = scalar_net(0.0);
        let mut opt = Sgd::new(0.9, 0.0).unwrap();
        opt.step(&mut net, &grads(1.0), 0.1).unwrap();
        opt.step(&mut net, &grads(1.0), 0.1).unwrap();
        assert!((opt.velocity()[0][0] - 1.9).abs() < 1e-6);
        assert!((net.params()[0][0] - (-0.1 - 0.19)).abs() < 1e-6);
    }

    #[test]
    fn weight_decay_hand_unrolled() {
        let (lr, mu, wd) = (0.05f32, 0.9f32, 5e-4f32);
        let mut net = scalar_net(2.0);
        let mut opt = Sgd::new(mu, wd).unwrap();
        let g = 0.3f32;
        opt.step(&mut net, &grads(g), lr).unwrap();
        opt.step(&mut net, &grads(g), lr).unwrap();
        let theta0 = 2.0f32;
        let v1 = g + wd * theta0;
        let theta1 = theta0 - lr * v1;
        let v2 = mu * v1 + g + wd * theta1;
        let theta2 = theta1 - lr * v2;
        assert!((net.params()[0][0] - theta2).abs() < 1e-7);
    }

    #[test]
    fn rejects_non_finite_gradient_and_bad_hyperparameters() {
        let mut net = scalar_net(1.0);
        let mut opt = Sgd::new(0.9, 0.0).unwrap();
        assert!(matches!(
            opt.step(&mut net, &grads(f32::NAN), 0.1),
            Err(Error::Numeric(_))
        ));
        assert!(Sgd::new(1.0, 0.0).is_err());
        assert!(Sgd::new(0.5, -1.0).is_err());
        assert!(opt.step(&mut net, &grads(1.0), 0.0).is_err());
    }
}
