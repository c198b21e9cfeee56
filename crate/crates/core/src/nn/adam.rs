use serde::{Deserialize, Serialize};

use super::{ShapeError, Tensor};

/// Adam with bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `params` and `grads` must line up one-to-one and
    /// keep the same order across calls.
    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<(), ShapeError> {
        if params.len() != grads.len() {
            return Err(ShapeError::new(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return Err(ShapeError::new(format!(
                    "parameter of {} values, gradient of {}",
                    p.len(),
                    g.len()
                )));
            }
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
            self.v = self.m.clone();
        } else if self.m.len() != grads.len() || self.m.iter().zip(grads).any(|(m, g)| m.len() != g.len()) {
            return Err(ShapeError::new("optimizer state does not match parameters"));
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let (pd, gd) = (p.data_mut(), g.data());
            for (((pi, &gi), mi), vi) in pd.iter_mut().zip(gd).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::row_vector(vec![1.0, -2.0]);
        let mut adam = Adam::new(0.001);
        adam.update(&mut [&mut p], &[Tensor::zeros(&[1, 2])]).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut p = Tensor::row_vector(vec![1.0, -2.0]);
        let mut adam = Adam::new(0.0);
        adam.update(&mut [&mut p], &[Tensor::row_vector(vec![3.0, 4.0])])
            .unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        // m1 = 0.1 g, v1 = 0.001 g^2; m_hat = g, v_hat = g^2;
        // step = -lr * g / (|g| + eps).
        let g = [0.5, -3.0, 1e-3];
        let mut p = Tensor::row_vector(vec![0.0; 3]);
        let mut adam = Adam::new(0.001);
        adam.update(&mut [&mut p], &[Tensor::row_vector(g.to_vec())]).unwrap();
        for (pi, gi) in p.data().iter().zip(g) {
            let m = 0.1 * gi;
            let v = 0.001 * gi * gi;
            let expected = -0.001 * (m / 0.1) / ((v / (1.0 - 0.999_f64)).sqrt() + 1e-8);
            assert!((pi - expected).abs() < 1e-18, "{pi} vs {expected}");
            assert!((pi + 0.001 * gi.signum()).abs() < 1e-7);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = Tensor::row_vector(vec![0.0; 3]);
        let mut adam = Adam::new(0.001);
        assert!(adam.update(&mut [&mut p], &[Tensor::row_vector(vec![1.0; 2])]).is_err());
    }
}
