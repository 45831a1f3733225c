use super::{AutodiffError, Tensor};

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.second
    }

    /// One update of every tensor in `params` from the matching `grads`.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<(), AutodiffError> {
        if params.len() != grads.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam_step",
                left: vec![params.len()],
                right: vec![grads.len()],
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len()
            || self.first.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len())
        {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam_step",
                left: self.first.iter().map(Vec::len).collect(),
                right: params.iter().map(Tensor::len).collect(),
            });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_leaves_params_and_decays_moments() {
        let mut adam = Adam::new(0.1);
        let mut p = vec![Tensor::vector(vec![1.0, -2.0])];
        adam.step(&mut p, &[Tensor::vector(vec![1.0, 1.0])]).unwrap();
        let before = p[0].clone();
        let m_before = adam.first_moments()[0].clone();
        adam.step(&mut p, &[Tensor::zeros(&[2])]).unwrap();
        assert_eq!(adam.first_moments()[0][0], 0.9 * m_before[0]);
        // The decayed first moment still moves the weight; with a truly fresh
        // optimizer a zero gradient leaves it alone.
        let mut fresh = Adam::new(0.1);
        let mut q = before.clone();
        fresh.step(std::slice::from_mut(&mut q), &[Tensor::zeros(&[2])]).unwrap();
        assert_eq!(q, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut adam = Adam::new(0.1);
        let mut p = vec![Tensor::scalar(0.5)];
        adam.step(&mut p, &[Tensor::scalar(1.0)]).unwrap();
        // m_hat = 1, v_hat = 1 -> delta = 0.1 / (1 + 1e-8)
        assert!((p[0].item() - (0.5 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut adam = Adam::new(0.1);
        let mut p = vec![Tensor::zeros(&[2])];
        assert!(adam.step(&mut p, &[Tensor::zeros(&[3])]).is_err());
    }
}
