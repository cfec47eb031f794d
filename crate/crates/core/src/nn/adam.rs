use super::param::Param;

/// Adam with bias correction. State is keyed by parameter order, so the
/// same module must be passed on every step.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    /// `grad_scale` multiplies every gradient first (e.g. 1/batch).
    pub fn step(&mut self, params: Vec<&mut Param>, grad_scale: f32) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer bound to another module");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let step_size = (self.lr / bc1) as f32;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = self.eps as f32;
        for (i, p) in params.into_iter().enumerate() {
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.value.len() {
                let g = p.grad[j] * grad_scale;
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                p.value[j] -= step_size * m[j] / (v[j].sqrt() / bc2_sqrt + eps);
            }
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Param::filled("x", vec![2], 1.0);
        p.grad = vec![3.0, -0.5];
        let mut adam = Adam::new(0.01, 0.9, 0.999);
        adam.step(vec![&mut p], 1.0);
        assert!((p.value[0] - 0.99).abs() < 1e-6);
        assert!((p.value[1] - 1.01).abs() < 1e-6);
        assert_eq!(p.grad, vec![0.0, 0.0]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Param::filled("x", vec![1], 5.0);
        let mut adam = Adam::new(0.1, 0.9, 0.999);
        for _ in 0..500 {
            p.grad[0] = 2.0 * (p.value[0] - 2.0);
            adam.step(vec![&mut p], 1.0);
        }
        assert!((p.value[0] - 2.0).abs() < 1e-2);
    }

    #[test]
    fn buffers_are_left_alone() {
        let mut b = Param::buffer("running", vec![1], 0.5);
        b.grad[0] = 1.0;
        Adam::new(0.1, 0.9, 0.999).step(vec![&mut b], 1.0);
        assert_eq!(b.value[0], 0.5);
    }
}
