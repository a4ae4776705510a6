//! Adam with bias correction, on a flat parameter vector.

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize, learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            eps,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One descent step on `params` given the loss gradient.
    ///
    /// # Panics
    /// If `params` or `grad` do not have the length the state was built for.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "parameter length changed");
        assert_eq!(grad.len(), self.m.len(), "gradient length mismatch");
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut st = AdamState::new(3, 1e-3, 0.9, 0.999, 1e-8);
        let mut p = vec![1.0, 1.0, 1.0];
        st.step(&mut p, &[0.5, -2.0, 0.0]);
        // m̂ = g, v̂ = g², so the step is lr·g/(|g|+eps)
        assert!((p[0] - (1.0 - 1e-3 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
        assert!((p[1] - (1.0 + 1e-3 * 2.0 / (2.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(p[2], 1.0);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn moments_follow_recurrence() {
        let mut st = AdamState::new(1, 0.1, 0.9, 0.999, 1e-8);
        let mut p = vec![0.0];
        st.step(&mut p, &[1.0]);
        st.step(&mut p, &[3.0]);
        let m = 0.9 * 0.1 + 0.1 * 3.0;
        let v = 0.999 * 0.001 + 0.001 * 9.0;
        assert!((st.first_moment()[0] - m).abs() < 1e-15);
        assert!((st.second_moment()[0] - v).abs() < 1e-15);
        let step2 = 0.1 * (m / (1.0 - 0.81)) / ((v / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        assert!((p[0] - (-0.1 / (1.0 + 1e-8) - step2)).abs() < 1e-12);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut st = AdamState::new(2, 0.05, 0.9, 0.999, 1e-8);
        let mut p = vec![3.0, -2.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0), 4.0 * (p[1] + 0.5)];
            st.step(&mut p, &g);
        }
        assert!((p[0] - 1.0).abs() < 1e-3 && (p[1] + 0.5).abs() < 1e-3);
    }
}
