use crate::model::{Gradients, Parameters, Scalar};

/// Adam with bias correction and decoupled weight decay. Moments are kept
/// in 64-bit regardless of the parameter type.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(shapes: &[usize], betas: (f64, f64), eps: f64, weight_decay: f64) -> Self {
        Self {
            beta1: betas.0,
            beta2: betas.1,
            eps,
            weight_decay,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params<T: Scalar>(params: &Parameters<T>, betas: (f64, f64), eps: f64, weight_decay: f64) -> Self {
        let shapes: Vec<usize> = params.tensors.iter().map(|t| t.data.len()).collect();
        Self::new(&shapes, betas, eps, weight_decay)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every tensor. `decay[i]` selects tensors that receive
    /// weight decay.
    pub fn update<T: Scalar>(&mut self, tensors: &mut [&mut [T]], grads: &[&[T]], lr: f64, decay: &[bool]) {
        assert_eq!(tensors.len(), self.m.len(), "tensor count");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in tensors.iter_mut().enumerate() {
            let g = grads[i];
            let wd = if decay[i] { self.weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let gj = g[j].as_f64();
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                let mut x = p[j].as_f64();
                x -= lr * wd * x;
                x -= lr * mhat / (vhat.sqrt() + self.eps);
                p[j] = T::of(x);
            }
        }
    }

    /// Weight decay goes to matrices only, never to biases or norm gains.
    pub fn step<T: Scalar>(&mut self, params: &mut Parameters<T>, grads: &Gradients<T>, lr: f64) {
        let decay: Vec<bool> = params.tensors.iter().map(|t| t.shape.len() == 2).collect();
        let mut ts: Vec<&mut [T]> = params.tensors.iter_mut().map(|t| t.data.as_mut_slice()).collect();
        let gs: Vec<&[T]> = grads.tensors.iter().map(Vec::as_slice).collect();
        self.update(&mut ts, &gs, lr, &decay);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook Adam, one scalar at a time, on f(x) = sum_i a_i (x_i - c_i)^2.
    #[test]
    fn matches_hand_oracle_on_quadratic() {
        let a = [1.0, 3.0, 0.5];
        let c = [0.3, -1.2, 2.0];
        let grad = |x: &[f64]| -> Vec<f64> { (0..3).map(|i| 2.0 * a[i] * (x[i] - c[i])).collect() };
        let (lr, b1, b2, eps) = (0.05, 0.9, 0.999, 1e-8);

        let mut x = vec![1.0f64, 1.0, -1.0];
        let mut opt = Adam::new(&[3], (b1, b2), eps, 0.0);

        let mut y = x.clone();
        let (mut m, mut v) = ([0.0f64; 3], [0.0f64; 3]);
        for t in 1..=200 {
            let g = grad(&x);
            opt.update(&mut [x.as_mut_slice()], &[g.as_slice()], lr, &[false]);

            let gy = grad(&y);
            for i in 0..3 {
                m[i] = b1 * m[i] + (1.0 - b1) * gy[i];
                v[i] = b2 * v[i] + (1.0 - b2) * gy[i] * gy[i];
                let mh = m[i] / (1.0 - b1.powi(t));
                let vh = v[i] / (1.0 - b2.powi(t));
                y[i] -= lr * mh / (vh.sqrt() + eps);
            }
            for i in 0..3 {
                assert!((x[i] - y[i]).abs() < 1e-10, "step {t} coord {i}: {} vs {}", x[i], y[i]);
            }
        }
        for i in 0..3 {
            assert!((x[i] - c[i]).abs() < 1e-2);
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut x = vec![0.0f64, 0.0];
        let mut opt = Adam::new(&[2], (0.9, 0.999), 1e-8, 0.0);
        opt.update(&mut [x.as_mut_slice()], &[&[2.0, -0.5][..]], 0.1, &[false]);
        assert!((x[0] + 0.1).abs() < 1e-8 && (x[1] - 0.1).abs() < 1e-8);
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let mut x = vec![1.0f64];
        let mut opt = Adam::new(&[1], (0.9, 0.999), 1e-8, 0.1);
        opt.update(&mut [x.as_mut_slice()], &[&[0.0][..]], 0.5, &[true]);
        assert!((x[0] - 0.95).abs() < 1e-12);
    }
}
