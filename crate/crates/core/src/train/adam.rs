use crate::nets::Scalar;

/// Adam with bias correction. Moments are kept in the parameter precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<F>,
    pub v: Vec<F>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: vec![F::zero(); n],
            v: vec![F::zero(); n],
        }
    }

    pub fn step(&mut self, params: &mut [F], grads: &[F]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = Scalar::to_f64(grads[i]);
            let m = self.beta1 * Scalar::to_f64(self.m[i]) + (1.0 - self.beta1) * g;
            let v = self.beta2 * Scalar::to_f64(self.v[i]) + (1.0 - self.beta2) * g * g;
            self.m[i] = F::of(m);
            self.v[i] = F::of(v);
            let update = self.lr * (m / c1) / ((v / c2).sqrt() + self.eps);
            params[i] = F::of(Scalar::to_f64(params[i]) - update);
        }
    }
}

/// Global L2 norm of `g`, rescaling it in place to at most `max_norm`
/// (no-op when `max_norm` is 0). Returns the norm before clipping.
pub fn clip_global_norm<F: Scalar>(g: &mut [F], max_norm: f64) -> f64 {
    let norm = g.iter().map(|&v| Scalar::to_f64(v) * Scalar::to_f64(v)).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = F::of(max_norm / norm);
        for v in g.iter_mut() {
            *v *= s;
        }
    }
    norm
}
