use crate::model::Parameters;
use crate::scalar::Scalar;

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub learning_rate: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    step: i32,
    m: Parameters<S>,
    v: Parameters<S>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(params: &Parameters<S>, learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            learning_rate: S::lit(learning_rate),
            beta1: S::lit(beta1),
            beta2: S::lit(beta2),
            eps: S::lit(eps),
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, params: &mut Parameters<S>, grad: &Parameters<S>) {
        self.step += 1;
        let one = S::one();
        let bc1 = one - self.beta1.powi(self.step);
        let bc2 = one - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.eps);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for (((p, g), m), v) in tensors {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
