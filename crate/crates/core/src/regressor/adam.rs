use serde::{Deserialize, Serialize};

use crate::exec::{self, Execution};
use crate::real::{ParamBuf, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments of one parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> AdamMoments<T> {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }
}

/// One bias-corrected Adam update of `param` at 1-based step `t`.
pub fn adam_update<T: Real>(
    exec: Execution,
    cfg: &AdamConfig,
    lr: f64,
    t: usize,
    param: &mut ParamBuf<T>,
    moments: &mut AdamMoments<T>,
) {
    const CHUNK: usize = 1 << 14;
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let one = T::one();
    let step = T::of(lr / (1.0 - cfg.beta1.powi(t as i32)));
    let vhat = T::of(1.0 / (1.0 - cfg.beta2.powi(t as i32)));
    let eps = T::of(cfg.epsilon);
    let grad = &param.grad;
    let m = &mut moments.m;
    let v = &mut moments.v;
    // Zip values with moments so each chunk owns disjoint slices.
    let mut triples: Vec<(&mut [T], &mut [T], &mut [T])> = param
        .values
        .chunks_mut(CHUNK)
        .zip(m.chunks_mut(CHUNK))
        .zip(v.chunks_mut(CHUNK))
        .map(|((a, b), c)| (a, b, c))
        .collect();
    exec::for_each_chunk_mut(exec, &mut triples, 1, |off, chunk| {
        let (w, m, v) = &mut chunk[0];
        let g = &grad[off * CHUNK..off * CHUNK + w.len()];
        for i in 0..w.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            w[i] -= step * m[i] / ((v[i] * vhat).sqrt() + eps);
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = ParamBuf::from_values(vec![1.0f64, -2.0, 0.5]);
        p.grad = vec![0.3, -4.0, 0.0];
        let mut m = AdamMoments::zeros(3);
        adam_update(Execution::Sequential, &AdamConfig::default(), 0.01, 1, &mut p, &mut m);
        assert!((p.values[0] - 0.99).abs() < 1e-6);
        assert!((p.values[1] + 1.99).abs() < 1e-6);
        assert_eq!(p.values[2], 0.5);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = ParamBuf::from_values(vec![5.0f64; 40_000]);
        let mut m = AdamMoments::zeros(p.len());
        for t in 1..=2000 {
            for i in 0..p.len() {
                p.grad[i] = 2.0 * (p.values[i] - 1.0);
            }
            adam_update(Execution::Parallel, &AdamConfig::default(), 0.05, t, &mut p, &mut m);
        }
        assert!(p.values.iter().all(|x| (x - 1.0).abs() < 1e-2));
    }
}
