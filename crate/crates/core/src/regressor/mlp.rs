use rand::Rng;

use crate::error::{Error, Result};
use crate::real::{ParamBuf, Real};

/// Fully connected layer, weights row-major `out x inp`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inp: usize,
    pub out: usize,
    pub weight: ParamBuf<T>,
    pub bias: ParamBuf<T>,
}

/// Rectifier MLP with a single scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead<T> {
    pub layers: Vec<Dense<T>>,
}

/// Per-layer gradient buffers, used by workers before reduction.
#[derive(Debug, Clone)]
pub struct MlpGrads<T> {
    pub weight: Vec<Vec<T>>,
    pub bias: Vec<Vec<T>>,
}

impl<T: Real> MlpGrads<T> {
    pub fn zeros(mlp: &MlpHead<T>) -> Self {
        Self {
            weight: mlp.layers.iter().map(|l| vec![T::zero(); l.weight.len()]).collect(),
            bias: mlp.layers.iter().map(|l| vec![T::zero(); l.out]).collect(),
        }
    }
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

/// `y += a * x`
#[inline]
pub(crate) fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

impl<T: Real> MlpHead<T> {
    /// He-uniform weights, zero biases. `sizes` runs input to output and must end in 1.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (inp, out) = (w[0], w[1]);
                let bound = (6.0 / inp as f64).sqrt();
                let weight = (0..inp * out)
                    .map(|_| T::of(rng.gen_range(-bound..bound)))
                    .collect();
                Dense {
                    inp,
                    out,
                    weight: ParamBuf::from_values(weight),
                    bias: ParamBuf::zeros(out),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// Same shape as [`new`](Self::new), all parameters zero.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| Dense {
                inp: w[0],
                out: w[1],
                weight: ParamBuf::zeros(w[0] * w[1]),
                bias: ParamBuf::zeros(w[1]),
            })
            .collect();
        Ok(Self { layers })
    }

    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || *sizes.last().unwrap() != 1 || sizes.contains(&0) {
            return Err(Error::Config(format!(
                "MLP sizes must be non-zero and end in 1, got {sizes:?}"
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inp
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inp];
        s.extend(self.layers.iter().map(|l| l.out));
        s
    }

    pub fn output_bias_mut(&mut self) -> &mut T {
        &mut self.layers.last_mut().unwrap().bias.values[0]
    }

    /// Forward pass; `acts[i]` receives the (rectified) output of layer `i`.
    pub fn forward(&self, x: &[T], acts: &mut Vec<Vec<T>>) -> T {
        let n = self.layers.len();
        acts.resize_with(n, Vec::new);
        for (i, layer) in self.layers.iter().enumerate() {
            let (prev, rest) = acts.split_at_mut(i);
            let input: &[T] = if i == 0 { x } else { &prev[i - 1] };
            let out = &mut rest[0];
            out.clear();
            let last = i + 1 == n;
            for o in 0..layer.out {
                let row = &layer.weight.values[o * layer.inp..(o + 1) * layer.inp];
                let z = layer.bias.values[o] + dot(row, input);
                // `z <= 0` is false for NaN, so non-finite values propagate.
                out.push(if !last && z <= T::zero() { T::zero() } else { z });
            }
        }
        acts[n - 1][0]
    }

    /// Forward without keeping activations.
    pub fn predict(&self, x: &[T]) -> T {
        let mut acts = Vec::new();
        self.forward(x, &mut acts)
    }

    /// Backpropagates `dy` through the activations of a preceding [`forward`](Self::forward),
    /// accumulating into `grads` and writing the input gradient into `dx`.
    pub fn backward(
        &self,
        x: &[T],
        acts: &[Vec<T>],
        dy: T,
        grads: &mut MlpGrads<T>,
        dx: &mut [T],
        scratch: &mut Vec<T>,
    ) {
        let n = self.layers.len();
        let mut delta = vec![dy];
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let input: &[T] = if i == 0 { x } else { &acts[i - 1] };
            let gw = &mut grads.weight[i];
            for (o, &d) in delta.iter().enumerate() {
                if d.is_zero() {
                    continue;
                }
                grads.bias[i][o] += d;
                axpy(d, input, &mut gw[o * layer.inp..(o + 1) * layer.inp]);
            }
            scratch.clear();
            scratch.resize(layer.inp, T::zero());
            for (o, &d) in delta.iter().enumerate() {
                if !d.is_zero() {
                    axpy(d, &layer.weight.values[o * layer.inp..(o + 1) * layer.inp], scratch);
                }
            }
            if i == 0 {
                dx.copy_from_slice(scratch);
            } else {
                // Rectifier derivative: zero where the activation was clamped.
                delta.clear();
                delta.extend(
                    scratch
                        .iter()
                        .zip(&acts[i - 1])
                        .map(|(&g, &a)| if a > T::zero() { g } else { T::zero() }),
                );
            }
        }
    }

    pub fn add_grads(&mut self, grads: &MlpGrads<T>) {
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(grads.weight.iter().zip(&grads.bias)) {
            for (a, &b) in layer.weight.grad.iter_mut().zip(gw) {
                *a += b;
            }
            for (a, &b) in layer.bias.grad.iter_mut().zip(gb) {
                *a += b;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> MlpHead<U> {
        MlpHead {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    inp: l.inp,
                    out: l.out,
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_output_bias() {
        let mut mlp: MlpHead<f64> = MlpHead::new(&[5, 7, 1], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for l in &mut mlp.layers {
            l.weight.values.iter_mut().for_each(|w| *w = 0.0);
        }
        *mlp.output_bias_mut() = 42.5;
        assert_eq!(mlp.predict(&[1.0, -3.0, 2.0, 0.0, 9.0]), 42.5);
    }

    #[test]
    fn rejects_bad_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(MlpHead::<f32>::new(&[4, 3], &mut rng).is_err());
        assert!(MlpHead::<f32>::new(&[4], &mut rng).is_err());
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| i as f64 * 0.5 - 3.0).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64).sin()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mlp: MlpHead<f64> = MlpHead::new(&[6, 5, 4, 1], &mut rng).unwrap();
        let x: Vec<f64> = (0..6).map(|i| 0.3 * i as f64 - 0.7).collect();
        let mut acts = Vec::new();
        mlp.forward(&x, &mut acts);
        let mut grads = MlpGrads::zeros(&mlp);
        let mut dx = vec![0.0; 6];
        mlp.backward(&x, &acts, 1.0, &mut grads, &mut dx, &mut Vec::new());
        let h = 1e-6;
        for i in 0..6 {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (mlp.predict(&xp) - mlp.predict(&xm)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-7, "{i}: {fd} vs {}", dx[i]);
        }
        for (li, layer) in mlp.layers.iter().enumerate() {
            for j in 0..layer.weight.len() {
                let mut m = mlp.clone();
                m.layers[li].weight.values[j] += h;
                let up = m.predict(&x);
                m.layers[li].weight.values[j] -= 2.0 * h;
                let fd = (up - m.predict(&x)) / (2.0 * h);
                assert!((fd - grads.weight[li][j]).abs() < 1e-7);
            }
        }
    }
}
