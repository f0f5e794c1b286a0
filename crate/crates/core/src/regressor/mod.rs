//! Scalar regression on top of the space-time embedding: the encoder output
//! is concatenated with a learnable species embedding and fed to a rectifier
//! MLP predicting a percentage (e.g. live fuel moisture content).

pub mod adam;
pub mod metrics;
pub mod mlp;
pub mod species;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TrainingSample;
use crate::earth4d::{Earth4DConfig, Earth4DEncoder};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::geocoords::{normalize, NormalizationConfig};
use crate::probing::ProbeMode;
use crate::real::{ParamBuf, Real};

pub use adam::{AdamConfig, AdamMoments};
pub use metrics::{compute_metrics, Metrics};
pub use mlp::{MlpGrads, MlpHead};
pub use species::{normalize_species, SpeciesTable, UNKNOWN_SPECIES};
pub use train::{evaluate, fit, split_dataset, train, EpochRecord, History, SplitStrategy, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub species_dim: usize,
    pub hidden: Vec<usize>,
    /// Species embeddings start uniform in `[-species_init_scale, species_init_scale]`.
    pub species_init_scale: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            species_dim: 32,
            hidden: vec![256, 256],
            species_init_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: Earth4DConfig,
    pub normalization: NormalizationConfig,
    pub head: HeadConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.normalization.validate()?;
        if self.head.hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be non-zero".into()));
        }
        Ok(())
    }

    pub fn mlp_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.encoder.output_dim() + self.head.species_dim];
        s.extend(&self.head.hidden);
        s.push(1);
        s
    }
}

/// A sample already mapped into the unit 4-cube with a resolved species row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreparedSample {
    pub q: [f64; 4],
    pub species: usize,
    pub target: f64,
}

/// Which kind of parameters a buffer holds; selects the learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Features,
    Probes,
    Species,
    Mlp,
}

/// Encoder, species table and MLP head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    pub encoder: Earth4DEncoder<T>,
    pub species: SpeciesTable<T>,
    pub mlp: MlpHead<T>,
    pub state: TrainingState<T>,
}

/// Optimizer state carried in checkpoints.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingState<T> {
    pub step: usize,
    /// One entry per buffer of [`Model::param_buffers`], when training has run.
    pub moments: Option<Vec<AdamMoments<T>>>,
}

impl<T: Real> Model<T> {
    /// Fresh model for the given species vocabulary.
    pub fn new(config: ModelConfig, species_names: &[String], seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Earth4DEncoder::new(config.encoder.clone(), &mut rng)?;
        let species = SpeciesTable::new(
            species_names,
            config.head.species_dim,
            config.head.species_init_scale,
            &mut rng,
        );
        let mlp = MlpHead::new(&config.mlp_sizes(), &mut rng)?;
        Ok(Self {
            config,
            encoder,
            species,
            mlp,
            state: TrainingState::default(),
        })
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        encoder: Earth4DEncoder<T>,
        species: SpeciesTable<T>,
        mlp: MlpHead<T>,
        state: TrainingState<T>,
    ) -> Self {
        Self {
            config,
            encoder,
            species,
            mlp,
            state,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn embedding_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.output_dim() + self.species.dim
    }

    /// Normalizes coordinates and resolves species names.
    pub fn prepare(&self, samples: &[TrainingSample], strict: bool) -> Result<Vec<PreparedSample>> {
        samples
            .iter()
            .map(|s| {
                Ok(PreparedSample {
                    q: normalize(&s.point, &self.config.normalization)?.to_array(),
                    species: self.species.resolve(&s.species, strict)?,
                    target: s.target,
                })
            })
            .collect()
    }

    /// MLP input: embedding followed by the species embedding.
    pub fn fill_input(&self, q: [f64; 4], species: usize, mode: ProbeMode, x: &mut [T]) {
        let d = self.encoder.output_dim();
        self.encoder.encode_into(q, mode, &mut x[..d]);
        x[d..].copy_from_slice(self.species.embedding(species));
    }

    pub fn predict(&self, q: [f64; 4], species: usize, mode: ProbeMode) -> T {
        let mut x = vec![T::zero(); self.input_dim()];
        self.fill_input(q, species, mode, &mut x);
        self.mlp.predict(&x)
    }

    pub fn predict_batch(&self, exec: Execution, samples: &[PreparedSample], mode: ProbeMode) -> Vec<f64> {
        exec::map(exec, samples, |s| self.predict(s.q, s.species, mode).f64())
    }

    /// Mean squared error over `batch`.
    pub fn batch_loss(&self, batch: &[PreparedSample], mode: ProbeMode) -> f64 {
        let sum: f64 = batch
            .iter()
            .map(|s| {
                let r = self.predict(s.q, s.species, mode).f64() - s.target;
                r * r
            })
            .sum();
        sum / batch.len() as f64
    }

    /// Accumulates the gradient of [`batch_loss`](Self::batch_loss) into every
    /// parameter buffer and returns the loss. Gradients are not zeroed first.
    ///
    /// Samples are processed in fixed-size chunks whose partial MLP gradients
    /// are reduced in chunk order, and table gradients are scattered
    /// sequentially, so the result does not depend on the thread count.
    pub fn accumulate_gradients(
        &mut self,
        exec: Execution,
        batch: &[PreparedSample],
        mode: ProbeMode,
    ) -> f64 {
        const CHUNK: usize = 16;
        let n_chunks = batch.len().div_ceil(CHUNK);
        let inv_n = 1.0 / batch.len() as f64;
        let d_in = self.input_dim();
        let this = &*self;
        let partials = exec::map_range(exec, n_chunks, |c| {
            let samples = &batch[c * CHUNK..((c + 1) * CHUNK).min(batch.len())];
            let mut grads = MlpGrads::zeros(&this.mlp);
            let mut dxs = vec![T::zero(); samples.len() * d_in];
            let mut x = vec![T::zero(); d_in];
            let mut acts = Vec::new();
            let mut scratch = Vec::new();
            let mut loss = 0.0;
            for (s, dx) in samples.iter().zip(dxs.chunks_exact_mut(d_in)) {
                this.fill_input(s.q, s.species, mode, &mut x);
                let y = this.mlp.forward(&x, &mut acts);
                let r = y.f64() - s.target;
                loss += r * r;
                let dy = T::of(2.0 * r * inv_n);
                this.mlp.backward(&x, &acts, dy, &mut grads, dx, &mut scratch);
            }
            (grads, dxs, loss)
        });

        let d = self.encoder.output_dim();
        let mut loss = 0.0;
        for (c, (grads, dxs, l)) in partials.into_iter().enumerate() {
            loss += l;
            self.mlp.add_grads(&grads);
            let samples = &batch[c * CHUNK..((c + 1) * CHUNK).min(batch.len())];
            for (s, dx) in samples.iter().zip(dxs.chunks_exact(d_in)) {
                for (g, &v) in self.species.grad_mut(s.species).iter_mut().zip(&dx[d..]) {
                    *g += v;
                }
                self.encoder.encode_backward(s.q, &dx[..d], mode);
            }
        }
        loss * inv_n
    }

    pub fn zero_grad(&mut self) {
        for (_, _, p) in self.param_buffers_mut() {
            p.zero_grad();
        }
    }

    /// Every learnable buffer with its group and a stable name, in checkpoint order.
    pub fn param_buffers(&self) -> Vec<(ParamGroup, String, &ParamBuf<T>)> {
        let mut out = Vec::new();
        for (grid, proj) in self.encoder.grids.iter().zip(crate::earth4d::Projection::ALL) {
            for (l, t) in grid.tables.iter().enumerate() {
                out.push((ParamGroup::Features, format!("grid.{}.level{l}.features", proj.name()), &t.params));
            }
            for (l, p) in grid.probes.iter().enumerate() {
                if let Some(p) = p {
                    out.push((ParamGroup::Probes, format!("grid.{}.level{l}.probes", proj.name()), &p.params));
                }
            }
        }
        out.push((ParamGroup::Species, "species".into(), &self.species.params));
        for (i, layer) in self.mlp.layers.iter().enumerate() {
            out.push((ParamGroup::Mlp, format!("mlp.layer{i}.weight"), &layer.weight));
            out.push((ParamGroup::Mlp, format!("mlp.layer{i}.bias"), &layer.bias));
        }
        out
    }

    pub fn param_buffers_mut(&mut self) -> Vec<(ParamGroup, String, &mut ParamBuf<T>)> {
        let mut out = Vec::new();
        for (grid, proj) in self.encoder.grids.iter_mut().zip(crate::earth4d::Projection::ALL) {
            for (l, t) in grid.tables.iter_mut().enumerate() {
                out.push((ParamGroup::Features, format!("grid.{}.level{l}.features", proj.name()), &mut t.params));
            }
            for (l, p) in grid.probes.iter_mut().enumerate() {
                if let Some(p) = p {
                    out.push((ParamGroup::Probes, format!("grid.{}.level{l}.probes", proj.name()), &mut p.params));
                }
            }
        }
        out.push((ParamGroup::Species, "species".into(), &mut self.species.params));
        for (i, layer) in self.mlp.layers.iter_mut().enumerate() {
            out.push((ParamGroup::Mlp, format!("mlp.layer{i}.weight"), &mut layer.weight));
            out.push((ParamGroup::Mlp, format!("mlp.layer{i}.bias"), &mut layer.bias));
        }
        out
    }

    /// Name of the first buffer holding a non-finite value, else the first
    /// with a non-finite gradient.
    pub fn first_non_finite(&self) -> Option<String> {
        let buffers = self.param_buffers();
        let finite = |xs: &[T]| xs.iter().all(|v| v.is_finite());
        buffers
            .iter()
            .find(|(_, _, p)| !finite(&p.values))
            .map(|(_, name, _)| name.clone())
            .or_else(|| {
                buffers
                    .iter()
                    .find(|(_, _, p)| !finite(&p.grad))
                    .map(|(_, name, _)| format!("{name}.grad"))
            })
    }

    /// Same parameters in another precision; optimizer state is dropped.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            encoder: self.encoder.cast(),
            species: self.species.cast(),
            mlp: self.mlp.cast(),
            state: TrainingState::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geocoords::GeodeticPoint;
    use crate::hashgrid::GridConfig;

    fn tiny() -> ModelConfig {
        ModelConfig {
            encoder: Earth4DConfig {
                grid: GridConfig {
                    num_levels: 2,
                    log2_table_size: 8,
                    base_resolution_log2: 3,
                    ..GridConfig::default()
                },
                overrides: None,
            },
            head: HeadConfig {
                species_dim: 4,
                hidden: vec![8],
                ..HeadConfig::default()
            },
            ..ModelConfig::default()
        }
    }

    fn sample(species: &str) -> TrainingSample {
        TrainingSample {
            point: GeodeticPoint::new(37.0, -120.0, 100.0, 1.5e9),
            species: species.into(),
            target: 80.0,
        }
    }

    #[test]
    fn degenerate_network_predicts_bias() {
        let mut m: Model<f32> = Model::new(tiny(), &["a".into()], 0).unwrap();
        for (_, _, p) in m.param_buffers_mut() {
            p.values.iter_mut().for_each(|v| *v = 0.0);
        }
        *m.mlp.output_bias_mut() = 61.5;
        let prepared = m.prepare(&[sample("a"), sample("zzz")], false).unwrap();
        for s in prepared {
            assert_eq!(m.predict(s.q, s.species, ProbeMode::Hard), 61.5);
        }
    }

    #[test]
    fn species_changes_prediction() {
        let m: Model<f64> = Model::new(tiny(), &["a".into(), "b".into()], 1).unwrap();
        let p = m.prepare(&[sample("a"), sample("b"), sample(" A ")], true).unwrap();
        let ya = m.predict(p[0].q, p[0].species, ProbeMode::Hard);
        let yb = m.predict(p[1].q, p[1].species, ProbeMode::Hard);
        assert_ne!(ya, yb);
        assert_eq!(ya, m.predict(p[2].q, p[2].species, ProbeMode::Hard));
        assert!(matches!(
            m.prepare(&[sample("c")], true),
            Err(Error::UnknownSpecies(_))
        ));
    }

    #[test]
    fn parallel_gradients_match_sequential_bitwise() {
        let mut a: Model<f32> = Model::new(tiny(), &["a".into(), "b".into()], 2).unwrap();
        let mut b = a.clone();
        let batch: Vec<PreparedSample> = (0..50)
            .map(|i| PreparedSample {
                q: [0.1 + i as f64 * 0.01, 0.5, 0.3, (i as f64 * 0.37).fract()],
                species: 1 + i % 2,
                target: i as f64,
            })
            .collect();
        let la = a.accumulate_gradients(Execution::Sequential, &batch, ProbeMode::Soft);
        let lb = b.accumulate_gradients(Execution::Parallel, &batch, ProbeMode::Soft);
        assert_eq!(la, lb);
        assert_eq!(a, b);
    }
}
