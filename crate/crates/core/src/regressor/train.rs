use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_update, AdamConfig, AdamMoments};
use super::metrics::{compute_metrics, Metrics};
use super::{Model, ModelConfig, ParamGroup, PreparedSample};
use crate::dataset::TrainingSample;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::probing::ProbeMode;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    /// Seeded uniform split of samples.
    Random,
    /// Whole latitude/longitude blocks of `block_deg` degrees go to one side.
    SpatialBlock { block_deg: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    /// Total optimizer steps.
    pub steps: usize,
    pub batch_size: usize,
    pub lr_mlp: f64,
    pub lr_species: f64,
    pub lr_features: f64,
    pub lr_probes: f64,
    pub adam: AdamConfig,
    /// Validation share used by [`split_dataset`] when no separate validation set is given.
    pub val_fraction: f64,
    pub split: SplitStrategy,
    /// Evaluate the validation set every this many epochs (and after the last step).
    pub eval_every_epochs: usize,
    /// Geometric annealing of the probe temperature towards this value; fixed when `None`.
    pub probe_temperature_final: Option<f64>,
    /// Start the output bias at the mean training target.
    pub init_bias_to_mean: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 5000,
            batch_size: 4096,
            lr_mlp: 1e-3,
            lr_species: 1e-3,
            lr_features: 1e-2,
            lr_probes: 1e-2,
            adam: AdamConfig::default(),
            val_fraction: 0.2,
            split: SplitStrategy::Random,
            eval_every_epochs: 1,
            probe_temperature_final: None,
            init_bias_to_mean: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must be in [0, 1)".into()));
        }
        if let SplitStrategy::SpatialBlock { block_deg } = self.split {
            if !(block_deg > 0.0) {
                return Err(Error::Config("block_deg must be positive".into()));
            }
        }
        if self.eval_every_epochs == 0 {
            return Err(Error::Config("eval_every_epochs must be positive".into()));
        }
        Ok(())
    }

    fn lr(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Features => self.lr_features,
            ParamGroup::Probes => self.lr_probes,
            ParamGroup::Species => self.lr_species,
            ParamGroup::Mlp => self.lr_mlp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps completed at the end of the epoch.
    pub step: usize,
    /// Mean minibatch loss over the epoch.
    pub train_loss: f64,
    pub val: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn last_val(&self) -> Option<Metrics> {
        self.epochs.iter().rev().find_map(|e| e.val)
    }
}

/// Splits `samples` into (train, validation).
pub fn split_dataset(
    samples: &[TrainingSample],
    val_fraction: f64,
    strategy: SplitStrategy,
    seed: u64,
) -> (Vec<TrainingSample>, Vec<TrainingSample>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    match strategy {
        SplitStrategy::Random => {
            let mut idx: Vec<usize> = (0..samples.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let n_val = (samples.len() as f64 * val_fraction).round() as usize;
            let mut is_val = vec![false; samples.len()];
            for &i in &idx[..n_val] {
                is_val[i] = true;
            }
            for (s, v) in samples.iter().zip(is_val) {
                if v { val.push(s.clone()) } else { train.push(s.clone()) }
            }
        }
        SplitStrategy::SpatialBlock { block_deg } => {
            let block_draw = |s: &TrainingSample| {
                let bi = (s.point.latitude_deg / block_deg).floor() as i64;
                let bj = (s.point.longitude_deg / block_deg).floor() as i64;
                let key = seed
                    ^ (bi as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    ^ (bj as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
                ChaCha8Rng::seed_from_u64(key).gen::<f64>()
            };
            for s in samples {
                if block_draw(s) < val_fraction {
                    val.push(s.clone())
                } else {
                    train.push(s.clone())
                }
            }
        }
    }
    (train, val)
}

/// Metrics of `model` on prepared samples, using the configured inference probe mode.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    samples: &[PreparedSample],
    exec: Execution,
) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let preds = model.predict_batch(exec, samples, model.encoder.inference_mode());
    let targets: Vec<f64> = samples.iter().map(|s| s.target).collect();
    compute_metrics(&preds, &targets)
}

/// Builds a model over the training species and fits it.
pub fn train<T: Real>(
    config: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &[TrainingSample],
    val_set: &[TrainingSample],
    exec: Execution,
) -> Result<(Model<T>, History)> {
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let names: Vec<String> = train_set.iter().map(|s| s.species.clone()).collect();
    let mut model = Model::new(config.clone(), &names, train_cfg.seed)?;
    let train_prepared = model.prepare(train_set, true)?;
    let val_prepared = model.prepare(val_set, false)?;
    let history = fit(&mut model, train_cfg, &train_prepared, &val_prepared, exec)?;
    Ok((model, history))
}

/// Minimizes the mean squared error of `model` on `train_set` with Adam.
///
/// Deterministic for a given seed; the execution mode does not change results.
pub fn fit<T: Real>(
    model: &mut Model<T>,
    cfg: &TrainConfig,
    train_set: &[PreparedSample],
    val_set: &[PreparedSample],
    exec: Execution,
) -> Result<History> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if cfg.init_bias_to_mean && model.state.step == 0 {
        let mean = train_set.iter().map(|s| s.target).sum::<f64>() / train_set.len() as f64;
        *model.mlp.output_bias_mut() = T::of(mean);
    }
    let mut moments = match model.state.moments.take() {
        Some(m) => m,
        None => model
            .param_buffers()
            .iter()
            .map(|(_, _, p)| AdamMoments::zeros(p.len()))
            .collect(),
    };
    let tau0 = model
        .encoder
        .config()
        .grid
        .probing
        .map(|p| p.temperature)
        .unwrap_or(1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5EED));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = History::default();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let start_step = model.state.step;
    let end_step = start_step + cfg.steps;
    let mut epoch = 0;
    while model.state.step < end_step {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            if model.state.step >= end_step {
                break;
            }
            if let Some(tau_end) = cfg.probe_temperature_final {
                let frac = (model.state.step - start_step) as f64 / cfg.steps as f64;
                model
                    .encoder
                    .set_probe_temperature(tau0 * (tau_end / tau0).powf(frac));
            }
            batch.clear();
            batch.extend(idx.iter().map(|&i| train_set[i]));
            model.zero_grad();
            let loss = model.accumulate_gradients(exec, &batch, ProbeMode::Soft);
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    tensor: model.first_non_finite().unwrap_or_else(|| "loss".into()),
                    step: model.state.step,
                });
            }
            model.state.step += 1;
            let t = model.state.step;
            for ((group, _, buf), m) in model.param_buffers_mut().into_iter().zip(&mut moments) {
                adam_update(exec, &cfg.adam, cfg.lr(group), t, buf, m);
            }
            loss_sum += loss;
            batches += 1;
        }
        epoch += 1;
        let last = model.state.step >= end_step;
        let val = if !val_set.is_empty() && (epoch % cfg.eval_every_epochs == 0 || last) {
            Some(evaluate(model, val_set, exec)?)
        } else {
            None
        };
        history.epochs.push(EpochRecord {
            epoch,
            step: model.state.step,
            train_loss: loss_sum / batches.max(1) as f64,
            val,
        });
    }
    model.state.moments = Some(moments);
    Ok(history)
}
