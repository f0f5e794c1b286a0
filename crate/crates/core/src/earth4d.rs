//! The space-time encoder: four 3D grids over the axis triples
//! `xyz`, `xyt`, `yzt` and `xzt`, concatenated in that order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::geocoords::NormalizedPoint4;
use crate::hashgrid::{build_levels, GridConfig, HashGrid, LevelSpec};
use crate::probing::ProbeMode;
use crate::real::Real;

/// An axis triple of the unit 4-cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Xyz,
    Xyt,
    Yzt,
    Xzt,
}

impl Projection {
    /// Concatenation order of the encoder output.
    pub const ALL: [Projection; 4] = [Projection::Xyz, Projection::Xyt, Projection::Yzt, Projection::Xzt];

    /// Indices into `(x, y, z, t)`.
    pub fn axes(self) -> [usize; 3] {
        match self {
            Projection::Xyz => [0, 1, 2],
            Projection::Xyt => [0, 1, 3],
            Projection::Yzt => [1, 2, 3],
            Projection::Xzt => [0, 2, 3],
        }
    }

    #[inline]
    pub fn project(self, q: [f64; 4]) -> [f64; 3] {
        let [a, b, c] = self.axes();
        [q[a], q[b], q[c]]
    }

    pub fn name(self) -> &'static str {
        match self {
            Projection::Xyz => "xyz",
            Projection::Xyt => "xyt",
            Projection::Yzt => "yzt",
            Projection::Xzt => "xzt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Earth4DConfig {
    /// Shared by all four grids unless overridden.
    pub grid: GridConfig,
    /// Per-projection replacements of `grid`, in [`Projection::ALL`] order.
    pub overrides: Option<[GridConfig; 4]>,
}

impl Earth4DConfig {
    pub fn grid_config(&self, i: usize) -> &GridConfig {
        match &self.overrides {
            Some(o) => &o[i],
            None => &self.grid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..4 {
            self.grid_config(i).validate()?;
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        (0..4).map(|i| self.grid_config(i).output_dim()).sum()
    }
}

/// Trainable parameter breakdown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCount {
    pub grid_parameters: usize,
    pub probe_parameters: usize,
    pub total: usize,
    /// One entry per level of each grid.
    pub levels: Vec<LevelParameters>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelParameters {
    pub projection: Projection,
    pub level: LevelSpec,
    pub feature_parameters: usize,
    pub probe_parameters: usize,
}

/// Closed-form parameter count; allocates nothing.
pub fn count_parameters(cfg: &Earth4DConfig) -> ParameterCount {
    let mut levels = Vec::new();
    for (i, proj) in Projection::ALL.iter().enumerate() {
        let g = cfg.grid_config(i);
        for level in build_levels(g) {
            let probe_parameters = match &g.probing {
                Some(p) if level.is_hashed() => p.probe_table_size() * p.num_probes,
                _ => 0,
            };
            levels.push(LevelParameters {
                projection: *proj,
                level,
                feature_parameters: level.table_size * g.feature_dim,
                probe_parameters,
            });
        }
    }
    let grid_parameters = levels.iter().map(|l| l.feature_parameters).sum();
    let probe_parameters = levels.iter().map(|l| l.probe_parameters).sum();
    ParameterCount {
        grid_parameters,
        probe_parameters,
        total: grid_parameters + probe_parameters,
        levels,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Earth4DEncoder<T> {
    config: Earth4DConfig,
    pub grids: Vec<HashGrid<T>>,
    offsets: [usize; 5],
}

impl<T: Real> Earth4DEncoder<T> {
    pub fn new<R: Rng>(config: Earth4DConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let grids = (0..4)
            .map(|i| HashGrid::new(config.grid_config(i).clone(), rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_grids(config, grids))
    }

    pub fn zeros(config: Earth4DConfig) -> Result<Self> {
        config.validate()?;
        let grids = (0..4)
            .map(|i| HashGrid::zeros(config.grid_config(i).clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_grids(config, grids))
    }

    pub(crate) fn from_grids(config: Earth4DConfig, grids: Vec<HashGrid<T>>) -> Self {
        let mut offsets = [0; 5];
        for (i, g) in grids.iter().enumerate() {
            offsets[i + 1] = offsets[i] + g.output_dim();
        }
        Self {
            config,
            grids,
            offsets,
        }
    }

    pub fn config(&self) -> &Earth4DConfig {
        &self.config
    }

    pub fn output_dim(&self) -> usize {
        self.offsets[4]
    }

    /// Output range of grid `i`.
    pub fn slice_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn has_probing(&self) -> bool {
        self.grids.iter().any(|g| g.config().probing.is_some())
    }

    /// Inference probe mode from the configuration (hard unless configured otherwise).
    pub fn inference_mode(&self) -> ProbeMode {
        self.config.grid.probing.map(|p| p.mode).unwrap_or_default()
    }

    pub fn set_probe_temperature(&mut self, temperature: f64) {
        for g in &mut self.grids {
            g.set_probe_temperature(temperature);
        }
    }

    pub fn encode_into(&self, q: [f64; 4], mode: ProbeMode, out: &mut [T]) {
        for (i, (grid, proj)) in self.grids.iter().zip(Projection::ALL).enumerate() {
            grid.encode_into(proj.project(q), mode, &mut out[self.slice_range(i)]);
        }
    }

    pub fn encode(&self, q: &NormalizedPoint4, mode: ProbeMode) -> Vec<T> {
        let mut out = vec![T::zero(); self.output_dim()];
        self.encode_into(q.to_array(), mode, &mut out);
        out
    }

    /// Embeddings of many points, row-major `points.len() x output_dim`.
    pub fn encode_batch(&self, exec: Execution, points: &[[f64; 4]], mode: ProbeMode) -> Vec<T> {
        let d = self.output_dim();
        let mut out = vec![T::zero(); points.len() * d];
        exec::for_each_chunk_mut(exec, &mut out, d * 256, |off, chunk| {
            for (j, row) in chunk.chunks_exact_mut(d).enumerate() {
                self.encode_into(points[off / d + j], mode, row);
            }
        });
        out
    }

    /// Routes each grid's slice of `upstream` into that grid's backward.
    pub fn encode_backward(&mut self, q: [f64; 4], upstream: &[T], mode: ProbeMode) {
        let offsets = self.offsets;
        for (i, (grid, proj)) in self.grids.iter_mut().zip(Projection::ALL).enumerate() {
            let g = &upstream[offsets[i]..offsets[i + 1]];
            if g.iter().any(|x| !x.is_zero()) {
                grid.encode_backward(proj.project(q), g, mode);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.grids.iter_mut().for_each(|g| g.zero_grad());
    }

    pub fn cast<U: Real>(&self) -> Earth4DEncoder<U> {
        Earth4DEncoder::from_grids(
            self.config.clone(),
            self.grids.iter().map(|g| g.cast()).collect(),
        )
    }

    /// Checks that `q` lies in the unit 4-cube.
    pub fn check_point(q: &NormalizedPoint4) -> Result<()> {
        if q.in_unit_cube() {
            Ok(())
        } else {
            Err(Error::domain("normalized", format!("{q:?} outside [0,1)^4")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(probing: bool) -> Earth4DConfig {
        Earth4DConfig {
            grid: GridConfig {
                num_levels: 3,
                log2_table_size: 10,
                base_resolution_log2: 3,
                init_scale: 0.5,
                probing: probing.then(|| crate::probing::ProbeConfig {
                    num_probes: 4,
                    log2_probe_table_size: 6,
                    ..Default::default()
                }),
                ..GridConfig::default()
            },
            overrides: None,
        }
    }

    #[test]
    fn default_width_is_192() {
        let cfg = Earth4DConfig::default();
        assert_eq!(cfg.output_dim(), 192);
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(count_parameters(&Earth4DConfig::default()).grid_parameters, 723_779_584);
        let compressed = Earth4DConfig {
            grid: GridConfig {
                log2_table_size: 14,
                ..GridConfig::default()
            },
            overrides: None,
        };
        let c = count_parameters(&compressed);
        assert_eq!((c.grid_parameters, c.probe_parameters), (3_145_728, 0));
        let one = Earth4DConfig {
            grid: GridConfig {
                num_levels: 1,
                ..GridConfig::default()
            },
            overrides: None,
        };
        assert_eq!(count_parameters(&one).total, 262_144);

        let probed = Earth4DConfig {
            grid: GridConfig {
                probing: Some(Default::default()),
                ..GridConfig::default()
            },
            overrides: None,
        };
        let c = count_parameters(&probed);
        assert_eq!(c.probe_parameters, 4 * 21 * (1 << 16) * 8);
        assert_eq!(c.total, 723_779_584 + c.probe_parameters);
    }

    #[test]
    fn zero_tables_encode_to_zero() {
        let enc: Earth4DEncoder<f32> = Earth4DEncoder::zeros(small(true)).unwrap();
        let e = enc.encode(&NormalizedPoint4::new(0.1, 0.2, 0.3, 0.4), ProbeMode::Soft);
        assert_eq!(e.len(), 4 * 3 * 2);
        assert!(e.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn time_only_change_keeps_spatial_slice() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc: Earth4DEncoder<f32> = Earth4DEncoder::new(small(true), &mut rng).unwrap();
        let a = enc.encode(&NormalizedPoint4::new(0.31, 0.62, 0.17, 0.2), ProbeMode::Hard);
        let b = enc.encode(&NormalizedPoint4::new(0.31, 0.62, 0.17, 0.7), ProbeMode::Hard);
        assert_eq!(a[enc.slice_range(0)], b[enc.slice_range(0)]);
        for i in 1..4 {
            assert_ne!(a[enc.slice_range(i)], b[enc.slice_range(i)]);
        }
    }

    #[test]
    fn backward_routes_only_into_matching_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut enc: Earth4DEncoder<f64> = Earth4DEncoder::new(small(false), &mut rng).unwrap();
        let q = [0.2, 0.4, 0.6, 0.8];
        enc.encode_backward(q, &vec![0.0; enc.output_dim()], ProbeMode::Soft);
        assert!(enc
            .grids
            .iter()
            .all(|g| g.tables.iter().all(|t| t.params.grad.iter().all(|&x| x == 0.0))));

        let mut up = vec![0.0; enc.output_dim()];
        up[enc.slice_range(0)].iter_mut().for_each(|u| *u = 1.0);
        enc.encode_backward(q, &up, ProbeMode::Soft);
        let changed: Vec<bool> = enc
            .grids
            .iter()
            .map(|g| g.tables.iter().any(|t| t.params.grad.iter().any(|&x| x != 0.0)))
            .collect();
        assert_eq!(changed, vec![true, false, false, false]);
    }

    #[test]
    fn batch_encoding_matches_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc: Earth4DEncoder<f32> = Earth4DEncoder::new(small(true), &mut rng).unwrap();
        let pts: Vec<[f64; 4]> = (0..700)
            .map(|i| {
                let s = i as f64 / 700.0;
                [s, (s * 3.7).fract(), (s * 9.1).fract(), (s * 1.3).fract()]
            })
            .collect();
        let seq = enc.encode_batch(Execution::Sequential, &pts, ProbeMode::Soft);
        let par = enc.encode_batch(Execution::Parallel, &pts, ProbeMode::Soft);
        assert_eq!(seq, par);
        let d = enc.output_dim();
        assert_eq!(
            &seq[d * 123..d * 124],
            enc.encode(&NormalizedPoint4::from_array(pts[123]), ProbeMode::Soft).as_slice()
        );
    }
}
