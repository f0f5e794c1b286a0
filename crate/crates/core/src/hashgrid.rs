//! One 3D multi-resolution feature grid.
//!
//! Level `l` has `N_l = 2^(base_resolution_log2 + l)` vertices per axis. A level
//! whose full lattice fits in `T_max` rows is stored densely and indexed
//! bijectively; finer levels hash their vertices into `T_max` rows. Queries
//! trilinearly interpolate the eight corner features of the enclosing cell.
//!
//! Forward evaluation only reads the tables and may be called concurrently.
//! Backward accumulation takes `&mut self`: callers either own the grid
//! exclusively or accumulate per-worker and reduce afterwards.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probing::{self, ProbeConfig, ProbeMode, ProbeTable};
use crate::real::{ParamBuf, Real};

/// Hash multipliers for the x, y and z vertex coordinates.
pub const HASH_PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

static CLAMPED: AtomicU64 = AtomicU64::new(0);

/// Number of query coordinates clamped into `[0, 1)` since process start.
pub fn clamped_count() -> u64 {
    CLAMPED.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageMode {
    Dense,
    Hashed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub index: usize,
    /// Vertices per axis.
    pub resolution: u32,
    pub storage: StorageMode,
    pub table_size: usize,
}

impl LevelSpec {
    /// Row of vertex `v` before any probing.
    #[inline]
    pub fn base_row(&self, v: [u32; 3]) -> usize {
        match self.storage {
            StorageMode::Dense => dense_index(v, self.resolution),
            StorageMode::Hashed => spatial_hash(v, self.table_size),
        }
    }

    pub fn is_hashed(&self) -> bool {
        self.storage == StorageMode::Hashed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub num_levels: usize,
    /// `T_max = 2^log2_table_size` rows per level at most.
    pub log2_table_size: u32,
    pub feature_dim: usize,
    /// Level 0 has `2^base_resolution_log2` vertices per axis.
    pub base_resolution_log2: u32,
    /// Features start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    pub probing: Option<ProbeConfig>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            num_levels: 24,
            log2_table_size: 22,
            feature_dim: 2,
            base_resolution_log2: 5,
            init_scale: 1e-4,
            probing: None,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_levels == 0 {
            return Err(Error::Config("num_levels must be at least 1".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be at least 1".into()));
        }
        if self.log2_table_size > 31 {
            return Err(Error::Config("log2_table_size must be at most 31".into()));
        }
        if self.base_resolution_log2 == 0
            || self.base_resolution_log2 as usize + self.num_levels - 1 > 30
        {
            return Err(Error::Config(
                "resolutions must lie in [2, 2^30] vertices per axis".into(),
            ));
        }
        if !(self.init_scale >= 0.0) {
            return Err(Error::Config("init_scale must be non-negative".into()));
        }
        if let Some(p) = &self.probing {
            p.validate()?;
        }
        Ok(())
    }

    pub fn max_table_size(&self) -> usize {
        1usize << self.log2_table_size
    }

    pub fn output_dim(&self) -> usize {
        self.num_levels * self.feature_dim
    }

    /// Rows of every level summed.
    pub fn total_rows(&self) -> usize {
        build_levels(self).iter().map(|l| l.table_size).sum()
    }

    pub fn feature_parameters(&self) -> usize {
        self.total_rows() * self.feature_dim
    }

    /// Probe logits; only hashed levels carry a probe table.
    pub fn probe_parameters(&self) -> usize {
        match &self.probing {
            None => 0,
            Some(p) => {
                build_levels(self).iter().filter(|l| l.is_hashed()).count()
                    * p.probe_table_size()
                    * p.num_probes
            }
        }
    }
}

/// Level schedule for `cfg`, coarse to fine.
pub fn build_levels(cfg: &GridConfig) -> Vec<LevelSpec> {
    let t_max = cfg.max_table_size() as u128;
    (0..cfg.num_levels)
        .map(|index| {
            let resolution = 1u32 << (cfg.base_resolution_log2 as usize + index);
            let dense_rows = (resolution as u128).pow(3);
            let (storage, table_size) = if dense_rows <= t_max {
                (StorageMode::Dense, dense_rows as usize)
            } else {
                (StorageMode::Hashed, t_max as usize)
            };
            LevelSpec {
                index,
                resolution,
                storage,
                table_size,
            }
        })
        .collect()
}

/// XOR of per-axis products, reduced modulo the power-of-two `table_size`.
#[inline]
pub fn spatial_hash(v: [u32; 3], table_size: usize) -> usize {
    let h = v[0].wrapping_mul(HASH_PRIMES[0])
        ^ v[1].wrapping_mul(HASH_PRIMES[1])
        ^ v[2].wrapping_mul(HASH_PRIMES[2]);
    h as usize & (table_size - 1)
}

/// Row-major index `i + N j + N^2 k` used by dense levels.
#[inline]
pub fn dense_index(v: [u32; 3], resolution: u32) -> usize {
    let n = resolution as usize;
    v[0] as usize + n * (v[1] as usize + n * v[2] as usize)
}

/// Clamps a coordinate into `[0, 1)`, counting every adjustment.
#[inline]
pub fn clamp_unit(x: f64) -> f64 {
    const HI: f64 = 1.0 - f64::EPSILON / 2.0;
    if (0.0..1.0).contains(&x) {
        x
    } else {
        CLAMPED.fetch_add(1, Ordering::Relaxed);
        if x >= 1.0 {
            HI
        } else {
            0.0
        }
    }
}

/// The cell enclosing a query point at one resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub origin: [u32; 3],
    pub frac: [f64; 3],
}

impl Cell {
    #[inline]
    pub fn locate(p: [f64; 3], resolution: u32) -> Self {
        let scale = (resolution - 1) as f64;
        let max_origin = resolution - 2;
        let mut origin = [0u32; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let pos = clamp_unit(p[a]) * scale;
            let i = (pos.floor() as u32).min(max_origin);
            origin[a] = i;
            frac[a] = pos - i as f64;
        }
        Self { origin, frac }
    }

    /// Corner `c` (bit 0 = x, bit 1 = y, bit 2 = z) and its trilinear weight.
    #[inline]
    pub fn corner(&self, c: usize) -> ([u32; 3], f64) {
        let mut v = self.origin;
        let mut w = 1.0;
        for (a, &f) in self.frac.iter().enumerate() {
            if (c >> a) & 1 == 1 {
                v[a] += 1;
                w *= f;
            } else {
                w *= 1.0 - f;
            }
        }
        (v, w)
    }

    pub fn corners(&self) -> [([u32; 3], f64); 8] {
        std::array::from_fn(|c| self.corner(c))
    }
}

/// Learnable rows of one level, `rows x dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable<T> {
    pub rows: usize,
    pub dim: usize,
    pub params: ParamBuf<T>,
}

impl<T: Real> FeatureTable<T> {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            params: ParamBuf::zeros(rows * dim),
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.params.values[r * self.dim..(r + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.params.values[r * self.dim..(r + 1) * self.dim]
    }

    #[inline]
    pub fn grad_row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.params.grad[r * self.dim..(r + 1) * self.dim]
    }
}

/// Trilinear interpolation of `table` at `p` on a level without probing.
pub fn interpolate<T: Real>(level: &LevelSpec, table: &FeatureTable<T>, p: [f64; 3]) -> Vec<T> {
    let mut out = vec![T::zero(); table.dim];
    let cell = Cell::locate(p, level.resolution);
    for c in 0..8 {
        let (v, w) = cell.corner(c);
        let w = T::of(w);
        for (o, &f) in out.iter_mut().zip(table.row(level.base_row(v))) {
            *o += w * f;
        }
    }
    out
}

/// Adds `w_c * upstream` to the gradient row of each of the 8 corners.
pub fn interpolate_backward<T: Real>(
    level: &LevelSpec,
    table: &mut FeatureTable<T>,
    p: [f64; 3],
    upstream: &[T],
) {
    let cell = Cell::locate(p, level.resolution);
    for c in 0..8 {
        let (v, w) = cell.corner(c);
        let w = T::of(w);
        let g = table.grad_row_mut(level.base_row(v));
        for (gi, &u) in g.iter_mut().zip(upstream) {
            *gi += w * u;
        }
    }
}

/// A multi-resolution grid: level schedule, feature tables and optional probe tables.
#[derive(Debug, Clone, PartialEq)]
pub struct HashGrid<T> {
    config: GridConfig,
    levels: Vec<LevelSpec>,
    pub tables: Vec<FeatureTable<T>>,
    /// `Some` exactly on hashed levels when probing is configured.
    pub probes: Vec<Option<ProbeTable<T>>>,
}

impl<T: Real> HashGrid<T> {
    /// A grid with all features and probe logits zero.
    pub fn zeros(config: GridConfig) -> Result<Self> {
        config.validate()?;
        let levels = build_levels(&config);
        let tables = levels
            .iter()
            .map(|l| FeatureTable::zeros(l.table_size, config.feature_dim))
            .collect();
        let probes = levels
            .iter()
            .map(|l| match (&config.probing, l.storage) {
                (Some(p), StorageMode::Hashed) => Some(ProbeTable::zeros(p)),
                _ => None,
            })
            .collect();
        Ok(Self {
            config,
            levels,
            tables,
            probes,
        })
    }

    /// Features uniform in `[-init_scale, init_scale]`, probe logits zero.
    pub fn new<R: Rng>(config: GridConfig, rng: &mut R) -> Result<Self> {
        let mut grid = Self::zeros(config)?;
        let s = grid.config.init_scale;
        if s > 0.0 {
            for t in &mut grid.tables {
                for v in &mut t.params.values {
                    *v = T::of(rng.gen_range(-s..=s));
                }
            }
        }
        Ok(grid)
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn levels(&self) -> &[LevelSpec] {
        &self.levels
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    pub fn set_probe_temperature(&mut self, temperature: f64) {
        if let Some(p) = &mut self.config.probing {
            p.temperature = temperature;
        }
    }

    /// Adds the weighted feature of vertex `v` at level `l` into `out`.
    #[inline]
    fn lookup_accumulate(&self, l: usize, v: [u32; 3], w: T, mode: ProbeMode, out: &mut [T]) {
        let level = &self.levels[l];
        let table = &self.tables[l];
        match (&self.probes[l], &self.config.probing) {
            (Some(probes), Some(pc)) => {
                probing::accumulate(level, table, probes, pc, mode, v, w, out)
            }
            _ => {
                for (o, &f) in out.iter_mut().zip(table.row(level.base_row(v))) {
                    *o += w * f;
                }
            }
        }
    }

    /// Interpolated feature of one level, probing applied on hashed levels.
    pub fn level_feature(&self, l: usize, p: [f64; 3], mode: ProbeMode, out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        let cell = Cell::locate(p, self.levels[l].resolution);
        for c in 0..8 {
            let (v, w) = cell.corner(c);
            self.lookup_accumulate(l, v, T::of(w), mode, out);
        }
    }

    /// Per-level features concatenated coarse to fine into `out` (`L * F` wide).
    pub fn encode_into(&self, p: [f64; 3], mode: ProbeMode, out: &mut [T]) {
        let f = self.config.feature_dim;
        debug_assert_eq!(out.len(), self.output_dim());
        for (l, chunk) in out.chunks_exact_mut(f).enumerate() {
            self.level_feature(l, p, mode, chunk);
        }
    }

    pub fn encode_point(&self, p: [f64; 3], mode: ProbeMode) -> Vec<T> {
        let mut out = vec![T::zero(); self.output_dim()];
        self.encode_into(p, mode, &mut out);
        out
    }

    /// Accumulates the gradient of `<upstream, encode_point(p)>` into the tables
    /// (and probe logits in soft mode).
    pub fn encode_backward(&mut self, p: [f64; 3], upstream: &[T], mode: ProbeMode) {
        let f = self.config.feature_dim;
        debug_assert_eq!(upstream.len(), self.output_dim());
        for l in 0..self.levels.len() {
            let g = &upstream[l * f..(l + 1) * f];
            if g.iter().all(|x| x.is_zero()) {
                continue;
            }
            let level = self.levels[l];
            let cell = Cell::locate(p, level.resolution);
            for c in 0..8 {
                let (v, w) = cell.corner(c);
                let w = T::of(w);
                match (&mut self.probes[l], &self.config.probing) {
                    (Some(probes), Some(pc)) => probing::accumulate_backward(
                        &level,
                        &mut self.tables[l],
                        probes,
                        pc,
                        mode,
                        v,
                        w,
                        g,
                    ),
                    _ => {
                        let row = self.tables[l].grad_row_mut(level.base_row(v));
                        for (gi, &u) in row.iter_mut().zip(g) {
                            *gi += w * u;
                        }
                    }
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.tables.iter_mut().for_each(|t| t.params.zero_grad());
        self.probes
            .iter_mut()
            .flatten()
            .for_each(|p| p.params.zero_grad());
    }

    pub fn cast<U: Real>(&self) -> HashGrid<U> {
        HashGrid {
            config: self.config.clone(),
            levels: self.levels.clone(),
            tables: self
                .tables
                .iter()
                .map(|t| FeatureTable {
                    rows: t.rows,
                    dim: t.dim,
                    params: t.params.cast(),
                })
                .collect(),
            probes: self
                .probes
                .iter()
                .map(|p| p.as_ref().map(|p| p.cast()))
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
    fn default_schedule_matches_dense_then_hashed() {
        let levels = build_levels(&GridConfig::default());
        assert_eq!(levels.len(), 24);
        assert_eq!(levels[0].resolution, 32);
        assert_eq!(levels[23].resolution, 1 << 28);
        let dense: Vec<_> = levels.iter().take(3).map(|l| l.table_size).collect();
        assert_eq!(dense, vec![1 << 15, 1 << 18, 1 << 21]);
        assert!(levels[..3].iter().all(|l| l.storage == StorageMode::Dense));
        assert!(levels[3..]
            .iter()
            .all(|l| l.storage == StorageMode::Hashed && l.table_size == 1 << 22));
        assert!(levels.windows(2).all(|w| w[0].resolution < w[1].resolution));
        assert_eq!(GridConfig::default().total_rows(), 90_472_448);
    }

    #[test]
    fn single_coarse_dense_level() {
        let cfg = GridConfig {
            num_levels: 1,
            base_resolution_log2: 2,
            ..GridConfig::default()
        };
        let levels = build_levels(&cfg);
        assert_eq!(levels.len(), 1);
        assert_eq!(
            (levels[0].resolution, levels[0].storage, levels[0].table_size),
            (4, StorageMode::Dense, 64)
        );
    }

    #[test]
    fn hash_examples() {
        assert_eq!(spatial_hash([0, 0, 0], 1 << 22), 0);
        assert_eq!(spatial_hash([1, 0, 0], 1 << 22), 1);
        assert_eq!(spatial_hash([0, 1, 0], 1 << 22), 2_654_435_761 % (1 << 22));
        assert_eq!(spatial_hash([0, 0, 1], 1 << 12), 805_459_861 % (1 << 12));
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            GridConfig {
                num_levels: 0,
                ..GridConfig::default()
            },
            GridConfig {
                feature_dim: 0,
                ..GridConfig::default()
            },
            GridConfig {
                num_levels: 30,
                ..GridConfig::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn vertex_query_returns_stored_feature() {
        let cfg = GridConfig {
            num_levels: 1,
            base_resolution_log2: 3,
            feature_dim: 3,
            ..GridConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let grid: HashGrid<f64> = HashGrid::new(cfg, &mut rng).unwrap();
        let level = grid.levels()[0];
        // Vertex (2, 5, 1) of an 8-vertex lattice.
        let p = [2.0 / 7.0, 5.0 / 7.0, 1.0 / 7.0];
        let got = interpolate(&level, &grid.tables[0], p);
        let want = grid.tables[0].row(dense_index([2, 5, 1], 8));
        for (a, b) in got.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_table_interpolates_to_zero() {
        let grid: HashGrid<f32> = HashGrid::zeros(GridConfig {
            num_levels: 4,
            log2_table_size: 10,
            ..GridConfig::default()
        })
        .unwrap();
        let e = grid.encode_point([0.3, 0.9, 0.1], ProbeMode::Soft);
        assert_eq!(e.len(), 8);
        assert!(e.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn vertex_query_backward_hits_one_row() {
        let cfg = GridConfig {
            num_levels: 1,
            base_resolution_log2: 2,
            ..GridConfig::default()
        };
        let mut grid: HashGrid<f64> = HashGrid::zeros(cfg).unwrap();
        let level = grid.levels()[0];
        interpolate_backward(&level, &mut grid.tables[0], [1.0 / 3.0, 0.0, 2.0 / 3.0], &[1.5, -2.0]);
        let touched: Vec<usize> = (0..64)
            .filter(|&r| grid.tables[0].params.grad[2 * r..2 * r + 2] != [0.0, 0.0])
            .collect();
        assert_eq!(touched, vec![dense_index([1, 0, 2], 4)]);
        let r = touched[0];
        assert!((grid.tables[0].params.grad[2 * r] - 1.5).abs() < 1e-12);

        grid.zero_grad();
        interpolate_backward(&level, &mut grid.tables[0], [0.2, 0.7, 0.4], &[0.0, 0.0]);
        assert!(grid.tables[0].params.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn out_of_range_points_are_clamped_and_counted() {
        let before = clamped_count();
        let c = Cell::locate([1.0, -0.25, 0.5], 16);
        assert!(clamped_count() >= before + 2);
        assert_eq!(c.origin[0], 14);
        assert!(c.frac[0] <= 1.0);
        assert_eq!((c.origin[1], c.frac[1]), (0, 0.0));
    }
}
