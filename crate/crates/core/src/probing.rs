//! Learned hash probing.
//!
//! A hashed vertex no longer owns a single row: it owns the `P` consecutive
//! candidate rows starting at its base hash slot (modulo the table size). A
//! second, independent hash selects a row of a compact logits table whose
//! softmax weighs the candidates. Training mixes candidates softly so the
//! logits receive gradients; inference takes the argmax candidate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::hashgrid::{Cell, FeatureTable, HashGrid, LevelSpec};
use crate::real::{ParamBuf, Real};

/// Multipliers of the probe-row hash. Distinct from [`crate::hashgrid::HASH_PRIMES`]
/// so vertices sharing a base slot can still receive different probe decisions.
pub const PROBE_PRIMES: [u32; 3] = [73_856_093, 19_349_663, 83_492_791];

/// Upper bound on `num_probes`; lets the hot path keep softmax weights on the stack.
pub const MAX_PROBES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeMode {
    /// Softmax mixture of the candidates; differentiable in the logits.
    Soft,
    /// Argmax candidate, ties to the lowest offset.
    #[default]
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub num_probes: usize,
    pub log2_probe_table_size: u32,
    pub temperature: f64,
    /// Selection used at inference; training always mixes softly.
    pub mode: ProbeMode,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            num_probes: 8,
            log2_probe_table_size: 16,
            temperature: 1.0,
            mode: ProbeMode::Hard,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_probes < 2 || !self.num_probes.is_power_of_two() || self.num_probes > MAX_PROBES
        {
            return Err(Error::Config(format!(
                "num_probes must be a power of two in [2, {MAX_PROBES}], got {}",
                self.num_probes
            )));
        }
        if self.log2_probe_table_size > 30 {
            return Err(Error::Config("log2_probe_table_size must be at most 30".into()));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config("probe temperature must be positive".into()));
        }
        Ok(())
    }

    pub fn probe_table_size(&self) -> usize {
        1usize << self.log2_probe_table_size
    }
}

/// Logits of shape `(T_p, P)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTable<T> {
    pub rows: usize,
    pub num_probes: usize,
    pub params: ParamBuf<T>,
}

impl<T: Real> ProbeTable<T> {
    pub fn zeros(cfg: &ProbeConfig) -> Self {
        Self {
            rows: cfg.probe_table_size(),
            num_probes: cfg.num_probes,
            params: ParamBuf::zeros(cfg.probe_table_size() * cfg.num_probes),
        }
    }

    #[inline]
    pub fn logits(&self, row: usize) -> &[T] {
        &self.params.values[row * self.num_probes..(row + 1) * self.num_probes]
    }

    #[inline]
    pub fn logits_mut(&mut self, row: usize) -> &mut [T] {
        &mut self.params.values[row * self.num_probes..(row + 1) * self.num_probes]
    }

    /// Offset chosen in hard mode for probe row `row`.
    #[inline]
    pub fn argmax(&self, row: usize) -> usize {
        let z = self.logits(row);
        let mut best = 0;
        for k in 1..z.len() {
            if z[k] > z[best] {
                best = k;
            }
        }
        best
    }

    pub fn cast<U: Real>(&self) -> ProbeTable<U> {
        ProbeTable {
            rows: self.rows,
            num_probes: self.num_probes,
            params: self.params.cast(),
        }
    }
}

#[inline]
pub fn probe_hash(v: [u32; 3], probe_table_size: usize) -> usize {
    let h = v[0].wrapping_mul(PROBE_PRIMES[0])
        ^ v[1].wrapping_mul(PROBE_PRIMES[1])
        ^ v[2].wrapping_mul(PROBE_PRIMES[2]);
    h as usize & (probe_table_size - 1)
}

#[inline]
pub fn candidate_row(base: usize, offset: usize, table_size: usize) -> usize {
    (base + offset) & (table_size - 1)
}

/// Softmax of `logits / temperature` into `out[..logits.len()]`.
#[inline]
fn softmax<T: Real>(logits: &[T], temperature: f64, out: &mut [T; MAX_PROBES]) {
    let max = logits.iter().fold(T::neg_infinity(), |m, &z| m.max(z));
    let inv_tau = T::of(1.0 / temperature);
    let mut sum = T::zero();
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = ((z - max) * inv_tau).exp();
        sum += *o;
    }
    let inv = sum.recip();
    for o in out.iter_mut().take(logits.len()) {
        *o *= inv;
    }
}

/// Final row of `v` under hard probing.
#[inline]
pub fn hard_row<T: Real>(level: &LevelSpec, probes: &ProbeTable<T>, v: [u32; 3]) -> usize {
    let base = level.base_row(v);
    let k = probes.argmax(probe_hash(v, probes.rows));
    candidate_row(base, k, level.table_size)
}

/// `out += w * lookup(v)`.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn accumulate<T: Real>(
    level: &LevelSpec,
    table: &FeatureTable<T>,
    probes: &ProbeTable<T>,
    cfg: &ProbeConfig,
    mode: ProbeMode,
    v: [u32; 3],
    w: T,
    out: &mut [T],
) {
    let base = level.base_row(v);
    let prow = probe_hash(v, probes.rows);
    match mode {
        ProbeMode::Hard => {
            let r = candidate_row(base, probes.argmax(prow), level.table_size);
            for (o, &f) in out.iter_mut().zip(table.row(r)) {
                *o += w * f;
            }
        }
        ProbeMode::Soft => {
            let mut p = [T::zero(); MAX_PROBES];
            let logits = probes.logits(prow);
            softmax(logits, cfg.temperature, &mut p);
            for (k, &pk) in p.iter().enumerate().take(logits.len()) {
                let wk = w * pk;
                let r = candidate_row(base, k, level.table_size);
                for (o, &f) in out.iter_mut().zip(table.row(r)) {
                    *o += wk * f;
                }
            }
        }
    }
}

/// Gradient of `<g, w * lookup(v)>` into the candidate rows and, in soft mode, the logits.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn accumulate_backward<T: Real>(
    level: &LevelSpec,
    table: &mut FeatureTable<T>,
    probes: &mut ProbeTable<T>,
    cfg: &ProbeConfig,
    mode: ProbeMode,
    v: [u32; 3],
    w: T,
    g: &[T],
) {
    let base = level.base_row(v);
    let prow = probe_hash(v, probes.rows);
    match mode {
        ProbeMode::Hard => {
            let r = candidate_row(base, probes.argmax(prow), level.table_size);
            for (gi, &u) in table.grad_row_mut(r).iter_mut().zip(g) {
                *gi += w * u;
            }
        }
        ProbeMode::Soft => {
            let n = probes.num_probes;
            let mut p = [T::zero(); MAX_PROBES];
            softmax(probes.logits(prow), cfg.temperature, &mut p);
            // s_k = <g, row_k>; d/dz_k = w p_k (s_k - sum_j p_j s_j) / tau
            let mut s = [T::zero(); MAX_PROBES];
            let mut mean = T::zero();
            for k in 0..n {
                let r = candidate_row(base, k, level.table_size);
                let wk = w * p[k];
                s[k] = table.row(r).iter().zip(g).map(|(&f, &u)| f * u).sum();
                mean += p[k] * s[k];
                for (gi, &u) in table.grad_row_mut(r).iter_mut().zip(g) {
                    *gi += wk * u;
                }
            }
            let scale = w * T::of(1.0 / cfg.temperature);
            let grad = &mut probes.params.grad[prow * n..(prow + 1) * n];
            for k in 0..n {
                grad[k] += scale * p[k] * (s[k] - mean);
            }
        }
    }
}

/// Feature of a single vertex on a hashed level.
pub fn probed_lookup<T: Real>(
    level: &LevelSpec,
    table: &FeatureTable<T>,
    probes: &ProbeTable<T>,
    cfg: &ProbeConfig,
    mode: ProbeMode,
    v: [u32; 3],
) -> Vec<T> {
    let mut out = vec![T::zero(); table.dim];
    accumulate(level, table, probes, cfg, mode, v, T::one(), &mut out);
    out
}

/// Backward of [`probed_lookup`]. Hard mode produces no logit gradient.
pub fn probed_lookup_backward<T: Real>(
    level: &LevelSpec,
    table: &mut FeatureTable<T>,
    probes: &mut ProbeTable<T>,
    cfg: &ProbeConfig,
    mode: ProbeMode,
    v: [u32; 3],
    upstream: &[T],
) {
    accumulate_backward(level, table, probes, cfg, mode, v, T::one(), upstream);
}

/// How final rows are chosen when counting collisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionMode {
    /// Base slot only.
    Fixed,
    /// Base slot plus the argmax probe offset where a probe table exists.
    HardProbed,
}

/// Collision statistics of one level over a set of distinct vertices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelCollision {
    pub level: usize,
    pub resolution: u32,
    pub storage: crate::hashgrid::StorageMode,
    pub table_size: usize,
    pub distinct_vertices: usize,
    pub occupied_rows: usize,
    /// `1 - occupied_rows / distinct_vertices`.
    pub collision_rate: f64,
    /// Fraction of distinct vertices whose row holds at least one other vertex.
    pub shared_fraction: f64,
}

/// Distinct interpolation-corner vertices of `points` at `resolution`, sorted.
pub fn distinct_corner_vertices(
    exec: Execution,
    points: &[[f64; 3]],
    resolution: u32,
) -> Vec<[u32; 3]> {
    let pack = |v: [u32; 3]| ((v[0] as u128) << 64) | ((v[1] as u128) << 32) | v[2] as u128;
    let mut keys: Vec<u128> = Vec::with_capacity(points.len() * 8);
    for p in points {
        let cell = Cell::locate(*p, resolution);
        for c in 0..8 {
            keys.push(pack(cell.corner(c).0));
        }
    }
    exec::sort_unstable(exec, &mut keys);
    keys.dedup();
    keys.into_iter()
        .map(|k| [(k >> 64) as u32, (k >> 32) as u32, k as u32])
        .collect()
}

/// Occupancy statistics from the final rows of distinct vertices.
pub fn collision_stats(exec: Execution, level: &LevelSpec, mut rows: Vec<u32>) -> LevelCollision {
    let distinct = rows.len();
    exec::sort_unstable(exec, &mut rows);
    let mut occupied = 0;
    let mut shared = 0;
    let mut i = 0;
    while i < rows.len() {
        let mut j = i + 1;
        while j < rows.len() && rows[j] == rows[i] {
            j += 1;
        }
        occupied += 1;
        if j - i > 1 {
            shared += j - i;
        }
        i = j;
    }
    let (collision_rate, shared_fraction) = if distinct == 0 {
        (0.0, 0.0)
    } else {
        (
            1.0 - occupied as f64 / distinct as f64,
            shared as f64 / distinct as f64,
        )
    };
    LevelCollision {
        level: level.index,
        resolution: level.resolution,
        storage: level.storage,
        table_size: level.table_size,
        distinct_vertices: distinct,
        occupied_rows: occupied,
        collision_rate,
        shared_fraction,
    }
}

/// Final rows of `vertices` on one level.
pub fn final_rows<T: Real>(
    exec: Execution,
    level: &LevelSpec,
    probes: Option<&ProbeTable<T>>,
    mode: CollisionMode,
    vertices: &[[u32; 3]],
) -> Vec<u32> {
    match (mode, probes) {
        (CollisionMode::HardProbed, Some(pt)) if level.is_hashed() => {
            exec::map(exec, vertices, |&v| hard_row(level, pt, v) as u32)
        }
        _ => exec::map(exec, vertices, |&v| level.base_row(v) as u32),
    }
}

/// Per-level effective collision rate of the corner vertices of `points`.
pub fn effective_collision_rate<T: Real>(
    grid: &HashGrid<T>,
    points: &[[f64; 3]],
    mode: CollisionMode,
) -> Result<Vec<LevelCollision>> {
    if points.is_empty() {
        return Err(Error::Empty("point set"));
    }
    let exec = Execution::default();
    Ok(grid
        .levels()
        .iter()
        .map(|level| {
            let vertices = distinct_corner_vertices(exec, points, level.resolution);
            let rows = final_rows(exec, level, grid.probes[level.index].as_ref(), mode, &vertices);
            collision_stats(exec, level, rows)
        })
        .collect())
}

/// Greedy probe assignment for a known vertex set on one hashed level.
///
/// Vertices are grouped by probe row (a group shares one decision). Groups are
/// visited largest first and each takes the offset whose candidate rows are
/// least occupied so far, ties to the lowest offset. The result is one-hot
/// logits; if the greedy assignment ends up with more collisions than fixed
/// hashing, all-zero logits (offset 0 everywhere) are returned instead.
pub fn greedy_assignment<T: Real>(
    level: &LevelSpec,
    cfg: &ProbeConfig,
    vertices: &[[u32; 3]],
) -> ProbeTable<T> {
    let mut table = ProbeTable::zeros(cfg);
    if !level.is_hashed() || vertices.is_empty() {
        return table;
    }
    let tp = cfg.probe_table_size();
    let mut pairs: Vec<(u32, u32)> = vertices
        .iter()
        .map(|&v| (probe_hash(v, tp) as u32, level.base_row(v) as u32))
        .collect();
    pairs.sort_unstable();

    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i + 1;
        while j < pairs.len() && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        groups.push((i, j));
        i = j;
    }
    groups.sort_by(|a, b| (b.1 - b.0).cmp(&(a.1 - a.0)).then(a.0.cmp(&b.0)));

    let mut occupied = vec![false; level.table_size];
    for &(start, end) in &groups {
        let members = &pairs[start..end];
        let best = (0..cfg.num_probes)
            .min_by_key(|&k| {
                let cost = members
                    .iter()
                    .filter(|&&(_, b)| occupied[candidate_row(b as usize, k, level.table_size)])
                    .count();
                (cost, k)
            })
            .unwrap_or(0);
        for &(_, b) in members {
            occupied[candidate_row(b as usize, best, level.table_size)] = true;
        }
        table.logits_mut(members[0].0 as usize)[best] = T::one();
    }

    let exec = Execution::Sequential;
    let fixed = collision_stats(
        exec,
        level,
        final_rows::<T>(exec, level, None, CollisionMode::Fixed, vertices),
    );
    let greedy = collision_stats(
        exec,
        level,
        final_rows(exec, level, Some(&table), CollisionMode::HardProbed, vertices),
    );
    if greedy.occupied_rows < fixed.occupied_rows {
        ProbeTable::zeros(cfg)
    } else {
        table
    }
}
