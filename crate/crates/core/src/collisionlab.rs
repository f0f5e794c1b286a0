//! Hash-collision simulations over ten point-distribution scenarios.
//!
//! Every scenario draws elevations uniformly in `[0, 100]` m (once per site
//! for site-based scenarios). Global and
//! regional coverage is area-uniform (uniform in `sin(latitude)`), and
//! cluster centers and sites are drawn the same way. Patch centers keep
//! `|latitude| <= 85` so that metric patches stay well-formed in longitude.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::earth4d::{Earth4DConfig, Earth4DEncoder, Projection};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::geocoords::{normalize, GeodeticPoint, NormalizationConfig};
use crate::hashgrid::build_levels;
use crate::probing::{
    collision_stats, distinct_corner_vertices, final_rows, greedy_assignment, CollisionMode,
    LevelCollision, ProbeConfig, ProbeTable,
};

pub const DEFAULT_POINTS: usize = 100_000;
pub const ELEVATION_RANGE_M: (f64, f64) = (0.0, 100.0);
/// Latitude/longitude box standing in for North America.
pub const NORTH_AMERICA: Region = Region {
    lat_min: 15.0,
    lat_max: 72.0,
    lon_min: -168.0,
    lon_max: -52.0,
};
const PATCH_LAT_LIMIT: f64 = 85.0;
const HOUR_S: f64 = 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spatial {
    Global,
    Region(Region),
    /// `count` square patches of `side_m` metres, centers drawn per seed.
    Patches { count: usize, side_m: f64 },
    /// A fixed set of sites; `None` derives the count from the point budget.
    Sites { count: Option<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Temporal {
    Full,
    /// `count` windows of `length_s` seconds, starts drawn per seed.
    Windows { count: usize, length_s: f64 },
    /// Every site observed at `count` evenly spaced instants across the window.
    Steps { count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scenario {
    pub name: &'static str,
    pub title: &'static str,
    pub description: &'static str,
    pub spatial: Spatial,
    pub temporal: Temporal,
}

pub const SCENARIOS: [Scenario; 10] = [
    Scenario {
        name: "uniform_random",
        title: "Uniform Random",
        description: "Uniform Earth surface sampling",
        spatial: Spatial::Global,
        temporal: Temporal::Full,
    },
    Scenario {
        name: "continental_sparse",
        title: "Continental Sparse",
        description: "Sparse continental coverage",
        spatial: Spatial::Region(NORTH_AMERICA),
        temporal: Temporal::Full,
    },
    Scenario {
        name: "moderate_spatial_cluster",
        title: "Moderate Spatial Cluster",
        description: "City-scale clustering",
        spatial: Spatial::Patches { count: 1, side_m: 10_000.0 },
        temporal: Temporal::Full,
    },
    Scenario {
        name: "moderate_temporal_cluster",
        title: "Moderate Temporal Cluster",
        description: "Temporal sampling at fixed locations",
        spatial: Spatial::Sites { count: Some(1_000) },
        temporal: Temporal::Full,
    },
    Scenario {
        name: "moderate_spatiotemporal",
        title: "Moderate Spatiotemporal",
        description: "Neighborhood-scale event",
        spatial: Spatial::Patches { count: 1, side_m: 1_000.0 },
        temporal: Temporal::Windows { count: 1, length_s: HOUR_S },
    },
    Scenario {
        name: "extreme_spatial_single",
        title: "Extreme Spatial Single",
        description: "Building-scale dense clustering",
        spatial: Spatial::Patches { count: 1, side_m: 10.0 },
        temporal: Temporal::Full,
    },
    Scenario {
        name: "extreme_spatial_multi",
        title: "Extreme Spatial Multi",
        description: "10 dense clusters worldwide",
        spatial: Spatial::Patches { count: 10, side_m: 10.0 },
        temporal: Temporal::Full,
    },
    Scenario {
        name: "extreme_temporal_single",
        title: "Extreme Temporal Single",
        description: "Global snapshot",
        spatial: Spatial::Global,
        temporal: Temporal::Windows { count: 1, length_s: HOUR_S },
    },
    Scenario {
        name: "extreme_temporal_multi",
        title: "Extreme Temporal Multi",
        description: "10 temporal snapshots",
        spatial: Spatial::Global,
        temporal: Temporal::Windows { count: 10, length_s: HOUR_S },
    },
    Scenario {
        name: "time_series",
        title: "Time Series",
        description: "Regular temporal sampling",
        spatial: Spatial::Sites { count: None },
        temporal: Temporal::Steps { count: 100 },
    },
];

pub fn scenario(name: &str) -> Result<&'static Scenario> {
    SCENARIOS
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::UnknownScenario(name.to_string()))
}

impl Scenario {
    /// Points actually produced for a budget of `n`. Time series lays
    /// `n / steps` sites (at least one) on the step grid, so a budget of one
    /// million gives exactly 10k sites by 100 steps.
    pub fn realized_points(&self, n: usize) -> usize {
        match self.temporal {
            Temporal::Steps { count } => (n / count).max(1) * count,
            _ => n,
        }
    }

    fn site_count(&self, n: usize) -> Option<usize> {
        match (self.spatial, self.temporal) {
            (Spatial::Sites { count: Some(c) }, _) => Some(c),
            (Spatial::Sites { count: None }, Temporal::Steps { count }) => Some((n / count).max(1)),
            (Spatial::Sites { count: None }, _) => Some(n),
            _ => None,
        }
    }
}

/// A square patch in local east/north metres around its center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub side_m: f64,
}

/// A fixed observation site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub elevation_m: f64,
}

/// The realized envelope of a generated point set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub region: Option<Region>,
    pub patches: Vec<Patch>,
    pub sites: Vec<Site>,
    /// Half-open `[start, end)` time windows; empty means the full window.
    pub windows: Vec<(f64, f64)>,
    pub steps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub points: Vec<GeodeticPoint>,
    pub envelope: Envelope,
}

fn uniform_lat(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let (a, b) = (lo.to_radians().sin(), hi.to_radians().sin());
    rng.gen_range(a..=b).clamp(-1.0, 1.0).asin().to_degrees()
}

fn uniform_lon(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

fn wrap_lon(lon: f64) -> f64 {
    let w = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if w < -180.0 { w + 360.0 } else { w }
}

/// Degrees per metre north and east at latitude `lat_deg` on a sphere of radius `r`.
fn metres_to_degrees(lat_deg: f64, r: f64) -> (f64, f64) {
    let per_m = 180.0 / (PI * r);
    (per_m, per_m / lat_deg.to_radians().cos())
}

impl Patch {
    fn sample(&self, rng: &mut ChaCha8Rng, r: f64) -> (f64, f64) {
        let h = self.side_m / 2.0;
        let (dn, de) = (rng.gen_range(-h..h), rng.gen_range(-h..h));
        let (dlat, dlon) = metres_to_degrees(self.lat_deg, r);
        (self.lat_deg + dn * dlat, wrap_lon(self.lon_deg + de * dlon))
    }

    /// Local (east, north) offset of a location from the patch center, in metres.
    pub fn offset_m(&self, lat_deg: f64, lon_deg: f64, r: f64) -> (f64, f64) {
        let (dlat, dlon) = metres_to_degrees(self.lat_deg, r);
        let de = wrap_lon(lon_deg - self.lon_deg);
        (de / dlon, (lat_deg - self.lat_deg) / dlat)
    }

    pub fn contains(&self, lat_deg: f64, lon_deg: f64, r: f64) -> bool {
        let (e, n) = self.offset_m(lat_deg, lon_deg, r);
        let h = self.side_m / 2.0 * (1.0 + 1e-9);
        e.abs() <= h && n.abs() <= h
    }
}

impl Envelope {
    pub fn contains(&self, p: &GeodeticPoint, norm: &NormalizationConfig) -> bool {
        let r = norm.semi_major_axis_m;
        let elev_ok = (ELEVATION_RANGE_M.0..=ELEVATION_RANGE_M.1).contains(&p.elevation_m);
        let time_ok = if !self.steps.is_empty() {
            self.steps.contains(&p.time_s)
        } else if !self.windows.is_empty() {
            self.windows.iter().any(|&(a, b)| p.time_s >= a && p.time_s < b)
        } else {
            p.time_s >= norm.time_start_s && p.time_s < norm.time_end_s
        };
        let space_ok = if let Some(reg) = self.region {
            (reg.lat_min..=reg.lat_max).contains(&p.latitude_deg)
                && (reg.lon_min..=reg.lon_max).contains(&p.longitude_deg)
        } else if !self.patches.is_empty() {
            self.patches.iter().any(|pa| pa.contains(p.latitude_deg, p.longitude_deg, r))
        } else if !self.sites.is_empty() {
            self.sites
                .iter()
                .any(|s| (s.lat_deg, s.lon_deg, s.elevation_m) == (p.latitude_deg, p.longitude_deg, p.elevation_m))
        } else {
            (-90.0..=90.0).contains(&p.latitude_deg)
        };
        elev_ok && time_ok && space_ok
    }
}

/// Draws the point set of `scenario` for a budget of `n` points.
pub fn generate(scenario: &Scenario, seed: u64, n: usize, norm: &NormalizationConfig) -> Result<Generated> {
    if n == 0 {
        return Err(Error::Empty("point budget"));
    }
    norm.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let elevation = |rng: &mut ChaCha8Rng| rng.gen_range(ELEVATION_RANGE_M.0..=ELEVATION_RANGE_M.1);
    let r = norm.semi_major_axis_m;
    let (t0, t1) = (norm.time_start_s, norm.time_end_s);
    let mut env = Envelope {
        region: None,
        patches: Vec::new(),
        sites: Vec::new(),
        windows: Vec::new(),
        steps: Vec::new(),
    };

    match scenario.spatial {
        Spatial::Region(reg) => env.region = Some(reg),
        Spatial::Patches { count, side_m } => {
            env.patches = (0..count)
                .map(|_| Patch {
                    lat_deg: uniform_lat(&mut rng, -PATCH_LAT_LIMIT, PATCH_LAT_LIMIT),
                    lon_deg: uniform_lon(&mut rng, -180.0, 180.0),
                    side_m,
                })
                .collect();
        }
        Spatial::Sites { .. } => {
            let count = scenario.site_count(n).unwrap_or(n);
            env.sites = (0..count)
                .map(|_| Site {
                    lat_deg: uniform_lat(&mut rng, -90.0, 90.0),
                    lon_deg: uniform_lon(&mut rng, -180.0, 180.0),
                    elevation_m: elevation(&mut rng),
                })
                .collect();
        }
        Spatial::Global => {}
    }
    match scenario.temporal {
        Temporal::Windows { count, length_s } => {
            env.windows = (0..count)
                .map(|_| {
                    let a = rng.gen_range(t0..t1 - length_s);
                    (a, a + length_s)
                })
                .collect();
        }
        Temporal::Steps { count } => {
            let dt = (t1 - t0) / count as f64;
            env.steps = (0..count).map(|k| t0 + k as f64 * dt).collect();
        }
        Temporal::Full => {}
    }

    let points = if let Temporal::Steps { .. } = scenario.temporal {
        let mut pts = Vec::with_capacity(env.sites.len() * env.steps.len());
        for s in &env.sites {
            for &t in &env.steps {
                pts.push(GeodeticPoint::new(s.lat_deg, s.lon_deg, s.elevation_m, t));
            }
        }
        pts
    } else {
        (0..n)
            .map(|_| {
                let (lat, lon, h) = match scenario.spatial {
                    Spatial::Global => (
                        uniform_lat(&mut rng, -90.0, 90.0),
                        uniform_lon(&mut rng, -180.0, 180.0),
                        elevation(&mut rng),
                    ),
                    Spatial::Region(reg) => (
                        uniform_lat(&mut rng, reg.lat_min, reg.lat_max),
                        uniform_lon(&mut rng, reg.lon_min, reg.lon_max),
                        elevation(&mut rng),
                    ),
                    Spatial::Patches { .. } => {
                        let k = rng.gen_range(0..env.patches.len());
                        let (lat, lon) = env.patches[k].sample(&mut rng, r);
                        (lat, lon, elevation(&mut rng))
                    }
                    Spatial::Sites { .. } => {
                        let s = env.sites[rng.gen_range(0..env.sites.len())];
                        (s.lat_deg, s.lon_deg, s.elevation_m)
                    }
                };
                let t = if env.windows.is_empty() {
                    rng.gen_range(t0..t1)
                } else {
                    let (a, b) = env.windows[rng.gen_range(0..env.windows.len())];
                    rng.gen_range(a..b)
                };
                GeodeticPoint::new(lat, lon, h, t)
            })
            .collect()
    };
    Ok(Generated { points, envelope: env })
}

/// Where probe decisions come from when measuring.
#[derive(Debug, Clone, Copy)]
pub enum Probing<'a> {
    Off,
    /// Greedy assignment computed from the measured vertices themselves.
    Greedy(ProbeConfig),
    /// Argmax of the logits in a trained encoder.
    Trained(&'a Earth4DEncoder<f32>),
}

impl Probing<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            Probing::Off => "off",
            Probing::Greedy(_) => "greedy",
            Probing::Trained(_) => "checkpoint",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbedLevel {
    pub occupied_rows: usize,
    pub collision_rate: f64,
    pub shared_fraction: f64,
    /// `100 * (fixed - probed) / fixed`, absent when the fixed rate is zero.
    pub reduction_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    #[serde(flatten)]
    pub fixed: LevelCollision,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub probed: Option<ProbedLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub grid: String,
    pub levels: Vec<LevelReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub title: String,
    pub description: String,
    pub seed: u64,
    pub requested_points: usize,
    pub points: usize,
    pub probing: String,
    pub grids: Vec<GridReport>,
}

impl ScenarioReport {
    pub fn grid(&self, name: &str) -> Option<&GridReport> {
        self.grids.iter().find(|g| g.grid == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub num_levels: usize,
    pub log2_table_size: u32,
    pub base_resolution_log2: u32,
    pub scenarios: Vec<ScenarioReport>,
}

fn probed_level(fixed: &LevelCollision, probed: &LevelCollision) -> ProbedLevel {
    ProbedLevel {
        occupied_rows: probed.occupied_rows,
        collision_rate: probed.collision_rate,
        shared_fraction: probed.shared_fraction,
        reduction_pct: (fixed.collision_rate > 0.0)
            .then(|| 100.0 * (fixed.collision_rate - probed.collision_rate) / fixed.collision_rate),
    }
}

/// Per-grid, per-level collision statistics of the interpolation corners of `points`.
pub fn measure(
    exec: Execution,
    points: &[GeodeticPoint],
    config: &Earth4DConfig,
    norm: &NormalizationConfig,
    probing: Probing<'_>,
) -> Result<Vec<GridReport>> {
    if points.is_empty() {
        return Err(Error::Empty("point set"));
    }
    config.validate()?;
    if let Probing::Trained(enc) = probing {
        if enc.config() != config {
            return Err(Error::Config("trained encoder config differs from the measured config".into()));
        }
    }
    let q = points
        .iter()
        .map(|p| normalize(p, norm).map(|n| n.to_array()))
        .collect::<Result<Vec<_>>>()?;

    let mut grids = Vec::with_capacity(4);
    for (g, proj) in Projection::ALL.iter().enumerate() {
        let gcfg = config.grid_config(g);
        let projected = exec::map(exec, &q, |&x| proj.project(x));
        let mut levels = Vec::new();
        for level in build_levels(gcfg) {
            let vertices = distinct_corner_vertices(exec, &projected, level.resolution);
            let rows = final_rows::<f32>(exec, &level, None, CollisionMode::Fixed, &vertices);
            let fixed = collision_stats(exec, &level, rows);
            let probed = match probing {
                Probing::Off => None,
                Probing::Greedy(pc) => {
                    let table: ProbeTable<f32> = greedy_assignment(&level, &pc, &vertices);
                    let rows = final_rows(exec, &level, Some(&table), CollisionMode::HardProbed, &vertices);
                    Some(collision_stats(exec, &level, rows))
                }
                Probing::Trained(enc) => {
                    let table = enc.grids[g].probes[level.index].as_ref();
                    let rows = final_rows(exec, &level, table, CollisionMode::HardProbed, &vertices);
                    Some(collision_stats(exec, &level, rows))
                }
            };
            levels.push(LevelReport {
                probed: probed.map(|p| probed_level(&fixed, &p)),
                fixed,
            });
        }
        grids.push(GridReport { grid: proj.name().to_string(), levels });
    }
    Ok(grids)
}

/// Generates and measures one scenario.
pub fn run_scenario(
    exec: Execution,
    scenario: &Scenario,
    seed: u64,
    n: usize,
    config: &Earth4DConfig,
    norm: &NormalizationConfig,
    probing: Probing<'_>,
) -> Result<ScenarioReport> {
    let generated = generate(scenario, seed, n, norm)?;
    let grids = measure(exec, &generated.points, config, norm, probing)?;
    Ok(ScenarioReport {
        scenario: scenario.name.to_string(),
        title: scenario.title.to_string(),
        description: scenario.description.to_string(),
        seed,
        requested_points: n,
        points: generated.points.len(),
        probing: probing.label().to_string(),
        grids,
    })
}

impl CollisionReport {
    pub fn new(config: &Earth4DConfig, scenarios: Vec<ScenarioReport>) -> Self {
        Self {
            num_levels: config.grid.num_levels,
            log2_table_size: config.grid.log2_table_size,
            base_resolution_log2: config.grid.base_resolution_log2,
            scenarios,
        }
    }

    /// One row per scenario, grid and level.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "scenario", "seed", "points", "probing", "grid", "level", "resolution", "storage", "table_size",
            "distinct_vertices", "occupied_rows", "collision_rate", "shared_fraction", "probed_occupied_rows",
            "probed_collision_rate", "probed_shared_fraction", "reduction_pct",
        ])?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        for s in &self.scenarios {
            for g in &s.grids {
                for l in &g.levels {
                    let f = &l.fixed;
                    let p = l.probed.as_ref();
                    w.write_record([
                        s.scenario.clone(),
                        s.seed.to_string(),
                        s.points.to_string(),
                        s.probing.clone(),
                        g.grid.clone(),
                        f.level.to_string(),
                        f.resolution.to_string(),
                        format!("{:?}", f.storage).to_lowercase(),
                        f.table_size.to_string(),
                        f.distinct_vertices.to_string(),
                        f.occupied_rows.to_string(),
                        f.collision_rate.to_string(),
                        f.shared_fraction.to_string(),
                        opt(p.map(|p| p.occupied_rows.to_string())),
                        opt(p.map(|p| p.collision_rate.to_string())),
                        opt(p.map(|p| p.shared_fraction.to_string())),
                        opt(p.and_then(|p| p.reduction_pct).map(|r| r.to_string())),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashgrid::{GridConfig, StorageMode};

    fn small() -> Earth4DConfig {
        Earth4DConfig {
            grid: GridConfig {
                num_levels: 6,
                log2_table_size: 10,
                base_resolution_log2: 2,
                ..GridConfig::default()
            },
            overrides: None,
        }
    }

    #[test]
    fn ten_distinct_scenarios() {
        let mut names: Vec<_> = SCENARIOS.iter().map(|s| s.name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 10);
        assert!(matches!(scenario("nope"), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn every_scenario_respects_its_envelope() {
        let norm = NormalizationConfig::default();
        for s in &SCENARIOS {
            let g = generate(s, 3, 2_000, &norm).unwrap();
            assert_eq!(g.points.len(), s.realized_points(2_000), "{}", s.name);
            for p in &g.points {
                p.validate(&norm).unwrap();
                assert!(g.envelope.contains(p, &norm), "{}: {p:?}", s.name);
            }
        }
    }

    #[test]
    fn time_series_is_a_cartesian_product() {
        let norm = NormalizationConfig::default();
        let s = scenario("time_series").unwrap();
        assert_eq!(s.realized_points(1_000_000), 1_000_000);
        let g = generate(s, 0, 1_050, &norm).unwrap();
        assert_eq!(g.envelope.sites.len(), 10);
        assert_eq!(g.envelope.steps.len(), 100);
        assert_eq!(g.points.len(), 1_000);
    }

    #[test]
    fn extreme_single_stays_in_ten_metres() {
        let norm = NormalizationConfig::default();
        let g = generate(scenario("extreme_spatial_single").unwrap(), 5, 1_000, &norm).unwrap();
        let patch = g.envelope.patches[0];
        for p in &g.points {
            let (e, n) = patch.offset_m(p.latitude_deg, p.longitude_deg, norm.semi_major_axis_m);
            assert!(e.abs() <= 5.0 + 1e-6 && n.abs() <= 5.0 + 1e-6);
        }
        let (tmin, tmax) = g.points.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.time_s), b.max(p.time_s)));
        assert!(tmax - tmin > 0.9 * norm.time_span_s());
    }

    #[test]
    fn seeded_generation_and_measurement_are_deterministic() {
        let norm = NormalizationConfig::default();
        let s = scenario("uniform_random").unwrap();
        let a = run_scenario(Execution::default(), s, 9, 500, &small(), &norm, Probing::Off).unwrap();
        let b = run_scenario(Execution::Sequential, s, 9, 500, &small(), &norm, Probing::Off).unwrap();
        assert_eq!(a, b);
        let c = run_scenario(Execution::default(), s, 10, 500, &small(), &norm, Probing::Off).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn dense_levels_never_collide() {
        let norm = NormalizationConfig::default();
        let s = scenario("uniform_random").unwrap();
        let r = run_scenario(Execution::default(), s, 1, 3_000, &small(), &norm, Probing::Off).unwrap();
        for g in &r.grids {
            for l in &g.levels {
                if l.fixed.storage == StorageMode::Dense {
                    assert_eq!(l.fixed.collision_rate, 0.0);
                }
            }
            assert!(g.levels.last().unwrap().fixed.collision_rate > 0.0);
        }
    }

    #[test]
    fn single_cell_has_eight_vertices() {
        let norm = NormalizationConfig::default();
        let p = GeodeticPoint::new(10.0, 20.0, 5.0, 1.0e9);
        let grids = measure(Execution::default(), &vec![p; 50], &small(), &norm, Probing::Off).unwrap();
        for g in &grids {
            assert!(g.levels.iter().all(|l| l.fixed.distinct_vertices == 8));
        }
    }

    #[test]
    fn greedy_never_worse_and_report_serializes() {
        let norm = NormalizationConfig::default();
        let s = scenario("extreme_spatial_single").unwrap();
        let pc = ProbeConfig { num_probes: 4, log2_probe_table_size: 8, ..ProbeConfig::default() };
        let r = run_scenario(Execution::default(), s, 2, 3_000, &small(), &norm, Probing::Greedy(pc)).unwrap();
        for g in &r.grids {
            for l in &g.levels {
                let p = l.probed.as_ref().unwrap();
                assert!(p.collision_rate <= l.fixed.collision_rate);
            }
        }
        let report = CollisionReport::new(&small(), vec![r]);
        let json = serde_json::to_string(&report).unwrap();
        let back: CollisionReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let lines = String::from_utf8(csv).unwrap().lines().count();
        assert_eq!(lines, 1 + 4 * 6);
    }

    #[test]
    fn zero_logits_change_nothing() {
        let norm = NormalizationConfig::default();
        let mut cfg = small();
        cfg.grid.probing = Some(ProbeConfig { num_probes: 4, log2_probe_table_size: 6, ..ProbeConfig::default() });
        let enc = Earth4DEncoder::<f32>::zeros(cfg.clone()).unwrap();
        let g = generate(scenario("extreme_spatial_multi").unwrap(), 4, 2_000, &norm).unwrap();
        let grids = measure(Execution::default(), &g.points, &cfg, &norm, Probing::Trained(&enc)).unwrap();
        for l in grids.iter().flat_map(|g| &g.levels) {
            assert_eq!(l.probed.as_ref().unwrap().occupied_rows, l.fixed.occupied_rows);
        }
    }
}
