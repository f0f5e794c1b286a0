//! Geodetic coordinates, WGS-84 Earth-centered conversion, and the affine map
//! into the unit 4-cube consumed by the grids.

use chrono::{DateTime, NaiveDate, NaiveDateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// WGS-84 semi-major axis in meters.
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS-84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;

/// 1900-01-01T00:00:00Z in epoch seconds.
pub const EPOCH_1900: f64 = -2_208_988_800.0;
/// 2100-01-01T00:00:00Z in epoch seconds.
pub const EPOCH_2100: f64 = 4_102_444_800.0;

/// A raw observation coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodeticPoint {
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    /// Height above the reference ellipsoid.
    pub elevation_m: f64,
    /// Seconds since 1970-01-01T00:00:00Z, signed.
    pub time_s: f64,
}

impl GeodeticPoint {
    pub fn new(latitude_deg: f64, longitude_deg: f64, elevation_m: f64, time_s: f64) -> Self {
        Self {
            latitude_deg,
            longitude_deg,
            elevation_m,
            time_s,
        }
    }

    /// Checks latitude, longitude and elevation against `cfg`. Time is checked by [`normalize`].
    pub fn validate_spatial(&self, cfg: &NormalizationConfig) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.latitude_deg) {
            return Err(Error::domain(
                "latitude",
                format!("{} not in [-90, 90]", self.latitude_deg),
            ));
        }
        if !(-180.0..180.0).contains(&self.longitude_deg) {
            return Err(Error::domain(
                "longitude",
                format!("{} not in [-180, 180)", self.longitude_deg),
            ));
        }
        if !(cfg.elevation_min_m..=cfg.elevation_max_m).contains(&self.elevation_m) {
            return Err(Error::domain(
                "elevation",
                format!(
                    "{} m not in [{}, {}]",
                    self.elevation_m, cfg.elevation_min_m, cfg.elevation_max_m
                ),
            ));
        }
        Ok(())
    }

    pub fn validate(&self, cfg: &NormalizationConfig) -> Result<()> {
        self.validate_spatial(cfg)?;
        cfg.check_time(self.time_s)
    }
}

/// A coordinate in the unit 4-cube; every component in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPoint4 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub t: f64,
}

impl NormalizedPoint4 {
    pub fn new(x: f64, y: f64, z: f64, t: f64) -> Self {
        Self { x, y, z, t }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.z, self.t]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn in_unit_cube(&self) -> bool {
        self.to_array().iter().all(|c| (0.0..1.0).contains(c))
    }
}

/// Ellipsoid, bounding cube and time window of the normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizationConfig {
    pub semi_major_axis_m: f64,
    pub flattening: f64,
    /// Half the edge of the ECEF cube mapped onto `[0, 1)^3`, centered at Earth's center.
    pub half_width_m: f64,
    pub time_start_s: f64,
    pub time_end_s: f64,
    pub elevation_min_m: f64,
    pub elevation_max_m: f64,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self {
            semi_major_axis_m: WGS84_A,
            flattening: WGS84_F,
            half_width_m: 6.5e6,
            time_start_s: EPOCH_1900,
            time_end_s: EPOCH_2100,
            elevation_min_m: -11_000.0,
            elevation_max_m: 9_000.0,
        }
    }
}

impl NormalizationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.time_end_s > self.time_start_s) {
            return Err(Error::Config(format!(
                "time window end {} must exceed start {}",
                self.time_end_s, self.time_start_s
            )));
        }
        if !(self.semi_major_axis_m > 0.0) || !(0.0..1.0).contains(&self.flattening) {
            return Err(Error::Config("invalid ellipsoid".into()));
        }
        if !(self.elevation_max_m >= self.elevation_min_m) {
            return Err(Error::Config("elevation band is empty".into()));
        }
        if !(self.half_width_m > self.semi_major_axis_m + self.elevation_max_m) {
            return Err(Error::Config(format!(
                "half width {} m does not enclose the ellipsoid plus elevation band",
                self.half_width_m
            )));
        }
        Ok(())
    }

    pub fn semi_minor_axis_m(&self) -> f64 {
        self.semi_major_axis_m * (1.0 - self.flattening)
    }

    /// First eccentricity squared.
    pub fn e2(&self) -> f64 {
        self.flattening * (2.0 - self.flattening)
    }

    pub fn time_span_s(&self) -> f64 {
        self.time_end_s - self.time_start_s
    }

    pub fn check_time(&self, time_s: f64) -> Result<()> {
        if !(self.time_start_s..self.time_end_s).contains(&time_s) {
            return Err(Error::domain(
                "time",
                format!(
                    "{} not in window [{}, {})",
                    format_timestamp(time_s),
                    format_timestamp(self.time_start_s),
                    format_timestamp(self.time_end_s)
                ),
            ));
        }
        Ok(())
    }

    /// Edge length in meters of one cell of a lattice with `vertices_per_axis` vertices.
    pub fn spatial_cell_m(&self, vertices_per_axis: u64) -> f64 {
        2.0 * self.half_width_m / (vertices_per_axis - 1) as f64
    }

    /// Duration in seconds of one temporal cell of a lattice with `vertices_per_axis` vertices.
    pub fn temporal_cell_s(&self, vertices_per_axis: u64) -> f64 {
        self.time_span_s() / (vertices_per_axis - 1) as f64
    }
}

/// WGS-84 style geodetic to Earth-centered Earth-fixed conversion.
pub fn geodetic_to_ecef(p: &GeodeticPoint, cfg: &NormalizationConfig) -> Result<[f64; 3]> {
    p.validate_spatial(cfg)?;
    Ok(geodetic_to_ecef_unchecked(
        p.latitude_deg,
        p.longitude_deg,
        p.elevation_m,
        cfg,
    ))
}

pub(crate) fn geodetic_to_ecef_unchecked(
    lat_deg: f64,
    lon_deg: f64,
    h: f64,
    cfg: &NormalizationConfig,
) -> [f64; 3] {
    let (slat, clat) = lat_deg.to_radians().sin_cos();
    let (slon, clon) = lon_deg.to_radians().sin_cos();
    let e2 = cfg.e2();
    let n = cfg.semi_major_axis_m / (1.0 - e2 * slat * slat).sqrt();
    [
        (n + h) * clat * clon,
        (n + h) * clat * slon,
        (n * (1.0 - e2) + h) * slat,
    ]
}

/// Inverse of [`geodetic_to_ecef`]; returns (latitude°, longitude°, height m).
///
/// Fixed-point iteration on latitude, with height from the projection onto the
/// normal, which stays well conditioned at the poles.
pub fn ecef_to_geodetic(xyz: [f64; 3], cfg: &NormalizationConfig) -> Result<(f64, f64, f64)> {
    let [x, y, z] = xyz;
    let a = cfg.semi_major_axis_m;
    let e2 = cfg.e2();
    let r = (x * x + y * y + z * z).sqrt();
    let band_lo = cfg.semi_minor_axis_m() + cfg.elevation_min_m;
    let band_hi = a + cfg.elevation_max_m;
    if !(r >= band_lo - 1.0 && r <= band_hi + 1.0) {
        return Err(Error::domain(
            "ecef",
            format!("radius {r:.3} m is too far from the ellipsoid shell for geodetic inversion"),
        ));
    }
    let p = (x * x + y * y).sqrt();
    let mut lon = y.atan2(x).to_degrees();
    if lon >= 180.0 {
        lon -= 360.0;
    }
    let mut lat = z.atan2(p * (1.0 - e2));
    for _ in 0..20 {
        let s = lat.sin();
        let n = a / (1.0 - e2 * s * s).sqrt();
        let h = p * lat.cos() + z * s - a * (1.0 - e2 * s * s).sqrt();
        let next = z.atan2(p * (1.0 - e2 * n / (n + h)));
        let done = (next - lat).abs() < 1e-15;
        lat = next;
        if done {
            break;
        }
    }
    let s = lat.sin();
    let h = p * lat.cos() + z * s - a * (1.0 - e2 * s * s).sqrt();
    let lat_deg = lat.to_degrees();
    if !(cfg.elevation_min_m - 1e-6..=cfg.elevation_max_m + 1e-6).contains(&h) {
        return Err(Error::domain(
            "ecef",
            format!("implied height {h:.3} m lies outside the elevation band"),
        ));
    }
    Ok((lat_deg, lon, h))
}

/// Affine map of ECEF meters and epoch seconds into the unit 4-cube, without range checks.
#[inline]
pub fn normalize_ecef(ecef: [f64; 3], time_s: f64, cfg: &NormalizationConfig) -> [f64; 4] {
    let s = 0.5 / cfg.half_width_m;
    [
        0.5 + ecef[0] * s,
        0.5 + ecef[1] * s,
        0.5 + ecef[2] * s,
        (time_s - cfg.time_start_s) / cfg.time_span_s(),
    ]
}

pub fn normalize(p: &GeodeticPoint, cfg: &NormalizationConfig) -> Result<NormalizedPoint4> {
    let ecef = geodetic_to_ecef(p, cfg)?;
    cfg.check_time(p.time_s)?;
    let q = NormalizedPoint4::from_array(normalize_ecef(ecef, p.time_s, cfg));
    // The cube encloses the shell, so only rounding at t ~ 1 can escape.
    if !q.in_unit_cube() {
        return Err(Error::domain("time", "normalized coordinate rounds to 1"));
    }
    Ok(q)
}

pub fn denormalize(q: &NormalizedPoint4, cfg: &NormalizationConfig) -> Result<GeodeticPoint> {
    if !q.in_unit_cube() {
        return Err(Error::domain("normalized", format!("{q:?} outside [0,1)^4")));
    }
    let hw2 = 2.0 * cfg.half_width_m;
    let ecef = [(q.x - 0.5) * hw2, (q.y - 0.5) * hw2, (q.z - 0.5) * hw2];
    let (lat, lon, h) = ecef_to_geodetic(ecef, cfg)?;
    Ok(GeodeticPoint::new(
        lat,
        lon,
        h,
        cfg.time_start_s + q.t * cfg.time_span_s(),
    ))
}

/// Parses epoch seconds (`1591000000`, `-1.5e9`) or an ISO-8601 UTC timestamp
/// (`2020-06-01T12:00:00Z`, `2020-06-01T12:00:00`, `2020-06-01`).
pub fn parse_timestamp(s: &str) -> Result<f64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        if v.is_finite() {
            return Ok(v);
        }
    }
    let seconds = |dt: NaiveDateTime| {
        let utc = dt.and_utc();
        utc.timestamp() as f64 + utc.timestamp_subsec_nanos() as f64 * 1e-9
    };
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(seconds(dt.naive_utc()));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(seconds(dt));
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(seconds(d.and_hms_opt(0, 0, 0).expect("midnight exists")));
    }
    Err(Error::domain("time", format!("cannot parse timestamp `{s}`")))
}

/// RFC 3339 rendering of epoch seconds, falling back to the raw number out of chrono's range.
pub fn format_timestamp(time_s: f64) -> String {
    let secs = time_s.floor();
    let nanos = ((time_s - secs) * 1e9).round().min(999_999_999.0) as u32;
    match DateTime::<Utc>::from_timestamp(secs as i64, nanos) {
        Some(dt) if time_s.is_finite() => dt.to_rfc3339_opts(SecondsFormat::AutoSi, true),
        _ => format!("{time_s}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> NormalizationConfig {
        NormalizationConfig::default()
    }

    fn mid_time() -> f64 {
        0.5 * (EPOCH_1900 + EPOCH_2100)
    }

    #[test]
    fn equator_prime_meridian_is_semi_major_axis() {
        let e = geodetic_to_ecef(&GeodeticPoint::new(0.0, 0.0, 0.0, 0.0), &cfg()).unwrap();
        assert_eq!(e, [WGS84_A, 0.0, 0.0]);
    }

    #[test]
    fn north_pole_is_semi_minor_axis() {
        // Published WGS-84 semi-minor axis.
        let b = 6_356_752.314_245;
        let e = geodetic_to_ecef(&GeodeticPoint::new(90.0, 0.0, 0.0, 0.0), &cfg()).unwrap();
        assert!(e[0].abs() < 1e-6 && e[1].abs() < 1e-6);
        assert!((e[2] - b).abs() < 1e-5, "{}", e[2]);
    }

    #[test]
    fn antimeridian_is_excluded() {
        let err = geodetic_to_ecef(&GeodeticPoint::new(0.0, 180.0, 0.0, 0.0), &cfg()).unwrap_err();
        assert!(matches!(err, Error::Domain { field: "longitude", .. }));
        let err = geodetic_to_ecef(&GeodeticPoint::new(90.5, 0.0, 0.0, 0.0), &cfg()).unwrap_err();
        assert!(matches!(err, Error::Domain { field: "latitude", .. }));
    }

    #[test]
    fn ecef_radius_stays_in_shell() {
        let c = cfg();
        for &(lat, lon, h) in &[
            (0.0, 0.0, -11_000.0),
            (45.0, 100.0, 9_000.0),
            (-89.9, -179.0, 0.0),
        ] {
            let e = geodetic_to_ecef(&GeodeticPoint::new(lat, lon, h, 0.0), &c).unwrap();
            let r = (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
            assert!((6_356_752.0 - 11_200.0..=WGS84_A + 9_200.0).contains(&r));
        }
    }

    #[test]
    fn cube_center_and_window_bounds() {
        let c = cfg();
        assert_eq!(normalize_ecef([0.0; 3], mid_time(), &c), [0.5; 4]);
        assert_eq!(normalize_ecef([0.0; 3], c.time_start_s, &c)[3], 0.0);

        let q = normalize(&GeodeticPoint::new(0.0, 0.0, 0.0, mid_time()), &c).unwrap();
        assert!((q.x - (0.5 + WGS84_A / (2.0 * 6.5e6))).abs() < 1e-15);
        assert_eq!((q.y, q.z, q.t), (0.5, 0.5, 0.5));
    }

    #[test]
    fn time_outside_window_is_rejected() {
        let c = cfg();
        let err = normalize(&GeodeticPoint::new(0.0, 0.0, 0.0, c.time_end_s), &c).unwrap_err();
        assert!(matches!(err, Error::Domain { field: "time", .. }));
    }

    #[test]
    fn round_trip_mountain_view() {
        let c = cfg();
        let p = GeodeticPoint::new(37.42, -122.08, 30.0, parse_timestamp("2020-06-01").unwrap());
        let q = normalize(&p, &c).unwrap();
        let back = denormalize(&q, &c).unwrap();
        assert!((back.latitude_deg - p.latitude_deg).abs() < 1e-6);
        assert!((back.longitude_deg - p.longitude_deg).abs() < 1e-6);
        assert!((back.elevation_m - p.elevation_m).abs() < 1e-3);
        assert!((back.time_s - p.time_s).abs() < 1e-3);
        let q2 = normalize(&back, &c).unwrap();
        for (a, b) in q.to_array().iter().zip(q2.to_array()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn center_point_cannot_be_inverted() {
        let err = denormalize(&NormalizedPoint4::new(0.5, 0.5, 0.5, 0.5), &cfg()).unwrap_err();
        assert!(matches!(err, Error::Domain { field: "ecef", .. }));
    }

    #[test]
    fn t_zero_is_window_start() {
        let c = cfg();
        let q = normalize(&GeodeticPoint::new(10.0, 20.0, 0.0, mid_time()), &c).unwrap();
        let p = denormalize(&NormalizedPoint4 { t: 0.0, ..q }, &c).unwrap();
        assert_eq!(p.time_s, c.time_start_s);
    }

    #[test]
    fn finest_level_cell_is_sub_meter() {
        let edge = cfg().spatial_cell_m(1 << 28);
        assert!(edge <= 0.15, "{edge}");
        // Two centuries over 2^28 bins is tens of seconds, not sub-second.
        let dt = cfg().temporal_cell_s(1 << 28);
        assert!(dt > 10.0 && dt < 30.0, "{dt}");
    }

    #[test]
    fn timestamps_parse_exactly() {
        assert_eq!(parse_timestamp("0").unwrap(), 0.0);
        assert_eq!(parse_timestamp("1970-01-01T00:00:00Z").unwrap(), 0.0);
        assert_eq!(parse_timestamp("1900-01-01").unwrap(), EPOCH_1900);
        assert_eq!(parse_timestamp("2100-01-01T00:00:00+00:00").unwrap(), EPOCH_2100);
        assert_eq!(parse_timestamp("2020-06-01T00:00:01.5Z").unwrap(), 1_590_969_601.5);
        assert_eq!(parse_timestamp(" -12.25 ").unwrap(), -12.25);
        assert!(parse_timestamp("yesterday").is_err());
        assert_eq!(format_timestamp(0.0), "1970-01-01T00:00:00Z");
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        let bad = NormalizationConfig {
            time_end_s: EPOCH_1900,
            ..cfg()
        };
        assert!(bad.validate().is_err());
        let small = NormalizationConfig {
            half_width_m: WGS84_A,
            ..cfg()
        };
        assert!(small.validate().is_err());
    }
}
