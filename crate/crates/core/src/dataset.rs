//! CSV ingestion and output.
//!
//! Datasets carry the header `latitude,longitude,elevation_m,time,species,target`
//! (matched after trimming and case-folding). `time` is ISO-8601 UTC or epoch
//! seconds. Point files for encoding need only the first four columns.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geocoords::{parse_timestamp, GeodeticPoint, NormalizationConfig};
use crate::real::Real;

pub const DATASET_HEADER: [&str; 6] = ["latitude", "longitude", "elevation_m", "time", "species", "target"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub point: GeodeticPoint,
    pub species: String,
    /// Percent, finite and non-negative.
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReadOptions {
    /// Drop malformed rows instead of failing on the first one.
    pub skip_bad: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Loaded<T> {
    pub rows: Vec<T>,
    /// Rows dropped under `skip_bad`, with the reason for each.
    pub skipped: Vec<(usize, String)>,
}

fn folded(h: &str) -> String {
    h.trim().to_lowercase()
}

fn check_header(headers: &csv::StringRecord, expected: &[&str], allow_extra: bool) -> Result<()> {
    let got: Vec<String> = headers.iter().map(folded).collect();
    let ok = if allow_extra {
        got.len() >= expected.len() && got[..expected.len()] == expected[..]
    } else {
        got == expected
    };
    if !ok {
        return Err(Error::Dataset {
            line: 1,
            message: format!("header must be `{}`, got `{}`", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn field(rec: &csv::StringRecord, i: usize, name: &str) -> std::result::Result<f64, String> {
    let s = rec.get(i).ok_or_else(|| format!("missing `{name}`"))?.trim();
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("`{name}` is not a finite number: `{s}`"))
}

fn parse_point(rec: &csv::StringRecord, norm: &NormalizationConfig) -> std::result::Result<GeodeticPoint, String> {
    let time = parse_timestamp(rec.get(3).unwrap_or("")).map_err(|e| e.to_string())?;
    let p = GeodeticPoint::new(
        field(rec, 0, "latitude")?,
        field(rec, 1, "longitude")?,
        field(rec, 2, "elevation_m")?,
        time,
    );
    p.validate(norm).map_err(|e| e.to_string())?;
    Ok(p)
}

fn read_rows<T, R: Read>(
    reader: R,
    expected: &[&str],
    allow_extra: bool,
    opts: ReadOptions,
    parse: impl Fn(&csv::StringRecord) -> std::result::Result<T, String>,
) -> Result<Loaded<T>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    check_header(rdr.headers()?, expected, allow_extra)?;
    let mut out = Loaded { rows: Vec::new(), skipped: Vec::new() };
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        match parse(&rec) {
            Ok(v) => out.rows.push(v),
            Err(message) if opts.skip_bad => out.skipped.push((line, message)),
            Err(message) => return Err(Error::Dataset { line, message }),
        }
    }
    Ok(out)
}

/// Reads a training/evaluation dataset.
pub fn read_dataset<R: Read>(reader: R, norm: &NormalizationConfig, opts: ReadOptions) -> Result<Loaded<TrainingSample>> {
    read_rows(reader, &DATASET_HEADER, false, opts, |rec| {
        if rec.len() != DATASET_HEADER.len() {
            return Err(format!("expected {} fields, found {}", DATASET_HEADER.len(), rec.len()));
        }
        let point = parse_point(rec, norm)?;
        let species = rec.get(4).unwrap_or("").trim().to_string();
        if species.is_empty() {
            return Err("empty species".into());
        }
        let target = field(rec, 5, "target")?;
        if target < 0.0 {
            return Err(format!("target {target} is negative"));
        }
        Ok(TrainingSample { point, species, target })
    })
}

pub fn read_dataset_file(path: &Path, norm: &NormalizationConfig, opts: ReadOptions) -> Result<Loaded<TrainingSample>> {
    read_dataset(std::fs::File::open(path)?, norm, opts)
}

/// Reads coordinates from the first four columns; further columns are ignored.
pub fn read_points<R: Read>(reader: R, norm: &NormalizationConfig, opts: ReadOptions) -> Result<Loaded<GeodeticPoint>> {
    read_rows(reader, &DATASET_HEADER[..4], true, opts, |rec| parse_point(rec, norm))
}

pub fn read_points_file(path: &Path, norm: &NormalizationConfig, opts: ReadOptions) -> Result<Loaded<GeodeticPoint>> {
    read_points(std::fs::File::open(path)?, norm, opts)
}

pub fn write_dataset<W: Write>(writer: W, samples: &[TrainingSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(DATASET_HEADER)?;
    for s in samples {
        w.write_record([
            format!("{}", s.point.latitude_deg),
            format!("{}", s.point.longitude_deg),
            format!("{}", s.point.elevation_m),
            format!("{}", s.point.time_s),
            s.species.clone(),
            format!("{}", s.target),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Embedding rows as CSV with header `e0,e1,...`. Values use the shortest
/// representation that round-trips.
pub fn write_embeddings<W: Write, T: Real>(writer: W, width: usize, values: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record((0..width).map(|i| format!("e{i}")))?;
    for row in values.chunks_exact(width) {
        w.write_record(row.iter().map(|v| format!("{v}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
