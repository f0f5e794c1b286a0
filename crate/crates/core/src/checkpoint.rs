//! Little-endian binary checkpoints.
//!
//! Layout: magic `E4D1`, `u32` format version, `u64`-prefixed JSON model
//! config, `u64` optimizer step, `u32` species count followed by
//! `u32`-prefixed UTF-8 names, `u32` buffer count followed by each parameter
//! buffer as a `u64` length and `f32` values (feature tables, probe logits,
//! species embeddings, MLP weights and biases, in [`Model::param_buffers`]
//! order), then a `u8` flag and, when set, the Adam first and second
//! moments of every buffer in the same order.

use std::path::Path;

use crate::dataset::write_atomic;
use crate::earth4d::Earth4DEncoder;
use crate::error::{Error, Result};
use crate::regressor::{AdamMoments, MlpHead, Model, ModelConfig, SpeciesTable, TrainingState};

pub const MAGIC: &[u8; 4] = b"E4D1";
pub const FORMAT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn f32s(&mut self, vs: &[f32]) {
        self.0.reserve(vs.len() * 4);
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n).map_err(|_| Error::Checkpoint("length overflow".into()))
    }
    fn f32s_into(&mut self, out: &mut [f32]) -> Result<()> {
        let raw = self.take(out.len() * 4)?;
        for (o, c) in out.iter_mut().zip(raw.chunks_exact(4)) {
            *o = f32::from_le_bytes(c.try_into().unwrap());
        }
        Ok(())
    }
}

pub fn to_bytes(model: &Model<f32>) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.bytes(MAGIC);
    w.u32(FORMAT_VERSION);
    let cfg = serde_json::to_vec(model.config()).expect("config serializes");
    w.u64(cfg.len() as u64);
    w.bytes(&cfg);
    w.u64(model.state.step as u64);
    w.u32(model.species.names().len() as u32);
    for name in model.species.names() {
        w.u32(name.len() as u32);
        w.bytes(name.as_bytes());
    }
    let buffers = model.param_buffers();
    w.u32(buffers.len() as u32);
    for (_, _, p) in &buffers {
        w.u64(p.len() as u64);
        w.f32s(&p.values);
    }
    match &model.state.moments {
        Some(moments) => {
            w.u8(1);
            for m in moments {
                w.f32s(&m.m);
                w.f32s(&m.v);
            }
        }
        None => w.u8(0),
    }
    w.0
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not an E4D1 checkpoint".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let n = r.len()?;
    let config: ModelConfig = serde_json::from_slice(r.take(n)?)?;
    config.validate()?;
    let step = r.len()?;
    let n_species = r.u32()? as usize;
    let mut names = Vec::with_capacity(n_species);
    for _ in 0..n_species {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::Checkpoint("species name is not UTF-8".into()))?;
        names.push(name.to_string());
    }
    let encoder = Earth4DEncoder::zeros(config.encoder.clone())?;
    let dim = config.head.species_dim;
    let species = SpeciesTable::from_parts(names, dim, vec![0.0; n_species * dim])?;
    let mlp = MlpHead::zeros(&config.mlp_sizes())?;
    let mut model = Model::from_parts(config, encoder, species, mlp, TrainingState::default());
    model.state.step = step;

    let n_buffers = r.u32()? as usize;
    let mut buffers = model.param_buffers_mut();
    if n_buffers != buffers.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter buffers, found {n_buffers}",
            buffers.len()
        )));
    }
    let mut lens = Vec::with_capacity(n_buffers);
    for (_, name, p) in buffers.iter_mut() {
        let n = r.len()?;
        if n != p.len() {
            return Err(Error::Checkpoint(format!("`{name}` has {n} values, expected {}", p.len())));
        }
        r.f32s_into(&mut p.values)?;
        lens.push(n);
    }
    drop(buffers);
    if r.u8()? == 1 {
        let mut moments = Vec::with_capacity(lens.len());
        for n in lens {
            let mut m = AdamMoments::zeros(n);
            r.f32s_into(&mut m.m)?;
            r.f32s_into(&mut m.v)?;
            moments.push(m);
        }
        model.state.moments = Some(moments);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}

pub fn save(model: &Model<f32>, path: &Path) -> Result<()> {
    write_atomic(path, &to_bytes(model))
}

pub fn load(path: &Path) -> Result<Model<f32>> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::earth4d::Earth4DConfig;
    use crate::hashgrid::GridConfig;
    use crate::probing::{ProbeConfig, ProbeMode};
    use crate::regressor::HeadConfig;

    fn model() -> Model<f32> {
        let cfg = ModelConfig {
            encoder: Earth4DConfig {
                grid: GridConfig {
                    num_levels: 3,
                    log2_table_size: 9,
                    base_resolution_log2: 3,
                    probing: Some(ProbeConfig {
                        num_probes: 4,
                        log2_probe_table_size: 5,
                        ..ProbeConfig::default()
                    }),
                    ..GridConfig::default()
                },
                overrides: None,
            },
            head: HeadConfig {
                species_dim: 3,
                hidden: vec![7],
                ..HeadConfig::default()
            },
            ..ModelConfig::default()
        };
        let mut m = Model::new(cfg, &["a".into(), "b".into()], 11).unwrap();
        // Non-trivial logits so hard-mode lookups depend on them.
        for (g, grid) in m.encoder.grids.iter_mut().enumerate() {
            for p in grid.probes.iter_mut().flatten() {
                for (i, z) in p.params.values.iter_mut().enumerate() {
                    *z = ((i * 31 + g * 7) % 13) as f32 * 0.1;
                }
            }
        }
        m
    }

    #[test]
    fn round_trip_is_bitwise() {
        let mut m = model();
        m.state.step = 17;
        m.state.moments = Some(
            m.param_buffers()
                .iter()
                .map(|(_, _, p)| {
                    let mut a = AdamMoments::zeros(p.len());
                    a.m.iter_mut().enumerate().for_each(|(i, x)| *x = i as f32);
                    a
                })
                .collect(),
        );
        let bytes = to_bytes(&m);
        assert_eq!(&bytes[..4], b"E4D1");
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        let q = [0.3, 0.55, 0.21, 0.8];
        for mode in [ProbeMode::Soft, ProbeMode::Hard] {
            assert_eq!(
                m.predict(q, 1, mode).to_bits(),
                back.predict(q, 1, mode).to_bits()
            );
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = to_bytes(&model());
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Checkpoint(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
        let mut version = bytes;
        version[4] = 9;
        assert!(from_bytes(&version).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.e4d");
        let m = model();
        save(&m, &path).unwrap();
        assert_eq!(load(&path).unwrap(), m);
    }
}
