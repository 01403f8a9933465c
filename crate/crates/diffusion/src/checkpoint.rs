//! Checkpoint container.
//!
//! ```text
//! "HSWPCKPT" | version: u32 LE | header length: u64 LE | JSON header |
//! parameters, first moments, second moments as f32 LE in header order
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::PatchCodec;
use crate::error::{Error, Result};
use crate::model::DenoiserConfig;
use crate::schedule::{NoiseSchedule, ScheduleConfig};
use crate::train::{TrainConfig, TrainingState};

pub const MAGIC: &[u8; 8] = b"HSWPCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model: DenoiserConfig,
    codec_patch: usize,
    codec_channels: usize,
    schedule: ScheduleConfig,
    train: TrainConfig,
    step: u64,
    seed: u64,
    adam_t: u64,
    params: Vec<ParamEntry>,
    /// Free-form string metadata (e.g. the data settings used for training).
    extra: BTreeMap<String, String>,
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Writes the checkpoint next to `path` and renames it into place.
pub fn save(state: &TrainingState, extra: &BTreeMap<String, String>, path: &Path) -> Result<()> {
    let params = state.model.params();
    let header = Header {
        model: state.model.config().clone(),
        codec_patch: state.codec.patch(),
        codec_channels: state.codec.channels(),
        schedule: state.schedule.config(),
        train: state.train,
        step: state.step,
        seed: state.seed,
        adam_t: state.optimizer.t,
        params: params
            .names_and_shapes()
            .into_iter()
            .map(|(name, shape)| ParamEntry { name, shape })
            .collect(),
        extra: extra.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| bad(path, e.to_string()))?;
    let mut out = Vec::with_capacity(8 + 4 + 8 + json.len() + 12 * params.num_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in params.values()? {
        put_f32s(&mut out, &p);
    }
    for m in state.optimizer.m.iter().chain(&state.optimizer.v) {
        put_f32s(&mut out, m);
    }
    let io = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(&out).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn f32s(&mut self, n: usize) -> Option<Vec<f32>> {
        let raw = self.take(n.checked_mul(4)?)?;
        Some(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

pub fn load(path: &Path) -> Result<(TrainingState, BTreeMap<String, String>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(8) != Some(MAGIC.as_slice()) {
        return Err(bad(path, "not a headswap checkpoint"));
    }
    let version = u32::from_le_bytes(r.take(4).ok_or_else(|| bad(path, "truncated"))?.try_into().expect("4"));
    if version != VERSION {
        return Err(bad(path, format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(r.take(8).ok_or_else(|| bad(path, "truncated"))?.try_into().expect("8"));
    let json = r.take(len as usize).ok_or_else(|| bad(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| bad(path, format!("header: {e}")))?;

    let codec = PatchCodec::new(header.codec_patch, header.codec_channels)?;
    let schedule = NoiseSchedule::new(header.schedule)?;
    let mut state = TrainingState::new(header.model, codec, schedule, header.train, header.seed)?;
    let expected: Vec<(String, Vec<usize>)> = state.model.params().names_and_shapes();
    let stored: Vec<(String, Vec<usize>)> = header.params.into_iter().map(|p| (p.name, p.shape)).collect();
    if expected != stored {
        return Err(bad(path, "parameter layout does not match the stored model config"));
    }
    let sizes: Vec<usize> = expected.iter().map(|(_, s)| s.iter().product()).collect();
    let mut read_all = |what: &str| -> Result<Vec<Vec<f32>>> {
        sizes
            .iter()
            .map(|&n| r.f32s(n).ok_or_else(|| bad(path, format!("truncated {what}"))))
            .collect()
    };
    let params = read_all("parameters")?;
    let m = read_all("first moments")?;
    let v = read_all("second moments")?;
    if r.pos != bytes.len() {
        return Err(bad(path, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    state.model.params().set_values(&params)?;
    state.optimizer.m = m;
    state.optimizer.v = v;
    state.optimizer.t = header.adam_t;
    state.step = header.step;
    Ok((state, header.extra))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{prepare_items, train};
    use headswap_core::mear::MearConfig;
    use headswap_core::pipeline::{synth_generate, SynthConfig};

    fn fresh() -> TrainingState {
        TrainingState::new(
            DenoiserConfig {
                base_width: 8,
                depth: 2,
                frames_per_clip: 4,
                ..DenoiserConfig::default()
            },
            PatchCodec::default(),
            NoiseSchedule::default(),
            TrainConfig::default(),
            8,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_resumes_bit_identically() {
        let samples = synth_generate(2, 1, &SynthConfig { frames: 4, ..SynthConfig::default() }).unwrap();
        let items = prepare_items(&samples, &PatchCodec::default(), &MearConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/ck.bin");

        let mut straight = fresh();
        let all: Vec<f64> = train(&mut straight, &items, 4, None).unwrap().iter().map(|r| r.loss).collect();

        let mut first = fresh();
        train(&mut first, &items, 2, None).unwrap();
        let extra = BTreeMap::from([("note".to_string(), "x=1".to_string())]);
        save(&first, &extra, &path).unwrap();
        let (mut resumed, got_extra) = load(&path).unwrap();
        assert_eq!(got_extra, extra);
        assert_eq!(resumed.step, 2);
        assert_eq!(resumed.optimizer, first.optimizer);
        let rest: Vec<f64> = train(&mut resumed, &items, 2, None).unwrap().iter().map(|r| r.loss).collect();
        assert_eq!(&all[2..], &rest[..]);
        assert_eq!(resumed.model.params().values().unwrap(), straight.model.params().values().unwrap());
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        save(&fresh(), &BTreeMap::new(), &path).unwrap();
        let good = fs::read(&path).unwrap();

        let cases: Vec<Vec<u8>> = vec![
            b"NOTACKPT".to_vec(),
            good[..good.len() - 3].to_vec(),
            [good.clone(), vec![0]].concat(),
            {
                let mut g = good.clone();
                g[8] = 9;
                g
            },
        ];
        for bytes in cases {
            fs::write(&path, bytes).unwrap();
            assert!(matches!(load(&path), Err(Error::Checkpoint { .. })));
        }
        assert!(matches!(load(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
