//! The subcommands. Each validates its paths before doing any work.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use headswap_core::media::{load_clip, load_frame, load_landmark_track, save_clip, VideoClip, CLIP_MANIFEST};
use headswap_core::mear::{compute_maps, save_weights_grid};
use headswap_core::metrics::{embedding_backend, evaluate, feature_backend, Backends, EvalCase, MetricReport};
use headswap_core::pipeline::{load_dataset, load_sample, save_dataset, synth_generate};
use headswap_core::seed;
use headswap_diffusion::checkpoint;
use headswap_diffusion::sample::{sample, SampleOptions};
use headswap_diffusion::schedule::NoiseSchedule;
use headswap_diffusion::train::{prepare_items, train, TrainingState};
use headswap_diffusion::PatchCodec;

use crate::error::{CliError, CliResult, ErrorKind};
use crate::settings::Settings;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const REPORT_TABLE: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";

fn unwritable(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::new(ErrorKind::UnwritableOutput, format!("cannot write to {}: {e}", path.display()))
}

/// Creates `dir` and proves it accepts files.
pub fn ensure_writable_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| unwritable(dir, e))?;
    let probe = dir.join(".headswap-probe");
    fs::write(&probe, b"").map_err(|e| unwritable(dir, e))?;
    fs::remove_file(&probe).map_err(|e| unwritable(dir, e))
}

fn ensure_writable_file(path: &Path) -> CliResult<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(dir) => ensure_writable_dir(dir),
        None => ensure_writable_dir(Path::new(".")),
    }
}

fn require_dataset(dir: &Path) -> CliResult<()> {
    if !dir.join(headswap_core::pipeline::dataset::MANIFEST).is_file() {
        return Err(CliError::dataset(format!("{} is not a dataset (no manifest)", dir.display())));
    }
    Ok(())
}

fn require_checkpoint(path: &Path) -> CliResult<()> {
    if !path.is_file() {
        return Err(CliError::new(
            ErrorKind::MissingCheckpoint,
            format!("checkpoint {} does not exist", path.display()),
        ));
    }
    Ok(())
}

fn load_state(path: &Path) -> CliResult<(TrainingState, BTreeMap<String, String>)> {
    require_checkpoint(path)?;
    checkpoint::load(path).map_err(|e| match e {
        headswap_diffusion::Error::Io { .. } => CliError::new(ErrorKind::MissingCheckpoint, e.to_string()),
        other => other.into(),
    })
}

fn dataset_error(e: headswap_core::Error) -> CliError {
    match e {
        headswap_core::Error::Io { .. } | headswap_core::Error::Malformed { .. } => CliError::dataset(e.to_string()),
        other => other.into(),
    }
}

pub fn gen_data(settings: &Settings, out: &Path) -> CliResult<String> {
    let cfg = settings.synth();
    cfg.validate()?;
    if settings.count() == 0 {
        return Err(CliError::usage("data.count must be >= 1"));
    }
    ensure_writable_dir(out)?;
    let samples = synth_generate(settings.count(), seed::derive(settings.seed(), "data"), &cfg)?;
    save_dataset(&samples, out).map_err(|e| match e {
        headswap_core::Error::Io { .. } => unwritable(out, e),
        other => other.into(),
    })?;
    Ok(format!("wrote {} samples to {}", samples.len(), out.display()))
}

pub fn train_cmd(settings: &Settings, data: &Path, out: &Path, resume: Option<&Path>) -> CliResult<String> {
    require_dataset(data)?;
    if let Some(r) = resume {
        require_checkpoint(r)?;
    }
    ensure_writable_dir(out)?;
    let samples = load_dataset(data).map_err(dataset_error)?;
    let mear = settings.mear();
    let mut state = match resume {
        Some(r) => load_state(r)?.0,
        None => {
            let (patch, channels) = settings.codec();
            TrainingState::new(
                settings.model(),
                PatchCodec::new(patch, channels)?,
                NoiseSchedule::new(settings.schedule())?,
                settings.train(),
                seed::derive(settings.seed(), "train"),
            )?
        }
    };
    let frames = state.model.config().frames_per_clip;
    if let Some(s) = samples.iter().find(|s| s.v_a.len() != frames) {
        return Err(CliError::usage(format!(
            "sample `{}` has {} frames but model.frames_per_clip is {frames}",
            s.id,
            s.v_a.len()
        )));
    }
    let items = prepare_items(&samples, &state.codec, &mear)?;
    let log_path = out.join(TRAIN_LOG);
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| unwritable(&log_path, e))?;
    let mut extra = BTreeMap::new();
    extra.insert("settings".to_string(), settings.to_text());
    let ckpt = out.join(CHECKPOINT_FILE);
    let total = settings.train_steps();
    let every = settings.checkpoint_every();
    let mut done = 0;
    let mut last = None;
    while done < total {
        let chunk = if every > 0 { every.min(total - done) } else { total - done };
        let recs = train(&mut state, &items, chunk, Some(&mut log as &mut dyn Write))?;
        last = recs.last().map(|r| r.loss);
        done += chunk;
        checkpoint::save(&state, &extra, &ckpt).map_err(|e| unwritable(&ckpt, e))?;
    }
    if total == 0 {
        checkpoint::save(&state, &extra, &ckpt).map_err(|e| unwritable(&ckpt, e))?;
    }
    Ok(match last {
        Some(l) => format!("trained to step {} (last loss {l:.5}); checkpoint {}", state.step, ckpt.display()),
        None => format!("no steps requested; checkpoint at step {} written to {}", state.step, ckpt.display()),
    })
}

/// What `swap` operates on.
#[derive(Debug, Clone)]
pub enum SwapSource {
    Dataset(PathBuf),
    Single { driving: PathBuf, reference: PathBuf },
}

fn sample_opts(settings: &Settings, index: u64) -> SampleOptions {
    SampleOptions {
        seed: seed::derive_indexed(settings.seed(), "sample", index),
        ..settings.sample()
    }
}

pub fn swap(settings: &Settings, ckpt: &Path, source: &SwapSource, out: &Path) -> CliResult<String> {
    require_checkpoint(ckpt)?;
    if let SwapSource::Dataset(d) = source {
        require_dataset(d)?;
    }
    ensure_writable_dir(out)?;
    let (state, _) = load_state(ckpt)?;
    let save = |clip: &VideoClip, dir: &Path| save_clip(clip, dir).map_err(|e| unwritable(dir, e));
    match source {
        SwapSource::Dataset(dir) => {
            let samples = load_dataset(dir).map_err(dataset_error)?;
            for (i, s) in samples.iter().enumerate() {
                let result = sample(&state, &s.v_d, &s.i_b, &sample_opts(settings, i as u64), None)
                    .map_err(|e| CliError::from(e).with_context(&s.id))?;
                save(&result.clip, &out.join(&s.id))?;
            }
            Ok(format!("swapped {} clips into {}", samples.len(), out.display()))
        }
        SwapSource::Single { driving, reference } => {
            let v_d = load_clip(driving).map_err(dataset_error)?;
            let i_b = load_frame(reference).map_err(dataset_error)?;
            let result = sample(&state, &v_d, &i_b, &sample_opts(settings, 0), None)?;
            save(&result.clip, out)?;
            Ok(format!("wrote {}", out.display()))
        }
    }
}

fn is_clip_dir(dir: &Path) -> bool {
    dir.join(CLIP_MANIFEST).is_file()
}

/// A clip directory, a directory of clip directories, or a dataset (its `v_a` clips).
fn clip_set(dir: &Path) -> CliResult<Vec<(String, VideoClip)>> {
    if is_clip_dir(dir) {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        return Ok(vec![(name, load_clip(dir).map_err(dataset_error)?)]);
    }
    if dir.join(headswap_core::pipeline::dataset::MANIFEST).is_file() {
        let entries = headswap_core::pipeline::dataset::read_manifest(dir).map_err(dataset_error)?;
        return entries
            .iter()
            .map(|e| Ok((e.id.clone(), load_sample(&dir.join(&e.id), &e.id).map_err(dataset_error)?.v_a)))
            .collect();
    }
    let listing = fs::read_dir(dir).map_err(|e| CliError::dataset(format!("{}: {e}", dir.display())))?;
    let mut subdirs: Vec<PathBuf> = listing
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_clip_dir(p))
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(CliError::dataset(format!("{} contains no clips", dir.display())));
    }
    subdirs
        .iter()
        .map(|p| {
            let name = p.file_name().expect("listed entry").to_string_lossy().into_owned();
            Ok((name, load_clip(p).map_err(dataset_error)?))
        })
        .collect()
}

pub fn eval(settings: &Settings, generated: &Path, ground_truth: &Path, out: Option<&Path>) -> CliResult<MetricReport> {
    if let Some(o) = out {
        ensure_writable_dir(o)?;
    }
    let gen = clip_set(generated)?;
    let gt: BTreeMap<String, _> = clip_set(ground_truth)?.into_iter().collect();
    let single = gen.len() == 1 && gt.len() == 1;
    let cases = gen
        .into_iter()
        .map(|(id, clip)| {
            let truth = if single {
                gt.values().next().cloned()
            } else {
                gt.get(&id).cloned()
            };
            let truth = truth.ok_or_else(|| CliError::dataset(format!("no ground truth for clip `{id}`")))?;
            Ok(EvalCase::new(id, clip, truth))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let backends = Backends {
        embedding: embedding_backend(settings.embedding()).map_err(|e| CliError::usage(e.to_string()))?,
        features: feature_backend(settings.features()).map_err(|e| CliError::usage(e.to_string()))?,
        ..Backends::default()
    };
    let report = evaluate(&cases, &backends, &settings.eval())?;
    if let Some(o) = out {
        for (name, text) in [(REPORT_TABLE, report.to_table()), (REPORT_JSON, report.to_json())] {
            let p = o.join(name);
            fs::write(&p, text).map_err(|e| unwritable(&p, e))?;
        }
    }
    Ok(report)
}

/// What `weights-viz` reads.
#[derive(Debug, Clone)]
pub enum VizSource {
    Sample { data: PathBuf, id: String },
    Clip { clip: PathBuf, landmarks: PathBuf },
}

pub fn weights_viz(settings: &Settings, source: &VizSource, out: &Path) -> CliResult<String> {
    ensure_writable_file(out)?;
    let (clip, landmarks) = match source {
        VizSource::Sample { data, id } => {
            require_dataset(data)?;
            let s = load_sample(&data.join(id), id).map_err(dataset_error)?;
            (s.v_a, s.landmarks_a)
        }
        VizSource::Clip { clip, landmarks } => (
            load_clip(clip).map_err(dataset_error)?,
            load_landmark_track(landmarks).map_err(dataset_error)?,
        ),
    };
    let cfg = settings.mear();
    cfg.validate()?;
    let maps = compute_maps(&clip, &landmarks, &cfg)?;
    save_weights_grid(&maps, out).map_err(|e| unwritable(out, e))?;
    Ok(format!("wrote D | L | A grid for {} frames to {}", clip.len(), out.display()))
}
