//! Flat `key = value` configuration.
//!
//! Precedence: built-in defaults, then the config file, then `--set`
//! overrides. Values are checked when they are set.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use headswap_core::mear::{LandmarkSigma, MearConfig, NormalizationScope};
use headswap_core::metrics::{EvalConfig, NmeNormalization};
use headswap_core::pipeline::{ReferencePolicy, SynthConfig};
use headswap_diffusion::codec::{DEFAULT_CHANNELS, DEFAULT_PATCH};
use headswap_diffusion::optim::AdamConfig;
use headswap_diffusion::sample::SampleOptions;
use headswap_diffusion::schedule::ScheduleConfig;
use headswap_diffusion::train::TrainConfig;
use headswap_diffusion::DenoiserConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Int,
    Float,
    Bool,
    Choice(&'static [&'static str]),
    /// `<f>h` (fraction of the frame height) or `<f>px`.
    Sigma,
    /// `bbox` or `interocular:<left>,<right>`.
    Nme,
    Text,
}

struct KeyDef {
    key: &'static str,
    kind: Kind,
    help: &'static str,
}

const fn k(key: &'static str, kind: Kind, help: &'static str) -> KeyDef {
    KeyDef { key, kind, help }
}

const KEYS: &[KeyDef] = &[
    k("seed", Kind::Int, "root seed, split per subsystem"),
    k("data.count", Kind::Int, "number of synthetic samples"),
    k("data.height", Kind::Int, "frame height in pixels"),
    k("data.width", Kind::Int, "frame width in pixels (one canvas half)"),
    k("data.frames", Kind::Int, "frames per clip"),
    k("data.fps", Kind::Float, "clip frame rate"),
    k("data.supersample", Kind::Int, "render subsamples per pixel edge"),
    k("data.min_identity_distance", Kind::Float, "minimum distance between paired identities"),
    k("data.head_radius", Kind::Float, "head radius as a fraction of the height"),
    k("data.reference", Kind::Choice(&["first", "random"]), "reference frame policy"),
    k("mear.alpha", Kind::Float, "expression weight in the fusion"),
    k("mear.dilation_radius", Kind::Int, "motion map dilation radius"),
    k("mear.dilation_iterations", Kind::Int, "motion map dilation passes"),
    k("mear.landmark_sigma", Kind::Sigma, "landmark Gaussian width (<f>h or <f>px)"),
    k("mear.aggregation_window", Kind::Int, "landmark box-sum window"),
    k("mear.weight_floor_lambda", Kind::Float, "lambda in the loss weights 1 + lambda * A (0 = uniform loss)"),
    k("mear.normalization", Kind::Choice(&["clip", "frame"]), "min-max normalization scope"),
    k("codec.patch", Kind::Int, "patch size of the latent codec"),
    k("codec.channels", Kind::Int, "latent channels"),
    k("model.base_width", Kind::Int, "denoiser base width"),
    k("model.depth", Kind::Int, "denoiser levels"),
    k("model.temporal_attention", Kind::Bool, "attention along the frame axis"),
    k("model.frames_per_clip", Kind::Int, "frames per training clip"),
    k("model.driving_condition", Kind::Bool, "feed the encoded driving canvas to the denoiser"),
    k("schedule.num_steps", Kind::Int, "diffusion timesteps"),
    k("schedule.beta_start", Kind::Float, "first beta"),
    k("schedule.beta_end", Kind::Float, "last beta"),
    k("train.steps", Kind::Int, "optimizer steps per train invocation"),
    k("train.batch_size", Kind::Int, "clips per step"),
    k("train.lr", Kind::Float, "learning rate"),
    k("train.beta1", Kind::Float, "first-moment decay"),
    k("train.beta2", Kind::Float, "second-moment decay"),
    k("train.eps", Kind::Float, "optimizer epsilon"),
    k("train.clip_norm", Kind::Float, "global gradient norm limit (0 = off)"),
    k("train.checkpoint_every", Kind::Int, "also checkpoint every N steps (0 = only at the end)"),
    k("sample.steps", Kind::Int, "DDIM steps"),
    k("sample.strength", Kind::Float, "1 = start from noise; < 1 = start from the noised driving latent"),
    k("eval.psnr_cap", Kind::Float, "PSNR reported for identical frames"),
    k("eval.nme", Kind::Nme, "NME normalization (bbox or interocular:<l>,<r>)"),
    k("eval.features", Kind::Text, "feature backend (projection, projection:<dim>, exec:<dim>:<cmd>)"),
    k("eval.embedding", Kind::Text, "identity embedding backend (histogram, exec:<dim>:<cmd>)"),
];

fn f(v: f64) -> String {
    format!("{v}")
}

fn sigma_text(s: LandmarkSigma) -> String {
    match s {
        LandmarkSigma::RelativeToHeight(v) => format!("{v}h"),
        LandmarkSigma::Pixels(v) => format!("{v}px"),
    }
}

fn nme_text(n: NmeNormalization) -> String {
    match n {
        NmeNormalization::BoundingBox => "bbox".into(),
        NmeNormalization::InterOcular { left, right } => format!("interocular:{left},{right}"),
    }
}

/// Defaults, taken from the modules themselves.
fn defaults() -> BTreeMap<&'static str, String> {
    let synth = SynthConfig::default();
    let mear = MearConfig::default();
    let model = DenoiserConfig::default();
    let sched = ScheduleConfig::default();
    let train = TrainConfig::default();
    let adam = AdamConfig::default();
    let sample = SampleOptions::default();
    let eval = EvalConfig::default();
    let pairs: Vec<(&'static str, String)> = vec![
        ("seed", "0".into()),
        ("data.count", "4".into()),
        ("data.height", synth.height.to_string()),
        ("data.width", synth.width.to_string()),
        ("data.frames", synth.frames.to_string()),
        ("data.fps", f(f64::from(synth.fps))),
        ("data.supersample", synth.supersample.to_string()),
        ("data.min_identity_distance", f(synth.min_identity_distance)),
        ("data.head_radius", f(synth.head_radius)),
        ("data.reference", "first".into()),
        ("mear.alpha", f(mear.alpha)),
        ("mear.dilation_radius", mear.dilation_radius.to_string()),
        ("mear.dilation_iterations", mear.dilation_iterations.to_string()),
        ("mear.landmark_sigma", sigma_text(mear.landmark_sigma)),
        ("mear.aggregation_window", mear.aggregation_window.to_string()),
        ("mear.weight_floor_lambda", f(mear.weight_floor_lambda)),
        ("mear.normalization", "clip".into()),
        ("codec.patch", DEFAULT_PATCH.to_string()),
        ("codec.channels", DEFAULT_CHANNELS.to_string()),
        ("model.base_width", model.base_width.to_string()),
        ("model.depth", model.depth.to_string()),
        ("model.temporal_attention", model.temporal_attention.to_string()),
        ("model.frames_per_clip", model.frames_per_clip.to_string()),
        ("model.driving_condition", model.driving_condition.to_string()),
        ("schedule.num_steps", sched.num_steps.to_string()),
        ("schedule.beta_start", f(sched.beta_start)),
        ("schedule.beta_end", f(sched.beta_end)),
        ("train.steps", "500".into()),
        ("train.batch_size", train.batch_size.to_string()),
        ("train.lr", f(adam.lr)),
        ("train.beta1", f(adam.beta1)),
        ("train.beta2", f(adam.beta2)),
        ("train.eps", f(adam.eps)),
        ("train.clip_norm", f(adam.clip_norm)),
        ("train.checkpoint_every", "0".into()),
        ("sample.steps", sample.steps.to_string()),
        ("sample.strength", f(sample.strength)),
        ("eval.psnr_cap", f(eval.psnr_cap)),
        ("eval.nme", nme_text(eval.nme)),
        ("eval.features", "projection".into()),
        ("eval.embedding", "histogram".into()),
    ];
    pairs.into_iter().collect()
}

fn key_def(key: &str) -> Option<&'static KeyDef> {
    KEYS.iter().find(|d| d.key == key)
}

fn parse_sigma(v: &str) -> Option<LandmarkSigma> {
    if let Some(n) = v.strip_suffix("px") {
        n.parse().ok().map(LandmarkSigma::Pixels)
    } else if let Some(n) = v.strip_suffix('h') {
        n.parse().ok().map(LandmarkSigma::RelativeToHeight)
    } else {
        None
    }
}

fn parse_nme(v: &str) -> Option<NmeNormalization> {
    if v == "bbox" {
        return Some(NmeNormalization::BoundingBox);
    }
    let (l, r) = v.strip_prefix("interocular:")?.split_once(',')?;
    Some(NmeNormalization::InterOcular {
        left: l.trim().parse().ok()?,
        right: r.trim().parse().ok()?,
    })
}

fn check_value(def: &KeyDef, value: &str) -> bool {
    match def.kind {
        Kind::Int => value.parse::<u64>().is_ok(),
        Kind::Float => value.parse::<f64>().map(f64::is_finite).unwrap_or(false),
        Kind::Bool => matches!(value, "true" | "false"),
        Kind::Choice(opts) => opts.contains(&value),
        Kind::Sigma => parse_sigma(value).is_some(),
        Kind::Nme => parse_nme(value).is_some(),
        Kind::Text => !value.is_empty(),
    }
}

fn kind_hint(kind: Kind) -> String {
    match kind {
        Kind::Int => "a nonnegative integer".into(),
        Kind::Float => "a finite number".into(),
        Kind::Bool => "true or false".into(),
        Kind::Choice(opts) => format!("one of {}", opts.join(", ")),
        Kind::Sigma => "<f>h or <f>px".into(),
        Kind::Nme => "bbox or interocular:<left>,<right>".into(),
        Kind::Text => "a non-empty string".into(),
    }
}

/// Every key is always present; values are validated on entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<&'static str, String>,
}

impl Default for Settings {
    fn default() -> Self {
        Self { values: defaults() }
    }
}

pub fn valid_keys() -> Vec<&'static str> {
    KEYS.iter().map(|d| d.key).collect()
}

/// One line per key with its default, for the help text.
pub fn keys_help() -> String {
    let d = defaults();
    let mut out = String::from("Configuration keys (default in brackets):\n");
    for def in KEYS {
        let _ = writeln!(out, "  {:<28} [{}] {}", def.key, d[def.key], def.help);
    }
    out
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let def = key_def(key).ok_or_else(|| {
            CliError::usage(format!("unknown key `{key}`; valid keys: {}", valid_keys().join(", ")))
        })?;
        let value = value.trim();
        if !check_value(def, value) {
            return Err(CliError::usage(format!(
                "`{key}` expects {}, got `{value}`",
                kind_hint(def.kind)
            )));
        }
        self.values.insert(def.key, value.to_string());
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> CliResult<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("override `{pair}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    /// Applies a config file: `key = value` lines, `#` comments.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> CliResult<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.set_pair(line)
                .map_err(|e| CliError::usage(format!("{origin}:{}: {}", i + 1, e.message)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn get(&self, key: &str) -> &str {
        &self.values[key]
    }

    fn int(&self, key: &str) -> u64 {
        self.get(key).parse().expect("validated on set")
    }

    fn usize(&self, key: &str) -> usize {
        self.int(key) as usize
    }

    fn float(&self, key: &str) -> f64 {
        self.get(key).parse().expect("validated on set")
    }

    fn flag(&self, key: &str) -> bool {
        self.get(key) == "true"
    }

    /// All settings as `key=value` lines.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn seed(&self) -> u64 {
        self.int("seed")
    }

    pub fn count(&self) -> usize {
        self.usize("data.count")
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            height: self.usize("data.height"),
            width: self.usize("data.width"),
            frames: self.usize("data.frames"),
            fps: self.float("data.fps") as f32,
            supersample: self.usize("data.supersample"),
            min_identity_distance: self.float("data.min_identity_distance"),
            head_radius: self.float("data.head_radius"),
            reference_policy: match self.get("data.reference") {
                "random" => ReferencePolicy::RandomFrame {
                    seed: headswap_core::seed::derive(self.seed(), "reference"),
                },
                _ => ReferencePolicy::FirstFrame,
            },
        }
    }

    pub fn mear(&self) -> MearConfig {
        MearConfig {
            alpha: self.float("mear.alpha"),
            dilation_radius: self.usize("mear.dilation_radius"),
            dilation_iterations: self.usize("mear.dilation_iterations"),
            landmark_sigma: parse_sigma(self.get("mear.landmark_sigma")).expect("validated on set"),
            aggregation_window: self.usize("mear.aggregation_window"),
            weight_floor_lambda: self.float("mear.weight_floor_lambda"),
            normalization: match self.get("mear.normalization") {
                "frame" => NormalizationScope::Frame,
                _ => NormalizationScope::Clip,
            },
        }
    }

    pub fn codec(&self) -> (usize, usize) {
        (self.usize("codec.patch"), self.usize("codec.channels"))
    }

    pub fn model(&self) -> DenoiserConfig {
        DenoiserConfig {
            latent_channels: self.usize("codec.channels"),
            base_width: self.usize("model.base_width"),
            depth: self.usize("model.depth"),
            temporal_attention: self.flag("model.temporal_attention"),
            frames_per_clip: self.usize("model.frames_per_clip"),
            driving_condition: self.flag("model.driving_condition"),
        }
    }

    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            num_steps: self.usize("schedule.num_steps"),
            beta_start: self.float("schedule.beta_start"),
            beta_end: self.float("schedule.beta_end"),
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.usize("train.batch_size"),
            adam: AdamConfig {
                lr: self.float("train.lr"),
                beta1: self.float("train.beta1"),
                beta2: self.float("train.beta2"),
                eps: self.float("train.eps"),
                clip_norm: self.float("train.clip_norm"),
            },
        }
    }

    pub fn train_steps(&self) -> u64 {
        self.int("train.steps")
    }

    pub fn checkpoint_every(&self) -> u64 {
        self.int("train.checkpoint_every")
    }

    /// Sampler options; the noise seed is filled in per clip.
    pub fn sample(&self) -> SampleOptions {
        SampleOptions {
            steps: self.usize("sample.steps"),
            strength: self.float("sample.strength"),
            seed: 0,
        }
    }

    pub fn eval(&self) -> EvalConfig {
        EvalConfig {
            psnr_cap: self.float("eval.psnr_cap"),
            nme: parse_nme(self.get("eval.nme")).expect("validated on set"),
        }
    }

    pub fn features(&self) -> &str {
        self.get("eval.features")
    }

    pub fn embedding(&self) -> &str {
        self.get("eval.embedding")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use headswap_core::metrics::DEFAULT_PSNR_CAP;

    #[test]
    fn table_and_defaults_cover_the_same_keys() {
        let d = defaults();
        assert_eq!(d.len(), KEYS.len());
        for def in KEYS {
            assert!(check_value(def, &d[def.key]), "default of {} fails its own check", def.key);
        }
    }

    #[test]
    fn defaults_resolve_to_module_defaults() {
        let s = Settings::default();
        assert_eq!(s.synth(), SynthConfig::default());
        assert_eq!(s.mear(), MearConfig::default());
        assert_eq!(s.model(), DenoiserConfig::default());
        assert_eq!(s.schedule(), ScheduleConfig::default());
        assert_eq!(s.train(), TrainConfig::default());
        assert_eq!(s.sample(), SampleOptions::default());
        assert_eq!(s.eval(), EvalConfig::default());
        assert_eq!(s.codec(), (8, 4));
        assert_eq!(s.eval().psnr_cap, DEFAULT_PSNR_CAP);
    }

    #[test]
    fn file_then_overrides() {
        let mut s = Settings::default();
        s.apply_text("# comment\nmear.alpha = 0.25\n\ntrain.lr=0.001 # trailing\n", "cfg").unwrap();
        s.set_pair("mear.alpha=0.75").unwrap();
        assert_eq!(s.mear().alpha, 0.75);
        assert_eq!(s.train().adam.lr, 0.001);
        s.set("mear.landmark_sigma", "3px").unwrap();
        assert_eq!(s.mear().landmark_sigma, LandmarkSigma::Pixels(3.0));
        s.set("eval.nme", "interocular:10,11").unwrap();
        assert_eq!(s.eval().nme, NmeNormalization::InterOcular { left: 10, right: 11 });
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let mut s = Settings::default();
        let e = s.set("mear.beta", "1").unwrap_err();
        assert!(e.message.contains("mear.alpha") && e.message.contains("eval.embedding"));
        assert!(s.set("train.steps", "-1").is_err());
        assert!(s.set("model.temporal_attention", "yes").is_err());
        assert!(s.set("mear.normalization", "batch").is_err());
        assert!(s.set_pair("novalue").is_err());
        let e = s.apply_text("seed=1\noops=2\n", "f.cfg").unwrap_err();
        assert!(e.message.starts_with("f.cfg:2:"));
    }

    #[test]
    fn help_lists_every_key() {
        let h = keys_help();
        for key in valid_keys() {
            assert!(h.contains(key));
        }
        assert!(h.contains("[1000]"));
    }
}
