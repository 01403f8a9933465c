//! Head editors and the gated assembly loop around them.
//!
//! An external editor is any program invoked as
//!
//! ```text
//! <program> [args...] <in_dir> <out_dir>
//! ```
//!
//! with the environment variable `HEADSWAP_SEED` set. `in_dir` holds the
//! original clip (clip directory layout) and its `landmarks.txt`. The program
//! must fill `out_dir` with the edited clip in the same layout, the head masks
//! of the edited clip under `masks/`, and the edited landmarks as
//! `landmarks.txt`. A nonzero exit status counts as a failed attempt.

use std::path::Path;
use std::process::Command;

use super::{
    head_fusion, make_tuple, nme_alignment_filter, realism_filter, PairedSample, RealismScorer, ReferencePolicy,
    TupleParts, DEFAULT_FEATHER_RADIUS, DEFAULT_NME_THRESHOLD, DEFAULT_REALISM_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::media::{self, LandmarkSet, SegmentationMask, VideoClip};
use crate::metrics::NmeNormalization;

/// Output of one editing attempt: the clip with a new head, its masks and landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct EditedClip {
    pub clip: VideoClip,
    pub masks: Vec<SegmentationMask>,
    pub landmarks: Vec<LandmarkSet>,
}

pub trait HeadEditor: Send + Sync {
    fn name(&self) -> &str;
    fn edit(&self, v_a: &VideoClip, landmarks_a: &[LandmarkSet], seed: u64) -> Result<EditedClip>;
}

#[derive(Debug, Clone)]
pub struct CommandEditor {
    pub program: String,
    pub args: Vec<String>,
}

impl CommandEditor {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }

    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Backend {
            name: self.program.clone(),
            reason: reason.into(),
        }
    }
}

impl HeadEditor for CommandEditor {
    fn name(&self) -> &str {
        &self.program
    }

    fn edit(&self, v_a: &VideoClip, landmarks_a: &[LandmarkSet], seed: u64) -> Result<EditedClip> {
        let work = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let (in_dir, out_dir) = (work.path().join("in"), work.path().join("out"));
        media::save_clip(v_a, &in_dir)?;
        media::save_landmark_track(landmarks_a, &in_dir.join("landmarks.txt"))?;
        std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        let status = Command::new(&self.program)
            .args(&self.args)
            .arg(&in_dir)
            .arg(&out_dir)
            .env("HEADSWAP_SEED", seed.to_string())
            .status()
            .map_err(|e| self.fail(format!("cannot start: {e}")))?;
        if !status.success() {
            return Err(self.fail(format!("exited with {status}")));
        }
        read_edit(&out_dir, v_a.len()).map_err(|e| self.fail(e.to_string()))
    }
}

fn read_edit(dir: &Path, frames: usize) -> Result<EditedClip> {
    let clip = media::load_clip(dir)?;
    if clip.len() != frames {
        return Err(Error::shape(format!("edited clip has {} frames, expected {frames}", clip.len())));
    }
    Ok(EditedClip {
        masks: media::load_masks(&dir.join("masks"), frames)?,
        landmarks: media::load_landmark_track(&dir.join("landmarks.txt"))?,
        clip,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyConfig {
    pub nme_threshold: f64,
    pub nme_normalization: NmeNormalization,
    pub realism_threshold: f64,
    pub feather_radius: usize,
    pub max_attempts: u32,
    pub reference_policy: ReferencePolicy,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        Self {
            nme_threshold: DEFAULT_NME_THRESHOLD,
            nme_normalization: NmeNormalization::BoundingBox,
            realism_threshold: DEFAULT_REALISM_THRESHOLD,
            feather_radius: DEFAULT_FEATHER_RADIUS,
            max_attempts: 5,
            reference_policy: ReferencePolicy::FirstFrame,
        }
    }
}

/// Edits the head of `v_a`, gates the result on landmark alignment, pastes
/// the new head onto the original background and gates the composite on
/// realism. A rejected or failed attempt is retried with the next seed, up to
/// `max_attempts`; after that the clip is skipped and `None` returned.
pub fn assemble_pair(
    id: &str,
    v_a: &VideoClip,
    landmarks_a: &[LandmarkSet],
    editor: &dyn HeadEditor,
    scorer: &dyn RealismScorer,
    cfg: &AssemblyConfig,
    seed: u64,
) -> Result<Option<PairedSample>> {
    if landmarks_a.len() != v_a.len() {
        return Err(Error::shape(format!(
            "{id}: {} landmark sets for {} frames",
            landmarks_a.len(),
            v_a.len()
        )));
    }
    for attempt in 0..cfg.max_attempts {
        let attempt_seed = seed.wrapping_add(u64::from(attempt));
        let edited = match editor.edit(v_a, landmarks_a, attempt_seed) {
            Ok(e) => e,
            Err(e) => {
                log::warn!("{id}: editor `{}` attempt {} failed: {e}", editor.name(), attempt + 1);
                continue;
            }
        };
        let alignment = nme_alignment_filter(landmarks_a, &edited.landmarks, cfg.nme_threshold, cfg.nme_normalization)?;
        if !alignment.accepted {
            log::info!("{id}: attempt {} misaligned (nme {:.4}), regenerating", attempt + 1, alignment.nme);
            continue;
        }
        let v_c = head_fusion(&edited.clip, v_a, &edited.masks, cfg.feather_radius)?;
        let realism = realism_filter(scorer, &v_c, cfg.realism_threshold)?;
        if !realism.accepted {
            log::info!("{id}: attempt {} looks synthetic (p_real {:.4}), regenerating", attempt + 1, realism.p_real);
            continue;
        }
        let parts = TupleParts {
            id: id.to_string(),
            landmarks_a: landmarks_a.to_vec(),
            landmarks_d: edited.landmarks,
            masks: edited.masks,
            alignment,
            realism,
            generator_seed: attempt_seed,
            attempts: attempt + 1,
        };
        return make_tuple(v_c, v_a.clone(), parts, cfg.reference_policy).map(Some);
    }
    log::warn!("{id}: skipped after {} attempts", cfg.max_attempts);
    Ok(None)
}
