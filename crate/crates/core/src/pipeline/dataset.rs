//! Dataset directories.
//!
//! ```text
//! <root>/manifest.txt
//! <root>/<id>/v_a/            clip directory
//! <root>/<id>/v_d/            clip directory
//! <root>/<id>/i_b.png
//! <root>/<id>/landmarks_a.txt
//! <root>/<id>/landmarks_d.txt
//! <root>/<id>/masks/          mask_000000.png, ...
//! <root>/<id>/meta.txt        key=value provenance
//! ```
//!
//! `manifest.txt` starts with `# headswap dataset v1` and lists one sample per
//! line as `<id> <nme> <p_real>`.

use std::fs;
use std::path::Path;

use super::{PairedSample, Provenance};
use crate::error::{Error, Result};
use crate::media::{self, load_clip, load_frame, load_landmark_track, load_masks, save_clip, save_frame};

pub const MANIFEST: &str = "manifest.txt";
const MANIFEST_HEADER: &str = "# headswap dataset v1";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub nme: f64,
    pub p_real: f64,
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
        && id != "."
        && id != "..";
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("sample id `{id}` is not a plain file name")))
    }
}

pub fn save_sample(sample: &PairedSample, dir: &Path) -> Result<()> {
    sample.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_clip(&sample.v_a, &dir.join("v_a"))?;
    save_clip(&sample.v_d, &dir.join("v_d"))?;
    save_frame(&sample.i_b, &dir.join("i_b.png"))?;
    media::save_landmark_track(&sample.landmarks_a, &dir.join("landmarks_a.txt"))?;
    media::save_landmark_track(&sample.landmarks_d, &dir.join("landmarks_d.txt"))?;
    media::save_masks(&sample.masks, &dir.join("masks"))?;
    let meta = dir.join("meta.txt");
    fs::write(&meta, sample.provenance.to_text()).map_err(|e| Error::io(&meta, e))
}

pub fn load_sample(dir: &Path, id: &str) -> Result<PairedSample> {
    let v_a = load_clip(&dir.join("v_a"))?;
    let v_d = load_clip(&dir.join("v_d"))?;
    let i_b = load_frame(&dir.join("i_b.png"))?;
    let landmarks_a = load_landmark_track(&dir.join("landmarks_a.txt"))?;
    let landmarks_d = load_landmark_track(&dir.join("landmarks_d.txt"))?;
    let masks = load_masks(&dir.join("masks"), v_a.len())?;
    let meta = dir.join("meta.txt");
    let text = fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
    let provenance = Provenance::from_text(&text).map_err(|why| Error::malformed(&meta, why))?;
    let sample = PairedSample {
        id: id.to_string(),
        v_d,
        i_b,
        v_a,
        landmarks_a,
        landmarks_d,
        masks,
        provenance,
    };
    sample.validate().map_err(|e| Error::malformed(dir, e.to_string()))?;
    Ok(sample)
}

/// Writes every sample and then the manifest, from a single thread.
pub fn save_dataset(samples: &[PairedSample], root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut manifest = format!("{MANIFEST_HEADER}\n# id nme p_real\n");
    for s in samples {
        check_id(&s.id)?;
        save_sample(s, &root.join(&s.id))?;
        manifest.push_str(&format!("{} {} {}\n", s.id, s.provenance.nme, s.provenance.p_real));
    }
    let path = root.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestEntry>> {
    let path = root.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::malformed(&path, format!("cannot read manifest: {e}")))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(MANIFEST_HEADER) {
        return Err(Error::malformed(&path, format!("first line must be `{MANIFEST_HEADER}`")));
    }
    let mut entries = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::malformed(&path, format!("line {}: expected `<id> <nme> <p_real>`", i + 2));
        let f: Vec<&str> = line.split_whitespace().collect();
        let [id, nme, p] = f[..] else { return Err(bad()) };
        check_id(id).map_err(|_| bad())?;
        entries.push(ManifestEntry {
            id: id.to_string(),
            nme: nme.parse().map_err(|_| bad())?,
            p_real: p.parse().map_err(|_| bad())?,
        });
    }
    if entries.is_empty() {
        return Err(Error::malformed(&path, "manifest lists no samples"));
    }
    Ok(entries)
}

/// Loads every sample named in the manifest, in manifest order. Any missing
/// or unreadable sample file surfaces as a malformed-dataset error.
pub fn load_dataset(root: &Path) -> Result<Vec<PairedSample>> {
    read_manifest(root)?
        .iter()
        .map(|e| {
            load_sample(&root.join(&e.id), &e.id).map_err(|err| match err {
                Error::Malformed { .. } => err,
                other => Error::malformed(root.join(&e.id), other.to_string()),
            })
        })
        .collect()
}
