//! Clips on disk: a manifest, an annotation CSV and a directory of frames.

use std::path::{Path, PathBuf};

use crate::annotations::{write_annotation_csv, ClipAnnotation, ClipManifest};
use crate::error::{Error, Result};
use crate::image::Image;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Annotations together with decoded frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipData {
    pub annotation: ClipAnnotation,
    pub frames: Vec<Image>,
}

impl ClipData {
    pub fn new(annotation: ClipAnnotation, frames: Vec<Image>) -> Result<Self> {
        if annotation.len() != frames.len() {
            return Err(Error::Validation(format!(
                "clip {}: {} annotated frames but {} images",
                annotation.clip_id,
                annotation.len(),
                frames.len()
            )));
        }
        let (w, h) = (annotation.width() as usize, annotation.height() as usize);
        if let Some((i, f)) = frames
            .iter()
            .enumerate()
            .find(|(_, f)| (f.width(), f.height()) != (w, h))
        {
            return Err(Error::Validation(format!(
                "clip {}: frame {i} is {}x{}, annotations say {w}x{h}",
                annotation.clip_id,
                f.width(),
                f.height()
            )));
        }
        Ok(Self { annotation, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Image files of a directory in file-name order.
pub fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Annotations only; frames are not decoded.
pub fn load_annotation(manifest: impl AsRef<Path>) -> Result<ClipAnnotation> {
    let (m, base) = ClipManifest::load(manifest)?;
    let parsed = m.load_annotation(&base)?;
    if parsed.clamped > 0 {
        log::warn!("clip {}: {} head points clamped into the frame", m.clip_id, parsed.clamped);
    }
    Ok(parsed.clip)
}

pub fn load_clip(manifest: impl AsRef<Path>) -> Result<ClipData> {
    let manifest = manifest.as_ref();
    let (m, base) = ClipManifest::load(manifest)?;
    let mut annotation = load_annotation(manifest)?;
    let paths = frame_paths(&ClipManifest::resolve(&base, &m.frames_dir))?;
    if paths.len() < annotation.len() {
        return Err(Error::Validation(format!(
            "clip {}: annotations cover {} frames but only {} images exist",
            m.clip_id,
            annotation.len(),
            paths.len()
        )));
    }
    while annotation.len() < paths.len() {
        let idx = annotation.len();
        annotation
            .frames
            .push(crate::annotations::FrameAnnotation::new(idx, m.width, m.height, Vec::new()));
    }
    let frames = paths.iter().map(Image::load).collect::<Result<Vec<_>>>()?;
    ClipData::new(annotation, frames)
}

/// Manifests under `dir`: `dir/manifest.json` itself, or one per
/// immediate subdirectory, sorted by path.
pub fn find_manifests(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if dir.is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let own = dir.join(MANIFEST_FILE);
    if own.is_file() {
        return Ok(vec![own]);
    }
    let mut found: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path().join(MANIFEST_FILE)))
        .filter(|p| p.is_file())
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(Error::Input(format!("no {MANIFEST_FILE} found under {}", dir.display())));
    }
    Ok(found)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<ClipData>> {
    find_manifests(dir)?.iter().map(load_clip).collect()
}

/// Writes `frames/frame_NNNNNN.png`, `annotations.csv` and `manifest.json`
/// into `dir`; returns the manifest path.
pub fn write_clip(dir: impl AsRef<Path>, clip: &ClipData) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let frames_dir = dir.join("frames");
    std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    for (i, f) in clip.frames.iter().enumerate() {
        f.save_png(frames_dir.join(format!("frame_{i:06}.png")))?;
    }
    let csv = dir.join("annotations.csv");
    std::fs::write(&csv, write_annotation_csv(&clip.annotation, 0.0)).map_err(|e| Error::io(&csv, e))?;
    let manifest = ClipManifest {
        clip_id: clip.annotation.clip_id.clone(),
        fps: clip.annotation.fps,
        width: clip.annotation.width(),
        height: clip.annotation.height(),
        frames_dir: "frames".into(),
        annotation_csv: "annotations.csv".into(),
        n_frames: Some(clip.len()),
    };
    let path = dir.join(MANIFEST_FILE);
    manifest.save(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    #[test]
    fn synthetic_clip_round_trips() {
        let s = generate(&SynthConfig {
            n_frames: 4,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let data = ClipData::new(s.clip.clone(), s.frames.clone()).unwrap();
        let manifest = write_clip(dir.path(), &data).unwrap();
        let back = load_clip(&manifest).unwrap();
        assert_eq!(back.annotation, s.clip);
        assert_eq!(back.len(), 4);
        assert_eq!(find_manifests(dir.path()).unwrap(), vec![manifest]);
    }
}
