//! DAVIS-style dataset layout:
//!
//! ```text
//! ROOT/JPEGImages/480p/<seq>/00000.jpg ...
//! ROOT/Annotations/480p/<seq>/00000.png ...   (indexed PNG)
//! ```

use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{GroundTruthSequence, MetricsError};
use crate::mask::io::{self, LabelEncoding, LabelIoError};
use crate::mask::LabelMap;

pub const IMAGES_DIR: &str = "JPEGImages/480p";
pub const ANNOTATIONS_DIR: &str = "Annotations/480p";

#[derive(Debug, Error)]
pub enum DavisError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("missing frame: {0}")]
    MissingFrame(String),
    #[error("{0}: annotation is not an indexed PNG")]
    PaletteMismatch(PathBuf),
    #[error("sequence {0} has no frames")]
    EmptySequence(String),
    #[error("{path}: {source}")]
    Label { path: PathBuf, source: LabelIoError },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn list_files(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>, DavisError> {
    let io = |e: std::io::Error| DavisError::Io {
        path: dir.to_path_buf(),
        message: e.to_string(),
    };
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| exts.contains(&e.as_str())) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

/// Loads every annotation PNG in `dir` in name order. When `indexed_only`
/// is set, anything but a palette PNG is a [`DavisError::PaletteMismatch`].
pub fn read_annotations(dir: &Path, indexed_only: bool) -> Result<(Vec<PathBuf>, Vec<LabelMap>), DavisError> {
    let paths = list_files(dir, &["png"])?;
    let mut maps = Vec::with_capacity(paths.len());
    for p in &paths {
        let (lm, enc) = io::load_png(p).map_err(|source| match source {
            LabelIoError::NotLabelImage(_) if indexed_only => DavisError::PaletteMismatch(p.clone()),
            source => DavisError::Label { path: p.clone(), source },
        })?;
        if indexed_only && enc != LabelEncoding::Indexed8 {
            return Err(DavisError::PaletteMismatch(p.clone()));
        }
        maps.push(lm);
    }
    Ok((paths, maps))
}

pub fn read_davis(root: &Path, sequence: &str) -> Result<(Vec<PathBuf>, GroundTruthSequence), DavisError> {
    let images = list_files(&root.join(IMAGES_DIR).join(sequence), &["jpg", "jpeg", "png"])?;
    let ann_dir = root.join(ANNOTATIONS_DIR).join(sequence);
    let annotations = list_files(&ann_dir, &["png"])?;
    if images.is_empty() && annotations.is_empty() {
        return Err(DavisError::EmptySequence(sequence.to_string()));
    }
    if images.len() != annotations.len() {
        return Err(DavisError::MissingFrame(format!(
            "{sequence}: {} images, {} annotations",
            images.len(),
            annotations.len()
        )));
    }
    if let Some((i, a)) = images.iter().zip(&annotations).find(|(i, a)| stem(i) != stem(a)) {
        return Err(DavisError::MissingFrame(format!(
            "{sequence}: image {} has no annotation (found {})",
            i.display(),
            a.display()
        )));
    }
    let (_, maps) = read_annotations(&ann_dir, true)?;
    let gt = GroundTruthSequence::new(sequence, maps)?;
    Ok((images, gt))
}

/// Sequence names under `root`, sorted.
pub fn sequences(root: &Path) -> Result<Vec<String>, DavisError> {
    let dir = root.join(ANNOTATIONS_DIR);
    let io = |e: std::io::Error| DavisError::Io {
        path: dir.clone(),
        message: e.to_string(),
    };
    let mut names = Vec::new();
    for entry in std::fs::read_dir(&dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_dir() {
            names.push(path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string());
        }
    }
    names.sort();
    Ok(names)
}

pub fn is_davis_root(path: &Path) -> bool {
    path.join(ANNOTATIONS_DIR).is_dir()
}

/// Writes a sequence in the DAVIS layout (PNG images).
pub fn write_sequence(
    root: &Path,
    sequence: &str,
    frames: &[crate::backends::Frame],
    gt: &[LabelMap],
) -> Result<(), DavisError> {
    let img_dir = root.join(IMAGES_DIR).join(sequence);
    let ann_dir = root.join(ANNOTATIONS_DIR).join(sequence);
    for d in [&img_dir, &ann_dir] {
        std::fs::create_dir_all(d).map_err(|e| DavisError::Io {
            path: d.clone(),
            message: e.to_string(),
        })?;
    }
    for (f, lm) in frames.iter().zip(gt) {
        let name = format!("{:05}", f.index);
        let ip = img_dir.join(format!("{name}.png"));
        f.image.save(&ip).map_err(|e| DavisError::Io {
            path: ip.clone(),
            message: e.to_string(),
        })?;
        let ap = ann_dir.join(format!("{name}.png"));
        io::save_png(lm, &ap).map_err(|source| DavisError::Label { path: ap.clone(), source })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::Frame;
    use image::RgbImage;

    fn toy(root: &Path) {
        let frames: Vec<_> = (0..3).map(|i| Frame::new(i, RgbImage::new(6, 4))).collect();
        let gt: Vec<_> = (0..3)
            .map(|i| LabelMap::from_fn(6, 4, |x, _| u16::from(x == i as u32)).unwrap())
            .collect();
        write_sequence(root, "toy", &frames, &gt).unwrap();
    }

    #[test]
    fn reads_well_formed_sequence() {
        let dir = tempfile::tempdir().unwrap();
        toy(dir.path());
        assert!(is_davis_root(dir.path()));
        assert_eq!(sequences(dir.path()).unwrap(), vec!["toy".to_string()]);
        let (images, gt) = read_davis(dir.path(), "toy").unwrap();
        assert_eq!(images.len(), 3);
        assert_eq!(gt.frames.len(), 3);
        assert_eq!(gt.ids, vec![1]);
    }

    #[test]
    fn missing_annotation() {
        let dir = tempfile::tempdir().unwrap();
        toy(dir.path());
        std::fs::remove_file(dir.path().join(ANNOTATIONS_DIR).join("toy/00002.png")).unwrap();
        assert!(matches!(read_davis(dir.path(), "toy"), Err(DavisError::MissingFrame(_))));
    }

    #[test]
    fn rgb_annotation_is_palette_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        toy(dir.path());
        RgbImage::new(6, 4)
            .save(dir.path().join(ANNOTATIONS_DIR).join("toy/00001.png"))
            .unwrap();
        assert!(matches!(read_davis(dir.path(), "toy"), Err(DavisError::PaletteMismatch(_))));
    }

    #[test]
    fn empty_sequence() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join(IMAGES_DIR).join("none")).unwrap();
        std::fs::create_dir_all(dir.path().join(ANNOTATIONS_DIR).join("none")).unwrap();
        assert!(matches!(read_davis(dir.path(), "none"), Err(DavisError::EmptySequence(_))));
    }
}
