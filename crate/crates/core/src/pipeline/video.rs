//! Video input: a directory of ordered PNG/JPEG frames.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::backends::Frame;

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{0}: no frames found")]
    Empty(PathBuf),
    #[error("{path}: frame is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    SizeChange {
        path: PathBuf,
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
}

fn is_frame_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Frame files in `dir`, sorted by file name.
pub fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>, VideoError> {
    let io = |e: std::io::Error| VideoError::Io {
        path: dir.to_path_buf(),
        message: e.to_string(),
    };
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_file() && is_frame_file(&path) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

pub fn load_frame(index: usize, path: &Path) -> Result<Frame, VideoError> {
    let img = image::open(path).map_err(|e| VideoError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(Frame::new(index, img.to_rgb8()))
}

pub fn load_frames(paths: &[PathBuf]) -> Result<Vec<Frame>, VideoError> {
    let mut frames: Vec<Frame> = Vec::with_capacity(paths.len());
    for (i, path) in paths.iter().enumerate() {
        let frame = load_frame(i, path)?;
        if let Some(first) = frames.first() {
            if first.dims() != frame.dims() {
                return Err(VideoError::SizeChange {
                    path: path.clone(),
                    got_w: frame.width(),
                    got_h: frame.height(),
                    want_w: first.width(),
                    want_h: first.height(),
                });
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

pub fn load_video(dir: &Path) -> Result<Vec<Frame>, VideoError> {
    let paths = frame_paths(dir)?;
    if paths.is_empty() {
        return Err(VideoError::Empty(dir.to_path_buf()));
    }
    load_frames(&paths)
}

/// Writes frames as `00000.png`, `00001.png`, ...
pub fn save_video(dir: &Path, frames: &[Frame]) -> Result<(), VideoError> {
    std::fs::create_dir_all(dir).map_err(|e| VideoError::Io {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })?;
    for f in frames {
        let path = dir.join(format!("{:05}.png", f.index));
        f.image.save(&path).map_err(|e| VideoError::Io {
            path: path.clone(),
            message: e.to_string(),
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    #[test]
    fn round_trip_in_name_order() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<_> = (0..3)
            .map(|i| Frame::new(i, RgbImage::from_pixel(3, 2, Rgb([i as u8 * 50, 0, 0]))))
            .collect();
        save_video(dir.path(), &frames).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let back = load_video(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in frames.iter().zip(&back) {
            assert_eq!(a.index, b.index);
            assert_eq!(*a.image, *b.image);
        }
    }

    #[test]
    fn empty_and_resized() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_video(dir.path()), Err(VideoError::Empty(_))));
        RgbImage::new(3, 2).save(dir.path().join("a.png")).unwrap();
        RgbImage::new(4, 2).save(dir.path().join("b.png")).unwrap();
        assert!(matches!(load_video(dir.path()), Err(VideoError::SizeChange { .. })));
    }
}
