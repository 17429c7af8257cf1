//! Label maps on disk: 8-bit palette PNGs (index = label, DAVIS convention),
//! falling back to 16-bit grayscale once a label exceeds 255.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Read, Seek, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::LabelMap;

#[derive(Debug, Error)]
pub enum LabelIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("png decode error: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("png encode error: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("not a label image: {0}")]
    NotLabelImage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelEncoding {
    Indexed8,
    Gray16,
    Gray8,
}

/// Deterministic palette color for a label; identical to the PASCAL/DAVIS
/// bit-interleaved palette, so exported images match the usual tooling.
pub fn palette_color(label: u8) -> [u8; 3] {
    let mut rgb = [0u8; 3];
    let mut c = label;
    for shift in (0..8).rev() {
        for (ch, v) in rgb.iter_mut().enumerate() {
            *v |= ((c >> ch) & 1) << shift;
        }
        c >>= 3;
    }
    rgb
}

fn palette() -> Vec<u8> {
    (0..=255u8).flat_map(palette_color).collect()
}

pub fn encoding_for(lm: &LabelMap) -> LabelEncoding {
    if lm.labels().iter().all(|&l| l <= 255) {
        LabelEncoding::Indexed8
    } else {
        LabelEncoding::Gray16
    }
}

pub fn write_png<W: Write>(lm: &LabelMap, out: W) -> Result<LabelEncoding, LabelIoError> {
    let encoding = encoding_for(lm);
    let mut enc = png::Encoder::new(out, lm.width(), lm.height());
    let data: Vec<u8> = match encoding {
        LabelEncoding::Indexed8 => {
            enc.set_color(png::ColorType::Indexed);
            enc.set_depth(png::BitDepth::Eight);
            enc.set_palette(palette());
            lm.labels().iter().map(|&l| l as u8).collect()
        }
        _ => {
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Sixteen);
            lm.labels().iter().flat_map(|l| l.to_be_bytes()).collect()
        }
    };
    let mut writer = enc.write_header()?;
    writer.write_image_data(&data)?;
    writer.finish()?;
    Ok(encoding)
}

pub fn encode_png(lm: &LabelMap) -> Result<Vec<u8>, LabelIoError> {
    let mut buf = Vec::new();
    write_png(lm, &mut buf)?;
    Ok(buf)
}

pub fn save_png(lm: &LabelMap, path: impl AsRef<Path>) -> Result<LabelEncoding, LabelIoError> {
    let mut w = BufWriter::new(File::create(path)?);
    let enc = write_png(lm, &mut w)?;
    w.flush()?;
    Ok(enc)
}

pub fn read_png<R: Read + Seek>(input: R) -> Result<(LabelMap, LabelEncoding), LabelIoError> {
    let mut dec = png::Decoder::new(BufReader::new(input));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info()?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let frame = reader.next_frame(&mut buf)?;
    let (w, h) = (frame.width, frame.height);
    let data = &buf[..frame.buffer_size()];
    let line = frame.line_size;
    let (encoding, labels) = match (frame.color_type, frame.bit_depth) {
        (png::ColorType::Indexed, depth) => (LabelEncoding::Indexed8, unpack(data, line, w, h, depth as u8)),
        (png::ColorType::Grayscale, png::BitDepth::Sixteen) => {
            let mut labels = Vec::with_capacity(w as usize * h as usize);
            for row in data.chunks(line).take(h as usize) {
                labels.extend(row[..2 * w as usize].chunks(2).map(|b| u16::from_be_bytes([b[0], b[1]])));
            }
            (LabelEncoding::Gray16, labels)
        }
        (png::ColorType::Grayscale, png::BitDepth::Eight) => (LabelEncoding::Gray8, unpack(data, line, w, h, 8)),
        (ct, depth) => {
            return Err(LabelIoError::NotLabelImage(format!("{ct:?} at {depth:?}")));
        }
    };
    let lm = LabelMap::from_labels(w, h, labels)
        .map_err(|e| LabelIoError::NotLabelImage(e.to_string()))?;
    Ok((lm, encoding))
}

fn unpack(data: &[u8], line: usize, w: u32, h: u32, depth: u8) -> Vec<u16> {
    let per_byte = 8 / depth as usize;
    let mask = ((1u16 << depth) - 1) as u8;
    let mut out = Vec::with_capacity(w as usize * h as usize);
    for row in data.chunks(line).take(h as usize) {
        for x in 0..w as usize {
            let byte = row[x / per_byte];
            let shift = 8 - depth as usize * (x % per_byte + 1);
            out.push(((byte >> shift) & mask) as u16);
        }
    }
    out
}

pub fn decode_png(bytes: &[u8]) -> Result<(LabelMap, LabelEncoding), LabelIoError> {
    read_png(Cursor::new(bytes))
}

pub fn load_png(path: impl AsRef<Path>) -> Result<(LabelMap, LabelEncoding), LabelIoError> {
    read_png(File::open(path)?)
}
