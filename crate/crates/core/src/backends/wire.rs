//! Message bodies of the remote model-server protocol (JSON over HTTP).
//!
//! | endpoint                  | request                    | response                 |
//! |---------------------------|----------------------------|--------------------------|
//! | `POST /v1/segment`        | [`SegmentRequest`]         | [`RleMask`]              |
//! | `POST /v1/segment_everything` | [`FrameRequest`]       | `[RleMask]`              |
//! | `POST /v1/detect`         | [`DetectRequest`]          | `[Detection]`            |
//! | `POST /v1/propagate/init` | [`PropagateInitRequest`]   | [`PropagateInitResponse`]|
//! | `POST /v1/propagate`      | [`PropagateRequest`]       | `[ObjectMask]`           |
//!
//! Errors come back as [`ErrorBody`] with a 4xx/5xx status. Frames travel as
//! base64-encoded PNG; masks always as flat RLE arrays.

use std::io::Cursor;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use super::{BackendError, Detection, VisualPrompt};
use crate::mask::{LabelMap, ObjectId, RleMask};

pub const SEGMENT: &str = "/v1/segment";
pub const SEGMENT_EVERYTHING: &str = "/v1/segment_everything";
pub const DETECT: &str = "/v1/detect";
pub const PROPAGATE: &str = "/v1/propagate";
pub const PROPAGATE_INIT: &str = "/v1/propagate/init";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub frame: String,
    pub prompts: Vec<VisualPrompt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRequest {
    pub frame: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRequest {
    pub frame: String,
    pub phrase: String,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectMask {
    pub object_id: ObjectId,
    pub mask: RleMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagateInitRequest {
    pub frame: String,
    pub objects: Vec<ObjectMask>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagateInitResponse {
    pub session_token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagateRequest {
    pub session_token: String,
    pub frame: String,
}

pub type SegmentEverythingResponse = Vec<RleMask>;
pub type DetectResponse = Vec<Detection>;
pub type PropagateResponse = Vec<ObjectMask>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

/// Canonical text form used for golden files: two-space pretty JSON plus a
/// trailing newline.
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("wire types always serialize");
    s.push('\n');
    s
}

pub fn encode_frame(image: &RgbImage) -> String {
    let mut buf = Cursor::new(Vec::new());
    image
        .write_to(&mut buf, ImageFormat::Png)
        .expect("in-memory png encoding does not fail");
    STANDARD.encode(buf.into_inner())
}

pub fn decode_frame(data: &str) -> Result<RgbImage, BackendError> {
    let bytes = STANDARD
        .decode(data.trim())
        .map_err(|e| BackendError::Protocol(format!("frame is not base64: {e}")))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| BackendError::Protocol(format!("frame is not a png: {e}")))?;
    Ok(img.to_rgb8())
}

/// Splits a label map into per-object RLE masks, ascending by ID.
pub fn objects_of(lm: &LabelMap) -> Vec<ObjectMask> {
    lm.ids()
        .into_iter()
        .map(|id| ObjectMask {
            object_id: ObjectId::new(id).expect("ids() never yields background"),
            mask: lm.extract(id).rle_encode(),
        })
        .collect()
}

/// Paints object masks onto a fresh map in list order.
pub fn label_map_from_objects(width: u32, height: u32, objects: &[ObjectMask]) -> Result<LabelMap, BackendError> {
    let mut lm = LabelMap::new(width, height)?;
    for o in objects {
        let mask = o.mask.decode()?;
        if mask.dims() != (width, height) {
            return Err(BackendError::Protocol(format!(
                "object {} mask is {}x{}, frame is {width}x{height}",
                o.object_id,
                mask.width(),
                mask.height()
            )));
        }
        lm.paint(&mask, o.object_id.get())?;
    }
    Ok(lm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::PointPrompt;
    use crate::mask::Mask;

    #[test]
    fn frame_round_trip() {
        let img = RgbImage::from_fn(5, 4, |x, y| image::Rgb([x as u8 * 10, y as u8 * 20, 7]));
        let back = decode_frame(&encode_frame(&img)).unwrap();
        assert_eq!(back, img);
        assert!(matches!(decode_frame("!!"), Err(BackendError::Protocol(_))));
    }

    #[test]
    fn objects_round_trip() {
        let lm = LabelMap::from_fn(4, 3, |x, y| if x < 2 { 3 } else if y == 0 { 5 } else { 0 }).unwrap();
        let objs = objects_of(&lm);
        assert_eq!(objs.len(), 2);
        assert_eq!(label_map_from_objects(4, 3, &objs).unwrap(), lm);
        assert!(label_map_from_objects(5, 3, &objs).is_err());
    }

    #[test]
    fn request_shape() {
        let req = SegmentRequest {
            frame: "AAAA".into(),
            prompts: vec![VisualPrompt::Point(PointPrompt::positive(1, 2))],
        };
        let v = serde_json::to_value(&req).unwrap();
        assert_eq!(v["prompts"][0]["type"], "point");
        let obj = ObjectMask {
            object_id: ObjectId::new(2).unwrap(),
            mask: Mask::filled(1, 2).unwrap().rle_encode(),
        };
        assert_eq!(serde_json::to_string(&obj).unwrap(), r#"{"object_id":2,"mask":[1,2,2,0,2]}"#);
    }
}
