//! Golden request/response bodies of the remote model protocol. Each file
//! must parse into its message type and serialize back to the same bytes.
//! `SAMTRACK_BLESS=1` rewrites them.

use std::path::PathBuf;

use image::{Rgb, RgbImage};
use samtrack_core::backends::wire::{self, *};
use samtrack_core::backends::{BoxPrompt, Detection, PointPrompt, VisualPrompt};
use samtrack_core::mask::{BoundingBox, LabelMap, Mask, ObjectId};
use serde::de::DeserializeOwned;
use serde::Serialize;

fn wire_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/wire")
}

fn frame() -> String {
    let img = RgbImage::from_fn(8, 6, |x, y| if (2..5).contains(&x) && y < 4 { Rgb([200, 40, 40]) } else { Rgb([16, 16, 16]) });
    wire::encode_frame(&img)
}

fn labels() -> LabelMap {
    LabelMap::from_fn(8, 6, |x, y| if (2..5).contains(&x) && y < 4 { 1 } else if x == 7 { 2 } else { 0 }).unwrap()
}

fn check<T: Serialize + DeserializeOwned + PartialEq + std::fmt::Debug>(name: &str, value: T) {
    let path = wire_dir().join(name);
    let text = wire::to_canonical_json(&value);
    if std::env::var_os("SAMTRACK_BLESS").is_some() {
        std::fs::create_dir_all(wire_dir()).unwrap();
        std::fs::write(&path, &text).unwrap();
    }
    let golden = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let parsed: T = serde_json::from_str(&golden).unwrap();
    assert_eq!(parsed, value, "{name}");
    assert_eq!(wire::to_canonical_json(&parsed), golden, "{name} does not round-trip byte for byte");
}

#[test]
fn golden_wire_bodies() {
    let lm = labels();
    check(
        "segment_request.json",
        SegmentRequest {
            frame: frame(),
            prompts: vec![
                VisualPrompt::Point(PointPrompt::positive(3, 1)),
                VisualPrompt::Point(PointPrompt::negative(7, 5)),
                VisualPrompt::Box(BoxPrompt {
                    bbox: BoundingBox::new(2, 0, 4, 3),
                }),
            ],
        },
    );
    check("segment_response.json", lm.extract(1).rle_encode());
    check("segment_everything_request.json", FrameRequest { frame: frame() });
    check(
        "segment_everything_response.json",
        vec![lm.extract(1).rle_encode(), lm.extract(2).rle_encode()],
    );
    check(
        "detect_request.json",
        DetectRequest {
            frame: frame(),
            phrase: "red block".into(),
            threshold: 0.35,
        },
    );
    check(
        "detect_response.json",
        vec![Detection {
            bbox: BoundingBox::new(2, 0, 4, 3),
            score: 1.0,
            phrase: "red block".into(),
        }],
    );
    check(
        "propagate_init_request.json",
        PropagateInitRequest {
            frame: frame(),
            objects: wire::objects_of(&lm),
        },
    );
    check(
        "propagate_init_response.json",
        PropagateInitResponse {
            session_token: "3f1c9a0e5b7d4e21a8c6f0b2d9e4a713".into(),
        },
    );
    check(
        "propagate_request.json",
        PropagateRequest {
            session_token: "3f1c9a0e5b7d4e21a8c6f0b2d9e4a713".into(),
            frame: frame(),
        },
    );
    check(
        "propagate_response.json",
        vec![ObjectMask {
            object_id: ObjectId::new(1).unwrap(),
            mask: Mask::from_fn(8, 6, |x, y| (3..6).contains(&x) && y < 4).unwrap().rle_encode(),
        }],
    );
    check(
        "error.json",
        ErrorBody {
            code: "Injected".into(),
            message: "propagate failure injected at frame 4".into(),
        },
    );
}

#[test]
fn golden_masks_decode_to_their_sources() {
    let text = std::fs::read_to_string(wire_dir().join("propagate_init_request.json")).unwrap();
    let req: PropagateInitRequest = serde_json::from_str(&text).unwrap();
    assert_eq!(wire::label_map_from_objects(8, 6, &req.objects).unwrap(), labels());
    assert_eq!(wire::decode_frame(&req.frame).unwrap().dimensions(), (8, 6));
}
