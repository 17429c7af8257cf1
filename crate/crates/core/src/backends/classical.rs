//! Model-free baselines.
//!
//! [`ClassicalPropagator`] carries each object of the latest memory entry to
//! the current frame by exhaustive integer-displacement template search;
//! [`ClassicalSegmenter`] answers prompts with color flood fills. Both are
//! deterministic and exact on flat-colored synthetic scenes, which is what
//! they are for; they make no attempt at robustness on natural video.

use std::collections::{BTreeMap, HashMap, VecDeque};

use image::{Rgb, RgbImage};

use super::{
    check_prompts, BackendError, Frame, Polarity, PropagationMemory, Propagator, Segmenter, VisualPrompt,
};
use crate::mask::{rasterize_by_area, BoundingBox, LabelMap, Mask};

/// Summed absolute channel difference below which two colors match.
const COLOR_TOLERANCE: i32 = 24;

fn color_match(a: &Rgb<u8>, b: &Rgb<u8>) -> bool {
    a.0.iter()
        .zip(&b.0)
        .map(|(x, y)| (*x as i32 - *y as i32).abs())
        .sum::<i32>()
        <= COLOR_TOLERANCE
}

#[derive(Debug, Clone)]
pub struct ClassicalPropagator {
    pub search_radius: i32,
}

impl Default for ClassicalPropagator {
    fn default() -> Self {
        Self { search_radius: 16 }
    }
}

struct Track {
    id: u16,
    dx: i32,
    dy: i32,
    mask: Mask,
}

impl ClassicalPropagator {
    pub fn new(search_radius: i32) -> Self {
        Self { search_radius }
    }

    /// Integer displacement of `mask` from `prev` to `cur` with the best
    /// template score, or `None` when no displacement scores above zero.
    fn best_displacement(&self, prev: &RgbImage, cur: &RgbImage, prev_labels: &LabelMap, mask: &Mask) -> Option<(i32, i32)> {
        let (w, h) = (prev.width() as i32, prev.height() as i32);
        // template: the object plus a one-pixel ring of background around it
        let mut template: Vec<(i32, i32, i32)> = Vec::new();
        let changed = |x: i32, y: i32| !color_match(prev.get_pixel(x as u32, y as u32), cur.get_pixel(x as u32, y as u32));
        let mut any_change = false;
        for (x, y) in mask.pixels() {
            let (x, y) = (x as i32, y as i32);
            let c = changed(x, y);
            any_change |= c;
            template.push((x, y, if c { 2 } else { 1 }));
            for (nx, ny) in [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)] {
                if nx >= 0 && ny >= 0 && nx < w && ny < h && prev_labels.get(nx as u32, ny as u32) == 0 {
                    let c = changed(nx, ny);
                    any_change |= c;
                    template.push((nx, ny, if c { 2 } else { 1 }));
                }
            }
        }
        template.sort_unstable();
        template.dedup();
        if !any_change {
            // nothing under the template moved; check the surroundings too
            let bb = mask.bounding_box().ok()?;
            let r = self.search_radius;
            let (x0, y0) = ((bb.x_min as i32 - r).max(0), (bb.y_min as i32 - r).max(0));
            let (x1, y1) = ((bb.x_max as i32 + r).min(w - 1), (bb.y_max as i32 + r).min(h - 1));
            let moved = (y0..=y1).any(|y| (x0..=x1).any(|x| changed(x, y)));
            if !moved {
                return Some((0, 0));
            }
        }
        let r = self.search_radius;
        let mut best: Option<(i64, i32, i32)> = None;
        for dy in -r..=r {
            for dx in -r..=r {
                let mut score = 0i64;
                for &(x, y, weight) in &template {
                    let (tx, ty) = (x + dx, y + dy);
                    if tx < 0 || ty < 0 || tx >= w || ty >= h {
                        continue;
                    }
                    let hit = color_match(prev.get_pixel(x as u32, y as u32), cur.get_pixel(tx as u32, ty as u32));
                    score += if hit { weight as i64 } else { -(weight as i64) };
                }
                let better = match best {
                    None => true,
                    Some((s, bx, by)) => {
                        score > s || (score == s && (dx * dx + dy * dy, dy, dx) < (bx * bx + by * by, by, bx))
                    }
                };
                if better {
                    best = Some((score, dx, dy));
                }
            }
        }
        best.filter(|(s, _, _)| *s > 0).map(|(_, dx, dy)| (dx, dy))
    }

    fn carry(&self, prev: &RgbImage, cur: &RgbImage, mask: &Mask, dx: i32, dy: i32) -> Mask {
        let (w, h) = (cur.width() as i32, cur.height() as i32);
        let mut out = Mask::new(cur.width(), cur.height()).expect("frame has positive size");
        let mut counts: HashMap<[u8; 3], u32> = HashMap::new();
        for (x, y) in mask.pixels() {
            *counts.entry(prev.get_pixel(x, y).0).or_insert(0) += 1;
            let (tx, ty) = (x as i32 + dx, y as i32 + dy);
            if tx >= 0 && ty >= 0 && tx < w && ty < h && color_match(prev.get_pixel(x, y), cur.get_pixel(tx as u32, ty as u32)) {
                out.set(tx as u32, ty as u32, true);
            }
        }
        // dominant object color, lowest value on ties
        let Some(dominant) = counts.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|(c, _)| Rgb(c)) else {
            return out;
        };
        // grow into newly revealed pixels of the object's color near the moved box
        let Ok(bb) = mask.bounding_box() else { return out };
        let grow = dx.abs().max(dy.abs());
        let region = (
            (bb.x_min as i32 + dx - grow).max(0),
            (bb.y_min as i32 + dy - grow).max(0),
            (bb.x_max as i32 + dx + grow).min(w - 1),
            (bb.y_max as i32 + dy + grow).min(h - 1),
        );
        let mut queue: VecDeque<(i32, i32)> = out.pixels().map(|(x, y)| (x as i32, y as i32)).collect();
        while let Some((x, y)) = queue.pop_front() {
            for (nx, ny) in [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)] {
                if nx < region.0 || ny < region.1 || nx > region.2 || ny > region.3 {
                    continue;
                }
                if !out.get(nx as u32, ny as u32) && color_match(cur.get_pixel(nx as u32, ny as u32), &dominant) {
                    out.set(nx as u32, ny as u32, true);
                    queue.push_back((nx, ny));
                }
            }
        }
        out
    }
}

impl Propagator for ClassicalPropagator {
    fn propagate(&self, memory: &PropagationMemory, frame: &Frame) -> Result<LabelMap, BackendError> {
        let latest = memory.latest().ok_or(BackendError::EmptyMemory)?;
        if latest.labels.dims() != frame.dims() {
            return Err(crate::mask::MaskError::DimensionMismatch {
                left_w: latest.labels.width(),
                left_h: latest.labels.height(),
                right_w: frame.width(),
                right_h: frame.height(),
            }
            .into());
        }
        let prev = &latest.frame.image;
        let cur = &frame.image;
        let mut tracks = Vec::new();
        for id in latest.labels.ids() {
            let mask = latest.labels.extract(id);
            let Some((dx, dy)) = self.best_displacement(prev, cur, &latest.labels, &mask) else { continue };
            let moved = self.carry(prev, cur, &mask, dx, dy);
            if !moved.is_empty() {
                tracks.push(Track { id, dx, dy, mask: moved });
            }
        }
        // conflicts go to the object that moved least
        tracks.sort_by_key(|t| (t.dx * t.dx + t.dy * t.dy, t.id));
        let mut out = LabelMap::new(frame.width(), frame.height())?;
        for t in &tracks {
            for (dst, &m) in out.labels_mut().iter_mut().zip(t.mask.bits()) {
                if m && *dst == 0 {
                    *dst = t.id;
                }
            }
        }
        Ok(out)
    }
}

/// Flood-fill segmenter: a click selects the 4-connected region whose color
/// matches the clicked pixel; a box seeds from its center and stays inside
/// the box; negative clicks subtract their region.
#[derive(Debug, Clone, Default)]
pub struct ClassicalSegmenter;

fn flood(img: &RgbImage, seed: (u32, u32), bounds: Option<BoundingBox>) -> Mask {
    let mut out = Mask::new(img.width(), img.height()).expect("frame has positive size");
    let color = *img.get_pixel(seed.0, seed.1);
    let inside = |x: u32, y: u32| bounds.is_none_or(|b| b.contains(x, y));
    let mut stack = vec![seed];
    out.set(seed.0, seed.1, true);
    while let Some((x, y)) = stack.pop() {
        let mut visit = |nx: u32, ny: u32| {
            if inside(nx, ny) && !out.get(nx, ny) && color_match(img.get_pixel(nx, ny), &color) {
                out.set(nx, ny, true);
                stack.push((nx, ny));
            }
        };
        if x > 0 {
            visit(x - 1, y);
        }
        if x + 1 < img.width() {
            visit(x + 1, y);
        }
        if y > 0 {
            visit(x, y - 1);
        }
        if y + 1 < img.height() {
            visit(x, y + 1);
        }
    }
    out
}

impl Segmenter for ClassicalSegmenter {
    fn segment(&self, frame: &Frame, prompts: &[VisualPrompt]) -> Result<Mask, BackendError> {
        check_prompts(frame, prompts)?;
        let img = &frame.image;
        let mut result = Mask::new(frame.width(), frame.height())?;
        let mut negative = Mask::new(frame.width(), frame.height())?;
        for p in prompts {
            match p {
                VisualPrompt::Point(pt) => {
                    let region = flood(img, (pt.x, pt.y), None);
                    match pt.polarity {
                        Polarity::Positive => result = result.union(&region)?,
                        Polarity::Negative => negative = negative.union(&region)?,
                    }
                }
                VisualPrompt::Box(b) => {
                    let c = ((b.bbox.x_min + b.bbox.x_max) / 2, (b.bbox.y_min + b.bbox.y_max) / 2);
                    result = result.union(&flood(img, c, Some(b.bbox)))?;
                }
            }
        }
        let bits = result.bits().iter().zip(negative.bits()).map(|(r, n)| *r && !*n).collect();
        Ok(Mask::from_bits(frame.width(), frame.height(), bits)?)
    }

    /// Every flat-colored region that is not the dominant (background) color.
    fn segment_everything(&self, frame: &Frame) -> Result<LabelMap, BackendError> {
        let img = &frame.image;
        let mut counts: BTreeMap<[u8; 3], u32> = BTreeMap::new();
        for p in img.pixels() {
            *counts.entry(p.0).or_insert(0) += 1;
        }
        let background = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(c, _)| Rgb(*c))
            .expect("frame has pixels");
        let mut seen = Mask::new(frame.width(), frame.height())?;
        let mut regions = Vec::new();
        for y in 0..frame.height() {
            for x in 0..frame.width() {
                if seen.get(x, y) || color_match(img.get_pixel(x, y), &background) {
                    continue;
                }
                let region = flood(img, (x, y), None);
                seen = seen.union(&region)?;
                regions.push(region);
            }
        }
        Ok(rasterize_by_area(frame.width(), frame.height(), &regions)?)
    }
}
