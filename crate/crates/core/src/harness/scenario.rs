use std::path::Path;
use std::sync::Arc;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::backends::Frame;
use crate::mask::LabelMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Rect { width: u32, height: u32 },
    Disc { radius: u32 },
}

impl Shape {
    fn covers(&self, cx: i64, cy: i64, x: i64, y: i64) -> bool {
        match *self {
            Shape::Rect { width, height } => {
                let x0 = cx - width as i64 / 2;
                let y0 = cy - height as i64 / 2;
                x >= x0 && x < x0 + width as i64 && y >= y0 && y < y0 + height as i64
            }
            Shape::Disc { radius } => {
                let (dx, dy) = (x - cx, y - cy);
                dx * dx + dy * dy <= radius as i64 * radius as i64
            }
        }
    }

    /// Half-extent used to bound the rasterization window.
    fn reach(&self) -> i64 {
        match *self {
            Shape::Rect { width, height } => width.max(height) as i64,
            Shape::Disc { radius } => radius as i64 + 1,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Shape::Rect { .. } => "rect",
            Shape::Disc { .. } => "disc",
        }
    }
}

/// Where an actor's center sits over time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Trajectory {
    /// `start + velocity * (frame - entry_frame)`.
    Linear { start: [i64; 2], velocity: [i64; 2] },
    /// One center per frame from `entry_frame` on; the last one repeats.
    Waypoints { positions: Vec<[i64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub shape: Shape,
    pub trajectory: Trajectory,
    #[serde(default)]
    pub entry_frame: usize,
    /// Last frame the actor is drawn in; defaults to the final frame.
    #[serde(default)]
    pub exit_frame: Option<usize>,
    /// Text tag matched by the oracle detector; defaults to the shape name.
    #[serde(default)]
    pub phrase: Option<String>,
    #[serde(default)]
    pub color: Option<[u8; 3]>,
}

impl Actor {
    pub fn phrase(&self) -> &str {
        self.phrase.as_deref().unwrap_or(self.shape.name())
    }

    pub fn center_at(&self, frame: usize) -> Option<[i64; 2]> {
        if frame < self.entry_frame || self.exit_frame.is_some_and(|e| frame > e) {
            return None;
        }
        let k = (frame - self.entry_frame) as i64;
        match &self.trajectory {
            Trajectory::Linear { start, velocity } => Some([start[0] + velocity[0] * k, start[1] + velocity[1] * k]),
            Trajectory::Waypoints { positions } => positions.get(k as usize).or(positions.last()).copied(),
        }
    }
}

/// Synthetic ground-truth video description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub background: Option<[u8; 3]>,
    #[serde(default)]
    pub actors: Vec<Actor>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let s: Scenario = toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let mut s = Self::from_toml(&text)?;
        if s.name.is_empty() {
            s.name = path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        }
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario is always representable")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::InvalidScenario(msg));
        if self.frames == 0 || self.width == 0 || self.height == 0 {
            return bad("frames, width and height must be positive".into());
        }
        if self.actors.len() > u16::MAX as usize {
            return bad("too many actors".into());
        }
        for (i, a) in self.actors.iter().enumerate() {
            let exit = a.exit_frame.unwrap_or(self.frames - 1);
            if a.entry_frame > exit || exit >= self.frames {
                return bad(format!(
                    "actor {i}: need entry_frame <= exit_frame < {} (got {}..={exit})",
                    self.frames, a.entry_frame
                ));
            }
            match a.shape {
                Shape::Rect { width: 0, .. } | Shape::Rect { height: 0, .. } => {
                    return bad(format!("actor {i}: empty rectangle"))
                }
                _ => {}
            }
            if let Trajectory::Waypoints { positions } = &a.trajectory {
                if positions.is_empty() {
                    return bad(format!("actor {i}: no waypoints"));
                }
            }
        }
        Ok(())
    }

    /// Deterministic colors: explicit ones are kept, the rest are drawn from
    /// the seed so that every pair of colors (background included) differs
    /// by at least 90 in summed channel distance.
    pub fn colors(&self) -> (Rgb<u8>, Vec<Rgb<u8>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let background = self.background.unwrap_or([24, 24, 24]);
        let mut taken: Vec<[u8; 3]> = vec![background];
        taken.extend(self.actors.iter().filter_map(|a| a.color));
        let far = |c: &[u8; 3], taken: &[[u8; 3]]| {
            taken.iter().all(|t| {
                t.iter().zip(c).map(|(a, b)| (*a as i32 - *b as i32).abs()).sum::<i32>() >= 90
            })
        };
        let mut colors = Vec::with_capacity(self.actors.len());
        for a in &self.actors {
            let c = match a.color {
                Some(c) => c,
                None => {
                    let mut c = [0u8; 3];
                    for attempt in 0.. {
                        c = [rng.random(), rng.random(), rng.random()];
                        if far(&c, &taken) || attempt > 10_000 {
                            break;
                        }
                    }
                    taken.push(c);
                    c
                }
            };
            colors.push(Rgb(c));
        }
        (Rgb(background), colors)
    }

    pub fn render(&self) -> Result<RenderedScenario, HarnessError> {
        self.validate()?;
        let (background, colors) = self.colors();
        let (w, h) = (self.width, self.height);
        let mut frames = Vec::with_capacity(self.frames);
        let mut gt = Vec::with_capacity(self.frames);
        for f in 0..self.frames {
            let mut img = RgbImage::from_pixel(w, h, background);
            let mut labels = LabelMap::new(w, h).expect("validated dimensions");
            // list order is z-order: later actors paint over earlier ones
            for (i, actor) in self.actors.iter().enumerate() {
                let Some([cx, cy]) = actor.center_at(f) else { continue };
                let r = actor.shape.reach();
                let (x0, x1) = ((cx - r).max(0), (cx + r).min(w as i64 - 1));
                let (y0, y1) = ((cy - r).max(0), (cy + r).min(h as i64 - 1));
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        if actor.shape.covers(cx, cy, x, y) {
                            img.put_pixel(x as u32, y as u32, colors[i]);
                            labels.set(x as u32, y as u32, i as u16 + 1);
                        }
                    }
                }
            }
            frames.push(Frame::new(f, img));
            gt.push(labels);
        }
        Ok(RenderedScenario {
            scenario: self.clone(),
            frames,
            gt,
        })
    }

    /// Random scene of non-overlapping actors in horizontal lanes, each
    /// translating rigidly by at most `max_speed` pixels per frame. Used to
    /// exercise the classical propagator.
    pub fn random_translation(seed: u64, frames: usize, max_speed: i64) -> Scenario {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = 160u32;
        let lanes = rng.random_range(1..=3usize);
        let lane_h = 48u32;
        let height = lane_h * lanes as u32;
        let mut actors = Vec::new();
        for lane in 0..lanes {
            let cy = (lane as u32 * lane_h + lane_h / 2) as i64;
            let shape = if rng.random_bool(0.5) {
                Shape::Rect {
                    width: rng.random_range(6..=20),
                    height: rng.random_range(6..=20),
                }
            } else {
                Shape::Disc {
                    radius: rng.random_range(3..=9),
                }
            };
            let vx = rng.random_range(-max_speed..=max_speed);
            // lanes are 48 px and shapes at most 20 px, so a vertical drift of one
            // pixel per frame stays inside the lane for up to 12 frames
            let vy = if frames <= 12 { rng.random_range(-1..=1i64) } else { 0 };
            let start_x = rng.random_range(40..120i64);
            actors.push(Actor {
                shape,
                trajectory: Trajectory::Linear {
                    start: [start_x, cy],
                    velocity: [vx, vy],
                },
                entry_frame: 0,
                exit_frame: None,
                phrase: None,
                color: None,
            });
        }
        Scenario {
            name: format!("random-translation-{seed}"),
            frames,
            width,
            height,
            seed,
            background: None,
            actors,
        }
    }
}

/// Rendered frames plus per-frame ground truth (label = actor index + 1).
#[derive(Debug, Clone)]
pub struct RenderedScenario {
    pub scenario: Scenario,
    pub frames: Vec<Frame>,
    pub gt: Vec<LabelMap>,
}

impl RenderedScenario {
    pub fn actor_count(&self) -> usize {
        self.scenario.actors.len()
    }

    pub fn actor_phrase(&self, label: u16) -> Option<&str> {
        self.scenario.actors.get(label as usize - 1).map(|a| a.phrase())
    }

    /// First frame where the actor is visible, if any.
    pub fn first_visible(&self, label: u16) -> Option<usize> {
        self.gt.iter().position(|g| g.contains_label(label))
    }

    pub fn shared(self) -> Arc<Self> {
        Arc::new(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc_at(x: i64, y: i64, r: u32) -> Actor {
        Actor {
            shape: Shape::Disc { radius: r },
            trajectory: Trajectory::Linear {
                start: [x, y],
                velocity: [0, 0],
            },
            entry_frame: 0,
            exit_frame: None,
            phrase: None,
            color: None,
        }
    }

    fn scenario(actors: Vec<Actor>) -> Scenario {
        Scenario {
            name: "t".into(),
            frames: 3,
            width: 32,
            height: 24,
            seed: 1,
            background: None,
            actors,
        }
    }

    #[test]
    fn static_disc_is_identical_across_frames() {
        let r = scenario(vec![disc_at(10, 10, 4)]).render().unwrap();
        assert_eq!(r.gt.len(), 3);
        assert_eq!(r.gt[0], r.gt[1]);
        assert_eq!(r.gt[1], r.gt[2]);
        assert_eq!(r.gt[0].areas()[&1], 49);
    }

    #[test]
    fn late_entry_is_absent_before_entry() {
        let mut a = disc_at(10, 10, 3);
        a.entry_frame = 2;
        let r = scenario(vec![a]).render().unwrap();
        assert!(r.gt[0].is_background());
        assert!(r.gt[1].is_background());
        assert!(r.gt[2].contains_label(1));
        assert_eq!(r.first_visible(1), Some(2));
    }

    #[test]
    fn later_actor_occludes_earlier() {
        let r = scenario(vec![disc_at(10, 10, 4), disc_at(13, 10, 4)]).render().unwrap();
        assert_eq!(r.gt[0].get(12, 10), 2);
        assert_eq!(r.gt[0].get(7, 10), 1);
        // pixel covered by both
        assert!(Shape::Disc { radius: 4 }.covers(10, 10, 11, 10));
        assert_eq!(r.gt[0].get(11, 10), 2);
    }

    #[test]
    fn render_is_deterministic() {
        let s = Scenario::random_translation(42, 5, 8);
        let a = s.render().unwrap();
        let b = s.render().unwrap();
        assert_eq!(a.gt, b.gt);
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa.image.as_raw(), fb.image.as_raw());
        }
    }

    #[test]
    fn invalid_scenarios() {
        let mut a = disc_at(5, 5, 2);
        a.entry_frame = 2;
        a.exit_frame = Some(1);
        assert!(matches!(scenario(vec![a]).render(), Err(HarnessError::InvalidScenario(_))));
        let mut a = disc_at(5, 5, 2);
        a.exit_frame = Some(3);
        assert!(scenario(vec![a]).validate().is_err());
        let mut s = scenario(vec![]);
        s.frames = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn exit_and_clipping() {
        let mut a = disc_at(30, 10, 4);
        a.trajectory = Trajectory::Linear {
            start: [30, 10],
            velocity: [4, 0],
        };
        let r = scenario(vec![a]).render().unwrap();
        let areas: Vec<u64> = r.gt.iter().map(|g| g.areas().get(&1).copied().unwrap_or(0)).collect();
        assert!(areas[0] > 0 && areas[0] < 49);
        assert_eq!(areas[2], 0);
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            frames = 4
            width = 20
            height = 10
            [[actors]]
            shape = { kind = "rect", width = 4, height = 2 }
            trajectory = { start = [5, 5], velocity = [1, 0] }
            phrase = "car"
            [[actors]]
            shape = { kind = "disc", radius = 2 }
            trajectory = { positions = [[3, 3], [4, 4]] }
            entry_frame = 1
        "#;
        let s = Scenario::from_toml(text).unwrap();
        assert_eq!(s.actors[0].phrase(), "car");
        assert_eq!(s.actors[1].phrase(), "disc");
        assert_eq!(s.actors[1].center_at(3), Some([4, 4]));
        assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
    }

    #[test]
    fn colors_are_distinct() {
        let s = Scenario::random_translation(3, 2, 4);
        let (bg, colors) = s.colors();
        for (i, c) in colors.iter().enumerate() {
            assert_ne!(*c, bg);
            for d in &colors[i + 1..] {
                assert_ne!(c, d);
            }
        }
    }
}
