//! Deterministic synthetic scenes with exact ground truth.
//!
//! Actors are textured rectangles (a diagonal intensity ramp, so they carry
//! both internal gradient and enough grey levels to pass the entropy gate)
//! moving with a piecewise-constant velocity schedule. Actors are painted in
//! script order, so a later actor occludes an earlier one. Gaussian pixel
//! noise is drawn from a seeded ChaCha stream.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{parse_entries, parse_value, Entry};
use crate::error::{Error, Result};
use crate::frame::{BoundingBox, Frame, FrameSequence};

#[derive(Debug, Clone, PartialEq)]
pub struct ActorScript {
    pub width: usize,
    pub height: usize,
    /// Mean intensity.
    pub intensity: f64,
    /// Peak-to-peak amplitude of the diagonal ramp.
    pub texture: f64,
    pub start: (f64, f64),
    /// `(from_frame, (vx, vy))`: displacement applied between frame t − 1 and
    /// t for every t ≥ from_frame, until the next entry.
    pub velocity: Vec<(usize, (f64, f64))>,
}

impl ActorScript {
    pub fn walker(x: f64, y: f64, intensity: f64, velocity: Vec<(usize, (f64, f64))>) -> Self {
        Self {
            width: 12,
            height: 28,
            intensity,
            texture: 140.0,
            start: (x, y),
            velocity,
        }
    }

    fn velocity_at(&self, t: usize) -> (f64, f64) {
        self.velocity
            .iter()
            .filter(|(from, _)| *from <= t)
            .max_by_key(|(from, _)| *from)
            .map(|(_, v)| *v)
            .unwrap_or((0.0, 0.0))
    }

    /// Top-left corner at every frame.
    pub fn positions(&self, frames: usize) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(frames);
        let mut p = self.start;
        for t in 0..frames {
            if t > 0 {
                let v = self.velocity_at(t);
                p = (p.0 + v.0, p.1 + v.1);
            }
            out.push(p);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneScript {
    pub width: usize,
    pub height: usize,
    pub background: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub frames: usize,
    /// Inclusive frame range labeled anomalous.
    pub anomaly: Option<(usize, usize)>,
    pub actors: Vec<ActorScript>,
}

/// Rendered scene: frames, per-frame labels and exact per-actor boxes
/// (`tracks[actor][frame]`).
pub type Rendered = (FrameSequence, Vec<u8>, Vec<Vec<BoundingBox>>);

impl SceneScript {
    pub fn empty(width: usize, height: usize, frames: usize) -> Self {
        Self {
            width,
            height,
            background: 40.0,
            noise_sigma: 2.0,
            seed: 7,
            frames,
            anomaly: None,
            actors: Vec::new(),
        }
    }

    /// One walker on a small canvas moving at a constant velocity.
    pub fn single_walker(vx: f64, vy: f64) -> Self {
        let mut s = Self::empty(64, 48, 8);
        let x = if vx < 0.0 { 40.0 } else { 16.0 };
        s.actors.push(ActorScript::walker(x, 10.0, 170.0, vec![(0, (vx, vy))]));
        s
    }

    /// Five walkers in separate lanes at 1 px/frame, all switching to
    /// 4 px/frame at frame 60. Frames 60..=119 are anomalous.
    pub fn run_scene() -> Self {
        let mut s = Self::empty(336, 176, 120);
        s.anomaly = Some((60, 119));
        let lanes = [(4.0, 6.0), (14.0, 40.0), (24.0, 74.0), (9.0, 108.0), (19.0, 142.0)];
        for (i, &(x, y)) in lanes.iter().enumerate() {
            s.actors.push(ActorScript::walker(
                x,
                y,
                150.0 + 10.0 * i as f64,
                vec![(0, (1.0, 0.0)), (60, (4.0, 0.0))],
            ));
        }
        s
    }

    /// Five walkers in lanes at 1 px/frame; the middle one turns around at
    /// frame 60 and walks against the others. Frames 60..=119 are anomalous.
    pub fn opposing_mover() -> Self {
        let mut s = Self::empty(176, 176, 120);
        s.anomaly = Some((60, 119));
        let lanes = [(6.0, 6.0), (16.0, 40.0), (60.0, 74.0), (11.0, 108.0), (21.0, 142.0)];
        for (i, &(x, y)) in lanes.iter().enumerate() {
            let velocity = if i == 2 {
                vec![(0, (1.0, 0.0)), (60, (-1.0, 0.0))]
            } else {
                vec![(0, (1.0, 0.0))]
            };
            s.actors.push(ActorScript::walker(x, y, 150.0 + 10.0 * i as f64, velocity));
        }
        s
    }

    /// A walker at 2 px/frame passes behind a static occluder and is fully
    /// hidden for frames 33..=38. A second walker stays in view throughout.
    pub fn occlusion() -> Self {
        let mut s = Self::empty(200, 80, 80);
        s.actors.push(ActorScript::walker(4.0, 8.0, 170.0, vec![(0, (2.0, 0.0))]));
        s.actors.push(ActorScript::walker(20.0, 44.0, 160.0, vec![(0, (1.0, 0.0))]));
        s.actors.push(ActorScript {
            width: 22,
            height: 36,
            intensity: 110.0,
            texture: 60.0,
            start: (70.0, 4.0),
            velocity: vec![],
        });
        s
    }

    /// Frames the walker of [`SceneScript::occlusion`] spends fully hidden.
    pub const OCCLUSION_HIDDEN: (usize, usize) = (33, 38);

    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::Script(format!("canvas {}x{} below 16x16", self.width, self.height)));
        }
        if self.frames == 0 {
            return Err(Error::Script("frames must be positive".into()));
        }
        if let Some((a, b)) = self.anomaly {
            if a > b || b >= self.frames {
                return Err(Error::Script(format!(
                    "anomaly window {a}..={b} outside 0..{}",
                    self.frames
                )));
            }
        }
        Ok(())
    }

    fn labels(&self, frames: usize) -> Vec<u8> {
        (0..frames)
            .map(|t| match self.anomaly {
                Some((a, b)) if (a..=b).contains(&t) => 1,
                _ => 0,
            })
            .collect()
    }

    /// Renders `frames` frames.
    pub fn render(&self, frames: usize) -> Result<Rendered> {
        self.validate()?;
        let mut tracks = Vec::with_capacity(self.actors.len());
        for (i, a) in self.actors.iter().enumerate() {
            let mut track = Vec::with_capacity(frames);
            for (t, (x, y)) in a.positions(frames).into_iter().enumerate() {
                let (xr, yr) = (x.round(), y.round());
                if xr < 0.0
                    || yr < 0.0
                    || xr as usize + a.width > self.width
                    || yr as usize + a.height > self.height
                {
                    return Err(Error::Script(format!("actor {i} leaves the canvas at frame {t}")));
                }
                track.push(BoundingBox::new(xr as usize, yr as usize, a.width, a.height));
            }
            tracks.push(track);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise = Normal::new(0.0, self.noise_sigma.max(0.0))
            .map_err(|e| Error::Script(format!("noise: {e}")))?;
        let (w, h) = (self.width, self.height);
        let mut out = Vec::with_capacity(frames);
        for t in 0..frames {
            let mut canvas = vec![self.background; w * h];
            for (a, track) in self.actors.iter().zip(&tracks) {
                let b = track[t];
                let span = (a.width.saturating_sub(1) + 2 * a.height.saturating_sub(1)).max(1) as f64;
                for dy in 0..a.height {
                    for dx in 0..a.width {
                        let ramp = (dx + 2 * dy) as f64 / span - 0.5;
                        canvas[(b.y + dy) * w + b.x + dx] = a.intensity + a.texture * ramp;
                    }
                }
            }
            let data = canvas
                .into_iter()
                .map(|v| {
                    let n = if self.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    (v + n).round().clamp(0.0, 255.0) as u8
                })
                .collect();
            out.push(Frame::new(w, h, data, t)?);
        }
        Ok((FrameSequence::new(out)?, self.labels(frames), tracks))
    }

    pub fn render_default(&self) -> Result<Rendered> {
        self.render(self.frames)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parses the `key = value` script dialect. Scene keys: `width`,
    /// `height`, `background`, `noise_sigma`, `seed`, `frames`,
    /// `anomaly = START..END` (inclusive). Actor keys are indexed:
    /// `actor.N.size = WxH`, `actor.N.start = X,Y`, `actor.N.intensity`,
    /// `actor.N.texture`, `actor.N.velocity = FROM:VX,VY FROM:VX,VY ...`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Self::empty(64, 48, 60);
        s.actors.clear();
        let err = |e: &Entry, m: &str| Error::Config {
            line: e.line,
            message: format!("{m}: `{}`", e.value),
        };
        let pair = |e: &Entry, sep: char| -> Result<(f64, f64)> {
            let (a, b) = e.value.split_once(sep).ok_or_else(|| err(e, "expected a pair"))?;
            Ok((
                a.trim().parse().map_err(|_| err(e, "bad number"))?,
                b.trim().parse().map_err(|_| err(e, "bad number"))?,
            ))
        };
        for e in parse_entries(text)? {
            match e.key.as_str() {
                "width" => s.width = parse_value(&e)?,
                "height" => s.height = parse_value(&e)?,
                "background" => s.background = parse_value(&e)?,
                "noise_sigma" => s.noise_sigma = parse_value(&e)?,
                "seed" => s.seed = parse_value(&e)?,
                "frames" => s.frames = parse_value(&e)?,
                "anomaly" => {
                    let (a, b) = e.value.split_once("..").ok_or_else(|| err(&e, "expected START..END"))?;
                    s.anomaly = Some((
                        a.trim().parse().map_err(|_| err(&e, "bad frame"))?,
                        b.trim().parse().map_err(|_| err(&e, "bad frame"))?,
                    ));
                }
                key if key.starts_with("actor.") => {
                    let rest = &key["actor.".len()..];
                    let (idx, field) = rest.split_once('.').ok_or_else(|| Error::Config {
                        line: e.line,
                        message: format!("malformed actor key `{key}`"),
                    })?;
                    let idx: usize = idx.parse().map_err(|_| Error::Config {
                        line: e.line,
                        message: format!("bad actor index in `{key}`"),
                    })?;
                    while s.actors.len() <= idx {
                        s.actors.push(ActorScript::walker(0.0, 0.0, 170.0, vec![]));
                    }
                    let a = &mut s.actors[idx];
                    match field {
                        "size" => {
                            let (w, h) = pair(&e, 'x')?;
                            a.width = w as usize;
                            a.height = h as usize;
                        }
                        "start" => a.start = pair(&e, ',')?,
                        "intensity" => a.intensity = parse_value(&e)?,
                        "texture" => a.texture = parse_value(&e)?,
                        "velocity" => {
                            a.velocity.clear();
                            for item in e.value.split_whitespace() {
                                let (from, v) = item.split_once(':').ok_or_else(|| err(&e, "expected FROM:VX,VY"))?;
                                let (vx, vy) = v.split_once(',').ok_or_else(|| err(&e, "expected FROM:VX,VY"))?;
                                a.velocity.push((
                                    from.parse().map_err(|_| err(&e, "bad frame"))?,
                                    (
                                        vx.parse().map_err(|_| err(&e, "bad number"))?,
                                        vy.parse().map_err(|_| err(&e, "bad number"))?,
                                    ),
                                ));
                            }
                        }
                        other => {
                            return Err(Error::Config {
                                line: e.line,
                                message: format!("unknown actor field `{other}`"),
                            })
                        }
                    }
                }
                other => {
                    return Err(Error::Config {
                        line: e.line,
                        message: format!("unknown key `{other}`"),
                    })
                }
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn to_text(&self) -> String {
        let mut t = String::new();
        let _ = writeln!(t, "width = {}", self.width);
        let _ = writeln!(t, "height = {}", self.height);
        let _ = writeln!(t, "background = {}", self.background);
        let _ = writeln!(t, "noise_sigma = {}", self.noise_sigma);
        let _ = writeln!(t, "seed = {}", self.seed);
        let _ = writeln!(t, "frames = {}", self.frames);
        if let Some((a, b)) = self.anomaly {
            let _ = writeln!(t, "anomaly = {a}..{b}");
        }
        for (i, a) in self.actors.iter().enumerate() {
            let _ = writeln!(t, "actor.{i}.size = {}x{}", a.width, a.height);
            let _ = writeln!(t, "actor.{i}.start = {},{}", a.start.0, a.start.1);
            let _ = writeln!(t, "actor.{i}.intensity = {}", a.intensity);
            let _ = writeln!(t, "actor.{i}.texture = {}", a.texture);
            let v: Vec<String> = a
                .velocity
                .iter()
                .map(|(f, (vx, vy))| format!("{f}:{vx},{vy}"))
                .collect();
            let _ = writeln!(t, "actor.{i}.velocity = {}", v.join(" "));
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_actors_gives_noise_only_normal_frames() {
        let s = SceneScript::empty(32, 32, 10);
        let (seq, labels, tracks) = s.render(10).unwrap();
        assert_eq!(seq.len(), 10);
        assert!(labels.iter().all(|&l| l == 0));
        assert!(tracks.is_empty());
        let mean = seq.frames[3].data().iter().map(|&v| f64::from(v)).sum::<f64>() / 1024.0;
        assert!((mean - 40.0).abs() < 0.5);
    }

    #[test]
    fn constant_velocity_track_increments_exactly() {
        let (_, _, tracks) = SceneScript::single_walker(1.0, 0.0).render(8).unwrap();
        for t in 1..8 {
            assert_eq!(tracks[0][t].x, tracks[0][t - 1].x + 1);
            assert_eq!(tracks[0][t].y, tracks[0][t - 1].y);
        }
    }

    #[test]
    fn run_scene_labels_switch_at_sixty() {
        let s = SceneScript::run_scene();
        let (seq, labels, tracks) = s.render_default().unwrap();
        assert_eq!(seq.len(), 120);
        assert!(labels[..60].iter().all(|&l| l == 0));
        assert!(labels[60..].iter().all(|&l| l == 1));
        assert_eq!(tracks.len(), 5);
        assert_eq!(tracks[0][60].x - tracks[0][59].x, 4);
        assert_eq!(tracks[0][59].x - tracks[0][58].x, 1);
    }

    #[test]
    fn same_seed_same_frames() {
        let s = SceneScript::occlusion();
        let (a, _, _) = s.render(12).unwrap();
        let (b, _, _) = s.render(12).unwrap();
        assert_eq!(a.frames, b.frames);
        let mut other = s.clone();
        other.seed = 8;
        let (c, _, _) = other.render(12).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn leaving_canvas_is_an_error() {
        let mut s = SceneScript::single_walker(10.0, 0.0);
        s.frames = 20;
        assert!(matches!(s.render(20), Err(Error::Script(_))));
    }

    #[test]
    fn script_text_round_trip() {
        for s in [SceneScript::run_scene(), SceneScript::occlusion(), SceneScript::opposing_mover()] {
            assert_eq!(SceneScript::parse(&s.to_text()).unwrap(), s);
        }
        assert!(SceneScript::parse("width = 40\nactor.0.colour = 3\n").is_err());
        assert!(SceneScript::parse("frames = 10\nanomaly = 5..12\n").is_err());
    }

    #[test]
    fn occluder_hides_walker() {
        let s = SceneScript::occlusion();
        let (_, _, tracks) = s.render_default().unwrap();
        let occ = tracks[2][0];
        let (a, b) = SceneScript::OCCLUSION_HIDDEN;
        for (t, bx) in tracks[0].iter().enumerate() {
            let inside = bx.x >= occ.x && bx.right() <= occ.right() && bx.y >= occ.y && bx.bottom() <= occ.bottom();
            assert_eq!(inside, (a..=b).contains(&t), "frame {t}");
        }
    }
}
