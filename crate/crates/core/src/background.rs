//! Per-pixel Gaussian-mixture background model and mask cleanup.
//!
//! The mixture follows the usual online scheme: components are ranked by
//! weight / standard deviation, the top-ranked components whose cumulative
//! weight first exceeds the background ratio form the background, and a pixel
//! is foreground unless it matches one of them. While the model is young the
//! learning rate is raised to `1 / (t + 1)` so the mixture approximates
//! sample statistics of the frames seen so far.

use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::frame::Frame;

/// Upper bound on mixture components per pixel.
pub const MAX_COMPONENTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmParams {
    pub components: usize,
    pub learning_rate: f64,
    /// Match radius in standard deviations.
    pub match_sigma: f64,
    pub background_ratio: f64,
    pub initial_variance: f64,
    pub variance_floor: f64,
    /// Frames during which the learning rate is boosted to `1 / (t + 1)`.
    pub bootstrap_frames: usize,
}

impl GmmParams {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        Self {
            components: cfg.gmm_components,
            learning_rate: cfg.gmm_learning_rate,
            match_sigma: cfg.gmm_match_sigma,
            background_ratio: cfg.gmm_background_ratio,
            initial_variance: cfg.gmm_initial_variance,
            variance_floor: cfg.gmm_variance_floor,
            bootstrap_frames: cfg.warmup_frames,
        }
    }
}

impl Default for GmmParams {
    fn default() -> Self {
        Self::from_config(&PipelineConfig::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub mean: f64,
    pub variance: f64,
    pub weight: f64,
}

/// Boolean foreground mask; `true` marks foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl ForegroundMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Mixture model for every pixel of a fixed-size stream.
#[derive(Debug, Clone)]
pub struct GmmPixelModel {
    width: usize,
    height: usize,
    params: GmmParams,
    /// `components` entries per pixel, row-major.
    mixture: Vec<Component>,
    frames_seen: usize,
}

impl GmmPixelModel {
    pub fn new(width: usize, height: usize, params: GmmParams) -> Self {
        let empty = Component {
            mean: 0.0,
            variance: params.initial_variance,
            weight: 0.0,
        };
        Self {
            width,
            height,
            params,
            mixture: vec![empty; width * height * params.components],
            frames_seen: 0,
        }
    }

    pub fn params(&self) -> &GmmParams {
        &self.params
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    /// Components of pixel `(x, y)`.
    pub fn pixel(&self, x: usize, y: usize) -> &[Component] {
        let g = self.params.components;
        let i = (y * self.width + x) * g;
        &self.mixture[i..i + g]
    }

    /// Classifies `frame` against the current model, then folds it into the
    /// model. The very first frame initializes the mixture and is reported as
    /// entirely background.
    pub fn update_and_classify(&mut self, frame: &Frame) -> Result<ForegroundMask> {
        if frame.dims() != (self.width, self.height) {
            return Err(Error::DimensionMismatch {
                file: format!("frame {}", frame.index()),
                got_w: frame.width(),
                got_h: frame.height(),
                want_w: self.width,
                want_h: self.height,
            });
        }
        let g = self.params.components;
        let mut bits = vec![false; self.width * self.height];

        if self.frames_seen == 0 {
            let init = self.params.initial_variance;
            self.mixture
                .par_chunks_mut(g)
                .zip(frame.data().par_iter())
                .for_each(|(comps, &px)| {
                    for (k, c) in comps.iter_mut().enumerate() {
                        *c = Component {
                            mean: if k == 0 { f64::from(px) } else { 0.0 },
                            variance: init,
                            weight: if k == 0 { 1.0 } else { 0.0 },
                        };
                    }
                });
        } else {
            let t = self.frames_seen;
            let p = self.params;
            let lr = if t < p.bootstrap_frames {
                p.learning_rate.max(1.0 / (t as f64 + 1.0))
            } else {
                p.learning_rate
            };
            self.mixture
                .par_chunks_mut(g)
                .zip(frame.data().par_iter())
                .zip(bits.par_iter_mut())
                .for_each(|((comps, &px), fg)| {
                    *fg = update_pixel(comps, f64::from(px), lr, &p);
                });
        }
        self.frames_seen += 1;
        Ok(ForegroundMask {
            width: self.width,
            height: self.height,
            bits,
        })
    }
}

/// Updates one pixel's mixture with `x` and returns whether `x` was
/// foreground under the pre-update model.
fn update_pixel(comps: &mut [Component], x: f64, lr: f64, p: &GmmParams) -> bool {
    let g = comps.len();
    let mut order: [usize; MAX_COMPONENTS] = [0; MAX_COMPONENTS];
    let g_used = g.min(16);
    for (k, o) in order.iter_mut().enumerate().take(g_used) {
        *o = k;
    }
    let rank = |c: &Component| c.weight / c.variance.sqrt();
    order[..g_used].sort_by(|&a, &b| {
        rank(&comps[b])
            .partial_cmp(&rank(&comps[a]))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut background_count = 0;
    let mut cum = 0.0;
    for &k in &order[..g_used] {
        if comps[k].weight <= 0.0 {
            break;
        }
        background_count += 1;
        cum += comps[k].weight;
        if cum > p.background_ratio {
            break;
        }
    }

    let matched = order[..g_used].iter().position(|&k| {
        let c = &comps[k];
        c.weight > 0.0 && (x - c.mean).abs() <= p.match_sigma * c.variance.sqrt()
    });
    let foreground = !matches!(matched, Some(pos) if pos < background_count);

    match matched {
        Some(pos) => {
            let m = order[pos];
            for (k, c) in comps.iter_mut().enumerate() {
                let hit = if k == m { 1.0 } else { 0.0 };
                c.weight = (1.0 - lr) * c.weight + lr * hit;
            }
            let c = &mut comps[m];
            let d = x - c.mean;
            c.mean += lr * d;
            c.variance = (c.variance + lr * (d * d - c.variance)).max(p.variance_floor);
        }
        None => {
            // Replace the least probable component.
            let victim = order[g_used - 1];
            for c in comps.iter_mut() {
                c.weight *= 1.0 - lr;
            }
            comps[victim] = Component {
                mean: x,
                variance: p.initial_variance,
                weight: lr,
            };
        }
    }
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    for c in comps.iter_mut() {
        c.weight /= total;
    }
    foreground
}

/// 3×3 erosion (`erode == true`) or dilation. Out-of-frame neighbors are
/// ignored.
fn morph3(mask: &ForegroundMask, erode: bool) -> ForegroundMask {
    let (w, h) = (mask.width, mask.height);
    let mut out = ForegroundMask::empty(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = erode;
            'n: for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let v = mask.get(nx, ny);
                    if erode && !v {
                        acc = false;
                        break 'n;
                    }
                    if !erode && v {
                        acc = true;
                        break 'n;
                    }
                }
            }
            out.set(x, y, acc);
        }
    }
    out
}

pub fn erode3(mask: &ForegroundMask) -> ForegroundMask {
    morph3(mask, true)
}

pub fn dilate3(mask: &ForegroundMask) -> ForegroundMask {
    morph3(mask, false)
}

/// Morphological opening followed by closing with a 3×3 square.
pub fn cleanup(mask: &ForegroundMask) -> ForegroundMask {
    let opened = dilate3(&erode3(mask));
    erode3(&dilate3(&opened))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> GmmParams {
        GmmParams::default()
    }

    fn square_frame(w: usize, h: usize, bg: u8, sq: Option<(usize, usize, usize, u8)>, idx: usize) -> Frame {
        let mut data = vec![bg; w * h];
        if let Some((x0, y0, s, v)) = sq {
            for y in y0..y0 + s {
                for x in x0..x0 + s {
                    data[y * w + x] = v;
                }
            }
        }
        Frame::new(w, h, data, idx).unwrap()
    }

    #[test]
    fn static_scene_is_background_after_warmup() {
        let mut m = GmmPixelModel::new(32, 32, params());
        let mut last = None;
        for t in 0..35 {
            last = Some(m.update_and_classify(&square_frame(32, 32, 90, None, t)).unwrap());
        }
        assert_eq!(last.unwrap().count(), 0);
    }

    #[test]
    fn appearing_square_is_foreground() {
        let mut m = GmmPixelModel::new(40, 40, params());
        for t in 0..30 {
            m.update_and_classify(&square_frame(40, 40, 60, None, t)).unwrap();
        }
        let mask = m
            .update_and_classify(&square_frame(40, 40, 60, Some((12, 20, 8, 220)), 30))
            .unwrap();
        for y in 0..40 {
            for x in 0..40 {
                let inside = (12..20).contains(&x) && (20..28).contains(&y);
                assert_eq!(mask.get(x, y), inside, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn first_frame_is_deterministic() {
        let f = square_frame(20, 20, 10, Some((2, 2, 5, 200)), 0);
        let a = GmmPixelModel::new(20, 20, params()).update_and_classify(&f).unwrap();
        let b = GmmPixelModel::new(20, 20, params()).update_and_classify(&f).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.count(), 0);
    }

    #[test]
    fn weights_stay_normalized_and_variances_floored() {
        let mut m = GmmPixelModel::new(16, 16, params());
        for t in 0..50 {
            let v = [30u8, 200, 90, 30, 30][t % 5];
            let sq = (t % 3 == 0).then_some((3, 3, 6, v));
            m.update_and_classify(&square_frame(16, 16, 30, sq, t)).unwrap();
            for y in 0..16 {
                for x in 0..16 {
                    let comps = m.pixel(x, y);
                    let s: f64 = comps.iter().map(|c| c.weight).sum();
                    assert!((s - 1.0).abs() < 1e-9);
                    assert!(comps.iter().all(|c| c.variance >= m.params().variance_floor));
                }
            }
        }
    }

    #[test]
    fn frozen_model_classifies_repeatably() {
        let p = GmmParams {
            learning_rate: 1e-15,
            bootstrap_frames: 0,
            ..params()
        };
        let mut m = GmmPixelModel::new(24, 24, p);
        m.update_and_classify(&square_frame(24, 24, 50, None, 0)).unwrap();
        let probe = square_frame(24, 24, 50, Some((4, 4, 6, 180)), 1);
        let first = m.update_and_classify(&probe).unwrap();
        for _ in 0..5 {
            assert_eq!(m.update_and_classify(&probe).unwrap(), first);
        }
        assert_eq!(first.count(), 36);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut m = GmmPixelModel::new(20, 20, params());
        assert!(m.update_and_classify(&square_frame(24, 20, 0, None, 0)).is_err());
    }

    fn block_mask(w: usize, h: usize, x0: usize, y0: usize, s: usize) -> ForegroundMask {
        let mut m = ForegroundMask::empty(w, h);
        for y in y0..y0 + s {
            for x in x0..x0 + s {
                m.set(x, y, true);
            }
        }
        m
    }

    #[test]
    fn cleanup_removes_isolated_pixel() {
        let mut m = ForegroundMask::empty(20, 20);
        m.set(10, 10, true);
        assert_eq!(cleanup(&m).count(), 0);
    }

    #[test]
    fn cleanup_preserves_solid_block() {
        let m = block_mask(30, 30, 8, 9, 10);
        assert_eq!(cleanup(&m), m);
    }

    #[test]
    fn cleanup_fills_single_hole() {
        let full = block_mask(30, 30, 8, 9, 10);
        let mut holed = full.clone();
        holed.set(13, 14, false);
        assert_eq!(cleanup(&holed), full);
    }
}
