//! Edge-fused segmentation of the foreground mask and proposal boxes.

use crate::background::{dilate3, ForegroundMask};
use crate::config::PipelineConfig;
use crate::frame::{BoundingBox, Frame};

/// Box heights relative to the segment extent.
pub const SCALES: [f64; 3] = [0.8, 1.0, 1.25];
/// Width / height ratios tried per scale.
pub const ASPECTS: [f64; 3] = [0.33, 0.41, 0.49];
pub const MIN_ASPECT: f64 = 0.33;
pub const MAX_ASPECT: f64 = 0.49;

/// One 8-connected component of the edge-split mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub pixels: Vec<(usize, usize)>,
    pub centroid: (f64, f64),
    pub bbox: BoundingBox,
}

impl Segment {
    fn from_pixels(pixels: Vec<(usize, usize)>) -> Self {
        let n = pixels.len() as f64;
        let (mut sx, mut sy) = (0.0, 0.0);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for &(x, y) in &pixels {
            sx += x as f64;
            sy += y as f64;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        Self {
            centroid: (sx / n, sy / n),
            bbox: BoundingBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1),
            pixels,
        }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub bbox: BoundingBox,
    /// Foreground fraction of the box.
    pub phi: f64,
    /// Intensity entropy of the box patch in bits, divided by 8.
    pub psi: f64,
}

/// Sobel gradient magnitude with replicated borders.
pub fn sobel_magnitude(frame: &Frame) -> Vec<f64> {
    let (w, h) = frame.dims();
    let px = |x: isize, y: isize| {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        f64::from(frame.get(xc, yc))
    };
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x - 1, y) + px(x - 1, y + 1));
            let gy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x, y - 1) + px(x + 1, y - 1));
            out[y as usize * w + x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

/// Otsu threshold of non-negative values over a 256-bin histogram on
/// `[0, max]`. Values strictly above the returned level form the upper class.
pub fn otsu_threshold(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return 0.0;
    }
    let bins = 256;
    let width = max / bins as f64;
    let mut hist = vec![0usize; bins];
    for &v in values {
        let b = ((v / width) as usize).min(bins - 1);
        hist[b] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_bin) = (-1.0, 0);
    for (i, &c) in hist.iter().enumerate().take(bins - 1) {
        w0 += c as f64;
        sum0 += i as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_bin = i;
        }
    }
    (best_bin + 1) as f64 * width
}

/// 8-connected components of a mask, in raster order of their first pixel.
pub fn connected_components(mask: &ForegroundMask) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut comps = Vec::new();
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !mask.bits[i] || seen[i] {
                continue;
            }
            seen[i] = true;
            stack.push((x, y));
            let mut comp = Vec::new();
            while let Some((cx, cy)) = stack.pop() {
                comp.push((cx, cy));
                for ny in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
                    for nx in cx.saturating_sub(1)..=(cx + 1).min(w - 1) {
                        let j = ny * w + nx;
                        if mask.bits[j] && !seen[j] {
                            seen[j] = true;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
            comp.sort_by_key(|&(x, y)| (y, x));
            comps.push(comp);
        }
    }
    comps
}

/// Splits the foreground along strong intensity edges: Sobel magnitude above
/// its Otsu level, dilated 3×3, is removed from the mask before labeling.
/// Components smaller than `min_size` pixels are dropped.
pub fn edge_fused_segment(mask: &ForegroundMask, frame: &Frame, min_size: usize) -> Vec<Segment> {
    assert_eq!((mask.width, mask.height), frame.dims(), "mask/frame size mismatch");
    if mask.count() == 0 {
        return Vec::new();
    }
    let mag = sobel_magnitude(frame);
    let level = otsu_threshold(&mag);
    let edges = ForegroundMask {
        width: mask.width,
        height: mask.height,
        bits: mag.iter().map(|&m| level > 0.0 && m > level).collect(),
    };
    let edges = dilate3(&edges);
    let residual = ForegroundMask {
        width: mask.width,
        height: mask.height,
        bits: mask.bits.iter().zip(&edges.bits).map(|(&m, &e)| m && !e).collect(),
    };
    connected_components(&residual)
        .into_iter()
        .filter(|c| c.len() >= min_size)
        .map(Segment::from_pixels)
        .collect()
}

/// Shannon entropy (bits) of the 256-bin intensity histogram of `bbox`,
/// divided by 8 so it lies in [0, 1].
pub fn normalized_entropy(frame: &Frame, bbox: &BoundingBox) -> f64 {
    let mut hist = [0usize; 256];
    for y in bbox.y..bbox.bottom() {
        for x in bbox.x..bbox.right() {
            hist[frame.get(x, y) as usize] += 1;
        }
    }
    entropy_bits(&hist) / 8.0
}

pub(crate) fn entropy_bits(hist: &[usize]) -> f64 {
    let n: usize = hist.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

pub fn foreground_fraction(mask: &ForegroundMask, bbox: &BoundingBox) -> f64 {
    let mut fg = 0usize;
    for y in bbox.y..bbox.bottom() {
        for x in bbox.x..bbox.right() {
            fg += usize::from(mask.get(x, y));
        }
    }
    fg as f64 / bbox.area() as f64
}

/// Candidate boxes for one segment: every scale × aspect combination, centered
/// on the centroid and kept inside the frame. Boxes whose clipped aspect
/// leaves the pedestrian band are dropped.
pub fn candidate_boxes(seg: &Segment, width: usize, height: usize) -> Vec<BoundingBox> {
    let mut out = Vec::with_capacity(SCALES.len() * ASPECTS.len());
    for &scale in &SCALES {
        let h = (scale * seg.bbox.h as f64).round().max(4.0) as usize;
        for &aspect in &ASPECTS {
            let mut w = (aspect * h as f64).round() as usize;
            while (w as f64) < MIN_ASPECT * h as f64 {
                w += 1;
            }
            while w > 1 && w as f64 > MAX_ASPECT * h as f64 {
                w -= 1;
            }
            let Some(b) = BoundingBox::centered_clamped(seg.centroid.0, seg.centroid.1, w, h, width, height) else {
                continue;
            };
            let a = b.aspect();
            if (MIN_ASPECT..=MAX_ASPECT).contains(&a) && !out.contains(&b) {
                out.push(b);
            }
        }
    }
    out
}

/// Scores every candidate box and keeps those passing both gates.
pub fn generate_proposals(
    segments: &[Segment],
    frame: &Frame,
    mask: &ForegroundMask,
    cfg: &PipelineConfig,
) -> Vec<Proposal> {
    let mut out = Vec::new();
    for seg in segments {
        for bbox in candidate_boxes(seg, frame.width(), frame.height()) {
            let phi = foreground_fraction(mask, &bbox);
            if phi <= cfg.phi_thres {
                continue;
            }
            let psi = normalized_entropy(frame, &bbox);
            if psi > cfg.psi_thres {
                out.push(Proposal { bbox, phi, psi });
            }
        }
    }
    out
}
