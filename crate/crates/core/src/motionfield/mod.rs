//! Dense flow, temporal saliency and saliency-modulated flow (MOF).

pub mod flow;

pub use flow::{compute_flow, FlowField, FlowParams};

use crate::error::{Error, Result};
use crate::frame::{BoundingBox, Frame};

/// Per-pixel temporal saliency in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub width: usize,
    pub height: usize,
    pub s: Vec<f64>,
}

/// Flow after saliency modulation, with the threshold that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulatedFlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub tau: f64,
}

impl ModulatedFlowField {
    #[inline]
    pub fn magnitude_at(&self, x: usize, y: usize) -> f64 {
        let i = y * self.width + x;
        self.u[i].hypot(self.v[i])
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(src: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return src.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let xx = (x as isize + j as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * src[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let yy = (y as isize + j as isize - r).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Temporal saliency from the most recent frames (oldest first).
///
/// With three frames the absolute central temporal difference is used, with
/// two the absolute forward difference. The result is Gaussian smoothed and
/// min–max normalized; a frame without temporal change maps to all zeros.
pub fn compute_saliency(window: &[&Frame], sigma: f64) -> Result<SaliencyMap> {
    if window.len() < 2 {
        return Err(Error::Parameter("saliency needs at least two frames".into()));
    }
    let last = window[window.len() - 1];
    let first = if window.len() >= 3 { window[window.len() - 3] } else { window[0] };
    if first.dims() != last.dims() {
        return Err(Error::DimensionMismatch {
            file: format!("frame {}", last.index()),
            got_w: last.width(),
            got_h: last.height(),
            want_w: first.width(),
            want_h: first.height(),
        });
    }
    let scale = if window.len() >= 3 { 0.5 } else { 1.0 };
    let (w, h) = last.dims();
    let deriv: Vec<f64> = last
        .data()
        .iter()
        .zip(first.data())
        .map(|(&a, &b)| scale * (f64::from(a) - f64::from(b)).abs())
        .collect();
    let smooth = gaussian_blur(&deriv, w, h, sigma);
    let (lo, hi) = smooth
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &v| (l.min(v), u.max(v)));
    let s = if hi - lo <= 1e-12 {
        vec![0.0; w * h]
    } else {
        smooth.iter().map(|v| (v - lo) / (hi - lo)).collect()
    };
    Ok(SaliencyMap { width: w, height: h, s })
}

pub const TAU_BINS: usize = 256;

/// Saliency threshold at CDF mass `alpha`: the largest upper bin edge τ′ of a
/// 256-bin histogram on [0, 1] with empirical P(s ≤ τ′) ≤ α, or 0 when even
/// the first bin holds more than α of the mass.
pub fn compute_tau(saliency: &SaliencyMap, alpha: f64) -> f64 {
    let mut hist = [0usize; TAU_BINS];
    for &v in &saliency.s {
        let b = ((v * TAU_BINS as f64) as usize).min(TAU_BINS - 1);
        hist[b] += 1;
    }
    let n = saliency.s.len() as f64;
    let mut cum = 0usize;
    let mut tau = 0.0;
    for (k, &c) in hist.iter().enumerate() {
        cum += c;
        if cum as f64 / n <= alpha {
            tau = (k + 1) as f64 / TAU_BINS as f64;
        } else {
            break;
        }
    }
    tau
}

/// Reward–penalty factor: `exp((s − τ) / 2τ)` up to τ, `exp(s / 2)` above.
/// With τ = 0 the lower branch only covers s = 0, where the factor is 1.
pub fn modulation_factor(s: f64, tau: f64) -> f64 {
    if s <= tau {
        if tau <= 0.0 {
            1.0
        } else {
            ((s - tau) / (2.0 * tau)).exp()
        }
    } else {
        (s / 2.0).exp()
    }
}

pub fn modulate(flow: &FlowField, saliency: &SaliencyMap, tau: f64) -> Result<ModulatedFlowField> {
    if (flow.width, flow.height) != (saliency.width, saliency.height) {
        return Err(Error::Geometry("flow and saliency sizes differ".into()));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Parameter(format!("tau = {tau} outside [0, 1]")));
    }
    let factors: Vec<f64> = saliency.s.iter().map(|&s| modulation_factor(s, tau)).collect();
    Ok(ModulatedFlowField {
        width: flow.width,
        height: flow.height,
        u: flow.u.iter().zip(&factors).map(|(u, f)| u * f).collect(),
        v: flow.v.iter().zip(&factors).map(|(v, f)| v * f).collect(),
        tau,
    })
}

/// Max, min, mean and population variance of the MOF magnitude in a box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyStats {
    pub max: f64,
    pub min: f64,
    pub mean: f64,
    pub var: f64,
}

impl EnergyStats {
    pub fn to_array(self) -> [f64; 4] {
        [self.max, self.min, self.mean, self.var]
    }
}

pub fn motion_energy(mof: &ModulatedFlowField, bbox: &BoundingBox) -> Result<EnergyStats> {
    if bbox.area() == 0 {
        return Err(Error::Geometry("empty box".into()));
    }
    if !bbox.fits_in(mof.width, mof.height) {
        return Err(Error::Geometry(format!("box {bbox:?} outside field")));
    }
    let n = bbox.area() as f64;
    let (mut max, mut min, mut sum) = (f64::NEG_INFINITY, f64::INFINITY, 0.0);
    for y in bbox.y..bbox.bottom() {
        for x in bbox.x..bbox.right() {
            let m = mof.magnitude_at(x, y);
            max = max.max(m);
            min = min.min(m);
            sum += m;
        }
    }
    // Rounding can push the mean of a flat field just outside [min, max].
    let mean = (sum / n).clamp(min, max);
    let mut ss = 0.0;
    for y in bbox.y..bbox.bottom() {
        for x in bbox.x..bbox.right() {
            let d = mof.magnitude_at(x, y) - mean;
            ss += d * d;
        }
    }
    Ok(EnergyStats {
        max,
        min,
        mean,
        var: ss / n,
    })
}
