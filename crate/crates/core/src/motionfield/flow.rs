//! Pyramidal Horn–Schunck dense optical flow.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frame::Frame;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    pub levels: usize,
    pub iterations: usize,
    /// Weight of the smoothness term relative to the brightness-constancy
    /// residual, on intensities scaled to [0, 1].
    pub smoothness: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            levels: 3,
            iterations: 100,
            smoothness: 0.1,
        }
    }
}

/// Dense per-pixel displacement in pixels per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.u.iter().zip(&self.v).map(|(u, v)| u.hypot(*v)).collect()
    }
}

#[derive(Debug, Clone)]
struct Image {
    w: usize,
    h: usize,
    px: Vec<f64>,
}

impl Image {
    #[inline]
    fn at(&self, x: isize, y: isize) -> f64 {
        let xc = x.clamp(0, self.w as isize - 1) as usize;
        let yc = y.clamp(0, self.h as isize - 1) as usize;
        self.px[yc * self.w + xc]
    }

    fn sample(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.w - 1) as f64);
        let y = y.clamp(0.0, (self.h - 1) as f64);
        let x0 = x.floor();
        let y0 = y.floor();
        let (tx, ty) = (x - x0, y - y0);
        let (xi, yi) = (x0 as isize, y0 as isize);
        let top = self.at(xi, yi) * (1.0 - tx) + self.at(xi + 1, yi) * tx;
        let bot = self.at(xi, yi + 1) * (1.0 - tx) + self.at(xi + 1, yi + 1) * tx;
        top * (1.0 - ty) + bot * ty
    }

    fn downsample(&self) -> Image {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut px = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = (2 * x as isize, 2 * y as isize);
                px.push(
                    0.25 * (self.at(sx, sy) + self.at(sx + 1, sy) + self.at(sx, sy + 1) + self.at(sx + 1, sy + 1)),
                );
            }
        }
        Image { w, h, px }
    }
}

fn resample_flow(f: &FlowField, w: usize, h: usize) -> FlowField {
    let sx = f.width as f64 / w as f64;
    let sy = f.height as f64 / h as f64;
    let uimg = Image {
        w: f.width,
        h: f.height,
        px: f.u.clone(),
    };
    let vimg = Image {
        w: f.width,
        h: f.height,
        px: f.v.clone(),
    };
    let mut out = FlowField::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let fx = (x as f64 + 0.5) * sx - 0.5;
            let fy = (y as f64 + 0.5) * sy - 0.5;
            out.u[y * w + x] = uimg.sample(fx, fy) / sx;
            out.v[y * w + x] = vimg.sample(fx, fy) / sy;
        }
    }
    out
}

/// Horn–Schunck refinement of `init` at one pyramid level.
fn refine_level(i1: &Image, i2: &Image, init: FlowField, p: &FlowParams) -> FlowField {
    let (w, h) = (i1.w, i1.h);
    let warped = Image {
        w,
        h,
        px: (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                i2.sample(x + init.u[i], y + init.v[i])
            })
            .collect(),
    };
    let mut ix = vec![0.0; w * h];
    let mut iy = vec![0.0; w * h];
    let mut it = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            ix[i] = 0.25 * (i1.at(x + 1, y) - i1.at(x - 1, y) + warped.at(x + 1, y) - warped.at(x - 1, y));
            iy[i] = 0.25 * (i1.at(x, y + 1) - i1.at(x, y - 1) + warped.at(x, y + 1) - warped.at(x, y - 1));
            it[i] = warped.px[i] - i1.px[i];
        }
    }

    // Per-pixel constants of the update: with r = Ix·ū + Iy·v̄ + c0,
    // u = ū − Ix·r / d and v = v̄ − Iy·r / d.
    let alpha = p.smoothness;
    let mut kx = vec![0.0; w * h];
    let mut ky = vec![0.0; w * h];
    let mut c0 = vec![0.0; w * h];
    for i in 0..w * h {
        let d = alpha + ix[i] * ix[i] + iy[i] * iy[i];
        kx[i] = ix[i] / d;
        ky[i] = iy[i] / d;
        c0[i] = it[i] - ix[i] * init.u[i] - iy[i] * init.v[i];
    }
    let mut u = init.u;
    let mut v = init.v;
    let mut nu = vec![0.0; w * h];
    let mut nv = vec![0.0; w * h];
    for _ in 0..p.iterations {
        nu.par_chunks_mut(w)
            .zip(nv.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, (urow, vrow))| {
                let up = y.saturating_sub(1) * w;
                let mid = y * w;
                let down = (y + 1).min(h - 1) * w;
                for x in 0..w {
                    let l = x.saturating_sub(1);
                    let r = (x + 1).min(w - 1);
                    // Horn–Schunck neighborhood average (1/6 edge, 1/12 corner).
                    let avg = |f: &[f64]| {
                        (f[mid + l] + f[mid + r] + f[up + x] + f[down + x]) / 6.0
                            + (f[up + l] + f[up + r] + f[down + l] + f[down + r]) / 12.0
                    };
                    let i = mid + x;
                    let ub = avg(&u);
                    let vb = avg(&v);
                    let res = ix[i] * ub + iy[i] * vb + c0[i];
                    urow[x] = ub - kx[i] * res;
                    vrow[x] = vb - ky[i] * res;
                }
            });
        std::mem::swap(&mut u, &mut nu);
        std::mem::swap(&mut v, &mut nv);
    }
    FlowField {
        width: w,
        height: h,
        u,
        v,
    }
}

/// Dense flow from `prev` to `curr`: coarse-to-fine over a 2× box-filtered
/// pyramid, warping `curr` by the running estimate at each level.
pub fn compute_flow(prev: &Frame, curr: &Frame, params: &FlowParams) -> Result<FlowField> {
    if prev.dims() != curr.dims() {
        return Err(Error::DimensionMismatch {
            file: format!("frame {}", curr.index()),
            got_w: curr.width(),
            got_h: curr.height(),
            want_w: prev.width(),
            want_h: prev.height(),
        });
    }
    let (w, h) = prev.dims();
    let mut p1 = vec![Image { w, h, px: prev.to_unit() }];
    let mut p2 = vec![Image { w, h, px: curr.to_unit() }];
    for _ in 1..params.levels.max(1) {
        let last = p1.last().unwrap();
        if last.w / 2 < 8 || last.h / 2 < 8 {
            break;
        }
        let d1 = last.downsample();
        let d2 = p2.last().unwrap().downsample();
        p1.push(d1);
        p2.push(d2);
    }
    let coarsest = p1.last().unwrap();
    let mut flow = FlowField::zeros(coarsest.w, coarsest.h);
    for level in (0..p1.len()).rev() {
        let (lw, lh) = (p1[level].w, p1[level].h);
        if flow.width != lw || flow.height != lh {
            flow = resample_flow(&flow, lw, lh);
        }
        flow = refine_level(&p1[level], &p2[level], flow, params);
    }
    Ok(flow)
}
