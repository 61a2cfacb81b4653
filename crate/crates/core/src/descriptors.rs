//! Local motion descriptors: orientation histograms of the modulated flow,
//! χ² motion differences to nearby observers, and linking weights.

use crate::association::{Observer, PoolId};
use crate::error::{Error, Result};
use crate::frame::BoundingBox;
use crate::motionfield::{motion_energy, ModulatedFlowField};

/// Pixels with a smaller MOF magnitude do not vote.
pub const MIN_MAGNITUDE: f64 = 1e-6;

/// Magnitude-weighted orientation histogram; bin `k` covers directions in
/// `[k, k + 1) · 2π / n` with angles measured by `atan2(v, u)` in `[0, 2π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationHistogram {
    pub bins: Vec<f64>,
}

impl OrientationHistogram {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

pub fn orientation_bin(u: f64, v: f64, n_bins: usize) -> usize {
    let two_pi = std::f64::consts::TAU;
    let mut a = v.atan2(u);
    if a < 0.0 {
        a += two_pi;
    }
    ((a / two_pi * n_bins as f64) as usize) % n_bins
}

pub fn hmof(mof: &ModulatedFlowField, bbox: &BoundingBox, n_bins: usize) -> Result<OrientationHistogram> {
    if n_bins < 4 {
        return Err(Error::Parameter(format!("n_bins = {n_bins} below 4")));
    }
    if !bbox.fits_in(mof.width, mof.height) {
        return Err(Error::Geometry(format!("box {bbox:?} outside field")));
    }
    let mut bins = vec![0.0; n_bins];
    for y in bbox.y..bbox.bottom() {
        for x in bbox.x..bbox.right() {
            let i = y * mof.width + x;
            let (u, v) = (mof.u[i], mof.v[i]);
            let m = u.hypot(v);
            if m > MIN_MAGNITUDE {
                bins[orientation_bin(u, v, n_bins)] += m;
            }
        }
    }
    Ok(OrientationHistogram { bins })
}

/// Rotates the histogram so its largest bin sits at index `n / 2`. If the
/// center already holds a maximum the histogram is returned unchanged;
/// otherwise the lowest-index maximum is moved there.
pub fn shift_center_max(h: &OrientationHistogram) -> OrientationHistogram {
    let n = h.bins.len();
    let center = n / 2;
    let max = h.bins.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if h.bins[center] == max {
        return h.clone();
    }
    let argmax = h.bins.iter().position(|&b| b == max).unwrap_or(0);
    let shift = (center + n - argmax) % n;
    let mut bins = vec![0.0; n];
    for (i, &b) in h.bins.iter().enumerate() {
        bins[(i + shift) % n] = b;
    }
    OrientationHistogram { bins }
}

/// Bins kept by the ζ window: `w = max(1, round(ζ n))`, starting
/// `(w − 1) / 2` bins left of center (even widths reach one further right),
/// pulled back inside the histogram when it would run past the end.
pub fn shmof_window(n_bins: usize, zeta: f64) -> std::ops::Range<usize> {
    let w = ((zeta * n_bins as f64).round() as usize).clamp(1, n_bins);
    let center = n_bins / 2;
    let start = (center - (w - 1) / 2).min(n_bins - w);
    start..start + w
}

pub fn select_shmof(h: &OrientationHistogram, zeta: f64) -> Result<OrientationHistogram> {
    if !(0.0..=1.0).contains(&zeta) {
        return Err(Error::Parameter(format!("zeta = {zeta} outside [0, 1]")));
    }
    Ok(OrientationHistogram {
        bins: h.bins[shmof_window(h.len(), zeta)].to_vec(),
    })
}

/// χ² distance `½ Σ (a − b)² / (a + b)`; empty bin pairs contribute nothing.
pub fn chi2(a: &OrientationHistogram, b: &OrientationHistogram) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Parameter(format!("bin counts differ: {} vs {}", a.len(), b.len())));
    }
    if a.bins.iter().chain(&b.bins).any(|&v| v < 0.0) {
        return Err(Error::Parameter("negative histogram bin".into()));
    }
    Ok(0.5
        * a.bins
            .iter()
            .zip(&b.bins)
            .map(|(&x, &y)| if x + y > 0.0 { (x - y) * (x - y) / (x + y) } else { 0.0 })
            .sum::<f64>())
}

/// Up to `m` other observers ordered by centroid distance, ties by pool id.
pub fn nearest_neighbors(observer: &Observer, observers: &[Observer], m: usize) -> Vec<PoolId> {
    let (cx, cy) = observer.proposal.bbox.center();
    let mut others: Vec<(f64, PoolId)> = observers
        .iter()
        .filter(|o| o.pool != observer.pool)
        .map(|o| {
            let (x, y) = o.proposal.bbox.center();
            ((x - cx).hypot(y - cy), o.pool)
        })
        .collect();
    others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
    others.into_iter().take(m).map(|(_, id)| id).collect()
}

/// `W_k = Δh_k² / Σ Δh_j²`; uniform when every difference is zero.
pub fn linking_weights(dh: &[f64]) -> Vec<f64> {
    let total: f64 = dh.iter().map(|d| d * d).sum();
    if total > 0.0 {
        dh.iter().map(|d| d * d / total).collect()
    } else {
        vec![1.0 / dh.len() as f64; dh.len()]
    }
}

/// Linking weights to the neighbors plus their motion-energy features.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDescriptor {
    pub observer: PoolId,
    pub neighbors: Vec<PoolId>,
    pub weights: Vec<f64>,
    /// One `[max, min, mean, var]` column per neighbor.
    pub features: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescriptorParams {
    pub neighbors: usize,
    pub n_bins: usize,
    pub zeta: f64,
}

fn shmof_of(mof: &ModulatedFlowField, bbox: &BoundingBox, p: &DescriptorParams) -> Result<OrientationHistogram> {
    select_shmof(&shift_center_max(&hmof(mof, bbox, p.n_bins)?), p.zeta)
}

/// Descriptor of `observer` against its nearest observers. Returns `None`
/// when it has no neighbor this frame.
pub fn build_descriptor(
    observer: &Observer,
    observers: &[Observer],
    mof: &ModulatedFlowField,
    p: &DescriptorParams,
) -> Result<Option<LocalDescriptor>> {
    let neighbors = nearest_neighbors(observer, observers, p.neighbors);
    if neighbors.is_empty() {
        return Ok(None);
    }
    let own = shmof_of(mof, &observer.proposal.bbox, p)?;
    let mut dh = Vec::with_capacity(neighbors.len());
    let mut features = Vec::with_capacity(neighbors.len());
    for id in &neighbors {
        let nb = observers.iter().find(|o| o.pool == *id).expect("neighbor among observers");
        dh.push(chi2(&own, &shmof_of(mof, &nb.proposal.bbox, p)?)?);
        features.push(motion_energy(mof, &nb.proposal.bbox)?.to_array());
    }
    Ok(Some(LocalDescriptor {
        observer: observer.pool,
        weights: linking_weights(&dh),
        neighbors,
        features,
    }))
}

/// Descriptors for every observer that has at least one neighbor.
pub fn build_all(observers: &[Observer], mof: &ModulatedFlowField, p: &DescriptorParams) -> Result<Vec<LocalDescriptor>> {
    let mut out = Vec::with_capacity(observers.len());
    for o in observers {
        if let Some(d) = build_descriptor(o, observers, mof, p)? {
            out.push(d);
        }
    }
    Ok(out)
}
