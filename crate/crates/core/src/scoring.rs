//! Frame abnormality: EMD between consecutive descriptors of the same
//! observer, a symmetric weighted mean filter, and min-max thresholding.

use rayon::prelude::*;

use crate::association::PoolId;
use crate::descriptors::LocalDescriptor;
use crate::error::{Error, Result};

/// Largest signature accepted by [`emd`].
pub const MAX_SIGNATURE_POINTS: usize = 16;

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Signature {
    pub weights: Vec<f64>,
    pub features: Vec<[f64; 4]>,
}

impl Signature {
    pub fn new(weights: Vec<f64>, features: Vec<[f64; 4]>) -> Result<Self> {
        let s = Self { weights, features };
        s.validate()?;
        Ok(s)
    }

    pub fn from_descriptor(d: &LocalDescriptor) -> Result<Self> {
        Self::new(d.weights.clone(), d.features.clone())
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.weights.len() != self.features.len() {
            return Err(Error::Parameter(format!(
                "{} weights for {} feature points",
                self.weights.len(),
                self.features.len()
            )));
        }
        if self.weights.len() > MAX_SIGNATURE_POINTS {
            return Err(Error::Parameter(format!(
                "signature has {} points, limit {MAX_SIGNATURE_POINTS}",
                self.weights.len()
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Parameter("signature weight negative or not finite".into()));
        }
        if !self.weights.iter().any(|&w| w > 0.0) {
            return Err(Error::Parameter("signature has no positive weight".into()));
        }
        if self.features.iter().flatten().any(|f| !f.is_finite()) {
            return Err(Error::Parameter("signature feature not finite".into()));
        }
        Ok(())
    }

    fn normalized_weights(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / total).collect()
    }
}

pub fn ground_distance(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Earth mover's distance with Euclidean ground distance; both weight
/// vectors are scaled to unit mass first.
pub fn emd(a: &Signature, b: &Signature) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let supply = a.normalized_weights();
    let demand = b.normalized_weights();
    let cost: Vec<Vec<f64>> = a
        .features
        .iter()
        .map(|p| b.features.iter().map(|q| ground_distance(p, q)).collect())
        .collect();
    let flow = transport(&supply, &demand, &cost)?;
    Ok(flow.iter().map(|&(i, j, x)| x * cost[i][j]).sum::<f64>().max(0.0))
}

/// Solves the balanced transportation problem with the transportation
/// simplex. Returns the basic cells `(i, j, amount)` of an optimal plan.
pub fn transport(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> Result<Vec<(usize, usize, f64)>> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 {
        return Err(Error::Parameter("empty transportation problem".into()));
    }
    let mut s = supply.to_vec();
    let mut d = demand.to_vec();
    // Push rounding mismatch into the last demand so the plan balances.
    let gap = s.iter().sum::<f64>() - d.iter().sum::<f64>();
    d[n - 1] = (d[n - 1] + gap).max(0.0);

    // Northwest corner; degenerate zero cells are kept so the basis always
    // has m + n - 1 cells forming a spanning tree.
    let mut basis: Vec<(usize, usize, f64)> = Vec::with_capacity(m + n - 1);
    let (mut i, mut j) = (0, 0);
    loop {
        let x = s[i].min(d[j]);
        basis.push((i, j, x));
        s[i] -= x;
        d[j] -= x;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if j == n - 1 || (i < m - 1 && s[i] <= d[j]) {
            i += 1;
        } else {
            j += 1;
        }
    }

    let max_iter = 50 * (m + n) * (m + n);
    for _ in 0..max_iter {
        let (u, v) = potentials(m, n, &basis, cost);
        let mut entering = None;
        let mut best = -1e-12;
        for (r, row) in cost.iter().enumerate() {
            for (c, &cc) in row.iter().enumerate() {
                let red = cc - u[r] - v[c];
                if red < best && !basis.iter().any(|&(bi, bj, _)| bi == r && bj == c) {
                    best = red;
                    entering = Some((r, c));
                }
            }
        }
        let Some((p, q)) = entering else {
            return Ok(basis);
        };
        let path = tree_path(m, n, &basis, q, p);
        // Cells along the path alternate: the first shares column q with the
        // entering cell and loses flow.
        let (mut theta, mut leave) = (f64::INFINITY, usize::MAX);
        for (k, &cell) in path.iter().enumerate() {
            if k % 2 == 0 && basis[cell].2 < theta - EPS {
                theta = basis[cell].2;
                leave = cell;
            }
        }
        for (k, &cell) in path.iter().enumerate() {
            if k % 2 == 0 {
                basis[cell].2 = (basis[cell].2 - theta).max(0.0);
            } else {
                basis[cell].2 += theta;
            }
        }
        basis[leave] = (p, q, theta);
    }
    Err(Error::Parameter("transportation simplex did not converge".into()))
}

fn potentials(m: usize, n: usize, basis: &[(usize, usize, f64)], cost: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let mut u = vec![f64::NAN; m];
    let mut v = vec![f64::NAN; n];
    u[0] = 0.0;
    let mut remaining = basis.len();
    while remaining > 0 {
        let mut progressed = false;
        remaining = 0;
        for &(i, j, _) in basis {
            match (u[i].is_nan(), v[j].is_nan()) {
                (false, true) => {
                    v[j] = cost[i][j] - u[i];
                    progressed = true;
                }
                (true, false) => {
                    u[i] = cost[i][j] - v[j];
                    progressed = true;
                }
                (true, true) => remaining += 1,
                (false, false) => {}
            }
        }
        if !progressed {
            break;
        }
    }
    (u, v)
}

/// Basis cells on the tree path from column node `q` to row node `p`.
fn tree_path(m: usize, n: usize, basis: &[(usize, usize, f64)], q: usize, p: usize) -> Vec<usize> {
    // Nodes: rows 0..m, columns m..m+n.
    let nodes = m + n;
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nodes];
    for (k, &(i, j, _)) in basis.iter().enumerate() {
        adj[i].push((m + j, k));
        adj[m + j].push((i, k));
    }
    let start = m + q;
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; nodes];
    let mut seen = vec![false; nodes];
    seen[start] = true;
    let mut stack = vec![start];
    while let Some(node) = stack.pop() {
        if node == p {
            break;
        }
        for &(next, cell) in &adj[node] {
            if !seen[next] {
                seen[next] = true;
                parent[next] = Some((node, cell));
                stack.push(next);
            }
        }
    }
    let mut path = Vec::new();
    let mut node = p;
    while let Some((prev, cell)) = parent[node] {
        path.push(cell);
        node = prev;
    }
    path.reverse();
    path
}

/// Mean EMD over pool ids described in both frames, with the number of
/// such ids. No common id gives `(0, 0)`.
pub fn frame_abnormality_raw(prev: &[LocalDescriptor], curr: &[LocalDescriptor]) -> Result<(f64, usize)> {
    let pairs: Vec<(&LocalDescriptor, &LocalDescriptor)> = curr
        .iter()
        .filter_map(|c| prev.iter().find(|p| p.observer == c.observer).map(|p| (p, c)))
        .collect();
    if pairs.is_empty() {
        return Ok((0.0, 0));
    }
    let costs: Vec<f64> = pairs
        .par_iter()
        .map(|(p, c)| emd(&Signature::from_descriptor(p)?, &Signature::from_descriptor(c)?))
        .collect::<Result<_>>()?;
    Ok((costs.iter().sum::<f64>() / costs.len() as f64, costs.len()))
}

/// The `2n + 1` filter taps: `1/(n+1)` at the center, `1/(2(n+1))` elsewhere.
pub fn filter_weights(n: usize) -> Vec<f64> {
    let side = 1.0 / (2.0 * (n as f64 + 1.0));
    let mut w = vec![side; 2 * n + 1];
    w[n] = 1.0 / (n as f64 + 1.0);
    w
}

fn reflect(i: isize, len: usize) -> usize {
    let period = 2 * len as isize;
    let r = i.rem_euclid(period) as usize;
    if r < len {
        r
    } else {
        2 * len - 1 - r
    }
}

/// Weighted mean filter with symmetric padding (`x[-1] = x[0]`).
pub fn smooth(series: &[f64], n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Parameter("filter half-length must be at least 1".into()));
    }
    let w = filter_weights(n);
    let len = series.len();
    Ok((0..len as isize)
        .map(|t| {
            w.iter()
                .enumerate()
                .map(|(k, wk)| wk * series[reflect(t + k as isize - n as isize, len)])
                .sum()
        })
        .collect())
}

/// Per-frame anomaly flags, normalized values and the `(min, max)` used.
pub type Classified = (Vec<bool>, Vec<f64>, Option<(f64, f64)>);

/// Min-max normalization and threshold. A constant series is all normal.
pub fn classify(series: &[f64], threshold: f64) -> Result<Classified> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Parameter(format!("threshold {threshold} outside (0, 1)")));
    }
    let min = series.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if series.is_empty() || max <= min {
        return Ok((vec![false; series.len()], vec![0.0; series.len()], None));
    }
    let norm: Vec<f64> = series.iter().map(|x| (x - min) / (max - min)).collect();
    Ok((norm.iter().map(|&v| v > threshold).collect(), norm, Some((min, max))))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameFlag {
    /// Background burn-in; not scored.
    Warmup,
    Normal,
    Anomalous,
}

impl std::fmt::Display for FrameFlag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FrameFlag::Warmup => "warmup",
            FrameFlag::Normal => "normal",
            FrameFlag::Anomalous => "anomalous",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameScore {
    pub frame_index: usize,
    pub fa_raw: f64,
    pub fa_smoothed: f64,
    pub normalized: f64,
    pub flag: FrameFlag,
    /// Number of observers compared; zero means the raw value is a fallback.
    pub matched: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyScoreSeries {
    pub frames: Vec<FrameScore>,
    pub warmup: usize,
    /// Range used for normalization, absent for a constant series.
    pub normalization: Option<(f64, f64)>,
}

impl AnomalyScoreSeries {
    /// Smooths and classifies the frames after `warmup`; earlier frames keep
    /// their raw value and are flagged as warmup.
    pub fn build(raw: &[(f64, usize)], warmup: usize, half_length: usize, threshold: f64) -> Result<Self> {
        if raw.iter().any(|(v, _)| !v.is_finite() || *v < 0.0) {
            return Err(Error::Evaluation("raw abnormality must be finite and non-negative".into()));
        }
        let warmup = warmup.min(raw.len());
        let scored: Vec<f64> = raw[warmup..].iter().map(|r| r.0).collect();
        let smoothed = if scored.is_empty() { Vec::new() } else { smooth(&scored, half_length)? };
        let (flags, norm, normalization) = classify(&smoothed, threshold)?;
        let frames = raw
            .iter()
            .enumerate()
            .map(|(t, &(fa, matched))| {
                if t < warmup {
                    FrameScore {
                        frame_index: t,
                        fa_raw: fa,
                        fa_smoothed: fa,
                        normalized: 0.0,
                        flag: FrameFlag::Warmup,
                        matched,
                    }
                } else {
                    let k = t - warmup;
                    FrameScore {
                        frame_index: t,
                        fa_raw: fa,
                        fa_smoothed: smoothed[k],
                        normalized: norm[k],
                        flag: if flags[k] { FrameFlag::Anomalous } else { FrameFlag::Normal },
                        matched,
                    }
                }
            })
            .collect();
        Ok(Self { frames, warmup, normalization })
    }

    /// Frames that count toward metrics.
    pub fn scored(&self) -> &[FrameScore] {
        &self.frames[self.warmup..]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame_index,fa_raw,fa_smoothed,normalized,flag\n");
        for f in &self.frames {
            out.push_str(&format!(
                "{},{:.9},{:.9},{:.9},{}\n",
                f.frame_index, f.fa_raw, f.fa_smoothed, f.normalized, f.flag
            ));
        }
        out
    }
}

/// Descriptor lookup by observer id.
pub fn descriptor_for(descriptors: &[LocalDescriptor], id: PoolId) -> Option<&LocalDescriptor> {
    descriptors.iter().find(|d| d.observer == id)
}
