//! Template-pool association.
//!
//! Every tracked object owns a pool: a short stack of fixed-size templates.
//! A proposal is scored against a pool by appending it as the newest slice,
//! low-pass filtering the stack in the 3-D DCT domain and measuring how well
//! the filtered slice reproduces the proposal. The likelihood temperature ξ
//! is re-estimated every frame so that the sigmoid-normalized likelihoods of
//! competing proposals are maximally spread.

pub mod dct;

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::frame::{crop_resize, BoundingBox, Frame, Patch};
use crate::proposals::Proposal;
use dct::{low_pass_reconstruct, Volume};

pub type PoolId = u64;

/// ξ used before any frame produced an estimate.
pub const INITIAL_XI: f64 = 0.1;

/// Log-spaced search grid 10^-3 .. 10^1 in quarter-decade steps.
pub fn xi_grid() -> Vec<f64> {
    (0..=16).map(|k| 10f64.powf(-3.0 + 0.25 * k as f64)).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Stack of one object's recent templates.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplatePool {
    pub id: PoolId,
    /// Oldest first. All share `width × height`.
    pub templates: Vec<Patch>,
    pub last_box: BoundingBox,
    pub last_associated_frame: usize,
    pub width: usize,
    pub height: usize,
}

impl TemplatePool {
    /// A pool holding a single template.
    pub fn create(id: PoolId, template: Patch, bbox: BoundingBox, frame: usize) -> Self {
        Self {
            id,
            width: template.width,
            height: template.height,
            templates: vec![template],
            last_box: bbox,
            last_associated_frame: frame,
        }
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    fn volume_with(&self, extra: Option<&[f64]>) -> Volume {
        let slices: Vec<Vec<f64>> = self.templates.iter().map(Patch::to_unit).collect();
        let mut refs: Vec<&[f64]> = slices.iter().map(Vec::as_slice).collect();
        if let Some(e) = extra {
            refs.push(e);
        }
        Volume::from_slices(self.width, self.height, &refs)
    }

    /// Appends `template` as the newest slice. When the pool then holds more
    /// than `max_templates`, the slice worst reproduced by the low-pass
    /// reconstruction of the full stack is discarded and its position
    /// returned.
    pub fn update(
        &mut self,
        template: Patch,
        bbox: BoundingBox,
        frame: usize,
        max_templates: usize,
        cutoff: f64,
    ) -> Option<usize> {
        assert_eq!((template.width, template.height), (self.width, self.height));
        self.templates.push(template);
        self.last_box = bbox;
        self.last_associated_frame = frame;
        if self.templates.len() > max_templates {
            let d = self.least_likely_slice(cutoff);
            self.templates.remove(d);
            Some(d)
        } else {
            None
        }
    }

    /// Index of the slice with the smallest likelihood under one low-pass
    /// reconstruction of the whole stack.
    ///
    /// The likelihood exp(-e / 2ξ) is strictly decreasing in the error e for
    /// any ξ > 0, so the slice is chosen by largest error; this is
    /// independent of ξ and immune to underflow ties. The first maximum wins.
    pub fn least_likely_slice(&self, cutoff: f64) -> usize {
        let vol = self.volume_with(None);
        let rec = low_pass_reconstruct(&vol, cutoff);
        let errors: Vec<f64> = (0..vol.depth)
            .map(|d| squared_error(vol.slice(d), rec.slice(d)))
            .collect();
        let mut worst = 0;
        for (d, &e) in errors.iter().enumerate() {
            if e > errors[worst] {
                worst = d;
            }
        }
        worst
    }
}

pub fn squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Low-frequency reconstruction of `candidate` appended as the newest slice
/// of the pool: returns that reconstructed slice with values in [0, 1] scale.
pub fn low_freq_approx(pool: &TemplatePool, candidate: &Patch, cutoff: f64) -> Result<Vec<f64>> {
    if (candidate.width, candidate.height) != (pool.width, pool.height) {
        return Err(Error::Geometry(format!(
            "candidate {}x{} does not match pool size {}x{}",
            candidate.width, candidate.height, pool.width, pool.height
        )));
    }
    let unit = candidate.to_unit();
    let vol = pool.volume_with(Some(&unit));
    let rec = low_pass_reconstruct(&vol, cutoff);
    Ok(rec.slice(vol.depth - 1).to_vec())
}

/// Sum of squared differences between the candidate (unit scale) and its
/// low-frequency reconstruction.
pub fn reconstruction_error(pool: &TemplatePool, candidate: &Patch, cutoff: f64) -> Result<f64> {
    let rec = low_freq_approx(pool, candidate, cutoff)?;
    Ok(squared_error(&candidate.to_unit(), &rec))
}

pub fn likelihood_from_error(error: f64, xi: f64) -> Result<f64> {
    if xi.is_nan() || xi <= 0.0 {
        return Err(Error::Parameter(format!("xi must be positive, got {xi}")));
    }
    Ok((-error / (2.0 * xi)).exp())
}

pub fn likelihood(candidate: &Patch, pool: &TemplatePool, xi: f64, cutoff: f64) -> Result<f64> {
    if xi.is_nan() || xi <= 0.0 {
        return Err(Error::Parameter(format!("xi must be positive, got {xi}")));
    }
    likelihood_from_error(reconstruction_error(pool, candidate, cutoff)?, xi)
}

/// Indices of proposals sharing at least one pixel with the pool's last box.
pub fn candidate_set(pool: &TemplatePool, proposals: &[Proposal]) -> Vec<usize> {
    proposals
        .iter()
        .enumerate()
        .filter(|(_, p)| p.bbox.overlap_area(&pool.last_box) != 0)
        .map(|(i, _)| i)
        .collect()
}

fn population_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Variance of the sigmoid-normalized likelihoods for the given
/// reconstruction errors at temperature `xi`.
pub fn normalized_likelihood_variance(errors: &[f64], xi: f64) -> f64 {
    let values: Vec<f64> = errors.iter().map(|&e| sigmoid((-e / (2.0 * xi)).exp())).collect();
    population_variance(&values)
}

/// Grid search for the ξ maximizing the spread of normalized likelihoods over
/// a pool's candidates. Ties, including the all-zero variance of a single or
/// uniform candidate set, resolve to the smallest ξ.
pub fn optimize_xi(errors: &[f64]) -> Option<f64> {
    if errors.is_empty() {
        return None;
    }
    let grid = xi_grid();
    let mut best_xi = grid[0];
    let mut best_var = normalized_likelihood_variance(errors, grid[0]);
    for &xi in &grid[1..] {
        let v = normalized_likelihood_variance(errors, xi);
        // Relative margin keeps rounding noise from breaking exact ties.
        if v > best_var * (1.0 + 1e-9) + 1e-24 {
            best_var = v;
            best_xi = xi;
        }
    }
    Some(best_xi)
}

/// Arithmetic mean of the per-pool estimates, or `previous` when no pool had
/// candidates this frame.
pub fn mean_xi(xis: &[f64], previous: f64) -> f64 {
    if xis.is_empty() {
        previous
    } else {
        xis.iter().sum::<f64>() / xis.len() as f64
    }
}

/// A proposal with its association quality.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredProposal {
    pub proposal: Proposal,
    pub quality: f64,
    /// Best-matching pool, or `None` for a proposal overlapping no pool
    /// (a pool seed).
    pub best_pool: Option<PoolId>,
    pub patch: Patch,
}

/// Quality of a proposal given its normalized likelihood under each eligible
/// pool: entropy times the best normalized likelihood. Ties go to the lower
/// pool id. Returns `None` when no pool is eligible.
pub fn quality_score(psi: f64, pool_likelihoods: &[(PoolId, f64)]) -> Option<(f64, PoolId)> {
    let mut best: Option<(f64, PoolId)> = None;
    for &(id, l) in pool_likelihoods {
        let r = sigmoid(l);
        best = match best {
            Some((br, bid)) if br > r || (br == r && bid < id) => Some((br, bid)),
            _ => Some((r, id)),
        };
    }
    best.map(|(r, id)| (psi * r, id))
}

/// Quality given to proposals that overlap no pool: entropy times ρ(0),
/// the infimum of the normalized likelihood, so any associated proposal of
/// equal entropy outranks a seed.
pub fn seed_quality(psi: f64) -> f64 {
    psi * sigmoid(0.0)
}

/// Greedy non-maximum suppression by quality. A proposal survives when its
/// IoU with every survivor is at most `iou_threshold` and its best pool has
/// not already been claimed. Returns survivor indices in selection order.
pub fn nms(scored: &[ScoredProposal], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| {
        scored[b]
            .quality
            .partial_cmp(&scored[a].quality)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    let mut claimed: BTreeSet<PoolId> = BTreeSet::new();
    for i in order {
        let s = &scored[i];
        if let Some(p) = s.best_pool {
            if claimed.contains(&p) {
                continue;
            }
        }
        if kept
            .iter()
            .any(|&k| scored[k].proposal.bbox.iou(&s.proposal.bbox) > iou_threshold)
        {
            continue;
        }
        if let Some(p) = s.best_pool {
            claimed.insert(p);
        }
        kept.push(i);
    }
    kept
}

/// Removes pools unassociated for more than `stale_frames` frames and
/// returns their ids.
pub fn prune_stale_pools(pools: &mut Vec<TemplatePool>, current_frame: usize, stale_frames: usize) -> Vec<PoolId> {
    let mut removed = Vec::new();
    pools.retain(|p| {
        let keep = current_frame.saturating_sub(p.last_associated_frame) <= stale_frames;
        if !keep {
            removed.push(p.id);
        }
        keep
    });
    removed
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolAction {
    Created,
    Updated,
    /// A template at the given stack position was discarded.
    EvictedSlice(usize),
    Pruned,
}

impl std::fmt::Display for PoolAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PoolAction::Created => write!(f, "created"),
            PoolAction::Updated => write!(f, "updated"),
            PoolAction::EvictedSlice(d) => write!(f, "evicted-slice-{d}"),
            PoolAction::Pruned => write!(f, "pruned"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEvent {
    pub frame: usize,
    pub pool: PoolId,
    pub bbox: BoundingBox,
    pub quality: f64,
    pub action: PoolAction,
    pub templates: usize,
}

/// An observer: a pre-existing pool that won a proposal this frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Observer {
    pub pool: PoolId,
    pub proposal: Proposal,
    pub quality: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssociationResult {
    pub observers: Vec<Observer>,
    pub new_pool_ids: Vec<PoolId>,
    pub events: Vec<PoolEvent>,
    /// ξ̂ used this frame.
    pub xi_hat: f64,
}

/// Owns the pool set and runs one association step per frame.
#[derive(Debug, Clone)]
pub struct Associator {
    pools: Vec<TemplatePool>,
    next_id: PoolId,
    xi_hat: f64,
    template_width: usize,
    template_height: usize,
    max_templates: usize,
    stale_frames: usize,
    cutoff: f64,
    nms_iou: f64,
}

impl Associator {
    pub fn new(cfg: &PipelineConfig) -> Self {
        Self {
            pools: Vec::new(),
            next_id: 0,
            xi_hat: INITIAL_XI,
            template_width: cfg.template_width,
            template_height: cfg.template_height,
            max_templates: cfg.max_templates,
            stale_frames: cfg.stale_frames,
            cutoff: cfg.low_freq_cutoff,
            nms_iou: cfg.nms_iou,
        }
    }

    pub fn pools(&self) -> &[TemplatePool] {
        &self.pools
    }

    pub fn xi_hat(&self) -> f64 {
        self.xi_hat
    }

    pub fn step(&mut self, frame: &Frame, proposals: &[Proposal]) -> Result<AssociationResult> {
        let t = frame.index();
        let mut events = Vec::new();
        let pruned_boxes: Vec<(PoolId, BoundingBox, usize)> = self
            .pools
            .iter()
            .map(|p| (p.id, p.last_box, p.len()))
            .collect();
        for id in prune_stale_pools(&mut self.pools, t, self.stale_frames) {
            let (_, bbox, n) = pruned_boxes.iter().find(|(p, _, _)| *p == id).copied().unwrap();
            events.push(PoolEvent {
                frame: t,
                pool: id,
                bbox,
                quality: 0.0,
                action: PoolAction::Pruned,
                templates: n,
            });
        }

        let patches: Vec<Patch> = proposals
            .iter()
            .map(|p| crop_resize(frame, &p.bbox, self.template_width, self.template_height))
            .collect::<Result<_>>()?;

        // Reconstruction error for every (pool, overlapping proposal) pair.
        let pairs: Vec<(usize, usize)> = self
            .pools
            .iter()
            .enumerate()
            .flat_map(|(pi, pool)| candidate_set(pool, proposals).into_iter().map(move |q| (pi, q)))
            .collect();
        let errors: Vec<f64> = pairs
            .par_iter()
            .map(|&(pi, q)| reconstruction_error(&self.pools[pi], &patches[q], self.cutoff))
            .collect::<Result<_>>()?;

        let mut xis = Vec::new();
        for pi in 0..self.pools.len() {
            let errs: Vec<f64> = pairs
                .iter()
                .zip(&errors)
                .filter(|((p, _), _)| *p == pi)
                .map(|(_, &e)| e)
                .collect();
            if let Some(xi) = optimize_xi(&errs) {
                xis.push(xi);
            }
        }
        self.xi_hat = mean_xi(&xis, self.xi_hat);

        let mut scored = Vec::with_capacity(proposals.len());
        for (q, (prop, patch)) in proposals.iter().zip(patches).enumerate() {
            let lik: Vec<(PoolId, f64)> = pairs
                .iter()
                .zip(&errors)
                .filter(|((_, pq), _)| *pq == q)
                .map(|(&(pi, _), &e)| Ok((self.pools[pi].id, likelihood_from_error(e, self.xi_hat)?)))
                .collect::<Result<_>>()?;
            let (quality, best_pool) = match quality_score(prop.psi, &lik) {
                Some((qs, id)) => (qs, Some(id)),
                None => (seed_quality(prop.psi), None),
            };
            scored.push(ScoredProposal {
                proposal: prop.clone(),
                quality,
                best_pool,
                patch,
            });
        }

        let survivors = nms(&scored, self.nms_iou);
        let mut result = AssociationResult {
            xi_hat: self.xi_hat,
            ..Default::default()
        };
        for i in survivors {
            let s = scored[i].clone();
            match s.best_pool {
                Some(id) => {
                    let pool = self.pools.iter_mut().find(|p| p.id == id).expect("pool exists");
                    let evicted = pool.update(
                        s.patch,
                        s.proposal.bbox,
                        t,
                        self.max_templates,
                        self.cutoff,
                    );
                    events.push(PoolEvent {
                        frame: t,
                        pool: id,
                        bbox: s.proposal.bbox,
                        quality: s.quality,
                        action: PoolAction::Updated,
                        templates: pool.len(),
                    });
                    if let Some(d) = evicted {
                        events.push(PoolEvent {
                            frame: t,
                            pool: id,
                            bbox: s.proposal.bbox,
                            quality: s.quality,
                            action: PoolAction::EvictedSlice(d),
                            templates: pool.len(),
                        });
                    }
                    result.observers.push(Observer {
                        pool: id,
                        proposal: s.proposal,
                        quality: s.quality,
                    });
                }
                None => {
                    let id = self.next_id;
                    self.next_id += 1;
                    self.pools.push(TemplatePool::create(id, s.patch, s.proposal.bbox, t));
                    events.push(PoolEvent {
                        frame: t,
                        pool: id,
                        bbox: s.proposal.bbox,
                        quality: s.quality,
                        action: PoolAction::Created,
                        templates: 1,
                    });
                    result.new_pool_ids.push(id);
                }
            }
        }
        result.observers.sort_by_key(|o| o.pool);
        result.events = events;
        Ok(result)
    }
}
