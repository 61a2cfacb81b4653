//! Per-frame driver and the batch runner that writes scores, metrics and
//! debug artifacts.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::association::{AssociationResult, Associator, PoolEvent};
use crate::background::{cleanup, ForegroundMask, GmmParams, GmmPixelModel};
use crate::config::PipelineConfig;
use crate::descriptors::{build_all, DescriptorParams, LocalDescriptor};
use crate::error::{Error, Result};
use crate::eval::{evaluate, load_labels, roc_to_csv, Metrics};
use crate::frame::{load_sequence, write_pbm, write_pgm, Frame, FrameSequence};
use crate::motionfield::{compute_flow, compute_saliency, compute_tau, modulate, FlowField, FlowParams, ModulatedFlowField};
use crate::proposals::{edge_fused_segment, generate_proposals, Proposal};
use crate::scoring::{frame_abnormality_raw, AnomalyScoreSeries, FrameFlag};
use crate::synth::SceneScript;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Background,
    Cleanup,
    Segmentation,
    Proposals,
    Association,
    Flow,
    Saliency,
    Modulation,
    Descriptors,
    Scoring,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Background,
        Stage::Cleanup,
        Stage::Segmentation,
        Stage::Proposals,
        Stage::Association,
        Stage::Flow,
        Stage::Saliency,
        Stage::Modulation,
        Stage::Descriptors,
        Stage::Scoring,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Background => "background",
            Stage::Cleanup => "cleanup",
            Stage::Segmentation => "segmentation",
            Stage::Proposals => "proposals",
            Stage::Association => "association",
            Stage::Flow => "flow",
            Stage::Saliency => "saliency",
            Stage::Modulation => "modulation",
            Stage::Descriptors => "descriptors",
            Stage::Scoring => "scoring",
        }
    }

    fn slot(self) -> usize {
        Stage::ALL.iter().position(|&s| s == self).unwrap()
    }
}

/// Accumulated wall time per stage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageTimings {
    pub totals: [Duration; 10],
    pub frames: usize,
    /// Wall time of the whole frame loop, including work between stages.
    pub wall: Duration,
}

impl StageTimings {
    pub fn total(&self, stage: Stage) -> Duration {
        self.totals[stage.slot()]
    }

    pub fn sum(&self) -> Duration {
        self.totals.iter().sum()
    }

    pub fn ms_per_frame(&self, stage: Stage) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            self.total(stage).as_secs_f64() * 1e3 / self.frames as f64
        }
    }

    pub fn table(&self) -> String {
        let mut s = String::from("stage          total_ms   ms_per_frame   share\n");
        let sum = self.sum().as_secs_f64().max(1e-12);
        for st in Stage::ALL {
            let t = self.total(st).as_secs_f64();
            let _ = writeln!(
                s,
                "{:<13} {:>9.1} {:>14.3} {:>6.1}%",
                st.name(),
                t * 1e3,
                self.ms_per_frame(st),
                100.0 * t / sum
            );
        }
        let per = if self.frames == 0 { 0.0 } else { sum * 1e3 / self.frames as f64 };
        let _ = writeln!(s, "{:<13} {:>9.1} {:>14.3} {:>6.1}%", "total", sum * 1e3, per, 100.0);
        let _ = writeln!(s, "wall          {:>9.1}   frames {}", self.wall.as_secs_f64() * 1e3, self.frames);
        s
    }
}

fn timed<T>(timings: &mut StageTimings, stage: Stage, frame: usize, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(|e| Error::Stage {
        stage: stage.name(),
        frame,
        source: Box::new(e),
    });
    timings.totals[stage.slot()] += start.elapsed();
    out
}

/// Everything produced for one frame.
#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub index: usize,
    pub mask: ForegroundMask,
    pub proposals: Vec<Proposal>,
    pub association: AssociationResult,
    pub flow: Option<FlowField>,
    pub mof: Option<ModulatedFlowField>,
    pub descriptors: Vec<LocalDescriptor>,
    pub fa_raw: f64,
    /// Observers compared against the previous frame.
    pub matched: usize,
}

/// Streaming detector: feed frames in order.
pub struct Detector {
    cfg: PipelineConfig,
    gmm: GmmPixelModel,
    associator: Associator,
    recent: VecDeque<Frame>,
    prev_descriptors: Vec<LocalDescriptor>,
    timings: StageTimings,
    dims: (usize, usize),
}

impl Detector {
    pub fn new(cfg: &PipelineConfig, width: usize, height: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            gmm: GmmPixelModel::new(width, height, GmmParams::from_config(cfg)),
            associator: Associator::new(cfg),
            recent: VecDeque::with_capacity(3),
            prev_descriptors: Vec::new(),
            timings: StageTimings::default(),
            dims: (width, height),
        })
    }

    pub fn associator(&self) -> &Associator {
        &self.associator
    }

    pub fn timings(&self) -> &StageTimings {
        &self.timings
    }

    pub fn process(&mut self, frame: &Frame) -> Result<FrameOutput> {
        let t = frame.index();
        if frame.dims() != self.dims {
            return Err(Error::Stage {
                stage: Stage::Background.name(),
                frame: t,
                source: Box::new(Error::DimensionMismatch {
                    file: format!("frame {t}"),
                    got_w: frame.width(),
                    got_h: frame.height(),
                    want_w: self.dims.0,
                    want_h: self.dims.1,
                }),
            });
        }
        let start = Instant::now();
        let cfg = &self.cfg;
        let tm = &mut self.timings;
        let gmm = &mut self.gmm;

        let raw_mask = timed(tm, Stage::Background, t, || gmm.update_and_classify(frame))?;
        let mask = timed(tm, Stage::Cleanup, t, || Ok(cleanup(&raw_mask)))?;
        let segments = timed(tm, Stage::Segmentation, t, || Ok(edge_fused_segment(&mask, frame, cfg.min_segment_size)))?;
        let proposals = timed(tm, Stage::Proposals, t, || Ok(generate_proposals(&segments, frame, &mask, cfg)))?;
        let assoc = &mut self.associator;
        let association = timed(tm, Stage::Association, t, || assoc.step(frame, &proposals))?;

        let (mut flow, mut mof, mut descriptors) = (None, None, Vec::new());
        if let Some(prev) = self.recent.back() {
            let params = FlowParams {
                levels: cfg.flow_levels,
                iterations: cfg.flow_iterations,
                smoothness: cfg.flow_smoothness,
            };
            let f = timed(tm, Stage::Flow, t, || compute_flow(prev, frame, &params))?;
            let mut window: Vec<&Frame> = self.recent.iter().collect();
            window.push(frame);
            let sal = timed(tm, Stage::Saliency, t, || compute_saliency(&window, cfg.saliency_sigma))?;
            let m = timed(tm, Stage::Modulation, t, || modulate(&f, &sal, compute_tau(&sal, cfg.alpha)))?;
            let dp = DescriptorParams {
                neighbors: cfg.neighbors,
                n_bins: cfg.n_bins,
                zeta: cfg.zeta,
            };
            descriptors = timed(tm, Stage::Descriptors, t, || build_all(&association.observers, &m, &dp))?;
            flow = Some(f);
            mof = Some(m);
        }
        let prev_desc = &self.prev_descriptors;
        let (fa_raw, matched) = timed(tm, Stage::Scoring, t, || frame_abnormality_raw(prev_desc, &descriptors))?;

        self.prev_descriptors = descriptors.clone();
        if self.recent.len() == 2 {
            self.recent.pop_front();
        }
        self.recent.push_back(frame.clone());
        self.timings.frames += 1;
        self.timings.wall += start.elapsed();
        Ok(FrameOutput {
            index: t,
            mask,
            proposals,
            association,
            flow,
            mof,
            descriptors,
            fa_raw,
            matched,
        })
    }
}

/// Optional debug artifacts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DumpSet {
    pub masks: bool,
    pub flow: bool,
    pub pools: bool,
    pub descriptors: bool,
    pub proposals: bool,
}

impl DumpSet {
    pub const NAMES: [&'static str; 5] = ["masks", "flow", "pools", "descriptors", "proposals"];

    /// Parses a comma-separated list such as `masks,flow`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut d = DumpSet::default();
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "masks" => d.masks = true,
                "flow" => d.flow = true,
                "pools" => d.pools = true,
                "descriptors" => d.descriptors = true,
                "proposals" => d.proposals = true,
                "all" => {
                    d = DumpSet { masks: true, flow: true, pools: true, descriptors: true, proposals: true };
                }
                other => {
                    return Err(Error::Parameter(format!(
                        "unknown dump `{other}` (expected one of {})",
                        Self::NAMES.join(", ")
                    )))
                }
            }
        }
        Ok(d)
    }

    pub fn enabled(&self) -> Vec<&'static str> {
        let flags = [self.masks, self.flow, self.pools, self.descriptors, self.proposals];
        Self::NAMES.iter().zip(flags).filter(|(_, f)| *f).map(|(n, _)| *n).collect()
    }
}

/// Inputs and switches of one batch run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    /// Frame directory, or a scene script file that is rendered first.
    pub input: PathBuf,
    pub config: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out: PathBuf,
    pub dumps: DumpSet,
    /// Overrides the noise seed of a scene script input.
    pub seed: Option<u64>,
    pub bench: bool,
}

impl RunManifest {
    pub fn new(input: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            config: None,
            labels: None,
            out: out.into(),
            dumps: DumpSet::default(),
            seed: None,
            bench: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LabelSource {
    File(PathBuf),
    Script,
    Absent,
}

/// Outcome of [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub series: AnomalyScoreSeries,
    pub labels: LabelSource,
    pub metrics: Option<Metrics>,
    /// Why metrics are missing although labels were given.
    pub metrics_note: Option<String>,
    pub timings: StageTimings,
    /// Pool events over the whole run.
    pub pool_events: Vec<PoolEvent>,
    /// Largest template count any pool reached.
    pub max_pool_templates: usize,
}

struct Loaded {
    frames: FrameSequence,
    script_labels: Option<Vec<u8>>,
}

fn load_input(m: &RunManifest) -> Result<Loaded> {
    if m.input.is_file() {
        let mut script = SceneScript::from_file(&m.input)?;
        if let Some(seed) = m.seed {
            script.seed = seed;
        }
        let (frames, labels, _) = script.render_default()?;
        Ok(Loaded { frames, script_labels: Some(labels) })
    } else if m.input.is_dir() {
        Ok(Loaded { frames: load_sequence(&m.input)?, script_labels: None })
    } else {
        Err(Error::EmptyInput(m.input.clone()))
    }
}

/// Runs the detector over a whole sequence and returns per-frame outputs
/// through `sink`.
pub fn detect_sequence(
    frames: &FrameSequence,
    cfg: &PipelineConfig,
    mut sink: impl FnMut(&FrameOutput, &Associator) -> Result<()>,
) -> Result<(Vec<(f64, usize)>, StageTimings)> {
    let first = frames.iter().next().ok_or_else(|| Error::InvalidFrame("empty sequence".into()))?;
    let mut det = Detector::new(cfg, first.width(), first.height())?;
    let mut raw = Vec::with_capacity(frames.len());
    for frame in frames.iter() {
        let out = det.process(frame)?;
        sink(&out, det.associator())?;
        raw.push((out.fa_raw, out.matched));
    }
    Ok((raw, det.timings().clone()))
}

fn f32_planes(u: &[f64], v: &[f64]) -> Vec<u8> {
    u.iter().chain(v).flat_map(|&x| (x as f32).to_le_bytes()).collect()
}

fn magnitude_image(u: &[f64], v: &[f64]) -> Vec<u8> {
    let mag: Vec<f64> = u.iter().zip(v).map(|(a, b)| a.hypot(*b)).collect();
    let max = mag.iter().cloned().fold(0.0, f64::max);
    mag.iter()
        .map(|m| if max > 0.0 { (255.0 * m / max).round() as u8 } else { 0 })
        .collect()
}

struct Dumper {
    set: DumpSet,
    dir: PathBuf,
    pools: String,
    descriptors: String,
    proposals: String,
}

impl Dumper {
    fn new(set: DumpSet, out: &Path) -> Result<Self> {
        let dir = out.join("dumps");
        if set.masks {
            fs::create_dir_all(dir.join("masks"))?;
        }
        if set.flow {
            fs::create_dir_all(dir.join("flow"))?;
        }
        if set.pools || set.descriptors || set.proposals {
            fs::create_dir_all(&dir)?;
        }
        Ok(Self {
            set,
            dir,
            pools: "frame_index,pool,action,x,y,w,h,quality,templates\n".into(),
            descriptors: "frame_index,observer,neighbors,weights,features\n".into(),
            proposals: "frame_index,x,y,w,h,phi,psi\n".into(),
        })
    }

    fn frame(&mut self, out: &FrameOutput) -> Result<()> {
        let t = out.index;
        if self.set.masks {
            let m = &out.mask;
            write_pbm(&self.dir.join(format!("masks/frame_{t:05}.pbm")), m.width, m.height, &m.bits)?;
        }
        if self.set.flow {
            if let (Some(f), Some(m)) = (&out.flow, &out.mof) {
                fs::write(self.dir.join(format!("flow/flow_{t:05}.f32")), f32_planes(&f.u, &f.v))?;
                fs::write(self.dir.join(format!("flow/mof_{t:05}.f32")), f32_planes(&m.u, &m.v))?;
                write_pgm(
                    &self.dir.join(format!("flow/mof_{t:05}.pgm")),
                    m.width,
                    m.height,
                    &magnitude_image(&m.u, &m.v),
                )?;
            }
        }
        if self.set.pools {
            for e in &out.association.events {
                let b = e.bbox;
                let _ = writeln!(
                    self.pools,
                    "{t},{},{},{},{},{},{},{:.6},{}",
                    e.pool, e.action, b.x, b.y, b.w, b.h, e.quality, e.templates
                );
            }
        }
        if self.set.descriptors {
            for d in &out.descriptors {
                let join = |it: Vec<String>| it.join(";");
                let _ = writeln!(
                    self.descriptors,
                    "{t},{},{},{},{}",
                    d.observer,
                    join(d.neighbors.iter().map(|n| n.to_string()).collect()),
                    join(d.weights.iter().map(|w| format!("{w:.6}")).collect()),
                    join(d.features.iter().flatten().map(|f| format!("{f:.6}")).collect()),
                );
            }
        }
        if self.set.proposals {
            for p in &out.proposals {
                let b = p.bbox;
                let _ = writeln!(self.proposals, "{t},{},{},{},{},{:.6},{:.6}", b.x, b.y, b.w, b.h, p.phi, p.psi);
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if self.set.pools {
            fs::write(self.dir.join("pools.csv"), self.pools)?;
        }
        if self.set.descriptors {
            fs::write(self.dir.join("descriptors.csv"), self.descriptors)?;
        }
        if self.set.proposals {
            fs::write(self.dir.join("proposals.csv"), self.proposals)?;
        }
        Ok(())
    }
}

/// Full batch run: detection, smoothing, classification, optional metrics,
/// and all output files under `manifest.out`.
pub fn run_pipeline(manifest: &RunManifest) -> Result<RunSummary> {
    let cfg = match &manifest.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    cfg.validate()?;
    fs::create_dir_all(&manifest.out)?;
    let loaded = load_input(manifest)?;
    let frames = &loaded.frames;

    let (labels, label_source) = match (&manifest.labels, &loaded.script_labels) {
        (Some(p), _) => (Some(load_labels(p)?), LabelSource::File(p.clone())),
        (None, Some(l)) => (Some(l.clone()), LabelSource::Script),
        (None, None) => (None, LabelSource::Absent),
    };
    if let Some(l) = &labels {
        if l.len() != frames.len() {
            return Err(Error::Labels {
                line: 0,
                message: format!("{} labels for {} frames", l.len(), frames.len()),
            });
        }
    }

    let mut dumper = Dumper::new(manifest.dumps, &manifest.out)?;
    let mut pool_events = Vec::new();
    let mut max_pool_templates = 0;
    let (raw, timings) = detect_sequence(frames, &cfg, |out, assoc| {
        dumper.frame(out)?;
        pool_events.extend(out.association.events.iter().cloned());
        max_pool_templates = assoc.pools().iter().map(|p| p.len()).fold(max_pool_templates, usize::max);
        Ok(())
    })?;
    dumper.finish()?;

    let series = AnomalyScoreSeries::build(&raw, cfg.warmup_frames, cfg.filter_half_length, cfg.anomaly_threshold)?;
    fs::write(manifest.out.join("scores.csv"), series.to_csv())?;

    let (mut metrics, mut metrics_note) = (None, None);
    if let Some(l) = &labels {
        let scores: Vec<f64> = series.scored().iter().map(|f| f.fa_smoothed).collect();
        match evaluate(&scores, &l[series.warmup..]) {
            Ok(m) => {
                fs::write(manifest.out.join("roc.csv"), roc_to_csv(&m.curve))?;
                metrics = Some(m);
            }
            Err(Error::Evaluation(msg)) => metrics_note = Some(msg),
            Err(e) => return Err(e),
        }
    }

    let summary = RunSummary {
        series,
        labels: label_source,
        metrics,
        metrics_note,
        timings,
        pool_events,
        max_pool_templates,
    };
    fs::write(manifest.out.join("metrics.txt"), metrics_report(&summary))?;
    fs::write(manifest.out.join("manifest.txt"), manifest_text(manifest, &cfg, frames, &summary))?;
    if manifest.bench {
        fs::write(manifest.out.join("bench.txt"), summary.timings.table())?;
    }
    Ok(summary)
}

pub fn metrics_report(s: &RunSummary) -> String {
    let mut r = String::new();
    let frames = &s.series.frames;
    let scored = s.series.scored();
    let _ = writeln!(r, "frames = {}", frames.len());
    if s.series.warmup > 0 {
        let _ = writeln!(
            r,
            "warmup_excluded = {} (frames 0..{})",
            s.series.warmup,
            s.series.warmup - 1
        );
    } else {
        let _ = writeln!(r, "warmup_excluded = 0");
    }
    let _ = writeln!(r, "evaluated_frames = {}", scored.len());
    let _ = writeln!(r, "low_confidence_frames = {}", scored.iter().filter(|f| f.matched == 0).count());
    let _ = writeln!(
        r,
        "flagged_anomalous = {}",
        scored.iter().filter(|f| f.flag == FrameFlag::Anomalous).count()
    );
    match s.series.normalization {
        Some((lo, hi)) => {
            let _ = writeln!(r, "normalization = {lo:.9} {hi:.9}");
        }
        None => {
            let _ = writeln!(r, "normalization = constant series");
        }
    }
    let _ = match &s.labels {
        LabelSource::File(p) => writeln!(r, "labels = {}", p.display()),
        LabelSource::Script => writeln!(r, "labels = scene script"),
        LabelSource::Absent => writeln!(r, "labels = absent"),
    };
    match (&s.metrics, &s.metrics_note) {
        (Some(m), _) => {
            let _ = writeln!(r, "positives = {}", m.positives);
            let _ = writeln!(r, "negatives = {}", m.negatives);
            let _ = writeln!(r, "auc = {:.6}", m.auc);
            let _ = writeln!(r, "eer = {:.6}", m.eer);
        }
        (None, Some(note)) => {
            let _ = writeln!(r, "metrics = unavailable: {note}");
        }
        (None, None) => {
            let _ = writeln!(r, "metrics = absent (no labels)");
        }
    }
    r
}

fn manifest_text(m: &RunManifest, cfg: &PipelineConfig, frames: &FrameSequence, s: &RunSummary) -> String {
    let opt = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
    let first = frames.iter().next().expect("non-empty");
    let mut t = String::new();
    let _ = writeln!(t, "input = {}", m.input.display());
    let _ = writeln!(t, "config = {}", opt(&m.config));
    let _ = writeln!(t, "labels = {}", opt(&m.labels));
    let _ = writeln!(t, "out = {}", m.out.display());
    let dumps = m.dumps.enabled();
    let _ = writeln!(t, "dumps = {}", if dumps.is_empty() { "none".into() } else { dumps.join(",") });
    let _ = writeln!(t, "seed = {}", m.seed.map_or("none".into(), |s| s.to_string()));
    let _ = writeln!(t, "bench = {}", m.bench);
    let _ = writeln!(t, "frames = {}", frames.len());
    let _ = writeln!(t, "frame_size = {}x{}", first.width(), first.height());
    let _ = writeln!(t, "\n# configuration");
    t.push_str(&cfg.to_text());
    let _ = writeln!(t, "\n# stage timings, ms per frame");
    for st in Stage::ALL {
        let _ = writeln!(t, "time.{} = {:.3}", st.name(), s.timings.ms_per_frame(st));
    }
    let per = if s.timings.frames == 0 { 0.0 } else { s.timings.sum().as_secs_f64() * 1e3 / s.timings.frames as f64 };
    let _ = writeln!(t, "time.total = {per:.3}");
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_list_parsing() {
        let d = DumpSet::parse("masks, pools").unwrap();
        assert!(d.masks && d.pools && !d.flow);
        assert_eq!(d.enabled(), vec!["masks", "pools"]);
        assert_eq!(DumpSet::parse("all").unwrap().enabled().len(), 5);
        assert!(DumpSet::parse("masks,bogus").is_err());
        assert_eq!(DumpSet::parse("").unwrap(), DumpSet::default());
    }

    #[test]
    fn planes_are_little_endian_u_then_v() {
        let b = f32_planes(&[1.0, 2.0], &[-1.0, 0.5]);
        assert_eq!(b.len(), 16);
        assert_eq!(&b[0..4], &1.0f32.to_le_bytes());
        assert_eq!(&b[8..12], &(-1.0f32).to_le_bytes());
    }

    #[test]
    fn static_scene_stays_normal() {
        let script = SceneScript::empty(48, 32, 45);
        let (frames, _, _) = script.render_default().unwrap();
        let cfg = PipelineConfig { flow_iterations: 20, ..Default::default() };
        let (raw, timings) = detect_sequence(&frames, &cfg, |_, _| Ok(())).unwrap();
        assert_eq!(timings.frames, 45);
        let series = AnomalyScoreSeries::build(&raw, cfg.warmup_frames, 3, 0.5).unwrap();
        assert!(series.scored().iter().all(|f| f.flag == FrameFlag::Normal));
    }

    #[test]
    fn dimension_change_is_stage_tagged() {
        let cfg = PipelineConfig::default();
        let mut det = Detector::new(&cfg, 32, 32).unwrap();
        let f = Frame::filled(40, 32, 10, 0).unwrap();
        let err = det.process(&f).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "background", frame: 0, .. }));
    }
}
