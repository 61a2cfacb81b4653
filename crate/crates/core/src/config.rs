//! Pipeline configuration and the line-based `key = value` dialect used for
//! config files and scene scripts.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Every tunable of the detection pipeline.
///
/// The background-model and flow defaults are conventional settings rather
/// than tuned values.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Minimum foreground fraction of a proposal box.
    pub phi_thres: f64,
    /// Minimum normalized entropy of a proposal patch.
    pub psi_thres: f64,
    /// Maximum number of templates kept in one pool (K).
    pub max_templates: usize,
    /// A pool is dropped once it has gone unassociated for more than this
    /// many frames (ΔT).
    pub stale_frames: usize,
    /// Neighbor count per observer (M).
    pub neighbors: usize,
    /// CDF mass defining the saliency threshold τ.
    pub alpha: f64,
    /// Fraction of orientation bins kept around the dominant bin.
    pub zeta: f64,
    /// Half length of the temporal smoothing filter.
    pub filter_half_length: usize,
    pub anomaly_threshold: f64,
    pub n_bins: usize,
    pub template_width: usize,
    pub template_height: usize,
    /// Fraction of DCT indices kept per axis by the low-pass approximation.
    pub low_freq_cutoff: f64,
    pub nms_iou: f64,

    pub gmm_components: usize,
    pub gmm_learning_rate: f64,
    pub gmm_match_sigma: f64,
    pub gmm_background_ratio: f64,
    pub gmm_initial_variance: f64,
    pub gmm_variance_floor: f64,
    /// Frames excluded from verdicts and metrics while the background model
    /// converges.
    pub warmup_frames: usize,
    pub min_segment_size: usize,

    pub flow_levels: usize,
    pub flow_iterations: usize,
    pub flow_smoothness: f64,
    pub saliency_sigma: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            phi_thres: 0.5,
            psi_thres: 0.7,
            max_templates: 6,
            stale_frames: 4,
            neighbors: 5,
            alpha: 0.70,
            zeta: 0.9,
            filter_half_length: 3,
            anomaly_threshold: 0.5,
            n_bins: 16,
            template_width: 24,
            template_height: 56,
            low_freq_cutoff: 0.25,
            nms_iou: 0.3,
            gmm_components: 4,
            gmm_learning_rate: 0.01,
            gmm_match_sigma: 2.5,
            gmm_background_ratio: 0.7,
            gmm_initial_variance: 225.0,
            gmm_variance_floor: 16.0,
            warmup_frames: 30,
            min_segment_size: 16,
            flow_levels: 3,
            flow_iterations: 100,
            flow_smoothness: 0.1,
            saliency_sigma: 1.5,
        }
    }
}

/// One `key = value` entry with its 1-based source line.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Splits text into `key = value` entries. Blank lines and `#` comments are
/// skipped.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
            line: i + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config {
                line: i + 1,
                message: "empty key".into(),
            });
        }
        out.push(Entry {
            line: i + 1,
            key: key.to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(out)
}

pub(crate) fn parse_value<T: std::str::FromStr>(entry: &Entry) -> Result<T> {
    entry.value.parse().map_err(|_| Error::Config {
        line: entry.line,
        message: format!("invalid value `{}` for `{}`", entry.value, entry.key),
    })
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_overrides(&text)
    }

    /// Applies overrides from config text on top of the defaults.
    pub fn from_str_overrides(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for entry in parse_entries(text)? {
            cfg.set(&entry)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, e: &Entry) -> Result<()> {
        match e.key.as_str() {
            "phi_thres" => self.phi_thres = parse_value(e)?,
            "psi_thres" => self.psi_thres = parse_value(e)?,
            "max_templates" | "K" => self.max_templates = parse_value(e)?,
            "stale_frames" | "delta_T" => self.stale_frames = parse_value(e)?,
            "neighbors" | "M" => self.neighbors = parse_value(e)?,
            "alpha" => {
                let a: f64 = parse_value(e)?;
                // Accept the percentage spelling (alpha = 70).
                self.alpha = if a > 1.0 && a <= 100.0 { a / 100.0 } else { a };
            }
            "zeta" => self.zeta = parse_value(e)?,
            "filter_half_length" | "n" => self.filter_half_length = parse_value(e)?,
            "anomaly_threshold" => self.anomaly_threshold = parse_value(e)?,
            "n_bins" => self.n_bins = parse_value(e)?,
            "template_width" => self.template_width = parse_value(e)?,
            "template_height" => self.template_height = parse_value(e)?,
            "template_size" => {
                let (w, h) = e.value.split_once('x').ok_or_else(|| Error::Config {
                    line: e.line,
                    message: format!("template_size must look like 24x56, got `{}`", e.value),
                })?;
                let bad = || Error::Config {
                    line: e.line,
                    message: format!("invalid template_size `{}`", e.value),
                };
                self.template_width = w.trim().parse().map_err(|_| bad())?;
                self.template_height = h.trim().parse().map_err(|_| bad())?;
            }
            "low_freq_cutoff" => self.low_freq_cutoff = parse_value(e)?,
            "nms_iou" => self.nms_iou = parse_value(e)?,
            "gmm_components" => self.gmm_components = parse_value(e)?,
            "gmm_learning_rate" => self.gmm_learning_rate = parse_value(e)?,
            "gmm_match_sigma" => self.gmm_match_sigma = parse_value(e)?,
            "gmm_background_ratio" => self.gmm_background_ratio = parse_value(e)?,
            "gmm_initial_variance" => self.gmm_initial_variance = parse_value(e)?,
            "gmm_variance_floor" => self.gmm_variance_floor = parse_value(e)?,
            "warmup_frames" => self.warmup_frames = parse_value(e)?,
            "min_segment_size" => self.min_segment_size = parse_value(e)?,
            "flow_levels" => self.flow_levels = parse_value(e)?,
            "flow_iterations" => self.flow_iterations = parse_value(e)?,
            "flow_smoothness" => self.flow_smoothness = parse_value(e)?,
            "saliency_sigma" => self.saliency_sigma = parse_value(e)?,
            other => {
                return Err(Error::Config {
                    line: e.line,
                    message: format!("unknown key `{other}`"),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Parameter(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("phi_thres", self.phi_thres)?;
        unit("psi_thres", self.psi_thres)?;
        unit("zeta", self.zeta)?;
        unit("nms_iou", self.nms_iou)?;
        unit("gmm_background_ratio", self.gmm_background_ratio)?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Parameter(format!("alpha = {} outside (0, 1)", self.alpha)));
        }
        if !(self.low_freq_cutoff > 0.0 && self.low_freq_cutoff <= 1.0) {
            return Err(Error::Parameter(format!(
                "low_freq_cutoff = {} outside (0, 1]",
                self.low_freq_cutoff
            )));
        }
        if !(self.gmm_learning_rate > 0.0 && self.gmm_learning_rate < 1.0) {
            return Err(Error::Parameter("gmm_learning_rate must be in (0, 1)".into()));
        }
        if self.gmm_variance_floor <= 0.0 || self.gmm_initial_variance < self.gmm_variance_floor {
            return Err(Error::Parameter(
                "gmm variances must satisfy 0 < floor <= initial".into(),
            ));
        }
        if self.max_templates == 0 || self.gmm_components == 0 || self.flow_levels == 0 {
            return Err(Error::Parameter(
                "max_templates, gmm_components and flow_levels must be >= 1".into(),
            ));
        }
        if self.gmm_components > crate::background::MAX_COMPONENTS {
            return Err(Error::Parameter(format!(
                "gmm_components must be <= {}",
                crate::background::MAX_COMPONENTS
            )));
        }
        if self.filter_half_length == 0 {
            return Err(Error::Parameter("filter_half_length must be >= 1".into()));
        }
        if self.n_bins < 4 {
            return Err(Error::Parameter("n_bins must be >= 4".into()));
        }
        if self.template_width < 4 || self.template_height < 4 {
            return Err(Error::Parameter("template size must be at least 4x4".into()));
        }
        if !(self.anomaly_threshold > 0.0 && self.anomaly_threshold < 1.0) {
            return Err(Error::Parameter("anomaly_threshold must be in (0, 1)".into()));
        }
        Ok(())
    }

    /// Serializes in the same dialect `from_str_overrides` reads.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "phi_thres = {}", self.phi_thres);
        let _ = writeln!(s, "psi_thres = {}", self.psi_thres);
        let _ = writeln!(s, "max_templates = {}", self.max_templates);
        let _ = writeln!(s, "stale_frames = {}", self.stale_frames);
        let _ = writeln!(s, "neighbors = {}", self.neighbors);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "zeta = {}", self.zeta);
        let _ = writeln!(s, "filter_half_length = {}", self.filter_half_length);
        let _ = writeln!(s, "anomaly_threshold = {}", self.anomaly_threshold);
        let _ = writeln!(s, "n_bins = {}", self.n_bins);
        let _ = writeln!(s, "template_width = {}", self.template_width);
        let _ = writeln!(s, "template_height = {}", self.template_height);
        let _ = writeln!(s, "low_freq_cutoff = {}", self.low_freq_cutoff);
        let _ = writeln!(s, "nms_iou = {}", self.nms_iou);
        let _ = writeln!(s, "gmm_components = {}", self.gmm_components);
        let _ = writeln!(s, "gmm_learning_rate = {}", self.gmm_learning_rate);
        let _ = writeln!(s, "gmm_match_sigma = {}", self.gmm_match_sigma);
        let _ = writeln!(s, "gmm_background_ratio = {}", self.gmm_background_ratio);
        let _ = writeln!(s, "gmm_initial_variance = {}", self.gmm_initial_variance);
        let _ = writeln!(s, "gmm_variance_floor = {}", self.gmm_variance_floor);
        let _ = writeln!(s, "warmup_frames = {}", self.warmup_frames);
        let _ = writeln!(s, "min_segment_size = {}", self.min_segment_size);
        let _ = writeln!(s, "flow_levels = {}", self.flow_levels);
        let _ = writeln!(s, "flow_iterations = {}", self.flow_iterations);
        let _ = writeln!(s, "flow_smoothness = {}", self.flow_smoothness);
        let _ = writeln!(s, "saliency_sigma = {}", self.saliency_sigma);
        s
    }
}
