//! Frame-level ROC, AUC and EER, plus the label file format.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Frames scoring at least this value are predicted anomalous.
    pub threshold: f64,
}

fn class_counts(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Evaluation(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Evaluation("score is NaN".into()));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Evaluation(format!("label {l} is not 0 or 1")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Evaluation("ROC needs both positive and negative frames".into()));
    }
    Ok((pos, neg))
}

/// One point per distinct score, thresholds descending, starting at (0, 0).
/// The lowest threshold always yields (1, 1).
pub fn roc(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: s,
        });
    }
    Ok(points)
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &[RocPoint]) -> f64 {
    curve
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// False positive rate where the curve crosses `fpr = 1 - tpr`, linearly
/// interpolated between neighbouring points.
pub fn eer(curve: &[RocPoint]) -> f64 {
    let g = |p: &RocPoint| p.fpr + p.tpr - 1.0;
    for w in curve.windows(2) {
        let (g0, g1) = (g(&w[0]), g(&w[1]));
        if g0 == 0.0 {
            return w[0].fpr;
        }
        if g0 < 0.0 && g1 >= 0.0 {
            let t = -g0 / (g1 - g0);
            return w[0].fpr + t * (w[1].fpr - w[0].fpr);
        }
    }
    curve.last().map_or(0.5, |p| p.fpr)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn mann_whitney_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // Average ranks over tie groups.
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < order.len() {
        let mut e = k;
        while e < order.len() && scores[order[e]] == scores[order[k]] {
            e += 1;
        }
        let avg = (k + 1 + e) as f64 / 2.0;
        rank_sum += avg * order[k..e].iter().filter(|&&i| labels[i] == 1).count() as f64;
        k = e;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

/// Parses `frame_index,label` lines. An optional header, blank lines and
/// `#` comments are skipped. Indices must run 0..N without gaps.
pub fn parse_labels(text: &str) -> Result<Vec<u8>> {
    let mut entries: Vec<(usize, u8, usize)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |m: String| Error::Labels { line: line_no, message: m };
        let mut parts = line.split(',').map(str::trim);
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err(format!("expected `frame_index,label`, got `{line}`")));
        };
        if entries.is_empty() && a.parse::<usize>().is_err() && a.chars().any(char::is_alphabetic) {
            continue;
        }
        let idx: usize = a.parse().map_err(|_| err(format!("bad frame index `{a}`")))?;
        let label: u8 = match b {
            "0" => 0,
            "1" => 1,
            _ => return Err(err(format!("label `{b}` is not 0 or 1"))),
        };
        if let Some(prev) = entries.iter().find(|e| e.0 == idx) {
            return Err(err(format!("frame {idx} already labelled on line {}", prev.2)));
        }
        entries.push((idx, label, line_no));
    }
    if entries.is_empty() {
        return Err(Error::Labels { line: 0, message: "no labels".into() });
    }
    entries.sort_by_key(|e| e.0);
    for (expect, e) in entries.iter().enumerate() {
        if e.0 != expect {
            return Err(Error::Labels {
                line: e.2,
                message: format!("frame {expect} missing"),
            });
        }
    }
    Ok(entries.into_iter().map(|e| e.1).collect())
}

pub fn load_labels(path: &Path) -> Result<Vec<u8>> {
    parse_labels(&std::fs::read_to_string(path)?)
}

pub fn labels_to_csv(labels: &[u8]) -> String {
    let mut out = String::from("frame_index,label\n");
    for (i, l) in labels.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub auc: f64,
    pub eer: f64,
    pub positives: usize,
    pub negatives: usize,
    pub curve: Vec<RocPoint>,
}

pub fn evaluate(scores: &[f64], labels: &[u8]) -> Result<Metrics> {
    let curve = roc(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l == 1).count();
    Ok(Metrics {
        auc: auc(&curve),
        eer: eer(&curve),
        positives,
        negatives: labels.len() - positives,
        curve,
    })
}

pub fn roc_to_csv(curve: &[RocPoint]) -> String {
    let mut out = String::from("fpr,tpr,threshold\n");
    for p in curve {
        out.push_str(&format!("{:.9},{:.9},{}\n", p.fpr, p.tpr, if p.threshold.is_infinite() { "inf".to_string() } else { format!("{:.9}", p.threshold) }));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn brute_force(scores: &[f64], labels: &[u8]) -> Vec<(f64, f64)> {
        let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
        let neg = labels.len() as f64 - pos;
        let mut th: Vec<f64> = scores.to_vec();
        th.sort_by(|a, b| b.partial_cmp(a).unwrap());
        th.dedup();
        let mut pts = vec![(0.0, 0.0)];
        for t in th {
            let mut tp = 0.0;
            let mut fp = 0.0;
            for (s, l) in scores.iter().zip(labels) {
                if *s >= t {
                    if *l == 1 {
                        tp += 1.0;
                    } else {
                        fp += 1.0;
                    }
                }
            }
            pts.push((fp / neg, tp / pos));
        }
        pts
    }

    #[test]
    fn separating_scores() {
        let c = roc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap();
        assert!(c.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert_eq!(auc(&c), 1.0);
        assert_eq!(eer(&c), 0.0);
    }

    #[test]
    fn constant_scores() {
        let c = roc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!((c[1].fpr, c[1].tpr), (1.0, 1.0));
        assert_eq!(auc(&c), 0.5);
        assert_eq!(eer(&c), 0.5);
    }

    #[test]
    fn single_class_rejected() {
        assert!(roc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(roc(&[0.1, 0.2], &[0]).is_err());
    }

    #[test]
    fn matches_brute_force_thresholds() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let scores: Vec<f64> = (0..50).map(|_| f64::from(rng.gen_range(0..20)) / 4.0).collect();
            let mut labels: Vec<u8> = (0..50).map(|_| rng.gen_range(0..2)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let got: Vec<(f64, f64)> = roc(&scores, &labels).unwrap().iter().map(|p| (p.fpr, p.tpr)).collect();
            assert_eq!(got, brute_force(&scores, &labels));
        }
    }

    #[test]
    fn auc_matches_rank_statistic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let n = rng.gen_range(10..80);
            let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..15))).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let c = roc(&scores, &labels).unwrap();
            assert!((auc(&c) - mann_whitney_auc(&scores, &labels).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn hand_built_eer() {
        let p = |fpr, tpr| RocPoint { fpr, tpr, threshold: 0.0 };
        let c = [p(0.0, 0.0), p(0.0, 0.5), p(0.5, 0.9), p(1.0, 1.0)];
        // Between (0, 0.5) and (0.5, 0.9): g goes -0.5 -> 0.4, t = 5/9.
        assert!((eer(&c) - 0.5 * 5.0 / 9.0).abs() < 1e-12);
        let c = [p(0.0, 0.0), p(0.0, 0.5), p(0.5, 1.0), p(1.0, 1.0)];
        assert!((eer(&c) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn label_files() {
        assert_eq!(parse_labels("frame_index,label\n0,0\n1,1\n2,0\n").unwrap(), vec![0, 1, 0]);
        assert_eq!(parse_labels("1,1\n0,0\n").unwrap(), vec![0, 1]);
        assert!(matches!(parse_labels("0,0\n0,1\n"), Err(Error::Labels { line: 2, .. })));
        assert!(matches!(parse_labels("0,0\n1,2\n"), Err(Error::Labels { line: 2, .. })));
        assert!(parse_labels("0,0\n2,1\n").is_err());
        assert!(parse_labels("").is_err());
        assert!(parse_labels("0;1\n").is_err());
        let l = vec![0, 0, 1, 1, 0];
        assert_eq!(parse_labels(&labels_to_csv(&l)).unwrap(), l);
    }

    #[test]
    fn roc_csv_format() {
        let c = roc(&[0.1, 0.9], &[0, 1]).unwrap();
        let csv = roc_to_csv(&c);
        assert!(csv.starts_with("fpr,tpr,threshold\n0.000000000,0.000000000,inf\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    proptest! {
        #[test]
        fn curve_is_monotone(scores in prop::collection::vec(0.0f64..1.0, 4..60), seed in 0u64..1000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut labels: Vec<u8> = scores.iter().map(|_| rng.gen_range(0..2)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let c = roc(&scores, &labels).unwrap();
            for w in c.windows(2) {
                prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
                prop_assert!(w[1].threshold < w[0].threshold);
            }
            let last = c.last().unwrap();
            prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        }

        #[test]
        fn auc_invariant_under_increasing_maps(scores in prop::collection::vec(-3.0f64..3.0, 4..60), seed in 0u64..1000) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut labels: Vec<u8> = scores.iter().map(|_| rng.gen_range(0..2)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let a = auc(&roc(&scores, &labels).unwrap());
            let mapped: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
            let b = auc(&roc(&mapped, &labels).unwrap());
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
