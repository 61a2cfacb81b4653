//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any gating criterion fails.
//!
//! The dataset check is informational: point `CROWD_DATASET_FRAMES` at a
//! frame directory and `CROWD_DATASET_LABELS` at its label file to run it.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crowd_anomaly::association::dct::{dct3, idct3, Volume};
use crowd_anomaly::association::PoolAction;
use crowd_anomaly::descriptors::linking_weights;
use crowd_anomaly::eval::{auc, eer, roc, RocPoint};
use crowd_anomaly::motionfield::modulation_factor;
use crowd_anomaly::pipeline::detect_sequence;
use crowd_anomaly::scoring::{emd, filter_weights, smooth, Signature};
use crowd_anomaly::synth::SceneScript;
use crowd_anomaly::{run_pipeline, PipelineConfig, RunManifest};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed < limit
}

fn naive_dct3(v: &Volume) -> Vec<f64> {
    let (w, h, d) = (v.width, v.height, v.depth);
    let a = |k: usize, n: usize| if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
    let pi = std::f64::consts::PI;
    let mut out = vec![0.0; w * h * d];
    for kt in 0..d {
        for ky in 0..h {
            for kx in 0..w {
                let mut s = 0.0;
                for t in 0..d {
                    for y in 0..h {
                        for x in 0..w {
                            s += v.data[(t * h + y) * w + x]
                                * (pi * (2 * x + 1) as f64 * kx as f64 / (2 * w) as f64).cos()
                                * (pi * (2 * y + 1) as f64 * ky as f64 / (2 * h) as f64).cos()
                                * (pi * (2 * t + 1) as f64 * kt as f64 / (2 * d) as f64).cos();
                        }
                    }
                }
                out[(kt * h + ky) * w + kx] = a(kx, w) * a(ky, h) * a(kt, d) * s;
            }
        }
    }
    out
}

fn dct_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut round, mut naive) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let (w, h, d) = (rng.gen_range(1..=8), rng.gen_range(1..=8), rng.gen_range(1..=7));
        let mut v = Volume::zeros(w, h, d);
        for x in &mut v.data {
            *x = rng.gen_range(-1.0..1.0);
        }
        let c = dct3(&v);
        let back = idct3(&c);
        round = v.data.iter().zip(&back.data).map(|(a, b)| (a - b).abs()).fold(round, f64::max);
        naive = c.data.iter().zip(naive_dct3(&v)).map(|(a, b)| (a - b).abs()).fold(naive, f64::max);
    }
    let t = start.elapsed();
    outcome(
        round < 1e-9 && naive < 1e-9 && within(t, Duration::from_secs(10)),
        format!("round-trip {round:.2e}, vs naive {naive:.2e}, {:.2} s", t.as_secs_f64()),
    )
}

fn emd_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (wa, fa) = common::random_signature(&mut rng, 5);
        let (wb, fb) = common::random_signature(&mut rng, 5);
        let got = emd(&Signature::new(wa.clone(), fa.clone()).unwrap(), &Signature::new(wb.clone(), fb.clone()).unwrap()).unwrap();
        worst = worst.max((got - common::emd_lp(&wa, &fa, &wb, &fb)).abs());
    }
    let (mut sym, mut ident, mut tri) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for _ in 0..100 {
        let s: Vec<Signature> = (0..3)
            .map(|_| {
                let (w, f) = common::random_signature(&mut rng, 5);
                Signature::new(w, f).unwrap()
            })
            .collect();
        let ab = emd(&s[0], &s[1]).unwrap();
        sym = sym.max((ab - emd(&s[1], &s[0]).unwrap()).abs());
        ident = ident.max(emd(&s[0], &s[0]).unwrap());
        tri = tri.max(ab - emd(&s[0], &s[2]).unwrap() - emd(&s[2], &s[1]).unwrap());
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-6 && sym <= 1e-9 && ident <= 1e-9 && tri <= 1e-9 && within(t, Duration::from_secs(30)),
        format!(
            "vs LP {worst:.2e}, asymmetry {sym:.2e}, self {ident:.2e}, triangle excess {tri:.2e}, {:.2} s",
            t.as_secs_f64()
        ),
    )
}

fn modulation_bounds() -> Outcome {
    let (lo, hi) = ((-0.5f64).exp(), 0.5f64.exp());
    let n = 1000;
    let grid = |i: usize| i as f64 / (n - 1) as f64;
    let (mut in_range, mut monotone) = (true, true);
    let (mut fmin, mut fmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for j in 0..n {
        let tau = grid(j);
        let mut prev: Option<(bool, f64)> = None;
        for i in 0..n {
            let s = grid(i);
            let f = modulation_factor(s, tau);
            fmin = fmin.min(f);
            fmax = fmax.max(f);
            in_range &= f >= lo && f <= hi;
            let branch = s > tau;
            if let Some((pb, pf)) = prev {
                if pb == branch && f < pf {
                    monotone = false;
                }
            }
            prev = Some((branch, f));
        }
    }
    outcome(in_range && monotone, format!("F in [{fmin:.6}, {fmax:.6}], per-branch monotone {monotone}"))
}

fn weight_filter_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut sum_err = 0.0f64;
    for _ in 0..1000 {
        let len = rng.gen_range(1..=8);
        let dh: Vec<f64> = (0..len).map(|_| if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.0..20.0) }).collect();
        sum_err = sum_err.max((linking_weights(&dh).iter().sum::<f64>() - 1.0).abs());
    }
    let w = filter_weights(3);
    let taps = w == [0.125, 0.125, 0.125, 0.25, 0.125, 0.125, 0.125];
    let mut impulse = vec![0.0; 31];
    impulse[15] = 1.0;
    let resp = smooth(&impulse, 3).unwrap();
    let impulse_ok = resp[12..19] == w[..] && resp.iter().enumerate().all(|(i, &v)| (12..19).contains(&i) || v == 0.0);
    let constant_err = smooth(&vec![3.7; 50], 3).unwrap().iter().map(|v| (v - 3.7).abs()).fold(0.0, f64::max);
    outcome(
        sum_err < 1e-12 && taps && impulse_ok && constant_err < 1e-12,
        format!("weight sum error {sum_err:.1e}, taps {taps}, impulse {impulse_ok}, constant error {constant_err:.1e}"),
    )
}

fn scene_auc(name: &str, script: &SceneScript, min_auc: f64) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(format!("{name}.scene"));
    std::fs::write(&path, script.to_text()).unwrap();
    let start = Instant::now();
    let summary = match run_pipeline(&RunManifest::new(&path, dir.path().join("out"))) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("{name}: {e}")),
    };
    let t = start.elapsed();
    let Some(m) = summary.metrics else {
        return outcome(false, format!("{name}: no metrics"));
    };
    outcome(
        m.auc >= min_auc && within(t, Duration::from_secs(300)),
        format!("{name} AUC {:.4} (need >= {min_auc}), EER {:.4}, {:.1} s", m.auc, m.eer, t.as_secs_f64()),
    )
}

fn pool_lifecycle() -> Outcome {
    let script = SceneScript::occlusion();
    let (frames, _, tracks) = script.render_default().unwrap();
    let cfg = PipelineConfig::default();
    let (hide_from, hide_to) = SceneScript::OCCLUSION_HIDDEN;
    let walker = &tracks[0];
    // Pools observed on the walker, by frame.
    let mut on_walker: Vec<(usize, u64)> = Vec::new();
    let mut pruned: Vec<(usize, u64)> = Vec::new();
    let mut created: Vec<(usize, u64)> = Vec::new();
    let mut max_templates = 0;
    let mut empty_pool = false;
    let run = detect_sequence(&frames, &cfg, |out, assoc| {
        for o in &out.association.observers {
            if o.proposal.bbox.overlap_area(&walker[out.index]) * 2 > o.proposal.bbox.area() {
                on_walker.push((out.index, o.pool));
            }
        }
        for e in &out.association.events {
            match e.action {
                PoolAction::Pruned => pruned.push((out.index, e.pool)),
                PoolAction::Created => created.push((out.index, e.pool)),
                _ => {}
            }
        }
        for p in assoc.pools() {
            max_templates = max_templates.max(p.len());
            empty_pool |= p.is_empty();
        }
        Ok(())
    });
    if let Err(e) = run {
        return outcome(false, format!("run failed: {e}"));
    }
    let before = on_walker.iter().rfind(|(t, _)| *t < hide_from).map(|p| p.1);
    let after = on_walker.iter().find(|(t, _)| *t > hide_to).copied();
    let Some(old) = before else {
        return outcome(false, "walker never observed before occlusion");
    };
    let Some((t_after, new)) = after else {
        return outcome(false, "walker never observed after occlusion");
    };
    let was_pruned = pruned.iter().any(|(_, id)| *id == old);
    let fresh = new != old && created.iter().any(|(t, id)| *id == new && *t >= hide_from);
    let bounded = max_templates <= cfg.max_templates && !empty_pool;
    outcome(
        was_pruned && fresh && bounded,
        format!(
            "pool {old} pruned {was_pruned}; walker back in pool {new} at frame {t_after} (new id {fresh}); max templates {max_templates} (K = {})",
            cfg.max_templates
        ),
    )
}

fn roc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(10..120);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..25)) * 0.1).collect();
        let labels = common::random_labels(&mut rng, n);
        let a = auc(&roc(&scores, &labels).unwrap());
        worst = worst.max((a - common::pairwise_auc(&scores, &labels)).abs());
    }
    let p = |fpr, tpr| RocPoint { fpr, tpr, threshold: 0.0 };
    // Crossing between (0, 0.5) and (0.5, 1): fpr = 1 - tpr at 0.25.
    let c1 = [p(0.0, 0.0), p(0.0, 0.5), p(0.5, 1.0), p(1.0, 1.0)];
    // Crossing between (0.2, 0.6) and (0.6, 0.9): solve 0.2 + 0.4 s = 1 - (0.6 + 0.3 s).
    let c2 = [p(0.0, 0.0), p(0.2, 0.6), p(0.6, 0.9), p(1.0, 1.0)];
    let s2 = 0.2 / 0.7;
    let eer_err = (eer(&c1) - 0.25).abs().max((eer(&c2) - (0.2 + 0.4 * s2)).abs());
    outcome(
        worst < 1e-9 && eer_err < 1e-9,
        format!("AUC vs rank statistic {worst:.1e}, EER error {eer_err:.1e}"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("occlusion.scene");
    std::fs::write(&path, SceneScript::occlusion().to_text()).unwrap();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out: PathBuf = dir.path().join(format!("run{k}"));
        if let Err(e) = run_pipeline(&RunManifest::new(&path, &out)) {
            return outcome(false, format!("run {k} failed: {e}"));
        }
        outputs.push(std::fs::read(out.join("scores.csv")).unwrap());
    }
    outcome(outputs[0] == outputs[1], format!("scores.csv {} bytes, identical {}", outputs[0].len(), outputs[0] == outputs[1]))
}

fn dataset_check() -> Option<String> {
    let frames = std::env::var_os("CROWD_DATASET_FRAMES")?;
    let dir = tempfile::tempdir().unwrap();
    let mut m = RunManifest::new(PathBuf::from(frames), dir.path().join("out"));
    m.labels = std::env::var_os("CROWD_DATASET_LABELS").map(PathBuf::from);
    Some(match run_pipeline(&m) {
        Ok(s) => match s.metrics {
            Some(mt) => format!("AUC {:.4}, EER {:.4}", mt.auc, mt.eer),
            None => "completed without metrics".into(),
        },
        Err(e) => format!("run failed: {e}"),
    })
}

type Check = Box<dyn Fn() -> Outcome>;

fn main() {
    let criteria: Vec<(&str, Check)> = vec![
        ("1 dct oracle", Box::new(dct_oracle)),
        ("2 emd oracle", Box::new(emd_oracle)),
        ("3 modulation bounds", Box::new(modulation_bounds)),
        ("4 weight and filter algebra", Box::new(weight_filter_algebra)),
        ("5a run-scene detection", Box::new(|| scene_auc("run-scene", &SceneScript::run_scene(), 0.90))),
        ("5b opposing-mover detection", Box::new(|| scene_auc("opposing-mover", &SceneScript::opposing_mover(), 0.85))),
        ("6 pool lifecycle", Box::new(pool_lifecycle)),
        ("7 roc oracle", Box::new(roc_oracle)),
        ("8 determinism", Box::new(determinism)),
    ];
    let mut failed = Vec::new();
    for (name, run) in &criteria {
        let o = run();
        println!("criterion {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(*name);
        }
    }
    match dataset_check() {
        Some(detail) => println!("criterion 9 dataset check: INFO ({detail})"),
        None => println!("criterion 9 dataset check: INFO (skipped, CROWD_DATASET_FRAMES not set)"),
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {}", failed.join(", "));
        std::process::exit(1);
    }
}
