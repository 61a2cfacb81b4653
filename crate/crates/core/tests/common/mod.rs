//! Oracles shared by the integration suites. Nothing here calls into the
//! code paths it is used to check.

#![allow(dead_code)]

use rand::Rng;

/// Minimizes `c·x` subject to `A x = b`, `x >= 0` with `b >= 0`, using a
/// dense two-phase tableau simplex under Bland's rule.
pub fn lp_min(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> f64 {
    const TOL: f64 = 1e-11;
    let m = a.len();
    let n = c.len();
    let cols = n + m;
    // Tableau rows hold [x | artificials | rhs].
    let mut t: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut row = a[i].clone();
            row.extend((0..m).map(|k| if k == i { 1.0 } else { 0.0 }));
            row.push(b[i]);
            row
        })
        .collect();
    let mut basis: Vec<usize> = (n..cols).collect();

    fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], r: usize, col: usize) {
        let p = t[r][col];
        for v in t[r].iter_mut() {
            *v /= p;
        }
        let pr = t[r].clone();
        for (i, row) in t.iter_mut().enumerate() {
            if i != r && row[col] != 0.0 {
                let f = row[col];
                for (v, pv) in row.iter_mut().zip(&pr) {
                    *v -= f * pv;
                }
            }
        }
        basis[r] = col;
    }

    let run = |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, cost: &[f64], allowed: usize| {
        loop {
            let rhs = t[0].len() - 1;
            let entering = (0..allowed).find(|&j| {
                let red = cost[j] - (0..t.len()).map(|i| cost[basis[i]] * t[i][j]).sum::<f64>();
                red < -TOL && !basis.contains(&j)
            });
            let Some(j) = entering else { return };
            let mut best: Option<(f64, usize)> = None;
            for i in 0..t.len() {
                if t[i][j] > TOL {
                    let ratio = t[i][rhs] / t[i][j];
                    match best {
                        None => best = Some((ratio, i)),
                        Some((br, bi)) => {
                            if ratio < br - TOL || ((ratio - br).abs() <= TOL && basis[i] < basis[bi]) {
                                best = Some((ratio, i));
                            }
                        }
                    }
                }
            }
            let (_, r) = best.expect("bounded problem");
            pivot(t, basis, r, j);
        }
    };

    let mut phase1 = vec![0.0; cols];
    for v in &mut phase1[n..] {
        *v = 1.0;
    }
    run(&mut t, &mut basis, &phase1, cols);

    // Drive zero-level artificials out of the basis; drop redundant rows.
    let mut i = 0;
    while i < t.len() {
        if basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| t[i][j].abs() > TOL) {
                pivot(&mut t, &mut basis, i, j);
                i += 1;
            } else {
                t.remove(i);
                basis.remove(i);
            }
        } else {
            i += 1;
        }
    }

    let mut phase2 = c.to_vec();
    phase2.extend(std::iter::repeat_n(0.0, m));
    run(&mut t, &mut basis, &phase2, n);
    let rhs = cols;
    (0..t.len()).map(|i| phase2[basis[i]] * t[i][rhs]).sum()
}

/// EMD as a generic LP over the `m × n` flow variables.
pub fn emd_lp(wa: &[f64], fa: &[[f64; 4]], wb: &[f64], fb: &[[f64; 4]]) -> f64 {
    let sa: f64 = wa.iter().sum();
    let sb: f64 = wb.iter().sum();
    let (m, n) = (wa.len(), wb.len());
    let mut a = Vec::new();
    let mut b = Vec::new();
    for i in 0..m {
        let mut row = vec![0.0; m * n];
        for j in 0..n {
            row[i * n + j] = 1.0;
        }
        a.push(row);
        b.push(wa[i] / sa);
    }
    for j in 0..n {
        let mut row = vec![0.0; m * n];
        for i in 0..m {
            row[i * n + j] = 1.0;
        }
        a.push(row);
        b.push(wb[j] / sb);
    }
    let mut c = Vec::with_capacity(m * n);
    for p in fa {
        for q in fb {
            c.push(p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt());
        }
    }
    lp_min(&a, &b, &c)
}

/// Fraction of (positive, negative) pairs ordered correctly, ties at one half.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

pub fn random_signature(rng: &mut impl Rng, points: usize) -> (Vec<f64>, Vec<[f64; 4]>) {
    let w = (0..points).map(|_| rng.gen_range(0.05..1.0)).collect();
    let f = (0..points)
        .map(|_| [rng.gen_range(0.0..5.0), rng.gen_range(0.0..2.0), rng.gen_range(0.0..3.0), rng.gen_range(0.0..1.0)])
        .collect();
    (w, f)
}

/// Labels with at least one frame of each class.
pub fn random_labels(rng: &mut impl Rng, n: usize) -> Vec<u8> {
    let mut l: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
    l[0] = 0;
    l[n - 1] = 1;
    l
}
