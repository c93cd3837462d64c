//! Slow-but-obvious reference implementations used as oracles in tests.
//! Everything here is written directly from the mathematical definitions,
//! in f64, with no code shared with the production crate.

use std::ops::Range;

use ndarray::{Array2, Array3, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Coordinate-descent solver for `min ½‖y − Σ_f x_f·A_f‖² + λ‖x‖₁`, where
/// `A_f` is row `f` of `atoms` (`n_atoms × dim`). Converges to the global
/// optimum of this convex problem; iteration stops when no coordinate moves
/// by more than `tol`.
pub fn cd_lasso(atoms: &Array2<f64>, y: &[f64], lambda: f64, tol: f64, max_cycles: usize) -> Vec<f64> {
    let (n_atoms, dim) = atoms.dim();
    assert_eq!(dim, y.len());
    let norms_sq: Vec<f64> = (0..n_atoms)
        .map(|f| atoms.row(f).iter().map(|a| a * a).sum())
        .collect();
    let mut x = vec![0.0; n_atoms];
    let mut residual: Vec<f64> = y.to_vec();
    for _ in 0..max_cycles {
        let mut max_delta = 0.0f64;
        for f in 0..n_atoms {
            if norms_sq[f] == 0.0 {
                continue;
            }
            let row = atoms.row(f);
            // Correlation with the residual if x[f] were removed.
            let mut c = 0.0;
            for (r, a) in residual.iter().zip(row.iter()) {
                c += r * a;
            }
            c += x[f] * norms_sq[f];
            let new = if c > lambda {
                (c - lambda) / norms_sq[f]
            } else if c < -lambda {
                (c + lambda) / norms_sq[f]
            } else {
                0.0
            };
            let delta = new - x[f];
            if delta != 0.0 {
                for (r, a) in residual.iter_mut().zip(row.iter()) {
                    *r -= delta * a;
                }
                x[f] = new;
            }
            max_delta = max_delta.max(delta.abs());
        }
        if max_delta < tol {
            break;
        }
    }
    x
}

/// Objective value `½‖y − Σ x_f A_f‖² + λ‖x‖₁`.
pub fn lasso_objective(atoms: &Array2<f64>, y: &[f64], x: &[f64], lambda: f64) -> f64 {
    let (n_atoms, _) = atoms.dim();
    let mut residual = y.to_vec();
    for f in 0..n_atoms {
        for (r, a) in residual.iter_mut().zip(atoms.row(f).iter()) {
            *r -= x[f] * a;
        }
    }
    0.5 * residual.iter().map(|r| r * r).sum::<f64>()
        + lambda * x.iter().map(|v| v.abs()).sum::<f64>()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve `G c = b` by Gauss–Jordan elimination with partial pivoting,
/// zeroing components whose pivot falls below `tol` times the largest
/// initial diagonal entry (rank-deficient systems).
fn solve_normal_equations(g: &mut Vec<Vec<f64>>, b: &mut Vec<f64>, tol: f64) -> Vec<f64> {
    let k = b.len();
    let scale = g.iter().enumerate().map(|(i, row)| row[i].abs()).fold(0.0f64, f64::max);
    for col in 0..k {
        let pivot_row = (col..k)
            .max_by(|&i, &j| g[i][col].abs().total_cmp(&g[j][col].abs()))
            .unwrap();
        g.swap(col, pivot_row);
        b.swap(col, pivot_row);
        let p = g[col][col];
        if p.abs() <= tol * scale {
            g[col] = vec![0.0; k];
            b[col] = 0.0;
            continue;
        }
        for i in 0..k {
            if i == col || g[i][col] == 0.0 {
                continue;
            }
            let factor = g[i][col] / p;
            for j in 0..k {
                g[i][j] -= factor * g[col][j];
            }
            b[i] -= factor * b[col];
        }
    }
    let mut c = vec![0.0; k];
    for i in 0..k {
        if g[i][i] != 0.0 {
            c[i] = b[i] / g[i][i];
        }
    }
    c
}

/// Reference target/interference/artifact split via the normal equations.
pub fn ref_decompose(
    estimate: &[f64],
    sources: &[Vec<f64>],
    target_index: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = estimate.len();
    let k = sources.len();
    let target = &sources[target_index];
    let coeff = dot(estimate, target) / dot(target, target);
    let s_target: Vec<f64> = target.iter().map(|x| coeff * x).collect();

    let mut g: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| dot(&sources[i], &sources[j])).collect())
        .collect();
    let mut rhs: Vec<f64> = (0..k).map(|i| dot(estimate, &sources[i])).collect();
    let c = solve_normal_equations(&mut g, &mut rhs, 1e-10);
    let mut p_span = vec![0.0; n];
    for (ci, s) in c.iter().zip(sources) {
        for (p, x) in p_span.iter_mut().zip(s) {
            *p += ci * x;
        }
    }
    let e_interf: Vec<f64> = p_span.iter().zip(&s_target).map(|(p, s)| p - s).collect();
    let e_artif: Vec<f64> = estimate.iter().zip(&p_span).map(|(x, p)| x - p).collect();
    (s_target, e_interf, e_artif)
}

fn ref_db(num: f64, den: f64) -> f64 {
    if num <= 0.0 {
        -200.0
    } else if den <= 0.0 {
        200.0
    } else {
        (10.0 * (num / den).log10()).clamp(-200.0, 200.0)
    }
}

/// Reference SDR/SIR/SAR with the ±200 dB cap convention.
pub fn ref_metrics(estimate: &[f64], sources: &[Vec<f64>], target_index: usize) -> (f64, f64, f64) {
    let (s_target, e_interf, e_artif) = ref_decompose(estimate, sources, target_index);
    let en = |v: &[f64]| dot(v, v);
    let sum = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + y).collect() };
    (
        ref_db(en(&s_target), en(&sum(&e_interf, &e_artif))),
        ref_db(en(&s_target), en(&e_interf)),
        ref_db(en(&sum(&s_target, &e_interf)), en(&e_artif)),
    )
}

/// Definition-direct transpose convolution: every active coefficient adds
/// its atom into the output at its temporal offset.
pub fn naive_place(
    atoms: &Array4<f64>,
    stride: usize,
    code: &Array2<f64>,
    frames: usize,
) -> Array3<f64> {
    let (n_atoms, channels, bins, patch) = atoms.dim();
    let (cf, n_positions) = code.dim();
    assert_eq!(cf, n_atoms);
    let mut out = Array3::zeros((channels, bins, frames));
    for f in 0..n_atoms {
        for p in 0..n_positions {
            let a = code[(f, p)];
            if a == 0.0 {
                continue;
            }
            for c in 0..channels {
                for k in 0..bins {
                    for j in 0..patch {
                        out[(c, k, p * stride + j)] += a * atoms[(f, c, k, j)];
                    }
                }
            }
        }
    }
    out
}

/// Random unit-norm atoms with pairwise |cosine| below `max_coherence`.
pub fn planted_dictionary(
    rng: &mut ChaCha8Rng,
    n_atoms: usize,
    channels: usize,
    bins: usize,
    patch: usize,
    max_coherence: f64,
) -> Array4<f64> {
    let dim = channels * bins * patch;
    let mut flat: Vec<Vec<f64>> = Vec::with_capacity(n_atoms);
    let mut tries = 0;
    while flat.len() < n_atoms {
        tries += 1;
        assert!(tries < 10_000 * n_atoms, "coherence bound too tight for geometry");
        let mut v: Vec<f64> = (0..dim)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        let norm = dot(&v, &v).sqrt();
        for x in v.iter_mut() {
            *x /= norm;
        }
        if flat.iter().all(|u| dot(u, &v).abs() <= max_coherence) {
            flat.push(v);
        }
    }
    let mut atoms = Array4::zeros((n_atoms, channels, bins, patch));
    for (f, v) in flat.iter().enumerate() {
        for c in 0..channels {
            for k in 0..bins {
                for j in 0..patch {
                    atoms[(f, c, k, j)] = v[(c * bins + k) * patch + j];
                }
            }
        }
    }
    atoms
}

/// Sparse codes with `actives` distinct active atoms per image, each at one
/// random position with a signed amplitude drawn from `amp`.
pub fn planted_codes(
    rng: &mut ChaCha8Rng,
    n_atoms: usize,
    n_positions: usize,
    n_images: usize,
    actives: usize,
    amp: Range<f64>,
) -> Vec<Array2<f64>> {
    assert!(actives <= n_atoms);
    (0..n_images)
        .map(|_| {
            let mut code = Array2::zeros((n_atoms, n_positions));
            let mut chosen: Vec<usize> = Vec::with_capacity(actives);
            while chosen.len() < actives {
                let f = rng.gen_range(0..n_atoms);
                if !chosen.contains(&f) {
                    chosen.push(f);
                }
            }
            for f in chosen {
                let p = rng.gen_range(0..n_positions);
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                code[(f, p)] = sign * rng.gen_range(amp.clone());
            }
            code
        })
        .collect()
}

/// For each planted atom, its best |cosine| against any learned atom
/// (both sets unit-norm).
pub fn best_correlations(planted: &Array4<f64>, learned: &Array4<f64>) -> Vec<f64> {
    let (np, c, k, j) = planted.dim();
    let (nl, lc, lk, lj) = learned.dim();
    assert_eq!((c, k, j), (lc, lk, lj));
    let dim = c * k * j;
    let p_flat = planted.as_slice().unwrap();
    let l_flat = learned.as_slice().unwrap();
    (0..np)
        .map(|i| {
            let pi = &p_flat[i * dim..(i + 1) * dim];
            (0..nl)
                .map(|g| dot(pi, &l_flat[g * dim..(g + 1) * dim]).abs())
                .fold(0.0f64, f64::max)
        })
        .collect()
}
