//! Independent oracles shared by the integration tests and the acceptance
//! gate. Nothing here calls the routine it checks.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use recnet_core::dataset::{IdIndex, Interaction};
use recnet_core::objective::{loss_combined, Triplet};
use recnet_core::{Dataset, ModelParams, ObjectiveSpec};

/// ML-100K `u.data`: `$ML100K_DATA`, else `<workspace>/data/ml-100k/u.data`.
pub fn ml100k_path() -> PathBuf {
    std::env::var_os("ML100K_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k/u.data")
        })
}

pub fn require_ml100k() -> PathBuf {
    let p = ml100k_path();
    assert!(
        p.exists(),
        "ML-100K not found at {}; run scripts/fetch_ml100k.sh or set ML100K_DATA",
        p.display()
    );
    p
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Worst relative error between the analytic gradient and central finite
/// differences of `loss_combined`, over every parameter.
pub fn fd_check(
    params: &ModelParams,
    batch: &[Triplet],
    spec: &ObjectiveSpec,
    eps: f64,
) -> (f64, usize) {
    let (_, grads) = params.backward(batch, spec).unwrap();
    let analytic = grads.to_dense();
    let mut p = params.clone();
    let mut worst: f64 = 0.0;
    for idx in 0..p.param_count() {
        let orig = *p.flat_mut(idx);
        *p.flat_mut(idx) = orig + eps;
        let up = loss_combined(&p, batch, spec).unwrap();
        *p.flat_mut(idx) = orig - eps;
        let down = loss_combined(&p, batch, spec).unwrap();
        *p.flat_mut(idx) = orig;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(rel_err(analytic[idx], numeric, 1e-4));
    }
    (worst, p.param_count())
}

/// Smallest `|W1ᵀ Φ + b1|` entry over the batch; finite differences are
/// only meaningful away from the relu kink.
pub fn min_abs_preactivation(p: &ModelParams, batch: &[Triplet]) -> f64 {
    let h = p.hidden_units();
    let mut m = f64::INFINITY;
    for t in batch {
        for i in [t.pos, t.neg] {
            let x = p.phi(t.user, i).unwrap();
            for j in 0..h {
                let pre: f64 = p.b1[j]
                    + x.iter()
                        .enumerate()
                        .map(|(r, xr)| xr * p.w1.data[r * h + j])
                        .sum::<f64>();
                m = m.min(pre.abs());
            }
        }
    }
    m
}

pub fn random_batch<R: Rng>(rng: &mut R, n_users: u32, n_items: u32, len: usize) -> Vec<Triplet> {
    (0..len)
        .map(|_| {
            let u = rng.gen_range(0..n_users);
            let i = rng.gen_range(0..n_items);
            let mut j = rng.gen_range(0..n_items - 1);
            if j >= i {
                j += 1;
            }
            let t = Triplet::new(i, u, j);
            if rng.gen_bool(0.25) {
                t.flipped()
            } else {
                t
            }
        })
        .collect()
}

/// `AP@ℓ` in exact integer arithmetic: `Σ r_j hits_j (60 / j)` over `60 ℓ`.
pub fn ap_bruteforce(r: &[bool], l: usize) -> f64 {
    assert!(l <= 6);
    let mut hits = 0u64;
    let mut num = 0u64;
    for j in 1..=l {
        let rel = r.get(j - 1).copied().unwrap_or(false);
        if rel {
            hits += 1;
            num += hits * (60 / j as u64);
        }
    }
    num as f64 / (60 * l) as f64
}

/// Mid-rank of `x` among `pool` by counting.
fn midrank(pool: &[f64], x: f64) -> f64 {
    let less = pool.iter().filter(|&&y| y < x).count() as f64;
    let equal = pool.iter().filter(|&&y| y == x).count() as f64;
    less + (equal + 1.0) / 2.0
}

/// Two-sided exact p-value by enumerating every split of the pooled sample.
pub fn wilcoxon_enumerate(a: &[f64], b: &[f64]) -> f64 {
    let pool: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks: Vec<f64> = pool.iter().map(|&x| midrank(&pool, x)).collect();
    let n = pool.len();
    let n1 = a.len();
    let mean = n1 as f64 * (n + 1) as f64 / 2.0;
    let observed: f64 = ranks[..n1].iter().sum();
    let (mut hit, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != n1 {
            continue;
        }
        let w: f64 = (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| ranks[i])
            .sum();
        total += 1;
        if (w - mean).abs() >= (observed - mean).abs() - 1e-9 {
            hit += 1;
        }
    }
    hit as f64 / total as f64
}

/// Spearman correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> { v.iter().map(|&a| midrank(v, a)).collect() };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// A dataset with the same index spaces as `ds` whose training part keeps
/// only `users`.
pub fn restrict_users(ds: &Dataset, users: &[u32]) -> Dataset {
    let keep: std::collections::HashSet<u32> = users.iter().copied().collect();
    let train: Vec<Interaction> = ds
        .train()
        .iter()
        .filter(|r| keep.contains(&r.user))
        .copied()
        .collect();
    let test: Vec<Interaction> = ds
        .test()
        .iter()
        .filter(|r| keep.contains(&r.user))
        .copied()
        .collect();
    let mut u = IdIndex::default();
    let mut i = IdIndex::default();
    ds.users().ids().iter().for_each(|x| {
        u.intern(x);
    });
    ds.items().ids().iter().for_each(|x| {
        i.intern(x);
    });
    Dataset::from_parts(u, i, train, test).unwrap()
}
