use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::cover::{fractional_chromatic, CoverMethod, CoverResult};
use super::graph::{build_dependency_graph, DependencyGraph};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{ModelParams, Scorer};

/// `𝔠(S) = √((1/n₋*) Σ_j ω_j Σ_{α∈M_j} ‖Φ(u,i) − Φ(u,i′)‖²)` with the
/// linear kernel. For an exact cover this equals the plain sum over nodes.
pub fn complexity_term(
    params: &ModelParams,
    graph: &DependencyGraph,
    cover: &CoverResult,
    n_neg_star: usize,
) -> Result<f64> {
    if n_neg_star == 0 {
        return Err(Error::InvalidArgument(
            "n_neg_star must be at least 1".into(),
        ));
    }
    let d: Vec<f64> = graph
        .nodes()
        .iter()
        .map(|t| {
            let a = params.phi(t.user, t.pos)?;
            let b = params.phi(t.user, t.neg)?;
            Ok(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum())
        })
        .collect::<Result<_>>()?;
    let total: f64 = cover
        .sets
        .iter()
        .zip(&cover.weights)
        .map(|(s, w)| w * s.iter().map(|&a| d[a]).sum::<f64>())
        .sum();
    Ok((total / n_neg_star as f64).sqrt())
}

/// Largest singular value of a row-major `rows x cols` matrix by power
/// iteration on `AᵀA`.
pub fn spectral_norm(data: &[f64], rows: usize, cols: usize) -> f64 {
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let mut v: Vec<f64> = (0..cols).map(|j| 1.0 + j as f64 / cols as f64).collect();
    let mut sigma = 0.0;
    for _ in 0..10_000 {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        let av: Vec<f64> = data
            .chunks_exact(cols)
            .map(|r| r.iter().zip(&v).map(|(a, b)| a * b).sum())
            .collect();
        let mut next = vec![0.0; cols];
        for (r, &s) in data.chunks_exact(cols).zip(&av) {
            for (n, a) in next.iter_mut().zip(r) {
                *n += a * s;
            }
        }
        let est = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = next;
        if (est - sigma).abs() <= 1e-14 * est.max(1e-300) {
            return est;
        }
        sigma = est;
    }
    sigma
}

/// `‖w2‖ · ‖W1‖_op`: a heuristic stand-in for the weight-norm bound `B`,
/// which is only defined for kernel-linear hypotheses.
pub fn b_proxy(params: &ModelParams) -> f64 {
    let w2 = params.w2.iter().map(|x| x * x).sum::<f64>().sqrt();
    w2 * spectral_norm(&params.w1.data, params.w1.rows, params.w1.cols)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub n_users: usize,
    pub n_pos_star: usize,
    pub n_neg_star: usize,
    pub b: f64,
    pub r: f64,
    pub delta: f64,
    pub complexity: f64,
}

impl BoundInputs {
    /// Total triplets `N · n₊* · n₋*`.
    pub fn m(&self) -> usize {
        self.n_users * self.n_pos_star * self.n_neg_star
    }

    pub fn validate(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.delta > 0.0 && self.delta < 1.0) {
            p.push(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        for (name, v) in [
            ("n_users", self.n_users),
            ("n_pos_star", self.n_pos_star),
            ("n_neg_star", self.n_neg_star),
        ] {
            if v == 0 {
                p.push(format!("{name} must be at least 1"));
            }
        }
        for (name, v) in [
            ("b", self.b),
            ("r", self.r),
            ("complexity", self.complexity),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                p.push(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        p
    }
}

/// `ℒ̂* + 2B𝔠/(N n₊*) + (5/2)(√(2B𝔠/(N n₊*)) + √(r/2))·√(log(1/δ)/n₊*)
/// + (25/48)·log(1/δ)/n₊*`.
pub fn generalization_bound(inputs: &BoundInputs, empirical_loss: f64) -> Result<f64> {
    if !(inputs.delta > 0.0 && inputs.delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "delta must lie in (0, 1), got {}",
            inputs.delta
        )));
    }
    let problems = inputs.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let np = inputs.n_pos_star as f64;
    let rad = 2.0 * inputs.b * inputs.complexity / (inputs.n_users as f64 * np);
    let log_term = (1.0 / inputs.delta).ln();
    Ok(empirical_loss
        + rad
        + 2.5 * (rad.sqrt() + (inputs.r / 2.0).sqrt()) * (log_term / np).sqrt()
        + 25.0 / 48.0 * log_term / np)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieMode {
    /// `1[y·f < 0]`: a tie is not an error.
    #[default]
    Strict,
    /// A tie counts 1/2.
    Half,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorstCaseLoss {
    /// Per-user normalized empirical 0/1 pairwise loss `ℒ̂`.
    pub per_user: f64,
    /// Worst-case normalized `ℒ̂* = (1/(N n₋* n₊*)) Σ` over all triplets.
    pub worst_case: f64,
    /// Fraction of misranked triplets over all triplets of eligible users.
    pub pooled: f64,
    pub n_users: usize,
    pub n_triplets: usize,
    pub caps: (usize, usize),
}

/// Both empirical losses over every training triplet of the eligible users.
/// `caps` defaults to the dataset's `(n₊*, n₋*)`; larger caps are rejected
/// since `ℒ̂ ≤ ℒ̂*` would no longer hold.
pub fn worst_case_empirical_loss<S: Scorer + ?Sized>(
    scorer: &S,
    ds: &Dataset,
    caps: Option<(usize, usize)>,
    ties: TieMode,
) -> Result<WorstCaseLoss> {
    let mins = ds
        .worst_case_counts()
        .ok_or(Error::EmptyDataset("users with both labels"))?;
    let (np, nn) = caps.unwrap_or(mins);
    if np == 0 || nn == 0 || np > mins.0 || nn > mins.1 {
        return Err(Error::InvalidArgument(format!(
            "caps ({np}, {nn}) must lie between 1 and the minimum counts ({}, {})",
            mins.0, mins.1
        )));
    }
    let users = ds.eligible_users();
    let (mut per_user, mut errors, mut total) = (0.0, 0.0, 0usize);
    for &u in users {
        let neg_scores: Vec<f64> = ds
            .negatives(u)
            .iter()
            .map(|&i| scorer.score(u, i))
            .collect();
        let mut e = 0.0;
        for &p in ds.positives(u) {
            let sp = scorer.score(u, p);
            for &sn in &neg_scores {
                let f = sp - sn;
                e += if f < 0.0 {
                    1.0
                } else if f == 0.0 && ties == TieMode::Half {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let pairs = ds.positives(u).len() * neg_scores.len();
        per_user += e / pairs as f64;
        errors += e;
        total += pairs;
    }
    let n = users.len() as f64;
    Ok(WorstCaseLoss {
        per_user: per_user / n,
        worst_case: errors / (n * np as f64 * nn as f64),
        pooled: errors / total as f64,
        n_users: users.len(),
        n_triplets: total,
        caps: (np, nn),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    pub cover_method: CoverMethod,
    pub chromatic: f64,
    pub graph_nodes: usize,
    pub loss: WorstCaseLoss,
    pub bound: f64,
}

impl BoundReport {
    pub fn to_text(&self) -> String {
        let i = &self.inputs;
        let method = match self.cover_method {
            CoverMethod::Lp => "lp",
            CoverMethod::Exhaustive => "exhaustive",
            CoverMethod::Diagonal => "diagonal",
        };
        let mut s = String::new();
        let _ = writeln!(s, "N\t{}", i.n_users);
        let _ = writeln!(s, "n_pos_star\t{}", i.n_pos_star);
        let _ = writeln!(s, "n_neg_star\t{}", i.n_neg_star);
        let _ = writeln!(s, "m\t{}", i.m());
        let _ = writeln!(s, "B\t{}", i.b);
        let _ = writeln!(s, "B_source\theuristic: |w2| * |W1|_op");
        let _ = writeln!(s, "r\t{}", i.r);
        let _ = writeln!(s, "delta\t{}", i.delta);
        let _ = writeln!(s, "cover_method\t{method}");
        let _ = writeln!(s, "graph_nodes\t{}", self.graph_nodes);
        let _ = writeln!(s, "chi_star\t{}", self.chromatic);
        let _ = writeln!(s, "complexity\t{}", i.complexity);
        let _ = writeln!(s, "empirical_loss\t{}", self.loss.per_user);
        let _ = writeln!(s, "worst_case_loss\t{}", self.loss.worst_case);
        let _ = writeln!(s, "bound\t{}", self.bound);
        s
    }
}

/// Evaluates every bound ingredient for `params` on the training part of
/// `ds`: the dependency graph over the `(n₊*, n₋*)` grid of each eligible
/// user, its cover, `𝔠(S)`, `B`, `r = p(1 − p)` of the pooled 0/1 loss, and
/// the bound itself on `ℒ̂*`.
pub fn bound_report(
    params: &ModelParams,
    ds: &Dataset,
    delta: f64,
    method: CoverMethod,
) -> Result<BoundReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let caps = ds
        .worst_case_counts()
        .ok_or(Error::EmptyDataset("users with both labels"))?;
    let graph = build_dependency_graph(ds, None, caps)?;
    let cover = fractional_chromatic(&graph, method)?;
    let complexity = complexity_term(params, &graph, &cover, caps.1)?;
    let loss = worst_case_empirical_loss(params, ds, Some(caps), TieMode::Strict)?;
    let inputs = BoundInputs {
        n_users: loss.n_users,
        n_pos_star: caps.0,
        n_neg_star: caps.1,
        b: b_proxy(params),
        r: loss.pooled * (1.0 - loss.pooled),
        delta,
        complexity,
    };
    let bound = generalization_bound(&inputs, loss.worst_case)?;
    Ok(BoundReport {
        inputs,
        cover_method: method,
        chromatic: cover.chromatic,
        graph_nodes: graph.n_nodes(),
        loss,
        bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::objective::Triplet;

    fn inputs() -> BoundInputs {
        BoundInputs {
            n_users: 10,
            n_pos_star: 4,
            n_neg_star: 3,
            b: 1.0,
            r: 0.25,
            delta: 0.05,
            complexity: 2.0,
        }
    }

    #[test]
    fn vanishing_terms() {
        let i = BoundInputs {
            complexity: 0.0,
            r: 0.0,
            ..inputs()
        };
        let v = generalization_bound(&i, 0.1).unwrap();
        assert!((v - (0.1 + 25.0 / 48.0 * 20f64.ln() / 4.0)).abs() < 1e-15);
    }

    #[test]
    fn delta_outside_unit_interval() {
        for d in [0.0, 1.0, 1.5, -0.1, f64::NAN] {
            assert!(matches!(
                generalization_bound(
                    &BoundInputs {
                        delta: d,
                        ..inputs()
                    },
                    0.0
                ),
                Err(Error::InvalidArgument(_))
            ));
        }
    }

    #[test]
    fn m_is_the_grid_size() {
        assert_eq!(inputs().m(), 120);
    }

    #[test]
    fn spectral_norm_of_small_matrices() {
        assert!((spectral_norm(&[3.0, 0.0, 0.0, -4.0], 2, 2) - 4.0).abs() < 1e-12);
        // [[1, 2], [3, 4]]: sqrt((30 + sqrt(884)) / 2)
        let expect = ((30.0 + 884f64.sqrt()) / 2.0).sqrt();
        assert!((spectral_norm(&[1.0, 2.0, 3.0, 4.0], 2, 2) - expect).abs() < 1e-10);
        assert!((spectral_norm(&[1.0, 1.0, 1.0], 1, 3) - 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(spectral_norm(&[0.0; 6], 2, 3), 0.0);
    }

    fn unit_model() -> ModelParams {
        let cfg = ModelConfig {
            embed_dim: 2,
            hidden_units: 2,
            init_scale: Some(0.0),
            ..ModelConfig::default()
        };
        let mut p = ModelParams::init(&cfg, 1, 2).unwrap();
        p.users.row_mut(0).copy_from_slice(&[1.0, 1.0]);
        p.items.row_mut(0).copy_from_slice(&[1.0, 0.0]);
        p.items.row_mut(1).copy_from_slice(&[0.0, 1.0]);
        p
    }

    #[test]
    fn one_triplet_self_distance() {
        let p = unit_model();
        let g = DependencyGraph::from_triplets(vec![Triplet::new(0, 0, 1)]);
        let cover = fractional_chromatic(&g, CoverMethod::Lp).unwrap();
        let c = complexity_term(&p, &g, &cover, 1).unwrap();
        assert!((c * c - 2.0).abs() < 1e-15);
    }

    #[test]
    fn identical_representations_give_zero() {
        let mut p = unit_model();
        p.items.row_mut(1).copy_from_slice(&[1.0, 0.0]);
        let g = DependencyGraph::from_triplets(vec![Triplet::new(0, 0, 1)]);
        let cover = fractional_chromatic(&g, CoverMethod::Lp).unwrap();
        assert_eq!(complexity_term(&p, &g, &cover, 1).unwrap(), 0.0);
    }
}
