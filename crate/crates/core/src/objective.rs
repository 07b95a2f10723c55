//! Logistic pairwise surrogates: on network score differences, on embedding
//! dot-product differences, and their convex combination.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, Scorer};

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Derivative of [`softplus`].
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    /// The user prefers `pos` over `neg` (`y = +1`).
    Prefers,
    /// `y = -1`.
    Reversed,
}

impl Label {
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Label::Prefers => 1.0,
            Label::Reversed => -1.0,
        }
    }
}

/// A training example `(i, u, i')` with its desired output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub pos: u32,
    pub user: u32,
    pub neg: u32,
    pub label: Label,
}

impl Triplet {
    /// Canonical orientation: `pos` from the user's positives, `neg` from
    /// the negatives, `y = +1`.
    pub fn new(pos: u32, user: u32, neg: u32) -> Self {
        Triplet {
            pos,
            user,
            neg,
            label: Label::Prefers,
        }
    }

    /// Same preference expressed with the items swapped and the label negated.
    pub fn flipped(self) -> Self {
        Triplet {
            pos: self.neg,
            neg: self.pos,
            user: self.user,
            label: match self.label {
                Label::Prefers => Label::Reversed,
                Label::Reversed => Label::Prefers,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Scorer ranking loss only.
    C,
    /// Embedding dot-product loss only.
    P,
    /// `alpha * c + (1 - alpha) * p`.
    #[default]
    Cp,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// `||v||²`: the usual smooth l2 penalty.
    #[default]
    Squared,
    /// `||v||`, with subgradient 0 at the origin.
    Plain,
}

impl NormMode {
    #[inline]
    pub fn apply(self, v: &[f64]) -> f64 {
        let sq: f64 = v.iter().map(|x| x * x).sum();
        match self {
            NormMode::Squared => sq,
            NormMode::Plain => sq.sqrt(),
        }
    }

    /// `c` such that the gradient of [`NormMode::apply`] is `c * v`.
    #[inline]
    pub fn gradient_factor(self, v: &[f64]) -> f64 {
        match self {
            NormMode::Squared => 2.0,
            NormMode::Plain => {
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 0.0 {
                    1.0 / n
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub variant: Variant,
    pub alpha: f64,
    pub lambda: f64,
    pub norm: NormMode,
    /// For `cp`, use the plain sum `c + p` instead of the alpha weighting.
    pub unweighted_sum: bool,
    /// Add the per-triplet embedding penalty `λ (|U_u| + |V_i'| + |V_i|)`
    /// to the `c` term as well.
    pub regularize_c: bool,
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        ObjectiveSpec {
            variant: Variant::Cp,
            alpha: 0.5,
            lambda: 0.0,
            norm: NormMode::Squared,
            unweighted_sum: false,
            regularize_c: false,
        }
    }
}

impl ObjectiveSpec {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if !(0.0..=1.0).contains(&self.alpha) {
            problems.push(format!(
                "objective.alpha must lie in [0, 1], got {}",
                self.alpha
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            problems.push(format!(
                "objective.lambda must be finite and >= 0, got {}",
                self.lambda
            ));
        }
        problems
    }

    /// Weights applied to the `c` and `p` terms.
    pub fn weights(&self) -> (f64, f64) {
        match self.variant {
            Variant::C => (1.0, 0.0),
            Variant::P => (0.0, 1.0),
            Variant::Cp if self.unweighted_sum => (1.0, 1.0),
            Variant::Cp => (self.alpha, 1.0 - self.alpha),
        }
    }

    pub(crate) fn variant_is_c(&self) -> bool {
        self.variant == Variant::C
    }

    pub(crate) fn variant_is_p(&self) -> bool {
        self.variant == Variant::P
    }
}

fn non_empty(batch: &[Triplet]) -> Result<()> {
    if batch.is_empty() {
        Err(Error::InvalidArgument("empty batch".into()))
    } else {
        Ok(())
    }
}

/// Mean of `log(1 + exp(y (g(Φ(u,i')) - g(Φ(u,i)))))`.
pub fn loss_c(params: &ModelParams, batch: &[Triplet]) -> Result<f64> {
    non_empty(batch)?;
    let mut sum = 0.0;
    for t in batch {
        let gi = params.score_g(t.user, t.pos)?;
        let gn = params.score_g(t.user, t.neg)?;
        sum += softplus(t.label.sign() * (gn - gi));
    }
    Ok(sum / batch.len() as f64)
}

/// Mean of `log(1 + exp(y U_uᵀ(V_i' - V_i))) + λ (|U_u| + |V_i'| + |V_i|)`,
/// with the norm given by `norm`.
pub fn loss_p(params: &ModelParams, batch: &[Triplet], lambda: f64, norm: NormMode) -> Result<f64> {
    non_empty(batch)?;
    let mut sum = 0.0;
    for t in batch {
        if t.user as usize >= params.n_users() {
            return Err(Error::IndexOutOfRange {
                index: t.user as usize,
                size: params.n_users(),
            });
        }
        for i in [t.pos, t.neg] {
            if i as usize >= params.n_items() {
                return Err(Error::IndexOutOfRange {
                    index: i as usize,
                    size: params.n_items(),
                });
            }
        }
        let u = params.users.row(t.user as usize);
        let vp = params.items.row(t.pos as usize);
        let vn = params.items.row(t.neg as usize);
        let margin: f64 = u
            .iter()
            .zip(vn.iter().zip(vp))
            .map(|(a, (n, p))| a * (n - p))
            .sum();
        sum += softplus(t.label.sign() * margin)
            + lambda * (norm.apply(u) + norm.apply(vn) + norm.apply(vp));
    }
    Ok(sum / batch.len() as f64)
}

/// Batch mean of the embedding penalty `λ (|U_u| + |V_i'| + |V_i|)`.
pub fn embedding_penalty(
    params: &ModelParams,
    batch: &[Triplet],
    lambda: f64,
    norm: NormMode,
) -> Result<f64> {
    non_empty(batch)?;
    let mut sum = 0.0;
    for t in batch {
        params.phi(t.user, t.pos)?;
        params.phi(t.user, t.neg)?;
        let u = params.users.row(t.user as usize);
        let vp = params.items.row(t.pos as usize);
        let vn = params.items.row(t.neg as usize);
        sum += lambda * (norm.apply(u) + norm.apply(vn) + norm.apply(vp));
    }
    Ok(sum / batch.len() as f64)
}

/// The objective selected by `spec`.
pub fn loss_combined(params: &ModelParams, batch: &[Triplet], spec: &ObjectiveSpec) -> Result<f64> {
    let problems = spec.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let c = |p: &ModelParams| -> Result<f64> {
        let base = loss_c(p, batch)?;
        if spec.regularize_c {
            Ok(base + embedding_penalty(p, batch, spec.lambda, spec.norm)?)
        } else {
            Ok(base)
        }
    };
    match spec.variant {
        Variant::C => c(params),
        Variant::P => loss_p(params, batch, spec.lambda, spec.norm),
        Variant::Cp => {
            let (wc, wp) = spec.weights();
            let c = c(params)?;
            let p = loss_p(params, batch, spec.lambda, spec.norm)?;
            Ok(wc * c + wp * p)
        }
    }
}

/// Fraction of triplets whose pair the scorer orders correctly (ties count
/// as errors).
pub fn pairwise_accuracy<S: Scorer + ?Sized>(scorer: &S, triplets: &[Triplet]) -> f64 {
    if triplets.is_empty() {
        return 0.0;
    }
    let correct = triplets
        .iter()
        .filter(|t| {
            t.label.sign() * (scorer.score(t.user, t.pos) - scorer.score(t.user, t.neg)) > 0.0
        })
        .count();
    correct as f64 / triplets.len() as f64
}
