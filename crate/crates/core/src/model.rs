//! Embedding tables, the element-wise product mapping and the one-hidden-layer
//! scorer `g`, with exact analytic gradients.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_file, write_file};
use crate::error::{Error, Result};
use crate::objective::{sigmoid, softplus, NormMode, ObjectiveSpec, Triplet};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_units: usize,
    pub activation: Activation,
    /// Half-width of the uniform initializer for every entry. `None` uses
    /// `1/sqrt(k)` for embeddings and `1/sqrt(fan_in)` for dense layers.
    pub init_scale: Option<f64>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 1,
            hidden_units: 32,
            activation: Activation::Relu,
            init_scale: None,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.embed_dim == 0 {
            problems.push("model.embed_dim must be at least 1".to_string());
        }
        if self.hidden_units == 0 {
            problems.push("model.hidden_units must be at least 1".to_string());
        }
        if let Some(s) = self.init_scale {
            if !(s >= 0.0 && s.is_finite()) {
                problems.push(format!(
                    "model.init_scale must be finite and non-negative, got {s}"
                ));
            }
        }
        problems
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Anything that assigns a real score to a (user, item) pair.
pub trait Scorer: Sync {
    /// Indices must be within [`Scorer::bounds`] when it is `Some`.
    fn score(&self, user: u32, item: u32) -> f64;

    /// `(n_users, n_items)` if the scorer has a fixed domain.
    fn bounds(&self) -> Option<(usize, usize)> {
        None
    }
}

impl<F: Fn(u32, u32) -> f64 + Sync> Scorer for F {
    fn score(&self, user: u32, item: u32) -> f64 {
        self(user, item)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// `N x k`, one row per user.
    pub users: Matrix,
    /// `M x k`, one row per item.
    pub items: Matrix,
    /// `k x h` hidden-layer weights.
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// Output weights of the linear output unit.
    pub w2: Vec<f64>,
    pub b2: f64,
}

/// Activations of one `g` evaluation, kept for the backward pass.
struct Trace {
    x: Vec<f64>,
    pre: Vec<f64>,
    g: f64,
}

impl ModelParams {
    pub fn init(config: &ModelConfig, n_users: usize, n_items: usize) -> Result<Self> {
        let mut problems = config.validate();
        if n_users == 0 || n_items == 0 {
            problems.push(format!(
                "need at least one user and item, got N={n_users}, M={n_items}"
            ));
        }
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let (k, h) = (config.embed_dim, config.hidden_units);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let scale = |fan_in: usize| config.init_scale.unwrap_or(1.0 / (fan_in as f64).sqrt());
        let mut draw = |len: usize, s: f64| -> Vec<f64> {
            if s == 0.0 {
                return vec![0.0; len];
            }
            (0..len).map(|_| rng.gen_range(-s..=s)).collect()
        };
        let users = Matrix {
            rows: n_users,
            cols: k,
            data: draw(n_users * k, scale(k)),
        };
        let items = Matrix {
            rows: n_items,
            cols: k,
            data: draw(n_items * k, scale(k)),
        };
        let w1 = Matrix {
            rows: k,
            cols: h,
            data: draw(k * h, scale(k)),
        };
        let b1 = draw(h, scale(k));
        let w2 = draw(h, scale(h));
        let b2 = draw(1, scale(h))[0];
        Ok(ModelParams {
            config: config.clone(),
            users,
            items,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn n_users(&self) -> usize {
        self.users.rows
    }

    pub fn n_items(&self) -> usize {
        self.items.rows
    }

    pub fn embed_dim(&self) -> usize {
        self.users.cols
    }

    pub fn hidden_units(&self) -> usize {
        self.b1.len()
    }

    fn check_user(&self, u: u32) -> Result<()> {
        if (u as usize) < self.n_users() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: u as usize,
                size: self.n_users(),
            })
        }
    }

    fn check_item(&self, i: u32) -> Result<()> {
        if (i as usize) < self.n_items() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: i as usize,
                size: self.n_items(),
            })
        }
    }

    /// `U_u ⊙ V_i`.
    pub fn phi(&self, u: u32, i: u32) -> Result<Vec<f64>> {
        self.check_user(u)?;
        self.check_item(i)?;
        Ok(self.phi_unchecked(u, i))
    }

    fn phi_unchecked(&self, u: u32, i: u32) -> Vec<f64> {
        self.users
            .row(u as usize)
            .iter()
            .zip(self.items.row(i as usize))
            .map(|(a, b)| a * b)
            .collect()
    }

    fn trace(&self, u: u32, i: u32) -> Trace {
        let x = self.phi_unchecked(u, i);
        let h = self.hidden_units();
        let mut pre = self.b1.clone();
        for (xr, wrow) in x.iter().zip(self.w1.data.chunks_exact(h)) {
            for (p, w) in pre.iter_mut().zip(wrow) {
                *p += xr * w;
            }
        }
        let g = pre
            .iter()
            .zip(&self.w2)
            .map(|(p, w)| p.max(0.0) * w)
            .sum::<f64>()
            + self.b2;
        Trace { x, pre, g }
    }

    /// `g(Φ(u, i)) = w2ᵀ relu(W1ᵀ Φ(u, i) + b1) + b2`.
    pub fn score_g(&self, u: u32, i: u32) -> Result<f64> {
        self.check_user(u)?;
        self.check_item(i)?;
        let g = self.trace(u, i).g;
        if !g.is_finite() {
            return Err(Error::Numeric(format!("g(user {u}, item {i}) = {g}")));
        }
        Ok(g)
    }

    /// `f(i, u, i') = g(Φ(u, i)) - g(Φ(u, i'))`.
    pub fn score_f(&self, i: u32, u: u32, i_prime: u32) -> Result<f64> {
        Ok(self.score_g(u, i)? - self.score_g(u, i_prime)?)
    }

    /// Loss of `spec` on `batch` and its exact gradient w.r.t. every parameter.
    pub fn backward(&self, batch: &[Triplet], spec: &ObjectiveSpec) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let problems = spec.validate();
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        for t in batch {
            self.check_user(t.user)?;
            self.check_item(t.pos)?;
            self.check_item(t.neg)?;
        }
        let (wc, wp) = spec.weights();
        let n = batch.len() as f64;
        let mut grads = Gradients::zeros_like(self);
        let (mut sum_c, mut sum_p) = (0.0, 0.0);

        for t in batch {
            let y = t.label.sign();
            if wc != 0.0 {
                let a = self.trace(t.user, t.pos);
                let b = self.trace(t.user, t.neg);
                let s = y * (b.g - a.g);
                sum_c += softplus(s);
                let ds = wc * sigmoid(s) / n;
                self.backprop_g(&a, t.user, t.pos, -y * ds, &mut grads);
                self.backprop_g(&b, t.user, t.neg, y * ds, &mut grads);
                if spec.regularize_c {
                    sum_c += self.penalty(t, spec.lambda, spec.norm, wc / n, &mut grads);
                }
            }
            if wp != 0.0 {
                sum_p += self.embedding_term(t, spec.lambda, spec.norm, wp / n, &mut grads);
            }
        }
        let loss = if spec.variant_is_c() {
            sum_c / n
        } else if spec.variant_is_p() {
            sum_p / n
        } else {
            wc * (sum_c / n) + wp * (sum_p / n)
        };
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss or gradient (loss = {loss})"
            )));
        }
        Ok((loss, grads))
    }

    /// Accumulates `dg * ∂g(Φ(u,i))/∂θ` into `grads`.
    fn backprop_g(&self, tr: &Trace, u: u32, i: u32, dg: f64, grads: &mut Gradients) {
        let (k, h) = (self.embed_dim(), self.hidden_units());
        grads.b2 += dg;
        let mut dpre = vec![0.0; h];
        for j in 0..h {
            // relu'(0) is taken as 0
            if tr.pre[j] > 0.0 {
                grads.w2[j] += dg * tr.pre[j];
                dpre[j] = dg * self.w2[j];
            }
        }
        let mut dx = vec![0.0; k];
        for r in 0..k {
            let wrow = self.w1.row(r);
            let grow = grads.w1.row_mut(r);
            let mut acc = 0.0;
            for j in 0..h {
                grow[j] += tr.x[r] * dpre[j];
                acc += wrow[j] * dpre[j];
            }
            dx[r] = acc;
        }
        for (b, d) in grads.b1.iter_mut().zip(&dpre) {
            *b += d;
        }
        let urow = self.users.row(u as usize);
        let vrow = self.items.row(i as usize);
        let gu = grads.user_row(u, k);
        for r in 0..k {
            gu[r] += dx[r] * vrow[r];
        }
        let gv = grads.item_row(i, k);
        for r in 0..k {
            gv[r] += dx[r] * urow[r];
        }
    }

    /// `λ (|U_u| + |V_i'| + |V_i|)` for one triplet; adds `scale` times its
    /// gradient to `grads`.
    fn penalty(
        &self,
        t: &Triplet,
        lambda: f64,
        norm: NormMode,
        scale: f64,
        grads: &mut Gradients,
    ) -> f64 {
        let k = self.embed_dim();
        let mut total = 0.0;
        let rows = [(true, t.user), (false, t.neg), (false, t.pos)];
        for (is_user, idx) in rows {
            let row = if is_user {
                self.users.row(idx as usize)
            } else {
                self.items.row(idx as usize)
            };
            total += norm.apply(row);
            let f = scale * lambda * norm.gradient_factor(row);
            let g = if is_user {
                grads.user_row(idx, k)
            } else {
                grads.item_row(idx, k)
            };
            for (gr, x) in g.iter_mut().zip(row) {
                *gr += f * x;
            }
        }
        lambda * total
    }

    /// Per-triplet embedding term of the dot-product objective; adds
    /// `scale * ∂term/∂θ` to `grads` and returns the term's value.
    fn embedding_term(
        &self,
        t: &Triplet,
        lambda: f64,
        norm: NormMode,
        scale: f64,
        grads: &mut Gradients,
    ) -> f64 {
        let k = self.embed_dim();
        let y = t.label.sign();
        let uu = self.users.row(t.user as usize);
        let vp = self.items.row(t.pos as usize);
        let vn = self.items.row(t.neg as usize);
        let margin: f64 = uu
            .iter()
            .zip(vn.iter().zip(vp))
            .map(|(a, (n, p))| a * (n - p))
            .sum();
        let s = y * margin;
        let reg = lambda * (norm.apply(uu) + norm.apply(vn) + norm.apply(vp));
        let ds = sigmoid(s) * y * scale;

        let reg_u = norm.gradient_factor(uu);
        let reg_n = norm.gradient_factor(vn);
        let reg_p = norm.gradient_factor(vp);
        let gu = grads.user_row(t.user, k);
        for r in 0..k {
            gu[r] += ds * (vn[r] - vp[r]) + scale * lambda * reg_u * uu[r];
        }
        let gn = grads.item_row(t.neg, k);
        for r in 0..k {
            gn[r] += ds * uu[r] + scale * lambda * reg_n * vn[r];
        }
        let gp = grads.item_row(t.pos, k);
        for r in 0..k {
            gp[r] += -ds * uu[r] + scale * lambda * reg_p * vp[r];
        }
        softplus(s) + reg
    }

    pub fn is_finite(&self) -> bool {
        self.flat_iter().all(f64::is_finite)
    }

    /// Number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.users.data.len()
            + self.items.data.len()
            + self.w1.data.len()
            + self.b1.len()
            + self.w2.len()
            + 1
    }

    /// Parameters in the canonical flat order: users, items, W1, b1, w2, b2.
    pub fn flat_iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.users
            .data
            .iter()
            .chain(&self.items.data)
            .chain(&self.w1.data)
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(std::iter::once(&self.b2))
            .copied()
    }

    /// Mutable access to the `idx`-th parameter in canonical flat order.
    pub fn flat_mut(&mut self, mut idx: usize) -> &mut f64 {
        for block in [
            &mut self.users.data,
            &mut self.items.data,
            &mut self.w1.data,
            &mut self.b1,
            &mut self.w2,
        ] {
            if idx < block.len() {
                return &mut block[idx];
            }
            idx -= block.len();
        }
        assert_eq!(idx, 0, "parameter index out of range");
        &mut self.b2
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            n_users: self.n_users(),
            n_items: self.n_items(),
            params: self.clone(),
        };
        let mut text =
            serde_json::to_string_pretty(&ck).map_err(|e| Error::Serde(e.to_string()))?;
        text.push('\n');
        write_file(path, &text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_file(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        if ck.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Serde(format!(
                "unsupported checkpoint schema version {} (expected {CHECKPOINT_SCHEMA_VERSION})",
                ck.schema_version
            )));
        }
        let p = ck.params;
        let (k, h) = (p.config.embed_dim, p.config.hidden_units);
        let shapes_ok = p.users.rows == ck.n_users
            && p.items.rows == ck.n_items
            && p.users.cols == k
            && p.items.cols == k
            && p.users.data.len() == ck.n_users * k
            && p.items.data.len() == ck.n_items * k
            && p.w1.rows == k
            && p.w1.cols == h
            && p.w1.data.len() == k * h
            && p.b1.len() == h
            && p.w2.len() == h;
        if !shapes_ok {
            return Err(Error::Serde(format!(
                "{}: inconsistent parameter shapes",
                path.display()
            )));
        }
        if !p.is_finite() {
            return Err(Error::Numeric(format!(
                "{}: non-finite parameters",
                path.display()
            )));
        }
        Ok(p)
    }
}

impl Scorer for ModelParams {
    fn score(&self, user: u32, item: u32) -> f64 {
        self.trace(user, item).g
    }

    fn bounds(&self) -> Option<(usize, usize)> {
        Some((self.n_users(), self.n_items()))
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    schema_version: u32,
    n_users: usize,
    n_items: usize,
    params: ModelParams,
}

/// Position of a one-hot indicator, as a dense vector.
pub fn one_hot(index: usize, size: usize) -> Result<Vec<f64>> {
    if index >= size {
        return Err(Error::IndexOutOfRange { index, size });
    }
    let mut v = vec![0.0; size];
    v[index] = 1.0;
    Ok(v)
}

/// Gradients shaped like [`ModelParams`]; embedding rows are stored only for
/// the users and items a batch touched.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub users: BTreeMap<u32, Vec<f64>>,
    pub items: BTreeMap<u32, Vec<f64>>,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    n_users: usize,
    n_items: usize,
}

impl Gradients {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Gradients {
            users: BTreeMap::new(),
            items: BTreeMap::new(),
            w1: Matrix::zeros(p.w1.rows, p.w1.cols),
            b1: vec![0.0; p.b1.len()],
            w2: vec![0.0; p.w2.len()],
            b2: 0.0,
            n_users: p.n_users(),
            n_items: p.n_items(),
        }
    }

    fn user_row(&mut self, u: u32, k: usize) -> &mut Vec<f64> {
        self.users.entry(u).or_insert_with(|| vec![0.0; k])
    }

    fn item_row(&mut self, i: u32, k: usize) -> &mut Vec<f64> {
        self.items.entry(i).or_insert_with(|| vec![0.0; k])
    }

    pub fn is_finite(&self) -> bool {
        self.users
            .values()
            .chain(self.items.values())
            .flatten()
            .all(|x| x.is_finite())
            && self
                .w1
                .data
                .iter()
                .chain(&self.b1)
                .chain(&self.w2)
                .all(|x| x.is_finite())
            && self.b2.is_finite()
    }

    /// Euclidean norm over every entry.
    pub fn norm(&self) -> f64 {
        self.users
            .values()
            .chain(self.items.values())
            .flatten()
            .chain(&self.w1.data)
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(std::iter::once(&self.b2))
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for row in self.users.values_mut().chain(self.items.values_mut()) {
            row.iter_mut().for_each(|x| *x *= c);
        }
        for x in self
            .w1
            .data
            .iter_mut()
            .chain(&mut self.b1)
            .chain(&mut self.w2)
        {
            *x *= c;
        }
        self.b2 *= c;
    }

    /// Dense gradient in the canonical order of [`ModelParams::flat_iter`].
    pub fn to_dense(&self) -> Vec<f64> {
        let k = self.w1.rows;
        let mut out = vec![0.0; (self.n_users + self.n_items) * k];
        for (&u, row) in &self.users {
            out[u as usize * k..(u as usize + 1) * k].copy_from_slice(row);
        }
        let off = self.n_users * k;
        for (&i, row) in &self.items {
            out[off + i as usize * k..off + (i as usize + 1) * k].copy_from_slice(row);
        }
        out.extend_from_slice(&self.w1.data);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.push(self.b2);
        out
    }
}
