//! Mini-batch training with Adam.
//!
//! Each iteration samples one batch of canonical triplets, back-propagates
//! the objective once and applies one optimizer step. Embedding rows use
//! lazy moments: rows absent from a batch keep their parameters and moment
//! estimates untouched.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{Gradients, Matrix, ModelConfig, ModelParams};
use crate::objective::{ObjectiveSpec, Triplet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of mini-batch iterations.
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Run the evaluation hook every this many iterations; 0 disables it.
    pub eval_every: usize,
    /// Rescale the gradient to at most this Euclidean norm.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10_000,
            batch_size: 512,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            eval_every: 0,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.epochs == 0 {
            p.push("train.epochs must be at least 1".to_string());
        }
        if self.batch_size == 0 {
            p.push("train.batch_size must be at least 1".to_string());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            p.push(format!(
                "train.learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                p.push(format!("train.{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            p.push(format!("train.epsilon must be > 0, got {}", self.epsilon));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                p.push(format!("train.clip_norm must be > 0, got {c}"));
            }
        }
        p
    }
}

/// Draws `n` canonical triplets: user uniform over eligible users, then a
/// uniform positive and a uniform negative of that user.
pub fn sample_batch<R: Rng>(ds: &Dataset, n: usize, rng: &mut R) -> Result<Vec<Triplet>> {
    let eligible = ds.eligible_users();
    if eligible.is_empty() {
        return Err(Error::Config(vec![
            "no user has both a positive and a negative training item".into(),
        ]));
    }
    Ok((0..n)
        .map(|_| {
            let u = eligible[rng.gen_range(0..eligible.len())];
            let pos = ds.positives(u);
            let neg = ds.negatives(u);
            Triplet::new(
                pos[rng.gen_range(0..pos.len())],
                u,
                neg[rng.gen_range(0..neg.len())],
            )
        })
        .collect())
}

/// First and second moment estimates mirroring [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Moments,
    pub v: Moments,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub users: Matrix,
    pub items: Matrix,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl Moments {
    fn zeros_like(p: &ModelParams) -> Self {
        Moments {
            users: Matrix::zeros(p.users.rows, p.users.cols),
            items: Matrix::zeros(p.items.rows, p.items.cols),
            w1: Matrix::zeros(p.w1.rows, p.w1.cols),
            b1: vec![0.0; p.b1.len()],
            w2: vec![0.0; p.w2.len()],
            b2: 0.0,
        }
    }
}

impl AdamState {
    pub fn new(p: &ModelParams) -> Self {
        AdamState {
            m: Moments::zeros_like(p),
            v: Moments::zeros_like(p),
            step: 0,
        }
    }
}

struct AdamCoefficients {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    lr: f64,
    correction1: f64,
    correction2: f64,
}

impl AdamCoefficients {
    #[inline]
    fn update(&self, param: &mut f64, m: &mut f64, v: &mut f64, g: f64) {
        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
        let m_hat = *m / self.correction1;
        let v_hat = *v / self.correction2;
        *param -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
    }

    fn update_slice(&self, params: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64]) {
        for (((p, m), v), g) in params.iter_mut().zip(m).zip(v).zip(g) {
            self.update(p, m, v, *g);
        }
    }
}

/// One bias-corrected Adam step. Dense layers are always updated; embedding
/// rows only when present in `grads`.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if !grads.is_finite() {
        let bad_users: Vec<u32> = grads
            .users
            .iter()
            .filter(|(_, r)| r.iter().any(|x| !x.is_finite()))
            .map(|(u, _)| *u)
            .take(5)
            .collect();
        return Err(Error::Numeric(format!(
            "non-finite gradient at step {} (first affected user rows: {bad_users:?})",
            state.step + 1
        )));
    }
    let clipped;
    let grads = match cfg.clip_norm {
        Some(max) if grads.norm() > max => {
            let mut g = grads.clone();
            g.scale(max / grads.norm());
            clipped = g;
            &clipped
        }
        _ => grads,
    };
    state.step += 1;
    let t = state.step as i32;
    let c = AdamCoefficients {
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        epsilon: cfg.epsilon,
        lr: cfg.learning_rate,
        correction1: 1.0 - cfg.beta1.powi(t),
        correction2: 1.0 - cfg.beta2.powi(t),
    };
    let (m, v) = (&mut state.m, &mut state.v);
    for (&u, g) in &grads.users {
        let r = u as usize;
        c.update_slice(
            params.users.row_mut(r),
            m.users.row_mut(r),
            v.users.row_mut(r),
            g,
        );
    }
    for (&i, g) in &grads.items {
        let r = i as usize;
        c.update_slice(
            params.items.row_mut(r),
            m.items.row_mut(r),
            v.items.row_mut(r),
            g,
        );
    }
    c.update_slice(
        &mut params.w1.data,
        &mut m.w1.data,
        &mut v.w1.data,
        &grads.w1.data,
    );
    c.update_slice(&mut params.b1, &mut m.b1, &mut v.b1, &grads.b1);
    c.update_slice(&mut params.w2, &mut m.w2, &mut v.w2, &grads.w2);
    c.update(&mut params.b2, &mut m.b2, &mut v.b2, grads.b2);
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    pub iter: usize,
    pub loss: f64,
    pub val_map: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub entries: Vec<LogEntry>,
}

impl TrainingLog {
    /// `iter \t loss [\t val_map@1]`, one line per iteration.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let _ = write!(s, "{}\t{}", e.iter, e.loss);
            if let Some(v) = e.val_map {
                let _ = write!(s, "\t{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn losses(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.loss).collect()
    }
}

pub fn train(
    ds: &Dataset,
    mcfg: &ModelConfig,
    ocfg: &ObjectiveSpec,
    tcfg: &TrainConfig,
) -> Result<(ModelParams, TrainingLog)> {
    train_with_hook(ds, mcfg, ocfg, tcfg, &mut |_, _| Ok(None))
}

/// Like [`train`], calling `hook(iter, params)` every `eval_every`
/// iterations; a returned value is logged as validation MAP@1.
pub fn train_with_hook(
    ds: &Dataset,
    mcfg: &ModelConfig,
    ocfg: &ObjectiveSpec,
    tcfg: &TrainConfig,
    hook: &mut dyn FnMut(usize, &ModelParams) -> Result<Option<f64>>,
) -> Result<(ModelParams, TrainingLog)> {
    let problems: Vec<String> = mcfg
        .validate()
        .into_iter()
        .chain(ocfg.validate())
        .chain(tcfg.validate())
        .collect();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let mut params = ModelParams::init(mcfg, ds.n_users(), ds.n_items())?;
    let mut state = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut log = TrainingLog::default();
    for iter in 1..=tcfg.epochs {
        let batch = sample_batch(ds, tcfg.batch_size, &mut rng)?;
        let (loss, grads) = params.backward(&batch, ocfg)?;
        adam_step(&mut params, &grads, &mut state, tcfg)?;
        let val_map = if tcfg.eval_every > 0 && iter % tcfg.eval_every == 0 {
            hook(iter, &params)?
        } else {
            None
        };
        log.entries.push(LogEntry {
            iter,
            loss,
            val_map,
        });
    }
    Ok((params, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{IdIndex, Interaction};

    fn tiny_dataset(users: &[(&[u32], &[u32])], n_items: usize) -> Dataset {
        let mut uix = IdIndex::default();
        let mut iix = IdIndex::default();
        for i in 0..n_items {
            iix.intern(&format!("i{i}"));
        }
        let mut train = Vec::new();
        for (u, (pos, neg)) in users.iter().enumerate() {
            uix.intern(&format!("u{u}"));
            for &i in *pos {
                train.push(Interaction {
                    user: u as u32,
                    item: i,
                    label: true,
                    timestamp: 0,
                });
            }
            for &i in *neg {
                train.push(Interaction {
                    user: u as u32,
                    item: i,
                    label: false,
                    timestamp: 0,
                });
            }
        }
        Dataset::from_parts(uix, iix, train, vec![]).unwrap()
    }

    #[test]
    fn forced_sample() {
        let ds = tiny_dataset(&[(&[1], &[0])], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = sample_batch(&ds, 512, &mut rng).unwrap();
        assert_eq!(b.len(), 512);
        assert!(b.iter().all(|t| *t == Triplet::new(1, 0, 0)));
    }

    #[test]
    fn no_eligible_users_is_config_error() {
        let ds = tiny_dataset(&[(&[0, 1], &[])], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_batch(&ds, 4, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn user_frequencies_are_uniform() {
        let users: Vec<(&[u32], &[u32])> = vec![
            (&[0], &[1]),
            (&[2, 3], &[1]),
            (&[0], &[4, 5, 6]),
            (&[7], &[8]),
        ];
        let ds = tiny_dataset(&users, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(12345);
        let draws = 1_000_000;
        let mut counts = [0usize; 4];
        for t in sample_batch(&ds, draws, &mut rng).unwrap() {
            counts[t.user as usize] += 1;
        }
        let expected = draws as f64 / 4.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 3 degrees of freedom: the 0.999 quantile is 16.27.
        assert!(chi2 < 16.27, "chi2 = {chi2}, counts = {counts:?}");
        let sigma = (draws as f64 * 0.25 * 0.75).sqrt();
        assert!(counts
            .iter()
            .all(|&c| (c as f64 - expected).abs() < 3.0 * sigma));
    }

    fn one_param_model() -> ModelParams {
        ModelParams::init(
            &ModelConfig {
                embed_dim: 1,
                hidden_units: 1,
                init_scale: Some(0.5),
                ..ModelConfig::default()
            },
            2,
            2,
        )
        .unwrap()
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let mut p = one_param_model();
        let before = p.clone();
        let mut g = Gradients::zeros_like(&p);
        g.b2 = 0.3;
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &TrainConfig::default()).unwrap();
        let delta = p.b2 - before.b2;
        let expected = -1e-3 * 0.3 / (0.3 + 1e-8);
        assert!((delta - expected).abs() < 1e-15, "{delta}");
        assert!((delta + 9.999e-4).abs() < 1e-6);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = one_param_model();
        let before = p.clone();
        let g = Gradients::zeros_like(&p);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &TrainConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn untouched_rows_are_bit_unchanged() {
        let p0 = ModelParams::init(
            &ModelConfig {
                embed_dim: 3,
                hidden_units: 4,
                ..ModelConfig::default()
            },
            5,
            6,
        )
        .unwrap();
        let mut p = p0.clone();
        let mut st = AdamState::new(&p);
        let cfg = TrainConfig::default();
        let (_, g) = p
            .backward(&[Triplet::new(0, 1, 2)], &ObjectiveSpec::default())
            .unwrap();
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        let m_before = st.m.clone();
        let v_before = st.v.clone();
        let (_, g) = p
            .backward(&[Triplet::new(3, 4, 5)], &ObjectiveSpec::default())
            .unwrap();
        let snapshot = p.clone();
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        assert_eq!(p.users.row(1), snapshot.users.row(1));
        assert_eq!(st.m.users.row(1), m_before.users.row(1));
        assert_eq!(st.v.users.row(1), v_before.users.row(1));
        for i in [0, 1, 2] {
            assert_eq!(p.items.row(i), snapshot.items.row(i));
            assert_eq!(st.m.items.row(i), m_before.items.row(i));
        }
        assert_ne!(p.users.row(4), snapshot.users.row(4));
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = one_param_model();
        let mut g = Gradients::zeros_like(&p);
        g.w2[0] = f64::NAN;
        let mut st = AdamState::new(&p);
        assert!(matches!(
            adam_step(&mut p, &g, &mut st, &TrainConfig::default()),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn clipping_bounds_the_step_input() {
        let mut p = one_param_model();
        let mut g = Gradients::zeros_like(&p);
        g.w2[0] = 300.0;
        g.b2 = 400.0;
        let mut st = AdamState::new(&p);
        let cfg = TrainConfig {
            clip_norm: Some(10.0),
            ..TrainConfig::default()
        };
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        // m after one step is (1 - beta1) * clipped gradient.
        assert!((st.m.b2 - 0.1 * 8.0).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic_and_counts_iterations() {
        let ds = tiny_dataset(&[(&[0, 1], &[2, 3]), (&[2], &[0, 4])], 5);
        let m = ModelConfig {
            embed_dim: 2,
            hidden_units: 4,
            ..ModelConfig::default()
        };
        let o = ObjectiveSpec::default();
        let t = TrainConfig {
            epochs: 25,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let (a, la) = train(&ds, &m, &o, &t).unwrap();
        let (b, lb) = train(&ds, &m, &o, &t).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert_eq!(la.entries.len(), 25);

        let one = TrainConfig {
            epochs: 1,
            ..t.clone()
        };
        let (_, l1) = train(&ds, &m, &o, &one).unwrap();
        assert_eq!(l1.to_tsv().lines().count(), 1);

        let zero = TrainConfig { epochs: 0, ..t };
        assert!(matches!(train(&ds, &m, &o, &zero), Err(Error::Config(_))));
    }

    #[test]
    fn hook_runs_on_schedule() {
        let ds = tiny_dataset(&[(&[0], &[1])], 2);
        let t = TrainConfig {
            epochs: 10,
            batch_size: 2,
            eval_every: 4,
            ..TrainConfig::default()
        };
        let mut calls = Vec::new();
        let (_, log) = train_with_hook(
            &ds,
            &ModelConfig::default(),
            &ObjectiveSpec::default(),
            &t,
            &mut |it, _| {
                calls.push(it);
                Ok(Some(0.5))
            },
        )
        .unwrap();
        assert_eq!(calls, vec![4, 8]);
        assert_eq!(log.entries[3].val_map, Some(0.5));
        assert!(log.to_tsv().lines().nth(3).unwrap().ends_with("\t0.5"));
    }
}
