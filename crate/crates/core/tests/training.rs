mod common;

use recnet_core::dataset::{load_interactions, prepare, InputFormat};
use recnet_core::{train, ModelConfig, ObjectiveSpec, SplitSpec, TrainConfig, Variant};

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Sliding 100-iteration medians after iteration 2000 stay at or below the
/// median of the first 100 iterations.
#[test]
fn ml100k_loss_trends_down() {
    let raw = load_interactions(&common::require_ml100k(), InputFormat::TsvRating).unwrap();
    let (ds, _) = prepare(raw, InputFormat::TsvRating, &SplitSpec::default()).unwrap();
    let m = ModelConfig { embed_dim: 1, hidden_units: 32, ..ModelConfig::default() };
    let o = ObjectiveSpec { variant: Variant::C, lambda: 0.05, ..ObjectiveSpec::default() };
    let (_, log) = train(&ds, &m, &o, &TrainConfig { seed: 1, ..TrainConfig::default() }).unwrap();
    let losses = log.losses();
    assert_eq!(losses.len(), 10_000);
    let head = median(&losses[..100]);
    for t in 2000..losses.len() - 100 {
        let w = median(&losses[t..t + 100]);
        assert!(w <= head, "window at {t}: median {w} > initial {head}");
    }
}

#[test]
fn random_model_all_items_map_is_small() {
    use recnet_core::{evaluate, CandidateSetting, EvalOptions, ModelParams};
    let raw = load_interactions(&common::require_ml100k(), InputFormat::TsvRating).unwrap();
    let (ds, _) = prepare(raw, InputFormat::TsvRating, &SplitSpec::default()).unwrap();
    let opts = EvalOptions { setting: CandidateSetting::All, cutoffs: vec![1], ..EvalOptions::default() };
    for seed in 0..3 {
        let cfg = ModelConfig { embed_dim: 8, seed, ..ModelConfig::default() };
        let p = ModelParams::init(&cfg, ds.n_users(), ds.n_items()).unwrap();
        let map = evaluate(&p, &ds, &opts).unwrap().map(1).unwrap();
        assert!(map < 0.05, "seed {seed}: MAP@1 {map}");
    }
}
