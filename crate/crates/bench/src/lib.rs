//! Fixtures shared by the kernel benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recnet_core::synthetic::{planted, PlantedSpec};
use recnet_core::trainer::sample_batch;
use recnet_core::{Dataset, ModelConfig, ModelParams, Triplet};

/// Planted dataset at roughly ML-100K scale.
pub fn dataset() -> Dataset {
    planted(&PlantedSpec {
        n_users: 943,
        n_items: 1682,
        items_per_user: 100,
        ..PlantedSpec::default()
    })
    .expect("planted dataset")
    .dataset
}

pub fn model(ds: &Dataset, embed_dim: usize, hidden_units: usize) -> ModelParams {
    let cfg = ModelConfig {
        embed_dim,
        hidden_units,
        seed: 1,
        ..ModelConfig::default()
    };
    ModelParams::init(&cfg, ds.n_users(), ds.n_items()).expect("model init")
}

pub fn batch(ds: &Dataset, n: usize) -> Vec<Triplet> {
    sample_batch(ds, n, &mut ChaCha8Rng::seed_from_u64(2)).expect("batch")
}

/// `n` scores with roughly one tie in ten.
pub fn scores(n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    (0..n)
        .map(|_| (rng.gen_range(0.0..1.0f64) * n as f64 / 10.0).floor())
        .collect()
}
