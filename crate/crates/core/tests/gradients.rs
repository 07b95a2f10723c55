mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use recnet_core::objective::{loss_combined, NormMode};
use recnet_core::trainer::{adam_step, AdamState};
use recnet_core::{ModelConfig, ModelParams, ObjectiveSpec, TrainConfig, Variant};

use common::{fd_check, min_abs_preactivation, random_batch};

fn variant(i: u8) -> Variant {
    [Variant::C, Variant::P, Variant::Cp][i as usize % 3]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn backward_matches_central_differences(
        seed in 0u64..1_000_000,
        k in 1usize..6,
        h in 1usize..12,
        v in 0u8..3,
        alpha in 0.0f64..1.0,
        lambda in 0.0f64..0.1,
        squared in any::<bool>(),
        len in 1usize..8,
    ) {
        let cfg = ModelConfig { embed_dim: k, hidden_units: h, seed, ..ModelConfig::default() };
        let p = ModelParams::init(&cfg, 4, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
        let batch = random_batch(&mut rng, 4, 7, len);
        prop_assume!(min_abs_preactivation(&p, &batch) > 1e-4);
        let spec = ObjectiveSpec {
            variant: variant(v),
            alpha,
            lambda,
            norm: if squared { NormMode::Squared } else { NormMode::Plain },
            ..ObjectiveSpec::default()
        };
        let (worst, _) = fd_check(&p, &batch, &spec, 1e-6);
        prop_assert!(worst <= 1e-5, "worst relative error {worst:e}");
    }

    #[test]
    fn gradient_touches_only_batch_rows(seed in 0u64..10_000, len in 1usize..5) {
        let cfg = ModelConfig { embed_dim: 3, hidden_units: 4, seed, ..ModelConfig::default() };
        let p = ModelParams::init(&cfg, 10, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = random_batch(&mut rng, 10, 20, len);
        let (_, g) = p.backward(&batch, &ObjectiveSpec { variant: Variant::Cp, lambda: 0.01, ..ObjectiveSpec::default() }).unwrap();
        for u in g.users.keys() {
            prop_assert!(batch.iter().any(|t| t.user == *u));
        }
        for i in g.items.keys() {
            prop_assert!(batch.iter().any(|t| t.pos == *i || t.neg == *i));
        }
    }
}

#[test]
fn adam_descends_on_a_fixed_batch() {
    let cfg = ModelConfig {
        embed_dim: 4,
        hidden_units: 8,
        seed: 3,
        ..ModelConfig::default()
    };
    let mut p = ModelParams::init(&cfg, 5, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch = random_batch(&mut rng, 5, 9, 6);
    let spec = ObjectiveSpec::default();
    let tc = TrainConfig {
        learning_rate: 0.01,
        ..TrainConfig::default()
    };
    let mut state = AdamState::new(&p);
    let before = loss_combined(&p, &batch, &spec).unwrap();
    for _ in 0..200 {
        let (_, g) = p.backward(&batch, &spec).unwrap();
        adam_step(&mut p, &g, &mut state, &tc).unwrap();
    }
    let after = loss_combined(&p, &batch, &spec).unwrap();
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn lazy_adam_leaves_untouched_rows_bit_identical() {
    let cfg = ModelConfig { embed_dim: 3, hidden_units: 4, seed: 8, ..ModelConfig::default() };
    let mut p = ModelParams::init(&cfg, 8, 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let spec = ObjectiveSpec { lambda: 0.01, ..ObjectiveSpec::default() };
    let tc = TrainConfig::default();
    let mut state = AdamState::new(&p);
    for step in 0..20 {
        let batch = random_batch(&mut rng, 8, 16, 3);
        let (_, g) = p.backward(&batch, &spec).unwrap();
        let (before, m, v) = (p.clone(), state.m.clone(), state.v.clone());
        adam_step(&mut p, &g, &mut state, &tc).unwrap();
        for u in 0..8u32 {
            if !g.users.contains_key(&u) {
                let r = u as usize;
                assert_eq!(p.users.row(r), before.users.row(r), "step {step} user {u}");
                assert_eq!(state.m.users.row(r), m.users.row(r));
                assert_eq!(state.v.users.row(r), v.users.row(r));
            }
        }
        for i in 0..16u32 {
            if !g.items.contains_key(&i) {
                let r = i as usize;
                assert_eq!(p.items.row(r), before.items.row(r), "step {step} item {i}");
                assert_eq!(state.m.items.row(r), m.items.row(r));
                assert_eq!(state.v.items.row(r), v.items.row(r));
            }
        }
    }
}
