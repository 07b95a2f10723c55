//! Planted-model data: a random bilinear ground truth labels every
//! interaction, so pairwise accuracy on held-out pairs measures recovery.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, IdIndex, Interaction};
use crate::error::{Error, Result};
use crate::model::Matrix;
use crate::objective::Triplet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub embed_dim: usize,
    /// Distinct items each user interacts with.
    pub items_per_user: usize,
    /// Share of each user's items kept out of training.
    pub held_out_fraction: f64,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            n_users: 200,
            n_items: 500,
            embed_dim: 8,
            items_per_user: 150,
            held_out_fraction: 0.2,
            seed: 0,
        }
    }
}

pub struct Planted {
    /// Training interactions in `train`, held-out ones in `test`.
    pub dataset: Dataset,
    pub user_factors: Matrix,
    pub item_factors: Matrix,
}

impl Planted {
    /// `⟨P_u, Q_i⟩`; positive scores are labeled 1.
    pub fn true_score(&self, u: u32, i: u32) -> f64 {
        self.user_factors
            .row(u as usize)
            .iter()
            .zip(self.item_factors.row(i as usize))
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Every held-out (positive, user, negative) combination.
    pub fn held_out_triplets(&self) -> Vec<Triplet> {
        let mut out = Vec::new();
        for (u, rows) in self.dataset.test_by_user() {
            for p in rows.iter().filter(|r| r.label) {
                for n in rows.iter().filter(|r| !r.label) {
                    out.push(Triplet::new(p.item, u, n.item));
                }
            }
        }
        out
    }
}

pub fn planted(spec: &PlantedSpec) -> Result<Planted> {
    if spec.n_users == 0 || spec.n_items == 0 || spec.embed_dim == 0 {
        return Err(Error::InvalidArgument(
            "planted model needs users, items and a positive dimension".into(),
        ));
    }
    if spec.items_per_user < 2 || spec.items_per_user > spec.n_items {
        return Err(Error::InvalidArgument(format!(
            "items_per_user must lie in [2, {}], got {}",
            spec.n_items, spec.items_per_user
        )));
    }
    if !(spec.held_out_fraction > 0.0 && spec.held_out_fraction < 1.0) {
        return Err(Error::InvalidArgument(
            "held_out_fraction must lie in (0, 1)".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut factors = |rows: usize| {
        let mut m = Matrix::zeros(rows, spec.embed_dim);
        m.data
            .iter_mut()
            .for_each(|x| *x = rng.gen_range(-1.0..1.0));
        m
    };
    let user_factors = factors(spec.n_users);
    let item_factors = factors(spec.n_items);
    let score = |u: usize, i: usize| -> f64 {
        user_factors
            .row(u)
            .iter()
            .zip(item_factors.row(i))
            .map(|(a, b)| a * b)
            .sum()
    };

    let held = ((spec.items_per_user as f64 * spec.held_out_fraction).round() as usize)
        .clamp(1, spec.items_per_user - 1);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for u in 0..spec.n_users {
        let picked = sample(&mut rng, spec.n_items, spec.items_per_user).into_vec();
        for (x, i) in picked.into_iter().enumerate() {
            let row = Interaction {
                user: u as u32,
                item: i as u32,
                label: score(u, i) > 0.0,
                timestamp: 0,
            };
            if x < spec.items_per_user - held {
                train.push(row);
            } else {
                test.push(Interaction {
                    timestamp: 1,
                    ..row
                });
            }
        }
    }
    let mut users = IdIndex::default();
    (0..spec.n_users).for_each(|u| {
        users.intern(&format!("u{u}"));
    });
    let mut items = IdIndex::default();
    (0..spec.n_items).for_each(|i| {
        items.intern(&format!("i{i}"));
    });
    let dataset = Dataset::from_parts(users, items, train, test)?;
    Ok(Planted {
        dataset,
        user_factors,
        item_factors,
    })
}
