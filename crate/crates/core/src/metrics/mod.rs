//! MAP@ℓ evaluation under the two candidate settings.

mod wilcoxon;

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use wilcoxon::{wilcoxon_rank_sum, wilcoxon_rank_sum_with, RankSumMethod, RankSumTest};

use crate::dataset::{candidate_sets, CandidateSetting, Dataset};
use crate::error::{Error, Result};
use crate::model::Scorer;
use crate::ranker::topk_sort;

/// `AP@ℓ = (1/ℓ) Σ_{j≤ℓ} r_j · Pr(j)` with `Pr(j)` the precision at rank
/// `j`. The normalizer is always `ℓ`, not the number of relevant items;
/// lists shorter than `ℓ` count as zero-padded and entries past `ℓ` are
/// ignored.
pub fn ap_at(relevance: &[bool], cutoff: usize) -> Result<f64> {
    if cutoff == 0 {
        return Err(Error::InvalidArgument(
            "AP cutoff must be at least 1".into(),
        ));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (j, &r) in relevance.iter().take(cutoff).enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (j + 1) as f64;
        }
    }
    Ok(sum / cutoff as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub setting: CandidateSetting,
    pub cutoffs: Vec<usize>,
    /// Leave out users with no relevant candidate instead of scoring them 0.
    pub skip_no_relevant: bool,
    /// In the all-items setting, keep the user's training items as candidates.
    pub all_includes_train: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            setting: CandidateSetting::Interacted,
            cutoffs: vec![1, 5, 10],
            skip_no_relevant: false,
            all_includes_train: false,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.cutoffs.is_empty() {
            p.push("eval.cutoffs must not be empty".to_string());
        }
        if self.cutoffs.contains(&0) {
            p.push("eval.cutoffs must be positive".to_string());
        }
        p
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub setting: CandidateSetting,
    pub cutoffs: Vec<usize>,
    pub map_at: BTreeMap<usize, f64>,
    /// One row per evaluated user, AP values in `cutoffs` order.
    pub per_user_ap: Vec<(u32, Vec<f64>)>,
    pub n_users_evaluated: usize,
}

impl EvalReport {
    pub fn map(&self, cutoff: usize) -> Option<f64> {
        self.map_at.get(&cutoff).copied()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let setting = match self.setting {
            CandidateSetting::Interacted => "interacted",
            CandidateSetting::All => "all",
        };
        let _ = writeln!(s, "setting\t{setting}");
        let _ = writeln!(s, "users_evaluated\t{}", self.n_users_evaluated);
        for (l, m) in &self.map_at {
            let _ = writeln!(s, "map@{l}\t{m}");
        }
        s
    }

    /// Header `user \t ap@ℓ ...` followed by one row per user, with opaque
    /// user ids supplied by `user_id`.
    pub fn per_user_tsv(&self, user_id: impl Fn(u32) -> String) -> String {
        let mut s = String::from("user");
        for l in &self.cutoffs {
            let _ = write!(s, "\tap@{l}");
        }
        s.push('\n');
        for (u, aps) in &self.per_user_ap {
            s.push_str(&user_id(*u));
            for a in aps {
                let _ = write!(s, "\t{a}");
            }
            s.push('\n');
        }
        s
    }
}

/// Ranks each test user's candidates with `scorer` and reports MAP at every
/// cutoff. Relevant means a positive test interaction for that user.
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    ds: &Dataset,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let problems = opts.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    if ds.test().is_empty() {
        return Err(Error::EmptyDataset("test partition"));
    }
    let max_cut = *opts.cutoffs.iter().max().expect("validated non-empty");
    let cands = candidate_sets(ds, opts.setting, opts.all_includes_train);
    let relevant: Vec<HashSet<u32>> = {
        let mut r = vec![HashSet::new(); ds.n_users()];
        for row in ds.test().iter().filter(|r| r.label) {
            r[row.user as usize].insert(row.item);
        }
        r
    };
    let rows: Vec<Option<(u32, Vec<f64>)>> = cands
        .par_iter()
        .map(|(u, c)| -> Result<Option<(u32, Vec<f64>)>> {
            if c.is_empty() {
                return Ok(None);
            }
            let rel = &relevant[*u as usize];
            if opts.skip_no_relevant && !c.iter().any(|i| rel.contains(i)) {
                return Ok(None);
            }
            let ranked = topk_sort(scorer, *u, c, max_cut)?;
            let flags: Vec<bool> = ranked.items.iter().map(|i| rel.contains(i)).collect();
            let aps = opts
                .cutoffs
                .iter()
                .map(|&l| ap_at(&flags, l))
                .collect::<Result<_>>()?;
            Ok(Some((*u, aps)))
        })
        .collect::<Result<_>>()?;
    let per_user_ap: Vec<(u32, Vec<f64>)> = rows.into_iter().flatten().collect();
    let n = per_user_ap.len();
    let map_at = opts
        .cutoffs
        .iter()
        .enumerate()
        .map(|(c, &l)| {
            let mean = if n == 0 {
                0.0
            } else {
                per_user_ap.iter().map(|(_, a)| a[c]).sum::<f64>() / n as f64
            };
            (l, mean)
        })
        .collect();
    Ok(EvalReport {
        setting: opts.setting,
        cutoffs: opts.cutoffs.clone(),
        map_at,
        per_user_ap,
        n_users_evaluated: n,
    })
}

/// Reads the AP column for `cutoff` from a per-user TSV written by
/// [`EvalReport::per_user_tsv`].
pub fn read_per_user_ap(text: &str, cutoff: usize) -> Result<Vec<f64>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::EmptyInput("per-user AP table".into()))?;
    let want = format!("ap@{cutoff}");
    let col = header
        .split('\t')
        .position(|h| h == want)
        .ok_or_else(|| Error::InvalidArgument(format!("no column {want} in per-user AP table")))?;
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split('\t')
                .nth(col)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("malformed per-user AP row {l:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{IdIndex, Interaction};

    #[test]
    fn ap_examples() {
        assert_eq!(ap_at(&[true, true, true], 3).unwrap(), 1.0);
        assert!((ap_at(&[true, false, true], 3).unwrap() - 5.0 / 9.0).abs() < 1e-15);
        assert_eq!(ap_at(&[false, false], 2).unwrap(), 0.0);
        assert!(ap_at(&[true], 0).is_err());
        // Short list keeps the 1/ℓ normalizer.
        assert_eq!(ap_at(&[true], 2).unwrap(), 0.5);
    }

    #[test]
    fn swapping_a_hit_forward_never_hurts() {
        for len in 1..=6usize {
            for mask in 0u32..(1 << len) {
                let r: Vec<bool> = (0..len).map(|j| mask >> j & 1 == 1).collect();
                for j in 0..len {
                    for jp in j + 1..len {
                        if !r[j] && r[jp] {
                            let mut s = r.clone();
                            s.swap(j, jp);
                            for l in 1..=len {
                                assert!(ap_at(&s, l).unwrap() >= ap_at(&r, l).unwrap());
                            }
                        }
                    }
                }
            }
        }
    }

    fn dataset(test: Vec<Interaction>, n_users: usize, n_items: usize) -> Dataset {
        let mut u = IdIndex::default();
        let mut i = IdIndex::default();
        (0..n_users).for_each(|x| {
            u.intern(&format!("u{x}"));
        });
        (0..n_items).for_each(|x| {
            i.intern(&format!("i{x}"));
        });
        let train: Vec<Interaction> = (0..n_users as u32)
            .flat_map(|user| {
                [
                    Interaction {
                        user,
                        item: 0,
                        label: true,
                        timestamp: 0,
                    },
                    Interaction {
                        user,
                        item: 1,
                        label: false,
                        timestamp: 0,
                    },
                ]
            })
            .collect();
        Dataset::from_parts(u, i, train, test).unwrap()
    }

    #[test]
    fn single_relevant_candidate() {
        let ds = dataset(
            vec![Interaction {
                user: 0,
                item: 2,
                label: true,
                timestamp: 1,
            }],
            1,
            3,
        );
        let r = evaluate(
            &|_: u32, _: u32| 0.0,
            &ds,
            &EvalOptions {
                cutoffs: vec![1],
                ..EvalOptions::default()
            },
        )
        .unwrap();
        assert_eq!(r.map(1), Some(1.0));
        assert_eq!(r.n_users_evaluated, 1);
    }

    #[test]
    fn oracle_scorer_is_perfect_at_one() {
        let mut test = Vec::new();
        for user in 0..5u32 {
            for item in 2..8u32 {
                test.push(Interaction {
                    user,
                    item,
                    label: (user + item) % 3 == 0,
                    timestamp: 1,
                });
            }
        }
        let ds = dataset(test.clone(), 5, 8);
        let label = move |u: u32, i: u32| -> f64 {
            let y = test.iter().any(|r| r.user == u && r.item == i && r.label);
            f64::from(u8::from(y)) + 0.001 * i as f64
        };
        let r = evaluate(&label, &ds, &EvalOptions::default()).unwrap();
        assert_eq!(r.map(1), Some(1.0));
        assert!(r.map_at.values().all(|m| (0.0..=1.0).contains(m)));
    }

    #[test]
    fn users_without_relevant_items() {
        let test = vec![
            Interaction {
                user: 0,
                item: 2,
                label: true,
                timestamp: 1,
            },
            Interaction {
                user: 1,
                item: 2,
                label: false,
                timestamp: 1,
            },
        ];
        let ds = dataset(test, 2, 3);
        let g = |_: u32, _: u32| 0.0;
        let opts = EvalOptions {
            cutoffs: vec![1],
            ..EvalOptions::default()
        };
        assert_eq!(evaluate(&g, &ds, &opts).unwrap().map(1), Some(0.5));
        let skip = EvalOptions {
            skip_no_relevant: true,
            ..opts
        };
        let r = evaluate(&g, &ds, &skip).unwrap();
        assert_eq!((r.map(1), r.n_users_evaluated), (Some(1.0), 1));
    }

    #[test]
    fn empty_test_is_an_error() {
        let ds = dataset(vec![], 1, 3);
        assert!(matches!(
            evaluate(&|_: u32, _: u32| 0.0, &ds, &EvalOptions::default()),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn per_user_table_round_trip() {
        let report = EvalReport {
            setting: CandidateSetting::Interacted,
            cutoffs: vec![1, 10],
            map_at: BTreeMap::new(),
            per_user_ap: vec![(0, vec![1.0, 0.25]), (3, vec![0.0, 0.125])],
            n_users_evaluated: 2,
        };
        let tsv = report.per_user_tsv(|u| format!("u{u}"));
        assert_eq!(read_per_user_ap(&tsv, 10).unwrap(), vec![0.25, 0.125]);
        assert!(read_per_user_ap(&tsv, 5).is_err());
    }
}
