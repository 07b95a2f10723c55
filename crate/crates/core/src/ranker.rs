//! Top-k inference: the insertion procedure that keeps a ranked list while
//! scanning candidates, and the conventional sort.
//!
//! Both share one tie rule: an item displaces a list entry only when its
//! score is strictly greater, so equal scores keep first-seen order.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::Scorer;

#[derive(Clone, Debug, PartialEq)]
pub struct RankedList {
    pub user: u32,
    pub items: Vec<u32>,
    pub scores: Vec<f64>,
}

impl RankedList {
    /// `user \t rank \t item \t score` lines, ranks starting at 1.
    pub fn write_tsv(&self, out: &mut String, user_id: &str, item_id: impl Fn(u32) -> String) {
        for (r, (i, s)) in self.items.iter().zip(&self.scores).enumerate() {
            let _ = writeln!(out, "{user_id}\t{}\t{}\t{s}", r + 1, item_id(*i));
        }
    }
}

fn scored_candidates<S: Scorer + ?Sized>(
    scorer: &S,
    user: u32,
    candidates: &[u32],
    k: usize,
) -> Result<Vec<(u32, f64)>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("empty candidate set".into()));
    }
    if let Some((n, m)) = scorer.bounds() {
        if user as usize >= n {
            return Err(Error::IndexOutOfRange {
                index: user as usize,
                size: n,
            });
        }
        if let Some(&bad) = candidates.iter().find(|&&i| i as usize >= m) {
            return Err(Error::IndexOutOfRange {
                index: bad as usize,
                size: m,
            });
        }
    }
    let mut seen = HashSet::with_capacity(candidates.len());
    Ok(candidates
        .iter()
        .filter(|i| seen.insert(**i))
        .map(|&i| (i, scorer.score(user, i)))
        .collect())
}

fn into_list(user: u32, ranked: Vec<(u32, f64)>) -> RankedList {
    let (items, scores) = ranked.into_iter().unzip();
    RankedList {
        user,
        items,
        scores,
    }
}

/// Scans `candidates` once, keeping at most `k` items ordered by score.
/// `O(k * |candidates|)` comparisons; every candidate is scored once.
pub fn topk_insertion<S: Scorer + ?Sized>(
    scorer: &S,
    user: u32,
    candidates: &[u32],
    k: usize,
) -> Result<RankedList> {
    let scored = scored_candidates(scorer, user, candidates, k)?;
    let mut list: Vec<(u32, f64)> = Vec::with_capacity(k + 1);

    // Seed with the first two candidates, preferred one on top.
    let mut rest = scored.iter();
    let first = *rest.next().expect("non-empty");
    list.push(first);
    if let Some(&second) = scored.get(1) {
        rest.next();
        if second.1 > first.1 {
            list.insert(0, second);
        } else {
            list.push(second);
        }
        list.truncate(k);
    }

    for &(item, s) in rest {
        let mut j = 0;
        while j < list.len() && !(s > list[j].1) {
            j += 1;
        }
        if j < k {
            list.insert(j, (item, s));
            list.truncate(k);
        }
    }
    Ok(into_list(user, list))
}

/// Stable sort of `candidates` by descending score, truncated to `k`.
pub fn topk_sort<S: Scorer + ?Sized>(
    scorer: &S,
    user: u32,
    candidates: &[u32],
    k: usize,
) -> Result<RankedList> {
    let mut scored = scored_candidates(scorer, user, candidates, k)?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    scored.truncate(k);
    Ok(into_list(user, scored))
}
