//! Exact proper fractional covers and the fractional chromatic number.
//!
//! Each connected component is solved on its own: the covering LP
//! `min Σω s.t. Aω ≥ 1, ω ≥ 0` over a family of independent sets is solved
//! by dual simplex, the `≥` cover is made exact by dropping over-covered
//! vertices from sets, and component covers are laid side by side on a
//! weight axis so that the union has weight `max_c χ*_c`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::graph::DependencyGraph;
use crate::error::{Error, Result};

const TOL: f64 = 1e-9;
/// Independent sets enumerated per component before giving up.
pub const MAX_SETS: usize = 200_000;
/// Tableau cells allowed for one component LP.
pub const MAX_TABLEAU_CELLS: usize = 12_000_000;
pub const MAX_EXHAUSTIVE_NODES: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverMethod {
    /// LP over maximal independent sets.
    #[default]
    Lp,
    /// LP over every independent set.
    Exhaustive,
    /// Closed-form Latin-rectangle cover; every component must be a
    /// complete rook grid.
    Diagonal,
}

impl std::str::FromStr for CoverMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lp" => Ok(CoverMethod::Lp),
            "exhaustive" => Ok(CoverMethod::Exhaustive),
            "diagonal" => Ok(CoverMethod::Diagonal),
            _ => Err(Error::InvalidArgument(format!(
                "cover method must be `lp`, `exhaustive` or `diagonal`, got {s:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoverResult {
    /// Independent sets, node indices ascending.
    pub sets: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
    /// Minimum total weight `χ*`.
    pub chromatic: f64,
    /// Objective of a feasible dual packing: a certified lower bound on `χ*`.
    pub dual_bound: f64,
    /// `max_c n_c / α_c` over components, another lower bound on `χ*`.
    pub ratio_bound: f64,
}

impl CoverResult {
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `chi_star`, bounds, then one `weight \t nodes` line per set.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "chi_star\t{}", self.chromatic);
        let _ = writeln!(s, "total_weight\t{}", self.total_weight());
        let _ = writeln!(s, "dual_bound\t{}", self.dual_bound);
        let _ = writeln!(s, "ratio_bound\t{}", self.ratio_bound);
        let _ = writeln!(s, "sets\t{}", self.sets.len());
        for (set, w) in self.sets.iter().zip(&self.weights) {
            let nodes: Vec<String> = set.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "{w}\t{}", nodes.join(","));
        }
        s
    }
}

/// Checks both clauses of an exact proper fractional cover: every set is
/// independent with weight in `[0, 1]`, and every node's covering weight is
/// exactly 1 (to `tol`). Also checks `chromatic` against the total weight.
pub fn check_cover(
    graph: &DependencyGraph,
    cover: &CoverResult,
    tol: f64,
) -> std::result::Result<(), String> {
    if cover.sets.len() != cover.weights.len() {
        return Err("sets and weights differ in length".into());
    }
    let mut covered = vec![0.0; graph.n_nodes()];
    for (j, (set, &w)) in cover.sets.iter().zip(&cover.weights).enumerate() {
        if !(-tol..=1.0 + tol).contains(&w) {
            return Err(format!("set {j} has weight {w} outside [0, 1]"));
        }
        for (x, &a) in set.iter().enumerate() {
            if a >= graph.n_nodes() {
                return Err(format!("set {j} names node {a} beyond the graph"));
            }
            if let Some(&b) = set[x + 1..]
                .iter()
                .find(|&&b| b == a || graph.adjacent(a, b))
            {
                return Err(format!("set {j} is not independent: nodes {a} and {b}"));
            }
            covered[a] += w;
        }
    }
    if let Some((a, c)) = covered
        .iter()
        .enumerate()
        .find(|(_, c)| (**c - 1.0).abs() > tol)
    {
        return Err(format!("node {a} is covered with weight {c}"));
    }
    if (cover.total_weight() - cover.chromatic).abs() > tol * cover.sets.len().max(1) as f64 {
        return Err(format!(
            "total weight {} differs from chi* {}",
            cover.total_weight(),
            cover.chromatic
        ));
    }
    Ok(())
}

/// Minimum-weight exact proper fractional cover of `graph`.
pub fn fractional_chromatic(graph: &DependencyGraph, method: CoverMethod) -> Result<CoverResult> {
    if graph.n_nodes() == 0 {
        return Ok(CoverResult {
            sets: vec![],
            weights: vec![],
            chromatic: 0.0,
            dual_bound: 0.0,
            ratio_bound: 0.0,
        });
    }
    let mut cache: HashMap<Vec<Vec<usize>>, LocalCover> = HashMap::new();
    let mut parts = Vec::new();
    for members in graph.components() {
        let local = graph.local_adjacency(&members);
        let solved = match cache.get(&local) {
            Some(c) => c.clone(),
            None => {
                let c = match method {
                    CoverMethod::Lp => solve_lp(&local, false)?,
                    CoverMethod::Exhaustive => solve_lp(&local, true)?,
                    CoverMethod::Diagonal => diagonal_cover(graph, &members)?,
                };
                cache.insert(local, c.clone());
                c
            }
        };
        parts.push((members, solved));
    }
    Ok(join(parts))
}

#[derive(Clone, Debug)]
struct LocalCover {
    sets: Vec<Vec<usize>>,
    weights: Vec<f64>,
    value: f64,
    dual: f64,
    alpha: usize,
}

/// Fixed-width bitset over component-local node indices.
#[derive(Clone, PartialEq, Eq)]
struct Bits(Vec<u64>);

impl Bits {
    fn empty(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64)])
    }
    fn full(n: usize) -> Self {
        let mut b = Self::empty(n);
        (0..n).for_each(|i| b.set(i));
        b
    }
    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
    fn clear(&mut self, i: usize) {
        self.0[i / 64] &= !(1 << (i % 64));
    }
    fn and(&self, o: &Bits) -> Bits {
        Bits(self.0.iter().zip(&o.0).map(|(a, b)| a & b).collect())
    }
    fn and_not(&self, o: &Bits) -> Bits {
        Bits(self.0.iter().zip(&o.0).map(|(a, b)| a & !b).collect())
    }
    fn is_empty(&self) -> bool {
        self.0.iter().all(|w| *w == 0)
    }
    fn count(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }
    fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().flat_map(|(k, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                (w != 0).then(|| {
                    let t = w.trailing_zeros() as usize;
                    w &= w - 1;
                    k * 64 + t
                })
            })
        })
    }
}

/// `compat[v]`: nodes that may share an independent set with `v`.
fn compatibility(adj: &[Vec<usize>]) -> Vec<Bits> {
    let n = adj.len();
    adj.iter()
        .enumerate()
        .map(|(v, nb)| {
            let mut b = Bits::full(n);
            b.clear(v);
            nb.iter().for_each(|&u| b.clear(u));
            b
        })
        .collect()
}

fn too_many() -> Error {
    Error::Capacity(format!(
        "more than {MAX_SETS} independent sets in one component"
    ))
}

/// Maximal independent sets (Bron-Kerbosch with pivoting on the complement).
fn maximal_independent_sets(adj: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
    fn rec(
        r: &mut Vec<usize>,
        p: Bits,
        mut x: Bits,
        compat: &[Bits],
        out: &mut Vec<Vec<usize>>,
    ) -> Result<()> {
        if p.is_empty() && x.is_empty() {
            if out.len() == MAX_SETS {
                return Err(too_many());
            }
            let mut s = r.clone();
            s.sort_unstable();
            out.push(s);
            return Ok(());
        }
        let pivot = p
            .iter()
            .chain(x.iter())
            .max_by_key(|&u| (p.and(&compat[u]).count(), usize::MAX - u))
            .expect("non-empty");
        let mut p = p;
        for v in p.and_not(&compat[pivot]).iter().collect::<Vec<_>>() {
            r.push(v);
            rec(r, p.and(&compat[v]), x.and(&compat[v]), compat, out)?;
            r.pop();
            p.clear(v);
            x.set(v);
        }
        Ok(())
    }
    let compat = compatibility(adj);
    let mut out = Vec::new();
    rec(
        &mut Vec::new(),
        Bits::full(adj.len()),
        Bits::empty(adj.len()),
        &compat,
        &mut out,
    )?;
    out.sort();
    Ok(out)
}

/// Every non-empty independent set, in lexicographic order.
fn all_independent_sets(adj: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
    fn rec(
        cur: &mut Vec<usize>,
        cand: Bits,
        compat: &[Bits],
        out: &mut Vec<Vec<usize>>,
    ) -> Result<()> {
        for v in cand.iter().collect::<Vec<_>>() {
            if out.len() == MAX_SETS {
                return Err(too_many());
            }
            cur.push(v);
            out.push(cur.clone());
            let mut next = cand.and(&compat[v]);
            (0..=v).for_each(|u| next.clear(u));
            rec(cur, next, compat, out)?;
            cur.pop();
        }
        Ok(())
    }
    let compat = compatibility(adj);
    let mut out = Vec::new();
    rec(&mut Vec::new(), Bits::full(adj.len()), &compat, &mut out)?;
    Ok(out)
}

/// Optimal solution of `min 1ᵀω s.t. Aω ≥ 1, ω ≥ 0` with `A[v][j] = 1` iff
/// `v ∈ sets[j]`, and the optimal dual `y` (`Aᵀy ≤ 1`, `y ≥ 0`).
///
/// Dual simplex on the surplus form `-Aω + s = -1`: the all-surplus basis is
/// dual feasible since every cost is non-negative. Bland's rule on both the
/// leaving row and the entering column prevents cycling.
pub(crate) fn solve_covering_lp(
    n_nodes: usize,
    sets: &[Vec<usize>],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (m, ns) = (n_nodes, sets.len());
    let n = ns + m;
    if m.saturating_mul(n) > MAX_TABLEAU_CELLS {
        return Err(Error::Capacity(format!(
            "covering LP with {m} rows and {n} columns is too large"
        )));
    }
    let mut t = vec![0.0; m * n];
    for (j, s) in sets.iter().enumerate() {
        for &v in s {
            t[v * n + j] = -1.0;
        }
    }
    for v in 0..m {
        t[v * n + ns + v] = 1.0;
    }
    let mut rhs = vec![-1.0; m];
    let mut cost: Vec<f64> = (0..n).map(|j| if j < ns { 1.0 } else { 0.0 }).collect();
    let mut basis: Vec<usize> = (ns..n).collect();

    let max_iter = 50 * (m + n);
    for _ in 0..max_iter {
        let leave = (0..m).filter(|&r| rhs[r] < -TOL).min_by_key(|&r| basis[r]);
        let Some(r) = leave else {
            let mut omega = vec![0.0; ns];
            for (row, &b) in basis.iter().enumerate() {
                if b < ns {
                    omega[b] = rhs[row].max(0.0);
                }
            }
            let y = cost[ns..].iter().map(|c| c.max(0.0)).collect();
            return Ok((omega, y));
        };
        let row = &t[r * n..(r + 1) * n];
        let mut enter: Option<(usize, f64)> = None;
        for j in 0..n {
            if row[j] < -TOL {
                let ratio = cost[j] / -row[j];
                if enter.is_none_or(|(_, best)| ratio < best - TOL) {
                    enter = Some((j, ratio));
                }
            }
        }
        let Some((c, _)) = enter else {
            return Err(Error::Numeric(
                "covering LP is infeasible: a node lies in no set".into(),
            ));
        };
        let piv = t[r * n + c];
        for x in &mut t[r * n..(r + 1) * n] {
            *x /= piv;
        }
        rhs[r] /= piv;
        let prow: Vec<f64> = t[r * n..(r + 1) * n].to_vec();
        for i in 0..m {
            if i == r {
                continue;
            }
            let f = t[i * n + c];
            if f != 0.0 {
                for (x, p) in t[i * n..(i + 1) * n].iter_mut().zip(&prow) {
                    *x -= f * p;
                }
                rhs[i] -= f * rhs[r];
            }
        }
        let f = cost[c];
        if f != 0.0 {
            for (x, p) in cost.iter_mut().zip(&prow) {
                *x -= f * p;
            }
        }
        basis[r] = c;
    }
    Err(Error::Numeric("covering LP did not converge".into()))
}

/// Turns a `≥ 1` cover into an exact one of no larger weight by splitting
/// sets: weight `t` moves from `M` to `M \ {v}` while `v` is over-covered.
fn exactify(n_nodes: usize, sets: &[Vec<usize>], weights: &[f64]) -> (Vec<Vec<usize>>, Vec<f64>) {
    let mut cover: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for (s, &w) in sets.iter().zip(weights) {
        if w > TOL {
            *cover.entry(s.clone()).or_default() += w;
        }
    }
    for v in 0..n_nodes {
        let holders: Vec<Vec<usize>> = cover
            .keys()
            .filter(|s| s.binary_search(&v).is_ok())
            .cloned()
            .collect();
        let mut excess: f64 = holders.iter().map(|s| cover[s]).sum::<f64>() - 1.0;
        for s in holders {
            if excess <= TOL {
                break;
            }
            let w = cover[&s];
            let moved = w.min(excess);
            if w - moved <= TOL {
                cover.remove(&s);
            } else {
                cover.insert(s.clone(), w - moved);
            }
            let rest: Vec<usize> = s.into_iter().filter(|&x| x != v).collect();
            if !rest.is_empty() {
                *cover.entry(rest).or_default() += moved;
            }
            excess -= moved;
        }
    }
    cover.into_iter().unzip()
}

fn solve_lp(adj: &[Vec<usize>], exhaustive: bool) -> Result<LocalCover> {
    let n = adj.len();
    if n == 1 {
        return Ok(LocalCover {
            sets: vec![vec![0]],
            weights: vec![1.0],
            value: 1.0,
            dual: 1.0,
            alpha: 1,
        });
    }
    let sets = if exhaustive {
        if n > MAX_EXHAUSTIVE_NODES {
            return Err(Error::Capacity(format!(
                "exhaustive cover supports at most {MAX_EXHAUSTIVE_NODES} nodes per component, got {n}"
            )));
        }
        all_independent_sets(adj)?
    } else {
        maximal_independent_sets(adj)?
    };
    let alpha = sets.iter().map(Vec::len).max().unwrap_or(0);
    let (omega, y) = solve_covering_lp(n, &sets)?;
    let (sets, weights) = exactify(n, &sets, &omega);
    let value = weights.iter().sum();
    Ok(LocalCover {
        sets,
        weights,
        value,
        dual: y.iter().sum(),
        alpha,
    })
}

/// `max(a, b)` disjoint transversals of a complete `a x b` rook grid.
fn diagonal_cover(graph: &DependencyGraph, members: &[usize]) -> Result<LocalCover> {
    let nodes = graph.nodes();
    let mut pos: Vec<u32> = Vec::new();
    let mut neg: Vec<u32> = Vec::new();
    let mut at: HashMap<(u32, u32), usize> = HashMap::new();
    for (l, &g) in members.iter().enumerate() {
        let t = nodes[g];
        if !pos.contains(&t.pos) {
            pos.push(t.pos);
        }
        if !neg.contains(&t.neg) {
            neg.push(t.neg);
        }
        at.insert((t.pos, t.neg), l);
    }
    let (a, b) = (pos.len(), neg.len());
    if at.len() != members.len() || a * b != members.len() {
        return Err(Error::InvalidArgument(
            "diagonal cover needs every component to be a complete rook grid".into(),
        ));
    }
    let (short, long) = (a.min(b), a.max(b));
    let mut sets = Vec::with_capacity(long);
    for j in 0..long {
        let mut s: Vec<usize> = (0..short)
            .map(|x| {
                let y = (x + j) % long;
                if a <= b {
                    at[&(pos[x], neg[y])]
                } else {
                    at[&(pos[y], neg[x])]
                }
            })
            .collect();
        s.sort_unstable();
        sets.push(s);
    }
    Ok(LocalCover {
        sets,
        weights: vec![1.0; long],
        value: long as f64,
        dual: long as f64,
        alpha: short,
    })
}

/// Lays each component's cover on `[0, W_c)` and cuts the axis at every
/// breakpoint; the union of the sets active on a slice is independent since
/// components share no edges.
fn join(parts: Vec<(Vec<usize>, LocalCover)>) -> CoverResult {
    let chromatic = parts.iter().map(|(_, c)| c.value).fold(0.0, f64::max);
    let dual_bound = parts.iter().map(|(_, c)| c.dual).fold(0.0, f64::max);
    let ratio_bound = parts
        .iter()
        .map(|(m, c)| m.len() as f64 / c.alpha as f64)
        .fold(0.0, f64::max);
    if parts.len() == 1 {
        let (members, c) = parts.into_iter().next().expect("one part");
        let sets = c
            .sets
            .iter()
            .map(|s| s.iter().map(|&l| members[l]).collect())
            .collect();
        return CoverResult {
            sets,
            weights: c.weights,
            chromatic,
            dual_bound,
            ratio_bound,
        };
    }
    // Per component: cumulative interval ends of its sets.
    let ends: Vec<Vec<f64>> = parts
        .iter()
        .map(|(_, c)| {
            let mut acc = 0.0;
            c.weights
                .iter()
                .map(|w| {
                    acc += w;
                    acc
                })
                .collect()
        })
        .collect();
    let mut cuts: Vec<f64> = ends.iter().flatten().copied().collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() <= TOL);
    let mut merged: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    let mut cursor = vec![0usize; parts.len()];
    let mut lo = 0.0;
    for &hi in &cuts {
        if hi - lo <= TOL {
            continue;
        }
        let mut set = Vec::new();
        for (c, (members, cover)) in parts.iter().enumerate() {
            while cursor[c] < ends[c].len() && ends[c][cursor[c]] <= lo + TOL {
                cursor[c] += 1;
            }
            if cursor[c] < ends[c].len() {
                set.extend(cover.sets[cursor[c]].iter().map(|&l| members[l]));
            }
        }
        set.sort_unstable();
        *merged.entry(set).or_default() += hi - lo;
        lo = hi;
    }
    let (sets, weights) = merged.into_iter().unzip();
    CoverResult {
        sets,
        weights,
        chromatic,
        dual_bound,
        ratio_bound,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::Triplet;

    fn solve(g: &DependencyGraph, m: CoverMethod) -> CoverResult {
        let c = fractional_chromatic(g, m).unwrap();
        check_cover(g, &c, 1e-9).unwrap();
        c
    }

    #[test]
    fn figure_sized_grid() {
        let g = DependencyGraph::rook_grid(2, 3);
        for m in [
            CoverMethod::Lp,
            CoverMethod::Exhaustive,
            CoverMethod::Diagonal,
        ] {
            let c = solve(&g, m);
            assert!((c.chromatic - 3.0).abs() < 1e-9, "{m:?}: {}", c.chromatic);
            assert!((c.dual_bound - 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_node_and_empty() {
        assert_eq!(
            solve(&DependencyGraph::rook_grid(1, 1), CoverMethod::Lp).chromatic,
            1.0
        );
        assert_eq!(
            solve(&DependencyGraph::from_triplets(vec![]), CoverMethod::Lp).chromatic,
            0.0
        );
    }

    #[test]
    fn odd_cycle_needs_fractional_weights() {
        // C5 has χ* = 5/2; build it from triplets of one user sharing items
        // along a cycle of observations.
        let nodes = vec![
            Triplet::new(0, 0, 1),
            Triplet::new(1, 0, 2),
            Triplet::new(2, 0, 3),
            Triplet::new(3, 0, 4),
            Triplet::new(4, 0, 0),
        ];
        let g = DependencyGraph::from_triplets(nodes);
        assert!((0..5).all(|a| g.degree(a) == 2));
        for m in [CoverMethod::Lp, CoverMethod::Exhaustive] {
            let c = solve(&g, m);
            assert!((c.chromatic - 2.5).abs() < 1e-9);
        }
        assert!(fractional_chromatic(&g, CoverMethod::Diagonal).is_err());
    }

    #[test]
    fn components_join_to_the_maximum() {
        let mut nodes = Vec::new();
        for p in 0..2 {
            for q in 0..3 {
                nodes.push(Triplet::new(p, 0, 10 + q));
            }
        }
        for p in 0..2 {
            nodes.push(Triplet::new(p, 1, 10));
        }
        nodes.push(Triplet::new(0, 2, 5));
        let g = DependencyGraph::from_triplets(nodes);
        let c = solve(&g, CoverMethod::Lp);
        assert!((c.chromatic - 3.0).abs() < 1e-9);
    }

    #[test]
    fn maximal_sets_of_a_grid_are_partial_permutations() {
        let g = DependencyGraph::rook_grid(2, 3);
        let adj = g.local_adjacency(&(0..6).collect::<Vec<_>>());
        // 3 * 2 injective maps from 2 rows into 3 columns
        assert_eq!(maximal_independent_sets(&adj).unwrap().len(), 6);
        // 1 + 6 + 6 non-empty partial matchings of K_{2,3}, minus the empty one
        assert_eq!(all_independent_sets(&adj).unwrap().len(), 12);
    }

    #[test]
    fn checker_rejects_bad_covers() {
        let g = DependencyGraph::rook_grid(1, 2);
        let ok = CoverResult {
            sets: vec![vec![0], vec![1]],
            weights: vec![1.0, 1.0],
            chromatic: 2.0,
            dual_bound: 2.0,
            ratio_bound: 2.0,
        };
        assert!(check_cover(&g, &ok, 1e-9).is_ok());
        let dependent = CoverResult {
            sets: vec![vec![0, 1]],
            weights: vec![1.0],
            chromatic: 1.0,
            ..ok.clone()
        };
        assert!(check_cover(&g, &dependent, 1e-9).is_err());
        let over = CoverResult {
            sets: vec![vec![0], vec![1], vec![0]],
            weights: vec![1.0, 1.0, 0.5],
            chromatic: 2.5,
            ..ok.clone()
        };
        assert!(check_cover(&g, &over, 1e-9).is_err());
        let heavy = CoverResult {
            sets: vec![vec![0], vec![1]],
            weights: vec![1.0, 1.0],
            chromatic: 1.0,
            ..ok
        };
        assert!(check_cover(&g, &heavy, 1e-9).is_err());
    }

    #[test]
    fn lp_dual_matches_primal() {
        let sets = vec![vec![0, 2], vec![1, 3], vec![0, 3], vec![1, 2]];
        let (w, y) = solve_covering_lp(4, &sets).unwrap();
        let primal: f64 = w.iter().sum();
        let dual: f64 = y.iter().sum();
        assert!((primal - 2.0).abs() < 1e-12 && (dual - 2.0).abs() < 1e-12);
        for s in &sets {
            assert!(s.iter().map(|&v| y[v]).sum::<f64>() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn exhaustive_refuses_large_components() {
        let g = DependencyGraph::rook_grid(9, 8);
        assert!(matches!(
            fractional_chromatic(&g, CoverMethod::Exhaustive),
            Err(Error::Capacity(_))
        ));
    }
}
