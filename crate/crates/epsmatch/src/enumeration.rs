//! Exact counting of eps-stable matchings.
//!
//! `count_eps_stable` backtracks over injections of firms into workers,
//! assigning firms in index order and branching over workers in each
//! firm's preference order (stable partners tend to sit high on the list,
//! which makes pruning bite early). After placing firm i on worker j the
//! search rejects the branch if (i, j) forms a matched-worker block with
//! any already-placed pair, in either direction; those blocks can never be
//! undone by later assignments. The unmatched-worker condition is only
//! decided at leaves, because a worker that is currently free may still be
//! matched deeper in the tree; checking it early would be unsound for
//! k > 0. With k = 0 every worker ends up matched and leaves need no
//! extra work.
//!
//! `brute_force_count` is the unpruned reference oracle: it walks every
//! injection and applies the public stability predicate.

use crate::error::{Error, Result};
use crate::market::{preference_order, EpsParams, Market, Matching, Side};
use crate::stability::is_eps_stable;
use itertools::Itertools;
use num_bigint::BigUint;
use num_traits::{One, Zero};
use rayon::prelude::*;

/// Default cap on n for the pruned search; 10! leaves worst case.
pub const DEFAULT_ENUMERATION_LIMIT: usize = 10;

/// Hard cap on n for the unpruned oracle.
pub const BRUTE_FORCE_LIMIT: usize = 7;

/// Outcome of an exact count.
#[derive(Debug, Clone)]
pub struct CountResult {
    /// Exact number of eps-stable matchings.
    pub count: BigUint,
    /// Collected stable matchings (up to the configured cap), if requested.
    pub matchings: Option<Vec<Matching>>,
    /// Candidate assignments examined by the search.
    pub nodes_visited: u64,
}

/// Knobs for `count_eps_stable`.
#[derive(Debug, Clone)]
pub struct EnumerateOptions {
    /// Collect the stable matchings themselves, not just the count.
    pub collect: bool,
    /// Maximum number of matchings retained when collecting.
    pub cap: usize,
    /// Reject instances with n above this bound instead of running forever.
    pub limit: usize,
}

impl Default for EnumerateOptions {
    fn default() -> Self {
        EnumerateOptions {
            collect: false,
            cap: 10_000,
            limit: DEFAULT_ENUMERATION_LIMIT,
        }
    }
}

/// (n+k)_n = (n+k)! / k!, the number of injections of firms into workers.
pub fn falling_factorial(n: usize, k: usize) -> BigUint {
    let mut acc = BigUint::one();
    for i in (k + 1)..=(n + k) {
        acc *= BigUint::from(i);
    }
    acc
}

struct SearchCtx<'a> {
    market: &'a Market,
    q: f64,
    orders: Vec<Vec<usize>>,
    n: usize,
    k: usize,
    collect: bool,
    cap: usize,
}

#[derive(Debug)]
struct Accum {
    count: BigUint,
    nodes: u64,
    matchings: Vec<Vec<usize>>,
}

impl Accum {
    fn new() -> Self {
        Accum {
            count: BigUint::zero(),
            nodes: 0,
            matchings: Vec::new(),
        }
    }
}

impl SearchCtx<'_> {
    /// Would assigning `firm` to `worker` create a matched-worker block
    /// with any already-assigned pair, in either direction?
    #[inline]
    fn compatible(&self, assigned: &[usize], firm: usize, worker: usize) -> bool {
        let mk = self.market;
        let q = self.q;
        let own_new = mk.x(firm, worker);
        for (prev_firm, &prev_worker) in assigned.iter().enumerate() {
            // (firm, prev_worker): firm leaves `worker`, prev_worker leaves prev_firm
            if mk.x(firm, prev_worker) < q * own_new
                && mk.y(firm, prev_worker) < q * mk.y(prev_firm, prev_worker)
            {
                return false;
            }
            // (prev_firm, worker): prev_firm leaves prev_worker, worker leaves firm
            if mk.x(prev_firm, worker) < q * mk.x(prev_firm, prev_worker)
                && mk.y(prev_firm, worker) < q * mk.y(firm, worker)
            {
                return false;
            }
        }
        true
    }

    /// Leaf acceptance: with k > 0, no firm may clear the firm-side
    /// threshold against any worker left unmatched.
    fn leaf(&self, assigned: &[usize], used: &[bool], acc: &mut Accum) {
        if self.k > 0 {
            for (firm, &own) in assigned.iter().enumerate() {
                let threshold = self.q * self.market.x(firm, own);
                for (worker, &taken) in used.iter().enumerate() {
                    if !taken && self.market.x(firm, worker) < threshold {
                        return;
                    }
                }
            }
        }
        acc.count += 1u32;
        if self.collect && acc.matchings.len() < self.cap {
            acc.matchings.push(assigned.to_vec());
        }
    }

    fn descend(&self, depth: usize, assigned: &mut Vec<usize>, used: &mut [bool], acc: &mut Accum) {
        for &worker in &self.orders[depth] {
            if used[worker] {
                continue;
            }
            acc.nodes += 1;
            if !self.compatible(assigned, depth, worker) {
                continue;
            }
            assigned.push(worker);
            used[worker] = true;
            if depth + 1 == self.n {
                self.leaf(assigned, used, acc);
            } else {
                self.descend(depth + 1, assigned, used, acc);
            }
            assigned.pop();
            used[worker] = false;
        }
    }
}

/// Count (and optionally list) every eps-stable matching of the market.
///
/// The first-level branches are searched in parallel and merged in branch
/// order; counts, node totals and any collected matchings are identical
/// for every thread count.
pub fn count_eps_stable(
    market: &Market,
    params: &EpsParams,
    opts: &EnumerateOptions,
) -> Result<CountResult> {
    let n = market.n();
    if n > opts.limit {
        return Err(Error::InstanceTooLarge { n, limit: opts.limit });
    }
    let orders: Vec<Vec<usize>> = (0..n)
        .map(|i| preference_order(market, Side::Firm, i).expect("firm index in range"))
        .collect();
    let ctx = SearchCtx {
        market,
        q: params.q(),
        orders,
        n,
        k: market.k(),
        collect: opts.collect,
        cap: opts.cap,
    };
    let w = market.num_workers();
    let branches: Vec<Accum> = ctx.orders[0]
        .par_iter()
        .map(|&first| {
            let mut acc = Accum::new();
            acc.nodes += 1;
            let mut assigned = Vec::with_capacity(n);
            let mut used = vec![false; w];
            assigned.push(first);
            used[first] = true;
            if n == 1 {
                ctx.leaf(&assigned, &used, &mut acc);
            } else {
                ctx.descend(1, &mut assigned, &mut used, &mut acc);
            }
            acc
        })
        .collect();

    let mut count = BigUint::zero();
    let mut nodes = 0u64;
    let mut collected: Vec<Vec<usize>> = Vec::new();
    for acc in branches {
        count += acc.count;
        nodes += acc.nodes;
        if opts.collect && collected.len() < opts.cap {
            let room = opts.cap - collected.len();
            collected.extend(acc.matchings.into_iter().take(room));
        }
    }
    let matchings = if opts.collect {
        Some(
            collected
                .into_iter()
                .map(|a| Matching::new(a, w).expect("search yields injections"))
                .collect(),
        )
    } else {
        None
    };
    Ok(CountResult {
        count,
        matchings,
        nodes_visited: nodes,
    })
}

/// Unpruned count: every injection checked with the public predicate.
pub fn brute_force_count(market: &Market, params: &EpsParams) -> Result<CountResult> {
    brute_force_enumerate(market, params, 0)
}

/// Unpruned enumeration that also collects up to `cap` stable matchings
/// (`cap = 0` collects nothing).
pub fn brute_force_enumerate(
    market: &Market,
    params: &EpsParams,
    cap: usize,
) -> Result<CountResult> {
    let n = market.n();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::InstanceTooLarge {
            n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let total = falling_factorial(n, market.k());
    if total > BigUint::from(20_000_000u64) {
        return Err(Error::InvalidParameter(format!(
            "brute force over {total} injections refused"
        )));
    }
    let w = market.num_workers();
    let mut count = BigUint::zero();
    let mut nodes = 0u64;
    let mut found: Vec<Matching> = Vec::new();
    for perm in (0..w).permutations(n) {
        nodes += 1;
        let matching = Matching::new(perm, w).expect("permutations are injective");
        if is_eps_stable(market, &matching, params)? {
            count += 1u32;
            if found.len() < cap {
                found.push(matching);
            }
        }
    }
    Ok(CountResult {
        count,
        matchings: if cap > 0 { Some(found) } else { None },
        nodes_visited: nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seed;
    use crate::stability::deferred_acceptance;
    use rand::Rng;
    use std::collections::BTreeSet;

    fn collect_opts() -> EnumerateOptions {
        EnumerateOptions {
            collect: true,
            ..Default::default()
        }
    }

    fn as_set(result: &CountResult) -> BTreeSet<Vec<usize>> {
        result
            .matchings
            .as_ref()
            .unwrap()
            .iter()
            .map(|m| m.assignment().to_vec())
            .collect()
    }

    #[test]
    fn single_firm_counts_one() {
        let market = Market::generate(1, 0, Seed::new(1)).unwrap();
        let params = EpsParams::new(0.0, 1.0).unwrap();
        let res = count_eps_stable(&market, &params, &EnumerateOptions::default()).unwrap();
        assert_eq!(res.count, BigUint::from(1u32));
    }

    #[test]
    fn saturation_when_q_below_entry_ratio() {
        let market = Market::generate(2, 1, Seed::new(6)).unwrap();
        let (lo, hi) = market.entry_range();
        let eps = -(0.5 * lo / hi).ln();
        let params = EpsParams::new(eps, 1.0).unwrap();
        let res = count_eps_stable(&market, &params, &EnumerateOptions::default()).unwrap();
        assert_eq!(res.count, BigUint::from(6u32));
        assert_eq!(falling_factorial(2, 1), BigUint::from(6u32));
    }

    #[test]
    fn two_by_two_market_has_one_stable_matching() {
        let market = Market::from_parts(
            2,
            0,
            vec![vec![0.5, 0.1], vec![0.2, 0.6]],
            vec![vec![0.5, 0.2], vec![0.3, 0.6]],
        )
        .unwrap();
        let params = EpsParams::new(0.0, 1.0).unwrap();
        let res = count_eps_stable(&market, &params, &collect_opts()).unwrap();
        assert_eq!(res.count, BigUint::from(1u32));
        // the anti-diagonal is the stable one
        assert_eq!(as_set(&res), BTreeSet::from([vec![1, 0]]));
    }

    #[test]
    fn size_guards() {
        let market = Market::generate(3, 0, Seed::new(2)).unwrap();
        let params = EpsParams::new(0.0, 1.0).unwrap();
        let tight = EnumerateOptions {
            limit: 2,
            ..Default::default()
        };
        assert!(matches!(
            count_eps_stable(&market, &params, &tight),
            Err(Error::InstanceTooLarge { n: 3, limit: 2 })
        ));
        let big = Market::generate(8, 0, Seed::new(3)).unwrap();
        assert!(brute_force_count(&big, &params).is_err());
    }

    #[test]
    fn pruned_matches_brute_force() {
        let mut rng = Seed::new(12).rng();
        for rep in 0..40u64 {
            let n = rng.random_range(1..=5);
            let k = rng.random_range(0..=2);
            let market = Market::generate(n, k, Seed::with_stream(13, rep)).unwrap();
            for eps in [0.0, 0.1, 0.5] {
                let params = EpsParams::new(eps, 1.0).unwrap();
                let pruned = count_eps_stable(&market, &params, &EnumerateOptions::default()).unwrap();
                let brute = brute_force_count(&market, &params).unwrap();
                assert_eq!(pruned.count, brute.count, "n={n} k={k} eps={eps}");
            }
        }
    }

    #[test]
    fn pruned_and_brute_agree_on_leaf_sets() {
        // not just counts: the collected stable sets coincide
        for rep in 0..30u64 {
            let n = 1 + (rep as usize % 4);
            let k = rep as usize % 3;
            let market = Market::generate(n, k, Seed::with_stream(14, rep)).unwrap();
            for eps in [0.0, 0.2, 0.8] {
                let params = EpsParams::new(eps, 1.0).unwrap();
                let pruned = count_eps_stable(&market, &params, &collect_opts()).unwrap();
                let brute = brute_force_enumerate(&market, &params, 10_000).unwrap();
                assert_eq!(as_set(&pruned), as_set(&brute));
            }
        }
    }

    #[test]
    fn stable_sets_nest_in_eps() {
        for rep in 0..25u64 {
            let market = Market::generate(4, rep as usize % 3, Seed::with_stream(15, rep)).unwrap();
            let mut prev: Option<BTreeSet<Vec<usize>>> = None;
            for eps in [0.0, 0.05, 0.15, 0.4, 1.0] {
                let params = EpsParams::new(eps, 1.0).unwrap();
                let res = count_eps_stable(&market, &params, &collect_opts()).unwrap();
                let cur = as_set(&res);
                if let Some(p) = &prev {
                    assert!(p.is_subset(&cur), "eps-stable sets must nest");
                }
                prev = Some(cur);
            }
        }
    }

    #[test]
    fn deferred_acceptance_always_collected() {
        for rep in 0..25u64 {
            let market = Market::generate(5, rep as usize % 3, Seed::with_stream(16, rep)).unwrap();
            let da = deferred_acceptance(&market).assignment().to_vec();
            for eps in [0.0, 0.3] {
                let params = EpsParams::new(eps, 1.0).unwrap();
                let res = count_eps_stable(&market, &params, &collect_opts()).unwrap();
                assert!(as_set(&res).contains(&da));
                assert!(res.count >= BigUint::one());
            }
        }
    }

    #[test]
    fn counts_bounded_by_falling_factorial() {
        for rep in 0..20u64 {
            let market = Market::generate(4, 2, Seed::with_stream(17, rep)).unwrap();
            let params = EpsParams::new(0.5, 1.0).unwrap();
            let res = count_eps_stable(&market, &params, &EnumerateOptions::default()).unwrap();
            assert!(res.count <= falling_factorial(4, 2));
            assert!(res.count >= BigUint::one());
        }
    }

    #[test]
    fn repeated_runs_are_identical() {
        let market = Market::generate(6, 2, Seed::new(18)).unwrap();
        let params = EpsParams::new(0.2, 1.0).unwrap();
        let a = count_eps_stable(&market, &params, &collect_opts()).unwrap();
        let b = count_eps_stable(&market, &params, &collect_opts()).unwrap();
        assert_eq!(a.count, b.count);
        assert_eq!(a.nodes_visited, b.nodes_visited);
        assert_eq!(as_set(&a), as_set(&b));
    }
}
