//! Blocking conditions and the stability predicate.
//!
//! A pair (firm i, worker j) blocks a matching M when both would gain more
//! than eps in utility by pairing up. With utilities ln(1/z)/lambda the
//! utility gap condition `u(new) > u(current) + eps` collapses to the
//! multiplicative threshold `entry(new) < q * entry(current)` with
//! q = exp(-eps*lambda), so the whole predicate runs on raw entries with no
//! logarithms in the inner loop. Unmatched workers only need the firm-side
//! condition. At eps = 0 (q = 1) this is classical stability.

use crate::error::{Error, Result};
use crate::market::{check_compat, preference_order, EpsParams, Market, Matching, Side};
use serde::Serialize;

/// Which blocking condition a pair violated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    /// Both sides matched: firm-side and worker-side thresholds both met.
    MatchedWorker,
    /// Worker unmatched: firm-side threshold alone decides.
    UnmatchedWorker,
}

/// A pair that blocks a matching, 0-based indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockingPair {
    pub firm: usize,
    pub worker: usize,
    pub kind: BlockKind,
}

#[inline]
pub(crate) fn blocks_q(market: &Market, matching: &Matching, firm: usize, worker: usize, q: f64) -> bool {
    // Strict inequalities throughout; ties are measure-zero under the model.
    if !(market.x(firm, worker) < q * market.x(firm, matching.worker_of(firm))) {
        return false;
    }
    match matching.firm_of(worker) {
        Some(incumbent) => market.y(firm, worker) < q * market.y(incumbent, worker),
        None => true,
    }
}

/// Does (firm, worker) block `matching` at the given switching cost?
pub fn blocks(
    market: &Market,
    matching: &Matching,
    firm: usize,
    worker: usize,
    params: &EpsParams,
) -> Result<bool> {
    check_compat(market, matching)?;
    if firm >= market.n() {
        return Err(Error::IndexOutOfRange(format!(
            "firm {} of {}",
            firm + 1,
            market.n()
        )));
    }
    if worker >= market.num_workers() {
        return Err(Error::IndexOutOfRange(format!(
            "worker {} of {}",
            worker + 1,
            market.num_workers()
        )));
    }
    if matching.worker_of(firm) == worker {
        return Err(Error::InvalidParameter(
            "a pair cannot block its own match".into(),
        ));
    }
    Ok(blocks_q(market, matching, firm, worker, params.q()))
}

#[inline]
pub(crate) fn is_eps_stable_q(market: &Market, matching: &Matching, q: f64) -> bool {
    for firm in 0..market.n() {
        let own = matching.worker_of(firm);
        let threshold = q * market.x(firm, own);
        for worker in 0..market.num_workers() {
            if worker == own {
                continue;
            }
            if market.x(firm, worker) < threshold {
                match matching.firm_of(worker) {
                    Some(incumbent) => {
                        if market.y(firm, worker) < q * market.y(incumbent, worker) {
                            return false;
                        }
                    }
                    None => return false,
                }
            }
        }
    }
    true
}

/// True when no pair blocks the matching.
pub fn is_eps_stable(market: &Market, matching: &Matching, params: &EpsParams) -> Result<bool> {
    check_compat(market, matching)?;
    Ok(is_eps_stable_q(market, matching, params.q()))
}

/// Every blocking pair, firms in index order then workers. Empty exactly
/// when the matching is eps-stable.
pub fn blocking_pairs(
    market: &Market,
    matching: &Matching,
    params: &EpsParams,
) -> Result<Vec<BlockingPair>> {
    check_compat(market, matching)?;
    let q = params.q();
    let mut out = Vec::new();
    for firm in 0..market.n() {
        let own = matching.worker_of(firm);
        for worker in 0..market.num_workers() {
            if worker == own {
                continue;
            }
            if blocks_q(market, matching, firm, worker, q) {
                out.push(BlockingPair {
                    firm,
                    worker,
                    kind: if matching.firm_of(worker).is_some() {
                        BlockKind::MatchedWorker
                    } else {
                        BlockKind::UnmatchedWorker
                    },
                });
            }
        }
    }
    Ok(out)
}

/// Classical (eps = 0) stability decided purely from preference ranks.
///
/// An independent ordinal route used to cross-check `is_eps_stable` at
/// eps = 0: on tie-free markets the two must agree exactly.
pub fn classical_stable_rankcheck(market: &Market, matching: &Matching) -> Result<bool> {
    check_compat(market, matching)?;
    let n = market.n();
    let w = market.num_workers();
    let mut firm_rank = vec![vec![0usize; w]; n];
    for (i, ranks) in firm_rank.iter_mut().enumerate() {
        for (pos, j) in preference_order(market, Side::Firm, i)?.iter().enumerate() {
            ranks[*j] = pos;
        }
    }
    let mut worker_rank = vec![vec![0usize; n]; w];
    for (j, ranks) in worker_rank.iter_mut().enumerate() {
        for (pos, i) in preference_order(market, Side::Worker, j)?.iter().enumerate() {
            ranks[*i] = pos;
        }
    }
    for firm in 0..n {
        let own = matching.worker_of(firm);
        for worker in 0..w {
            if worker == own {
                continue;
            }
            if firm_rank[firm][worker] < firm_rank[firm][own] {
                match matching.firm_of(worker) {
                    Some(incumbent) => {
                        if worker_rank[worker][firm] < worker_rank[worker][incumbent] {
                            return Ok(false);
                        }
                    }
                    None => return Ok(false),
                }
            }
        }
    }
    Ok(true)
}

/// Firm-proposing deferred acceptance. Always matches all n firms (there
/// are at least n workers) and the outcome is classically stable, hence
/// eps-stable for every eps >= 0.
pub fn deferred_acceptance(market: &Market) -> Matching {
    let n = market.n();
    let w = market.num_workers();
    let prefs: Vec<Vec<usize>> = (0..n)
        .map(|i| preference_order(market, Side::Firm, i).expect("firm index in range"))
        .collect();
    let mut next = vec![0usize; n];
    let mut holder: Vec<Option<usize>> = vec![None; w];
    let mut free: std::collections::VecDeque<usize> = (0..n).collect();
    while let Some(firm) = free.pop_front() {
        let worker = prefs[firm][next[firm]];
        next[firm] += 1;
        match holder[worker] {
            None => holder[worker] = Some(firm),
            Some(current) => {
                if market.y(firm, worker) < market.y(current, worker) {
                    holder[worker] = Some(firm);
                    free.push_back(current);
                } else {
                    free.push_back(firm);
                }
            }
        }
    }
    let mut assignment = vec![usize::MAX; n];
    for (worker, held) in holder.iter().enumerate() {
        if let Some(firm) = held {
            assignment[*firm] = worker;
        }
    }
    debug_assert!(assignment.iter().all(|&a| a != usize::MAX));
    Matching::new(assignment, w).expect("deferred acceptance yields an injection")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seed;

    fn two_by_two() -> Market {
        Market::from_parts(
            2,
            0,
            vec![vec![0.5, 0.1], vec![0.2, 0.6]],
            vec![vec![0.5, 0.2], vec![0.3, 0.6]],
        )
        .unwrap()
    }

    #[test]
    fn blocks_examples() {
        let market = two_by_two();
        let diag = Matching::diagonal(2);
        let zero = EpsParams::new(0.0, 1.0).unwrap();
        // 0.1 < 0.5 and 0.2 < 0.6
        assert!(blocks(&market, &diag, 0, 1, &zero).unwrap());

        // q = 1/6: firm-side threshold 0.5/6 < 0.1
        let ln6 = EpsParams::new(6f64.ln(), 1.0).unwrap();
        assert!(!blocks(&market, &diag, 0, 1, &ln6).unwrap());

        // unmatched-worker kind: only the firm-side condition applies
        let m = Market::from_parts(1, 1, vec![vec![0.4, 0.3]], vec![vec![0.9, 0.8]]).unwrap();
        let diag1 = Matching::diagonal_into(1, 2);
        assert!(blocks(&m, &diag1, 0, 1, &zero).unwrap());

        // a pair cannot block its own match
        assert!(blocks(&market, &diag, 0, 0, &zero).is_err());
    }

    #[test]
    fn stability_examples() {
        let single = Market::generate(1, 0, Seed::new(3)).unwrap();
        let zero = EpsParams::new(0.0, 1.0).unwrap();
        assert!(is_eps_stable(&single, &Matching::diagonal(1), &zero).unwrap());

        let market = two_by_two();
        let diag = Matching::diagonal(2);
        assert!(!is_eps_stable(&market, &diag, &zero).unwrap());
        let ln6 = EpsParams::new(6f64.ln(), 1.0).unwrap();
        assert!(is_eps_stable(&market, &diag, &ln6).unwrap());
    }

    #[test]
    fn huge_eps_stabilizes_every_matching() {
        use itertools::Itertools;
        let market = Market::generate(3, 1, Seed::new(8)).unwrap();
        let (lo, hi) = market.entry_range();
        // q below min/max puts every threshold under the smallest entry
        let eps = -(0.5 * lo / hi).ln();
        let params = EpsParams::new(eps, 1.0).unwrap();
        for perm in (0..4usize).permutations(3) {
            let m = Matching::new(perm, 4).unwrap();
            assert!(is_eps_stable(&market, &m, &params).unwrap());
        }
    }

    #[test]
    fn blocking_pair_lists() {
        let market = two_by_two();
        let diag = Matching::diagonal(2);
        let zero = EpsParams::new(0.0, 1.0).unwrap();
        let pairs = blocking_pairs(&market, &diag, &zero).unwrap();
        assert_eq!(
            pairs,
            vec![BlockingPair {
                firm: 0,
                worker: 1,
                kind: BlockKind::MatchedWorker
            }]
        );

        let m = Market::from_parts(1, 1, vec![vec![0.4, 0.3]], vec![vec![0.9, 0.8]]).unwrap();
        let pairs = blocking_pairs(&m, &Matching::diagonal_into(1, 2), &zero).unwrap();
        assert_eq!(
            pairs,
            vec![BlockingPair {
                firm: 0,
                worker: 1,
                kind: BlockKind::UnmatchedWorker
            }]
        );

        let ln6 = EpsParams::new(6f64.ln(), 1.0).unwrap();
        assert!(blocking_pairs(&market, &diag, &ln6).unwrap().is_empty());
    }

    #[test]
    fn rankcheck_examples() {
        let market = two_by_two();
        assert!(!classical_stable_rankcheck(&market, &Matching::diagonal(2)).unwrap());
        let single = Market::generate(1, 0, Seed::new(4)).unwrap();
        assert!(classical_stable_rankcheck(&single, &Matching::diagonal(1)).unwrap());
    }

    #[test]
    fn rankcheck_agrees_with_eps_zero_on_random_markets() {
        use itertools::Itertools;
        let zero = EpsParams::new(0.0, 1.0).unwrap();
        for rep in 0..500u64 {
            let market = Market::generate(6, 2, Seed::with_stream(21, rep)).unwrap();
            // probe a handful of injections per market
            let mut rng = Seed::with_stream(22, rep).rng();
            use rand::seq::SliceRandom;
            let mut workers: Vec<usize> = (0..8).collect();
            for _ in 0..4 {
                workers.shuffle(&mut rng);
                let m = Matching::new(workers.iter().take(6).copied().collect_vec(), 8).unwrap();
                assert_eq!(
                    classical_stable_rankcheck(&market, &m).unwrap(),
                    is_eps_stable(&market, &m, &zero).unwrap()
                );
            }
        }
    }

    #[test]
    fn deferred_acceptance_examples() {
        let single = Market::generate(1, 0, Seed::new(5)).unwrap();
        assert_eq!(deferred_acceptance(&single).assignment(), &[0]);

        // both firms court worker 1; she prefers firm 1 (0.3 < 0.7)
        let market = Market::from_parts(
            2,
            0,
            vec![vec![0.1, 0.9], vec![0.2, 0.8]],
            vec![vec![0.3, 0.7], vec![0.6, 0.4]],
        )
        .unwrap();
        assert_eq!(deferred_acceptance(&market).assignment(), &[0, 1]);
    }

    #[test]
    fn deferred_acceptance_output_is_stable_for_all_eps() {
        for rep in 0..50u64 {
            let market = Market::generate(5, rep as usize % 3, Seed::with_stream(31, rep)).unwrap();
            let m = deferred_acceptance(&market);
            assert!(classical_stable_rankcheck(&market, &m).unwrap());
            for eps in [0.0, 0.01, 0.2, 1.0, 10.0] {
                let params = EpsParams::new(eps, 1.0).unwrap();
                assert!(is_eps_stable(&market, &m, &params).unwrap());
            }
        }
    }

    #[test]
    fn blocking_depends_only_on_eps_lambda_product() {
        let market = Market::generate(4, 2, Seed::new(77)).unwrap();
        let m = deferred_acceptance(&market);
        let a = EpsParams::new(0.9, 1.0).unwrap();
        let b = EpsParams::new(0.3, 3.0).unwrap();
        assert_eq!(a.eps_lambda(), b.eps_lambda());
        for firm in 0..4 {
            for worker in 0..6 {
                if worker == m.worker_of(firm) {
                    continue;
                }
                assert_eq!(
                    blocks(&market, &m, firm, worker, &a).unwrap(),
                    blocks(&market, &m, firm, worker, &b).unwrap()
                );
            }
        }
    }
}
