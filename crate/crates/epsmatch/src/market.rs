//! Markets, matchings and switching-cost parameters.
//!
//! A market is a pair of entry matrices X (firms rating workers) and Y
//! (workers rating firms) with independent uniform entries on (0, 1).
//! Each agent ranks the other side by increasing entry, so the entries
//! double as cardinal utilities through f(z) = ln(1/z) / lambda: the
//! smaller the entry, the higher the rank and the larger the utility.

use crate::error::{Error, Result};
use crate::rng::Seed;
use rand::Rng;
use serde::Deserialize;

/// Dense row-major matrix of entries.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn column(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |r| self.get(r, c))
    }
}

/// A two-sided market: `n` firms, `n + k` workers, and the entry matrices
/// that induce every preference list.
#[derive(Debug, Clone, PartialEq)]
pub struct Market {
    n: usize,
    k: usize,
    x: Matrix,
    y: Matrix,
}

/// Which side of the market an agent index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Firm,
    Worker,
}

fn draw_open_unit(rng: &mut impl Rng) -> f64 {
    // Entries exactly 0 or 1 would make ln(1/z) utilities infinite; redraw.
    loop {
        let v: f64 = rng.random();
        if v > 0.0 && v < 1.0 {
            return v;
        }
    }
}

impl Market {
    /// Draw a market with i.i.d. uniform entries. Deterministic per seed:
    /// X is filled row-major, then Y.
    pub fn generate(n: usize, k: usize, seed: Seed) -> Result<Market> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "market needs at least one firm (n >= 1)".into(),
            ));
        }
        let w = n + k;
        let mut rng = seed.rng();
        let x: Vec<f64> = (0..n * w).map(|_| draw_open_unit(&mut rng)).collect();
        let y: Vec<f64> = (0..n * w).map(|_| draw_open_unit(&mut rng)).collect();
        Ok(Market {
            n,
            k,
            x: Matrix::new(n, w, x),
            y: Matrix::new(n, w, y),
        })
    }

    /// Build a market from explicit entries, validating every invariant.
    pub fn from_parts(n: usize, k: usize, x: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> Result<Market> {
        if n == 0 {
            return Err(Error::InvalidMarket("n must be at least 1".into()));
        }
        let w = n + k;
        let flatten = |name: &str, rows: &[Vec<f64>]| -> Result<Vec<f64>> {
            if rows.len() != n {
                return Err(Error::InvalidMarket(format!(
                    "{name} has {} rows, expected {n}",
                    rows.len()
                )));
            }
            let mut data = Vec::with_capacity(n * w);
            for (i, row) in rows.iter().enumerate() {
                if row.len() != w {
                    return Err(Error::InvalidMarket(format!(
                        "{name} row {} has {} columns, expected {w}",
                        i + 1,
                        row.len()
                    )));
                }
                data.extend_from_slice(row);
            }
            Ok(data)
        };
        let market = Market {
            n,
            k,
            x: Matrix::new(n, w, flatten("x", &x)?),
            y: Matrix::new(n, w, flatten("y", &y)?),
        };
        market.validate()?;
        Ok(market)
    }

    /// Check the entry invariants: everything strictly inside (0, 1), no
    /// ties within any X row or any Y column.
    pub fn validate(&self) -> Result<()> {
        for (name, m) in [("x", &self.x), ("y", &self.y)] {
            if let Some(v) = m.data.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
                return Err(Error::InvalidMarket(format!(
                    "{name} entry {v} outside the open interval (0, 1)"
                )));
            }
        }
        for i in 0..self.n {
            if has_duplicate(self.x.row(i).iter().copied()) {
                return Err(Error::InvalidMarket(format!(
                    "tie in x row {} breaks the strict preference order",
                    i + 1
                )));
            }
        }
        for j in 0..self.num_workers() {
            if has_duplicate(self.y.column(j)) {
                return Err(Error::InvalidMarket(format!(
                    "tie in y column {} breaks the strict preference order",
                    j + 1
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_workers(&self) -> usize {
        self.n + self.k
    }

    /// Firm `i`'s entry for worker `j`.
    #[inline]
    pub fn x(&self, firm: usize, worker: usize) -> f64 {
        self.x.get(firm, worker)
    }

    /// Worker `j`'s entry for firm `i`.
    #[inline]
    pub fn y(&self, firm: usize, worker: usize) -> f64 {
        self.y.get(firm, worker)
    }

    /// Smallest and largest entry over both matrices.
    pub fn entry_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in self.x.data.iter().chain(self.y.data.iter()) {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        (lo, hi)
    }

    /// Serialize as `{"n": .., "k": .., "x": [[..]], "y": [[..]]}` with
    /// entries printed to 17 significant digits, which round-trips every
    /// f64 exactly.
    pub fn to_json_string(&self) -> String {
        fn push_matrix(s: &mut String, m: &Matrix) {
            s.push('[');
            for r in 0..m.rows {
                if r > 0 {
                    s.push_str(", ");
                }
                s.push('[');
                for c in 0..m.cols {
                    if c > 0 {
                        s.push_str(", ");
                    }
                    s.push_str(&format!("{:.16e}", m.get(r, c)));
                }
                s.push(']');
            }
            s.push(']');
        }
        let mut s = String::new();
        s.push_str(&format!("{{\"n\": {}, \"k\": {}, \"x\": ", self.n, self.k));
        push_matrix(&mut s, &self.x);
        s.push_str(", \"y\": ");
        push_matrix(&mut s, &self.y);
        s.push('}');
        s
    }

    pub fn from_json_str(s: &str) -> Result<Market> {
        #[derive(Deserialize)]
        struct Doc {
            n: usize,
            k: usize,
            x: Vec<Vec<f64>>,
            y: Vec<Vec<f64>>,
        }
        let doc: Doc = serde_json::from_str(s)?;
        Market::from_parts(doc.n, doc.k, doc.x, doc.y)
    }
}

fn has_duplicate(values: impl Iterator<Item = f64>) -> bool {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.windows(2).any(|w| w[0] == w[1])
}

/// Opposite-side indices ordered most-preferred first, i.e. by increasing
/// matrix entry. Length n+k for a firm, n for a worker.
pub fn preference_order(market: &Market, side: Side, index: usize) -> Result<Vec<usize>> {
    match side {
        Side::Firm => {
            if index >= market.n() {
                return Err(Error::IndexOutOfRange(format!(
                    "firm {} of {}",
                    index + 1,
                    market.n()
                )));
            }
            let mut order: Vec<usize> = (0..market.num_workers()).collect();
            order.sort_by(|&a, &b| market.x(index, a).total_cmp(&market.x(index, b)));
            Ok(order)
        }
        Side::Worker => {
            if index >= market.num_workers() {
                return Err(Error::IndexOutOfRange(format!(
                    "worker {} of {}",
                    index + 1,
                    market.num_workers()
                )));
            }
            let mut order: Vec<usize> = (0..market.n()).collect();
            order.sort_by(|&a, &b| market.y(a, index).total_cmp(&market.y(b, index)));
            Ok(order)
        }
    }
}

/// Utility an agent assigns to an entry: ln(1/entry) / lambda, strictly
/// decreasing in the entry.
pub fn utility(entry: f64, lambda: f64) -> Result<f64> {
    if !(entry > 0.0 && entry < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "entry {entry} outside the open interval (0, 1)"
        )));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "lambda {lambda} must be positive and finite"
        )));
    }
    Ok(-entry.ln() / lambda)
}

/// Switching-cost parameters and their derived multiplicative discounts.
///
/// Blocking decisions depend on (eps, lambda) only through the product
/// eps * lambda: `q = exp(-eps*lambda)` thresholds single-sided
/// comparisons, `p = q^2` enters the two-sided integrand.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EpsParams {
    eps: f64,
    lambda: f64,
    p: f64,
    q: f64,
}

impl EpsParams {
    pub fn new(eps: f64, lambda: f64) -> Result<EpsParams> {
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "eps {eps} must be finite and non-negative"
            )));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda {lambda} must be positive and finite"
            )));
        }
        Ok(EpsParams {
            eps,
            lambda,
            p: (-2.0 * eps * lambda).exp(),
            q: (-eps * lambda).exp(),
        })
    }

    /// Construct with explicit derived discounts, bypassing the q = sqrt(p)
    /// relation. Only for exercising `validate` on corrupted inputs.
    #[doc(hidden)]
    pub fn from_raw_parts(eps: f64, lambda: f64, p: f64, q: f64) -> EpsParams {
        EpsParams { eps, lambda, p, q }
    }

    /// Re-check the derived-value invariants.
    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0) || !(self.lambda > 0.0) {
            return Err(Error::InvalidParameter("eps/lambda out of range".into()));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "p = {} outside (0, 1]",
                self.p
            )));
        }
        if (self.q * self.q - self.p).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "q^2 = {} deviates from p = {} beyond 1e-12",
                self.q * self.q,
                self.p
            )));
        }
        if (self.p == 1.0) != (self.eps == 0.0) {
            return Err(Error::InvalidParameter(
                "p = 1 must hold exactly when eps = 0".into(),
            ));
        }
        Ok(())
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Two-sided discount exp(-2 eps lambda).
    pub fn p(&self) -> f64 {
        self.p
    }

    /// Single-sided discount exp(-eps lambda).
    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn eps_lambda(&self) -> f64 {
        self.eps * self.lambda
    }
}

/// An injection of firms into workers; firm `i` is matched to
/// `assignment[i]`, the `k` workers outside the image stay unmatched.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Matching {
    assignment: Vec<usize>,
    worker_partner: Vec<Option<usize>>,
}

impl Matching {
    pub fn new(assignment: Vec<usize>, num_workers: usize) -> Result<Matching> {
        if assignment.len() > num_workers {
            return Err(Error::InvalidMatching(format!(
                "{} firms cannot inject into {num_workers} workers",
                assignment.len()
            )));
        }
        let mut worker_partner = vec![None; num_workers];
        for (firm, &w) in assignment.iter().enumerate() {
            if w >= num_workers {
                return Err(Error::InvalidMatching(format!(
                    "worker index {} out of range 1..={num_workers}",
                    w + 1
                )));
            }
            if worker_partner[w].is_some() {
                return Err(Error::InvalidMatching(format!(
                    "worker {} assigned twice",
                    w + 1
                )));
            }
            worker_partner[w] = Some(firm);
        }
        Ok(Matching {
            assignment,
            worker_partner,
        })
    }

    /// The canonical matching M(i) = i on a balanced or imbalanced market.
    pub fn diagonal(n: usize) -> Matching {
        Matching::new((0..n).collect(), n).expect("identity is injective")
    }

    /// Diagonal matching sized for `num_workers >= n` workers.
    pub fn diagonal_into(n: usize, num_workers: usize) -> Matching {
        Matching::new((0..n).collect(), num_workers).expect("identity is injective")
    }

    pub fn num_firms(&self) -> usize {
        self.assignment.len()
    }

    pub fn num_workers(&self) -> usize {
        self.worker_partner.len()
    }

    /// Worker matched to `firm`.
    #[inline]
    pub fn worker_of(&self, firm: usize) -> usize {
        self.assignment[firm]
    }

    /// Firm matched to `worker`, if any.
    #[inline]
    pub fn firm_of(&self, worker: usize) -> Option<usize> {
        self.worker_partner[worker]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }
}

/// Check that a matching is shaped for a market: all n firms matched, the
/// worker index space is n+k.
pub(crate) fn check_compat(market: &Market, matching: &Matching) -> Result<()> {
    if matching.num_firms() != market.n() || matching.num_workers() != market.num_workers() {
        return Err(Error::InvalidMatching(format!(
            "matching shape ({} firms, {} workers) does not fit market ({}, {})",
            matching.num_firms(),
            matching.num_workers(),
            market.n(),
            market.num_workers()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn generate_shapes() {
        let m = Market::generate(1, 0, Seed::new(1)).unwrap();
        assert_eq!((m.n(), m.num_workers()), (1, 1));
        assert!(m.x(0, 0) > 0.0 && m.x(0, 0) < 1.0);
        assert!(m.y(0, 0) > 0.0 && m.y(0, 0) < 1.0);

        let m = Market::generate(3, 2, Seed::new(2)).unwrap();
        assert_eq!((m.n(), m.k(), m.num_workers()), (3, 2, 5));
        m.validate().unwrap();
        // all 30 entries pairwise distinct
        let mut all: Vec<f64> = Vec::with_capacity(30);
        for i in 0..3 {
            for j in 0..5 {
                all.push(m.x(i, j));
                all.push(m.y(i, j));
            }
        }
        all.sort_by(f64::total_cmp);
        assert!(all.windows(2).all(|w| w[0] != w[1]));
    }

    #[test]
    fn generate_rejects_empty() {
        assert!(Market::generate(0, 3, Seed::new(1)).is_err());
    }

    #[test]
    fn generate_is_deterministic() {
        let a = Market::generate(2, 0, Seed::new(42)).unwrap();
        let b = Market::generate(2, 0, Seed::new(42)).unwrap();
        assert_eq!(a, b);
        let c = Market::generate(2, 0, Seed::new(43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn no_ties_across_many_markets() {
        for rep in 0..10_000u64 {
            let m = Market::generate(10, 3, Seed::with_stream(7, rep)).unwrap();
            m.validate().unwrap();
        }
    }

    #[test]
    fn preference_order_examples() {
        // firm row (0.7, 0.2, 0.9) -> order (2, 1, 3) in 1-based indexing
        let m = Market::from_parts(
            1,
            2,
            vec![vec![0.7, 0.2, 0.9]],
            vec![vec![0.5, 0.6, 0.4]],
        )
        .unwrap();
        assert_eq!(preference_order(&m, Side::Firm, 0).unwrap(), vec![1, 0, 2]);
        // single-firm market: every worker's order is (1)
        assert_eq!(preference_order(&m, Side::Worker, 1).unwrap(), vec![0]);

        // worker column (0.5, 0.1) -> order (2, 1)
        let m = Market::from_parts(
            2,
            0,
            vec![vec![0.3, 0.4], vec![0.2, 0.9]],
            vec![vec![0.5, 0.7], vec![0.1, 0.8]],
        )
        .unwrap();
        assert_eq!(preference_order(&m, Side::Worker, 0).unwrap(), vec![1, 0]);
    }

    #[test]
    fn preference_order_rejects_bad_index() {
        let m = Market::generate(2, 1, Seed::new(5)).unwrap();
        assert!(preference_order(&m, Side::Firm, 2).is_err());
        assert!(preference_order(&m, Side::Worker, 3).is_err());
    }

    #[test]
    fn utility_examples() {
        assert_relative_eq!(
            utility(1.0 / std::f64::consts::E, 1.0).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(utility((-2.0f64).exp(), 2.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(
            utility(0.5, 1.0).unwrap(),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
        assert!(utility(0.0, 1.0).is_err());
        assert!(utility(1.0, 1.0).is_err());
        assert!(utility(0.5, 0.0).is_err());
    }

    #[test]
    fn utility_is_order_reversing() {
        let mut rng = Seed::new(11).rng();
        for _ in 0..1000 {
            let a = draw_open_unit(&mut rng);
            let b = draw_open_unit(&mut rng);
            if a == b {
                continue;
            }
            let (ua, ub) = (utility(a, 1.7).unwrap(), utility(b, 1.7).unwrap());
            assert_eq!(a < b, ua > ub);
        }
    }

    #[test]
    fn params_invariants() {
        let p = EpsParams::new(0.3, 2.0).unwrap();
        p.validate().unwrap();
        assert!((p.q() * p.q() - p.p()).abs() <= 1e-12);
        let zero = EpsParams::new(0.0, 1.0).unwrap();
        assert_eq!(zero.p(), 1.0);
        assert_eq!(zero.q(), 1.0);
        zero.validate().unwrap();
        assert!(EpsParams::new(-0.1, 1.0).is_err());
        assert!(EpsParams::new(0.1, 0.0).is_err());
        assert!(EpsParams::new(f64::NAN, 1.0).is_err());
        // corrupted derived values must be caught
        let bad = EpsParams::from_raw_parts(0.3, 1.0, 0.5, 0.9);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn matching_validation() {
        assert!(Matching::new(vec![0, 1], 2).is_ok());
        assert!(Matching::new(vec![0, 0], 2).is_err());
        assert!(Matching::new(vec![0, 2], 2).is_err());
        assert!(Matching::new(vec![0, 1, 2], 2).is_err());
        let m = Matching::new(vec![2, 0], 3).unwrap();
        assert_eq!(m.worker_of(0), 2);
        assert_eq!(m.firm_of(0), Some(1));
        assert_eq!(m.firm_of(1), None);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = Market::generate(3, 2, Seed::new(99)).unwrap();
        let s = m.to_json_string();
        let back = Market::from_json_str(&s).unwrap();
        assert_eq!(m, back);
        // a second serialization is byte-identical
        assert_eq!(s, back.to_json_string());
    }

    #[test]
    fn from_parts_rejects_invalid() {
        // entry at the boundary
        assert!(Market::from_parts(1, 0, vec![vec![1.0]], vec![vec![0.5]]).is_err());
        assert!(Market::from_parts(1, 0, vec![vec![0.0]], vec![vec![0.5]]).is_err());
        // tie within an X row
        assert!(Market::from_parts(
            1,
            1,
            vec![vec![0.4, 0.4]],
            vec![vec![0.2, 0.3]]
        )
        .is_err());
        // tie within a Y column
        assert!(Market::from_parts(
            2,
            0,
            vec![vec![0.1, 0.2], vec![0.3, 0.4]],
            vec![vec![0.5, 0.6], vec![0.5, 0.7]]
        )
        .is_err());
        // shape mismatch
        assert!(Market::from_parts(2, 0, vec![vec![0.1, 0.2]], vec![vec![0.5, 0.6]]).is_err());
    }
}
