//! Non-clustered integer sequences and the counting conditions on
//! correlation scales `b(m, k)` and `c(k)`.
//!
//! A counting condition asks for `|{k : c(k) <= n}| <= M n` uniformly in
//! `n` (and in the fixed argument of `b`). On a finite grid the smallest
//! admissible `M` is the *witness* `max_n count(n) / n`; a check passes
//! when the witness is at most the claimed bound, or, without a claim,
//! when it does not grow as the grid is doubled.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Generator for a sequence of positive integers `r_1, r_2, ...`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SequenceSpec {
    /// `r_n = n`.
    Linear,
    /// `r_n = c_0 + c_1 n + c_2 n^2 + ...` (coefficients lowest degree first).
    Polynomial { coefficients: Vec<i64> },
    /// `r_n` = the n-th prime.
    Primes,
    /// A stored finite list.
    Explicit { values: Vec<u64> },
}

impl SequenceSpec {
    /// Certified bound on how often any value repeats.
    ///
    /// Increasing sequences get 1. A polynomial whose non-leading
    /// coefficients are all non-negative is strictly increasing on `n >= 1`;
    /// any other polynomial of degree `d` takes each value at most `d` times.
    pub fn multiplicity_bound(&self) -> u64 {
        match self {
            SequenceSpec::Linear | SequenceSpec::Primes => 1,
            SequenceSpec::Polynomial { coefficients } => {
                let degree = coefficients.iter().rposition(|&c| c != 0).unwrap_or(0);
                if degree == 0 {
                    u64::MAX
                } else if coefficients[1..degree].iter().all(|&c| c >= 0) && coefficients[degree] > 0 {
                    1
                } else {
                    degree as u64
                }
            }
            SequenceSpec::Explicit { values } => multiplicity(values) as u64,
        }
    }

    /// Largest term among the first `n` (without materialising the sequence
    /// for the monotone kinds).
    pub fn max_term(&self, n: u64) -> Result<u64> {
        let terms = generate(self, n)?;
        Ok(terms.into_iter().max().unwrap_or(0))
    }
}

/// First `n` terms `r_1..r_n`.
pub fn generate(spec: &SequenceSpec, n: u64) -> Result<Vec<u64>> {
    if n == 0 {
        return Err(Error::DomainError("sequence length must be at least 1".into()));
    }
    match spec {
        SequenceSpec::Linear => Ok((1..=n).collect()),
        SequenceSpec::Polynomial { coefficients } => (1..=n)
            .map(|k| {
                let v = eval_poly(coefficients, k)?;
                if v <= 0 {
                    return Err(Error::NonPositiveTerm { index: k, value: v });
                }
                u64::try_from(v).map_err(|_| Error::DomainError(format!("term r_{k} overflows u64")))
            })
            .collect(),
        SequenceSpec::Primes => Ok(first_primes(n as usize)),
        SequenceSpec::Explicit { values } => {
            if (values.len() as u64) < n {
                return Err(Error::DomainError(format!("explicit sequence has only {} terms", values.len())));
            }
            if let Some(i) = values.iter().position(|&v| v == 0) {
                return Err(Error::NonPositiveTerm { index: i as u64 + 1, value: 0 });
            }
            Ok(values[..n as usize].to_vec())
        }
    }
}

fn eval_poly(coefficients: &[i64], k: u64) -> Result<i128> {
    let x = k as i128;
    coefficients
        .iter()
        .rev()
        .try_fold(0i128, |acc, &c| acc.checked_mul(x).and_then(|v| v.checked_add(c as i128)))
        .ok_or_else(|| Error::DomainError(format!("polynomial overflows at n = {k}")))
}

/// First `n` primes by a sieve of Eratosthenes, with the bound
/// `n (ln n + ln ln n)` for `n >= 6` doubled until enough primes appear.
pub fn first_primes(n: usize) -> Vec<u64> {
    let mut limit = if n >= 6 {
        let x = n as f64;
        (x * (x.ln() + x.ln().ln())).ceil() as usize
    } else {
        15
    };
    loop {
        let primes = sieve(limit);
        if primes.len() >= n {
            return primes[..n].to_vec();
        }
        limit *= 2;
    }
}

/// All primes `<= limit`.
pub fn sieve(limit: usize) -> Vec<u64> {
    if limit < 2 {
        return Vec::new();
    }
    let mut composite = vec![false; limit + 1];
    let mut p = 2;
    while p * p <= limit {
        if !composite[p] {
            for q in (p * p..=limit).step_by(p) {
                composite[q] = true;
            }
        }
        p += 1;
    }
    (2..=limit).filter(|&i| !composite[i]).map(|i| i as u64).collect()
}

/// Maximum number of repeats of any value.
pub fn multiplicity<T: std::hash::Hash + Eq>(window: &[T]) -> usize {
    let mut counts: HashMap<&T, usize> = HashMap::new();
    for v in window {
        *counts.entry(v).or_default() += 1;
    }
    counts.into_values().max().unwrap_or(0)
}

/// Number of terms lying in the closed interval `[a, b]`.
pub fn interval_count(window: &[u64], a: f64, b: f64) -> usize {
    window.iter().filter(|&&r| (r as f64) >= a && (r as f64) <= b).count()
}

/// A correlation scale: a real `>= 1` or the marker for "no contribution".
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Scale {
    Finite(f64),
    Infinite,
}

impl Scale {
    pub fn finite(self) -> Option<f64> {
        match self {
            Scale::Finite(v) => Some(v),
            Scale::Infinite => None,
        }
    }

    /// `scale^-delta` with `inf^-delta = 0`.
    pub fn decay(self, delta: f64) -> f64 {
        match self {
            Scale::Finite(v) => v.powf(-delta),
            Scale::Infinite => 0.0,
        }
    }
}

impl From<f64> for Scale {
    fn from(v: f64) -> Self {
        if v.is_infinite() {
            Scale::Infinite
        } else {
            Scale::Finite(v)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    /// `|{k : c(k) <= n}| <= M n`.
    CCondition,
    /// `|{k : b(m, k) <= n}| <= M n` for every fixed `m`.
    BRow,
    /// `|{k : b(k, m) <= n}| <= M n` for every fixed `m`.
    BColumn,
    /// At most `M` scale values in every band `[s, s + 1]`.
    Band,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::CCondition => "c-condition",
            Condition::BRow => "b-row",
            Condition::BColumn => "b-column",
            Condition::Band => "band",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    Row,
    Column,
}

/// Outcome of one counting check on a finite grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountingReport {
    pub condition: Condition,
    pub witness_m: f64,
    pub pass: bool,
    pub worst_n: u64,
    pub worst_m: Option<u64>,
    pub worst_count: u64,
    /// Bound the witness was compared with.
    pub bound: f64,
    pub k_max: u64,
    pub n_max: u64,
    pub grid_len: usize,
}

impl CountingReport {
    pub const CSV_HEADER: [&'static str; 6] = ["condition", "witness_M", "pass", "worst_n", "worst_m", "worst_count"];

    pub fn csv_row(&self) -> [String; 6] {
        [
            self.condition.as_str().to_string(),
            format!("{:.16e}", self.witness_m),
            self.pass.to_string(),
            self.worst_n.to_string(),
            self.worst_m.map(|m| m.to_string()).unwrap_or_default(),
            self.worst_count.to_string(),
        ]
    }
}

/// Grid stability tolerance used when no bound is claimed.
const STABILITY: f64 = 1.1;

#[derive(Debug, Clone, Copy)]
struct Witness {
    m: f64,
    n: u64,
    count: u64,
}

/// Smallest `M` with `|{v <= n}| <= M n` for `1 <= n <= n_max`.
fn witness_of(mut values: Vec<f64>, n_max: u64) -> Witness {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite scales"));
    let mut best = Witness { m: 0.0, n: 1, count: 0 };
    // the ratio count(n)/n peaks where count jumps, i.e. at n = ceil(v)
    let mut i = 0;
    while i < values.len() {
        let n = values[i].ceil().max(1.0);
        if n > n_max as f64 {
            break;
        }
        let n = n as u64;
        let count = values.partition_point(|&v| v <= n as f64) as u64;
        let ratio = count as f64 / n as f64;
        if ratio > best.m {
            best = Witness { m: ratio, n, count };
        }
        i = count as usize;
    }
    best
}

fn collect_scales<F: Fn(u64) -> Scale>(f: F, k_max: u64) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for k in 1..=k_max {
        match f(k) {
            Scale::Infinite => {}
            Scale::Finite(v) if v.is_nan() || v < 1.0 => {
                return Err(Error::DomainError(format!("scale at k = {k} is {v}, below 1")));
            }
            Scale::Finite(v) => out.push(v),
        }
    }
    Ok(out)
}

fn decide(witness: f64, half: impl FnOnce() -> Result<f64>, claim: Option<f64>) -> Result<(bool, f64)> {
    match claim {
        Some(c) => Ok((witness.is_finite() && witness <= c, c)),
        None => {
            let bound = STABILITY * half()? + 1e-12;
            Ok((witness.is_finite() && witness <= bound, bound))
        }
    }
}

/// Checks `|{k <= k_max : c(k) <= n}| <= M n` for `n <= n_max`.
pub fn check_c_condition<F>(c: F, k_max: u64, n_max: u64, claim: Option<f64>) -> Result<CountingReport>
where
    F: Fn(u64) -> Scale,
{
    let w = witness_of(collect_scales(&c, k_max)?, n_max);
    let (pass, bound) = decide(
        w.m,
        || Ok(witness_of(collect_scales(&c, (k_max / 2).max(1))?, (n_max / 2).max(1)).m),
        claim,
    )?;
    Ok(CountingReport {
        condition: Condition::CCondition,
        witness_m: w.m,
        pass,
        worst_n: w.n,
        worst_m: None,
        worst_count: w.count,
        bound,
        k_max,
        n_max,
        grid_len: 0,
    })
}

fn b_witness<F>(b: &F, orientation: Orientation, grid: &[u64], k_max: u64, n_max: u64) -> Result<(Witness, u64)>
where
    F: Fn(u64, u64) -> Scale,
{
    let mut best = (Witness { m: 0.0, n: 1, count: 0 }, grid.first().copied().unwrap_or(0));
    for &m in grid {
        let values = match orientation {
            Orientation::Row => collect_scales(|k| b(m, k), k_max)?,
            Orientation::Column => collect_scales(|k| b(k, m), k_max)?,
        };
        let w = witness_of(values, n_max);
        if w.m > best.0.m {
            best = (w, m);
        }
    }
    Ok(best)
}

/// Row orientation fixes the first argument on `grid` and counts over the
/// second; column orientation the converse.
pub fn check_b_condition<F>(
    b: F,
    orientation: Orientation,
    grid: &[u64],
    k_max: u64,
    n_max: u64,
    claim: Option<f64>,
) -> Result<CountingReport>
where
    F: Fn(u64, u64) -> Scale,
{
    if grid.is_empty() {
        return Err(Error::DomainError("empty m grid".into()));
    }
    let (w, worst_m) = b_witness(&b, orientation, grid, k_max, n_max)?;
    let half_grid = &grid[..grid.len().div_ceil(2)];
    let (pass, bound) = decide(
        w.m,
        || Ok(b_witness(&b, orientation, half_grid, (k_max / 2).max(1), (n_max / 2).max(1))?.0.m),
        claim,
    )?;
    Ok(CountingReport {
        condition: match orientation {
            Orientation::Row => Condition::BRow,
            Orientation::Column => Condition::BColumn,
        },
        witness_m: w.m,
        pass,
        worst_n: w.n,
        worst_m: Some(worst_m),
        worst_count: w.count,
        bound,
        k_max,
        n_max,
        grid_len: grid.len(),
    })
}

/// Tries the row orientation and falls back to the column orientation.
/// Returns the passing report, or the row report when both fail.
pub fn check_b_either<F>(b: F, grid: &[u64], k_max: u64, n_max: u64, claim: Option<f64>) -> Result<CountingReport>
where
    F: Fn(u64, u64) -> Scale,
{
    let row = check_b_condition(&b, Orientation::Row, grid, k_max, n_max, claim)?;
    if row.pass {
        return Ok(row);
    }
    let column = check_b_condition(&b, Orientation::Column, grid, k_max, n_max, claim)?;
    Ok(if column.pass { column } else { row })
}

/// Passes iff every band `[s, s + 1]`, `1 <= s <= s_max`, holds at most
/// `m_claim` of the values `c(1..=k_max)`.
pub fn check_band_condition<F>(c: F, k_max: u64, s_max: u64, m_claim: u64) -> Result<CountingReport>
where
    F: Fn(u64) -> Scale,
{
    let mut values = collect_scales(c, k_max)?;
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite scales"));
    let mut worst = (0u64, 1u64);
    for s in 1..=s_max {
        let lo = values.partition_point(|&v| v < s as f64);
        let hi = values.partition_point(|&v| v <= (s + 1) as f64);
        let count = (hi - lo) as u64;
        if count > worst.0 {
            worst = (count, s);
        }
    }
    Ok(CountingReport {
        condition: Condition::Band,
        witness_m: worst.0 as f64,
        pass: worst.0 <= m_claim,
        worst_n: worst.1,
        worst_m: None,
        worst_count: worst.0,
        bound: m_claim as f64,
        k_max,
        n_max: s_max,
        grid_len: 0,
    })
}

/// `b_{i,j}(m, n) = |t_i r_m - t_j r_n| + 1` for multipliers along a sequence.
pub fn b_from_times(t_i: f64, t_j: f64, terms: &[u64]) -> impl Fn(u64, u64) -> Scale + '_ {
    move |m, n| Scale::Finite((t_i * terms[m as usize - 1] as f64 - t_j * terms[n as usize - 1] as f64).abs() + 1.0)
}

/// `c_{i,j}(n) = |(t_i - t_j) r_n| + 1` for `i != j`, `|t_i r_n| + 1` for `i = j`.
pub fn c_from_times(t_i: f64, t_j: f64, same: bool, terms: &[u64]) -> impl Fn(u64) -> Scale + '_ {
    move |n| {
        let r = terms[n as usize - 1] as f64;
        let v = if same { (t_i * r).abs() } else { ((t_i - t_j) * r).abs() };
        Scale::Finite(v + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn generate_examples() {
        assert_eq!(generate(&SequenceSpec::Linear, 5).unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(generate(&SequenceSpec::Primes, 5).unwrap(), vec![2, 3, 5, 7, 11]);
        let sq = SequenceSpec::Polynomial { coefficients: vec![1, 0, 1] };
        assert_eq!(generate(&sq, 4).unwrap(), vec![2, 5, 10, 17]);
        let bad = SequenceSpec::Polynomial { coefficients: vec![-3, 1] };
        assert_eq!(generate(&bad, 4).unwrap_err(), Error::NonPositiveTerm { index: 1, value: -2 });
    }

    #[test]
    fn primes_beyond_initial_bound() {
        let p = first_primes(1000);
        assert_eq!(p[999], 7919);
        assert_eq!(first_primes(6), vec![2, 3, 5, 7, 11, 13]);
    }

    #[test]
    fn multiplicity_examples() {
        assert_eq!(multiplicity(&[1, 4, 9, 16]), 1);
        let halves: Vec<u64> = (1..=10).map(|n| (n + 1) / 2).collect();
        assert_eq!(multiplicity(&halves), 2);
        assert_eq!(multiplicity(&[7, 7, 7, 7]), 4);
    }

    #[test]
    fn interval_count_examples() {
        assert_eq!(interval_count(&[2, 3, 5, 7, 11], 4.0, 8.0), 2);
        assert_eq!(interval_count(&[2, 3, 5, 7, 11], 12.0, 20.0), 0);
        let lin: Vec<u64> = (1..=100).collect();
        assert_eq!(interval_count(&lin, 10.0, 10.9), 1);
    }

    #[test]
    fn multiplicity_bounds() {
        assert_eq!(SequenceSpec::Polynomial { coefficients: vec![1, 0, 1] }.multiplicity_bound(), 1);
        // (n - 2)^2 + 1 repeats 2 at n = 1, 3
        let p = SequenceSpec::Polynomial { coefficients: vec![5, -4, 1] };
        assert_eq!(p.multiplicity_bound(), 2);
        assert!(multiplicity(&generate(&p, 50).unwrap()) as u64 <= 2);
    }

    #[test]
    fn c_condition_examples() {
        let r = check_c_condition(|k| Scale::Finite(k as f64), 1000, 1000, None).unwrap();
        assert_eq!(r.witness_m, 1.0);
        assert!(r.pass);
        let r = check_c_condition(|_| Scale::Infinite, 1000, 1000, None).unwrap();
        assert_eq!(r.witness_m, 0.0);
        assert!(r.pass);
        let r = check_c_condition(|k| Scale::Finite(2.618f64.powi(k as i32)), 50, 1_000_000, None).unwrap();
        assert!(r.witness_m <= 1.0 && r.pass);
        assert!(check_c_condition(|_| Scale::Finite(0.5), 10, 10, None).is_err());
    }

    #[test]
    fn b_condition_examples() {
        let grid: Vec<u64> = (1..=100).collect();
        let r = check_b_condition(
            |m, k| Scale::Finite((m as f64 - k as f64).abs() + 1.0),
            Orientation::Row,
            &grid,
            10_000,
            10_000,
            None,
        )
        .unwrap();
        assert!(r.witness_m <= 2.0 && r.pass, "{r:?}");

        let r = check_b_condition(
            |m, k| Scale::Finite((2.0 * k as f64 - 3.0 * m as f64).abs() + 1.0),
            Orientation::Row,
            &grid,
            10_000,
            10_000,
            None,
        )
        .unwrap();
        assert!(r.witness_m <= 1.0 && r.pass, "{r:?}");

        let r = check_b_either(|_, _| Scale::Finite(1.0), &grid, 1000, 1000, None).unwrap();
        assert!(!r.pass);
        assert_eq!((r.worst_n, r.worst_count), (1, 1000));
    }

    #[test]
    fn band_examples() {
        assert!(check_band_condition(|k| Scale::Finite(k as f64), 1000, 1000, 2).unwrap().pass);
        let r = check_band_condition(|k| Scale::Finite((k as f64).sqrt()), 9, 10, 3).unwrap();
        assert!(!r.pass);
        // [2, 3] holds sqrt(4), .., sqrt(9)
        assert_eq!((r.worst_n, r.worst_count), (2, 6));
        assert!(check_band_condition(|k| Scale::Finite(2f64.powi(k as i32)), 60, 1000, 1).unwrap().pass);
    }

    #[test]
    fn builders_from_times() {
        let terms: Vec<u64> = (1..=200).collect();
        let b = b_from_times(3.0, 2.0, &terms);
        assert_eq!(b(1, 1), Scale::Finite(2.0));
        let c = c_from_times(3.0, 2.0, false, &terms);
        assert_eq!(c(5), Scale::Finite(6.0));
        let grid: Vec<u64> = (1..=100).collect();
        assert!(check_b_condition(&b, Orientation::Row, &grid, 200, 200, None).unwrap().pass);
    }

    proptest! {
        #[test]
        fn band_bound_implies_c_condition(vals in proptest::collection::vec(1.0f64..500.0, 1..300)) {
            let f = |k: u64| Scale::Finite(vals[k as usize - 1]);
            let k = vals.len() as u64;
            let band = check_band_condition(f, k, 600, u64::MAX).unwrap();
            let c = check_c_condition(f, k, 600, Some(f64::INFINITY)).unwrap();
            prop_assert!(c.witness_m <= 2.0 * band.witness_m + 1e-12);
        }

        #[test]
        fn unit_intervals_bounded_by_multiplicity(vals in proptest::collection::vec(1u64..60, 1..200), a in 0.0f64..60.0) {
            prop_assert!(interval_count(&vals, a, a + 0.999) <= multiplicity(&vals));
        }
    }
}
