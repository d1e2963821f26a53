//! Subshifts of finite type carrying a stationary Markov measure.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-9;

/// Topological Markov shift with an invariant Markov measure.
///
/// Symbols are `0..alphabet_size`. A one-sided system models the
/// non-invertible factor (e.g. the doubling map as the one-sided full
/// 2-shift); only indices `>= 0` exist there.
#[derive(Debug, Clone, Serialize)]
pub struct ShiftSystem {
    alphabet_size: usize,
    adjacency: Vec<Vec<u8>>,
    transition: Vec<Vec<f64>>,
    stationary: Vec<f64>,
    reversed: Vec<Vec<f64>>,
    one_sided: bool,
    #[serde(skip)]
    cdf_stationary: Vec<f64>,
    #[serde(skip)]
    cdf_forward: Vec<Vec<f64>>,
    #[serde(skip)]
    cdf_backward: Vec<Vec<f64>>,
}

/// Builds a two-sided shift from an adjacency matrix and a compatible
/// stochastic matrix.
pub fn build_shift(adjacency: Vec<Vec<u8>>, transition: Vec<Vec<f64>>) -> Result<ShiftSystem> {
    ShiftSystem::new(adjacency, transition, false)
}

impl ShiftSystem {
    pub fn new(adjacency: Vec<Vec<u8>>, transition: Vec<Vec<f64>>, one_sided: bool) -> Result<Self> {
        let m = adjacency.len();
        if m < 2 || m > 255 {
            return Err(Error::DomainError(format!("alphabet size {m} outside 2..=255")));
        }
        if adjacency.iter().any(|r| r.len() != m)
            || transition.len() != m
            || transition.iter().any(|r| r.len() != m)
        {
            return Err(Error::DomainError("adjacency and transition must be square of equal size".into()));
        }
        for (i, row) in adjacency.iter().enumerate() {
            for (j, &a) in row.iter().enumerate() {
                if a > 1 {
                    return Err(Error::DomainError(format!("adjacency entry ({i}, {j}) is not 0/1")));
                }
                let p = transition[i][j];
                if !p.is_finite() || p < 0.0 || p > 1.0 {
                    return Err(Error::DomainError(format!("transition entry ({i}, {j}) = {p} is not a probability")));
                }
                if (p > 0.0) != (a == 1) {
                    return Err(Error::IncompatibleSupport { row: i, col: j });
                }
            }
        }
        for (i, row) in transition.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::NotStochastic { row: i, sum });
            }
        }
        check_aperiodic(&adjacency)?;

        let transition: Vec<Vec<f64>> = transition
            .into_iter()
            .map(|row| {
                let s: f64 = row.iter().sum();
                row.into_iter().map(|p| p / s).collect()
            })
            .collect();
        let stationary = stationary_vector(&transition);
        let reversed: Vec<Vec<f64>> = (0..m)
            .map(|i| (0..m).map(|j| stationary[j] * transition[j][i] / stationary[i]).collect())
            .collect();

        let cdf_stationary = cumulative(&stationary);
        let cdf_forward = transition.iter().map(|r| cumulative(r)).collect();
        let cdf_backward = reversed.iter().map(|r| cumulative(r)).collect();
        Ok(Self {
            alphabet_size: m,
            adjacency,
            transition,
            stationary,
            reversed,
            one_sided,
            cdf_stationary,
            cdf_forward,
            cdf_backward,
        })
    }

    /// Full shift on `probs.len()` symbols with product (Bernoulli) measure.
    pub fn bernoulli(probs: &[f64]) -> Result<Self> {
        let m = probs.len();
        Self::new(vec![vec![1; m]; m], vec![probs.to_vec(); m], false)
    }

    /// The doubling map `x -> 2x mod 1` as the one-sided full 2-shift with
    /// the fair coin measure (binary digits of x).
    pub fn doubling_map() -> Self {
        Self::new(vec![vec![1; 2]; 2], vec![vec![0.5; 2]; 2], true).expect("valid full shift")
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn adjacency(&self) -> &[Vec<u8>] {
        &self.adjacency
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// Transition matrix of the time-reversed chain.
    pub fn reversed(&self) -> &[Vec<f64>] {
        &self.reversed
    }

    pub fn is_one_sided(&self) -> bool {
        self.one_sided
    }

    pub fn admissible(&self, a: usize, b: usize) -> bool {
        self.adjacency[a][b] == 1
    }

    /// Whether every consecutive pair of `word` is allowed.
    pub fn word_admissible(&self, word: &[usize]) -> bool {
        word.iter().all(|&s| s < self.alphabet_size) && word.windows(2).all(|w| self.admissible(w[0], w[1]))
    }

    /// Measure of the cylinder set fixed by `word` at consecutive indices.
    pub fn word_probability(&self, word: &[usize]) -> f64 {
        match word.split_first() {
            None => 1.0,
            Some((&first, _)) => {
                let mut p = self.stationary[first];
                for w in word.windows(2) {
                    p *= self.transition[w[0]][w[1]];
                }
                p
            }
        }
    }

    /// Samples a point of the invariant measure with symbols on `[-window, window]`
    /// (or `[0, window]` for one-sided systems).
    pub fn sample_point<R: Rng + ?Sized>(&self, window: usize, rng: &mut R) -> ShiftPoint {
        let w = window as i64;
        let lo = if self.one_sided { 0 } else { -w };
        let len = (w - lo + 1) as usize;
        let zero = (-lo) as usize;
        let mut symbols = vec![0u8; len];
        symbols[zero] = draw(&self.cdf_stationary, rng) as u8;
        for i in zero + 1..len {
            let prev = symbols[i - 1] as usize;
            symbols[i] = draw(&self.cdf_forward[prev], rng) as u8;
        }
        for i in (0..zero).rev() {
            let next = symbols[i + 1] as usize;
            symbols[i] = draw(&self.cdf_backward[next], rng) as u8;
        }
        ShiftPoint { symbols: symbols.into(), lo, origin: 0 }
    }
}

/// Samples a point of `system` with a window of radius `window`; deterministic in `seed`.
pub fn sample_shift_point(system: &ShiftSystem, window: usize, seed: u64) -> ShiftPoint {
    let mut rng = crate::seeding::task_rng(seed, 0);
    system.sample_point(window, &mut rng)
}

/// Finite window of a bi-infinite (or one-sided) symbol sequence together
/// with the current origin, i.e. the number of shifts applied so far.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShiftPoint {
    symbols: Arc<[u8]>,
    lo: i64,
    origin: i64,
}

impl ShiftPoint {
    /// Builds a point from explicit symbols placed at indices `lo, lo+1, ...`.
    pub fn from_symbols(symbols: Vec<u8>, lo: i64) -> Self {
        Self { symbols: symbols.into(), lo, origin: 0 }
    }

    pub fn origin(&self) -> i64 {
        self.origin
    }

    /// Inclusive index range covered by the window.
    pub fn bounds(&self) -> (i64, i64) {
        (self.lo, self.lo + self.symbols.len() as i64 - 1)
    }

    /// Left translation by `n`; the symbols are shared, not copied.
    pub fn shift_apply(&self, n: i64) -> ShiftPoint {
        ShiftPoint { symbols: Arc::clone(&self.symbols), lo: self.lo, origin: self.origin + n }
    }

    /// Symbol at offset `k` from the current origin.
    pub fn symbol(&self, k: i64) -> Result<usize> {
        let idx = self.origin + k;
        let (lo, hi) = self.bounds();
        if idx < lo || idx > hi {
            return Err(Error::WindowExhausted { index: idx, window: hi.max(-lo) });
        }
        Ok(self.symbols[(idx - lo) as usize] as usize)
    }

    /// Raw window contents, oldest index first.
    pub fn symbols(&self) -> &[u8] {
        &self.symbols
    }
}

/// Shifts `point` by `n` (the action of the left translation `n` times).
pub fn shift_apply(point: &ShiftPoint, n: i64) -> ShiftPoint {
    point.shift_apply(n)
}

fn draw<R: Rng + ?Sized>(cdf: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    cdf.iter().position(|&c| u < c).expect("cdf is closed by +inf")
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = p
        .iter()
        .map(|&x| {
            acc += x;
            acc
        })
        .collect();
    // the last positive entry closes the distribution
    if let Some(last) = p.iter().rposition(|&x| x > 0.0) {
        for c in out.iter_mut().skip(last) {
            *c = f64::INFINITY;
        }
    }
    out
}

fn check_aperiodic(adjacency: &[Vec<u8>]) -> Result<()> {
    let m = adjacency.len();
    let max_power = (m - 1) * (m - 1) + 1;
    let base: Vec<Vec<bool>> = adjacency.iter().map(|r| r.iter().map(|&a| a == 1).collect()).collect();
    let mut power = base.clone();
    for _ in 1..=max_power {
        if power.iter().all(|r| r.iter().all(|&b| b)) {
            return Ok(());
        }
        power = (0..m)
            .map(|i| (0..m).map(|j| (0..m).any(|k| power[i][k] && base[k][j])).collect())
            .collect();
    }
    Err(Error::NotAperiodic { max_power })
}

fn stationary_vector(p: &[Vec<f64>]) -> Vec<f64> {
    let m = p.len();
    // (P^T - I) pi = 0 with the last equation replaced by sum(pi) = 1
    let mut a = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            a[(i, j)] = p[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(m);
    rhs[m - 1] = 1.0;
    let sol = a.lu().solve(&rhs).expect("irreducible chain has a unique stationary law");
    let mut pi: Vec<f64> = sol.iter().map(|&x| x.max(0.0)).collect();
    // a few power steps polish the residual down to rounding level
    for _ in 0..4 {
        let next: Vec<f64> = (0..m).map(|j| (0..m).map(|i| pi[i] * p[i][j]).sum()).collect();
        let s: f64 = next.iter().sum();
        pi = next.into_iter().map(|x| x / s).collect();
    }
    pi
}

#[cfg(test)]
mod tests {
    use super::*;

    fn markov() -> ShiftSystem {
        build_shift(vec![vec![1, 1], vec![1, 1]], vec![vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap()
    }

    #[test]
    fn markov_stationary_vector() {
        let s = markov();
        assert!((s.stationary()[0] - 5.0 / 6.0).abs() < 1e-14);
        assert!((s.stationary()[1] - 1.0 / 6.0).abs() < 1e-14);
        // left fixed vector
        for j in 0..2 {
            let v: f64 = (0..2).map(|i| s.stationary()[i] * s.transition()[i][j]).sum();
            assert!((v - s.stationary()[j]).abs() <= 1e-12);
        }
    }

    #[test]
    fn symmetric_stationary_vector() {
        let s = build_shift(vec![vec![1, 1], vec![1, 1]], vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_eq!(s.stationary(), &[0.5, 0.5]);
    }

    #[test]
    fn period_two_is_rejected() {
        let err = build_shift(vec![vec![0, 1], vec![1, 0]], vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::NotAperiodic { max_power: 2 }));
    }

    #[test]
    fn support_and_row_sum_errors() {
        let err = build_shift(vec![vec![1, 0], vec![1, 1]], vec![vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap_err();
        assert_eq!(err, Error::IncompatibleSupport { row: 0, col: 1 });
        let err = build_shift(vec![vec![1, 1], vec![1, 1]], vec![vec![0.9, 0.2], vec![0.5, 0.5]]).unwrap_err();
        assert!(matches!(err, Error::NotStochastic { row: 0, .. }));
    }

    #[test]
    fn golden_mean_shift_is_aperiodic() {
        let s = build_shift(vec![vec![1, 1], vec![1, 0]], vec![vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        assert!((s.stationary()[0] - 2.0 / 3.0).abs() < 1e-14);
        let p = sample_shift_point(&s, 200, 5);
        for w in p.symbols().windows(2) {
            assert!(s.admissible(w[0] as usize, w[1] as usize));
        }
    }

    #[test]
    fn reversed_chain_is_stochastic() {
        let s = markov();
        for row in s.reversed() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = markov();
        assert_eq!(sample_shift_point(&s, 50, 11), sample_shift_point(&s, 50, 11));
        assert_ne!(sample_shift_point(&s, 50, 11), sample_shift_point(&s, 50, 12));
    }

    #[test]
    fn shift_composes_and_respects_window() {
        let s = markov();
        let p = sample_shift_point(&s, 10, 1);
        assert_eq!(p.shift_apply(0), p);
        assert_eq!(p.shift_apply(3).shift_apply(4), p.shift_apply(7));
        assert_eq!(p.shift_apply(3).symbol(0).unwrap(), p.symbol(3).unwrap());
        let far = p.shift_apply(11);
        assert!(matches!(far.symbol(0), Err(Error::WindowExhausted { index: 11, .. })));
    }

    #[test]
    fn one_sided_window_starts_at_zero() {
        let s = ShiftSystem::doubling_map();
        let p = sample_shift_point(&s, 8, 3);
        assert_eq!(p.bounds(), (0, 8));
        assert!(p.symbol(-1).is_err());
    }
}
