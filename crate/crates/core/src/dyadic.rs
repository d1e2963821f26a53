//! Dyadic chaining: blocks `{m : i 2^r < m <= (i+1) 2^r}`, the
//! decomposition of `{1..n}` into at most `s` of them, and the ensemble
//! variance estimates the chaining argument consumes.

use rayon::prelude::*;
use serde::Serialize;

use crate::correlations::{linear_fit, Moments};
use crate::error::{Error, Result};

/// `{m : index 2^level < m <= (index+1) 2^level}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct DyadicInterval {
    pub level: u32,
    pub index: u64,
}

impl DyadicInterval {
    pub fn new(level: u32, index: u64) -> Self {
        Self { level, index }
    }

    /// Smallest member.
    pub fn lo(&self) -> u64 {
        (self.index << self.level) + 1
    }

    /// Largest member.
    pub fn hi(&self) -> u64 {
        (self.index + 1) << self.level
    }

    pub fn len(&self) -> u64 {
        1 << self.level
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, m: u64) -> bool {
        m >= 1 && (m - 1) >> self.level == self.index
    }
}

/// Smallest `s` with `n < 2^s`.
pub fn s_of(n: u64) -> u32 {
    64 - n.leading_zeros()
}

/// The class `L_s`: every block of level `r < s` inside `{1..2^s}`.
pub fn dyadic_classes(s: u32) -> Vec<DyadicInterval> {
    (0..s).flat_map(|r| (0..1u64 << (s - r)).map(move |i| DyadicInterval::new(r, i))).collect()
}

/// `{1..n}` as disjoint blocks of `L_s`, largest first, read off the binary
/// expansion of `n`.
pub fn decompose(n: u64, s: u32) -> Result<Vec<DyadicInterval>> {
    if n == 0 || s >= 64 || n >= 1u64 << s {
        return Err(Error::DomainError(format!("decompose needs 1 <= n < 2^s, got n = {n}, s = {s}")));
    }
    let mut out = Vec::with_capacity(n.count_ones() as usize);
    let mut start = 0u64;
    for r in (0..s).rev() {
        if n >> r & 1 == 1 {
            out.push(DyadicInterval::new(r, start >> r));
            start += 1 << r;
        }
    }
    Ok(out)
}

/// Ensemble of term sequences `F_1, F_2, ...`, streamed one point at a time.
pub trait TermSource: Sync {
    fn points(&self) -> usize;

    /// Calls `sink(k, F_k)` for `k = 1..=n` in order, for ensemble member `point`.
    fn stream(&self, point: usize, n: u64, sink: &mut dyn FnMut(u64, f64)) -> Result<()>;
}

/// Stored terms: `rows[point][k - 1] = F_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TermMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl TermSource for TermMatrix {
    fn points(&self) -> usize {
        self.rows.len()
    }

    fn stream(&self, point: usize, n: u64, sink: &mut dyn FnMut(u64, f64)) -> Result<()> {
        let row = &self.rows[point];
        if (row.len() as u64) < n {
            return Err(Error::ShapeMismatch(format!("row {point} has {} terms, need {n}", row.len())));
        }
        for (k, &f) in row[..n as usize].iter().enumerate() {
            sink(k as u64 + 1, f);
        }
        Ok(())
    }
}

/// Terms from a generator `(point, k) -> F_k`.
pub struct FnTerms<F> {
    pub points: usize,
    pub f: F,
}

impl<F: Fn(usize, u64) -> f64 + Sync> TermSource for FnTerms<F> {
    fn points(&self) -> usize {
        self.points
    }

    fn stream(&self, point: usize, n: u64, sink: &mut dyn FnMut(u64, f64)) -> Result<()> {
        for k in 1..=n {
            sink(k, (self.f)(point, k));
        }
        Ok(())
    }
}

fn per_point<T: Send, G>(source: &dyn TermSource, job: G) -> Result<Vec<T>>
where
    G: Fn(usize) -> Result<T> + Sync + Send,
{
    let out: Vec<Result<T>> = (0..source.points()).into_par_iter().map(job).collect();
    out.into_iter().collect()
}

/// Per level `r`, `sum_{I in L_{s,r}} (sum_{k in I} F_k)^2` for one point.
fn level_sums(source: &dyn TermSource, point: usize, s: u32) -> Result<Vec<f64>> {
    let mut running = vec![0.0; s as usize];
    let mut totals = vec![0.0; s as usize];
    source.stream(point, 1 << s, &mut |k, f| {
        for r in 0..s as usize {
            running[r] += f;
            if k & ((1 << r) - 1) == 0 {
                totals[r] += running[r] * running[r];
                running[r] = 0.0;
            }
        }
    })?;
    Ok(totals)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceProfile {
    pub s: u32,
    /// Ensemble mean of the level-`r` sum, `r = 0..s`.
    pub level_means: Vec<f64>,
    /// Ensemble mean of the sum over all of `L_s`.
    pub total_mean: f64,
    /// Per-point totals, in point order.
    pub totals: Vec<f64>,
}

pub fn variance_profile(source: &dyn TermSource, s: u32) -> Result<VarianceProfile> {
    if s == 0 || s > 40 {
        return Err(Error::DomainError("level count s must lie in 1..=40".into()));
    }
    if source.points() == 0 {
        return Err(Error::ShapeMismatch("empty ensemble".into()));
    }
    let levels = per_point(source, |p| level_sums(source, p, s))?;
    let count = levels.len() as f64;
    let mut level_means = vec![0.0; s as usize];
    for row in &levels {
        for (m, v) in level_means.iter_mut().zip(row) {
            *m += v / count;
        }
    }
    let totals: Vec<f64> = levels.iter().map(|row| row.iter().sum()).collect();
    let total_mean = totals.iter().sum::<f64>() / count;
    Ok(VarianceProfile { s, level_means, total_mean, totals })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExceptionalReport {
    pub s: u32,
    /// `s^{2+eps} 2^{sigma s}`.
    pub threshold: f64,
    /// Fraction of points whose total exceeds the threshold.
    pub fraction: f64,
    /// `C = mean total / (s 2^{sigma s})`.
    pub constant: f64,
    /// Chebyshev bound `C s^{-1-eps}`.
    pub bound: f64,
    pub pass: bool,
}

pub fn exceptional_fraction(source: &dyn TermSource, s: u32, epsilon: f64, sigma: f64) -> Result<ExceptionalReport> {
    let profile = variance_profile(source, s)?;
    Ok(exceptional_from_profile(&profile, epsilon, sigma))
}

pub fn exceptional_from_profile(profile: &VarianceProfile, epsilon: f64, sigma: f64) -> ExceptionalReport {
    let s = profile.s as f64;
    let scale = (sigma * s * std::f64::consts::LN_2).exp();
    let threshold = s.powf(2.0 + epsilon) * scale;
    let over = profile.totals.iter().filter(|&&t| t > threshold).count();
    let fraction = over as f64 / profile.totals.len() as f64;
    let constant = profile.total_mean / (s * scale);
    let bound = constant * s.powf(-1.0 - epsilon);
    ExceptionalReport { s: profile.s, threshold, fraction, constant, bound, pass: fraction <= bound * (1.0 + 1e-12) }
}

/// `(s, fraction(Y_s), sum_{s' <= s} fraction(Y_{s'}))` for `s = 1..=s_max`.
pub fn borel_cantelli_partial_sums(
    source: &dyn TermSource,
    s_max: u32,
    epsilon: f64,
    sigma: f64,
) -> Result<Vec<(u32, f64, f64)>> {
    let mut acc = 0.0;
    (1..=s_max)
        .map(|s| {
            let r = exceptional_fraction(source, s, epsilon, sigma)?;
            acc += r.fraction;
            Ok((s, r.fraction, acc))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainCheck {
    pub s: u32,
    /// `(sum_{k <= n} F_k)^2`.
    pub lhs: f64,
    /// `s sum_{I in L(n)} (sum_{k in I} F_k)^2`.
    pub mid: f64,
    /// `s sum_{I in L_s} (sum_{k in I} F_k)^2`, terms past the vector being 0.
    pub rhs: f64,
    pub pass: bool,
}

fn block_sum(prefix: &[f64], iv: &DyadicInterval) -> f64 {
    let hi = (iv.hi() as usize).min(prefix.len() - 1);
    let lo = (iv.lo() as usize - 1).min(hi);
    prefix[hi] - prefix[lo]
}

/// `F[k - 1] = F_k`. Block sums are computed directly rather than from
/// prefix differences so the inequality is tested on the actual sums.
pub fn chain_inequality_check(terms: &[f64], n: u64) -> Result<ChainCheck> {
    if n == 0 || n as usize > terms.len() {
        return Err(Error::ShapeMismatch(format!("need 1 <= n <= {}, got {n}", terms.len())));
    }
    let s = s_of(n);
    let sum_over = |iv: &DyadicInterval| -> f64 {
        let lo = iv.lo() as usize - 1;
        let hi = (iv.hi() as usize).min(terms.len());
        if lo >= hi {
            0.0
        } else {
            terms[lo..hi].iter().sum()
        }
    };
    let total: f64 = terms[..n as usize].iter().sum();
    let lhs = total * total;
    let mid = s as f64 * decompose(n, s)?.iter().map(|iv| sum_over(iv).powi(2)).sum::<f64>();
    let rhs = s as f64 * dyadic_classes(s).iter().map(|iv| sum_over(iv).powi(2)).sum::<f64>();
    let tol = 1e-9;
    let pass = lhs <= mid * (1.0 + tol) + 1e-300 && mid <= rhs * (1.0 + tol) + 1e-300;
    Ok(ChainCheck { s, lhs, mid, rhs, pass })
}

/// Same as [`chain_inequality_check`] via prefix sums; for long vectors.
pub fn chain_inequality_prefix(terms: &[f64], n: u64) -> Result<ChainCheck> {
    if n == 0 || n as usize > terms.len() {
        return Err(Error::ShapeMismatch(format!("need 1 <= n <= {}, got {n}", terms.len())));
    }
    let s = s_of(n);
    let mut prefix = vec![0.0; terms.len() + 1];
    for (k, &f) in terms.iter().enumerate() {
        prefix[k + 1] = prefix[k] + f;
    }
    let lhs = prefix[n as usize].powi(2);
    let mid = s as f64 * decompose(n, s)?.iter().map(|iv| block_sum(&prefix, iv).powi(2)).sum::<f64>();
    let rhs = s as f64 * dyadic_classes(s).iter().map(|iv| block_sum(&prefix, iv).powi(2)).sum::<f64>();
    let tol = 1e-9;
    let pass = lhs <= mid * (1.0 + tol) + 1e-300 && mid <= rhs * (1.0 + tol) + 1e-300;
    Ok(ChainCheck { s, lhs, mid, rhs, pass })
}

/// Ensemble estimate of `E (sum_{m < k <= n} F_k)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EEstimate {
    pub m: u64,
    pub n: u64,
    pub mean: f64,
    pub std_error: f64,
    pub points: usize,
}

pub fn empirical_e(source: &dyn TermSource, m: u64, n: u64) -> Result<EEstimate> {
    Ok(empirical_e_profile(source, m, &[n])?[0])
}

/// One pass per point covering every `n` in `ns` (strictly increasing, all `> m`).
pub fn empirical_e_profile(source: &dyn TermSource, m: u64, ns: &[u64]) -> Result<Vec<EEstimate>> {
    if ns.is_empty() || ns[0] <= m || ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::DomainError("need m < n_1 < n_2 < ...".into()));
    }
    if source.points() == 0 {
        return Err(Error::ShapeMismatch("empty ensemble".into()));
    }
    let last = *ns.last().unwrap();
    let squares = per_point(source, |p| {
        let mut out = Vec::with_capacity(ns.len());
        let mut sum = 0.0;
        let mut next = 0;
        source.stream(p, last, &mut |k, f| {
            if k > m {
                sum += f;
            }
            if next < ns.len() && k == ns[next] {
                out.push(sum * sum);
                next += 1;
            }
        })?;
        Ok(out)
    })?;
    Ok(ns
        .iter()
        .enumerate()
        .map(|(j, &n)| {
            let mut acc = Moments::default();
            squares.iter().for_each(|row| acc.push(row[j]));
            EEstimate { m, n, mean: acc.mean, std_error: acc.std_error(), points: squares.len() }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SigmaFit {
    /// Slope of ln E against ln N.
    pub sigma: f64,
    pub intercept: f64,
    pub rss: f64,
    pub points: usize,
}

/// `sigma` from `E(0, N)` on a dyadic grid of at least four points.
pub fn sigma_fit(ns: &[u64], es: &[f64]) -> Result<SigmaFit> {
    if ns.len() != es.len() {
        return Err(Error::ShapeMismatch("grid and values differ in length".into()));
    }
    let usable: Vec<(f64, f64)> =
        ns.iter().zip(es).filter(|(_, &e)| e > 0.0).map(|(&n, &e)| ((n as f64).ln(), e.ln())).collect();
    if usable.len() < 4 {
        return Err(Error::InsufficientData { needed: 4, got: usable.len() });
    }
    if ns.iter().any(|n| !n.is_power_of_two()) {
        return Err(Error::DomainError("sigma fit expects a dyadic grid".into()));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = usable.into_iter().unzip();
    let (sigma, intercept, rss) = linear_fit(&xs, &ys)?;
    Ok(SigmaFit { sigma, intercept, rss, points: xs.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerGap {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// `(n - m)^{1+eps} <= n^{1+eps} - m^{1+eps}`.
pub fn power_gap_check(m: u64, n: u64, epsilon: f64) -> Result<PowerGap> {
    if m >= n || !(epsilon > 0.0) {
        return Err(Error::DomainError("need 0 <= m < n and epsilon > 0".into()));
    }
    let p = 1.0 + epsilon;
    let lhs = ((n - m) as f64).powf(p);
    let rhs = (n as f64).powf(p) - (m as f64).powf(p);
    // the subtraction loses up to ~n^p * eps_machine
    let slack = 4.0 * f64::EPSILON * (n as f64).powf(p);
    Ok(PowerGap { lhs, rhs, pass: lhs <= rhs + slack })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsRatio {
    pub max: f64,
    pub argmax: u64,
}

/// `2^{s(n) sigma/2} s(n)^{3/2+eps} / (n^{sigma/2} (ln n)^{3/2+eps})`.
pub fn ks_ratio(sigma: f64, epsilon: f64, n: u64) -> f64 {
    let s = s_of(n) as f64;
    let nf = n as f64;
    let log_num = s * sigma / 2.0 * std::f64::consts::LN_2 + (1.5 + epsilon) * s.ln();
    let log_den = sigma / 2.0 * nf.ln() + (1.5 + epsilon) * nf.ln().ln();
    (log_num - log_den).exp()
}

/// Maximum of [`ks_ratio`] over `2 <= n <= n_max`.
pub fn ks_ratio_bound(sigma: f64, epsilon: f64, n_max: u64) -> Result<KsRatio> {
    if !(sigma > 0.0) || !(epsilon > 0.0) || n_max < 4 {
        return Err(Error::DomainError("need sigma, epsilon > 0 and N_max >= 4".into()));
    }
    let mut best = KsRatio { max: f64::NEG_INFINITY, argmax: 2 };
    for n in 2..=n_max {
        let r = ks_ratio(sigma, epsilon, n);
        if r > best.max {
            best = KsRatio { max: r, argmax: n };
        }
    }
    Ok(best)
}
