//! Multiple ergodic averages along a sequence and their rate statistics.
//!
//! The term at step `n` is `F_n(x) = prod_i f_i(h^{m_i r_n} x)`; the
//! stream reports the raw average `A_N` and the centred sum
//! `S_N = sum_{n <= N} (F_n - prod_i mu(f_i))` at each checkpoint.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::dyadic::TermSource;
use crate::error::{Error, Result};
use crate::seeding::{derive_seed, task_rng};
use crate::sequences::{generate, SequenceSpec};
use crate::systems::{eval, exact_mean, ModMatrix, Observable, Point, System, TorusAutomorphism, TorusPoint};

/// Default memory for cached torus powers.
pub const DEFAULT_CACHE_BYTES: usize = 256 << 20;

/// `rho(N) = N^{-1/2} (ln N)^{3/2 + eps}` for `delta > 1`, else
/// `N^{-delta/2 + eps}`.
pub fn rho(n: f64, epsilon: f64, delta: f64) -> Result<f64> {
    if !(n >= 2.0) {
        return Err(Error::DomainError(format!("rho needs N >= 2, got {n}")));
    }
    if !(epsilon > 0.0) || !(delta > 0.0) {
        return Err(Error::DomainError("rho needs epsilon > 0 and delta > 0".into()));
    }
    if delta > 1.0 {
        Ok(n.powf(-0.5) * n.ln().powf(1.5 + epsilon))
    } else {
        Ok(n.powf(-delta / 2.0 + epsilon))
    }
}

/// What to average: observables, their time multipliers and the sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AverageSpec {
    pub observables: Vec<Observable>,
    pub multipliers: Vec<i64>,
    pub sequence: SequenceSpec,
    pub n_max: u64,
    pub checkpoints: Vec<u64>,
    /// Memory allowed for the torus power cache.
    pub cache_bytes: usize,
}

/// Powers of two up to `n_max`, plus `n_max` itself.
pub fn dyadic_checkpoints(n_max: u64) -> Vec<u64> {
    let mut out: Vec<u64> = (0..64).map(|j| 1u64 << j).take_while(|&p| p <= n_max).collect();
    if out.last() != Some(&n_max) {
        out.push(n_max);
    }
    out
}

impl AverageSpec {
    pub fn new(observables: Vec<Observable>, multipliers: Vec<i64>, sequence: SequenceSpec, n_max: u64) -> Result<Self> {
        if observables.is_empty() || observables.len() != multipliers.len() {
            return Err(Error::DomainError("need one multiplier per observable".into()));
        }
        if multipliers.contains(&0) {
            return Err(Error::DomainError("multipliers must be nonzero".into()));
        }
        for (i, m) in multipliers.iter().enumerate() {
            if multipliers[..i].contains(m) {
                return Err(Error::DomainError("multipliers must be pairwise distinct".into()));
            }
        }
        if n_max < 2 {
            return Err(Error::DomainError("N_max must be at least 2".into()));
        }
        Ok(Self { observables, multipliers, sequence, n_max, checkpoints: dyadic_checkpoints(n_max), cache_bytes: DEFAULT_CACHE_BYTES })
    }

    pub fn with_checkpoints(mut self, checkpoints: Vec<u64>) -> Result<Self> {
        if checkpoints.is_empty() || checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::DomainError("checkpoints must be nonempty and strictly increasing".into()));
        }
        if checkpoints[0] == 0 || *checkpoints.last().unwrap() > self.n_max {
            return Err(Error::DomainError("checkpoints must lie in 1..=N_max".into()));
        }
        self.checkpoints = checkpoints;
        Ok(self)
    }

    pub fn with_cache_bytes(mut self, bytes: usize) -> Self {
        self.cache_bytes = bytes;
        self
    }

    pub fn validate(&self, system: &System) -> Result<()> {
        for f in &self.observables {
            system.check_observable(f)?;
        }
        if !system.is_invertible() && self.multipliers.iter().any(|&m| m < 0) {
            return Err(Error::NonInvertible);
        }
        Ok(())
    }

    /// `prod_i mu(f_i)`.
    pub fn target(&self, system: &System) -> Result<f64> {
        self.observables.iter().try_fold(1.0, |acc, f| Ok(acc * exact_mean(f, system)?))
    }

    /// Largest shift coordinate read given the terms: `max|m_i| max r_n + w`.
    pub fn window_for(&self, terms: &[u64]) -> Result<u64> {
        let r = terms.iter().copied().max().unwrap_or(0);
        let m = self.multipliers.iter().map(|m| m.unsigned_abs()).max().unwrap_or(0);
        let w = self.observables.iter().map(|f| f.radius() as u64).max().unwrap_or(0);
        m.checked_mul(r)
            .and_then(|x| x.checked_add(w))
            .ok_or_else(|| Error::DomainError("required window overflows".into()))
    }

    pub fn required_window(&self) -> Result<u64> {
        self.window_for(&generate(&self.sequence, self.n_max)?)
    }
}

/// One checkpoint of the stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesRow {
    pub n: u64,
    pub average: f64,
    pub centered_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AverageSeries {
    pub target: f64,
    pub rows: Vec<SeriesRow>,
}

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Incremental torus orbit: each factor keeps `A^{m_i r_n} x` and advances
/// by cached powers `A^{m_i (r_n - r_{n-1})}`.
struct TorusOrbit<'a> {
    auto: &'a TorusAutomorphism,
    current: Vec<TorusPoint>,
    exponent: Vec<i64>,
    cache: HashMap<i64, ModMatrix>,
    cache_limit: usize,
    cache_bytes: usize,
}

impl<'a> TorusOrbit<'a> {
    fn new(auto: &'a TorusAutomorphism, x: &TorusPoint, factors: usize, cache_bytes: usize) -> Self {
        let per_entry = 16 * auto.dim() * auto.dim() + 64;
        Self {
            auto,
            current: vec![x.clone(); factors],
            exponent: vec![0; factors],
            cache: HashMap::new(),
            cache_limit: (cache_bytes / per_entry).max(1),
            cache_bytes,
        }
    }

    fn advance(&mut self, i: usize, target: i64) -> Result<&TorusPoint> {
        let step = target - self.exponent[i];
        if step != 0 {
            if !self.cache.contains_key(&step) {
                if self.cache.len() >= self.cache_limit {
                    return Err(Error::PrecisionBudget { limit: self.cache_bytes });
                }
                self.cache.insert(step, self.auto.mod_power(step));
            }
            self.current[i] = self.cache[&step].apply(&self.current[i]);
            self.exponent[i] = target;
        }
        Ok(&self.current[i])
    }
}

/// Calls `sink(n, F_n)` for `n = 1..=terms.len()`.
fn for_each_term<F: FnMut(u64, f64)>(
    system: &System,
    spec: &AverageSpec,
    point: &Point,
    terms: &[u64],
    mut sink: F,
) -> Result<()> {
    let exponents = |r: u64| -> Result<Vec<i64>> {
        spec.multipliers
            .iter()
            .map(|&m| {
                i64::try_from(r)
                    .ok()
                    .and_then(|r| m.checked_mul(r))
                    .ok_or_else(|| Error::DomainError("exponent m_i r_n overflows i64".into()))
            })
            .collect()
    };
    match (system, point) {
        (System::Shift(_), Point::Shift(p)) => {
            let cylinders: Vec<_> = spec
                .observables
                .iter()
                .map(|f| match f {
                    Observable::Cylinder(c) => Ok(c),
                    Observable::Trig(_) => Err(Error::VariantMismatch),
                })
                .collect::<Result<_>>()?;
            for (k, &r) in terms.iter().enumerate() {
                let mut prod = 1.0;
                for (c, e) in cylinders.iter().zip(exponents(r)?) {
                    prod *= c.eval_shifted(p, e)?;
                }
                sink(k as u64 + 1, prod);
            }
        }
        (System::Torus(auto), Point::Torus(x)) => {
            let mut orbit = TorusOrbit::new(auto, x, spec.observables.len(), spec.cache_bytes);
            for (k, &r) in terms.iter().enumerate() {
                let mut prod = 1.0;
                for (i, (f, e)) in spec.observables.iter().zip(exponents(r)?).enumerate() {
                    let y = Point::Torus(orbit.advance(i, e)?.clone());
                    prod *= eval(f, &y)?;
                }
                sink(k as u64 + 1, prod);
            }
        }
        _ => return Err(Error::VariantMismatch),
    }
    Ok(())
}

/// Streams `F_1..F_{N_max}` along the orbit of `point`, emitting
/// `(N, A_N, S_N)` at every checkpoint.
pub fn ergodic_average_stream(system: &System, spec: &AverageSpec, point: &Point) -> Result<AverageSeries> {
    spec.validate(system)?;
    let target = spec.target(system)?;
    let terms = generate(&spec.sequence, spec.n_max)?;
    stream_with_terms(system, spec, point, &terms, target)
}

fn stream_with_terms(system: &System, spec: &AverageSpec, point: &Point, terms: &[u64], target: f64) -> Result<AverageSeries> {
    let mut raw = Compensated::default();
    let mut centered = Compensated::default();
    let mut rows = Vec::with_capacity(spec.checkpoints.len());
    let mut next = spec.checkpoints.iter().peekable();
    for_each_term(system, spec, point, terms, |n, f| {
        raw.add(f);
        centered.add(f - target);
        if next.peek() == Some(&&n) {
            next.next();
            rows.push(SeriesRow { n, average: raw.value() / n as f64, centered_sum: centered.value() });
        }
    })?;
    Ok(AverageSeries { target, rows })
}

/// `|A_N - target| / rho(N)` per checkpoint with N >= 2.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateTable {
    pub rows: Vec<(u64, f64)>,
    /// Max statistic over checkpoints `N >= n0`.
    pub max_after: f64,
    /// Least-squares slope of ln(statistic) against ln N over the positive
    /// entries with `N >= n0`; `None` when fewer than two qualify.
    pub slope: Option<f64>,
}

pub fn rate_statistic(series: &AverageSeries, epsilon: f64, delta: f64, target: f64, n0: u64) -> Result<RateTable> {
    let mut rows = Vec::new();
    for r in series.rows.iter().filter(|r| r.n >= 2) {
        rows.push((r.n, (r.average - target).abs() / rho(r.n as f64, epsilon, delta)?));
    }
    let max_after = rows.iter().filter(|(n, _)| *n >= n0).map(|r| r.1).fold(0.0, f64::max);
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        rows.iter().filter(|r| r.0 >= n0 && r.1 > 0.0).map(|&(n, s)| ((n as f64).ln(), s.ln())).unzip();
    let slope = if xs.len() >= 2 { Some(crate::correlations::linear_fit(&xs, &ys)?.0) } else { None };
    Ok(RateTable { rows, max_after, slope })
}

/// Parameters for an ensemble of independent orbits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnsembleParams {
    pub points: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
    /// Checkpoint each point's later statistics are compared to
    /// (default: the first checkpoint with N >= 2).
    pub reference: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointRun {
    /// Seed that reproduces this point via `task_rng(seed, 0)`.
    pub seed: u64,
    pub series: AverageSeries,
    pub statistics: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnsembleRow {
    pub n: u64,
    /// Fraction of points whose statistic exceeds its value at the reference.
    pub fraction_exceeding: f64,
    pub median: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub reference: u64,
    pub rows: Vec<EnsembleRow>,
    #[serde(skip)]
    pub runs: Vec<PointRun>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Point `i` of an ensemble under `master`: seed and sampled point.
pub fn ensemble_point(system: &System, master: u64, i: usize, reach: u64) -> (u64, Point) {
    let seed = derive_seed(master, i as u64);
    let mut rng = task_rng(seed, 0);
    (seed, system.sample_point(reach as usize, &mut rng))
}

/// Runs the stream over independently sampled points and summarises the
/// rate statistic per checkpoint. Deterministic in `params.seed`.
pub fn ensemble_rate_experiment(system: &System, spec: &AverageSpec, params: EnsembleParams) -> Result<EnsembleSummary> {
    if params.points < 10 {
        return Err(Error::DomainError("ensemble needs at least 10 points".into()));
    }
    spec.validate(system)?;
    rho(2.0, params.epsilon, params.delta)?;
    let target = spec.target(system)?;
    let terms = generate(&spec.sequence, spec.n_max)?;
    let reach = spec.window_for(&terms)?;
    let stat_ns: Vec<u64> = spec.checkpoints.iter().copied().filter(|&n| n >= 2).collect();
    let reference = params.reference.unwrap_or(*stat_ns.first().ok_or_else(|| {
        Error::DomainError("no checkpoint with N >= 2".into())
    })?);
    let ref_idx = stat_ns
        .iter()
        .position(|&n| n == reference)
        .ok_or_else(|| Error::DomainError(format!("reference N = {reference} is not a checkpoint")))?;

    let runs: Vec<Result<PointRun>> = (0..params.points)
        .into_par_iter()
        .map(|i| {
            let (seed, point) = ensemble_point(system, params.seed, i, reach);
            let series = stream_with_terms(system, spec, &point, &terms, target)?;
            let table = rate_statistic(&series, params.epsilon, params.delta, target, 0)?;
            Ok(PointRun { seed, series, statistics: table.rows.iter().map(|r| r.1).collect() })
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;

    let rows = stat_ns
        .iter()
        .enumerate()
        .map(|(j, &n)| {
            let mut col: Vec<f64> = runs.iter().map(|r| r.statistics[j]).collect();
            let exceed = runs.iter().filter(|r| r.statistics[j] > r.statistics[ref_idx]).count();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            EnsembleRow { n, fraction_exceeding: exceed as f64 / runs.len() as f64, median: median(&mut col), mean }
        })
        .collect();
    Ok(EnsembleSummary { reference, rows, runs })
}

/// Centred terms `F_k - prod_i mu(f_i)` of sampled orbits, as a term source
/// for the dyadic estimators. Point `i` is `ensemble_point(system, seed, i, _)`.
pub struct AverageTerms<'a> {
    system: &'a System,
    spec: &'a AverageSpec,
    seed: u64,
    points: usize,
    target: f64,
    terms: Vec<u64>,
    reach: u64,
}

impl<'a> AverageTerms<'a> {
    pub fn new(system: &'a System, spec: &'a AverageSpec, points: usize, seed: u64) -> Result<Self> {
        spec.validate(system)?;
        let target = spec.target(system)?;
        let terms = generate(&spec.sequence, spec.n_max)?;
        let reach = spec.window_for(&terms)?;
        Ok(Self { system, spec, seed, points, target, terms, reach })
    }
}

impl TermSource for AverageTerms<'_> {
    fn points(&self) -> usize {
        self.points
    }

    fn stream(&self, point: usize, n: u64, sink: &mut dyn FnMut(u64, f64)) -> Result<()> {
        if n > self.terms.len() as u64 {
            return Err(Error::ShapeMismatch(format!("asked for {n} terms, spec has N_max = {}", self.terms.len())));
        }
        let (_, x) = ensemble_point(self.system, self.seed, point, self.reach);
        let target = self.target;
        for_each_term(self.system, self.spec, &x, &self.terms[..n as usize], |k, f| sink(k, f - target))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{Cylinder, ShiftSystem, TrigPolynomial};

    fn bernoulli() -> (System, ShiftSystem) {
        let s = ShiftSystem::bernoulli(&[0.5, 0.5]).unwrap();
        (System::Shift(s.clone()), s)
    }

    fn centered_indicator(s: &ShiftSystem) -> Observable {
        Cylinder::indicator(s, 0, 0).minus(0.5).into()
    }

    #[test]
    fn rho_examples() {
        assert!((rho(100.0, 0.5, 2.0).unwrap() - 0.1 * 100f64.ln().powi(2)).abs() < 1e-15);
        assert!((rho(100.0, 0.5, 2.0).unwrap() - 2.120759).abs() < 1e-5);
        assert!((rho(1e4, 0.25, 1.0).unwrap() - 0.1).abs() < 1e-15);
        assert!(rho(1.0, 1.0, 2.0).is_err());
        let grid = dyadic_checkpoints(1 << 20);
        for w in grid.windows(2).filter(|w| w[0] >= 8 && w[0] > 1 << 12) {
            assert!(rho(w[1] as f64, 1.0, 2.0).unwrap() < rho(w[0] as f64, 1.0, 2.0).unwrap());
        }
    }

    #[test]
    fn spec_guards() {
        let (_, s) = bernoulli();
        let f = centered_indicator(&s);
        let dup = AverageSpec::new(vec![f.clone(), f.clone()], vec![2, 2], SequenceSpec::Linear, 16);
        assert_eq!(dup.unwrap_err(), Error::DomainError("multipliers must be pairwise distinct".into()));
        assert!(AverageSpec::new(vec![f.clone()], vec![0], SequenceSpec::Linear, 16).is_err());
        assert!(AverageSpec::new(vec![f], vec![1], SequenceSpec::Linear, 1).is_err());
        assert_eq!(dyadic_checkpoints(12), vec![1, 2, 4, 8, 12]);
    }

    #[test]
    fn window_matches_square_sequence() {
        let (sys, s) = bernoulli();
        let f: Observable = Cylinder::with_radius(&s, 3, |_| 0.0).unwrap().into();
        let spec = AverageSpec::new(
            vec![f.clone(), f],
            vec![1, 2],
            SequenceSpec::Polynomial { coefficients: vec![0, 0, 1] },
            1 << 10,
        )
        .unwrap();
        spec.validate(&sys).unwrap();
        assert_eq!(spec.required_window().unwrap(), 2 * (1 << 20) + 3);
    }

    #[test]
    fn constant_observable() {
        let (sys, s) = bernoulli();
        let c: Observable = Cylinder::constant(&s, 0.75).into();
        let spec = AverageSpec::new(vec![c], vec![1], SequenceSpec::Linear, 64).unwrap();
        let p = sys.sample_point(70, &mut task_rng(1, 0));
        let series = ergodic_average_stream(&sys, &spec, &p).unwrap();
        for r in &series.rows {
            assert_eq!(r.average, 0.75);
            assert_eq!(r.centered_sum, 0.0);
        }
        let table = rate_statistic(&series, 1.0, 2.0, 0.75, 0).unwrap();
        assert!(table.rows.iter().all(|r| r.1 == 0.0));
        assert_eq!(table.slope, None);
    }

    #[test]
    fn stream_matches_direct_evaluation() {
        let markov = ShiftSystem::new(vec![vec![1, 1], vec![1, 1]], vec![vec![0.9, 0.1], vec![0.5, 0.5]], false).unwrap();
        let sys = System::Shift(markov.clone());
        let f0: Observable = Cylinder::from_fn(&markov, -1, 2, |w| w[0] as f64 + 0.3 * w[1] as f64).unwrap().into();
        let f1: Observable = Cylinder::indicator(&markov, 1, 0).into();
        let seq = SequenceSpec::Polynomial { coefficients: vec![1, 1, 1] };
        let spec = AverageSpec::new(vec![f0.clone(), f1.clone()], vec![-1, 3], seq.clone(), 1 << 10).unwrap();
        let reach = spec.required_window().unwrap();
        let p = sys.sample_point(reach as usize, &mut task_rng(9, 0));
        let series = ergodic_average_stream(&sys, &spec, &p).unwrap();
        let terms = generate(&seq, 1 << 10).unwrap();
        let mut direct = 0.0;
        let mut rows = series.rows.iter();
        let mut row = rows.next();
        for (k, &r) in terms.iter().enumerate() {
            let a = eval(&f0, &sys.apply(&p, -(r as i64)).unwrap()).unwrap();
            let b = eval(&f1, &sys.apply(&p, 3 * r as i64).unwrap()).unwrap();
            direct += a * b;
            if let Some(rw) = row.filter(|rw| rw.n == k as u64 + 1) {
                let expect = direct / rw.n as f64;
                assert!((rw.average - expect).abs() <= 1e-12 * expect.abs().max(1e-300));
                let scale = rw.n as f64 * rw.average.abs().max(series.target.abs());
                assert!((rw.centered_sum - rw.n as f64 * (rw.average - series.target)).abs() <= 1e-12 * scale);
                row = rows.next();
            }
        }
        assert!(row.is_none());
        // swapping factor order changes nothing
        let swapped = AverageSpec::new(vec![f1, f0], vec![3, -1], seq, 1 << 10).unwrap();
        let again = ergodic_average_stream(&sys, &swapped, &p).unwrap();
        for (a, b) in series.rows.iter().zip(&again.rows) {
            assert!((a.average - b.average).abs() <= 1e-12 * a.average.abs());
        }
    }

    #[test]
    fn window_exhaustion_is_reported() {
        let (sys, s) = bernoulli();
        let spec = AverageSpec::new(vec![centered_indicator(&s)], vec![2], SequenceSpec::Linear, 64).unwrap();
        let p = sys.sample_point(10, &mut task_rng(0, 0));
        assert!(matches!(ergodic_average_stream(&sys, &spec, &p), Err(Error::WindowExhausted { .. })));
    }

    #[test]
    fn one_sided_rejects_negative_multipliers() {
        let s = ShiftSystem::doubling_map();
        let sys = System::Shift(s.clone());
        let spec = AverageSpec::new(vec![Cylinder::indicator(&s, 0, 0).into()], vec![-1], SequenceSpec::Linear, 8).unwrap();
        assert_eq!(spec.validate(&sys).unwrap_err(), Error::NonInvertible);
    }

    #[test]
    fn torus_stream_matches_direct_powers() {
        let cat = TorusAutomorphism::cat_map(128);
        let sys = System::Torus(cat.clone());
        let f: Observable = TrigPolynomial::cosine(vec![1, 2], 1.0).into();
        let g: Observable = TrigPolynomial::cosine(vec![0, 1], 2.0).into();
        let spec = AverageSpec::new(vec![f.clone(), g.clone()], vec![1, -2], SequenceSpec::Primes, 200).unwrap();
        let p = sys.sample_point(0, &mut task_rng(3, 0));
        let series = ergodic_average_stream(&sys, &spec, &p).unwrap();
        let primes = generate(&SequenceSpec::Primes, 200).unwrap();
        let direct: f64 = primes
            .iter()
            .map(|&r| {
                let a = eval(&f, &sys.apply(&p, r as i64).unwrap()).unwrap();
                let b = eval(&g, &sys.apply(&p, -2 * r as i64).unwrap()).unwrap();
                a * b
            })
            .sum::<f64>()
            / 200.0;
        let last = series.rows.last().unwrap();
        assert_eq!(last.n, 200);
        assert!((last.average - direct).abs() < 1e-12);
    }

    #[test]
    fn tiny_cache_budget_fails_cleanly() {
        let cat = TorusAutomorphism::cat_map(64);
        let sys = System::Torus(cat);
        let f: Observable = TrigPolynomial::cosine(vec![1, 0], 1.0).into();
        let spec = AverageSpec::new(vec![f], vec![1], SequenceSpec::Polynomial { coefficients: vec![0, 0, 1] }, 50)
            .unwrap()
            .with_cache_bytes(1);
        let p = sys.sample_point(0, &mut task_rng(0, 0));
        assert_eq!(ergodic_average_stream(&sys, &spec, &p).unwrap_err(), Error::PrecisionBudget { limit: 1 });
    }

    #[test]
    fn independent_product_has_zero_target() {
        let (sys, s) = bernoulli();
        let f = centered_indicator(&s);
        let spec = AverageSpec::new(vec![f.clone(), f], vec![1, 2], SequenceSpec::Linear, 32).unwrap();
        assert_eq!(spec.target(&sys).unwrap(), 0.0);
    }

    #[test]
    fn markov_average_concentrates() {
        let markov = ShiftSystem::new(vec![vec![1, 1], vec![1, 1]], vec![vec![0.9, 0.1], vec![0.5, 0.5]], false).unwrap();
        let sys = System::Shift(markov.clone());
        let f: Observable = Cylinder::indicator(&markov, 0, 0).into();
        let spec = AverageSpec::new(vec![f], vec![1], SequenceSpec::Linear, 1 << 14).unwrap();
        // 97.5% expected from the CLT scale; 1000 points keep the check
        // away from the binomial noise a 100-point sample carries
        let good = (0..1000)
            .filter(|&i| {
                let (_, p) = ensemble_point(&sys, 42, i, 1 << 14);
                let series = ergodic_average_stream(&sys, &spec, &p).unwrap();
                (series.rows.last().unwrap().average - 5.0 / 6.0).abs() < 0.01
            })
            .count();
        assert!(good >= 950, "{good}");
    }

    #[test]
    fn misspecified_target_grows() {
        let (sys, s) = bernoulli();
        let spec = AverageSpec::new(vec![centered_indicator(&s)], vec![1], SequenceSpec::Linear, 1 << 16).unwrap();
        let (_, p) = ensemble_point(&sys, 5, 0, 1 << 16);
        let series = ergodic_average_stream(&sys, &spec, &p).unwrap();
        // rho(N) only decreases once ln N > 5/2 + eps
        let table = rate_statistic(&series, 1.0, 2.0, 0.1, 1 << 9).unwrap();
        assert!(table.slope.unwrap() > 0.0);
    }

    #[test]
    fn ensemble_is_deterministic_and_constant_case_is_zero() {
        let (sys, s) = bernoulli();
        let c: Observable = Cylinder::constant(&s, 1.0).into();
        let spec = AverageSpec::new(vec![c], vec![1], SequenceSpec::Linear, 64).unwrap();
        let params = EnsembleParams { points: 12, epsilon: 1.0, delta: 2.0, seed: 3, reference: None };
        let out = ensemble_rate_experiment(&sys, &spec, params).unwrap();
        assert!(out.rows.iter().all(|r| r.fraction_exceeding == 0.0));

        let f = centered_indicator(&s);
        let spec = AverageSpec::new(vec![f.clone(), f], vec![1, 2], SequenceSpec::Linear, 256).unwrap();
        let a = ensemble_rate_experiment(&sys, &spec, params).unwrap();
        let b = ensemble_rate_experiment(&sys, &spec, params).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.runs, b.runs);
    }
}
