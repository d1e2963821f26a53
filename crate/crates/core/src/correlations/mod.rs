//! Multiple correlations `int f_0(h^{n_0} x) .. f_k(h^{n_k} x) dmu`,
//! computed by Monte Carlo or by exact oracles, plus joint cumulants and
//! decay-rate fits.

pub mod cumulants;
pub mod exact_shift;
pub mod exact_torus;
pub mod fit;
pub mod monte_carlo;

use serde::Serialize;

pub use cumulants::{
    count_partitions, cumulants_to_moments, for_each_partition, moments_to_cumulants, CumulantTable, SubsetTable,
};
pub use fit::{fit_decay, linear_fit, select_model, DecayModel, ModelSelection, RateFit};
pub use monte_carlo::{mc_correlation, McEstimate, Moments};

use crate::error::{Error, Result};
use crate::systems::{exact_mean, Cylinder, Observable, ShiftSystem, System, TrigPolynomial};

/// Observables `f_0..f_k` evaluated at times `n_0..n_k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationQuery {
    pub observables: Vec<Observable>,
    pub times: Vec<i64>,
}

impl CorrelationQuery {
    pub fn new(observables: Vec<Observable>, times: Vec<i64>) -> Result<Self> {
        if observables.is_empty() || observables.len() != times.len() {
            return Err(Error::InvalidQuery("need one time per observable and at least one".into()));
        }
        let mut sorted = times.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidQuery("times must be pairwise distinct".into()));
        }
        Ok(Self { observables, times })
    }

    /// Times `m_i n_i` for the form `h_i = h^{m_i}`.
    pub fn with_multipliers(observables: Vec<Observable>, times: &[i64], multipliers: &[i64]) -> Result<Self> {
        if times.len() != multipliers.len() {
            return Err(Error::InvalidQuery("one multiplier per time".into()));
        }
        Self::new(observables, times.iter().zip(multipliers).map(|(t, m)| t * m).collect())
    }

    /// `k` in the `k`-multiple correlation.
    pub fn order(&self) -> usize {
        self.observables.len() - 1
    }

    /// `min_{i != j} |n_i - n_j|`, or `None` for a single factor.
    pub fn min_gap(&self) -> Option<u64> {
        let mut t = self.times.clone();
        t.sort_unstable();
        t.windows(2).map(|w| (w[1] - w[0]).unsigned_abs()).min()
    }

    pub fn validate(&self, system: &System) -> Result<()> {
        for f in &self.observables {
            system.check_observable(f)?;
        }
        if !system.is_invertible() && self.times.iter().any(|&t| t < 0) {
            return Err(Error::NonInvertible);
        }
        Ok(())
    }

    fn cylinders(&self) -> Result<Vec<(&Cylinder, i64)>> {
        self.observables
            .iter()
            .zip(&self.times)
            .map(|(f, &t)| match f {
                Observable::Cylinder(c) => Ok((c, t)),
                Observable::Trig(_) => Err(Error::NotCylinder),
            })
            .collect()
    }

    fn trigs(&self) -> Result<Vec<(&TrigPolynomial, i64)>> {
        self.observables
            .iter()
            .zip(&self.times)
            .map(|(f, &t)| match f {
                Observable::Trig(p) => Ok((p, t)),
                Observable::Cylinder(_) => Err(Error::NotTrig),
            })
            .collect()
    }
}

/// Exact correlation of cylinder observables under a Markov measure.
pub fn exact_correlation_shift(system: &ShiftSystem, query: &CorrelationQuery, span_limit: u64) -> Result<f64> {
    let factors = query.cylinders()?;
    if system.is_one_sided() && query.times.iter().any(|&t| t < 0) {
        return Err(Error::NonInvertible);
    }
    exact_shift::exact_product(system, &factors, span_limit)
}

/// Exact correlation of trigonometric observables under a toral automorphism.
pub fn exact_correlation_torus(
    auto: &crate::systems::TorusAutomorphism,
    query: &CorrelationQuery,
) -> Result<f64> {
    exact_torus::exact_product(auto, &query.trigs()?)
}

/// Exact correlation with whichever oracle matches the system.
pub fn exact_correlation(system: &System, query: &CorrelationQuery) -> Result<f64> {
    query.validate(system)?;
    match system {
        System::Shift(s) => exact_correlation_shift(s, query, exact_shift::DEFAULT_SPAN_LIMIT),
        System::Torus(a) => exact_correlation_torus(a, query),
    }
}

/// Monte Carlo settings used when no exact oracle applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McFallback {
    pub samples: usize,
    pub seed: u64,
}

impl Default for McFallback {
    fn default() -> Self {
        Self { samples: 100_000, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Defect {
    pub correlation: f64,
    pub product_of_means: f64,
    pub defect: f64,
    /// Present when the correlation was estimated by Monte Carlo.
    pub std_error: Option<f64>,
}

impl Defect {
    pub fn is_exact(&self) -> bool {
        self.std_error.is_none()
    }
}

/// `|correlation - prod_i mu(f_i)|`, exact when an oracle applies and the
/// span fits, otherwise Monte Carlo with its standard error attached.
pub fn mixing_defect(
    system: &System,
    query: &CorrelationQuery,
    means: Option<&[f64]>,
    fallback: McFallback,
) -> Result<Defect> {
    query.validate(system)?;
    let product_of_means = match means {
        Some(m) if m.len() == query.observables.len() => m.iter().product(),
        Some(_) => return Err(Error::InvalidQuery("one mean per observable".into())),
        None => {
            let mut p = 1.0;
            for f in &query.observables {
                p *= exact_mean(f, system)?;
            }
            p
        }
    };
    let (correlation, std_error) = match exact_correlation(system, query) {
        Ok(v) => (v, None),
        Err(Error::SpanTooLarge { .. }) => {
            let mc = mc_correlation(system, query, fallback.samples, fallback.seed)?;
            (mc.estimate, Some(mc.std_error))
        }
        Err(e) => return Err(e),
    };
    Ok(Defect { correlation, product_of_means, defect: (correlation - product_of_means).abs(), std_error })
}

/// One row of a decay scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DefectRow {
    pub times: Vec<i64>,
    pub gap: u64,
    pub defect: Defect,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayCheck {
    pub rows: Vec<DefectRow>,
    pub selection: ModelSelection,
}

/// Fits mixing defects against the minimal pairwise time gap under both
/// decay models; tuples must have strictly increasing minimal gaps.
pub fn min_gap_decay_check(system: &System, observables: &[Observable], tuples: &[Vec<i64>]) -> Result<DecayCheck> {
    if tuples.len() < 4 {
        return Err(Error::InsufficientData { needed: 4, got: tuples.len() });
    }
    let mut means = Vec::with_capacity(observables.len());
    for f in observables {
        means.push(exact_mean(f, system)?);
    }
    let mut rows = Vec::with_capacity(tuples.len());
    for times in tuples {
        let q = CorrelationQuery::new(observables.to_vec(), times.clone())?;
        let gap = q.min_gap().ok_or_else(|| Error::InvalidQuery("need at least two times".into()))?;
        if let Some(prev) = rows.last().map(|r: &DefectRow| r.gap) {
            if gap <= prev {
                return Err(Error::InvalidQuery("minimal gaps must strictly increase".into()));
            }
        }
        let defect = mixing_defect(system, &q, Some(&means), McFallback::default())?;
        rows.push(DefectRow { times: times.clone(), gap, defect });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.gap as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.defect.defect).collect();
    let selection = select_model(&xs, &ys)?;
    Ok(DecayCheck { rows, selection })
}

/// Exact moments of every sub-product of `f_i(sigma^{t_i} x)`, converted to
/// joint cumulants.
pub fn exact_cumulants(system: &ShiftSystem, observables: &[Cylinder], times: &[i64]) -> Result<CumulantTable> {
    if observables.len() != times.len() {
        return Err(Error::InvalidQuery("one time per observable".into()));
    }
    let vars = observables.len();
    let mut err = None;
    let moments = SubsetTable::from_fn(vars, |mask| {
        let factors: Vec<(&Cylinder, i64)> =
            (0..vars).filter(|i| mask >> i & 1 == 1).map(|i| (&observables[i], times[i])).collect();
        match exact_shift::exact_product(system, &factors, exact_shift::DEFAULT_SPAN_LIMIT) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e);
                f64::NAN
            }
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    moments_to_cumulants(&moments)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CumulantRow {
    pub times: Vec<i64>,
    /// `max_t |n_t - n_0|` after recentring at the first time.
    pub spread: u64,
    pub table: CumulantTable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CumulantScan {
    pub rows: Vec<CumulantRow>,
    /// Exponential fit of `|kappa(full set)|` against the spread.
    pub fit: RateFit,
}

/// Exact joint cumulants on a grid of time tuples with an exponential fit
/// of the top-order cumulant.
pub fn cumulant_decay_scan(system: &ShiftSystem, observables: &[Cylinder], grid: &[Vec<i64>]) -> Result<CumulantScan> {
    let mut rows = Vec::with_capacity(grid.len());
    for times in grid {
        let table = exact_cumulants(system, observables, times)?;
        let spread = times.iter().map(|t| (t - times[0]).unsigned_abs()).max().unwrap_or(0);
        rows.push(CumulantRow { times: times.clone(), spread, table });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.spread as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.table.full_cumulant()).collect();
    let fit = fit_decay(DecayModel::Exponential, &xs, &ys)?;
    Ok(CumulantScan { rows, fit })
}

/// Result of the L-infinity induction step: for centred `f_0` and
/// `0 = n_0 < n_1 < .. < n_k`,
/// `|E[f_0 prod_{i>=1} f_i(sigma^{n_i} x)]| <= beta * prod_{i>=1} |f_i|_inf`,
/// where `beta = |E[f_0 | x_j, j >= b]|_1` and `b` is the first coordinate
/// read by the tail. `beta` is the L-infinity coefficient of single mixing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InductionCheck {
    pub defect: f64,
    pub coefficient: f64,
    pub sup_product: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Longest conditioning word the exact coefficient may enumerate.
const MAX_CONDITIONING: usize = 14;

/// `sup_{|phi|_inf <= 1} |E[f_0 phi(x_b, x_{b+1}, ..)]|` computed exactly.
pub fn linfty_coefficient(system: &ShiftSystem, f0: &Cylinder, boundary: i64) -> Result<f64> {
    let end = f0.offset() + f0.length() as i64 - 1;
    let last = end.max(boundary);
    let len = (last - boundary + 1) as usize;
    if len > MAX_CONDITIONING {
        return Err(Error::InvalidQuery(format!("conditioning window of {len} symbols is too long")));
    }
    let m = system.alphabet_size();
    let mut word = vec![0usize; len];
    let mut total = 0.0;
    for code in 0..m.pow(len as u32) {
        crate::systems::decode(code, m, &mut word);
        if !system.word_admissible(&word) {
            continue;
        }
        let target = word.clone();
        let ind = Cylinder::from_fn(system, 0, len, |w| if w == target.as_slice() { 1.0 } else { 0.0 })?;
        total += exact_shift::exact_product(system, &[(f0, 0), (&ind, boundary)], exact_shift::DEFAULT_SPAN_LIMIT)?
            .abs();
    }
    Ok(total)
}

pub fn linfty_induction_check(system: &ShiftSystem, observables: &[Cylinder], times: &[i64]) -> Result<InductionCheck> {
    if observables.len() < 2 || observables.len() != times.len() {
        return Err(Error::InvalidQuery("need f_0 and at least one later factor".into()));
    }
    if times[0] != 0 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidQuery("times must be 0 = n_0 < n_1 < .. < n_k".into()));
    }
    let f0 = &observables[0];
    let mean = f0.exact_mean(system);
    if mean.abs() > 1e-12 {
        return Err(Error::NotCentered { mean });
    }
    let factors: Vec<(&Cylinder, i64)> = observables.iter().zip(times.iter().copied()).collect();
    let defect = exact_shift::exact_product(system, &factors, exact_shift::DEFAULT_SPAN_LIMIT)?.abs();
    let boundary = observables[1..].iter().zip(&times[1..]).map(|(f, &t)| t + f.offset()).min().unwrap();
    let coefficient = linfty_coefficient(system, f0, boundary)?;
    let sup_product: f64 = observables[1..].iter().map(Cylinder::sup_norm).product();
    let bound = coefficient * sup_product;
    Ok(InductionCheck { defect, coefficient, sup_product, bound, pass: defect <= bound * (1.0 + 1e-12) + 1e-15 })
}
