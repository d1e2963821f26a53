//! Experiment dispatch: validation, execution and artifact writing.

use std::collections::HashSet;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ergolab_core::averages::{
    ensemble_point, ensemble_rate_experiment, ergodic_average_stream, rate_statistic, rho, AverageSpec,
    AverageTerms, EnsembleParams, PointRun,
};
use ergolab_core::correlations::cumulants::MAX_K;
use ergolab_core::correlations::{
    exact_correlation, exact_cumulants, fit_decay, mc_correlation, mixing_defect, select_model, CorrelationQuery,
    DecayModel, McFallback,
};
use ergolab_core::dyadic::{
    decompose, empirical_e_profile, exceptional_from_profile, s_of, sigma_fit, variance_profile,
};
use ergolab_core::matrix_growth::{
    characteristic_polynomial, from_rows, growth_profile, hyperbolic_balance_bound, is_quasi_unipotent,
    is_quasi_unipotent_exact, norm_power, pair_counting_check, CommutingPair,
};
use ergolab_core::seeding::derive_seed;
use ergolab_core::sequences::{
    b_from_times, c_from_times, check_b_condition, check_b_either, check_band_condition, check_c_condition,
    generate, CountingReport, Orientation, Scale,
};
use ergolab_core::systems::{exact_mean, Cylinder, System};
use ergolab_core::Error;
use serde_json::{json, Value};

use crate::assemble;
use crate::config::*;
use crate::output::{fmt_f, sha256_hex, Chart, Series, Table};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

const DEFAULT_OUT: &str = "ergolab-out";
const QU_TOL: f64 = 1e-9;

/// Why a run stopped.
#[derive(Debug)]
pub enum Failure {
    Validation { code: String, message: String },
    Runtime(Error),
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation { .. } => EXIT_VALIDATION,
            Failure::Runtime(_) | Failure::Io(_) => EXIT_RUNTIME,
        }
    }

    fn code(&self) -> String {
        match self {
            Failure::Validation { code, .. } => code.clone(),
            Failure::Runtime(e) => e.code().to_string(),
            Failure::Io(_) => "io".into(),
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Validation { message, .. } => message.clone(),
            Failure::Runtime(e) => e.to_string(),
            Failure::Io(m) => m.clone(),
        }
    }
}

impl Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.code(), self.message())
    }
}

fn invalid(e: Error) -> Failure {
    Failure::Validation { code: e.code().into(), message: e.to_string() }
}

fn invalid_msg(message: impl Into<String>) -> Failure {
    Failure::Validation { code: "config".into(), message: message.into() }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

/// Tables, charts and summary fields produced by one experiment.
#[derive(Default)]
pub struct Outcome {
    pub tables: Vec<(String, Table)>,
    pub charts: Vec<(String, Chart)>,
    pub results: serde_json::Map<String, Value>,
}

impl Outcome {
    fn table(&mut self, name: &str, t: Table) {
        self.tables.push((name.into(), t));
    }

    fn set(&mut self, key: &str, v: Value) {
        self.results.insert(key.into(), v);
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn f_or_empty(x: Option<f64>) -> String {
    x.map(fmt_f).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// Preparation: everything that can be checked without running.

struct CorrelatePlan {
    system: System,
    queries: Vec<CorrelationQuery>,
    oracle: Oracle,
    samples: usize,
}

struct CumulantsPlan {
    system: System,
    cylinders: Vec<Cylinder>,
    tuples: Vec<Vec<i64>>,
}

struct AveragePlan {
    system: System,
    spec: AverageSpec,
    epsilon: f64,
    delta: f64,
    points: usize,
    reference: Option<u64>,
    check: Option<f64>,
}

struct DyadicPlan {
    system: System,
    spec: AverageSpec,
    points: usize,
    grid: Vec<u64>,
    s_max: u32,
    epsilon: f64,
    sigma: f64,
    decompose: Vec<u64>,
}

struct GrowthPlan {
    matrix: Option<(Vec<Vec<f64>>, Option<Vec<Vec<i64>>>)>,
    n_max: u64,
    pair: Option<(CommutingPair, PairConfig)>,
}

struct CountingPlan {
    cfg: CountingConfig,
    n_max: u64,
    terms: Vec<u64>,
}

enum Plan {
    Correlate(CorrelatePlan),
    Cumulants(CumulantsPlan),
    Average(AveragePlan),
    Dyadic(DyadicPlan),
    Growth(GrowthPlan),
    Counting(CountingPlan),
}

fn positive(name: &str, x: Num) -> Result<f64, Failure> {
    if x.0 > 0.0 && x.0.is_finite() {
        Ok(x.0)
    } else {
        Err(invalid_msg(format!("{name} must be positive, got {}", x.0)))
    }
}

fn build_system(cfg: &SystemConfig) -> Result<System, Failure> {
    assemble::system(cfg).map_err(invalid)
}

fn prepare_correlate(c: &CorrelateConfig) -> Result<Plan, Failure> {
    let system = build_system(&c.system)?;
    let fs = assemble::observables(&system, &c.observables, c.center).map_err(invalid)?;
    if c.tuples.is_empty() {
        return Err(invalid_msg("at least one time tuple is required"));
    }
    if c.samples < 2 {
        return Err(invalid_msg("samples must be at least 2"));
    }
    let queries = c
        .tuples
        .iter()
        .map(|t| {
            let q = CorrelationQuery::new(fs.clone(), t.clone())?;
            q.validate(&system)?;
            Ok(q)
        })
        .collect::<Result<Vec<_>, Error>>()
        .map_err(invalid)?;
    Ok(Plan::Correlate(CorrelatePlan { system, queries, oracle: c.oracle, samples: c.samples }))
}

fn prepare_cumulants(c: &CumulantsConfig) -> Result<Plan, Failure> {
    let system = build_system(&c.system)?;
    if !matches!(system, System::Shift(_)) {
        return Err(invalid(Error::VariantMismatch));
    }
    let fs = assemble::observables(&system, &c.observables, c.center).map_err(invalid)?;
    let cylinders = assemble::cylinders(&fs).map_err(invalid)?;
    if cylinders.len() > MAX_K + 1 {
        return Err(invalid(Error::KTooLarge { k: cylinders.len() - 1, max: MAX_K }));
    }
    if c.tuples.is_empty() || c.tuples.iter().any(|t| t.len() != cylinders.len()) {
        return Err(invalid_msg("every tuple needs one time per observable"));
    }
    if !system.is_invertible() && c.tuples.iter().flatten().any(|&t| t < 0) {
        return Err(invalid(Error::NonInvertible));
    }
    Ok(Plan::Cumulants(CumulantsPlan { system, cylinders, tuples: c.tuples.clone() }))
}

fn average_spec(
    system: &System,
    observables: &[ObservableConfig],
    center: bool,
    multipliers: &[i64],
    sequence: &ergolab_core::sequences::SequenceSpec,
    n_max: u64,
) -> Result<AverageSpec, Failure> {
    let fs = assemble::observables(system, observables, center).map_err(invalid)?;
    let spec = AverageSpec::new(fs, multipliers.to_vec(), sequence.clone(), n_max).map_err(invalid)?;
    spec.validate(system).map_err(invalid)?;
    generate(sequence, n_max).map_err(invalid)?;
    Ok(spec)
}

fn prepare_average(c: &AverageConfig, check: bool) -> Result<Plan, Failure> {
    let system = build_system(&c.system)?;
    let epsilon = positive("epsilon", c.epsilon)?;
    let delta = positive("delta", c.delta)?;
    let mut spec = average_spec(&system, &c.observables, c.center, &c.multipliers, &c.sequence, c.n_max)?;
    if let Some(cp) = &c.checkpoints {
        spec = spec.with_checkpoints(cp.clone()).map_err(invalid)?;
    }
    if c.points == 0 {
        return Err(invalid_msg("points must be at least 1"));
    }
    if check && c.points < 10 {
        return Err(invalid_msg("ratecheck needs at least 10 points"));
    }
    if let Some(r) = c.reference {
        if r < 2 || !spec.checkpoints.contains(&r) {
            return Err(invalid_msg(format!("reference N = {r} is not a checkpoint with N >= 2")));
        }
    }
    if !(0.0..=1.0).contains(&c.max_fraction) {
        return Err(invalid_msg("max_fraction must lie in [0, 1]"));
    }
    Ok(Plan::Average(AveragePlan {
        system,
        spec,
        epsilon,
        delta,
        points: c.points,
        reference: c.reference,
        check: check.then_some(c.max_fraction),
    }))
}

fn prepare_dyadic(c: &DyadicConfig) -> Result<Plan, Failure> {
    let system = build_system(&c.system)?;
    if c.points == 0 {
        return Err(invalid_msg("points must be at least 1"));
    }
    if c.grid.is_empty() || c.grid[0] == 0 || c.grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid_msg("grid must be nonempty, positive and strictly increasing"));
    }
    if c.s_max > 40 {
        return Err(invalid_msg("s_max must be at most 40"));
    }
    if c.decompose.contains(&0) {
        return Err(invalid_msg("decompose values must be positive"));
    }
    let epsilon = positive("epsilon", c.epsilon)?;
    let sigma = positive("sigma", c.sigma)?;
    let n_max = (*c.grid.last().unwrap()).max(1u64 << c.s_max).max(2);
    let spec = average_spec(&system, &c.observables, c.center, &c.multipliers, &c.sequence, n_max)?;
    Ok(Plan::Dyadic(DyadicPlan {
        system,
        spec,
        points: c.points,
        grid: c.grid.clone(),
        s_max: c.s_max,
        epsilon,
        sigma,
        decompose: c.decompose.clone(),
    }))
}

fn prepare_growth(c: &GrowthConfig) -> Result<Plan, Failure> {
    if c.matrix.is_none() && c.pair.is_none() {
        return Err(invalid_msg("growth needs a matrix, a pair, or both"));
    }
    let matrix = match &c.matrix {
        Some(rows) => {
            let m = assemble::real_matrix(rows).map_err(invalid)?;
            let ints = assemble::integer_matrix(&m);
            Some((m, ints))
        }
        None => None,
    };
    let pair = match &c.pair {
        Some(p) => {
            let g = assemble::real_matrix(&p.g).map_err(invalid)?;
            let h = assemble::real_matrix(&p.h).map_err(invalid)?;
            if g.len() != h.len() {
                return Err(invalid(Error::ShapeMismatch("g and h differ in dimension".into())));
            }
            let built = match (assemble::integer_matrix(&g), assemble::integer_matrix(&h)) {
                (Some(gi), Some(hi)) => CommutingPair::from_int(&gi, &hi),
                _ => CommutingPair::new(from_rows(&g).map_err(invalid)?, from_rows(&h).map_err(invalid)?),
            }
            .map_err(invalid)?;
            if p.m_grid.is_empty() || p.k_max == 0 || p.n_max == 0 {
                return Err(invalid_msg("pair needs a nonempty m_grid and positive k_max, n_max"));
            }
            if let Some((_, lo, hi)) = p.balance {
                if lo > hi {
                    return Err(invalid_msg("balance range must satisfy n_from <= n_to"));
                }
            }
            Some((built, p.clone()))
        }
        None => None,
    };
    Ok(Plan::Growth(GrowthPlan { matrix, n_max: c.n_max, pair }))
}

fn prepare_counting(c: &CountingConfig) -> Result<Plan, Failure> {
    if c.k_max == 0 {
        return Err(invalid_msg("k_max must be positive"));
    }
    let two_arg = matches!(c.condition, CountingCondition::BRow | CountingCondition::BColumn | CountingCondition::BEither);
    if two_arg {
        if c.m_grid.is_empty() || c.m_grid.contains(&0) {
            return Err(invalid_msg("b conditions need a nonempty m_grid of positive integers"));
        }
        if matches!(c.scale, ScaleConfig::Power { .. } | ScaleConfig::Constant { .. }) {
            return Err(invalid_msg("power and constant scales are one-argument; use affine or sequence"));
        }
    }
    if c.condition == CountingCondition::Band && (c.s_max.is_none() || c.m_claim.is_none()) {
        return Err(invalid_msg("band condition needs s_max and m_claim"));
    }
    let terms = match &c.scale {
        ScaleConfig::Sequence { sequence, .. } => {
            let reach = c.k_max.max(c.m_grid.iter().copied().max().unwrap_or(0));
            generate(sequence, reach).map_err(invalid)?
        }
        _ => Vec::new(),
    };
    Ok(Plan::Counting(CountingPlan { cfg: c.clone(), n_max: c.n_max.unwrap_or(c.k_max), terms }))
}

fn prepare(exp: &Experiment) -> Result<Plan, Failure> {
    match exp {
        Experiment::Correlate(c) => prepare_correlate(c),
        Experiment::Cumulants(c) => prepare_cumulants(c),
        Experiment::Average(c) => prepare_average(c, false),
        Experiment::Ratecheck(c) => prepare_average(c, true),
        Experiment::Dyadic(c) => prepare_dyadic(c),
        Experiment::Growth(c) => prepare_growth(c),
        Experiment::Counting(c) => prepare_counting(c),
    }
}

// ---------------------------------------------------------------------------
// Derived quantities for `validate`.

fn system_facts(system: &System) -> Value {
    match system {
        System::Shift(s) => json!({"type": "shift", "alphabet": s.alphabet_size(), "invertible": !s.is_one_sided()}),
        System::Torus(t) => json!({"type": "torus", "dim": t.dim(), "precision_bits": t.precision_bits()}),
    }
}

/// Window, cache and memory estimates for a streamed average.
fn stream_facts(system: &System, spec: &AverageSpec, concurrent: usize) -> Result<Value, Error> {
    let terms = generate(&spec.sequence, spec.n_max)?;
    let w = spec.window_for(&terms)?;
    Ok(match system {
        System::Shift(_) => {
            let per_point = 2 * w + 1;
            json!({
                "required_window": w,
                "bytes_per_point": per_point,
                "estimated_memory_bytes": per_point.saturating_mul(concurrent as u64),
            })
        }
        System::Torus(t) => {
            let mut steps = HashSet::new();
            let mut prev = 0u64;
            for &r in &terms {
                for &m in &spec.multipliers {
                    steps.insert(m as i128 * (r as i128 - prev as i128));
                }
                prev = r;
            }
            steps.remove(&0);
            let per_entry = 16 * t.dim() * t.dim() + 64;
            let cache = steps.len() * per_entry;
            json!({
                "required_window": w,
                "precision_bits": t.precision_bits(),
                "cache_entries": steps.len(),
                "cache_bytes": cache,
                "cache_budget_bytes": spec.cache_bytes,
                "within_budget": cache <= spec.cache_bytes,
                "estimated_memory_bytes": cache.saturating_mul(concurrent),
            })
        }
    })
}

fn derived(plan: &Plan, workers: usize) -> Value {
    let r = match plan {
        Plan::Correlate(p) => {
            let spans: Vec<u64> = p
                .queries
                .iter()
                .map(|q| {
                    let lo = q.times.iter().min().unwrap();
                    let hi = q.times.iter().max().unwrap();
                    let w = q.observables.iter().map(|f| f.radius() as u64).max().unwrap_or(0);
                    (hi - lo).unsigned_abs() + 2 * w + 1
                })
                .collect();
            Ok(json!({"system": system_facts(&p.system), "queries": p.queries.len(), "max_span": spans.iter().max()}))
        }
        Plan::Cumulants(p) => Ok(json!({
            "system": system_facts(&p.system),
            "variables": p.cylinders.len(),
            "subsets": 1u64 << p.cylinders.len(),
        })),
        // small ensembles stream one point at a time
        Plan::Average(p) => stream_facts(&p.system, &p.spec, if p.points >= 10 { workers.min(p.points) } else { 1 })
            .map(|s| json!({"system": system_facts(&p.system), "stream": s, "checkpoints": p.spec.checkpoints})),
        Plan::Dyadic(p) => stream_facts(&p.system, &p.spec, workers.min(p.points))
            .map(|s| json!({"system": system_facts(&p.system), "stream": s, "n_max": p.spec.n_max})),
        Plan::Growth(p) => Ok(json!({
            "matrix_dim": p.matrix.as_ref().map(|m| m.0.len()),
            "integer_matrix": p.matrix.as_ref().map(|m| m.1.is_some()),
            "pair_dim": p.pair.as_ref().map(|q| q.0.dim()),
        })),
        Plan::Counting(p) => Ok(json!({"k_max": p.cfg.k_max, "n_max": p.n_max, "grid_len": p.cfg.m_grid.len()})),
    };
    r.unwrap_or_else(|e| json!({"error": {"code": e.code(), "message": e.to_string()}}))
}

/// Full validation without execution. Never fails; problems are in the report.
pub fn validate_report(text: &str, workers: usize) -> (bool, Value) {
    let cfg = match ExperimentConfig::from_json(text) {
        Ok(c) => c,
        Err(e) => return (false, json!({"valid": false, "errors": [{"code": "config", "message": e.0}]})),
    };
    match prepare(&cfg.experiment) {
        Ok(plan) => (
            true,
            json!({"valid": true, "kind": cfg.experiment.kind(), "errors": [], "derived": derived(&plan, workers)}),
        ),
        Err(f) => (
            false,
            json!({"valid": false, "kind": cfg.experiment.kind(), "errors": [{"code": f.code(), "message": f.message()}]}),
        ),
    }
}

// ---------------------------------------------------------------------------
// Execution.

fn run_correlate(p: &CorrelatePlan, seed: u64) -> Result<Outcome, Failure> {
    let k = p.queries[0].observables.len();
    let mut header: Vec<String> = (0..k).map(|i| format!("t_{i}")).collect();
    header.extend(["min_gap", "estimate", "std_error", "exact", "product_of_means", "defect"].map(String::from));
    let mut table = Table::new(header);
    let mut gaps = Vec::new();
    let mut defects = Vec::new();
    let mut exact_count = 0;
    for (i, q) in p.queries.iter().enumerate() {
        let mc_seed = derive_seed(seed, i as u64);
        let d = match p.oracle {
            Oracle::Auto => mixing_defect(&p.system, q, None, McFallback { samples: p.samples, seed: mc_seed })?,
            Oracle::Exact | Oracle::MonteCarlo => {
                let mut pm = 1.0;
                for f in &q.observables {
                    pm *= exact_mean(f, &p.system)?;
                }
                let (c, se) = if p.oracle == Oracle::Exact {
                    (exact_correlation(&p.system, q)?, None)
                } else {
                    let mc = mc_correlation(&p.system, q, p.samples, mc_seed)?;
                    (mc.estimate, Some(mc.std_error))
                };
                ergolab_core::correlations::Defect {
                    correlation: c,
                    product_of_means: pm,
                    defect: (c - pm).abs(),
                    std_error: se,
                }
            }
        };
        exact_count += usize::from(d.is_exact());
        let gap = q.min_gap();
        let mut row: Vec<String> = q.times.iter().map(|t| t.to_string()).collect();
        row.push(gap.map(|g| g.to_string()).unwrap_or_default());
        row.push(fmt_f(d.correlation));
        row.push(f_or_empty(d.std_error));
        row.push(d.is_exact().to_string());
        row.push(fmt_f(d.product_of_means));
        row.push(fmt_f(d.defect));
        table.push(row);
        if let Some(g) = gap {
            gaps.push(g as f64);
            defects.push(d.defect);
        }
    }
    let mut out = Outcome::default();
    out.set("queries", json!(p.queries.len()));
    out.set("exact_queries", json!(exact_count));
    let increasing = gaps.len() == p.queries.len() && gaps.windows(2).all(|w| w[0] < w[1]);
    if gaps.len() >= 4 && increasing {
        out.set(
            "decay_fit",
            match select_model(&gaps, &defects) {
                Ok(s) => to_json(&s),
                Err(e) => json!({"error": {"code": e.code(), "message": e.to_string()}}),
            },
        );
        out.charts.push((
            "defect.svg".into(),
            Chart {
                title: "mixing defect".into(),
                x_label: "min gap".into(),
                y_label: "defect".into(),
                log_x: false,
                log_y: true,
                series: vec![Series { name: "defect".into(), points: gaps.iter().copied().zip(defects).collect() }],
            },
        ));
    }
    out.table("correlations.csv", table);
    Ok(out)
}

fn mask_label(mask: u32, vars: usize) -> String {
    (0..vars).filter(|i| mask >> i & 1 == 1).map(|i| i.to_string()).collect::<Vec<_>>().join(";")
}

fn run_cumulants(p: &CumulantsPlan) -> Result<Outcome, Failure> {
    let System::Shift(shift) = &p.system else { unreachable!("checked during preparation") };
    let vars = p.cylinders.len();
    let mut table = Table::new(["tuple", "times", "subset", "moment", "cumulant"]);
    let mut spreads = Vec::new();
    let mut full = Vec::new();
    let mut per_tuple = Vec::new();
    for (i, t) in p.tuples.iter().enumerate() {
        let c = exact_cumulants(shift, &p.cylinders, t)?;
        let times = t.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        for mask in 1..=c.moments.full_mask() {
            table.push(vec![
                i.to_string(),
                times.clone(),
                mask_label(mask, vars),
                fmt_f(c.moments.get(mask)),
                fmt_f(c.cumulants.get(mask)),
            ]);
        }
        let spread = (t.iter().max().unwrap() - t.iter().min().unwrap()) as f64;
        spreads.push(spread);
        full.push(c.full_cumulant());
        per_tuple.push(json!({"times": t, "full_cumulant": c.full_cumulant()}));
    }
    let mut out = Outcome::default();
    out.set("tuples", Value::Array(per_tuple));
    if vars >= 2 && spreads.len() >= 3 && spreads.windows(2).all(|w| w[0] < w[1]) {
        out.set(
            "decay_fit",
            match fit_decay(DecayModel::Exponential, &spreads, &full) {
                Ok(f) => to_json(&f),
                Err(e) => json!({"error": {"code": e.code(), "message": e.to_string()}}),
            },
        );
    }
    out.table("cumulants.csv", table);
    Ok(out)
}

fn median_of(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn run_average(p: &AveragePlan, seed: u64) -> Result<Outcome, Failure> {
    let target = p.spec.target(&p.system)?;
    let mut out = Outcome::default();
    let runs: Vec<PointRun> = if p.points >= 10 {
        let params =
            EnsembleParams { points: p.points, epsilon: p.epsilon, delta: p.delta, seed, reference: p.reference };
        let summary = ensemble_rate_experiment(&p.system, &p.spec, params)?;
        let mut t = Table::new(["N", "fraction_exceeding", "median", "mean"]);
        for r in &summary.rows {
            t.push(vec![r.n.to_string(), fmt_f(r.fraction_exceeding), fmt_f(r.median), fmt_f(r.mean)]);
        }
        out.table("ensemble.csv", t);
        out.set("reference", json!(summary.reference));
        out.set("ensemble", to_json(&summary.rows));
        out.charts.push((
            "rate.svg".into(),
            Chart {
                title: "ensemble rate statistic".into(),
                x_label: "N".into(),
                y_label: "|A_N - target| / rho(N)".into(),
                log_x: true,
                log_y: true,
                series: vec![
                    Series { name: "median".into(), points: summary.rows.iter().map(|r| (r.n as f64, r.median)).collect() },
                    Series { name: "mean".into(), points: summary.rows.iter().map(|r| (r.n as f64, r.mean)).collect() },
                ],
            },
        ));
        if let Some(max_fraction) = p.check {
            let last = summary.rows.last().expect("at least one statistic row");
            let medians: Vec<f64> = summary.rows.iter().rev().take(3).map(|r| r.median).collect();
            // medians are listed newest first
            let trend = medians.len() == 3 && medians.windows(2).all(|w| w[0] <= w[1]);
            out.set(
                "ratecheck",
                json!({
                    "final_n": last.n,
                    "final_fraction_exceeding": last.fraction_exceeding,
                    "max_fraction": max_fraction,
                    "fraction_pass": last.fraction_exceeding <= max_fraction,
                    "median_nonincreasing_last3": trend,
                    "pass": last.fraction_exceeding <= max_fraction && trend,
                }),
            );
        }
        summary.runs
    } else {
        let reach = p.spec.required_window()?;
        (0..p.points)
            .map(|i| {
                let (s, point) = ensemble_point(&p.system, seed, i, reach);
                let series = ergodic_average_stream(&p.system, &p.spec, &point)?;
                let table = rate_statistic(&series, p.epsilon, p.delta, target, 0)?;
                Ok(PointRun { seed: s, series, statistics: table.rows.iter().map(|r| r.1).collect() })
            })
            .collect::<Result<_, Error>>()?
    };
    let mut t = Table::new(["point", "seed", "N", "A_N", "S_N", "rate_statistic"]);
    for (i, run) in runs.iter().enumerate() {
        let mut stats = run.statistics.iter();
        for row in &run.series.rows {
            let stat = if row.n >= 2 { stats.next().copied() } else { None };
            t.push(vec![
                i.to_string(),
                run.seed.to_string(),
                row.n.to_string(),
                fmt_f(row.average),
                fmt_f(row.centered_sum),
                f_or_empty(stat),
            ]);
        }
    }
    if p.points < 10 {
        out.charts.push((
            "average.svg".into(),
            Chart {
                title: "ergodic average error".into(),
                x_label: "N".into(),
                y_label: "|A_N - target|".into(),
                log_x: true,
                log_y: true,
                series: runs
                    .iter()
                    .enumerate()
                    .map(|(i, r)| Series {
                        name: format!("point {i}"),
                        points: r.series.rows.iter().map(|row| (row.n as f64, (row.average - target).abs())).collect(),
                    })
                    .collect(),
            },
        ));
    }
    let finals: Vec<f64> = runs.iter().filter_map(|r| r.statistics.last().copied()).collect();
    out.set("target", json!(target));
    out.set("points", json!(p.points));
    out.set("rho_final", json!(rho(p.spec.n_max as f64, p.epsilon, p.delta)?));
    if !finals.is_empty() {
        out.set("final_statistic_median", json!(median_of(finals)));
    }
    out.table("average.csv", t);
    Ok(out)
}

fn run_dyadic(p: &DyadicPlan, seed: u64) -> Result<Outcome, Failure> {
    let source = AverageTerms::new(&p.system, &p.spec, p.points, seed)?;
    let mut out = Outcome::default();

    let es = empirical_e_profile(&source, 0, &p.grid)?;
    let mut t = Table::new(["N", "E", "std_error", "points"]);
    for e in &es {
        t.push(vec![e.n.to_string(), fmt_f(e.mean), fmt_f(e.std_error), e.points.to_string()]);
    }
    out.table("e_profile.csv", t);
    let means: Vec<f64> = es.iter().map(|e| e.mean).collect();
    out.set(
        "sigma_fit",
        match sigma_fit(&p.grid, &means) {
            Ok(f) => to_json(&f),
            Err(e) => json!({"error": {"code": e.code(), "message": e.to_string()}}),
        },
    );
    out.charts.push((
        "e_profile.svg".into(),
        Chart {
            title: "second moment of partial sums".into(),
            x_label: "N".into(),
            y_label: "E(0, N)".into(),
            log_x: true,
            log_y: true,
            series: vec![Series { name: "E".into(), points: es.iter().map(|e| (e.n as f64, e.mean)).collect() }],
        },
    ));

    let mut variance = Table::new(["s", "level", "level_mean", "total_mean"]);
    let mut exceptional = Table::new(["s", "threshold", "fraction", "constant", "bound", "pass", "partial_sum"]);
    let mut acc = 0.0;
    let mut all_pass = true;
    for s in 1..=p.s_max {
        let profile = variance_profile(&source, s)?;
        for (level, m) in profile.level_means.iter().enumerate() {
            variance.push(vec![s.to_string(), level.to_string(), fmt_f(*m), fmt_f(profile.total_mean)]);
        }
        let r = exceptional_from_profile(&profile, p.epsilon, p.sigma);
        acc += r.fraction;
        all_pass &= r.pass;
        exceptional.push(vec![
            s.to_string(),
            fmt_f(r.threshold),
            fmt_f(r.fraction),
            fmt_f(r.constant),
            fmt_f(r.bound),
            r.pass.to_string(),
            fmt_f(acc),
        ]);
    }
    if p.s_max > 0 {
        out.table("variance.csv", variance);
        out.table("exceptional.csv", exceptional);
        out.set("exceptional_all_pass", json!(all_pass));
        out.set("exceptional_partial_sum", json!(acc));
    }

    if !p.decompose.is_empty() {
        let mut d = Table::new(["n", "s", "level", "index", "lo", "hi"]);
        for &n in &p.decompose {
            let s = s_of(n);
            for iv in decompose(n, s)? {
                d.push(vec![
                    n.to_string(),
                    s.to_string(),
                    iv.level.to_string(),
                    iv.index.to_string(),
                    iv.lo().to_string(),
                    iv.hi().to_string(),
                ]);
            }
        }
        out.table("decomposition.csv", d);
    }
    out.set("points", json!(p.points));
    Ok(out)
}

fn counting_row(t: &mut Table, label: Option<&str>, r: &CountingReport) {
    let mut row: Vec<String> = label.into_iter().map(String::from).collect();
    row.extend(r.csv_row());
    row.push(fmt_f(r.bound));
    t.push(row);
}

fn counting_table(labelled: bool) -> Table {
    let mut header: Vec<String> = labelled.then(|| "orientation".to_string()).into_iter().collect();
    header.extend(CountingReport::CSV_HEADER.map(String::from));
    header.push("bound".into());
    Table::new(header)
}

fn run_growth(p: &GrowthPlan) -> Result<Outcome, Failure> {
    let mut out = Outcome::default();
    if let Some((rows, ints)) = &p.matrix {
        let m = from_rows(rows)?;
        let mut t = Table::new(["n", "norm", "log_norm"]);
        let mut curve = Vec::new();
        for n in 0..=p.n_max {
            let np = norm_power(&m, n)?;
            t.push(vec![n.to_string(), fmt_f(np.norm), fmt_f(np.log_norm)]);
            if n > 0 {
                curve.push((n as f64, np.norm));
            }
        }
        out.table("growth.csv", t);
        out.charts.push((
            "growth.svg".into(),
            Chart {
                title: "operator norm of powers".into(),
                x_label: "n".into(),
                y_label: "norm".into(),
                log_x: true,
                log_y: true,
                series: vec![Series { name: "norm".into(), points: curve }],
            },
        ));
        let profile = if p.n_max >= 16 {
            match growth_profile(&m, p.n_max) {
                Ok(g) => to_json(&g),
                Err(e) => json!({"error": {"code": e.code(), "message": e.to_string()}}),
            }
        } else {
            json!({"error": {"code": "DomainError", "message": "growth profile needs n_max >= 16"}})
        };
        out.set("profile", profile);
        out.set(
            "quasi_unipotent",
            match is_quasi_unipotent(&m, QU_TOL) {
                Ok(b) => json!(b),
                Err(Error::Indeterminate { .. }) => json!("indeterminate"),
                Err(e) => return Err(e.into()),
            },
        );
        if let Some(a) = ints {
            out.set("quasi_unipotent_exact", json!(is_quasi_unipotent_exact(a)?));
            out.set(
                "characteristic_polynomial",
                json!(characteristic_polynomial(a)?.iter().map(|c| c.to_string()).collect::<Vec<_>>()),
            );
        }
    }
    if let Some((pair, cfg)) = &p.pair {
        let report = pair_counting_check(pair, &cfg.m_grid, cfg.k_max, cfg.n_max, cfg.claim)?;
        let mut t = counting_table(true);
        counting_row(&mut t, Some("row"), &report.row);
        counting_row(&mut t, Some("column"), &report.column);
        out.table("pair_counting.csv", t);
        out.set("pair_counting", to_json(&report));
        if let Some((m, lo, hi)) = cfg.balance {
            let b = hyperbolic_balance_bound(pair, m, lo..=hi)?;
            let mut t = Table::new(["n", "norm", "curve", "floor"]);
            for r in &b.rows {
                t.push(vec![r.n.to_string(), fmt_f(r.norm), fmt_f(r.curve), fmt_f(r.floor)]);
            }
            out.table("balance.csv", t);
            out.charts.push((
                "balance.svg".into(),
                Chart {
                    title: format!("balance bound, m = {m}"),
                    x_label: "n".into(),
                    y_label: "value".into(),
                    log_x: false,
                    log_y: true,
                    series: vec![
                        Series { name: "norm".into(), points: b.rows.iter().map(|r| (r.n as f64, r.norm)).collect() },
                        Series { name: "curve".into(), points: b.rows.iter().map(|r| (r.n as f64, r.curve)).collect() },
                    ],
                },
            ));
            let mut v = to_json(&b);
            if let Value::Object(o) = &mut v {
                o.remove("rows");
            }
            out.set("balance", v);
        }
    }
    Ok(out)
}

fn run_counting(p: &CountingPlan) -> Result<Outcome, Failure> {
    let c = &p.cfg;
    let terms = &p.terms;
    let one: Box<dyn Fn(u64) -> Scale + '_> = match &c.scale {
        ScaleConfig::Power { coefficient, exponent } => {
            let (a, e) = (coefficient.0, exponent.0);
            Box::new(move |k| Scale::from(a * (k as f64).powf(e)))
        }
        ScaleConfig::Affine { a, b: _, offset } => {
            let (a, o) = (a.0, offset.0);
            Box::new(move |k| Scale::from((a * k as f64).abs() + o))
        }
        ScaleConfig::Constant { value } => {
            let v = value.0;
            Box::new(move |_| Scale::from(v))
        }
        ScaleConfig::Sequence { t_i, t_j, same, .. } => Box::new(c_from_times(t_i.0, t_j.0, *same, terms)),
    };
    let two: Option<Box<dyn Fn(u64, u64) -> Scale + '_>> = match &c.scale {
        ScaleConfig::Affine { a, b, offset } => {
            let (a, b, o) = (a.0, b.0, offset.0);
            Some(Box::new(move |m, k| Scale::from((a * k as f64 + b * m as f64).abs() + o)))
        }
        ScaleConfig::Sequence { t_i, t_j, .. } => Some(Box::new(b_from_times(t_i.0, t_j.0, terms))),
        _ => None,
    };
    let report = match c.condition {
        CountingCondition::C => check_c_condition(one, c.k_max, p.n_max, c.claim)?,
        CountingCondition::Band => {
            check_band_condition(one, c.k_max, c.s_max.unwrap_or(0), c.m_claim.unwrap_or(0))?
        }
        cond => {
            let b = two.expect("checked during preparation");
            match cond {
                CountingCondition::BRow => {
                    check_b_condition(b, Orientation::Row, &c.m_grid, c.k_max, p.n_max, c.claim)?
                }
                CountingCondition::BColumn => {
                    check_b_condition(b, Orientation::Column, &c.m_grid, c.k_max, p.n_max, c.claim)?
                }
                _ => check_b_either(b, &c.m_grid, c.k_max, p.n_max, c.claim)?,
            }
        }
    };
    let mut out = Outcome::default();
    let mut t = counting_table(false);
    counting_row(&mut t, None, &report);
    out.table("counting.csv", t);
    out.set("report", to_json(&report));
    Ok(out)
}

fn execute(plan: &Plan, seed: u64) -> Result<Outcome, Failure> {
    match plan {
        Plan::Correlate(p) => run_correlate(p, seed),
        Plan::Cumulants(p) => run_cumulants(p),
        Plan::Average(p) => run_average(p, seed),
        Plan::Dyadic(p) => run_dyadic(p, seed),
        Plan::Growth(p) => run_growth(p),
        Plan::Counting(p) => run_counting(p),
    }
}

// ---------------------------------------------------------------------------
// Artifacts.

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Overrides the config's `output_dir`.
    pub out: Option<PathBuf>,
    /// Worker threads; `None` uses `ERGOLAB_WORKERS` or all cores.
    pub workers: Option<usize>,
    pub svg: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { out: None, workers: None, svg: true }
    }
}

/// What a finished run reports back.
#[derive(Debug)]
pub struct RunReport {
    pub exit_code: i32,
    pub out_dir: Option<PathBuf>,
    pub failure: Option<Failure>,
}

pub fn resolve_workers(requested: Option<usize>) -> usize {
    requested
        .or_else(|| std::env::var("ERGOLAB_WORKERS").ok().and_then(|v| v.trim().parse().ok()))
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn write(dir: &Path, name: &str, bytes: &[u8], files: &mut Vec<Value>) -> Result<(), Failure> {
    fs::write(dir.join(name), bytes).map_err(|e| Failure::Io(format!("{}: {e}", dir.join(name).display())))?;
    files.push(json!({"file": name, "sha256": sha256_hex(bytes), "bytes": bytes.len()}));
    Ok(())
}

fn pretty(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

/// Loads, validates, executes and writes artifacts for the config at `path`.
pub fn run_path(path: &Path, opts: &RunOptions) -> RunReport {
    match fs::read_to_string(path) {
        Ok(text) => run_text(&text, opts),
        Err(e) => RunReport {
            exit_code: EXIT_VALIDATION,
            out_dir: None,
            failure: Some(invalid_msg(format!("{}: {e}", path.display()))),
        },
    }
}

pub fn run_text(text: &str, opts: &RunOptions) -> RunReport {
    let cfg = match ExperimentConfig::from_json(text) {
        Ok(c) => c,
        Err(e) => return RunReport { exit_code: EXIT_VALIDATION, out_dir: None, failure: Some(invalid_msg(e.0)) },
    };
    run_config(&cfg, opts)
}

pub fn run_config(cfg: &ExperimentConfig, opts: &RunOptions) -> RunReport {
    let out_dir = opts
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let workers = resolve_workers(opts.workers);
    let started = Instant::now();

    let result = prepare(&cfg.experiment).and_then(|plan| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Failure::Io(format!("worker pool: {e}")))?;
        pool.install(|| execute(&plan, cfg.seed))
    });

    if let Err(e) = fs::create_dir_all(&out_dir) {
        let failure = Failure::Io(format!("{}: {e}", out_dir.display()));
        return RunReport { exit_code: EXIT_RUNTIME, out_dir: None, failure: Some(failure) };
    }
    let written = write_artifacts(cfg, &out_dir, result, opts.svg, workers, started);
    match written {
        Ok(failure) => RunReport {
            exit_code: failure.as_ref().map_or(EXIT_OK, Failure::exit_code),
            out_dir: Some(out_dir),
            failure,
        },
        Err(f) => RunReport { exit_code: EXIT_RUNTIME, out_dir: Some(out_dir), failure: Some(f) },
    }
}

/// Writes everything and hands back the experiment failure, if any.
fn write_artifacts(
    cfg: &ExperimentConfig,
    dir: &Path,
    result: Result<Outcome, Failure>,
    svg: bool,
    workers: usize,
    started: Instant,
) -> Result<Option<Failure>, Failure> {
    let mut files = Vec::new();
    let mut steps = 0usize;
    let (summary, failure) = match result {
        Ok(outcome) => {
            let mut columns = serde_json::Map::new();
            for (name, table) in &outcome.tables {
                write(dir, name, &table.to_csv(), &mut files)?;
                columns.insert(name.clone(), json!(table.header));
                steps += table.rows.len();
            }
            if svg {
                for (name, chart) in &outcome.charts {
                    write(dir, name, chart.to_svg().as_bytes(), &mut files)?;
                }
            }
            let summary = json!({
                "status": "ok",
                "kind": cfg.experiment.kind(),
                "seed": cfg.seed,
                "columns": columns,
                "results": outcome.results,
            });
            (summary, None)
        }
        Err(f) => {
            let summary = json!({
                "status": "error",
                "kind": cfg.experiment.kind(),
                "seed": cfg.seed,
                "error": {"code": f.code(), "message": f.message(), "exit_code": f.exit_code()},
            });
            (summary, Some(f))
        }
    };
    write(dir, "summary.json", &pretty(&summary), &mut files)?;
    let manifest = json!({
        "tool": "ergolab",
        "version": env!("CARGO_PKG_VERSION"),
        "schema_version": SCHEMA_VERSION,
        "config": cfg,
        "artifacts": files,
        "steps": steps,
        "workers": workers,
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
    });
    fs::write(dir.join("manifest.json"), pretty(&manifest))
        .map_err(|e| Failure::Io(format!("{}: {e}", dir.join("manifest.json").display())))?;
    Ok(failure)
}
