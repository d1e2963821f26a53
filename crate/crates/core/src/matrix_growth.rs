//! Norm growth of matrix powers: quasi-unipotence, Jordan-block growth,
//! the growth dichotomy for a single matrix and the counting conditions
//! produced by a commuting pair `(g, h)` through `b(m, n) = ||h^m g^n||`.

use std::cell::RefCell;
use std::ops::RangeInclusive;

use nalgebra::{Complex, DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sequences::{check_b_condition, CountingReport, Orientation, Scale};
use crate::systems::int_determinant;

/// Eigenvalue moduli closer than this (relatively) count as equal.
const MODULUS_CLUSTER: f64 = 1e-5;

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::DomainError("matrix must be square and nonempty".into()));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

pub fn from_int_rows(rows: &[Vec<i64>]) -> Result<DMatrix<f64>> {
    from_rows(&rows.iter().map(|r| r.iter().map(|&x| x as f64).collect()).collect::<Vec<_>>())
}

fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    m.clone().complex_eigenvalues().iter().copied().collect()
}

fn check_invertible(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DomainError("matrix must be square".into()));
    }
    let scale = m.amax().max(1.0).powi(m.nrows() as i32);
    if m.clone().lu().determinant().abs() <= 1e-12 * scale {
        return Err(Error::Singular);
    }
    Ok(())
}

/// All eigenvalues of modulus 1 within `tol`. Moduli in the band
/// `(tol, sqrt(tol)]` around 1 are too close to call (a defective
/// eigenvalue is only resolved to about the square root of the working
/// precision) and give `Indeterminate`.
pub fn is_quasi_unipotent(m: &DMatrix<f64>, tol: f64) -> Result<bool> {
    check_invertible(m)?;
    let mut unit = true;
    for z in eigenvalues(m) {
        let gap = (z.norm() - 1.0).abs();
        if gap <= tol {
            continue;
        }
        if gap <= tol.sqrt() {
            return Err(Error::Indeterminate { modulus: z.norm() });
        }
        unit = false;
    }
    Ok(unit)
}

type Poly = Vec<i128>;

/// Characteristic polynomial `det(xI - A)`, lowest degree first, by
/// Faddeev-LeVerrier in exact integer arithmetic.
pub fn characteristic_polynomial(a: &[Vec<i64>]) -> Result<Poly> {
    let d = a.len();
    if d == 0 || a.iter().any(|r| r.len() != d) {
        return Err(Error::DomainError("matrix must be square and nonempty".into()));
    }
    let overflow = || Error::DomainError("characteristic polynomial overflows i128".into());
    let a: Vec<Vec<i128>> = a.iter().map(|r| r.iter().map(|&x| x as i128).collect()).collect();
    let mut coeffs = vec![0i128; d + 1];
    coeffs[d] = 1;
    let mut mk = vec![vec![0i128; d]; d];
    for k in 1..=d {
        // M_k = A M_{k-1} + c_{d-k+1} I
        let mut next = vec![vec![0i128; d]; d];
        for i in 0..d {
            for j in 0..d {
                let mut acc = if i == j { coeffs[d - k + 1] } else { 0 };
                for l in 0..d {
                    acc = a[i][l].checked_mul(mk[l][j]).and_then(|p| acc.checked_add(p)).ok_or_else(overflow)?;
                }
                next[i][j] = acc;
            }
        }
        mk = next;
        // c_{d-k} = -tr(A M_k) / k
        let mut tr = 0i128;
        for i in 0..d {
            for l in 0..d {
                tr = a[i][l].checked_mul(mk[l][i]).and_then(|p| tr.checked_add(p)).ok_or_else(overflow)?;
            }
        }
        coeffs[d - k] = -tr / k as i128;
    }
    Ok(coeffs)
}

fn trim(p: &mut Poly) {
    while p.len() > 1 && *p.last().unwrap() == 0 {
        p.pop();
    }
}

/// Exact division by a monic polynomial; `None` if the remainder is nonzero.
fn divide_exact(num: &Poly, den: &Poly) -> Option<Poly> {
    let dn = den.len() - 1;
    if num.len() - 1 < dn {
        return None;
    }
    let mut rem = num.clone();
    let mut quot = vec![0i128; num.len() - dn];
    for shift in (0..quot.len()).rev() {
        let c = rem[shift + dn];
        quot[shift] = c;
        for (j, &dc) in den.iter().enumerate() {
            rem[shift + j] = rem[shift + j].checked_sub(c.checked_mul(dc)?)?;
        }
    }
    if rem.iter().all(|&x| x == 0) {
        let mut q = quot;
        trim(&mut q);
        Some(q)
    } else {
        None
    }
}

/// `Phi_1 .. Phi_max` (index 0 unused).
fn cyclotomics(max: usize) -> Vec<Poly> {
    let mut out: Vec<Poly> = vec![vec![1]];
    for n in 1..=max {
        let mut p = vec![0i128; n + 1];
        p[0] = -1;
        p[n] = 1;
        for d in 1..n {
            if n % d == 0 {
                p = divide_exact(&p, &out[d]).expect("x^n - 1 is divisible by Phi_d");
            }
        }
        out.push(p);
    }
    out
}

/// Kronecker's criterion: an integer matrix is quasi-unipotent iff its
/// characteristic polynomial is a product of cyclotomic polynomials.
pub fn is_quasi_unipotent_exact(a: &[Vec<i64>]) -> Result<bool> {
    let mut p = characteristic_polynomial(a)?;
    if p[0] == 0 {
        return Err(Error::Singular);
    }
    let d = a.len();
    // phi(n) <= d forces n <= 2 d^2
    let table = cyclotomics((2 * d * d).max(6));
    for phi in table.iter().skip(1) {
        while let Some(q) = divide_exact(&p, phi) {
            p = q;
        }
        if p.len() == 1 {
            break;
        }
    }
    Ok(p == vec![1])
}

/// A matrix scaled by `exp(log_scale)`.
#[derive(Debug, Clone)]
struct Scaled {
    m: DMatrix<f64>,
    log_scale: f64,
}

impl Scaled {
    fn new(m: DMatrix<f64>) -> Self {
        Scaled { m, log_scale: 0.0 }.normalized()
    }

    fn normalized(mut self) -> Self {
        let s = self.m.amax();
        if s > 0.0 && s.is_finite() {
            self.m /= s;
            self.log_scale += s.ln();
        }
        self
    }

    fn mul(&self, other: &Scaled) -> Scaled {
        Scaled { m: &self.m * &other.m, log_scale: self.log_scale + other.log_scale }.normalized()
    }

    fn log_norm(&self) -> f64 {
        spectral_norm(&self.m).ln() + self.log_scale
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().max()
}

fn scaled_pow(m: &DMatrix<f64>, mut n: u64) -> Scaled {
    let d = m.nrows();
    let mut result = Scaled { m: DMatrix::identity(d, d), log_scale: 0.0 };
    let mut base = Scaled::new(m.clone());
    while n > 0 {
        if n & 1 == 1 {
            result = result.mul(&base);
        }
        n >>= 1;
        if n > 0 {
            base = base.mul(&base);
        }
    }
    result
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormPower {
    /// `||M^n||_2`; infinite when it leaves the float range.
    pub norm: f64,
    pub log_norm: f64,
}

/// Spectral norm of `M^n` by square-and-multiply with the running scale
/// factored out at every step.
pub fn norm_power(m: &DMatrix<f64>, n: u64) -> Result<NormPower> {
    if !m.is_square() {
        return Err(Error::DomainError("matrix must be square".into()));
    }
    let log_norm = scaled_pow(m, n).log_norm();
    Ok(NormPower { norm: log_norm.exp(), log_norm })
}

/// `|| [[s^n, n s^{n-1}], [0, s^n]] ||` for `|s| = 1`, which equals the
/// norm of `[[1, n], [0, 1]]`, namely `n/2 + sqrt(n^2/4 + 1)`.
pub fn jordan_block_growth(s: Complex<f64>, n: u64) -> Result<f64> {
    if (s.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::DomainError(format!("|s| = {} is not 1", s.norm())));
    }
    let h = n as f64 / 2.0;
    Ok(h + (h * h + 1.0).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthProfile {
    /// `e^a` from the fit `ln ||M^n|| = c + a n + p ln n`.
    pub base: f64,
    /// `round(p)`.
    pub poly_degree: u32,
    pub residual: f64,
    pub fitted_exponent: f64,
    /// Largest eigenvalue modulus.
    pub spectral_radius: f64,
    /// Largest Jordan block on the top-modulus eigenvalues.
    pub jordan_index: usize,
}

/// Eigenvalues grouped by proximity, each group replaced by its mean
/// (the mean of a perturbed defective eigenvalue is far more accurate
/// than its members).
fn eigen_clusters(m: &DMatrix<f64>) -> Vec<(Complex<f64>, usize)> {
    let scale = m.amax().max(1.0);
    let mut clusters: Vec<(Complex<f64>, usize)> = Vec::new();
    let tol = 1e-5 * scale;
    for z in eigenvalues(m) {
        match clusters.iter_mut().find(|(c, k)| (c / *k as f64 - z).norm() <= tol) {
            Some((c, k)) => {
                *c += z;
                *k += 1;
            }
            None => clusters.push((z, 1)),
        }
    }
    clusters.into_iter().map(|(c, k)| (c / k as f64, k)).collect()
}

fn numerical_rank(m: &DMatrix<Complex<f64>>, scale: f64) -> usize {
    let sv = m.clone().singular_values();
    sv.iter().filter(|&&s| s > 1e-7 * scale).count()
}

/// Size of the largest Jordan block for `lambda`, from the ranks of
/// `(M - lambda I)^j`.
fn jordan_index(m: &DMatrix<f64>, lambda: Complex<f64>, multiplicity: usize) -> usize {
    let d = m.nrows();
    let mc: DMatrix<Complex<f64>> = m.map(|x| Complex::new(x, 0.0));
    let shifted = mc - DMatrix::<Complex<f64>>::identity(d, d) * lambda;
    let scale = shifted.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let mut power = shifted.clone();
    let mut prev = numerical_rank(&power, scale);
    for j in 1..multiplicity.max(1) {
        power = &power * &shifted;
        let rank = numerical_rank(&power, scale.powi(j as i32 + 1));
        if rank == prev {
            return j;
        }
        prev = rank;
    }
    multiplicity.max(1)
}

/// Fits `ln ||M^n|| = c + a n + p ln n` over `n_max/4 <= n <= n_max` and
/// cross-checks `e^a` against the spectral radius (1%) and `round(p)`
/// against the Jordan structure on the top-modulus eigenvalues.
pub fn growth_profile(m: &DMatrix<f64>, n_max: u64) -> Result<GrowthProfile> {
    if n_max < 16 {
        return Err(Error::DomainError("growth_profile needs n_max >= 16".into()));
    }
    check_invertible(m)?;
    let ns: Vec<u64> = (n_max / 4..=n_max).collect();
    let mut current = scaled_pow(m, ns[0]);
    let base_m = Scaled::new(m.clone());
    let mut ys = Vec::with_capacity(ns.len());
    for (i, _) in ns.iter().enumerate() {
        if i > 0 {
            current = current.mul(&base_m);
        }
        ys.push(current.log_norm());
    }
    let design = DMatrix::from_fn(ns.len(), 3, |i, j| match j {
        0 => 1.0,
        1 => ns[i] as f64,
        _ => (ns[i] as f64).ln(),
    });
    let y = DVector::from_vec(ys);
    let coef = design
        .clone()
        .svd(true, true)
        .solve(&y, 1e-14)
        .map_err(|e| Error::FitInconsistent(format!("least squares failed: {e}")))?;
    let residual = (&design * &coef - &y).norm_squared();
    let (a, p) = (coef[1], coef[2]);
    let base = a.exp();
    let poly_degree = p.round().max(0.0) as u32;

    let clusters = eigen_clusters(m);
    let radius = clusters.iter().map(|(z, _)| z.norm()).fold(0.0, f64::max);
    let top = clusters
        .iter()
        .filter(|(z, _)| (z.norm() - radius).abs() <= MODULUS_CLUSTER * radius)
        .map(|&(z, k)| jordan_index(m, z, k))
        .max()
        .unwrap_or(1);

    if (base - radius).abs() > 0.01 * radius {
        return Err(Error::FitInconsistent(format!("fitted base {base} vs spectral radius {radius}")));
    }
    if poly_degree as usize + 1 != top {
        return Err(Error::FitInconsistent(format!(
            "fitted degree {poly_degree} (p = {p}) vs Jordan index {top} on the top eigenvalues"
        )));
    }
    Ok(GrowthProfile { base, poly_degree, residual, fitted_exponent: p, spectral_radius: radius, jordan_index: top })
}

/// Two commuting invertible matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct CommutingPair {
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
    /// `||gh - hg||_max` (exactly 0 for integer input that passes).
    pub deviation: f64,
}

impl CommutingPair {
    pub fn new(g: DMatrix<f64>, h: DMatrix<f64>) -> Result<Self> {
        if g.shape() != h.shape() {
            return Err(Error::DomainError("g and h differ in shape".into()));
        }
        check_invertible(&g)?;
        check_invertible(&h)?;
        let deviation = (&g * &h - &h * &g).amax();
        if deviation > 1e-10 {
            return Err(Error::NotCommuting { deviation });
        }
        Ok(Self { g, h, deviation })
    }

    /// Integer input: commutation and invertibility checked exactly.
    pub fn from_int(g: &[Vec<i64>], h: &[Vec<i64>]) -> Result<Self> {
        let (gf, hf) = (from_int_rows(g)?, from_int_rows(h)?);
        if gf.shape() != hf.shape() {
            return Err(Error::DomainError("g and h differ in shape".into()));
        }
        let d = g.len();
        let mut deviation = 0i128;
        for i in 0..d {
            for j in 0..d {
                let gh: i128 = (0..d).map(|k| g[i][k] as i128 * h[k][j] as i128).sum();
                let hg: i128 = (0..d).map(|k| h[i][k] as i128 * g[k][j] as i128).sum();
                deviation = deviation.max((gh - hg).abs());
            }
        }
        if deviation != 0 {
            return Err(Error::NotCommuting { deviation: deviation as f64 });
        }
        if int_determinant(g) == 0 || int_determinant(h) == 0 {
            return Err(Error::Singular);
        }
        Ok(Self { g: gf, h: hf, deviation: 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }
}

/// Lazily extended tables of scaled powers `h^m` and `g^n`.
struct PowerTables<'a> {
    pair: &'a CommutingPair,
    h: RefCell<Vec<Scaled>>,
    g: RefCell<Vec<Scaled>>,
}

impl<'a> PowerTables<'a> {
    fn new(pair: &'a CommutingPair) -> Self {
        let d = pair.dim();
        let id = Scaled { m: DMatrix::identity(d, d), log_scale: 0.0 };
        Self { pair, h: RefCell::new(vec![id.clone()]), g: RefCell::new(vec![id]) }
    }

    fn extend(table: &RefCell<Vec<Scaled>>, base: &DMatrix<f64>, n: usize) {
        let mut t = table.borrow_mut();
        let step = Scaled::new(base.clone());
        while t.len() <= n {
            let next = t.last().unwrap().mul(&step);
            t.push(next);
        }
    }

    /// `ln ||h^m g^n||`.
    fn log_norm(&self, m: u64, n: u64) -> f64 {
        Self::extend(&self.h, &self.pair.h, m as usize);
        Self::extend(&self.g, &self.pair.g, n as usize);
        let h = self.h.borrow();
        let g = self.g.borrow();
        h[m as usize].mul(&g[n as usize]).log_norm()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairCountingReport {
    pub row: CountingReport,
    pub column: CountingReport,
    pub passing: Option<Orientation>,
}

/// `b(m, n) = ||h^m g^n||` checked in both orientations on the `m` grid.
pub fn pair_counting_check(
    pair: &CommutingPair,
    m_grid: &[u64],
    k_max: u64,
    n_max: u64,
    claim: Option<f64>,
) -> Result<PairCountingReport> {
    let tables = PowerTables::new(pair);
    // norms of matrices with |det| >= 1 are >= 1; clamp rounding below 1
    let b = |m: u64, n: u64| Scale::Finite(tables.log_norm(m, n).exp().max(1.0));
    let row = check_b_condition(b, Orientation::Row, m_grid, k_max, n_max, claim)?;
    let column = check_b_condition(b, Orientation::Column, m_grid, k_max, n_max, claim)?;
    let passing = if row.pass {
        Some(Orientation::Row)
    } else if column.pass {
        Some(Orientation::Column)
    } else {
        None
    };
    Ok(PairCountingReport { row, column, passing })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BalanceRow {
    pub n: u64,
    pub norm: f64,
    /// `(|s_+^n t_+^m| + |s_-^n t_-^m|) / 2`.
    pub curve: f64,
    /// `min(|s_+|, |t_-|)^{|n - k| - 1} / 2`.
    pub floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceReport {
    pub m: u64,
    /// Threshold index `k(m) = ceil(m ln(1/|t_+|) / ln|s_+|)`.
    pub k: u64,
    pub s_plus: f64,
    pub t_plus: f64,
    pub s_minus: f64,
    pub t_minus: f64,
    /// `|det g|` and `|det h|`; the floor assumes both are 1.
    pub det_g: f64,
    pub det_h: f64,
    pub rows: Vec<BalanceRow>,
    /// `norm >= curve` everywhere.
    pub curve_holds: bool,
    /// `curve >= floor` everywhere.
    pub floor_holds: bool,
}

/// Simultaneous real eigenpairs `(s, t, v)` with `g v = s v`, `h v = t v`.
fn simultaneous_eigenpairs(pair: &CommutingPair) -> Result<Vec<(f64, f64)>> {
    let d = pair.dim();
    let eig = eigenvalues(&pair.g);
    let mut out: Vec<(f64, f64)> = Vec::new();
    for z in eig {
        if z.im.abs() > 1e-9 * z.norm().max(1.0) {
            return Err(Error::HypothesisFailed("g has non-real eigenvalues".into()));
        }
        let s = z.re;
        if out.iter().any(|&(s0, _)| (s0 - s).abs() <= 1e-9 * s.abs().max(1.0)) {
            return Err(Error::HypothesisFailed("g has a repeated eigenvalue".into()));
        }
        let shifted = &pair.g - DMatrix::identity(d, d) * s;
        let svd = shifted.svd(false, true);
        let vt = svd.v_t.expect("requested");
        let idx = svd.singular_values.imin();
        let v: DVector<f64> = vt.row(idx).transpose();
        let hv = &pair.h * &v;
        let t = hv.dot(&v) / v.norm_squared();
        if (&hv - &v * t).norm() > 1e-8 * hv.norm().max(1.0) {
            return Err(Error::HypothesisFailed("eigenvector of g is not an eigenvector of h".into()));
        }
        out.push((s, t));
    }
    Ok(out)
}

/// Lower bound for `||h^m g^n||` along `n_range` from the most expanded
/// and most contracted simultaneous eigenvectors of `g`.
pub fn hyperbolic_balance_bound(pair: &CommutingPair, m: u64, n_range: RangeInclusive<u64>) -> Result<BalanceReport> {
    if is_quasi_unipotent(&pair.g, 1e-9).unwrap_or(true) || is_quasi_unipotent(&pair.h, 1e-9).unwrap_or(true) {
        return Err(Error::HypothesisFailed("g and h must both be non-quasi-unipotent".into()));
    }
    let pairs = simultaneous_eigenpairs(pair)?;
    for &(s, t) in &pairs {
        let (s, t) = (s.abs(), t.abs());
        if (s > 1.0 && t >= 1.0) || (s < 1.0 && t <= 1.0) {
            return Err(Error::HypothesisFailed(format!(
                "eigenvector with |s| = {s}, |t| = {t} is not expanded by one map and contracted by the other"
            )));
        }
    }
    let (s_plus, t_plus) = pairs.iter().copied().max_by(|a, b| a.0.abs().total_cmp(&b.0.abs())).unwrap();
    let (s_minus, t_minus) = pairs.iter().copied().min_by(|a, b| a.0.abs().total_cmp(&b.0.abs())).unwrap();
    let (sp, tp, sm, tm) = (s_plus.abs(), t_plus.abs(), s_minus.abs(), t_minus.abs());
    let k = (m as f64 * (1.0 / tp).ln() / sp.ln() - 1e-9).ceil().max(0.0) as u64;
    let floor_base = sp.min(tm);
    let tables = PowerTables::new(pair);
    let mut rows = Vec::new();
    for n in n_range {
        let norm = tables.log_norm(m, n).exp();
        let curve = 0.5 * ((n as f64 * sp.ln() + m as f64 * tp.ln()).exp() + (n as f64 * sm.ln() + m as f64 * tm.ln()).exp());
        let gap = (n as f64 - k as f64).abs();
        let floor = 0.5 * floor_base.powf(gap - 1.0);
        rows.push(BalanceRow { n, norm, curve, floor });
    }
    let tol = 1e-9;
    let curve_holds = rows.iter().all(|r| r.norm >= r.curve * (1.0 - tol));
    let floor_holds = rows.iter().all(|r| r.curve >= r.floor * (1.0 - tol));
    Ok(BalanceReport {
        m,
        k,
        s_plus,
        t_plus,
        s_minus,
        t_minus,
        det_g: pair.g.clone().lu().determinant().abs(),
        det_h: pair.h.clone().lu().determinant().abs(),
        rows,
        curve_holds,
        floor_holds,
    })
}
