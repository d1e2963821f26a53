//! Cylinder functions on shifts and trigonometric polynomials on tori.

use std::collections::HashSet;
use std::f64::consts::TAU;

use serde::Serialize;

use super::shift::{ShiftPoint, ShiftSystem};
use super::torus::TorusPoint;
use crate::error::{Error, Result};

/// Largest table a cylinder observable may carry.
const MAX_TABLE: usize = 1 << 22;

/// Locally constant function depending on the symbols at offsets
/// `offset, offset+1, .., offset+length-1` from the origin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cylinder {
    alphabet: usize,
    offset: i64,
    length: usize,
    /// Values indexed by word code, oldest symbol most significant.
    /// Entries of inadmissible words are 0 and never read.
    table: Vec<f64>,
    admissible: Vec<bool>,
}

impl Cylinder {
    /// Tabulates `f` on every admissible word of the given window.
    pub fn from_fn<F>(system: &ShiftSystem, offset: i64, length: usize, f: F) -> Result<Self>
    where
        F: Fn(&[usize]) -> f64,
    {
        let m = system.alphabet_size();
        let size = table_size(m, length)?;
        let mut table = vec![0.0; size];
        let mut admissible = vec![false; size];
        let mut word = vec![0usize; length];
        for code in 0..size {
            decode(code, m, &mut word);
            if system.word_admissible(&word) {
                let v = f(&word);
                if !v.is_finite() {
                    return Err(Error::InvalidObservable(format!("non-finite value on word {word:?}")));
                }
                table[code] = v;
                admissible[code] = true;
            }
        }
        Ok(Self { alphabet: m, offset, length, table, admissible })
    }

    /// Symmetric window of radius `w` (offsets `-w..=w`).
    pub fn with_radius<F>(system: &ShiftSystem, radius: usize, f: F) -> Result<Self>
    where
        F: Fn(&[usize]) -> f64,
    {
        Self::from_fn(system, -(radius as i64), 2 * radius + 1, f)
    }

    /// Builds the table from explicit `(word, value)` entries; every
    /// admissible word must be listed exactly once.
    pub fn from_entries<I>(system: &ShiftSystem, offset: i64, length: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<usize>, f64)>,
    {
        let m = system.alphabet_size();
        let size = table_size(m, length)?;
        let mut table = vec![0.0; size];
        let mut seen = vec![false; size];
        for (word, value) in entries {
            if word.len() != length {
                return Err(Error::InvalidObservable(format!("word {word:?} has length != {length}")));
            }
            if !system.word_admissible(&word) {
                return Err(Error::InvalidObservable(format!("word {word:?} is not admissible")));
            }
            if !value.is_finite() {
                return Err(Error::InvalidObservable(format!("non-finite value on word {word:?}")));
            }
            let code = encode(&word, m);
            if seen[code] {
                return Err(Error::InvalidObservable(format!("word {word:?} listed twice")));
            }
            seen[code] = true;
            table[code] = value;
        }
        let mut word = vec![0usize; length];
        for (code, &s) in seen.iter().enumerate() {
            decode(code, m, &mut word);
            if !s && system.word_admissible(&word) {
                return Err(Error::InvalidObservable(format!("no value for admissible word {word:?}")));
            }
        }
        Ok(Self { alphabet: m, offset, length, table, admissible: seen })
    }

    pub fn constant(system: &ShiftSystem, value: f64) -> Self {
        Self::from_fn(system, 0, 1, |_| value).expect("length-1 table")
    }

    /// `1{x_at = symbol}`.
    pub fn indicator(system: &ShiftSystem, symbol: usize, at: i64) -> Self {
        Self::from_fn(system, at, 1, |w| if w[0] == symbol { 1.0 } else { 0.0 }).expect("length-1 table")
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    /// Smallest `w` with the window inside `[-w, w]`.
    pub fn radius(&self) -> usize {
        let last = self.offset + self.length as i64 - 1;
        self.offset.unsigned_abs().max(last.unsigned_abs()) as usize
    }

    /// Value on a word given by its code; `None` if the word is inadmissible.
    pub fn value_by_code(&self, code: usize) -> Option<f64> {
        self.admissible[code].then(|| self.table[code])
    }

    pub fn value(&self, word: &[usize]) -> Option<f64> {
        if word.len() != self.length || word.iter().any(|&s| s >= self.alphabet) {
            return None;
        }
        self.value_by_code(encode(word, self.alphabet))
    }

    pub fn sup_norm(&self) -> f64 {
        self.table
            .iter()
            .zip(&self.admissible)
            .filter(|(_, &a)| a)
            .fold(0.0, |acc, (v, _)| acc.max(v.abs()))
    }

    pub fn eval(&self, point: &ShiftPoint) -> Result<f64> {
        self.eval_shifted(point, 0)
    }

    /// `f(sigma^n x)` without building the shifted point.
    pub fn eval_shifted(&self, point: &ShiftPoint, n: i64) -> Result<f64> {
        let mut code = 0usize;
        for j in 0..self.length as i64 {
            code = code * self.alphabet + point.symbol(n + self.offset + j)?;
        }
        self.value_by_code(code)
            .ok_or_else(|| Error::InvalidObservable("point carries an inadmissible word".into()))
    }

    /// Same table recentred: `f - c`.
    pub fn minus(&self, c: f64) -> Self {
        let mut out = self.clone();
        for (v, &a) in out.table.iter_mut().zip(&self.admissible) {
            if a {
                *v -= c;
            }
        }
        out
    }

    /// Exact integral against the system's Markov measure.
    pub fn exact_mean(&self, system: &ShiftSystem) -> f64 {
        let m = self.alphabet;
        let mut word = vec![0usize; self.length];
        let mut total = 0.0;
        for code in 0..self.table.len() {
            if !self.admissible[code] {
                continue;
            }
            decode(code, m, &mut word);
            total += system.word_probability(&word) * self.table[code];
        }
        total
    }
}

fn table_size(m: usize, length: usize) -> Result<usize> {
    if length == 0 {
        return Err(Error::InvalidObservable("cylinder window must be non-empty".into()));
    }
    m.checked_pow(length as u32)
        .filter(|&s| s <= MAX_TABLE)
        .ok_or_else(|| Error::InvalidObservable(format!("table of {m}^{length} words is too large")))
}

pub(crate) fn encode(word: &[usize], m: usize) -> usize {
    word.iter().fold(0, |acc, &s| acc * m + s)
}

pub(crate) fn decode(mut code: usize, m: usize, word: &mut [usize]) {
    for slot in word.iter_mut().rev() {
        *slot = code % m;
        code /= m;
    }
}

/// One term `a cos(2 pi <k,x>) + b sin(2 pi <k,x>)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrigTerm {
    pub freq: Vec<i64>,
    pub cos: f64,
    pub sin: f64,
}

/// Real trigonometric polynomial on `R^d / Z^d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrigPolynomial {
    dim: usize,
    terms: Vec<TrigTerm>,
}

impl TrigPolynomial {
    pub fn new(dim: usize, terms: Vec<TrigTerm>) -> Result<Self> {
        let mut seen = HashSet::new();
        for t in &terms {
            if t.freq.len() != dim {
                return Err(Error::InvalidObservable(format!("frequency {:?} is not {dim}-dimensional", t.freq)));
            }
            if !t.cos.is_finite() || !t.sin.is_finite() {
                return Err(Error::InvalidObservable("non-finite coefficient".into()));
            }
            if !seen.insert(t.freq.clone()) {
                return Err(Error::InvalidObservable(format!("frequency {:?} repeated", t.freq)));
            }
        }
        Ok(Self { dim, terms })
    }

    pub fn cosine(freq: Vec<i64>, coeff: f64) -> Self {
        let dim = freq.len();
        Self::new(dim, vec![TrigTerm { freq, cos: coeff, sin: 0.0 }]).expect("single term")
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        Self::cosine(vec![0; dim], value)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[TrigTerm] {
        &self.terms
    }

    pub fn eval(&self, point: &TorusPoint) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let phase = TAU * point.phase(&t.freq);
                t.cos * phase.cos() + t.sin * phase.sin()
            })
            .sum()
    }

    /// Haar mean: the cosine coefficient of the zero frequency.
    pub fn exact_mean(&self) -> f64 {
        self.terms.iter().filter(|t| t.freq.iter().all(|&k| k == 0)).map(|t| t.cos).sum()
    }

    pub fn sup_norm_bound(&self) -> f64 {
        self.terms.iter().map(|t| t.cos.hypot(t.sin)).sum()
    }

    /// `f - c`, folding `c` into the zero frequency.
    pub fn minus(&self, c: f64) -> Self {
        let mut terms = self.terms.clone();
        match terms.iter_mut().find(|t| t.freq.iter().all(|&k| k == 0)) {
            Some(t) => t.cos -= c,
            None => terms.push(TrigTerm { freq: vec![0; self.dim], cos: -c, sin: 0.0 }),
        }
        Self { dim: self.dim, terms }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::shift::build_shift;

    fn markov() -> ShiftSystem {
        build_shift(vec![vec![1, 1], vec![1, 1]], vec![vec![0.9, 0.1], vec![0.5, 0.5]]).unwrap()
    }

    #[test]
    fn code_roundtrip() {
        let mut w = vec![0; 3];
        decode(encode(&[2, 0, 1], 3), 3, &mut w);
        assert_eq!(w, vec![2, 0, 1]);
    }

    #[test]
    fn table_lookup() {
        let s = markov();
        // symbols 1, 2 of the 1-based labelling are 0, 1 here
        let f = Cylinder::from_entries(&s, 0, 1, vec![(vec![0], 1.0), (vec![1], 0.0)]).unwrap();
        let p = ShiftPoint::from_symbols(vec![0, 1, 0], -1);
        assert_eq!(f.eval(&p).unwrap(), 0.0);
        assert_eq!(f.eval(&p.shift_apply(1)).unwrap(), 1.0);
    }

    #[test]
    fn missing_or_bad_entries_are_rejected() {
        let s = markov();
        assert!(Cylinder::from_entries(&s, 0, 1, vec![(vec![0], 1.0)]).is_err());
        assert!(Cylinder::from_entries(&s, 0, 1, vec![(vec![0], 1.0), (vec![1], f64::NAN)]).is_err());
        let golden = build_shift(vec![vec![1, 1], vec![1, 0]], vec![vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        assert!(Cylinder::from_entries(&golden, 0, 2, vec![(vec![1, 1], 1.0)]).is_err());
    }

    #[test]
    fn constant_cylinder() {
        let s = markov();
        let f = Cylinder::constant(&s, 2.5);
        let p = ShiftPoint::from_symbols(vec![1], 0);
        assert_eq!(f.eval(&p).unwrap(), 2.5);
        assert!((f.exact_mean(&s) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn exact_means() {
        let s = markov();
        assert!((Cylinder::indicator(&s, 0, 0).exact_mean(&s) - 5.0 / 6.0).abs() < 1e-14);
        let pair = Cylinder::from_fn(&s, 0, 2, |w| if w == [0, 0] { 1.0 } else { 0.0 }).unwrap();
        assert!((pair.exact_mean(&s) - 0.75).abs() < 1e-14);
    }

    #[test]
    fn product_of_disjoint_indicators_factorizes_under_bernoulli() {
        let s = ShiftSystem::bernoulli(&[0.3, 0.7]).unwrap();
        let f = Cylinder::from_fn(&s, 0, 3, |w| if w[0] == 1 && w[2] == 0 { 1.0 } else { 0.0 }).unwrap();
        assert!((f.exact_mean(&s) - 0.7 * 0.3).abs() < 1e-15);
    }

    #[test]
    fn trig_means_and_eval() {
        let one = TrigPolynomial::constant(2, 1.0);
        let cat = crate::systems::torus::TorusAutomorphism::cat_map(64);
        let mut rng = crate::seeding::task_rng(1, 1);
        let p = cat.sample_point(&mut rng);
        assert!((one.eval(&p) - 1.0).abs() < 1e-15);
        let f = TrigPolynomial::new(
            2,
            vec![TrigTerm { freq: vec![1, 0], cos: 1.0, sin: 2.0 }, TrigTerm { freq: vec![0, 3], cos: 0.5, sin: 0.0 }],
        )
        .unwrap();
        assert_eq!(f.exact_mean(), 0.0);
        assert!(TrigPolynomial::new(2, vec![TrigTerm { freq: vec![1, 0], cos: 1.0, sin: 0.0 }; 2]).is_err());
    }

    #[test]
    fn radius_of_one_sided_window() {
        let s = markov();
        let f = Cylinder::from_fn(&s, 0, 4, |_| 0.0).unwrap();
        assert_eq!(f.radius(), 3);
        let g = Cylinder::with_radius(&s, 2, |_| 0.0).unwrap();
        assert_eq!((g.offset(), g.length(), g.radius()), (-2, 5, 2));
    }
}
