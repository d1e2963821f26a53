//! Exact multiple correlations of trigonometric polynomials under a toral
//! automorphism, by character matching.
//!
//! `e(<k, A^n x>) = e(<(A^T)^n k, x>)`, and a product of characters has
//! Haar integral 1 exactly when the frequencies sum to zero.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_complex::Complex64;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::systems::{TorusAutomorphism, TrigPolynomial};

/// Frequencies wider than this many bits are refused.
pub const FREQUENCY_BITS: u64 = 1 << 16;

type Freq = Vec<BigInt>;
type BigMatrix = Vec<Vec<BigInt>>;

fn transpose_big(m: &[Vec<i64>]) -> BigMatrix {
    let d = m.len();
    (0..d).map(|i| (0..d).map(|j| BigInt::from(m[j][i])).collect()).collect()
}

fn mat_mul(a: &BigMatrix, b: &BigMatrix) -> BigMatrix {
    let d = a.len();
    (0..d)
        .map(|i| (0..d).map(|j| (0..d).map(|k| &a[i][k] * &b[k][j]).sum()).collect())
        .collect()
}

fn mat_pow(base: &BigMatrix, mut n: u64) -> BigMatrix {
    let d = base.len();
    let mut result: BigMatrix =
        (0..d).map(|i| (0..d).map(|j| if i == j { BigInt::one() } else { BigInt::zero() }).collect()).collect();
    let mut b = base.clone();
    while n > 0 {
        if n & 1 == 1 {
            result = mat_mul(&result, &b);
        }
        n >>= 1;
        if n > 0 {
            b = mat_mul(&b, &b);
        }
    }
    result
}

/// `((A^T)^n)` as a big-integer matrix; negative `n` uses the inverse.
fn dual_power(auto: &TorusAutomorphism, n: i64) -> BigMatrix {
    let base = if n >= 0 { transpose_big(auto.matrix()) } else { transpose_big(auto.inverse()) };
    mat_pow(&base, n.unsigned_abs())
}

/// Expansion of a real trig polynomial into complex characters.
fn characters(f: &TrigPolynomial) -> Vec<(Vec<i64>, Complex64)> {
    let mut map: HashMap<Vec<i64>, Complex64> = HashMap::new();
    for t in f.terms() {
        if t.freq.iter().all(|&k| k == 0) {
            *map.entry(t.freq.clone()).or_default() += Complex64::new(t.cos, 0.0);
            continue;
        }
        let neg: Vec<i64> = t.freq.iter().map(|&k| -k).collect();
        *map.entry(t.freq.clone()).or_default() += Complex64::new(t.cos / 2.0, -t.sin / 2.0);
        *map.entry(neg).or_default() += Complex64::new(t.cos / 2.0, t.sin / 2.0);
    }
    let mut out: Vec<_> = map.into_iter().collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// `E[prod_i f_i(A^{t_i} x)]` over Haar measure.
pub fn exact_product(auto: &TorusAutomorphism, factors: &[(&TrigPolynomial, i64)]) -> Result<f64> {
    let d = auto.dim();
    let zero: Freq = vec![BigInt::zero(); d];
    let mut acc: HashMap<Freq, Complex64> = HashMap::from([(zero.clone(), Complex64::new(1.0, 0.0))]);
    let mut powers: HashMap<i64, BigMatrix> = HashMap::new();
    for &(f, t) in factors {
        if f.dim() != d {
            return Err(Error::InvalidObservable("frequency dimension differs from the torus".into()));
        }
        let pw = powers.entry(t).or_insert_with(|| dual_power(auto, t));
        let mut moved: Vec<(Freq, Complex64)> = Vec::new();
        for (k, c) in characters(f) {
            let image: Freq = (0..d).map(|i| (0..d).map(|j| &pw[i][j] * k[j]).sum()).collect();
            if image.iter().any(|x| x.bits() > FREQUENCY_BITS) {
                return Err(Error::FrequencyOverflow { bits: FREQUENCY_BITS });
            }
            moved.push((image, c));
        }
        let mut next: HashMap<Freq, Complex64> = HashMap::with_capacity(acc.len() * moved.len());
        for (u, w) in &acc {
            for (v, c) in &moved {
                let sum: Freq = u.iter().zip(v).map(|(a, b)| a + b).collect();
                *next.entry(sum).or_default() += w * c;
            }
        }
        acc = next;
    }
    Ok(acc.get(&zero).map(|z| z.re).unwrap_or(0.0))
}
