//! Hyperbolic toral automorphisms acting exactly on the subgroup
//! `(2^-q Z / Z)^d` of the torus.

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_PRECISION_BITS: u32 = 128;
const HYPERBOLIC_TOL: f64 = 1e-9;

/// Integer unimodular matrix acting on the torus `R^d / Z^d`.
#[derive(Debug, Clone, Serialize)]
pub struct TorusAutomorphism {
    dim: usize,
    matrix: Vec<Vec<i64>>,
    inverse: Vec<Vec<i64>>,
    precision_bits: u32,
    #[serde(skip)]
    forward: ModMatrix,
    #[serde(skip)]
    backward: ModMatrix,
}

impl TorusAutomorphism {
    pub fn new(matrix: Vec<Vec<i64>>, precision_bits: u32) -> Result<Self> {
        let dim = matrix.len();
        if dim < 2 || matrix.iter().any(|r| r.len() != dim) {
            return Err(Error::DomainError("torus matrix must be square with dimension >= 2".into()));
        }
        if precision_bits == 0 || precision_bits > 128 {
            return Err(Error::DomainError(format!("precision_bits {precision_bits} outside 1..=128")));
        }
        let det = int_determinant(&matrix);
        if det.abs() != 1 {
            return Err(Error::NotUnimodular { det });
        }
        for z in eigenvalues(&matrix) {
            let r = z.norm();
            if (r - 1.0).abs() <= HYPERBOLIC_TOL {
                return Err(Error::NotHyperbolic { modulus: r });
            }
        }
        let inverse = int_inverse(&matrix, det);
        let forward = ModMatrix::from_int(&matrix, precision_bits);
        let backward = ModMatrix::from_int(&inverse, precision_bits);
        Ok(Self { dim, matrix, inverse, precision_bits, forward, backward })
    }

    /// Arnold's cat map `[[2,1],[1,1]]`.
    pub fn cat_map(precision_bits: u32) -> Self {
        Self::new(vec![vec![2, 1], vec![1, 1]], precision_bits).expect("cat map is hyperbolic")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &[Vec<i64>] {
        &self.matrix
    }

    /// Exact integer inverse (the adjugate up to the sign of the determinant).
    pub fn inverse(&self) -> &[Vec<i64>] {
        &self.inverse
    }

    pub fn precision_bits(&self) -> u32 {
        self.precision_bits
    }

    /// `matrix^n` reduced modulo `2^q`; negative `n` uses the inverse.
    pub fn mod_power(&self, n: i64) -> ModMatrix {
        if n >= 0 {
            self.forward.pow(n as u64)
        } else {
            self.backward.pow(n.unsigned_abs())
        }
    }

    /// Uniform point of the finite model (Haar measure restricted to it).
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> TorusPoint {
        let mask = mask(self.precision_bits);
        let coords = (0..self.dim).map(|_| rng.random::<u128>() & mask).collect();
        TorusPoint { coords, bits: self.precision_bits }
    }

    pub fn point(&self, coords: Vec<u128>) -> Result<TorusPoint> {
        if coords.len() != self.dim {
            return Err(Error::DomainError(format!("expected {} coordinates", self.dim)));
        }
        let mask = mask(self.precision_bits);
        if coords.iter().any(|&c| c & !mask != 0) {
            return Err(Error::DomainError("coordinate exceeds 2^q".into()));
        }
        Ok(TorusPoint { coords, bits: self.precision_bits })
    }
}

/// Applies `auto^n` to `point` exactly.
pub fn torus_apply_power(auto: &TorusAutomorphism, point: &TorusPoint, n: i64) -> TorusPoint {
    auto.mod_power(n).apply(point)
}

/// Point of the torus stored as `x * 2^q` in each coordinate.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TorusPoint {
    coords: Vec<u128>,
    bits: u32,
}

impl TorusPoint {
    pub fn coords(&self) -> &[u128] {
        &self.coords
    }

    pub fn precision_bits(&self) -> u32 {
        self.bits
    }

    /// Coordinates as reals in `[0, 1)`.
    pub fn to_unit(&self) -> Vec<f64> {
        self.coords.iter().map(|&c| fraction(c, self.bits)).collect()
    }

    /// `<k, x>` modulo 1, computed exactly before the final rounding.
    pub fn phase(&self, freq: &[i64]) -> f64 {
        let mask = mask(self.bits);
        let acc = freq
            .iter()
            .zip(&self.coords)
            .fold(0u128, |acc, (&k, &c)| acc.wrapping_add((k as i128 as u128).wrapping_mul(c)));
        fraction(acc & mask, self.bits)
    }
}

/// `d x d` matrix over `Z / 2^q Z`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModMatrix {
    dim: usize,
    data: Vec<u128>,
    mask: u128,
}

impl Default for ModMatrix {
    fn default() -> Self {
        Self { dim: 0, data: Vec::new(), mask: 0 }
    }
}

impl ModMatrix {
    pub fn from_int(m: &[Vec<i64>], bits: u32) -> Self {
        let mask = mask(bits);
        let dim = m.len();
        let data = m.iter().flatten().map(|&x| (x as i128 as u128) & mask).collect();
        Self { dim, data, mask }
    }

    pub fn identity(dim: usize, bits: u32) -> Self {
        let mut data = vec![0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1;
        }
        Self { dim, data, mask: mask(bits) }
    }

    pub fn mul(&self, other: &ModMatrix) -> ModMatrix {
        let d = self.dim;
        let mut data = vec![0u128; d * d];
        for i in 0..d {
            for k in 0..d {
                let a = self.data[i * d + k];
                if a == 0 {
                    continue;
                }
                for j in 0..d {
                    data[i * d + j] = data[i * d + j].wrapping_add(a.wrapping_mul(other.data[k * d + j]));
                }
            }
        }
        for x in &mut data {
            *x &= self.mask;
        }
        ModMatrix { dim: d, data, mask: self.mask }
    }

    /// Square-and-multiply.
    pub fn pow(&self, mut n: u64) -> ModMatrix {
        let bits = self.mask.count_ones();
        let mut result = ModMatrix::identity(self.dim, bits);
        let mut base = self.clone();
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

    pub fn apply(&self, p: &TorusPoint) -> TorusPoint {
        let d = self.dim;
        let coords = (0..d)
            .map(|i| {
                (0..d).fold(0u128, |acc, j| acc.wrapping_add(self.data[i * d + j].wrapping_mul(p.coords[j])))
                    & self.mask
            })
            .collect();
        TorusPoint { coords, bits: p.bits }
    }
}

fn mask(bits: u32) -> u128 {
    if bits >= 128 {
        u128::MAX
    } else {
        (1u128 << bits) - 1
    }
}

fn fraction(c: u128, bits: u32) -> f64 {
    c as f64 / 2f64.powi(bits as i32)
}

/// Determinant by fraction-free (Bareiss) elimination.
pub(crate) fn int_determinant(m: &[Vec<i64>]) -> i128 {
    let n = m.len();
    let mut a: Vec<Vec<i128>> = m.iter().map(|r| r.iter().map(|&x| x as i128).collect()).collect();
    let mut sign = 1i128;
    let mut prev = 1i128;
    for k in 0..n {
        if a[k][k] == 0 {
            match (k + 1..n).find(|&r| a[r][k] != 0) {
                Some(r) => {
                    a.swap(k, r);
                    sign = -sign;
                }
                None => return 0,
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) / prev;
            }
        }
        prev = a[k][k];
    }
    sign * a[n - 1][n - 1]
}

fn int_inverse(m: &[Vec<i64>], det: i128) -> Vec<Vec<i64>> {
    let n = m.len();
    let minor = |skip_r: usize, skip_c: usize| -> Vec<Vec<i64>> {
        (0..n)
            .filter(|&r| r != skip_r)
            .map(|r| (0..n).filter(|&c| c != skip_c).map(|c| m[r][c]).collect())
            .collect()
    };
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let cof = if n == 1 { 1 } else { int_determinant(&minor(j, i)) };
                    let sign = if (i + j) % 2 == 0 { 1 } else { -1 };
                    (sign * cof * det) as i64
                })
                .collect()
        })
        .collect()
}

pub(crate) fn eigenvalues(m: &[Vec<i64>]) -> Vec<num_complex::Complex<f64>> {
    let n = m.len();
    let a = DMatrix::from_fn(n, n, |i, j| m[i][j] as f64);
    a.complex_eigenvalues().iter().copied().collect()
}
