//! Measure-preserving systems, their points and observables.

mod observable;
mod shift;
mod torus;

pub use observable::{Cylinder, TrigPolynomial, TrigTerm};
pub(crate) use observable::decode;
pub use shift::{build_shift, sample_shift_point, shift_apply, ShiftPoint, ShiftSystem};
pub use torus::{torus_apply_power, ModMatrix, TorusAutomorphism, TorusPoint, DEFAULT_PRECISION_BITS};
pub(crate) use torus::int_determinant;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum System {
    Shift(ShiftSystem),
    Torus(TorusAutomorphism),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Point {
    Shift(ShiftPoint),
    Torus(TorusPoint),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Observable {
    Cylinder(Cylinder),
    Trig(TrigPolynomial),
}

impl System {
    pub fn is_invertible(&self) -> bool {
        match self {
            System::Shift(s) => !s.is_one_sided(),
            System::Torus(_) => true,
        }
    }

    /// Samples from the invariant measure. `reach` is the largest index
    /// (in absolute value) any later evaluation may touch; ignored on tori.
    pub fn sample_point<R: Rng + ?Sized>(&self, reach: usize, rng: &mut R) -> Point {
        match self {
            System::Shift(s) => Point::Shift(s.sample_point(reach, rng)),
            System::Torus(t) => Point::Torus(t.sample_point(rng)),
        }
    }

    /// `h^n` applied to `point`.
    pub fn apply(&self, point: &Point, n: i64) -> Result<Point> {
        if n < 0 && !self.is_invertible() {
            return Err(Error::NonInvertible);
        }
        match (self, point) {
            (System::Shift(_), Point::Shift(p)) => Ok(Point::Shift(p.shift_apply(n))),
            (System::Torus(t), Point::Torus(p)) => Ok(Point::Torus(torus_apply_power(t, p, n))),
            _ => Err(Error::VariantMismatch),
        }
    }

    pub fn check_observable(&self, f: &Observable) -> Result<()> {
        match (self, f) {
            (System::Shift(s), Observable::Cylinder(c)) => {
                if c.alphabet() != s.alphabet_size() {
                    return Err(Error::InvalidObservable("alphabet size differs from the system's".into()));
                }
                if s.is_one_sided() && c.offset() < 0 {
                    return Err(Error::InvalidObservable("one-sided systems have no negative coordinates".into()));
                }
                Ok(())
            }
            (System::Torus(t), Observable::Trig(p)) => {
                if p.dim() != t.dim() {
                    return Err(Error::InvalidObservable("frequency dimension differs from the torus".into()));
                }
                Ok(())
            }
            _ => Err(Error::VariantMismatch),
        }
    }
}

impl Observable {
    pub fn sup_norm(&self) -> f64 {
        match self {
            Observable::Cylinder(c) => c.sup_norm(),
            Observable::Trig(t) => t.sup_norm_bound(),
        }
    }

    /// Largest |offset| the observable reads on a shift (0 on tori).
    pub fn radius(&self) -> usize {
        match self {
            Observable::Cylinder(c) => c.radius(),
            Observable::Trig(_) => 0,
        }
    }

    pub fn centered(&self, system: &System) -> Result<Observable> {
        let mean = exact_mean(self, system)?;
        Ok(match self {
            Observable::Cylinder(c) => Observable::Cylinder(c.minus(mean)),
            Observable::Trig(t) => Observable::Trig(t.minus(mean)),
        })
    }
}

impl From<Cylinder> for Observable {
    fn from(c: Cylinder) -> Self {
        Observable::Cylinder(c)
    }
}

impl From<TrigPolynomial> for Observable {
    fn from(t: TrigPolynomial) -> Self {
        Observable::Trig(t)
    }
}

pub fn eval(observable: &Observable, point: &Point) -> Result<f64> {
    match (observable, point) {
        (Observable::Cylinder(c), Point::Shift(p)) => c.eval(p),
        (Observable::Trig(t), Point::Torus(p)) => Ok(t.eval(p)),
        _ => Err(Error::VariantMismatch),
    }
}

/// Integral of `observable` against the system's invariant measure.
pub fn exact_mean(observable: &Observable, system: &System) -> Result<f64> {
    system.check_observable(observable)?;
    match (observable, system) {
        (Observable::Cylinder(c), System::Shift(s)) => Ok(c.exact_mean(s)),
        (Observable::Trig(t), System::Torus(_)) => Ok(t.exact_mean()),
        _ => Err(Error::VariantMismatch),
    }
}
