//! Turning validated configuration into core objects.

use ergolab_core::systems::{Cylinder, Observable, ShiftSystem, System, TorusAutomorphism, TrigPolynomial, TrigTerm};
use ergolab_core::{Error, Result};

use crate::config::{ObservableConfig, SystemConfig};

pub fn system(cfg: &SystemConfig) -> Result<System> {
    Ok(match cfg {
        SystemConfig::Markov { transition, adjacency, one_sided } => {
            let p: Vec<Vec<f64>> = transition.iter().map(|r| r.iter().map(|x| x.0).collect()).collect();
            let adj = match adjacency {
                Some(a) => a.clone(),
                None => p.iter().map(|r| r.iter().map(|&x| u8::from(x > 0.0)).collect()).collect(),
            };
            System::Shift(ShiftSystem::new(adj, p, *one_sided)?)
        }
        SystemConfig::Bernoulli { probabilities } => {
            System::Shift(ShiftSystem::bernoulli(&probabilities.iter().map(|x| x.0).collect::<Vec<_>>())?)
        }
        SystemConfig::Doubling => System::Shift(ShiftSystem::doubling_map()),
        SystemConfig::Torus { matrix, precision_bits } => {
            if *precision_bits == 0 || *precision_bits > 128 {
                return Err(Error::DomainError(format!("precision_bits {precision_bits} outside 1..=128")));
            }
            let m = matrix.iter().map(|r| r.iter().map(|x| x.0).collect()).collect();
            System::Torus(TorusAutomorphism::new(m, *precision_bits)?)
        }
    })
}

fn shift_of(system: &System) -> Result<&ShiftSystem> {
    match system {
        System::Shift(s) => Ok(s),
        System::Torus(_) => Err(Error::VariantMismatch),
    }
}

pub fn observable(system: &System, cfg: &ObservableConfig) -> Result<Observable> {
    let f: Observable = match cfg {
        ObservableConfig::Indicator { symbol, at } => {
            let s = shift_of(system)?;
            if *symbol >= s.alphabet_size() {
                return Err(Error::InvalidObservable(format!("symbol {symbol} outside the alphabet")));
            }
            Cylinder::indicator(s, *symbol, *at).into()
        }
        ObservableConfig::Cylinder { offset, length, values } => {
            let s = shift_of(system)?;
            let m = s.alphabet_size();
            let expected = (m as u64).checked_pow(*length as u32);
            if expected != Some(values.len() as u64) {
                return Err(Error::InvalidObservable(format!(
                    "cylinder of length {length} over {m} symbols needs {m}^{length} values, got {}",
                    values.len()
                )));
            }
            Cylinder::from_fn(s, *offset, *length, |w| {
                let code = w.iter().fold(0usize, |acc, &x| acc * m + x);
                values[code].0
            })?
            .into()
        }
        ObservableConfig::Constant { value } => match system {
            System::Shift(s) => Cylinder::constant(s, value.0).into(),
            System::Torus(t) => TrigPolynomial::constant(t.dim(), value.0).into(),
        },
        ObservableConfig::Trig { dim, terms } => TrigPolynomial::new(
            *dim,
            terms.iter().map(|t| TrigTerm { freq: t.freq.clone(), cos: t.cos.0, sin: t.sin.0 }).collect(),
        )?
        .into(),
        ObservableConfig::Cosine { freq, coefficient } => TrigPolynomial::cosine(freq.clone(), coefficient.0).into(),
    };
    system.check_observable(&f)?;
    Ok(f)
}

/// All observables, optionally centred by their exact means.
pub fn observables(system: &System, cfgs: &[ObservableConfig], center: bool) -> Result<Vec<Observable>> {
    if cfgs.is_empty() {
        return Err(Error::InvalidObservable("at least one observable is required".into()));
    }
    cfgs.iter()
        .map(|c| {
            let f = observable(system, c)?;
            if center {
                f.centered(system)
            } else {
                Ok(f)
            }
        })
        .collect()
}

pub fn cylinders(fs: &[Observable]) -> Result<Vec<Cylinder>> {
    fs.iter()
        .map(|f| match f {
            Observable::Cylinder(c) => Ok(c.clone()),
            Observable::Trig(_) => Err(Error::NotCylinder),
        })
        .collect()
}

pub fn real_matrix(rows: &[Vec<crate::config::Num>]) -> Result<Vec<Vec<f64>>> {
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::DomainError("matrix must be square and nonempty".into()));
    }
    Ok(rows.iter().map(|r| r.iter().map(|x| x.0).collect()).collect())
}

/// The integer form of a matrix, if every entry is integral.
pub fn integer_matrix(rows: &[Vec<f64>]) -> Option<Vec<Vec<i64>>> {
    rows.iter()
        .map(|r| r.iter().map(|&x| (x.fract() == 0.0 && x.abs() < 9.0e15).then_some(x as i64)).collect())
        .collect()
}
