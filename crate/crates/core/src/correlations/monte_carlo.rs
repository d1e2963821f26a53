use rayon::prelude::*;
use serde::Serialize;

use super::CorrelationQuery;
use crate::error::{Error, Result};
use crate::seeding::task_rng;
use crate::systems::{eval, ModMatrix, Observable, Point, System};

/// Samples per deterministic batch. Batch `b` always draws from stream `b`.
pub const BATCH: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Running mean and centred second moment (Welford), mergeable.
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    pub n: f64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.n;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(self, other: Moments) -> Moments {
        if other.n == 0.0 {
            return self;
        }
        if self.n == 0.0 {
            return other;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        Moments {
            n,
            mean: self.mean + delta * other.n / n,
            m2: self.m2 + other.m2 + delta * delta * self.n * other.n / n,
        }
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2.0 {
            0.0
        } else {
            self.m2 / (self.n - 1.0)
        }
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.n).sqrt()
    }
}

/// Largest |index| read on a shift when evaluating the query.
pub(crate) fn shift_reach(query: &CorrelationQuery) -> usize {
    query
        .observables
        .iter()
        .zip(&query.times)
        .map(|(f, &t)| match f {
            Observable::Cylinder(c) => {
                let a = (t + c.offset()).unsigned_abs();
                let b = (t + c.offset() + c.length() as i64 - 1).unsigned_abs();
                a.max(b) as usize
            }
            Observable::Trig(_) => 0,
        })
        .max()
        .unwrap_or(0)
}

/// Sample mean of `prod_i f_i(h^{n_i} x)` over `samples` draws from the
/// invariant measure. Deterministic in `seed` whatever the thread count.
pub fn mc_correlation(system: &System, query: &CorrelationQuery, samples: usize, seed: u64) -> Result<McEstimate> {
    if samples < 2 {
        return Err(Error::DomainError("Monte Carlo needs at least 2 samples".into()));
    }
    query.validate(system)?;
    let reach = shift_reach(query);
    let powers: Vec<Option<ModMatrix>> = query
        .times
        .iter()
        .map(|&t| match system {
            System::Torus(a) => Some(a.mod_power(t)),
            System::Shift(_) => None,
        })
        .collect();

    let sample_product = |point: &Point| -> Result<f64> {
        let mut prod = 1.0;
        for ((f, &t), pw) in query.observables.iter().zip(&query.times).zip(&powers) {
            let moved = match (point, pw) {
                (Point::Shift(p), _) => Point::Shift(p.shift_apply(t)),
                (Point::Torus(p), Some(m)) => Point::Torus(m.apply(p)),
                _ => return Err(Error::VariantMismatch),
            };
            prod *= eval(f, &moved)?;
        }
        Ok(prod)
    };

    let batches = samples.div_ceil(BATCH);
    let parts: Vec<Result<Moments>> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = task_rng(seed, b as u64);
            let count = BATCH.min(samples - b * BATCH);
            let mut acc = Moments::default();
            for _ in 0..count {
                let point = system.sample_point(reach, &mut rng);
                acc.push(sample_product(&point)?);
            }
            Ok(acc)
        })
        .collect();
    let mut total = Moments::default();
    for part in parts {
        total = total.merge(part?);
    }
    Ok(McEstimate { estimate: total.mean, std_error: total.std_error(), samples })
}
