//! Exact multiple correlations of cylinder functions under a Markov measure.
//!
//! The integrand `prod_i f_i(sigma^{t_i} x)` depends on the symbols in the
//! index span `[min_i (t_i + offset_i), max_i (t_i + offset_i + len_i - 1)]`.
//! We sweep that span left to right carrying the weighted law of the most
//! recent symbols still needed by an unfinished window, so the state never
//! holds more than `max_i len_i` symbols.

use crate::error::{Error, Result};
use crate::systems::{Cylinder, ShiftSystem};

pub const DEFAULT_SPAN_LIMIT: u64 = 1_000_000;

struct Window<'a> {
    f: &'a Cylinder,
    start: i64,
    end: i64,
}

/// `E[prod_i f_i(sigma^{t_i} x)]` for arbitrary (not necessarily distinct) times.
pub fn exact_product(system: &ShiftSystem, factors: &[(&Cylinder, i64)], span_limit: u64) -> Result<f64> {
    if factors.is_empty() {
        return Ok(1.0);
    }
    let m = system.alphabet_size();
    for (f, _) in factors {
        if f.alphabet() != m {
            return Err(Error::InvalidObservable("alphabet size differs from the system's".into()));
        }
    }
    let windows: Vec<Window> = factors
        .iter()
        .map(|&(f, t)| {
            let start = t + f.offset();
            Window { f, start, end: start + f.length() as i64 - 1 }
        })
        .collect();
    let lo = windows.iter().map(|w| w.start).min().unwrap();
    let hi = windows.iter().map(|w| w.end).max().unwrap();
    let span = (hi - lo + 1) as u64;
    if span > span_limit {
        return Err(Error::SpanTooLarge { span, limit: span_limit });
    }

    let p = system.transition();
    let mut len = 1usize;
    let mut state: Vec<f64> = system.stationary().to_vec();
    apply_windows(&windows, lo, len, m, &mut state);
    len = truncate(&windows, lo, len, m, &mut state);

    for pos in lo + 1..=hi {
        let grown = len + 1;
        let mut next = vec![0.0; m.pow(grown as u32)];
        for (code, &w) in state.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let last = code % m;
            let base = code * m;
            for (s, &ps) in p[last].iter().enumerate() {
                if ps > 0.0 {
                    next[base + s] += w * ps;
                }
            }
        }
        state = next;
        apply_windows(&windows, pos, grown, m, &mut state);
        len = truncate(&windows, pos, grown, m, &mut state);
    }
    Ok(state.iter().sum())
}

/// Multiplies in every window ending at `pos`; `state` holds the last `len` symbols.
fn apply_windows(windows: &[Window], pos: i64, len: usize, m: usize, state: &mut [f64]) {
    for w in windows.iter().filter(|w| w.end == pos) {
        let k = w.f.length();
        debug_assert!(k <= len);
        let modulus = m.pow(k as u32);
        for (code, weight) in state.iter_mut().enumerate() {
            if *weight != 0.0 {
                *weight *= w.f.value_by_code(code % modulus).unwrap_or(0.0);
            }
        }
    }
}

/// Drops symbols no unfinished window needs, keeping at least the last one.
fn truncate(windows: &[Window], pos: i64, len: usize, m: usize, state: &mut Vec<f64>) -> usize {
    let earliest = windows.iter().filter(|w| w.end > pos && w.start <= pos).map(|w| w.start).min();
    let keep = match earliest {
        Some(a) => ((pos - a + 1) as usize).max(1),
        None => 1,
    };
    if keep >= len {
        return len;
    }
    let modulus = m.pow(keep as u32);
    let mut out = vec![0.0; modulus];
    for (code, &w) in state.iter().enumerate() {
        out[code % modulus] += w;
    }
    *state = out;
    keep
}
