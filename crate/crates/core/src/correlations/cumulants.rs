//! Joint moments and joint cumulants over the lattice of set partitions.
//!
//! Subsets of `{0, .., k}` are bitmasks. The joint cumulant of a block is
//! the fully mixed derivative of the log moment generating function; the
//! two families are related by `m(S) = sum_{P partition of S} prod_{B in P} kappa(B)`.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};

/// Largest supported `k` (so at most 11 variables).
pub const MAX_K: usize = 10;

/// A value for every nonempty subset of `vars` variables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsetTable {
    vars: usize,
    /// Indexed by mask; entry 0 (the empty set) is 1 by convention.
    values: Vec<f64>,
}

impl SubsetTable {
    pub fn from_fn<F: FnMut(u32) -> f64>(vars: usize, mut f: F) -> Result<Self> {
        check_vars(vars)?;
        let mut values = vec![1.0; 1 << vars];
        for (mask, v) in values.iter_mut().enumerate().skip(1) {
            *v = f(mask as u32);
        }
        Ok(Self { vars, values })
    }

    pub fn from_map(vars: usize, map: &HashMap<u32, f64>) -> Result<Self> {
        check_vars(vars)?;
        let mut values = vec![1.0; 1 << vars];
        for (mask, v) in values.iter_mut().enumerate().skip(1) {
            *v = *map.get(&(mask as u32)).ok_or(Error::SubsetMissing { mask: mask as u32 })?;
        }
        Ok(Self { vars, values })
    }

    pub fn vars(&self) -> usize {
        self.vars
    }

    pub fn get(&self, mask: u32) -> f64 {
        self.values[mask as usize]
    }

    pub fn full_mask(&self) -> u32 {
        (1u32 << self.vars) - 1
    }

    pub fn max_abs_diff(&self, other: &SubsetTable) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

fn check_vars(vars: usize) -> Result<()> {
    if vars == 0 {
        return Err(Error::DomainError("need at least one variable".into()));
    }
    if vars > MAX_K + 1 {
        return Err(Error::KTooLarge { k: vars - 1, max: MAX_K });
    }
    Ok(())
}

/// Moments and cumulants side by side.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CumulantTable {
    pub moments: SubsetTable,
    pub cumulants: SubsetTable,
}

impl CumulantTable {
    pub fn full_cumulant(&self) -> f64 {
        self.cumulants.get(self.cumulants.full_mask())
    }
}

/// `kappa(S) = m(S) - sum_{B subsetneq S, min S in B} kappa(B) m(S \ B)`,
/// the partition recursion organised around the block holding `min S`.
pub fn moments_to_cumulants(moments: &SubsetTable) -> Result<CumulantTable> {
    let vars = moments.vars;
    check_vars(vars)?;
    let mut kappa = vec![0.0; 1 << vars];
    for s in 1u32..(1 << vars) {
        let low = s & s.wrapping_neg();
        let rest = s ^ low;
        let mut acc = moments.get(s);
        // proper subsets B of S containing `low`: B = low | T, T subsetneq rest
        let mut t = rest;
        loop {
            t = t.wrapping_sub(1) & rest;
            if t == rest {
                break;
            }
            let b = low | t;
            acc -= kappa[b as usize] * moments.get(s ^ b);
            if t == 0 {
                break;
            }
        }
        kappa[s as usize] = acc;
    }
    kappa[0] = 1.0;
    let cumulants = SubsetTable { vars, values: kappa };
    Ok(CumulantTable { moments: moments.clone(), cumulants })
}

/// `m(S) = sum over set partitions P of S of prod_{B in P} kappa(B)`,
/// partitions enumerated as restricted growth strings.
pub fn cumulants_to_moments(cumulants: &SubsetTable) -> Result<SubsetTable> {
    let vars = cumulants.vars;
    check_vars(vars)?;
    let mut values = vec![1.0; 1 << vars];
    let mut elems = Vec::with_capacity(vars);
    for (s, slot) in values.iter_mut().enumerate().skip(1) {
        elems.clear();
        elems.extend((0..vars).filter(|&i| s >> i & 1 == 1));
        let mut total = 0.0;
        for_each_partition(elems.len(), |rgs, blocks| {
            let mut masks = [0u32; MAX_K + 1];
            for (pos, &b) in rgs.iter().enumerate() {
                masks[b] |= 1 << elems[pos];
            }
            total += masks[..blocks].iter().map(|&m| cumulants.get(m)).product::<f64>();
        });
        *slot = total;
    }
    Ok(SubsetTable { vars, values })
}

/// Calls `visit(rgs, block_count)` for every set partition of `n` labelled
/// elements, where `rgs[i]` is the block of element `i` and every prefix
/// satisfies `rgs[i] <= 1 + max(rgs[..i])`.
pub fn for_each_partition<F: FnMut(&[usize], usize)>(n: usize, mut visit: F) {
    if n == 0 {
        visit(&[], 0);
        return;
    }
    let mut rgs = vec![0usize; n];
    // prefix_max[i] = max(rgs[..=i])
    let mut prefix_max = vec![0usize; n];
    loop {
        visit(&rgs, prefix_max[n - 1] + 1);
        // find the rightmost position that can be incremented
        let mut i = n - 1;
        loop {
            if i == 0 {
                return;
            }
            if rgs[i] <= prefix_max[i - 1] {
                break;
            }
            i -= 1;
        }
        rgs[i] += 1;
        prefix_max[i] = prefix_max[i - 1].max(rgs[i]);
        for j in i + 1..n {
            rgs[j] = 0;
            prefix_max[j] = prefix_max[i];
        }
    }
}

/// Number of set partitions of `n` elements, by enumeration.
pub fn count_partitions(n: usize) -> u64 {
    let mut count = 0;
    for_each_partition(n, |_, _| count += 1);
    count
}
