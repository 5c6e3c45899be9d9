//! Signed bounded discrete-log recovery (baby-step giant-step).

use std::sync::{Arc, Mutex, OnceLock};

use num_bigint::BigUint;

use super::group::{Group, GroupElement, GroupParams};
use crate::error::{Error, Result};

/// Baby-step table size used when the caller does not pick one. Large enough that
/// the default protocol window needs ~800 giant steps per recovery.
pub const DEFAULT_BABY_STEPS: u64 = 1 << 21;

/// Precomputed table recovering `e` from `g^e` for `|e| <= window`.
pub struct DlogTable {
    group: Group,
    window: u64,
    baby_steps: u64,
    giant_steps: u64,
    // Parallel arrays sorted by key.
    keys: Vec<u64>,
    exponents: Vec<u32>,
    /// g^(-baby_steps)
    stride: GroupElement,
    /// g^window, moves the search range to [0, 2 * window].
    shift: GroupElement,
}

impl std::fmt::Debug for DlogTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DlogTable")
            .field("window", &self.window)
            .field("baby_steps", &self.baby_steps)
            .field("giant_steps", &self.giant_steps)
            .finish()
    }
}

/// Outcome of a recovery together with the number of giant steps it took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Recovery {
    pub exponent: i64,
    pub giant_steps: u64,
}

fn ceil_sqrt(v: u64) -> u64 {
    let mut r = (v as f64).sqrt() as u64;
    while r * r < v {
        r += 1;
    }
    while r > 0 && (r - 1) * (r - 1) >= v {
        r -= 1;
    }
    r
}

impl DlogTable {
    /// Builds a table for `[-window, window]` with `baby_steps` stored powers.
    ///
    /// `baby_steps` is clamped to `[ceil(sqrt(2W+1)), 2W+1]`, which keeps every
    /// recovery within `ceil(sqrt(2W+1))` giant steps.
    pub fn build(group: &Group, window: u64, baby_steps: u64) -> Result<DlogTable> {
        let span = window
            .checked_mul(2)
            .and_then(|v| v.checked_add(1))
            .filter(|&v| v <= i64::MAX as u64)
            .ok_or_else(|| Error::Infeasible(format!("dlog window {window} overflows")))?;
        // Uniqueness: distinct exponents in the window must give distinct elements.
        if BigUint::from(span) >= *group.order() {
            return Err(Error::Infeasible(format!("2W+1 = {span} is not below the group order")));
        }
        let baby_steps = baby_steps.clamp(ceil_sqrt(span), span);
        if baby_steps > u32::MAX as u64 {
            return Err(Error::Infeasible(format!("baby-step table of {baby_steps} entries")));
        }
        let giant_steps = span.div_ceil(baby_steps);

        let mut pairs = Vec::with_capacity(baby_steps as usize);
        let mut current = group.identity();
        let g = group.generator();
        for j in 0..baby_steps {
            pairs.push((current.lookup_key(), j as u32));
            current = current.mul(g);
        }
        pairs.sort_unstable();
        let (keys, exponents) = pairs.into_iter().unzip();

        Ok(DlogTable {
            group: group.clone(),
            window,
            baby_steps,
            giant_steps,
            keys,
            exponents,
            stride: group.exp_g_signed(-(baby_steps as i64)),
            shift: group.exp_g_signed(window as i64),
        })
    }

    /// Process-wide table for (group, window) with [`DEFAULT_BABY_STEPS`], built on first use.
    pub fn shared(group: &Group, window: u64) -> Result<Arc<DlogTable>> {
        type Entry = (GroupParams, u64, Arc<DlogTable>);
        static CACHE: OnceLock<Mutex<Vec<Entry>>> = OnceLock::new();
        let mut cache = CACHE.get_or_init(Default::default).lock().expect("dlog cache poisoned");
        if let Some((_, _, table)) =
            cache.iter().find(|(p, w, _)| p == group.params() && *w == window)
        {
            return Ok(table.clone());
        }
        let table = Arc::new(DlogTable::build(group, window, DEFAULT_BABY_STEPS)?);
        cache.push((group.params().clone(), window, table.clone()));
        Ok(table)
    }

    pub fn window(&self) -> u64 {
        self.window
    }

    pub fn baby_steps(&self) -> u64 {
        self.baby_steps
    }

    /// Upper bound on giant steps for any in-window element.
    pub fn max_giant_steps(&self) -> u64 {
        self.giant_steps
    }

    pub fn group(&self) -> &Group {
        &self.group
    }

    pub fn recover(&self, element: &GroupElement) -> Result<i64> {
        self.recover_with_stats(element).map(|r| r.exponent)
    }

    pub fn recover_with_stats(&self, element: &GroupElement) -> Result<Recovery> {
        let span_max = 2 * self.window;
        let mut gamma = element.mul(&self.shift);
        for i in 0..self.giant_steps {
            let key = gamma.lookup_key();
            let start = self.keys.partition_point(|&k| k < key);
            for idx in start..self.keys.len() {
                if self.keys[idx] != key {
                    break;
                }
                let shifted = i * self.baby_steps + self.exponents[idx] as u64;
                if shifted > span_max {
                    continue;
                }
                let exponent = shifted as i64 - self.window as i64;
                // 64-bit fingerprints can collide; confirm before answering.
                if self.group.exp_g_signed(exponent) == *element {
                    return Ok(Recovery { exponent, giant_steps: i + 1 });
                }
            }
            gamma = gamma.mul(&self.stride);
        }
        Err(Error::DlogOutOfWindow { window: self.window })
    }
}
