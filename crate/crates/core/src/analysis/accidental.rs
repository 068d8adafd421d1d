//! Accidental coincidences between uncorrelated streams.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Expected accidental pairs in one coincidence slot of width `window_ns`
/// accumulated over `duration_s`: `r_a · r_b · window · duration`.
pub fn accidental_rate(rate_a_hz: f64, rate_b_hz: f64, window_ns: f64, duration_s: f64) -> Result<f64> {
    for (name, v) in [
        ("rate_a", rate_a_hz),
        ("rate_b", rate_b_hz),
        ("window", window_ns),
        ("duration", duration_s),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidArgument(format!("{name} must be ≥ 0, got {v}")));
        }
    }
    Ok(rate_a_hz * rate_b_hz * window_ns * 1e-9 * duration_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccidentalTally {
    /// Cross-station pairs counted over all slots.
    pub pairs: u64,
    pub slots: usize,
}

impl AccidentalTally {
    pub fn per_slot(&self) -> f64 {
        self.pairs as f64 / self.slots as f64
    }
}

/// Count pairs `(a, b)` with `b − a` in each of the `2·half_slots` slots
/// `[k·w, (k+1)·w)`, `k = −half_slots..half_slots`. For uncorrelated streams
/// each slot collects about [`accidental_rate`] pairs.
pub fn count_cross_pairs(a: &[u64], b: &[u64], window_ps: u64, half_slots: usize) -> AccidentalTally {
    let reach = window_ps as i128 * half_slots as i128;
    let mut pairs = 0u64;
    let mut lo = 0usize;
    for &ta in a {
        let from = ta as i128 - reach;
        let to = ta as i128 + reach;
        while lo < b.len() && (b[lo] as i128) < from {
            lo += 1;
        }
        pairs += b[lo..].iter().take_while(|&&tb| (tb as i128) < to).count() as u64;
    }
    AccidentalTally {
        pairs,
        slots: 2 * half_slots,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_examples() {
        let r = accidental_rate(200.0, 200.0, 4.0, 30.0).unwrap();
        assert!((r - 4.8e-3).abs() < 1e-15, "{r}");
        assert_eq!(accidental_rate(0.0, 200.0, 4.0, 30.0).unwrap(), 0.0);
        assert_eq!(accidental_rate(200.0, 200.0, 0.0, 30.0).unwrap(), 0.0);
        assert!(accidental_rate(-1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn pair_counting_matches_brute_force() {
        let a = [10u64, 100, 1_000, 5_000];
        let b = [0u64, 95, 108, 990, 4_000, 5_003];
        for half in [1usize, 3, 100, 2_000] {
            let w = 4u64;
            let reach = (w * half as u64) as i64;
            let brute = a
                .iter()
                .flat_map(|&x| b.iter().map(move |&y| y as i64 - x as i64))
                .filter(|d| *d >= -reach && *d < reach)
                .count() as u64;
            assert_eq!(count_cross_pairs(&a, &b, w, half).pairs, brute, "half {half}");
        }
    }
}
