//! Outcome counts, correlation coefficients and the CHSH combination.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use super::coincidence::CoincidenceRecord;
use crate::error::{Error, Result};
use crate::model::{chsh_settings, Outcome, SettingsPair};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub pp: u64,
    pub pm: u64,
    pub mp: u64,
    pub mm: u64,
}

impl OutcomeCounts {
    pub fn new(pp: u64, pm: u64, mp: u64, mm: u64) -> Self {
        OutcomeCounts { pp, pm, mp, mm }
    }

    pub fn total(&self) -> u64 {
        self.pp + self.pm + self.mp + self.mm
    }

    pub fn get(&self, a: Outcome, b: Outcome) -> u64 {
        match (a, b) {
            (Outcome::Plus, Outcome::Plus) => self.pp,
            (Outcome::Plus, Outcome::Minus) => self.pm,
            (Outcome::Minus, Outcome::Plus) => self.mp,
            (Outcome::Minus, Outcome::Minus) => self.mm,
        }
    }

    /// Counts with the detector labels of station B exchanged.
    pub fn swap_b(&self) -> Self {
        OutcomeCounts::new(self.pm, self.pp, self.mm, self.mp)
    }
}

impl Add for OutcomeCounts {
    type Output = OutcomeCounts;
    fn add(self, o: Self) -> Self {
        OutcomeCounts::new(self.pp + o.pp, self.pm + o.pm, self.mp + o.mp, self.mm + o.mm)
    }
}

impl AddAssign for OutcomeCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

pub fn tally_outcomes(records: &[CoincidenceRecord]) -> OutcomeCounts {
    let mut c = OutcomeCounts::default();
    for r in records {
        match (r.outcome_a, r.outcome_b) {
            (Outcome::Plus, Outcome::Plus) => c.pp += 1,
            (Outcome::Plus, Outcome::Minus) => c.pm += 1,
            (Outcome::Minus, Outcome::Plus) => c.mp += 1,
            (Outcome::Minus, Outcome::Minus) => c.mm += 1,
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub value: f64,
    pub sigma: f64,
    pub total: u64,
}

/// `E = (N₊₊ + N₋₋ − N₊₋ − N₋₊)/N` with binomial error `√((1 − E²)/N)`.
pub fn correlation_e(counts: &OutcomeCounts) -> Result<Correlation> {
    let n = counts.total();
    if n == 0 {
        return Err(Error::InsufficientData("no coincidences for correlation".into()));
    }
    let same = (counts.pp + counts.mm) as f64;
    let diff = (counts.pm + counts.mp) as f64;
    let value = (same - diff) / n as f64;
    Ok(Correlation {
        value,
        sigma: ((1.0 - value * value).max(0.0) / n as f64).sqrt(),
        total: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshEstimate {
    /// Correlations at (a,b), (a,b′), (a′,b), (a′,b′).
    pub e: [Correlation; 4],
    pub s: f64,
    pub sigma_s: f64,
}

impl ChshEstimate {
    /// Whether `S` exceeds the local bound by more than `sigmas` standard errors.
    pub fn violates(&self, sigmas: f64) -> bool {
        self.s > 2.0 + sigmas * self.sigma_s
    }
}

/// `S = |E(a,b) − E(a,b′)| + |E(a′,b) + E(a′,b′)|`, errors in quadrature.
pub fn chsh_statistic(e: [Correlation; 4]) -> ChshEstimate {
    let s = (e[0].value - e[1].value).abs() + (e[2].value + e[3].value).abs();
    let sigma_s = e.iter().map(|c| c.sigma * c.sigma).sum::<f64>().sqrt();
    ChshEstimate { e, s, sigma_s }
}

/// Angular tolerance when grouping runs by their settings.
pub const SETTINGS_TOLERANCE: f64 = 1e-6;

/// Pool counts of every run taken at each of the four CHSH settings and
/// combine them. Fails if any of the four settings has no coincidences.
pub fn pooled_chsh<'a>(
    runs: impl IntoIterator<Item = (SettingsPair, &'a OutcomeCounts)>,
) -> Result<ChshEstimate> {
    let settings = chsh_settings();
    let mut pooled = [OutcomeCounts::default(); 4];
    for (s, counts) in runs {
        if let Some(k) = settings.iter().position(|c| c.approx_eq(&s, SETTINGS_TOLERANCE)) {
            pooled[k] += *counts;
        }
    }
    let mut e = Vec::with_capacity(4);
    for c in &pooled {
        e.push(correlation_e(c)?);
    }
    Ok(chsh_statistic([e[0], e[1], e[2], e[3]]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::SQRT_2;

    fn corr(value: f64) -> Correlation {
        Correlation { value, sigma: 0.01, total: 10_000 }
    }

    #[test]
    fn e_edge_cases() {
        assert!(correlation_e(&OutcomeCounts::default()).is_err());
        let one = correlation_e(&OutcomeCounts::new(50, 0, 0, 50)).unwrap();
        assert_eq!(one.value, 1.0);
        assert_eq!(one.sigma, 0.0);
        assert_eq!(correlation_e(&OutcomeCounts::new(25, 25, 25, 25)).unwrap().value, 0.0);
    }

    #[test]
    fn swapping_labels_flips_e_exactly() {
        for c in [OutcomeCounts::new(7, 3, 11, 40), OutcomeCounts::new(1, 0, 0, 0)] {
            let e = correlation_e(&c).unwrap();
            let f = correlation_e(&c.swap_b()).unwrap();
            assert_eq!(e.value, -f.value);
            assert_eq!(e.sigma, f.sigma);
        }
    }

    #[test]
    fn tally_partitions_records() {
        let r = |a, b| CoincidenceRecord { pulse: 0, outcome_a: a, outcome_b: b, t_rel_a: 0, t_rel_b: 0 };
        use Outcome::{Minus, Plus};
        let recs = [r(Plus, Plus), r(Plus, Plus), r(Minus, Plus), r(Minus, Minus)];
        let c = tally_outcomes(&recs);
        assert_eq!(c, OutcomeCounts::new(2, 0, 1, 1));
        assert_eq!(c.total(), 4);
        assert_eq!(tally_outcomes(&[]), OutcomeCounts::default());
    }

    #[test]
    fn tsirelson_and_sawtooth_points() {
        // Quantum correlations cos 2(α−β) at the CHSH settings.
        let q: Vec<f64> = chsh_settings()
            .iter()
            .map(|s| (2.0 * (s.alpha() - s.beta())).cos())
            .collect();
        let s = chsh_statistic([corr(q[0]), corr(q[1]), corr(q[2]), corr(q[3])]);
        assert!((s.s - 2.0 * SQRT_2).abs() < 1e-12, "{}", s.s);
        assert!((s.sigma_s - 0.02).abs() < 1e-12);
        // Sawtooth correlations 1 − 4|α−β|/π are ±0.5 here.
        let lhv = chsh_statistic([corr(0.5), corr(-0.5), corr(0.5), corr(0.5)]);
        assert!((lhv.s - 2.0).abs() < 1e-12);
        assert!(!lhv.violates(3.0));
    }

    #[test]
    fn pooling_groups_by_settings() {
        let settings = chsh_settings();
        let c = OutcomeCounts::new(40, 10, 10, 40);
        let runs: Vec<(SettingsPair, OutcomeCounts)> = settings.iter().map(|s| (*s, c)).collect();
        let est = pooled_chsh(runs.iter().map(|(s, c)| (*s, c))).unwrap();
        assert_eq!(est.e[0].total, 100);
        assert!(pooled_chsh(runs[..3].iter().map(|(s, c)| (*s, c))).is_err());
    }
}
