//! Logical synchronization of the two TDC clocks through the pump pulses.
//!
//! The pulse generator alternates between two repetition periods. Pulses are
//! grouped in blocks of `block_length`; every block uses either the base or the
//! alternate period according to a maximal-length LFSR sequence. Any `W`
//! consecutive block bits identify the block position uniquely, so a station
//! can number its trigger tags from its own clock alone, without scanning
//! delays against the other station.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ns_to_ps, splitmix64, Ps};

/// Feedback taps (1-indexed, highest first) of maximal-length Fibonacci LFSRs.
const LFSR_TAPS: [(u32, &[u32]); 21] = [
    (4, &[4, 3]),
    (5, &[5, 3]),
    (6, &[6, 5]),
    (7, &[7, 6]),
    (8, &[8, 6, 5, 4]),
    (9, &[9, 5]),
    (10, &[10, 7]),
    (11, &[11, 9]),
    (12, &[12, 6, 4, 1]),
    (13, &[13, 4, 3, 1]),
    (14, &[14, 5, 3, 1]),
    (15, &[15, 14]),
    (16, &[16, 14, 13, 11]),
    (17, &[17, 14]),
    (18, &[18, 11]),
    (19, &[19, 6, 2, 1]),
    (20, &[20, 17]),
    (21, &[21, 19]),
    (22, &[22, 21]),
    (23, &[23, 18]),
    (24, &[24, 23, 22, 17]),
];

fn lfsr_taps(order: u32) -> Option<&'static [u32]> {
    LFSR_TAPS.iter().find(|(n, _)| *n == order).map(|(_, t)| *t)
}

/// Fibonacci LFSR over `order` bits; emits the low bit, shifts right.
#[derive(Debug, Clone)]
pub(crate) struct Lfsr {
    state: u32,
    order: u32,
    taps: &'static [u32],
}

impl Lfsr {
    pub(crate) fn new(order: u32, state: u32) -> Option<Self> {
        let taps = lfsr_taps(order)?;
        let mask = (1u32 << order) - 1;
        let state = state & mask;
        if state == 0 {
            return None;
        }
        Some(Lfsr { state, order, taps })
    }

    #[cfg(test)]
    pub(crate) fn state(&self) -> u32 {
        self.state
    }

    pub(crate) fn next_bit(&mut self) -> bool {
        let out = self.state & 1 == 1;
        let fb = self
            .taps
            .iter()
            .fold(0u32, |acc, &t| acc ^ (self.state >> (self.order - t)))
            & 1;
        self.state = (self.state >> 1) | (fb << (self.order - 1));
        out
    }
}

/// Configuration of the frequency-modulated pulse train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleParams {
    pub seed: u64,
    pub base_period_ns: f64,
    pub alt_period_ns: f64,
    /// Pulses per block.
    pub block_length: usize,
    /// Number of consecutive blocks whose bits identify a position (W).
    pub window_blocks: u32,
    pub pulse_width_ns: f64,
    /// Blocks the schedule must cover; defaults to one LFSR period, 2^W − 1.
    pub capacity_blocks: Option<usize>,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams {
            seed: 0x00C0_FFEE,
            base_period_ns: 2000.0,
            alt_period_ns: 2100.0,
            block_length: 256,
            window_blocks: 16,
            pulse_width_ns: 500.0,
            capacity_blocks: None,
        }
    }
}

impl ScheduleParams {
    pub fn with_periods(base_period_ns: f64, alt_period_ns: f64) -> Self {
        ScheduleParams {
            base_period_ns,
            alt_period_ns,
            ..Default::default()
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity_blocks
            .unwrap_or_else(|| (1usize << self.window_blocks.min(30)) - 1)
    }

    fn validate_timing(&self) -> Result<()> {
        if !(self.pulse_width_ns.is_finite() && self.pulse_width_ns >= 0.0) {
            return Err(Error::config("schedule.pulse_width_ns", "must be ≥ 0"));
        }
        for (field, period) in [
            ("schedule.base_period_ns", self.base_period_ns),
            ("schedule.alt_period_ns", self.alt_period_ns),
        ] {
            if !(period.is_finite() && period > self.pulse_width_ns) {
                return Err(Error::config(field, "must exceed the pulse width"));
            }
        }
        if self.block_length == 0 {
            return Err(Error::config("schedule.block_length", "must be ≥ 1"));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_timing()?;
        if self.seed > i64::MAX as u64 {
            return Err(Error::config("schedule.seed", "must fit in 63 bits"));
        }
        if ns_to_ps(self.base_period_ns) == ns_to_ps(self.alt_period_ns) {
            return Err(Error::ScheduleDegenerate(
                "base and alternate periods are equal".into(),
            ));
        }
        if lfsr_taps(self.window_blocks).is_none() {
            return Err(Error::config(
                "schedule.window_blocks",
                format!("unsupported window {} (supported: 4..=24)", self.window_blocks),
            ));
        }
        if self.capacity() < self.window_blocks as usize {
            return Err(Error::config(
                "schedule.capacity_blocks",
                "must hold at least one window of blocks",
            ));
        }
        Ok(())
    }
}

/// A concrete pulse timetable. Pulse `n` starts at [`PulseSchedule::pulse_start`]
/// and the gap to pulse `n + 1` is the period of block `n / block_length`.
#[derive(Debug, Clone)]
pub struct PulseSchedule {
    params: ScheduleParams,
    base_ps: Ps,
    alt_ps: Ps,
    width_ps: Ps,
    /// Block bits; `true` selects the alternate period.
    pattern: Vec<bool>,
    /// Start time of each block and, as last element, the end of the pattern.
    block_starts: Vec<Ps>,
    /// Window of `W` block bits → first block index, `None` when ambiguous.
    windows: HashMap<u32, Option<usize>>,
}

/// Build the modulated schedule for `params`, checking that every window of
/// `W` consecutive blocks is distinct over the schedule's capacity.
pub fn build_schedule(params: &ScheduleParams) -> Result<PulseSchedule> {
    params.validate()?;
    let order = params.window_blocks;
    let period = (1u64 << order) - 1;
    let state = (splitmix64(params.seed) % period) as u32 + 1;
    let mut lfsr = Lfsr::new(order, state).expect("validated order and non-zero state");
    let pattern: Vec<bool> = (0..params.capacity()).map(|_| lfsr.next_bit()).collect();
    let schedule = PulseSchedule::assemble(params.clone(), pattern);
    if let Some(dup) = schedule.windows.iter().find(|(_, v)| v.is_none()) {
        return Err(Error::ScheduleDegenerate(format!(
            "block window {:#x} repeats within {} blocks; increase window_blocks",
            dup.0,
            params.capacity()
        )));
    }
    Ok(schedule)
}

impl PulseSchedule {
    /// Schedule with an explicit block pattern. Window uniqueness is not
    /// enforced here; an ambiguous window makes [`recover_numbering`] fail.
    pub fn from_pattern(params: ScheduleParams, pattern: Vec<bool>) -> Result<Self> {
        params.validate_timing()?;
        if pattern.is_empty() {
            return Err(Error::InvalidArgument("empty block pattern".into()));
        }
        Ok(Self::assemble(params, pattern))
    }

    /// Unmodulated train with a single period; cannot be used for numbering.
    pub fn constant(period_ns: f64, pulse_width_ns: f64, blocks: usize) -> Result<Self> {
        let params = ScheduleParams {
            base_period_ns: period_ns,
            alt_period_ns: period_ns,
            pulse_width_ns,
            capacity_blocks: Some(blocks),
            ..Default::default()
        };
        Self::from_pattern(params, vec![false; blocks])
    }

    fn assemble(params: ScheduleParams, pattern: Vec<bool>) -> Self {
        let base_ps = ns_to_ps(params.base_period_ns);
        let alt_ps = ns_to_ps(params.alt_period_ns);
        let width_ps = ns_to_ps(params.pulse_width_ns);
        let len = params.block_length as Ps;
        let mut block_starts = Vec::with_capacity(pattern.len() + 1);
        let mut t = 0;
        for &bit in &pattern {
            block_starts.push(t);
            t += len * if bit { alt_ps } else { base_ps };
        }
        block_starts.push(t);

        let w = params.window_blocks as usize;
        let mut windows = HashMap::new();
        if w <= 32 && pattern.len() >= w {
            for start in 0..=pattern.len() - w {
                let key = window_key(&pattern[start..start + w]);
                windows
                    .entry(key)
                    .and_modify(|v| *v = None)
                    .or_insert(Some(start));
            }
        }
        PulseSchedule {
            params,
            base_ps,
            alt_ps,
            width_ps,
            pattern,
            block_starts,
            windows,
        }
    }

    pub fn params(&self) -> &ScheduleParams {
        &self.params
    }

    pub fn pattern(&self) -> &[bool] {
        &self.pattern
    }

    pub fn block_length(&self) -> u64 {
        self.params.block_length as u64
    }

    pub fn pulse_width_ps(&self) -> Ps {
        self.width_ps
    }

    pub fn base_period_ps(&self) -> Ps {
        self.base_ps
    }

    pub fn alt_period_ps(&self) -> Ps {
        self.alt_ps
    }

    /// Total number of pulses the pattern defines.
    pub fn pulse_count(&self) -> u64 {
        self.pattern.len() as u64 * self.block_length()
    }

    fn block_period(&self, block: usize) -> Ps {
        if self.pattern[block] {
            self.alt_ps
        } else {
            self.base_ps
        }
    }

    /// Period following pulse `n` (gap from `n` to `n + 1`).
    pub fn period_after(&self, n: u64) -> Ps {
        self.block_period((n / self.block_length()) as usize)
    }

    /// Whether the gap after pulse `n` uses the alternate period.
    pub fn bit_after(&self, n: u64) -> bool {
        self.pattern[(n / self.block_length()) as usize]
    }

    /// Scheduled start of pulse `n`, in ps from the start of pulse 0.
    pub fn pulse_start(&self, n: u64) -> Ps {
        let len = self.block_length();
        let block = (n / len) as usize;
        if block >= self.pattern.len() {
            let extra = (n - self.pulse_count()) as Ps;
            return self.block_starts[self.pattern.len()] + extra * self.base_ps;
        }
        self.block_starts[block] + (n % len) as Ps * self.block_period(block)
    }

    /// Pulse whose start is nearest to `t` (clamped to the schedule).
    pub fn nearest_pulse(&self, t: Ps) -> u64 {
        let last = self.pulse_count().saturating_sub(1);
        if t <= 0 {
            return 0;
        }
        if t >= self.pulse_start(last) {
            return last;
        }
        let block = self.block_starts.partition_point(|&s| s <= t) - 1;
        let period = self.block_period(block);
        let within = t - self.block_starts[block];
        let k = (within + period / 2) / period;
        (block as u64 * self.block_length() + k as u64).min(last)
    }

    /// Last pulse whose start is ≤ `t`, or `None` if `t` precedes pulse 0.
    pub fn pulse_at_or_before(&self, t: Ps) -> Option<u64> {
        if t < 0 {
            return None;
        }
        let last = self.pulse_count().saturating_sub(1);
        if t >= self.pulse_start(last) {
            return Some(last);
        }
        let block = self.block_starts.partition_point(|&s| s <= t) - 1;
        let within = t - self.block_starts[block];
        let k = within / self.block_period(block);
        Some(block as u64 * self.block_length() + k as u64)
    }

    fn lookup_window(&self, bits: &[bool]) -> Result<usize> {
        match self.windows.get(&window_key(bits)) {
            Some(Some(block)) => Ok(*block),
            Some(None) => Err(Error::ScheduleDegenerate(
                "observed block window matches several schedule positions".into(),
            )),
            None => Err(Error::SyncFailure(
                "observed block window does not occur in the schedule".into(),
            )),
        }
    }
}

fn window_key(bits: &[bool]) -> u32 {
    bits.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32)
}

/// Pulse numbers `0..` with start times covering `[0, duration)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseTrain {
    pub starts: Vec<Ps>,
}

impl PulseTrain {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, Ps)> + '_ {
        self.starts.iter().enumerate().map(|(n, &s)| (n as u64, s))
    }
}

/// All pulses of `schedule` starting before `duration_s`.
pub fn build_pulse_train(schedule: &PulseSchedule, duration_s: f64) -> Result<PulseTrain> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "duration must be > 0 s, got {duration_s}"
        )));
    }
    let end = (duration_s * 1e12).round() as Ps;
    let capacity_end = schedule.pulse_start(schedule.pulse_count().saturating_sub(1));
    if end > capacity_end {
        return Err(Error::InvalidArgument(format!(
            "duration {duration_s} s exceeds the schedule capacity of {:.3} s",
            capacity_end as f64 * 1e-12
        )));
    }
    let mut starts = Vec::with_capacity((end / schedule.base_ps.min(schedule.alt_ps)) as usize + 1);
    let mut n = 0u64;
    let mut t = 0;
    while t < end {
        starts.push(t);
        t += schedule.period_after(n);
        n += 1;
    }
    Ok(PulseTrain { starts })
}

/// Least-squares clock model `local = (1 + drift)·true + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockFit {
    pub offset_ps: f64,
    pub drift: f64,
    pub residual_rms_ps: f64,
}

impl ClockFit {
    pub fn predict(&self, true_ps: Ps) -> f64 {
        self.offset_ps + (1.0 + self.drift) * true_ps as f64
    }

    pub fn invert(&self, local_ps: Ps) -> f64 {
        (local_ps as f64 - self.offset_ps) / (1.0 + self.drift)
    }
}

/// Ordinary least squares of local tag time against scheduled pulse start.
pub fn fit_clock(pairs: &[(Ps, u64)], schedule: &PulseSchedule) -> Result<ClockFit> {
    if pairs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "clock fit needs ≥ 2 matched tags, got {}",
            pairs.len()
        )));
    }
    // Work relative to the first pair to keep the sums well conditioned.
    let (y0, p0) = pairs[0];
    let x0 = schedule.pulse_start(p0);
    let n = pairs.len() as f64;
    let xs: Vec<f64> = pairs
        .iter()
        .map(|&(_, p)| (schedule.pulse_start(p) - x0) as f64)
        .collect();
    let ys: Vec<f64> = pairs.iter().map(|&(y, _)| (y - y0) as f64).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::InsufficientData(
            "clock fit needs tags from at least two distinct pulses".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept_rel = my - slope * mx;
    let ss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept_rel + slope * x);
            r * r
        })
        .sum();
    Ok(ClockFit {
        offset_ps: y0 as f64 + intercept_rel - slope * x0 as f64,
        drift: slope - 1.0,
        residual_rms_ps: (ss / n).sqrt(),
    })
}

/// Trigger tags of one station mapped onto absolute pulse numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct NumberingResult {
    /// Pulse number of each input tag, `None` for tags that fit no pulse.
    pub pulses: Vec<Option<u64>>,
    pub clock: ClockFit,
    pub unmatched_count: usize,
}

impl NumberingResult {
    pub fn matched(&self) -> impl Iterator<Item = (usize, u64)> + '_ {
        self.pulses
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|p| (i, p)))
    }
}

/// Assign absolute pulse numbers to a station's trigger stream and fit its
/// clock against the schedule.
///
/// Gaps are rounded to a whole number of pulses, single-pulse gaps are
/// classified as base or alternate period, the block phase is voted from
/// period transitions, and the first `W` observed blocks are looked up in the
/// schedule. The numbering is then refined against the fitted clock.
pub fn recover_numbering(tags: &[u64], schedule: &PulseSchedule) -> Result<NumberingResult> {
    let base = schedule.base_ps;
    let alt = schedule.alt_ps;
    if base == alt {
        return Err(Error::ScheduleDegenerate(
            "unmodulated schedule carries no numbering information".into(),
        ));
    }
    let len = schedule.block_length();
    let w = schedule.params.window_blocks as u64;
    if (tags.len() as u64) < (w + 1) * len {
        return Err(Error::SyncFailure(format!(
            "{} trigger tags cover fewer than {} blocks",
            tags.len(),
            w + 1
        )));
    }
    if let Some(i) = tags.windows(2).position(|p| p[1] <= p[0]) {
        return Err(Error::InvalidArgument(format!(
            "trigger tags not strictly ascending at index {}",
            i + 1
        )));
    }
    let t: Vec<Ps> = tags.iter().map(|&x| x as Ps).collect();

    // 1. Pulse offsets of every tag relative to the first, and known gap bits.
    let mid = (base + alt) / 2;
    let (lo, hi) = (base.min(alt), base.max(alt));
    let mut positions = Vec::with_capacity(t.len());
    let mut bits: Vec<Option<bool>> = Vec::with_capacity(t.len() - 1);
    let mut c = 0u64;
    positions.push(0);
    for pair in t.windows(2) {
        let gap = pair[1] - pair[0];
        let m = ((gap + mid / 2) / mid).max(1) as u64;
        bits.push((m == 1).then_some(gap > (lo + hi) / 2).map(|b| b == (alt > base)));
        c += m;
        positions.push(c);
    }

    // 2. Block phase from period transitions between adjacent single gaps.
    let mut votes: HashMap<u64, usize> = HashMap::new();
    for i in 0..bits.len().saturating_sub(1) {
        if let (Some(b0), Some(b1)) = (bits[i], bits[i + 1]) {
            if b0 != b1 {
                let boundary = positions[i + 1];
                *votes.entry((len - boundary % len) % len).or_default() += 1;
            }
        }
    }
    let phase = votes
        .iter()
        .max_by_key(|(p, n)| (**n, std::cmp::Reverse(**p)))
        .map(|(p, _)| *p)
        .ok_or_else(|| Error::SyncFailure("no period transitions observed".into()))?;

    // 3. Majority bit of each observed block, then the first run of W blocks.
    let n_blocks = ((phase + c) / len + 1) as usize;
    let mut block_votes = vec![0i64; n_blocks];
    for (i, bit) in bits.iter().enumerate() {
        if let Some(b) = bit {
            let rb = ((phase + positions[i]) / len) as usize;
            block_votes[rb] += if *b { 1 } else { -1 };
        }
    }
    let first = (0..n_blocks.saturating_sub(w as usize - 1))
        .find(|&j| block_votes[j..j + w as usize].iter().all(|&v| v != 0))
        .ok_or_else(|| Error::SyncFailure(format!("no {w} consecutive decodable blocks")))?;
    let window: Vec<bool> = block_votes[first..first + w as usize]
        .iter()
        .map(|&v| v > 0)
        .collect();
    let block = schedule.lookup_window(&window)?;
    if block < first {
        return Err(Error::SyncFailure(
            "alignment places the stream before pulse 0".into(),
        ));
    }
    let start_pulse = (block - first) as u64 * len + phase;

    // 4. Check every known gap against the schedule.
    let mut known = 0usize;
    let mut mismatched = 0usize;
    for (i, bit) in bits.iter().enumerate() {
        if let Some(b) = bit {
            let n = start_pulse + positions[i];
            if n >= schedule.pulse_count() {
                return Err(Error::SyncFailure(
                    "stream extends beyond the schedule".into(),
                ));
            }
            known += 1;
            mismatched += (schedule.bit_after(n) != *b) as usize;
        }
    }
    if mismatched * 100 > known {
        return Err(Error::SyncFailure(format!(
            "{mismatched} of {known} gaps disagree with the aligned schedule"
        )));
    }

    // 5. Fit the clock and renumber every tag against the fit.
    let pairs: Vec<(Ps, u64)> = t
        .iter()
        .zip(&positions)
        .map(|(&x, &p)| (x, start_pulse + p))
        .collect();
    let mut clock = fit_clock(&pairs, schedule)?;
    let tolerance = lo / 4;
    let mut pulses = vec![None; t.len()];
    for _ in 0..2 {
        let mut last: Option<u64> = None;
        let mut matched = Vec::with_capacity(t.len());
        for (i, &x) in t.iter().enumerate() {
            let est = clock.invert(x).round() as Ps;
            let n = schedule.nearest_pulse(est);
            let residual = x as f64 - clock.predict(schedule.pulse_start(n));
            let ok = residual.abs() < tolerance as f64 && last.is_none_or(|l| n > l);
            pulses[i] = ok.then_some(n);
            if ok {
                last = Some(n);
                matched.push((x, n));
            }
        }
        clock = fit_clock(&matched, schedule)?;
    }
    let unmatched_count = pulses.iter().filter(|p| p.is_none()).count();
    Ok(NumberingResult {
        pulses,
        clock,
        unmatched_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn lfsr_orders_are_maximal() {
        for &(order, _) in LFSR_TAPS.iter().filter(|(o, _)| *o <= 20) {
            let mut lfsr = Lfsr::new(order, 1).unwrap();
            let start = lfsr.state();
            let mut period = 0u64;
            loop {
                lfsr.next_bit();
                period += 1;
                if lfsr.state() == start {
                    break;
                }
            }
            assert_eq!(period, (1u64 << order) - 1, "order {order}");
        }
    }

    #[test]
    fn same_seed_same_pattern() {
        let p = ScheduleParams::default();
        let a = build_schedule(&p).unwrap();
        let b = build_schedule(&p).unwrap();
        assert_eq!(a.pattern(), b.pattern());
        let other = build_schedule(&ScheduleParams { seed: 7, ..p }).unwrap();
        assert_ne!(a.pattern(), other.pattern());
    }

    #[test]
    fn equal_periods_are_rejected() {
        let p = ScheduleParams::with_periods(2000.0, 2000.0);
        assert!(matches!(build_schedule(&p), Err(Error::ScheduleDegenerate(_))));
    }

    #[test]
    fn capacity_beyond_lfsr_period_is_degenerate() {
        let p = ScheduleParams {
            window_blocks: 8,
            capacity_blocks: Some(10_000),
            ..Default::default()
        };
        assert!(matches!(build_schedule(&p), Err(Error::ScheduleDegenerate(_))));
    }

    #[test]
    fn ten_thousand_blocks_have_distinct_windows() {
        let p = ScheduleParams {
            capacity_blocks: Some(10_000),
            ..Default::default()
        };
        let s = build_schedule(&p).unwrap();
        let w = p.window_blocks as usize;
        let distinct: HashSet<&[bool]> = s.pattern().windows(w).collect();
        assert_eq!(distinct.len(), 10_000 - w + 1);
    }

    #[test]
    fn constant_train_counts() {
        let s = PulseSchedule::constant(2000.0, 500.0, 64).unwrap();
        let train = build_pulse_train(&s, 0.01).unwrap();
        assert_eq!(train.len(), 5000);
        assert!(train.starts.windows(2).all(|p| p[1] - p[0] == 2_000_000));

        let s = PulseSchedule::constant(2000.0, 500.0, 60_000).unwrap();
        assert_eq!(build_pulse_train(&s, 30.0).unwrap().len(), 15_000_000);
    }

    #[test]
    fn two_block_schedule_gaps() {
        let params = ScheduleParams {
            block_length: 5,
            ..Default::default()
        };
        let s = PulseSchedule::from_pattern(params, vec![false, true, false, true]).unwrap();
        let train = build_pulse_train(&s, 30e-6).unwrap();
        let gaps: Vec<Ps> = train.starts.windows(2).map(|p| p[1] - p[0]).collect();
        let expected: Vec<Ps> = [2_000_000; 5]
            .into_iter()
            .chain([2_100_000; 5])
            .cycle()
            .take(gaps.len())
            .collect();
        assert_eq!(gaps, expected);
    }

    #[test]
    fn non_positive_duration_is_invalid() {
        let s = build_schedule(&ScheduleParams::default()).unwrap();
        assert!(matches!(build_pulse_train(&s, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_pulse_train(&s, -1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn pulse_lookup_agrees_with_train() {
        let s = build_schedule(&ScheduleParams::default()).unwrap();
        let train = build_pulse_train(&s, 0.05).unwrap();
        for (n, start) in train.iter().step_by(97) {
            assert_eq!(s.pulse_start(n), start);
            assert_eq!(s.nearest_pulse(start + 400_000), n);
            assert_eq!(s.pulse_at_or_before(start + 1_500_000), Some(n));
        }
    }

    #[test]
    fn fit_clock_exact_line() {
        let s = build_schedule(&ScheduleParams::default()).unwrap();
        let pairs: Vec<(Ps, u64)> = (0..1000u64)
            .map(|n| (s.pulse_start(n * 37) + 5_000, n * 37))
            .collect();
        let fit = fit_clock(&pairs, &s).unwrap();
        assert!(fit.residual_rms_ps < 1e-6);
        assert!(fit.drift.abs() < 1e-15);
        assert!((fit.offset_ps - 5_000.0).abs() < 1e-6);
    }

    #[test]
    fn fit_clock_recovers_offset_and_drift() {
        let s = build_schedule(&ScheduleParams::default()).unwrap();
        let (offset, drift) = (123_456.0, 10e-6);
        let pairs: Vec<(Ps, u64)> = (0..5000u64)
            .map(|n| {
                let x = s.pulse_start(n * 100) as f64;
                ((offset + (1.0 + drift) * x).round() as Ps, n * 100)
            })
            .collect();
        let fit = fit_clock(&pairs, &s).unwrap();
        assert!(((fit.offset_ps - offset) / offset).abs() < 1e-6, "{}", fit.offset_ps);
        assert!(((fit.drift - drift) / drift).abs() < 1e-6, "{}", fit.drift);
    }

    #[test]
    fn fit_clock_needs_two_pairs() {
        let s = build_schedule(&ScheduleParams::default()).unwrap();
        assert!(matches!(fit_clock(&[(0, 0)], &s), Err(Error::InsufficientData(_))));
    }

    fn ideal_tags(s: &PulseSchedule, first: u64, count: u64, offset: Ps, drift: f64) -> Vec<u64> {
        (first..first + count)
            .map(|n| {
                let x = s.pulse_start(n) as f64;
                (offset as f64 + (1.0 + drift) * x).round() as u64
            })
            .collect()
    }

    #[test]
    fn identity_numbering_without_drift() {
        let s = build_schedule(&ScheduleParams::default()).unwrap();
        let tags = ideal_tags(&s, 0, 20 * 256, 0, 0.0);
        let r = recover_numbering(&tags, &s).unwrap();
        assert_eq!(r.unmatched_count, 0);
        for (i, p) in r.pulses.iter().enumerate() {
            assert_eq!(*p, Some(i as u64));
        }
        assert!(r.clock.drift.abs() < 1e-12);
    }

    #[test]
    fn mid_stream_start_with_drift() {
        let s = build_schedule(&ScheduleParams::default()).unwrap();
        let first = 123_457;
        let tags = ideal_tags(&s, first, 30 * 256, 9_876_543_210, 50e-6);
        let r = recover_numbering(&tags, &s).unwrap();
        for (i, p) in r.pulses.iter().enumerate() {
            assert_eq!(*p, Some(first + i as u64));
        }
        assert!((r.clock.drift - 50e-6).abs() < 1e-9);
    }

    #[test]
    fn shift_changes_only_offset() {
        let s = build_schedule(&ScheduleParams::default()).unwrap();
        let tags = ideal_tags(&s, 1000, 20 * 256, 1_000_000, -20e-6);
        let shifted: Vec<u64> = tags.iter().map(|t| t + 777_777_777).collect();
        let a = recover_numbering(&tags, &s).unwrap();
        let b = recover_numbering(&shifted, &s).unwrap();
        assert_eq!(a.pulses, b.pulses);
        assert!((a.clock.drift - b.clock.drift).abs() < 1e-12);
        assert!((b.clock.offset_ps - a.clock.offset_ps - 777_777_777.0).abs() < 1e-3);
    }

    #[test]
    fn ambiguous_pattern_is_degenerate() {
        let params = ScheduleParams {
            block_length: 16,
            window_blocks: 4,
            ..Default::default()
        };
        let pattern: Vec<bool> = (0..200).map(|i| i % 2 == 0).collect();
        let s = PulseSchedule::from_pattern(params, pattern).unwrap();
        let tags = ideal_tags(&s, 0, 16 * 20, 0, 0.0);
        assert!(matches!(recover_numbering(&tags, &s), Err(Error::ScheduleDegenerate(_))));
    }

    #[test]
    fn too_few_tags_fail() {
        let s = build_schedule(&ScheduleParams::default()).unwrap();
        let tags = ideal_tags(&s, 0, 100, 0, 0.0);
        assert!(matches!(recover_numbering(&tags, &s), Err(Error::SyncFailure(_))));
    }
}
