//! Coincidence time profiles relative to the pump pulse.

use serde::{Deserialize, Serialize};

use super::assign::NumberedTag;
use super::coincidence::CoincidenceRecord;
use crate::error::{Error, Result};
use crate::model::{ps_to_ns, Outcome};

/// Where the pump pulse's leading edge is drawn, in display ns.
pub const PULSE_REFERENCE_NS: f64 = 214.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramParams {
    pub slot_ns: f64,
    /// Trigger-minus-pump-edge lag: a photon with no extra delay sits at the
    /// pulse reference.
    pub nominal_tdif_ns: f64,
    pub pulse_width_ns: f64,
    /// Span shown before the pulse edge.
    pub before_ns: f64,
    /// Span shown after the pulse's trailing edge.
    pub after_ns: f64,
}

impl Default for HistogramParams {
    fn default() -> Self {
        HistogramParams {
            slot_ns: 2.0,
            nominal_tdif_ns: 65.0,
            pulse_width_ns: 500.0,
            before_ns: 100.0,
            after_ns: 200.0,
        }
    }
}

/// Counts of `(+,+)` coincidences per slot, separately by the A and B tag
/// times, with the pump pulse and photon singles for overlay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    pub slot_ns: f64,
    /// Display time of the first slot's lower edge.
    pub start_ns: f64,
    pub counts_a: Vec<u64>,
    pub counts_b: Vec<u64>,
    /// Photon singles of both stations per slot.
    pub singles: Vec<u64>,
    /// Records outside the shown span, per station: `[below, above]`.
    pub outside_a: [u64; 2],
    pub outside_b: [u64; 2],
}

impl CoincidenceHistogram {
    pub fn slots(&self) -> usize {
        self.counts_a.len()
    }

    pub fn slot_start_ns(&self, i: usize) -> f64 {
        self.start_ns + i as f64 * self.slot_ns
    }

    /// Pump pulse square profile (1 inside the pulse) for a slot.
    pub fn pump_profile(&self, i: usize, pulse_width_ns: f64) -> f64 {
        let mid = self.slot_start_ns(i) + 0.5 * self.slot_ns;
        let inside = mid >= PULSE_REFERENCE_NS && mid < PULSE_REFERENCE_NS + pulse_width_ns;
        if inside {
            1.0
        } else {
            0.0
        }
    }

    pub fn total_a(&self) -> u64 {
        self.counts_a.iter().sum::<u64>() + self.outside_a.iter().sum::<u64>()
    }

    pub fn total_b(&self) -> u64 {
        self.counts_b.iter().sum::<u64>() + self.outside_b.iter().sum::<u64>()
    }

    /// Merge another histogram with identical binning.
    pub fn accumulate(&mut self, other: &CoincidenceHistogram) {
        debug_assert_eq!(self.slots(), other.slots());
        for (x, y) in [
            (&mut self.counts_a, &other.counts_a),
            (&mut self.counts_b, &other.counts_b),
            (&mut self.singles, &other.singles),
        ] {
            x.iter_mut().zip(y).for_each(|(x, y)| *x += y);
        }
        for k in 0..2 {
            self.outside_a[k] += other.outside_a[k];
            self.outside_b[k] += other.outside_b[k];
        }
    }
}

enum Slot {
    Below,
    In(usize),
    Above,
}

pub fn histogram_coincidences(
    records: &[CoincidenceRecord],
    singles: &[&[NumberedTag]],
    params: &HistogramParams,
) -> Result<CoincidenceHistogram> {
    if !(params.slot_ns.is_finite() && params.slot_ns > 0.0) {
        return Err(Error::InvalidArgument(format!("slot must be > 0 ns, got {}", params.slot_ns)));
    }
    let start_ns = PULSE_REFERENCE_NS - params.before_ns;
    let span = params.before_ns + params.pulse_width_ns + params.after_ns;
    let n = (span / params.slot_ns).ceil().max(1.0) as usize;
    let slot_of = |t_rel_ps: i64| {
        let display = PULSE_REFERENCE_NS + ps_to_ns(t_rel_ps) + params.nominal_tdif_ns;
        let x = ((display - start_ns) / params.slot_ns).floor();
        if x < 0.0 {
            Slot::Below
        } else if x >= n as f64 {
            Slot::Above
        } else {
            Slot::In(x as usize)
        }
    };
    let mut h = CoincidenceHistogram {
        slot_ns: params.slot_ns,
        start_ns,
        counts_a: vec![0; n],
        counts_b: vec![0; n],
        singles: vec![0; n],
        outside_a: [0; 2],
        outside_b: [0; 2],
    };
    for r in records {
        if (r.outcome_a, r.outcome_b) != (Outcome::Plus, Outcome::Plus) {
            continue;
        }
        for (t, counts, outside) in [
            (r.t_rel_a, &mut h.counts_a, &mut h.outside_a),
            (r.t_rel_b, &mut h.counts_b, &mut h.outside_b),
        ] {
            match slot_of(t) {
                Slot::Below => outside[0] += 1,
                Slot::In(i) => counts[i] += 1,
                Slot::Above => outside[1] += 1,
            }
        }
    }
    for tag in singles.iter().flat_map(|s| s.iter()) {
        if let Slot::In(i) = slot_of(tag.t_rel) {
            h.singles[i] += 1;
        }
    }
    Ok(h)
}
