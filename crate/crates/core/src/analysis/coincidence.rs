//! Same-pulse pairing of the two stations' photon tags.

use serde::{Deserialize, Serialize};

use super::assign::NumberedTag;
use crate::model::{Channel, Detector, Outcome, Ps, Station};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoincidenceRecord {
    pub pulse: u64,
    pub outcome_a: Outcome,
    pub outcome_b: Outcome,
    /// Photon tag minus same-pulse T3A, ps.
    pub t_rel_a: Ps,
    /// Photon tag minus same-pulse T3B, ps.
    pub t_rel_b: Ps,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchOutcome {
    pub records: Vec<CoincidenceRecord>,
    /// Pulses seen at both stations but dropped because one station had more
    /// than one photon tag in it.
    pub discarded_pulses: usize,
}

/// Per-detector offsets subtracted from `t_rel` before the window test,
/// indexed by [`Detector::index`].
pub type ChannelOffsets = [Ps; 4];

fn outcome(channel: Channel) -> Outcome {
    channel.outcome().expect("photon channel")
}

fn corrected(tag: &NumberedTag, station: Station, offsets: &ChannelOffsets) -> Ps {
    tag.t_rel - offsets[Detector::new(station, outcome(tag.channel)).index()]
}

fn pulse_group(tags: &[NumberedTag], from: usize) -> usize {
    let pulse = tags[from].pulse;
    from + tags[from..].partition_point(|t| t.pulse == pulse)
}

/// Pair photon tags of A and B that share a pulse number.
///
/// Both inputs must be sorted by pulse. A pulse pairs only when each station
/// has exactly one tag in it and the offset-corrected times agree within
/// `window_ps`; a pulse in which either station has several tags is
/// discarded and counted.
pub fn match_coincidences(
    a: &[NumberedTag],
    b: &[NumberedTag],
    window_ps: Ps,
    offsets: &ChannelOffsets,
) -> MatchOutcome {
    debug_assert!(a.windows(2).all(|p| p[0].pulse <= p[1].pulse));
    debug_assert!(b.windows(2).all(|p| p[0].pulse <= p[1].pulse));
    let mut out = MatchOutcome::default();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let (pa, pb) = (a[i].pulse, b[j].pulse);
        if pa < pb {
            i = pulse_group(a, i);
            continue;
        }
        if pb < pa {
            j = pulse_group(b, j);
            continue;
        }
        let (ie, je) = (pulse_group(a, i), pulse_group(b, j));
        if ie - i > 1 || je - j > 1 {
            out.discarded_pulses += 1;
        } else {
            let (ta, tb) = (&a[i], &b[j]);
            let diff = corrected(ta, Station::A, offsets) - corrected(tb, Station::B, offsets);
            if diff.abs() <= window_ps {
                out.records.push(CoincidenceRecord {
                    pulse: pa,
                    outcome_a: outcome(ta.channel),
                    outcome_b: outcome(tb.channel),
                    t_rel_a: ta.t_rel,
                    t_rel_b: tb.t_rel,
                });
            }
        }
        i = ie;
        j = je;
    }
    out
}
