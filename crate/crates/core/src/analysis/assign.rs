//! Photon tags placed on the pulse grid recovered from the trigger stream.

use crate::error::Result;
use crate::model::{Channel, Ps, Station};
use crate::simulator::StationStreams;
use crate::syncproto::{recover_numbering, NumberingResult, PulseSchedule};

/// A photon tag with its pulse number and its time relative to the trigger
/// tag of that pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct NumberedTag {
    pub pulse: u64,
    /// Photon tag minus the same-pulse T3 tag, in ps.
    pub t_rel: Ps,
    pub channel: Channel,
}

/// Numbered photon stream of one station plus the trigger numbering it was
/// derived from.
#[derive(Debug, Clone)]
pub struct NumberedStation {
    pub station: Station,
    /// Sorted by pulse, then `t_rel`.
    pub tags: Vec<NumberedTag>,
    pub numbering: NumberingResult,
    /// Photon tags that precede pulse 0 and could not be assigned.
    pub unassigned: usize,
}

/// How far before its trigger a photon may fall and still belong to the pulse:
/// half the dead interval between pulses.
pub fn assignment_lead_ps(schedule: &PulseSchedule) -> Ps {
    let short = schedule.base_period_ps().min(schedule.alt_period_ps());
    (short - schedule.pulse_width_ps()) / 2
}

/// Number the trigger stream of a station, then attach every photon tag to
/// the last pulse whose (fitted) trigger time minus the assignment lead does
/// not exceed it. A missing trigger tag is replaced by the fit's prediction.
pub fn number_station(
    station: Station,
    streams: &StationStreams,
    schedule: &PulseSchedule,
) -> Result<NumberedStation> {
    let numbering = recover_numbering(&streams.t3, schedule)?;
    let triggers: Vec<(u64, Ps)> = numbering
        .matched()
        .map(|(i, n)| (n, streams.t3[i] as Ps))
        .collect();
    let lead = assignment_lead_ps(schedule);
    let clock = numbering.clock;

    let mut tags = Vec::with_capacity(streams.t1.len() + streams.t2.len());
    let mut unassigned = 0;
    for channel in Channel::PHOTON {
        for &tag in streams.channel(channel) {
            let p = tag as Ps;
            let schedule_time = clock.invert(p + lead).floor() as Ps;
            let Some(pulse) = schedule.pulse_at_or_before(schedule_time) else {
                unassigned += 1;
                continue;
            };
            let trigger = match triggers.binary_search_by_key(&pulse, |&(n, _)| n) {
                Ok(i) => triggers[i].1,
                Err(_) => clock.predict(schedule.pulse_start(pulse)).round() as Ps,
            };
            tags.push(NumberedTag {
                pulse,
                t_rel: p - trigger,
                channel,
            });
        }
    }
    tags.sort_unstable();
    Ok(NumberedStation {
        station,
        tags,
        numbering,
        unassigned,
    })
}

/// Relative times of one channel's tags.
pub fn channel_offsets(tags: &[NumberedTag], channel: Channel) -> Vec<Ps> {
    tags.iter()
        .filter(|t| t.channel == channel)
        .map(|t| t.t_rel)
        .collect()
}
