//! Per-run pipeline, session aggregation and the near/far comparison.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::assign::{channel_offsets, number_station, NumberedStation};
use super::chsh::{correlation_e, pooled_chsh, tally_outcomes, ChshEstimate, OutcomeCounts, SETTINGS_TOLERANCE};
use super::coincidence::match_coincidences;
use super::edge::{fit_leading_edges, fit_leading_edges_with_sigma, EdgeFit};
use super::histogram::{histogram_coincidences, CoincidenceHistogram, HistogramParams};
use super::tdif::{collapse_time_bound, tdif_statistics, CollapseBound, TdifStats};
use crate::error::{Error, Result};
use crate::model::{light_time, ns_to_ps, ps_to_ns, Detector, SessionConfig, SettingsPair, Station};
use crate::simulator::{RunStreams, Simulator};
use crate::syncproto::{ClockFit, PulseSchedule, ScheduleParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisParams {
    /// Coincidence window after per-channel offset correction.
    pub window_ns: f64,
    /// Histogram slot width.
    pub slot_ns: f64,
    /// Trigger-minus-photon delay expected with no collapse delay.
    pub nominal_tdif_ns: f64,
    /// A violation needs `S > 2 + violation_sigmas·σ_S`.
    pub violation_sigmas: f64,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        AnalysisParams {
            window_ns: 4.0,
            slot_ns: 2.0,
            nominal_tdif_ns: 65.0,
            violation_sigmas: 3.0,
        }
    }
}

impl AnalysisParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("window_ns", self.window_ns), ("slot_ns", self.slot_ns)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")));
            }
        }
        if !self.nominal_tdif_ns.is_finite() {
            return Err(Error::InvalidArgument("nominal_tdif_ns must be finite".into()));
        }
        Ok(())
    }
}

/// Identification of one run within a session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub index: usize,
    pub experiment: usize,
    pub settings: SettingsPair,
    pub duration_s: f64,
}

/// Session-wide facts the analysis needs besides the tag streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub separation_m: f64,
    pub schedule: ScheduleParams,
}

impl SessionInfo {
    pub fn from_config(config: &SessionConfig) -> Self {
        SessionInfo {
            session_id: config.session_id.clone(),
            separation_m: config.geometry.separation_m,
            schedule: config.schedule.clone(),
        }
    }
}

/// Run list of a session config in run-index order.
pub fn run_metas(config: &SessionConfig) -> Vec<RunMeta> {
    let mut out = Vec::new();
    for (experiment, e) in config.experiments.iter().enumerate() {
        for run in &e.runs {
            out.push(RunMeta {
                index: out.len(),
                experiment,
                settings: run.settings,
                duration_s: run.duration_s,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAnalysis {
    pub meta: RunMeta,
    /// Photon tags per detector ([`Detector::index`] order).
    pub singles: [usize; 4],
    pub edges: [Option<EdgeFit>; 4],
    /// Edge smoothing was taken from the session rather than fitted.
    pub session_sigma: bool,
    /// Trigger-minus-photon delay at the pulse leading edge, ns.
    pub tdif_ns: [Option<f64>; 4],
    pub counts: OutcomeCounts,
    pub coincidences: usize,
    pub discarded_pulses: usize,
    pub clocks: [ClockFit; 2],
    pub unmatched_triggers: [usize; 2],
    pub unassigned_photons: [usize; 2],
    #[serde(skip)]
    pub histogram: Option<CoincidenceHistogram>,
}

/// Number both stations, locate each channel's pulse edge, pair the stations
/// and tally outcomes.
pub fn analyze_run(
    meta: RunMeta,
    streams: &RunStreams,
    schedule: &PulseSchedule,
    params: &AnalysisParams,
) -> Result<RunAnalysis> {
    analyze_run_with_sigma(meta, streams, schedule, params, None)
}

/// As [`analyze_run`], optionally holding the edge smoothing at `sigma_ps`.
pub fn analyze_run_with_sigma(
    meta: RunMeta,
    streams: &RunStreams,
    schedule: &PulseSchedule,
    params: &AnalysisParams,
    sigma_ps: Option<f64>,
) -> Result<RunAnalysis> {
    params.validate()?;
    let numbered: Vec<NumberedStation> = Station::BOTH
        .iter()
        .map(|&s| number_station(s, streams.station(s), schedule))
        .collect::<Result<_>>()?;
    let (a, b) = (&numbered[0], &numbered[1]);

    let t_rel: Vec<Vec<i64>> = Detector::ALL
        .iter()
        .map(|det| channel_offsets(&numbered[det.station.index()].tags, det.channel()))
        .collect();
    let singles = [0, 1, 2, 3].map(|i| t_rel[i].len());
    let slices: Vec<&[i64]> = t_rel.iter().map(Vec::as_slice).collect();
    let fits = match sigma_ps {
        Some(sigma) => fit_leading_edges_with_sigma(&slices, schedule.pulse_width_ps(), sigma),
        None => fit_leading_edges(&slices, schedule.pulse_width_ps()),
    };
    let edges = [fits[0], fits[1], fits[2], fits[3]];
    let offsets = edges.map(|e| e.map_or(0, |e| e.edge_ps.round() as i64));
    let matched = match_coincidences(&a.tags, &b.tags, ns_to_ps(params.window_ns), &offsets);
    let histogram = histogram_coincidences(
        &matched.records,
        &[&a.tags, &b.tags],
        &HistogramParams {
            slot_ns: params.slot_ns,
            nominal_tdif_ns: params.nominal_tdif_ns,
            pulse_width_ns: ps_to_ns(schedule.pulse_width_ps()),
            ..Default::default()
        },
    )?;
    Ok(RunAnalysis {
        meta,
        singles,
        edges,
        session_sigma: sigma_ps.is_some(),
        tdif_ns: edges.map(|e| e.map(|e| -e.edge_ps / 1000.0)),
        counts: tally_outcomes(&matched.records),
        coincidences: matched.records.len(),
        discarded_pulses: matched.discarded_pulses,
        clocks: [a.numbering.clock, b.numbering.clock],
        unmatched_triggers: [a.numbering.unmatched_count, b.numbering.unmatched_count],
        unassigned_photons: [a.unassigned, b.unassigned],
        histogram: Some(histogram),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentChsh {
    pub experiment: usize,
    pub chsh: Option<ChshEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session_id: String,
    pub separation_m: f64,
    pub schedule: ScheduleParams,
    pub params: AnalysisParams,
    /// Pooled over all runs; `None` if a CHSH setting had no coincidences.
    pub chsh: Option<ChshEstimate>,
    pub chsh_by_experiment: Vec<ExperimentChsh>,
    pub tdif: TdifStats,
    pub tc_bound: Option<CollapseBound>,
    pub coincidences: usize,
    pub discarded_pulses: usize,
    pub violation: bool,
    /// "violation" or "no violation".
    pub verdict_text: String,
    pub runs: Vec<RunAnalysis>,
    /// Run shown in the histogram, and its histogram.
    pub histogram_run: usize,
    pub histogram: CoincidenceHistogram,
}

impl SessionReport {
    /// Combine per-run analyses (in run order).
    pub fn from_runs(info: &SessionInfo, params: &AnalysisParams, mut runs: Vec<RunAnalysis>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::InsufficientData(format!("session {} has no runs", info.session_id)));
        }
        runs.sort_by_key(|r| r.meta.index);
        let chsh = pooled_chsh(runs.iter().map(|r| (r.meta.settings, &r.counts))).ok();
        let mut experiments: Vec<usize> = runs.iter().map(|r| r.meta.experiment).collect();
        experiments.dedup();
        let chsh_by_experiment = experiments
            .iter()
            .map(|&x| ExperimentChsh {
                experiment: x,
                chsh: pooled_chsh(
                    runs.iter()
                        .filter(|r| r.meta.experiment == x)
                        .map(|r| (r.meta.settings, &r.counts)),
                )
                .ok(),
            })
            .collect();
        let per_run: Vec<[Option<f64>; 4]> = runs.iter().map(|r| r.tdif_ns).collect();
        let tdif = tdif_statistics(&per_run)?;
        let tc_bound = collapse_time_bound(&tdif, params.nominal_tdif_ns).ok();
        let violation = chsh.is_some_and(|c| c.violates(params.violation_sigmas));

        let shown_settings = SettingsPair::new(PI / 4.0, PI / 8.0);
        let shown = runs
            .iter()
            .position(|r| r.meta.settings.approx_eq(&shown_settings, SETTINGS_TOLERANCE))
            .unwrap_or(0);
        let histogram = runs[shown]
            .histogram
            .clone()
            .ok_or_else(|| Error::InsufficientData("run histogram missing".into()))?;
        Ok(SessionReport {
            session_id: info.session_id.clone(),
            separation_m: info.separation_m,
            schedule: info.schedule.clone(),
            params: *params,
            chsh,
            chsh_by_experiment,
            tdif,
            tc_bound,
            coincidences: runs.iter().map(|r| r.coincidences).sum(),
            discarded_pulses: runs.iter().map(|r| r.discarded_pulses).sum(),
            violation,
            verdict_text: if violation { "violation" } else { "no violation" }.to_string(),
            histogram_run: runs[shown].meta.index,
            histogram,
            runs,
        })
    }

    /// Correlation of every run on its own, in run order.
    pub fn run_correlations(&self) -> Vec<(RunMeta, Option<f64>)> {
        self.runs
            .iter()
            .map(|r| (r.meta, correlation_e(&r.counts).ok().map(|c| c.value)))
            .collect()
    }
}

/// A run's fitted smoothing this far below the session median is taken as
/// collapsed.
const SIGMA_COLLAPSE_RATIO: f64 = 4.0;
/// Runs needed before a session median smoothing is trusted.
const SIGMA_MIN_RUNS: usize = 3;

fn run_sigma(run: &RunAnalysis) -> Option<f64> {
    run.edges.iter().flatten().map(|e| e.sigma_ps).next()
}

fn median_sigma(runs: &[RunAnalysis]) -> Option<f64> {
    let mut sigmas: Vec<f64> = runs.iter().filter_map(run_sigma).collect();
    if sigmas.len() < SIGMA_MIN_RUNS {
        return None;
    }
    sigmas.sort_by(f64::total_cmp);
    Some(sigmas[sigmas.len() / 2])
}

/// Analyse every run (in parallel) and aggregate. Runs whose edge smoothing
/// collapsed are analysed again with the session median. `load` supplies
/// the streams of a run; errors are tagged with the run index.
pub fn analyze_session<F>(
    info: &SessionInfo,
    runs: &[RunMeta],
    load: F,
    params: &AnalysisParams,
) -> Result<SessionReport>
where
    F: Fn(&RunMeta) -> Result<RunStreams> + Sync,
{
    params.validate()?;
    if runs.is_empty() {
        return Err(Error::InsufficientData(format!("session {} has no runs", info.session_id)));
    }
    let schedule = crate::syncproto::build_schedule(&info.schedule)?;
    let analyse = |meta: &RunMeta, sigma: Option<f64>| {
        load(meta)
            .and_then(|streams| analyze_run_with_sigma(*meta, &streams, &schedule, params, sigma))
            .map_err(|e| e.in_run(meta.index))
    };
    let mut analysed = runs
        .par_iter()
        .map(|meta| analyse(meta, None))
        .collect::<Result<Vec<_>>>()?;
    // Runs whose smoothing collapsed get the session median instead.
    if let Some(median) = median_sigma(&analysed) {
        let redo: Vec<usize> = (0..analysed.len())
            .filter(|&i| run_sigma(&analysed[i]).is_some_and(|s| s < median / SIGMA_COLLAPSE_RATIO))
            .collect();
        let refits = redo
            .par_iter()
            .map(|&i| analyse(&analysed[i].meta, Some(median)))
            .collect::<Result<Vec<_>>>()?;
        for (i, refit) in redo.into_iter().zip(refits) {
            analysed[i] = refit;
        }
    }
    SessionReport::from_runs(info, params, analysed)
}

/// Simulate and analyse a session without touching disk.
pub fn analyze_simulation(sim: &Simulator, params: &AnalysisParams) -> Result<SessionReport> {
    let config = sim.session();
    let configs: Vec<_> = config.runs().cloned().collect();
    analyze_session(
        &SessionInfo::from_config(config),
        &run_metas(config),
        |meta| sim.run(&configs[meta.index]).map(|r| r.streams),
        params,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftHypothesis {
    WaitForRemote,
    GatherAtW,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    LoopholeClosed,
    NoViolation,
    ShiftDetected { shift_ns: f64, matched: ShiftHypothesis },
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::LoopholeClosed => write!(f, "loophole closed"),
            Verdict::NoViolation => write!(f, "no violation"),
            Verdict::ShiftDetected { shift_ns, matched } => {
                let name = match matched {
                    ShiftHypothesis::WaitForRemote => "wait-for-remote",
                    ShiftHypothesis::GatherAtW => "gather-at-w",
                };
                write!(f, "shift detected: {shift_ns:.1} ns ({name})")
            }
            Verdict::Inconclusive => write!(f, "inconclusive"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelShift {
    pub detector: Detector,
    pub label: String,
    pub near_ns: f64,
    pub far_ns: f64,
    /// Far minus near.
    pub delta_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub verdict: Verdict,
    pub shifts: Vec<ChannelShift>,
    /// Mean extra photon delay at far relative to near, per station
    /// (near T_dif minus far T_dif), ns.
    pub station_delay_ns: [Option<f64>; 2],
    pub far_chsh: ChshEstimate,
    pub tolerance_ns: f64,
    /// Range of photon delay consistent with waiting for the remote collapse.
    pub wait_for_remote_ns: (f64, f64),
    /// Photon delay expected if collapse waits for the midpoint signal.
    pub gather_at_w_ns: f64,
}

fn same_timing(a: &ScheduleParams, b: &ScheduleParams) -> bool {
    a.base_period_ns == b.base_period_ns
        && a.alt_period_ns == b.alt_period_ns
        && a.block_length == b.block_length
        && a.pulse_width_ns == b.pulse_width_ns
}

/// Decide which of the outcomes open to a collapse-locality loophole the far
/// session shows relative to the near one.
pub fn compare_sessions(near: &SessionReport, far: &SessionReport, tolerance_ns: f64) -> Result<Comparison> {
    if !(tolerance_ns.is_finite() && tolerance_ns >= 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be ≥ 0, got {tolerance_ns}")));
    }
    if !same_timing(&near.schedule, &far.schedule) {
        return Err(Error::InvalidComparison("sessions use different pulse schedules".into()));
    }
    let near_set: Vec<Detector> = near.tdif.channels.iter().map(|c| c.detector).collect();
    let far_set: Vec<Detector> = far.tdif.channels.iter().map(|c| c.detector).collect();
    if near_set != far_set || near_set.is_empty() {
        return Err(Error::InvalidComparison(format!(
            "channel sets differ: near {near_set:?}, far {far_set:?}"
        )));
    }
    let far_chsh = far
        .chsh
        .ok_or_else(|| Error::InsufficientData("far session has no CHSH estimate".into()))?;

    let shifts: Vec<ChannelShift> = near
        .tdif
        .channels
        .iter()
        .zip(&far.tdif.channels)
        .map(|(n, f)| ChannelShift {
            detector: n.detector,
            label: n.label.clone(),
            near_ns: n.mean_ns,
            far_ns: f.mean_ns,
            delta_ns: f.mean_ns - n.mean_ns,
        })
        .collect();
    let station_delay_ns = Station::BOTH.map(|s| {
        let d: Vec<f64> = shifts
            .iter()
            .filter(|c| c.detector.station == s)
            .map(|c| -c.delta_ns)
            .collect();
        (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
    });

    let light_far = light_time(far.separation_m);
    let light_near = light_time(near.separation_m);
    let bound = near.tc_bound.map_or(0.0, |b| b.bound_ns);
    let wait = (light_far - bound - tolerance_ns, light_far + tolerance_ns);
    let gather = (light_far - light_near) / 2.0;

    let verdict = if !far_chsh.violates(far.params.violation_sigmas) {
        Verdict::NoViolation
    } else if shifts.iter().all(|c| c.delta_ns.abs() <= tolerance_ns) {
        Verdict::LoopholeClosed
    } else {
        let delay = station_delay_ns
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if delay >= wait.0 && delay <= wait.1 {
            Verdict::ShiftDetected {
                shift_ns: delay,
                matched: ShiftHypothesis::WaitForRemote,
            }
        } else if (delay - gather).abs() <= tolerance_ns {
            Verdict::ShiftDetected {
                shift_ns: delay,
                matched: ShiftHypothesis::GatherAtW,
            }
        } else {
            Verdict::Inconclusive
        }
    };
    Ok(Comparison {
        verdict,
        shifts,
        station_delay_ns,
        far_chsh,
        tolerance_ns,
        wait_for_remote_ns: wait,
        gather_at_w_ns: gather,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::chsh::Correlation;
    use crate::analysis::histogram::HistogramParams;

    fn report(separation_m: f64, means: [f64; 4], s: f64) -> SessionReport {
        let tdif = tdif_statistics(&[means.map(Some)]).unwrap();
        let c = Correlation { value: s / 4.0, sigma: 0.01, total: 10_000 };
        let e = [c, Correlation { value: -s / 4.0, ..c }, c, c];
        let params = AnalysisParams::default();
        SessionReport {
            session_id: format!("L{separation_m}"),
            separation_m,
            schedule: ScheduleParams::default(),
            params,
            chsh: Some(crate::analysis::chsh_statistic(e)),
            chsh_by_experiment: vec![],
            tc_bound: collapse_time_bound(&tdif, params.nominal_tdif_ns).ok(),
            tdif,
            coincidences: 0,
            discarded_pulses: 0,
            violation: true,
            verdict_text: "violation".into(),
            runs: vec![],
            histogram_run: 0,
            histogram: histogram_coincidences(&[], &[], &HistogramParams::default()).unwrap(),
        }
    }

    const NEAR: [f64; 4] = [56.5, 65.3, 60.0, 60.4];

    #[test]
    fn reference_columns_close_the_loophole() {
        let near = report(1.0, NEAR, 2.62);
        let far = report(24.0, [55.0, 64.0, 59.0, 59.0], 2.73);
        let cmp = compare_sessions(&near, &far, 4.0).unwrap();
        assert_eq!(cmp.verdict, Verdict::LoopholeClosed);
        assert!((cmp.shifts[0].delta_ns + 1.5).abs() < 1e-9);
    }

    #[test]
    fn no_violation_wins_over_shifts() {
        let near = report(1.0, NEAR, 2.62);
        let far = report(24.0, NEAR.map(|m| m - 72.0), 2.0);
        assert_eq!(compare_sessions(&near, &far, 4.0).unwrap().verdict, Verdict::NoViolation);
    }

    #[test]
    fn one_sided_delay_is_wait_for_remote() {
        let near = report(1.0, NEAR, 2.62);
        let far = report(24.0, [56.5, 65.3, 60.0 - 71.56, 60.4 - 71.56], 2.62);
        let cmp = compare_sessions(&near, &far, 4.0).unwrap();
        match cmp.verdict {
            Verdict::ShiftDetected { shift_ns, matched } => {
                assert_eq!(matched, ShiftHypothesis::WaitForRemote);
                assert!((shift_ns - 71.56).abs() < 1e-9);
            }
            v => panic!("{v:?}"),
        }
        assert!(cmp.station_delay_ns[0].unwrap().abs() < 1e-9);
    }

    #[test]
    fn symmetric_half_light_delay_is_gather_at_w() {
        let near = report(1.0, NEAR, 2.62);
        let d = (light_time(24.0) - light_time(1.0)) / 2.0;
        let far = report(24.0, NEAR.map(|m| m - d), 2.62);
        let cmp = compare_sessions(&near, &far, 4.0).unwrap();
        assert!(matches!(
            cmp.verdict,
            Verdict::ShiftDetected { matched: ShiftHypothesis::GatherAtW, .. }
        ));
        let far = report(24.0, NEAR.map(|m| m - 20.0), 2.62);
        assert_eq!(compare_sessions(&near, &far, 4.0).unwrap().verdict, Verdict::Inconclusive);
    }

    #[test]
    fn mismatches_are_invalid() {
        let near = report(1.0, NEAR, 2.62);
        let mut far = report(24.0, NEAR, 2.7);
        far.tdif.channels.pop();
        assert!(matches!(compare_sessions(&near, &far, 4.0), Err(Error::InvalidComparison(_))));
        let mut far = report(24.0, NEAR, 2.7);
        far.schedule.base_period_ns = 2400.0;
        assert!(matches!(compare_sessions(&near, &far, 4.0), Err(Error::InvalidComparison(_))));
    }

    #[test]
    fn empty_session_is_an_error() {
        let info = SessionInfo {
            session_id: "empty".into(),
            separation_m: 1.0,
            schedule: ScheduleParams::default(),
        };
        let err = analyze_session(&info, &[], |_| Ok(RunStreams::default()), &AnalysisParams::default());
        assert!(matches!(err, Err(Error::InsufficientData(_))));
    }
}
