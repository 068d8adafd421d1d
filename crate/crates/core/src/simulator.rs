//! Seeded generation of the six time-tag streams (T1/T2/T3 at A and B) of a run.
//!
//! Every random quantity is drawn from its own ChaCha stream derived from the
//! run seed, so the trigger streams do not depend on the collapse hypothesis
//! and the photon streams of two hypotheses differ only by the delays the
//! hypotheses add.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Geometric, Normal};

use crate::error::{Error, Result};
use crate::model::{
    light_time, nominal_path_times, ns_to_ps, splitmix64, ClockModel, CollapseHypothesis, Detector,
    Outcome, PathTimes, Ps, RunConfig, SessionConfig, SettingsPair, Station,
};
use crate::syncproto::{build_pulse_train, build_schedule, PulseSchedule, PulseTrain};

/// A pair emitted by the source during pump pulse `pulse_number`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmissionEvent {
    pub pulse_number: u64,
    pub t_emit: Ps,
}

/// A detector or trigger event on the true (laboratory) time axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawDetection {
    pub station: Station,
    pub channel: crate::model::Channel,
    pub t_true: Ps,
}

/// Independent random streams of one run.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Stream {
    Emission = 1,
    Outcome = 2,
    Detection = 3,
    Dark = 4,
    TriggerA = 5,
    TriggerB = 6,
}

fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(stream as u64)))
}

/// Each pulse independently emits at most one pair with probability
/// `pair_prob`, at a uniform time within the pulse window.
pub fn sample_pair_emissions<R: Rng + ?Sized>(
    pulses: &PulseTrain,
    pair_prob: f64,
    pulse_width_ps: Ps,
    rng: &mut R,
) -> Vec<EmissionEvent> {
    if pair_prob <= 0.0 || pulses.is_empty() {
        return Vec::new();
    }
    let skip = Geometric::new(pair_prob.min(1.0)).expect("probability in (0, 1]");
    let mut out = Vec::with_capacity((pulses.len() as f64 * pair_prob * 1.1) as usize + 8);
    let mut n = skip.sample(rng);
    while (n as usize) < pulses.len() {
        let start = pulses.starts[n as usize];
        out.push(EmissionEvent {
            pulse_number: n,
            t_emit: start + rng.gen_range(0..=pulse_width_ps.max(0)),
        });
        n = n.saturating_add(1).saturating_add(skip.sample(rng));
    }
    out
}

/// Sample outcomes from `P(a,b) = ¼[1 + a·b·V·cos 2(α−β)]`.
pub fn sample_joint_outcome<R: Rng + ?Sized>(
    settings: SettingsPair,
    contrast: f64,
    rng: &mut R,
) -> (Outcome, Outcome) {
    let a = if rng.gen::<bool>() {
        Outcome::Plus
    } else {
        Outcome::Minus
    };
    let p_same = 0.5 * (1.0 + contrast * (2.0 * (settings.alpha() - settings.beta())).cos());
    let b = if rng.gen::<f64>() < p_same {
        a
    } else {
        Outcome::from_sign(-a.sign())
    };
    (a, b)
}

/// Deterministic local-realistic outcomes for hidden polarization `lambda`:
/// each side reports the sign of `cos 2(angle − λ)`.
pub fn sample_lhv_outcome(settings: SettingsPair, lambda: f64) -> (Outcome, Outcome) {
    let side = |angle: f64| {
        if (2.0 * (angle - lambda)).cos() >= 0.0 {
            Outcome::Plus
        } else {
            Outcome::Minus
        }
    };
    (side(settings.alpha()), side(settings.beta()))
}

/// Extra registration delay of each arm given pre-detector arrival times.
///
/// `light_ps` is the light travel time between the stations. Ties in arrival
/// are resolved in favour of station A collapsing first.
pub fn collapse_delays(
    hypothesis: &CollapseHypothesis,
    arrival_a: Ps,
    arrival_b: Ps,
    light_ps: Ps,
) -> (Ps, Ps) {
    match *hypothesis {
        CollapseHypothesis::Instantaneous | CollapseHypothesis::LocalRealistic => (0, 0),
        CollapseHypothesis::FixedDelay { t_c_ns } => {
            let tc = ns_to_ps(t_c_ns);
            (tc, tc)
        }
        CollapseHypothesis::WaitForRemote { t_c_ns } => {
            let tc = ns_to_ps(t_c_ns);
            let (first, second) = if arrival_a <= arrival_b {
                (arrival_a, arrival_b)
            } else {
                (arrival_b, arrival_a)
            };
            let late = (second + tc).max(first + light_ps) - second;
            if arrival_a <= arrival_b {
                (tc, late)
            } else {
                (late, tc)
            }
        }
        CollapseHypothesis::GatherAtW => {
            let w = arrival_a.max(arrival_b) + light_ps / 2;
            (w - arrival_a, w - arrival_b)
        }
    }
}

/// Fixed per-run quantities of the detection chain.
#[derive(Debug, Clone)]
pub struct ChainParams {
    pub photon_path_ps: Ps,
    pub light_ps: Ps,
    pub efficiency: f64,
    pub jitter_sigma_ps: f64,
    pub channel_delay_ps: [Ps; 4],
    pub hypothesis: CollapseHypothesis,
}

impl ChainParams {
    pub fn from_session(session: &SessionConfig) -> Self {
        let paths = nominal_path_times(&session.geometry);
        ChainParams {
            photon_path_ps: paths.photon_path_ps(),
            light_ps: ns_to_ps(light_time(session.geometry.separation_m)),
            efficiency: session.detectors.efficiency,
            jitter_sigma_ps: session.detectors.jitter_sigma_ns * 1000.0,
            channel_delay_ps: Detector::ALL.map(|d| session.detectors.channel_delay_ps(d)),
            hypothesis: session.hypothesis,
        }
    }
}

/// Propagate one pair to the two stations: collapse delay, efficiency loss,
/// channel delay and Gaussian jitter.
///
/// The same number of random draws is consumed whatever the outcome or
/// hypothesis, so runs that differ only in hypothesis stay aligned.
pub fn apply_detection_chain<R: Rng + ?Sized>(
    event: &EmissionEvent,
    outcome: (Outcome, Outcome),
    chain: &ChainParams,
    rng: &mut R,
) -> [Option<RawDetection>; 2] {
    let arrival = event.t_emit + chain.photon_path_ps;
    let delays = collapse_delays(&chain.hypothesis, arrival, arrival, chain.light_ps);
    let jitter = Normal::new(0.0, chain.jitter_sigma_ps).expect("finite sigma");
    let mut arm = |station: Station, outcome: Outcome, delay: Ps| {
        let survives = rng.gen::<f64>() < chain.efficiency;
        let noise = jitter.sample(rng).round() as Ps;
        let detector = Detector::new(station, outcome);
        survives.then(|| RawDetection {
            station,
            channel: detector.channel(),
            t_true: (arrival + delay + chain.channel_delay_ps[detector.index()] + noise).max(0),
        })
    };
    let a = arm(Station::A, outcome.0, delays.0);
    let b = arm(Station::B, outcome.1, delays.1);
    [a, b]
}

/// True arrival time of each trigger at one station, with the pulse number.
/// Trigger tags are classical and receive no collapse delay.
pub fn trigger_times<R: Rng + ?Sized>(
    pulses: &PulseTrain,
    paths: &PathTimes,
    jitter_sigma_ns: f64,
    loss: f64,
    rng: &mut R,
) -> Vec<(u64, Ps)> {
    let path = paths.trigger_path_ps();
    let jitter = Normal::new(0.0, jitter_sigma_ns * 1000.0).expect("finite sigma");
    let mut out = Vec::with_capacity(pulses.len());
    for (n, start) in pulses.iter() {
        let lost = rng.gen::<f64>() < loss;
        let noise = jitter.sample(rng).round() as Ps;
        if !lost {
            out.push((n, (start + path + noise).max(0)));
        }
    }
    out
}

/// Homogeneous Poisson process of rate `rate_hz` over `[0, duration_s)`.
pub fn inject_dark_counts<R: Rng + ?Sized>(rate_hz: f64, duration_s: f64, rng: &mut R) -> Vec<Ps> {
    if rate_hz <= 0.0 || duration_s <= 0.0 {
        return Vec::new();
    }
    let end = duration_s * 1e12;
    let gap = Exp::new(rate_hz * 1e-12).expect("positive rate");
    let mut out = Vec::with_capacity((rate_hz * duration_s * 1.2) as usize + 8);
    let mut t = gap.sample(rng);
    while t < end {
        out.push(t as Ps);
        t += gap.sample(rng);
    }
    out
}

/// Dead-time filter on true times (non-paralyzable), then the station clock
/// with quantization. The output is strictly ascending.
pub fn apply_clock(true_times: &[Ps], clock: &ClockModel, dead_time_ps: Ps) -> Vec<u64> {
    debug_assert!(true_times.windows(2).all(|p| p[0] <= p[1]));
    let res = clock.tick_resolution_ps.max(1) as i64;
    let shift = clock.offset_ps + ns_to_ps(clock.recording_latency_ns);
    let mut out: Vec<u64> = Vec::with_capacity(true_times.len());
    let mut last_kept: Option<Ps> = None;
    for &t in true_times {
        if let Some(prev) = last_kept {
            if t - prev < dead_time_ps.max(1) {
                continue;
            }
        }
        last_kept = Some(t);
        let local = t + (t as f64 * clock.drift).round() as Ps + shift;
        let q = ((local.max(0) + res / 2) / res) * res;
        if out.last().is_none_or(|&l| (q as u64) > l) {
            out.push(q as u64);
        }
    }
    out
}

/// Local-clock tag streams of one station.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StationStreams {
    pub t1: Vec<u64>,
    pub t2: Vec<u64>,
    pub t3: Vec<u64>,
}

impl StationStreams {
    pub fn channel(&self, channel: crate::model::Channel) -> &[u64] {
        match channel {
            crate::model::Channel::T1 => &self.t1,
            crate::model::Channel::T2 => &self.t2,
            crate::model::Channel::T3 => &self.t3,
        }
    }

    pub fn channel_mut(&mut self, channel: crate::model::Channel) -> &mut Vec<u64> {
        match channel {
            crate::model::Channel::T1 => &mut self.t1,
            crate::model::Channel::T2 => &mut self.t2,
            crate::model::Channel::T3 => &mut self.t3,
        }
    }
}

/// The six streams of a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunStreams {
    pub a: StationStreams,
    pub b: StationStreams,
}

impl RunStreams {
    pub fn station(&self, station: Station) -> &StationStreams {
        match station {
            Station::A => &self.a,
            Station::B => &self.b,
        }
    }

    pub fn station_mut(&mut self, station: Station) -> &mut StationStreams {
        match station {
            Station::A => &mut self.a,
            Station::B => &mut self.b,
        }
    }
}

/// Simulator-side facts the analysis has to rediscover.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunTruth {
    /// Pulse number of every T3 tag, per station, in stream order.
    pub trigger_pulses: [Vec<u64>; 2],
    pub pulses: usize,
    pub emissions: usize,
}

#[derive(Debug, Clone)]
pub struct SimulatedRun {
    pub streams: RunStreams,
    pub truth: RunTruth,
}

/// Session-level simulator; holds the schedule and derived constants.
#[derive(Debug, Clone)]
pub struct Simulator {
    session: SessionConfig,
    schedule: PulseSchedule,
    paths: PathTimes,
    chain: ChainParams,
}

impl Simulator {
    pub fn new(session: &SessionConfig) -> Result<Self> {
        session.validate()?;
        let schedule = build_schedule(&session.schedule)?;
        Ok(Simulator {
            paths: nominal_path_times(&session.geometry),
            chain: ChainParams::from_session(session),
            session: session.clone(),
            schedule,
        })
    }

    pub fn schedule(&self) -> &PulseSchedule {
        &self.schedule
    }

    pub fn session(&self) -> &SessionConfig {
        &self.session
    }

    /// Simulate one run. A pure function of the session config and run seed.
    pub fn run(&self, run: &RunConfig) -> Result<SimulatedRun> {
        let s = &self.session;
        if !(run.duration_s.is_finite() && run.duration_s > 0.0) {
            return Err(Error::config("duration_s", "must be > 0"));
        }
        let train = build_pulse_train(&self.schedule, run.duration_s)?;
        let width = self.schedule.pulse_width_ps();

        let mut emission_rng = rng_for(run.seed, Stream::Emission);
        let emissions = sample_pair_emissions(&train, s.pair_prob, width, &mut emission_rng);

        let mut outcome_rng = rng_for(run.seed, Stream::Outcome);
        let mut detection_rng = rng_for(run.seed, Stream::Detection);
        let mut photons: [Vec<Ps>; 4] = Default::default();
        for event in &emissions {
            let outcome = if s.hypothesis.is_local_realistic() {
                let lambda = outcome_rng.gen::<f64>() * PI;
                sample_lhv_outcome(run.settings, lambda)
            } else {
                sample_joint_outcome(run.settings, s.detectors.contrast, &mut outcome_rng)
            };
            let outcome_pair = (outcome.0, outcome.1);
            for det in apply_detection_chain(event, outcome_pair, &self.chain, &mut detection_rng)
                .into_iter()
                .flatten()
            {
                let outcome = det.channel.outcome().expect("photon channel");
                photons[Detector::new(det.station, outcome).index()].push(det.t_true);
            }
        }

        let mut dark_rng = rng_for(run.seed, Stream::Dark);
        for list in photons.iter_mut() {
            list.extend(inject_dark_counts(s.detectors.dark_rate_hz, run.duration_s, &mut dark_rng));
            list.sort_unstable();
        }

        let dead = ns_to_ps(s.detectors.dead_time_ns);
        let mut streams = RunStreams::default();
        let mut truth = RunTruth {
            pulses: train.len(),
            emissions: emissions.len(),
            ..Default::default()
        };
        for station in Station::BOTH {
            let clock = s.clock(station);
            let stream = match station {
                Station::A => Stream::TriggerA,
                Station::B => Stream::TriggerB,
            };
            let mut trig_rng = rng_for(run.seed, stream);
            let triggers = trigger_times(&train, &self.paths, s.trigger_jitter_ns, s.trigger_loss, &mut trig_rng);
            let times: Vec<Ps> = triggers.iter().map(|&(_, t)| t).collect();
            let out = streams.station_mut(station);
            out.t3 = apply_clock(&times, clock, 0);
            debug_assert_eq!(out.t3.len(), times.len());
            truth.trigger_pulses[station.index()] = triggers.into_iter().map(|(n, _)| n).collect();
            for outcome in [Outcome::Plus, Outcome::Minus] {
                let det = Detector::new(station, outcome);
                *out.channel_mut(det.channel()) = apply_clock(&photons[det.index()], clock, dead);
            }
        }
        Ok(SimulatedRun { streams, truth })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{chsh_settings, Channel, GeometryConfig};
    use crate::syncproto::ScheduleParams;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn train(n: usize) -> PulseTrain {
        PulseTrain {
            starts: (0..n as Ps).map(|i| i * 2_000_000).collect(),
        }
    }

    #[test]
    fn emission_edge_probabilities() {
        assert!(sample_pair_emissions(&train(100), 0.0, 500_000, &mut rng(1)).is_empty());
        let all = sample_pair_emissions(&train(100), 1.0, 500_000, &mut rng(1));
        assert_eq!(all.len(), 100);
        for (i, e) in all.iter().enumerate() {
            assert_eq!(e.pulse_number, i as u64);
            let start = i as Ps * 2_000_000;
            assert!(e.t_emit >= start && e.t_emit <= start + 500_000);
        }
    }

    #[test]
    fn emission_rate_matches_probability() {
        let p = 0.01;
        let n = 1_000_000;
        let k = sample_pair_emissions(&train(n), p, 500_000, &mut rng(2)).len() as f64;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((k - n as f64 * p).abs() < 4.0 * sd, "{k}");
    }

    #[test]
    fn identical_settings_give_perfect_correlation() {
        let s = SettingsPair::new(0.3, 0.3);
        let mut r = rng(3);
        for _ in 0..2000 {
            let (a, b) = sample_joint_outcome(s, 1.0, &mut r);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn joint_outcome_correlation_converges() {
        let s = SettingsPair::new(PI / 4.0, PI / 8.0);
        let n = 200_000;
        let mut r = rng(4);
        let (mut sum, mut plus_a) = (0i64, 0i64);
        for _ in 0..n {
            let (a, b) = sample_joint_outcome(s, 1.0, &mut r);
            sum += (a.sign() * b.sign()) as i64;
            plus_a += (a == Outcome::Plus) as i64;
        }
        let e = sum as f64 / n as f64;
        assert!((e - (PI / 4.0).cos()).abs() < 4.0 / (n as f64).sqrt(), "{e}");
        let marginal = plus_a as f64 / n as f64;
        assert!((marginal - 0.5).abs() < 4.0 * 0.5 / (n as f64).sqrt());
    }

    /// E(α,β) of the sign model by midpoint integration over λ.
    fn lhv_correlation_by_quadrature(s: SettingsPair) -> f64 {
        let steps = 100_000;
        (0..steps)
            .map(|i| {
                let lambda = (i as f64 + 0.5) * PI / steps as f64;
                let (a, b) = sample_lhv_outcome(s, lambda);
                (a.sign() * b.sign()) as f64
            })
            .sum::<f64>()
            / steps as f64
    }

    #[test]
    fn lhv_sawtooth_correlations() {
        assert_eq!(lhv_correlation_by_quadrature(SettingsPair::new(0.7, 0.7)), 1.0);
        let e = lhv_correlation_by_quadrature(SettingsPair::new(0.0, PI / 8.0));
        assert!((e - 0.5).abs() < 1e-3, "{e}");
        for delta in [0.1, 0.5, 1.0, 1.4] {
            let e = lhv_correlation_by_quadrature(SettingsPair::new(0.2, 0.2 + delta));
            assert!((e - (1.0 - 4.0 * delta / PI)).abs() < 1e-3);
        }
        let chsh: Vec<f64> = chsh_settings().iter().map(|&s| lhv_correlation_by_quadrature(s)).collect();
        let s = (chsh[0] - chsh[1]).abs() + (chsh[2] + chsh[3]).abs();
        assert!((s - 2.0).abs() < 2e-3, "{s}");
    }

    fn chain(hypothesis: CollapseHypothesis, separation_m: f64) -> ChainParams {
        let paths = nominal_path_times(&GeometryConfig::default());
        ChainParams {
            photon_path_ps: paths.photon_path_ps(),
            light_ps: ns_to_ps(light_time(separation_m)),
            efficiency: 1.0,
            jitter_sigma_ps: 0.0,
            channel_delay_ps: [0; 4],
            hypothesis,
        }
    }

    fn detect(hypothesis: CollapseHypothesis, separation_m: f64) -> (Ps, Ps) {
        let event = EmissionEvent {
            pulse_number: 0,
            t_emit: 1_000,
        };
        let [a, b] = apply_detection_chain(
            &event,
            (Outcome::Plus, Outcome::Minus),
            &chain(hypothesis, separation_m),
            &mut rng(5),
        );
        (a.unwrap().t_true, b.unwrap().t_true)
    }

    #[test]
    fn instantaneous_arrival_time() {
        let (a, b) = detect(CollapseHypothesis::Instantaneous, 24.0);
        let path = nominal_path_times(&GeometryConfig::default()).photon_path_ps();
        assert_eq!(a, 1_000 + path);
        assert_eq!(b, a);
        assert!((path as f64 / 1000.0 - 149.0).abs() < 0.5);
    }

    #[test]
    fn fixed_delay_shifts_both_arms() {
        let (a0, b0) = detect(CollapseHypothesis::Instantaneous, 24.0);
        let (a, b) = detect(CollapseHypothesis::FixedDelay { t_c_ns: 8.5 }, 24.0);
        assert_eq!((a - a0, b - b0), (8_500, 8_500));
    }

    #[test]
    fn wait_for_remote_delays_the_later_arm() {
        let h = CollapseHypothesis::WaitForRemote { t_c_ns: 8.5 };
        let (a, b) = detect(h, 24.0);
        let shift = (b - a) as f64 / 1000.0;
        assert!((shift - 72.0).abs() < 1.0, "{shift}");
        let (near_a, near_b) = detect(h, 1.0);
        assert_eq!(near_a, near_b);
        assert!(((b - near_b) as f64 / 1000.0 - (light_time(24.0) - 8.5)).abs() < 1e-3);
        assert_eq!(a, near_a);
    }

    #[test]
    fn gather_at_w_adds_half_light_time() {
        let (a0, _) = detect(CollapseHypothesis::Instantaneous, 24.0);
        let (a, b) = detect(CollapseHypothesis::GatherAtW, 24.0);
        assert_eq!(a, b);
        assert!(((a - a0) as f64 / 1000.0 - 40.03).abs() < 0.01);
    }

    #[test]
    fn collapse_delay_tie_and_order() {
        let h = CollapseHypothesis::WaitForRemote { t_c_ns: 0.0 };
        assert_eq!(collapse_delays(&h, 0, 0, 1000), (0, 1000));
        assert_eq!(collapse_delays(&h, 300, 0, 1000), (700, 0));
    }

    #[test]
    fn trigger_path_offsets() {
        let paths = nominal_path_times(&GeometryConfig::default());
        let t = trigger_times(&train(10), &paths, 0.0, 0.0, &mut rng(6));
        for (n, time) in &t {
            assert_eq!(*time, *n as Ps * 2_000_000 + paths.trigger_path_ps());
        }
        assert!((paths.trigger_path_ns - 214.0).abs() < 0.5);
        let zero = PathTimes {
            photon_path_ns: 0.0,
            trigger_path_ns: 0.0,
            nominal_tdif_ns: 0.0,
        };
        let t = trigger_times(&train(3), &zero, 0.0, 0.0, &mut rng(6));
        assert_eq!(t, vec![(0, 0), (1, 2_000_000), (2, 4_000_000)]);
    }

    #[test]
    fn dark_counts() {
        assert!(inject_dark_counts(0.0, 30.0, &mut rng(7)).is_empty());
        let n = inject_dark_counts(200.0, 30.0, &mut rng(7)).len() as f64;
        assert!((n - 6000.0).abs() < 4.0 * 6000f64.sqrt(), "{n}");
    }

    #[test]
    fn clock_quantizes_drifts_and_filters() {
        let ideal = ClockModel::default();
        assert_eq!(apply_clock(&[0, 14, 15, 1_234_567], &ideal, 0), vec![0, 10, 20, 1_234_570]);

        let drifting = ClockModel {
            drift: 50e-6,
            tick_resolution_ps: 1,
            ..Default::default()
        };
        let out = apply_clock(&[30_000_000_000_000], &drifting, 0);
        assert_eq!(out[0] - 30_000_000_000_000, 1_500_000_000);

        let dead = apply_clock(&[1_000_000, 1_003_000, 1_100_000], &ideal, 50_000);
        assert_eq!(dead, vec![1_000_000, 1_100_000]);
    }

    fn session(hypothesis: CollapseHypothesis, separation_m: f64) -> SessionConfig {
        let mut plan = crate::model::SessionPlan {
            experiments: 1,
            runs_per_experiment: 2,
            duration_s: 0.05,
            hypothesis,
            ..Default::default()
        };
        plan.geometry.separation_m = separation_m;
        plan.build().unwrap()
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let s = session(CollapseHypothesis::Instantaneous, 1.0);
        let sim = Simulator::new(&s).unwrap();
        let run = &s.experiments[0].runs[0];
        assert_eq!(sim.run(run).unwrap().streams, sim.run(run).unwrap().streams);
    }

    #[test]
    fn triggers_ignore_hypothesis_and_separation_only_moves_delays() {
        let inst = session(CollapseHypothesis::Instantaneous, 1.0);
        let run = inst.experiments[0].runs[0].clone();
        let base = Simulator::new(&inst).unwrap().run(&run).unwrap().streams;
        for (h, l) in [
            (CollapseHypothesis::GatherAtW, 24.0),
            (CollapseHypothesis::WaitForRemote { t_c_ns: 8.5 }, 24.0),
            (CollapseHypothesis::LocalRealistic, 1.0),
        ] {
            let other = Simulator::new(&session(h, l)).unwrap().run(&run).unwrap().streams;
            assert_eq!(other.a.t3, base.a.t3);
            assert_eq!(other.b.t3, base.b.t3);
        }
        let far = Simulator::new(&session(CollapseHypothesis::Instantaneous, 24.0))
            .unwrap()
            .run(&run)
            .unwrap()
            .streams;
        assert_eq!(far, base);
    }

    #[test]
    fn noiseless_trigger_minus_photon_is_nominal() {
        let mut s = session(CollapseHypothesis::Instantaneous, 1.0);
        s.detectors = crate::model::DetectorConfig {
            efficiency: 1.0,
            ..crate::model::DetectorConfig::ideal()
        };
        s.trigger_jitter_ns = 0.0;
        s.schedule = ScheduleParams {
            pulse_width_ns: 0.0,
            ..ScheduleParams::default()
        };
        for clock in [&mut s.clock_a, &mut s.clock_b] {
            *clock = ClockModel {
                tick_resolution_ps: 1,
                ..Default::default()
            };
        }
        let sim = Simulator::new(&s).unwrap();
        let out = sim.run(&s.experiments[0].runs[0]).unwrap();
        let nominal = nominal_path_times(&s.geometry);
        let expected = nominal.trigger_path_ps() - nominal.photon_path_ps();
        let t3 = &out.streams.a.t3;
        let photons: Vec<u64> = out.streams.a.t1.iter().chain(&out.streams.a.t2).copied().collect();
        assert!(!photons.is_empty());
        for p in photons {
            let i = t3.partition_point(|&t| t < p);
            assert_eq!(t3[i] as Ps - p as Ps, expected);
        }
    }

    #[test]
    fn photon_tags_stay_inside_the_pulse_envelope() {
        let h = CollapseHypothesis::WaitForRemote { t_c_ns: 8.5 };
        let mut s = session(h, 24.0);
        s.detectors.channel_delay_ns = [0.0; 4];
        s.detectors.dark_rate_hz = 0.0;
        s.clock_b = ClockModel::default();
        let sim = Simulator::new(&s).unwrap();
        let out = sim.run(&s.experiments[0].runs[0]).unwrap();
        let sigma = s.detectors.jitter_sigma_ns * 1000.0;
        let path = nominal_path_times(&s.geometry).photon_path_ps() as f64;
        let max_delay = ns_to_ps(light_time(24.0)) as f64;
        let width = sim.schedule().pulse_width_ps() as f64;
        for station in Station::BOTH {
            for ch in Channel::PHOTON {
                for &p in out.streams.station(station).channel(ch) {
                    let true_t = p as Ps;
                    let n = sim.schedule().pulse_at_or_before(true_t - path as Ps + 5 * sigma as Ps).unwrap();
                    let start = sim.schedule().pulse_start(n) as f64;
                    let rel = true_t as f64 - start;
                    assert!(rel >= path - 5.0 * sigma - 10.0, "{rel}");
                    assert!(rel <= width + path + max_delay + 5.0 * sigma + 10.0, "{rel}");
                }
            }
        }
    }

    #[test]
    fn detected_photon_fraction_is_about_six_per_mille() {
        let mut s = session(CollapseHypothesis::Instantaneous, 1.0);
        s.detectors.dark_rate_hz = 0.0;
        let sim = Simulator::new(&s).unwrap();
        let run = RunConfig {
            duration_s: 0.5,
            ..s.experiments[0].runs[0].clone()
        };
        let out = sim.run(&run).unwrap();
        let pulses = out.truth.pulses as f64;
        let singles = (out.streams.a.t1.len() + out.streams.a.t2.len()) as f64;
        let frac = singles / pulses;
        assert!((frac - 0.006).abs() < 0.0004, "{frac}");
    }
}
