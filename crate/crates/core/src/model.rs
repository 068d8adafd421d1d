//! Domain types, physical constants and the deterministic timing budget of
//! the two-station setup.
//!
//! Every time inside the crate is an integer number of picoseconds ([`Ps`]).
//! Nanoseconds only appear in configuration fields and reported statistics.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::syncproto::ScheduleParams;

/// Picoseconds. Signed so that differences between tags are representable.
pub type Ps = i64;

/// Speed of light in vacuum, metres per nanosecond.
pub const SPEED_OF_LIGHT_M_PER_NS: f64 = 0.299_792_458;

pub fn ns_to_ps(ns: f64) -> Ps {
    (ns * 1000.0).round() as Ps
}

pub fn ps_to_ns(ps: Ps) -> f64 {
    ps as f64 / 1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Station {
    A,
    B,
}

impl Station {
    pub const BOTH: [Station; 2] = [Station::A, Station::B];

    pub fn index(self) -> usize {
        match self {
            Station::A => 0,
            Station::B => 1,
        }
    }

    pub fn other(self) -> Station {
        match self {
            Station::A => Station::B,
            Station::B => Station::A,
        }
    }
}

impl fmt::Display for Station {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Station::A => f.write_str("A"),
            Station::B => f.write_str("B"),
        }
    }
}

/// TDC input gate. T1 and T2 carry the two polarizer outputs, T3 the trigger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    T1,
    T2,
    T3,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::T1, Channel::T2, Channel::T3];
    pub const PHOTON: [Channel; 2] = [Channel::T1, Channel::T2];

    pub fn number(self) -> u8 {
        match self {
            Channel::T1 => 1,
            Channel::T2 => 2,
            Channel::T3 => 3,
        }
    }

    pub fn from_number(n: u8) -> Option<Channel> {
        match n {
            1 => Some(Channel::T1),
            2 => Some(Channel::T2),
            3 => Some(Channel::T3),
            _ => None,
        }
    }

    /// Measurement outcome reported by a photon channel: T1 is "+1", T2 is "−1".
    pub fn outcome(self) -> Option<Outcome> {
        match self {
            Channel::T1 => Some(Outcome::Plus),
            Channel::T2 => Some(Outcome::Minus),
            Channel::T3 => None,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", self.number())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Plus,
    Minus,
}

impl Outcome {
    pub fn sign(self) -> i32 {
        match self {
            Outcome::Plus => 1,
            Outcome::Minus => -1,
        }
    }

    pub fn from_sign(sign: i32) -> Outcome {
        if sign >= 0 {
            Outcome::Plus
        } else {
            Outcome::Minus
        }
    }

    pub fn channel(self) -> Channel {
        match self {
            Outcome::Plus => Channel::T1,
            Outcome::Minus => Channel::T2,
        }
    }
}

/// One of the four single-photon detectors, in the order A-T1, A-T2, B-T1, B-T2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Detector {
    pub station: Station,
    pub outcome: Outcome,
}

impl Detector {
    pub const ALL: [Detector; 4] = [
        Detector::new(Station::A, Outcome::Plus),
        Detector::new(Station::A, Outcome::Minus),
        Detector::new(Station::B, Outcome::Plus),
        Detector::new(Station::B, Outcome::Minus),
    ];

    pub const fn new(station: Station, outcome: Outcome) -> Self {
        Detector { station, outcome }
    }

    pub fn index(self) -> usize {
        self.station.index() * 2
            + match self.outcome {
                Outcome::Plus => 0,
                Outcome::Minus => 1,
            }
    }

    pub fn channel(self) -> Channel {
        self.outcome.channel()
    }

    /// Table label of the trigger-minus-photon difference, e.g. `T3A-T1A`.
    pub fn tdif_label(self) -> String {
        format!(
            "T3{s}-{c}{s}",
            s = self.station,
            c = self.channel()
        )
    }
}

/// A single recorded event on a station's local clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimeTag {
    pub ticks: u64,
    pub channel: Channel,
    pub station: Station,
}

/// Lengths and response times of the optical and electrical paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    /// Straight-line distance between the stations.
    pub separation_m: f64,
    pub fiber_length_m: f64,
    pub trigger_cable_length_m: f64,
    pub ttl_cable_length_m: f64,
    pub pump_air_path_m: f64,
    pub photon_air_path_m: f64,
    pub fiber_index: f64,
    pub cable_delay_ns_per_m: f64,
    pub pd_response_ns: f64,
    pub spcm_response_ns: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            separation_m: 1.0,
            fiber_length_m: 27.0,
            trigger_cable_length_m: 38.0,
            ttl_cable_length_m: 2.1,
            pump_air_path_m: 2.07,
            photon_air_path_m: 1.06,
            fiber_index: 1.5,
            cable_delay_ns_per_m: 4.6,
            pd_response_ns: 32.0,
            spcm_response_ns: 0.5,
        }
    }
}

impl GeometryConfig {
    pub fn with_separation(separation_m: f64) -> Self {
        GeometryConfig {
            separation_m,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields: [(&'static str, f64); 10] = [
            ("geometry.separation_m", self.separation_m),
            ("geometry.fiber_length_m", self.fiber_length_m),
            ("geometry.trigger_cable_length_m", self.trigger_cable_length_m),
            ("geometry.ttl_cable_length_m", self.ttl_cable_length_m),
            ("geometry.pump_air_path_m", self.pump_air_path_m),
            ("geometry.photon_air_path_m", self.photon_air_path_m),
            ("geometry.fiber_index", self.fiber_index),
            ("geometry.cable_delay_ns_per_m", self.cable_delay_ns_per_m),
            ("geometry.pd_response_ns", self.pd_response_ns),
            ("geometry.spcm_response_ns", self.spcm_response_ns),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(name, format!("must be positive, got {value}")));
            }
        }
        Ok(())
    }
}

/// Nominal propagation budget from emission to the TDC inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathTimes {
    /// Emission to photon tag (air, fibre, SPCM response, TTL cable).
    pub photon_path_ns: f64,
    /// Emission to trigger tag (air, photodiode response, trigger cable).
    pub trigger_path_ns: f64,
    /// `trigger_path_ns − photon_path_ns`: the collapse-free T_dif.
    pub nominal_tdif_ns: f64,
}

impl PathTimes {
    pub fn photon_path_ps(&self) -> Ps {
        ns_to_ps(self.photon_path_ns)
    }

    pub fn trigger_path_ps(&self) -> Ps {
        ns_to_ps(self.trigger_path_ns)
    }
}

/// Timing budget of the photon and trigger paths. Air paths use vacuum `c`.
pub fn nominal_path_times(geometry: &GeometryConfig) -> PathTimes {
    let c = SPEED_OF_LIGHT_M_PER_NS;
    let photon_path_ns = geometry.photon_air_path_m / c
        + geometry.fiber_length_m * geometry.fiber_index / c
        + geometry.spcm_response_ns
        + geometry.ttl_cable_length_m * geometry.cable_delay_ns_per_m;
    let trigger_path_ns = geometry.pump_air_path_m / c
        + geometry.pd_response_ns
        + geometry.trigger_cable_length_m * geometry.cable_delay_ns_per_m;
    PathTimes {
        photon_path_ns,
        trigger_path_ns,
        nominal_tdif_ns: trigger_path_ns - photon_path_ns,
    }
}

/// Light travel time over `separation_m`, in ns.
pub fn light_time(separation_m: f64) -> f64 {
    separation_m / SPEED_OF_LIGHT_M_PER_NS
}

/// Single-photon detector parameters shared by the four SPCMs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub efficiency: f64,
    /// Gaussian timing jitter of one detector.
    pub jitter_sigma_ns: f64,
    pub dark_rate_hz: f64,
    pub dead_time_ns: f64,
    /// Fixed extra delay of each photon channel (A-T1, A-T2, B-T1, B-T2).
    /// A positive delay lowers that channel's trigger-minus-photon difference.
    pub channel_delay_ns: [f64; 4],
    /// Polarizer contrast; caps the correlation at `V·cos 2(α−β)`.
    pub contrast: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            efficiency: 0.65,
            jitter_sigma_ns: 1.4,
            dark_rate_hz: 200.0,
            dead_time_ns: 50.0,
            channel_delay_ns: [8.5, -0.3, 5.0, 4.6],
            contrast: 0.98,
        }
    }
}

impl DetectorConfig {
    /// Ideal detectors: no jitter, no dark counts, no channel delays.
    pub fn ideal() -> Self {
        DetectorConfig {
            jitter_sigma_ns: 0.0,
            dark_rate_hz: 0.0,
            channel_delay_ns: [0.0; 4],
            ..Default::default()
        }
    }

    pub fn channel_delay_ps(&self, detector: Detector) -> Ps {
        ns_to_ps(self.channel_delay_ns[detector.index()])
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::config("detectors.efficiency", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.contrast) {
            return Err(Error::config("detectors.contrast", "must lie in [0, 1]"));
        }
        if !(self.dark_rate_hz.is_finite() && self.dark_rate_hz >= 0.0) {
            return Err(Error::config("detectors.dark_rate_hz", "must be ≥ 0"));
        }
        if !(self.dead_time_ns.is_finite() && self.dead_time_ns >= 0.0) {
            return Err(Error::config("detectors.dead_time_ns", "must be ≥ 0"));
        }
        if !(self.jitter_sigma_ns.is_finite() && self.jitter_sigma_ns >= 0.0) {
            return Err(Error::config("detectors.jitter_sigma_ns", "must be ≥ 0"));
        }
        if self.channel_delay_ns.iter().any(|d| !d.is_finite()) {
            return Err(Error::config("detectors.channel_delay_ns", "must be finite"));
        }
        Ok(())
    }
}

/// Local TDC clock of one station.
///
/// `local = true·(1 + drift) + offset + recording_latency`, quantized to
/// `tick_resolution_ps`. The latency is common to the three inputs of a
/// station, so it cancels in any same-station difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClockModel {
    pub offset_ps: i64,
    pub drift: f64,
    pub tick_resolution_ps: u32,
    pub recording_latency_ns: f64,
}

impl Default for ClockModel {
    fn default() -> Self {
        ClockModel {
            offset_ps: 0,
            drift: 0.0,
            tick_resolution_ps: 10,
            recording_latency_ns: 0.0,
        }
    }
}

impl ClockModel {
    pub fn validate(&self, field: &'static str) -> Result<()> {
        if self.tick_resolution_ps == 0 {
            return Err(Error::config(field, "tick_resolution_ps must be > 0"));
        }
        if self.offset_ps < 0 {
            return Err(Error::config(field, "offset_ps must be ≥ 0"));
        }
        if !(self.drift.is_finite() && self.drift.abs() < 1e-2) {
            return Err(Error::config(field, "drift must be finite and below 1e-2"));
        }
        if !(self.recording_latency_ns.is_finite() && self.recording_latency_ns >= 0.0) {
            return Err(Error::config(field, "recording_latency_ns must be ≥ 0"));
        }
        Ok(())
    }
}

/// Phenomenological model of when a photon's detection is registered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CollapseHypothesis {
    /// Detection immediately on arrival; outcomes follow quantum statistics.
    Instantaneous,
    /// Both detections postponed by `t_c_ns`.
    FixedDelay { t_c_ns: f64 },
    /// No collapse delay; outcomes come from a local hidden-variable model.
    LocalRealistic,
    /// The first arm collapses after `t_c_ns`; the other arm cannot register
    /// before light-speed news of the first arrival reaches it.
    WaitForRemote { t_c_ns: f64 },
    /// Both collapses happen at the earliest event in the common causal future
    /// of the two arrivals.
    GatherAtW,
}

impl CollapseHypothesis {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CollapseHypothesis::FixedDelay { t_c_ns } | CollapseHypothesis::WaitForRemote { t_c_ns }
                if !(t_c_ns.is_finite() && t_c_ns >= 0.0) =>
            {
                Err(Error::config("hypothesis.t_c_ns", "must be ≥ 0"))
            }
            _ => Ok(()),
        }
    }

    pub fn is_local_realistic(&self) -> bool {
        matches!(self, CollapseHypothesis::LocalRealistic)
    }

    pub fn name(&self) -> &'static str {
        match self {
            CollapseHypothesis::Instantaneous => "instantaneous",
            CollapseHypothesis::FixedDelay { .. } => "fixed_delay",
            CollapseHypothesis::LocalRealistic => "local_realistic",
            CollapseHypothesis::WaitForRemote { .. } => "wait_for_remote",
            CollapseHypothesis::GatherAtW => "gather_at_w",
        }
    }
}

impl fmt::Display for CollapseHypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CollapseHypothesis::FixedDelay { t_c_ns } | CollapseHypothesis::WaitForRemote { t_c_ns } => {
                write!(f, "{}(t_c = {t_c_ns} ns)", self.name())
            }
            _ => f.write_str(self.name()),
        }
    }
}

/// Analyzer angles, each normalized into `[0, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSettings", into = "RawSettings")]
pub struct SettingsPair {
    alpha: f64,
    beta: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSettings {
    alpha: f64,
    beta: f64,
}

impl TryFrom<RawSettings> for SettingsPair {
    type Error = String;

    fn try_from(raw: RawSettings) -> std::result::Result<Self, Self::Error> {
        if !(raw.alpha.is_finite() && raw.beta.is_finite()) {
            return Err("setting angles must be finite".into());
        }
        Ok(SettingsPair::new(raw.alpha, raw.beta))
    }
}

impl From<SettingsPair> for RawSettings {
    fn from(s: SettingsPair) -> Self {
        RawSettings {
            alpha: s.alpha,
            beta: s.beta,
        }
    }
}

pub(crate) fn normalize_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(PI);
    // rem_euclid can return exactly PI for tiny negative inputs
    if r >= PI {
        0.0
    } else {
        r
    }
}

impl SettingsPair {
    pub fn new(alpha: f64, beta: f64) -> Self {
        SettingsPair {
            alpha: normalize_angle(alpha),
            beta: normalize_angle(beta),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn approx_eq(&self, other: &SettingsPair, tol: f64) -> bool {
        angle_distance(self.alpha, other.alpha) <= tol && angle_distance(self.beta, other.beta) <= tol
    }
}

/// Distance between two polarizer angles modulo π.
pub(crate) fn angle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// The four CHSH settings in the order (a,b), (a,b′), (a′,b), (a′,b′) with
/// a = 0, a′ = π/4, b = π/8, b′ = 3π/8.
pub fn chsh_settings() -> [SettingsPair; 4] {
    let (a, a2) = (0.0, PI / 4.0);
    let (b, b2) = (PI / 8.0, 3.0 * PI / 8.0);
    [
        SettingsPair::new(a, b),
        SettingsPair::new(a, b2),
        SettingsPair::new(a2, b),
        SettingsPair::new(a2, b2),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub settings: SettingsPair,
    pub duration_s: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub runs: Vec<RunConfig>,
}

pub const RUNS_PER_EXPERIMENT: usize = 34;

/// Everything needed to simulate a session: hardware, clocks, schedule,
/// hypothesis, and the list of experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub session_id: String,
    pub experiments: Vec<ExperimentConfig>,
    pub geometry: GeometryConfig,
    pub detectors: DetectorConfig,
    pub clock_a: ClockModel,
    pub clock_b: ClockModel,
    pub schedule: ScheduleParams,
    pub hypothesis: CollapseHypothesis,
    /// Probability that a pump pulse emits a pair.
    pub pair_prob: f64,
    pub trigger_jitter_ns: f64,
    /// Probability that a trigger tag is lost, independently per station.
    pub trigger_loss: f64,
}

/// Emitted pair probability giving ≈0.6 % detected photons per station.
pub const DEFAULT_PAIR_PROB: f64 = 0.006 / 0.65;

impl SessionConfig {
    pub fn clock(&self, station: Station) -> &ClockModel {
        match station {
            Station::A => &self.clock_a,
            Station::B => &self.clock_b,
        }
    }

    pub fn runs(&self) -> impl Iterator<Item = &RunConfig> {
        self.experiments.iter().flat_map(|e| e.runs.iter())
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.detectors.validate()?;
        self.clock_a.validate("clock_a")?;
        self.clock_b.validate("clock_b")?;
        self.schedule.validate()?;
        self.hypothesis.validate()?;
        if !(0.0..=1.0).contains(&self.pair_prob) {
            return Err(Error::config("pair_prob", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.trigger_loss) {
            return Err(Error::config("trigger_loss", "must lie in [0, 1]"));
        }
        if !(self.trigger_jitter_ns.is_finite() && self.trigger_jitter_ns >= 0.0) {
            return Err(Error::config("trigger_jitter_ns", "must be ≥ 0"));
        }
        let mut seeds = std::collections::HashSet::new();
        for run in self.runs() {
            if !(run.duration_s.is_finite() && run.duration_s > 0.0) {
                return Err(Error::config("duration_s", "must be > 0"));
            }
            if !seeds.insert(run.seed) {
                return Err(Error::config("seed", format!("run seed {} is not unique", run.seed)));
            }
        }
        Ok(())
    }
}

/// Compact, file-friendly description of a session. [`SessionPlan::build`]
/// expands it into a [`SessionConfig`] with the standard run layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionPlan {
    pub session_id: String,
    pub seed: u64,
    pub experiments: usize,
    pub runs_per_experiment: usize,
    pub duration_s: f64,
    pub pair_prob: f64,
    pub trigger_jitter_ns: f64,
    pub trigger_loss: f64,
    pub hypothesis: CollapseHypothesis,
    pub geometry: GeometryConfig,
    pub detectors: DetectorConfig,
    pub clock_a: ClockModel,
    pub clock_b: ClockModel,
    pub schedule: ScheduleParams,
}

impl Default for SessionPlan {
    fn default() -> Self {
        SessionPlan {
            session_id: "session".into(),
            seed: 1,
            experiments: 4,
            runs_per_experiment: RUNS_PER_EXPERIMENT,
            duration_s: 30.0,
            pair_prob: DEFAULT_PAIR_PROB,
            trigger_jitter_ns: 0.5,
            trigger_loss: 0.0,
            hypothesis: CollapseHypothesis::Instantaneous,
            geometry: GeometryConfig::default(),
            detectors: DetectorConfig::default(),
            clock_a: ClockModel::default(),
            clock_b: ClockModel {
                offset_ps: 250_000_000_000,
                drift: 1.5e-5,
                ..Default::default()
            },
            schedule: ScheduleParams::default(),
        }
    }
}

/// Settings of the standard 34-run experiment: 16 CHSH runs cycling through
/// the four CHSH pairs, then an 18-run scan α ∈ {0, π/4} × β = kπ/9.
pub fn experiment_layout() -> Vec<SettingsPair> {
    let chsh = chsh_settings();
    let mut out: Vec<SettingsPair> = (0..16).map(|i| chsh[i % 4]).collect();
    for alpha in [0.0, PI / 4.0] {
        for k in 0..9 {
            out.push(SettingsPair::new(alpha, k as f64 * PI / 9.0));
        }
    }
    out
}

/// Seed of run `index` derived from the session seed. Kept to 63 bits so it
/// survives TOML, whose integers are signed.
pub fn run_seed(session_seed: u64, index: u64) -> u64 {
    splitmix64(session_seed ^ splitmix64(index.wrapping_add(0x5EED))) >> 1
}

pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SessionPlan {
    pub fn build(&self) -> Result<SessionConfig> {
        if self.experiments == 0 {
            return Err(Error::config("experiments", "must be ≥ 1"));
        }
        if self.runs_per_experiment == 0 {
            return Err(Error::config("runs_per_experiment", "must be ≥ 1"));
        }
        let layout = experiment_layout();
        let mut index = 0u64;
        let experiments = (0..self.experiments)
            .map(|_| ExperimentConfig {
                runs: (0..self.runs_per_experiment)
                    .map(|i| {
                        let run = RunConfig {
                            settings: layout[i % layout.len()],
                            duration_s: self.duration_s,
                            seed: run_seed(self.seed, index),
                        };
                        index += 1;
                        run
                    })
                    .collect(),
            })
            .collect();
        let config = SessionConfig {
            session_id: self.session_id.clone(),
            experiments,
            geometry: self.geometry.clone(),
            detectors: self.detectors.clone(),
            clock_a: self.clock_a.clone(),
            clock_b: self.clock_b.clone(),
            schedule: self.schedule.clone(),
            hypothesis: self.hypothesis,
            pair_prob: self.pair_prob,
            trigger_jitter_ns: self.trigger_jitter_ns,
            trigger_loss: self.trigger_loss,
        };
        config.validate()?;
        Ok(config)
    }
}
