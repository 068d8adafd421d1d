//! From tag streams to correlations, delays and the near/far verdict.

mod accidental;
mod assign;
mod chsh;
mod coincidence;
mod edge;
mod histogram;
mod session;
mod tdif;

pub use accidental::{accidental_rate, count_cross_pairs, AccidentalTally};
pub use assign::{assignment_lead_ps, channel_offsets, number_station, NumberedStation, NumberedTag};
pub use chsh::{
    chsh_statistic, correlation_e, pooled_chsh, tally_outcomes, ChshEstimate, Correlation, OutcomeCounts,
    SETTINGS_TOLERANCE,
};
pub use coincidence::{match_coincidences, ChannelOffsets, CoincidenceRecord, MatchOutcome};
pub use edge::{fit_leading_edge, fit_leading_edges, fit_leading_edges_with_sigma, EdgeFit, MIN_EDGE_COUNT};
pub use histogram::{histogram_coincidences, CoincidenceHistogram, HistogramParams, PULSE_REFERENCE_NS};
pub use session::{
    analyze_run, analyze_run_with_sigma, analyze_session, analyze_simulation, compare_sessions, run_metas, AnalysisParams,
    ChannelShift, Comparison, ExperimentChsh, RunAnalysis, RunMeta, SessionInfo, SessionReport,
    ShiftHypothesis, Verdict,
};
pub use tdif::{collapse_time_bound, tdif_statistics, ChannelTdif, CollapseBound, TdifStats};
