//! End-to-end properties of simulate → number → match → estimate.

use colloc::analysis::{analyze_session, analyze_simulation, run_metas, AnalysisParams, SessionInfo, SessionReport};
use colloc::model::{CollapseHypothesis, SessionPlan};
use colloc::simulator::{RunStreams, Simulator};
use colloc::tagio::{read_run, write_run, RunFiles};

fn plan(runs: usize, duration_s: f64, seed: u64) -> SessionPlan {
    SessionPlan {
        seed,
        experiments: 1,
        runs_per_experiment: runs,
        duration_s,
        ..Default::default()
    }
}

fn analyse(plan: &SessionPlan) -> SessionReport {
    let sim = Simulator::new(&plan.build().unwrap()).unwrap();
    analyze_simulation(&sim, &AnalysisParams::default()).unwrap()
}

fn shift(streams: &mut RunStreams, by: u64) {
    for s in [&mut streams.a, &mut streams.b] {
        for tags in [&mut s.t1, &mut s.t2, &mut s.t3] {
            tags.iter_mut().for_each(|t| *t += by);
        }
    }
}

#[test]
fn global_time_translation_leaves_results_unchanged() {
    let session = plan(8, 0.2, 21).build().unwrap();
    let sim = Simulator::new(&session).unwrap();
    let runs: Vec<_> = session.runs().cloned().collect();
    let info = SessionInfo::from_config(&session);
    let metas = run_metas(&session);
    let params = AnalysisParams::default();
    let base = analyze_session(&info, &metas, |m| sim.run(&runs[m.index]).map(|r| r.streams), &params).unwrap();
    let moved = analyze_session(
        &info,
        &metas,
        |m| {
            let mut streams = sim.run(&runs[m.index])?.streams;
            shift(&mut streams, 987_654_321_013);
            Ok(streams)
        },
        &params,
    )
    .unwrap();
    let (a, b) = (base.chsh.unwrap(), moved.chsh.unwrap());
    assert_eq!(a.s, b.s);
    assert_eq!(a.sigma_s, b.sigma_s);
    for (x, y) in base.runs.iter().zip(&moved.runs) {
        assert_eq!(x.counts, y.counts);
        assert_eq!(x.tdif_ns, y.tdif_ns);
    }
}

#[test]
fn recording_latency_cancels_in_tdif() {
    let mut late = plan(4, 0.2, 5);
    late.clock_a.recording_latency_ns = 37.0;
    late.clock_b.recording_latency_ns = 1_234.5;
    let (base, late) = (analyse(&plan(4, 0.2, 5)), analyse(&late));
    for (x, y) in base.runs.iter().zip(&late.runs) {
        assert_eq!(x.tdif_ns, y.tdif_ns);
        assert_eq!(x.counts, y.counts);
    }
}

#[test]
fn fixed_delay_lowers_every_mean_by_the_delay() {
    // Same seed, so the same photons; only the delay and the edge-fit noise
    // (dark counts are not delayed) separate the two sessions.
    let base = analyse(&plan(12, 0.5, 9));
    let mut delayed = plan(12, 0.5, 9);
    delayed.hypothesis = CollapseHypothesis::FixedDelay { t_c_ns: 8.5 };
    let delayed = analyse(&delayed);
    for ch in 0..4 {
        let d: Vec<f64> = base
            .runs
            .iter()
            .zip(&delayed.runs)
            .map(|(x, y)| x.tdif_ns[ch].unwrap() - y.tdif_ns[ch].unwrap())
            .collect();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let sem = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        assert!(sem < 0.5, "channel {ch}: {d:?}");
        assert!((mean - 8.5).abs() < 4.0 * sem.max(0.05), "channel {ch}: {mean} ± {sem}");
    }
}

#[test]
fn fixed_delay_bound_recovers_the_delay_with_zero_offsets() {
    let mut p = plan(16, 0.5, 13);
    p.detectors.channel_delay_ns = [0.0; 4];
    p.hypothesis = CollapseHypothesis::FixedDelay { t_c_ns: 5.0 };
    let report = analyse(&p);
    let bound = report.tc_bound.unwrap();
    assert!((bound.bound_ns - 5.0).abs() < 0.5, "{bound:?}");
}

#[test]
fn disk_round_trip_gives_the_same_report() {
    let session = plan(4, 0.2, 17).build().unwrap();
    let sim = Simulator::new(&session).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let resolution = [session.clock_a.tick_resolution_ps, session.clock_b.tick_resolution_ps];
    for (i, run) in session.runs().enumerate() {
        write_run(dir.path(), &RunFiles::for_run(i), &sim.run(run).unwrap().streams, resolution).unwrap();
    }
    let params = AnalysisParams::default();
    let from_disk = analyze_session(
        &SessionInfo::from_config(&session),
        &run_metas(&session),
        |m| read_run(dir.path(), &RunFiles::for_run(m.index)),
        &params,
    )
    .unwrap();
    assert_eq!(from_disk, analyze_simulation(&sim, &params).unwrap());
}
