use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;

use colloc::analysis::{
    analyze_session, correlation_e, AnalysisParams, OutcomeCounts, RunMeta, SessionInfo, SessionReport,
    SETTINGS_TOLERANCE,
};
use colloc::model::SettingsPair;
use colloc::tagio::{read_manifest, read_run};

use crate::{manifest_path, AnalysisFlags};

pub const REPORT_NAME: &str = "report.json";
pub const HISTOGRAM_NAME: &str = "histogram.tsv";
pub const ANGLE_CURVES_NAME: &str = "angle_curves.tsv";

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Session directory (holding manifest.toml).
    pub session: PathBuf,
    /// Directory for the report bundle; defaults to the session directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub flags: AnalysisFlags,
}

/// Load a session from disk and analyse every run.
pub fn analyze_dir(dir: &Path, params: &AnalysisParams) -> Result<SessionReport> {
    let manifest = read_manifest(&manifest_path(dir))?;
    let info = SessionInfo {
        session_id: manifest.session_id.clone(),
        separation_m: manifest.separation_m,
        schedule: manifest.schedule.clone(),
    };
    let metas: Vec<RunMeta> = manifest
        .runs
        .iter()
        .map(|r| RunMeta {
            index: r.index,
            experiment: r.experiment,
            settings: r.settings,
            duration_s: r.duration_s,
        })
        .collect();
    let files: HashMap<usize, _> = manifest.runs.iter().map(|r| (r.index, &r.files)).collect();
    let report = analyze_session(&info, &metas, |meta| read_run(dir, files[&meta.index]), params)
        .with_context(|| format!("analysing {}", dir.display()))?;
    Ok(report)
}

pub fn run(args: &AnalyzeArgs) -> Result<()> {
    let report = analyze_dir(&args.session, &args.flags.params())?;
    let out = args.out.clone().unwrap_or_else(|| args.session.clone());
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join(REPORT_NAME), &serde_json::to_string_pretty(&report)?)?;
    write(&out.join(HISTOGRAM_NAME), &histogram_tsv(&report))?;
    write(&out.join(ANGLE_CURVES_NAME), &angle_curves_tsv(&report))?;
    print!("{}", summary(&report));
    println!("written to {}", out.display());
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn summary(report: &SessionReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "session {} (L = {} m, {} runs)", report.session_id, report.separation_m, report.runs.len());
    let _ = writeln!(s, "{:<10} {:>10} {:>8} {:>8} {:>5}", "T_dif", "mean_ns", "sd_ns", "sem_ns", "runs");
    for c in &report.tdif.channels {
        let _ = writeln!(
            s,
            "{:<10} {:>10.2} {:>8.2} {:>8.2} {:>5}",
            c.label,
            c.mean_ns,
            c.sd_ns,
            c.sem_ns,
            c.per_run_ns.len()
        );
    }
    for det in &report.tdif.absent {
        let _ = writeln!(s, "{:<10} {:>10}", det.tdif_label(), "absent");
    }
    match &report.tc_bound {
        Some(b) => {
            let clamped = if b.clamped { " (clamped at 0)" } else { "" };
            let _ = writeln!(s, "t_c bound  {:.2} ns from {}{clamped}", b.bound_ns, b.detector.tdif_label());
        }
        None => {
            let _ = writeln!(s, "t_c bound  unavailable");
        }
    }
    for x in &report.chsh_by_experiment {
        match &x.chsh {
            Some(c) => {
                let _ = writeln!(s, "experiment {:>3}  S = {:.3} ± {:.3}", x.experiment, c.s, c.sigma_s);
            }
            None => {
                let _ = writeln!(s, "experiment {:>3}  S unavailable (missing CHSH setting)", x.experiment);
            }
        }
    }
    match &report.chsh {
        Some(c) => {
            let _ = writeln!(s, "pooled          S = {:.3} ± {:.3}", c.s, c.sigma_s);
        }
        None => {
            let _ = writeln!(s, "pooled          S unavailable (missing CHSH setting)");
        }
    }
    let _ = writeln!(
        s,
        "coincidences {}  discarded pulses {}",
        report.coincidences, report.discarded_pulses
    );
    let _ = writeln!(s, "verdict {}", report.verdict_text);
    s
}

/// `(+,+)` coincidences per slot of the histogram run, with singles and the
/// pump pulse profile.
pub fn histogram_tsv(report: &SessionReport) -> String {
    let h = &report.histogram;
    let run = report.runs.iter().find(|r| r.meta.index == report.histogram_run);
    let mut s = String::new();
    if let Some(run) = run {
        let _ = writeln!(
            s,
            "# session {} run {} alpha {:.6} beta {:.6}",
            report.session_id,
            run.meta.index,
            run.meta.settings.alpha(),
            run.meta.settings.beta()
        );
    }
    let _ = writeln!(
        s,
        "# outside span: A below {} above {}, B below {} above {}",
        h.outside_a[0], h.outside_a[1], h.outside_b[0], h.outside_b[1]
    );
    let _ = writeln!(s, "slot_start_ns\tcoinc_by_a\tcoinc_by_b\tsingles\tpump");
    let width = report.schedule.pulse_width_ns;
    for i in 0..h.slots() {
        let _ = writeln!(
            s,
            "{:.3}\t{}\t{}\t{}\t{}",
            h.slot_start_ns(i),
            h.counts_a[i],
            h.counts_b[i],
            h.singles[i],
            h.pump_profile(i, width)
        );
    }
    s
}

/// Coincidence counts per outcome pair against the analyser angles, summed
/// over the runs of an experiment that share settings.
pub fn angle_curves_tsv(report: &SessionReport) -> String {
    let mut groups: Vec<(usize, SettingsPair, usize, OutcomeCounts)> = Vec::new();
    for r in &report.runs {
        let found = groups
            .iter_mut()
            .find(|g| g.0 == r.meta.experiment && g.1.approx_eq(&r.meta.settings, SETTINGS_TOLERANCE));
        match found {
            Some(g) => {
                g.2 += 1;
                g.3 += r.counts;
            }
            None => groups.push((r.meta.experiment, r.meta.settings, 1, r.counts)),
        }
    }
    groups.sort_by(|a, b| {
        (a.0, a.1.alpha(), a.1.beta())
            .partial_cmp(&(b.0, b.1.alpha(), b.1.beta()))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut s = String::from("experiment\talpha_rad\tbeta_rad\truns\tn_pp\tn_mm\tn_pm\tn_mp\te\te_sigma\n");
    for (experiment, settings, runs, c) in groups {
        let (e, sigma) = match correlation_e(&c) {
            Ok(e) => (format!("{:.5}", e.value), format!("{:.5}", e.sigma)),
            Err(_) => ("nan".to_string(), "nan".to_string()),
        };
        let _ = writeln!(
            s,
            "{experiment}\t{:.6}\t{:.6}\t{runs}\t{}\t{}\t{}\t{}\t{e}\t{sigma}",
            settings.alpha(),
            settings.beta(),
            c.pp,
            c.mm,
            c.pm,
            c.mp
        );
    }
    s
}
