use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

use colloc::analysis::{compare_sessions, AnalysisParams, Comparison, SessionReport, ShiftHypothesis, Verdict};

use crate::analyze::analyze_dir;
use crate::{manifest_path, AnalysisFlags};

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Near session: a session directory or a report.json written by `analyze`.
    pub near: PathBuf,
    /// Far session, as for `near`.
    pub far: PathBuf,
    /// Largest T_dif change still taken as no change, ns.
    #[arg(long, default_value_t = 4.0)]
    pub tolerance_ns: f64,
    /// Also write the comparison as JSON to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Analysis flags, used for session directories only.
    #[command(flatten)]
    pub flags: AnalysisFlags,
}

/// Process exit code of a verdict.
pub fn exit_code(verdict: &Verdict) -> u8 {
    match verdict {
        Verdict::LoopholeClosed => 0,
        Verdict::NoViolation => 10,
        Verdict::ShiftDetected {
            matched: ShiftHypothesis::WaitForRemote,
            ..
        } => 11,
        Verdict::ShiftDetected {
            matched: ShiftHypothesis::GatherAtW,
            ..
        } => 12,
        Verdict::Inconclusive => 13,
    }
}

fn load(path: &Path, params: &AnalysisParams) -> Result<SessionReport> {
    if path.is_file() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return serde_json::from_str(&text).with_context(|| format!("parsing report {}", path.display()));
    }
    if manifest_path(path).is_file() {
        return analyze_dir(path, params);
    }
    bail!("{}: neither a report file nor a session directory", path.display())
}

pub fn run(args: &CompareArgs) -> Result<u8> {
    let params = args.flags.params();
    let near = load(&args.near, &params)?;
    let far = load(&args.far, &params)?;
    let comparison = compare_sessions(&near, &far, args.tolerance_ns)?;
    if let Some(out) = &args.out {
        fs::write(out, serde_json::to_string_pretty(&comparison)?)
            .with_context(|| format!("writing {}", out.display()))?;
    }
    print!("{}", table(&near, &far, &comparison));
    Ok(exit_code(&comparison.verdict))
}

pub fn table(near: &SessionReport, far: &SessionReport, c: &Comparison) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "near {} (L = {} m)  far {} (L = {} m)",
        near.session_id, near.separation_m, far.session_id, far.separation_m
    );
    let _ = writeln!(s, "{:<10} {:>10} {:>10} {:>10}", "T_dif", "near_ns", "far_ns", "delta_ns");
    for shift in &c.shifts {
        let _ = writeln!(
            s,
            "{:<10} {:>10.2} {:>10.2} {:>+10.2}",
            shift.label, shift.near_ns, shift.far_ns, shift.delta_ns
        );
    }
    let delay = |d: Option<f64>| d.map_or("n/a".to_string(), |d| format!("{d:+.2} ns"));
    let _ = writeln!(
        s,
        "photon delay far vs near: A {}  B {}",
        delay(c.station_delay_ns[0]),
        delay(c.station_delay_ns[1])
    );
    let _ = writeln!(s, "far S = {:.3} ± {:.3}", c.far_chsh.s, c.far_chsh.sigma_s);
    let _ = writeln!(
        s,
        "expected delay: wait-for-remote {:.1}..{:.1} ns, gather-at-W {:.1} ns (tolerance {} ns)",
        c.wait_for_remote_ns.0, c.wait_for_remote_ns.1, c.gather_at_w_ns, c.tolerance_ns
    );
    let _ = writeln!(s, "verdict: {}", c.verdict);
    s
}
