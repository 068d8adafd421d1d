use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use rayon::prelude::*;

use colloc::model::{SessionPlan, Station};
use colloc::simulator::Simulator;
use colloc::tagio::{config_hash, write_manifest, write_run, RunEntry, RunFiles, SessionManifest};

use crate::manifest_path;

/// Name of the effective configuration written next to the manifest.
pub const CONFIG_NAME: &str = "config.toml";

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Session plan (TOML); omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output session directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the session seed (up to 2^63 − 1, the TOML integer range).
    #[arg(long, value_parser = clap::value_parser!(u64).range(0..=i64::MAX as u64))]
    pub seed: Option<u64>,
    /// Override the number of runs per experiment.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Override the number of experiments.
    #[arg(long)]
    pub experiments: Option<usize>,
    /// Override the duration of each run, s.
    #[arg(long)]
    pub duration: Option<f64>,
}

#[derive(Debug, Default, Clone, Copy)]
struct RunSummary {
    pulses: usize,
    emissions: usize,
    detections: [usize; 2],
    triggers: [usize; 2],
}

fn load_plan(args: &SimulateArgs) -> Result<SessionPlan> {
    let mut plan = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<SessionPlan>(&text).with_context(|| format!("config {}", path.display()))?
        }
        None => SessionPlan::default(),
    };
    if let Some(seed) = args.seed {
        plan.seed = seed;
    }
    if let Some(runs) = args.runs {
        plan.runs_per_experiment = runs;
    }
    if let Some(experiments) = args.experiments {
        plan.experiments = experiments;
    }
    if let Some(duration) = args.duration {
        plan.duration_s = duration;
    }
    Ok(plan)
}

pub fn run(args: &SimulateArgs) -> Result<()> {
    let plan = load_plan(args)?;
    let session = plan.build()?;
    let sim = Simulator::new(&session)?;
    let plan_text = toml::to_string_pretty(&plan).context("serializing config")?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let resolution = [session.clock_a.tick_resolution_ps, session.clock_b.tick_resolution_ps];
    let mut entries = Vec::new();
    for (experiment, e) in session.experiments.iter().enumerate() {
        for run in &e.runs {
            let index = entries.len();
            entries.push(RunEntry {
                index,
                experiment,
                settings: run.settings,
                duration_s: run.duration_s,
                seed: run.seed,
                files: RunFiles::for_run(index),
            });
        }
    }
    let runs: Vec<_> = session.runs().collect();
    let summaries = entries
        .par_iter()
        .map(|entry| -> Result<RunSummary> {
            let simulated = sim.run(runs[entry.index]).map_err(|e| e.in_run(entry.index))?;
            write_run(&args.out, &entry.files, &simulated.streams, resolution)?;
            let streams = &simulated.streams;
            Ok(RunSummary {
                pulses: simulated.truth.pulses,
                emissions: simulated.truth.emissions,
                detections: Station::BOTH.map(|s| streams.station(s).t1.len() + streams.station(s).t2.len()),
                triggers: Station::BOTH.map(|s| streams.station(s).t3.len()),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    fs::write(args.out.join(CONFIG_NAME), &plan_text)
        .with_context(|| format!("writing {}", args.out.join(CONFIG_NAME).display()))?;
    let manifest = SessionManifest {
        session_id: session.session_id.clone(),
        separation_m: session.geometry.separation_m,
        schedule: session.schedule.clone(),
        hypothesis: session.hypothesis,
        config_hash: config_hash(&plan_text),
        runs: entries,
    };
    write_manifest(&manifest_path(&args.out), &manifest)?;

    let total = summaries.iter().fold(RunSummary::default(), |mut t, s| {
        t.pulses += s.pulses;
        t.emissions += s.emissions;
        for i in 0..2 {
            t.detections[i] += s.detections[i];
            t.triggers[i] += s.triggers[i];
        }
        t
    });
    let efficiency = session.detectors.efficiency;
    println!("session      {}", session.session_id);
    println!("hypothesis   {}", session.hypothesis);
    println!("separation   {} m", session.geometry.separation_m);
    println!(
        "runs         {} ({} experiments × {})",
        summaries.len(),
        session.experiments.len(),
        plan.runs_per_experiment
    );
    println!("pulses       {}", total.pulses);
    println!("emissions    {}", total.emissions);
    println!("triggers     A {}  B {}", total.triggers[0], total.triggers[1]);
    println!("detections   A {}  B {}", total.detections[0], total.detections[1]);
    println!(
        "coincidences ≈ {:.0} expected (emissions × efficiency²)",
        total.emissions as f64 * efficiency * efficiency
    );
    println!("written to   {}", args.out.display());
    Ok(())
}
