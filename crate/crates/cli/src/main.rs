mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use config::{default_slots, Settings};
use dcra_core::env::write_trace;
use dcra_core::harness::{
    congestion_study, run_experiment, write_congestion_csv, write_file, ExperimentSpec, Population,
    PopulationSpec, Scheme, SchemeKind, SweepResult,
};
use dcra_core::mdp::{
    dual_program, format_mask, majority_policy, write_bounds_csv, MAX_BOUND_DEADLINE,
};
use dcra_core::{build_mdp, run, upper_bound, ChannelObservation, RunOptions};

#[derive(Parser, Debug)]
#[command(
    name = "dcra",
    version,
    about = "Delay-constrained random access: simulation, learning and LP bounds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario and write simulate.csv (plus series.csv, trace.csv)
    Simulate {
        #[command(flatten)]
        settings: Settings,
        /// Also write the per-slot trace
        #[arg(long)]
        trace: bool,
    },
    /// Solve the two-device LP bound and write bounds.csv
    UpperBound {
        #[command(flatten)]
        settings: Settings,
        /// Also write the optimal policy and its majority vote per D
        #[arg(long)]
        policy: bool,
        /// Also write each LP in plain text
        #[arg(long)]
        export_lp: bool,
    },
    /// Sampled-parameter sweep; writes sweep.csv
    Sweep {
        #[command(flatten)]
        settings: Settings,
    },
    /// Windowed-throughput series; writes series.csv and sweep.csv
    Convergence {
        #[command(flatten)]
        settings: Settings,
    },
    /// Train one device (or solve the bound) and write its policy table
    PolicyDump {
        #[command(flatten)]
        settings: Settings,
    },
    /// Saturated ALOHA devices against controllable ones; writes congestion.csv
    Congestion {
        #[command(flatten)]
        settings: Settings,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // one diagnostic line, even for multi-line parser messages
            let text = format!("{e:#}");
            let parts: Vec<&str> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && *l != "|")
                .collect();
            eprintln!("dcra: error: {}", parts.join(" "));
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate { settings, trace } => simulate(settings.resolve()?, trace),
        Command::UpperBound {
            settings,
            policy,
            export_lp,
        } => bound(settings.resolve()?, policy, export_lp),
        Command::Sweep { settings } => sweep(settings.resolve()?),
        Command::Convergence { settings } => convergence(settings.resolve()?),
        Command::PolicyDump { settings } => policy_dump(settings.resolve()?),
        Command::Congestion { settings } => congestion(settings.resolve()?),
    }
}

fn single_deadline(s: &Settings, default: usize) -> Result<usize> {
    match s.deadlines_or(&[default])[..] {
        [d] if d > 0 => Ok(d),
        ref v => bail!("expected a single positive deadline, got {v:?}"),
    }
}

fn single_scheme(s: &Settings, default: &str) -> Result<Scheme> {
    match s.schemes_or(&[default])?[..] {
        [scheme] => Ok(scheme),
        ref v => bail!("expected a single scheme, got {}", v.len()),
    }
}

fn emit(
    path: &Path,
    f: impl FnOnce(&mut dyn Write) -> Result<(), Box<dyn std::error::Error + Send + Sync>>,
) -> Result<()> {
    write_file(path, f)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn simulate(s: Settings, trace: bool) -> Result<()> {
    let d = single_deadline(&s, 2)?;
    let scheme = single_scheme(&s, "tsra")?;
    let p = s.require_params(d)?;
    let n1 = Settings::single(&s.n1, "n1")?.unwrap_or(1);
    let n2 = Settings::single(&s.n2, "n2")?.unwrap_or(1);
    let slots = s.slots.unwrap_or_else(|| default_slots(&[scheme]));
    let window = s.window.unwrap_or(100_000).min(slots as usize);
    let population = Population {
        aloha: vec![p.aloha_device(); n1],
        controlled: vec![p.agent_device(); n2],
    };
    let bound = if scheme.kind == SchemeKind::BoundPolicy {
        if (n1, n2) != (1, 1) || d > MAX_BOUND_DEADLINE {
            bail!("bound-policy needs n1 = n2 = 1 and D <= {MAX_BOUND_DEADLINE}");
        }
        Some(Arc::new(upper_bound(&build_mdp(&p)?)?.policy))
    } else {
        None
    };
    let scenario = population.scenario(&scheme, s.seed(), bound.as_ref())?;
    let options = RunOptions {
        window_capacity: window,
        series_block: s.block,
        keep_trace: trace,
    };
    let out = run(&scenario, slots, &options)?;
    let m = &out.metrics;
    let (thr, power) = (m.timely_throughput(window)?, m.power(window)?);
    let dir = s.out_dir();
    emit(&dir.join("simulate.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record([
            "scheme",
            "p_b",
            "p_b2",
            "p_s",
            "p_s2",
            "p_t",
            "D",
            "N1",
            "N2",
            "seed",
            "slots",
            "window",
            "throughput",
            "power",
            "overall_throughput",
            "deliveries",
            "transmissions",
            "expired",
        ])?;
        c.write_record([
            scheme.label(),
            p.aloha_arrival.to_string(),
            p.agent_arrival.to_string(),
            p.aloha_success.to_string(),
            p.agent_success.to_string(),
            p.aloha_transmit.to_string(),
            d.to_string(),
            n1.to_string(),
            n2.to_string(),
            s.seed().to_string(),
            slots.to_string(),
            window.to_string(),
            thr.to_string(),
            power.to_string(),
            m.overall_throughput().to_string(),
            m.deliveries().to_string(),
            m.transmissions().to_string(),
            m.expired().to_string(),
        ])?;
        c.flush()?;
        Ok(())
    })?;
    if let Some(block) = s.block {
        emit(&dir.join("series.csv"), |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["slot", "throughput", "power"])?;
            for (k, (t, pw)) in m.series().into_iter().enumerate() {
                c.write_record([((k + 1) * block).to_string(), t.to_string(), pw.to_string()])?;
            }
            c.flush()?;
            Ok(())
        })?;
    }
    if let Some(records) = &out.trace {
        emit(&dir.join("trace.csv"), |w| Ok(write_trace(records, w)?))?;
    }
    println!(
        "{}: throughput {thr:.6}, power {power:.6} over the last {window} of {slots} slots",
        scheme.label()
    );
    Ok(())
}

fn bound(s: Settings, policy: bool, export_lp: bool) -> Result<()> {
    let deadlines = s.deadlines_or(&[1, 2]);
    let dir = s.out_dir();
    let mut results = Vec::new();
    for &d in &deadlines {
        if d == 0 || d > MAX_BOUND_DEADLINE {
            bail!("D = {d} is outside the supported range 1..={MAX_BOUND_DEADLINE}");
        }
        let p = s.require_params(d)?;
        let model = build_mdp(&p)?;
        if export_lp {
            let program = dual_program(&model);
            emit(&dir.join(format!("lp-D{d}.txt")), |w| {
                Ok(program.write_text(&format!("bound-D{d}"), w)?)
            })?;
        }
        let b = upper_bound(&model)?;
        println!(
            "D={d}: bound {:.9} ({} iterations, {:.3}s)",
            b.value, b.diagnostics.iterations, b.diagnostics.solve_seconds
        );
        if policy {
            emit(&dir.join(format!("policy-D{d}.csv")), |w| {
                Ok(b.policy.write_csv(w)?)
            })?;
            let majority = majority_policy(&b.policy);
            emit(&dir.join(format!("majority-D{d}.csv")), |w| {
                let mut c = csv::Writer::from_writer(w);
                c.write_record(["l2", "observation", "action"])?;
                for l2 in 0..(1u32 << d) {
                    for o in ChannelObservation::ALL {
                        c.write_record([
                            format_mask(l2, d),
                            o.to_string(),
                            majority.action(l2, o).to_string(),
                        ])?;
                    }
                }
                c.flush()?;
                Ok(())
            })?;
        }
        results.push(b);
    }
    emit(&dir.join("bounds.csv"), |w| {
        Ok(write_bounds_csv(&results, w)?)
    })
}

fn sweep_spec(
    s: &Settings,
    deadlines: &[usize],
    schemes: &[&str],
    groups: usize,
    window: usize,
) -> Result<ExperimentSpec> {
    let deadlines = s.deadlines_or(deadlines);
    let schemes = s.schemes_or(schemes)?;
    let n1 = Settings::single(&s.n1, "n1")?;
    let n2 = Settings::single(&s.n2, "n2")?;
    let population = match (s.params(1)?, n1, n2) {
        (Some(p), None | Some(1), None | Some(1)) => PopulationSpec::Fixed {
            p_b: p.aloha_arrival,
            p_b2: p.agent_arrival,
            p_s: p.aloha_success,
            p_s2: p.agent_success,
            p_t: p.aloha_transmit,
        },
        (Some(_), _, _) => {
            bail!("fixed parameters describe two devices; drop n1/n2 or the p_* settings")
        }
        (None, None, None) => PopulationSpec::TwoDevice,
        (None, a, b) => PopulationSpec::Multi {
            n1: a.unwrap_or(0),
            n2: b.unwrap_or(1),
        },
    };
    let two_device = matches!(
        population,
        PopulationSpec::TwoDevice | PopulationSpec::Fixed { .. }
    );
    let slots = s.slots.unwrap_or_else(|| default_slots(&schemes));
    let spec = ExperimentSpec {
        population,
        schemes,
        groups: s.groups.unwrap_or(groups),
        slots,
        window: s.window.unwrap_or(window).min(slots as usize),
        seed: s.seed(),
        ranges: s.ranges()?,
        bound: s
            .bound
            .unwrap_or(two_device && deadlines.iter().all(|&d| d <= MAX_BOUND_DEADLINE)),
        series_block: s.block.unwrap_or(dcra_core::harness::DEFAULT_SERIES_BLOCK),
        deadlines,
    };
    spec.validate()?;
    Ok(spec)
}

fn summarise(r: &SweepResult) {
    for (k, scheme) in r.schemes.iter().enumerate() {
        println!(
            "{scheme}: mean throughput {:.6}, mean power {:.6} over {} rows",
            r.mean_throughput(k),
            r.mean_power(k),
            r.rows.len()
        );
    }
}

fn write_sweep(dir: &Path, r: &SweepResult) -> Result<()> {
    emit(&dir.join("sweep.csv"), |w| Ok(r.write_csv(w)?))
}

fn sweep(s: Settings) -> Result<()> {
    let spec = sweep_spec(&s, &[1, 2, 3], &["tsra", "aloha"], 20, 50_000)?;
    let r = run_experiment(&spec)?;
    summarise(&r);
    write_sweep(&s.out_dir(), &r)
}

fn convergence(s: Settings) -> Result<()> {
    let mut spec = sweep_spec(&s, &[10, 20, 30], &["tsra"], 1, 2_000)?;
    if s.slots.is_none() {
        spec.slots = 50_000;
    }
    let r = run_experiment(&spec)?;
    summarise(&r);
    let dir = s.out_dir();
    emit(&dir.join("series.csv"), |w| {
        Ok(r.write_series_csv(spec.series_block, w)?)
    })?;
    write_sweep(&dir, &r)
}

fn policy_dump(s: Settings) -> Result<()> {
    let d = single_deadline(&s, 2)?;
    let scheme = single_scheme(&s, "fsra")?;
    let p = s.require_params(d)?;
    let path: PathBuf = s.out_dir().join("policy.csv");
    if scheme.kind == SchemeKind::BoundPolicy {
        if d > MAX_BOUND_DEADLINE {
            bail!("D = {d} exceeds the bound's maximum {MAX_BOUND_DEADLINE}");
        }
        let b = upper_bound(&build_mdp(&p)?)?;
        println!("bound {:.9}", b.value);
        return emit(&path, |w| Ok(b.policy.write_csv(w)?));
    }
    if scheme.learner_config().is_none() {
        bail!(
            "{} has no policy table; use a learning scheme or bound-policy",
            scheme.label()
        );
    }
    let slots = s.slots.unwrap_or_else(|| default_slots(&[scheme]));
    let scenario = Population::two_device(&p).scenario(&scheme, s.seed(), None)?;
    let out = run(&scenario, slots, &RunOptions::default())?;
    let learner = out.learners[0]
        .as_ref()
        .context("controllable device has no learner")?;
    println!("{} after {slots} slots", scheme.label());
    emit(&path, |w| Ok(learner.write_policy(w)?))
}

fn congestion(s: Settings) -> Result<()> {
    let d = single_deadline(&s, 10)?;
    let n1 = s.n1.clone().unwrap_or_else(|| vec![1, 2, 3]);
    let n2 = s.n2.clone().unwrap_or_else(|| vec![0, 10, 20, 30]);
    let schemes = s.schemes_or(&["tsra-multi", "aloha"])?;
    let slots = s.slots.unwrap_or(100_000);
    let template = ExperimentSpec {
        population: PopulationSpec::Congested { n1: 1, n2: 0 },
        deadlines: vec![d],
        schemes,
        groups: s.groups.unwrap_or(10),
        slots,
        window: s.window.unwrap_or(20_000).min(slots as usize),
        seed: s.seed(),
        ranges: s.ranges()?,
        bound: false,
        series_block: s.block.unwrap_or(dcra_core::harness::DEFAULT_SERIES_BLOCK),
    };
    let results = congestion_study(&n1, &n2, &template)?;
    for r in &results {
        for (k, scheme) in r.schemes.iter().enumerate() {
            println!(
                "N1={} N2={} {scheme}: throughput {:.6}",
                r.n1,
                r.n2,
                r.mean_throughput(k)
            );
        }
    }
    emit(&s.out_dir().join("congestion.csv"), |w| {
        Ok(write_congestion_csv(&results, w)?)
    })
}
