//! Command-line runner: scenario simulation to CSV, gain synthesis
//! reports, and parameter sweeps.

mod csv_io;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use selfsync::scenario::{builtin, builtin_names, ScenarioFile, SimConfig};
use selfsync::simkit::{run, EventKind, Trace};

#[derive(Parser)]
#[command(
    name = "selfsync",
    about = "Simulator for a self-synchronized grid-feeding inverter on a weak grid",
    after_help = "Built-in scenarios: paper-startup, paper-normal, paper-sag-swell.\n\
                  Set SELFSYNC_CSV_DIGITS to control CSV float precision."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write the trace as CSV.
    Simulate {
        /// Built-in scenario name or path to a scenario file.
        #[arg(long)]
        scenario: String,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Keep every Nth control-rate sample.
        #[arg(long, default_value_t = 1)]
        decimate: usize,
    },
    /// Synthesize the gain set and print it with the eigenvalue report.
    Tune {
        #[arg(long)]
        scenario: String,
    },
    /// Re-run a scenario over a parameter grid and summarize each run.
    Sweep {
        #[arg(long)]
        scenario: String,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
        /// Output CSV path (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum SweepParam {
    /// Grid reactance (ohm); the grid inductance follows.
    #[value(name = "x_g")]
    XG,
    /// Initial grid EMF magnitude (V).
    #[value(name = "v_g_magnitude")]
    VGMagnitude,
    /// Input power level (W): replaces every nonzero power command event.
    #[value(name = "p_i")]
    PI,
}

fn main() {
    if let Err(e) = dispatch() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Simulate {
            scenario,
            out,
            decimate,
        } => cmd_simulate(&scenario, &out, decimate),
        Cmd::Tune { scenario } => cmd_tune(&scenario),
        Cmd::Sweep {
            scenario,
            param,
            values,
            out,
        } => cmd_sweep(&scenario, param, &values, out.as_deref()),
    }
}

fn load_scenario(name_or_path: &str) -> Result<ScenarioFile> {
    if let Some(sf) = builtin(name_or_path) {
        return Ok(sf);
    }
    let text = std::fs::read_to_string(name_or_path).with_context(|| {
        format!(
            "cannot read scenario `{name_or_path}` (not a built-in: {})",
            builtin_names().join(", ")
        )
    })?;
    Ok(ScenarioFile::parse(&text)?)
}

struct Summary {
    peak_i: f64,
    peak_vc_dev: f64,
    sat_i_seconds: f64,
    sat_mu_seconds: f64,
    stable: bool,
}

fn summarize(trace: &Trace, v_c_ref: f64, duration: f64) -> Summary {
    let mut peak_i = 0.0f64;
    let mut peak_vc_dev = 0.0f64;
    let mut sat_i_seconds = 0.0;
    let mut sat_mu_seconds = 0.0;
    let mut finite = true;
    let mut tail_ok = true;
    for r in &trace.rows {
        let i = r.i_alpha.hypot(r.i_beta);
        peak_i = peak_i.max(i);
        // The DC-link deviation is meaningful once the link is regulated.
        if r.mode == selfsync::supervisor::ControlMode::Run {
            peak_vc_dev = peak_vc_dev.max((r.v_c - v_c_ref).abs());
        }
        sat_i_seconds += if r.sat_i { trace.dt } else { 0.0 };
        sat_mu_seconds += if r.sat_mu { trace.dt } else { 0.0 };
        finite &= i.is_finite() && r.v_c.is_finite();
        if r.t >= 0.8 * duration && (r.v_c - v_c_ref).abs() > 0.5 * v_c_ref {
            tail_ok = false;
        }
    }
    Summary {
        peak_i,
        peak_vc_dev,
        sat_i_seconds,
        sat_mu_seconds,
        stable: finite && tail_ok,
    }
}

fn cmd_simulate(scenario: &str, out: &std::path::Path, decimate: usize) -> Result<()> {
    let sf = load_scenario(scenario)?;
    let cfg = sf.assemble()?;
    let trace = run(&cfg)?;
    let file = File::create(out).with_context(|| format!("cannot create {}", out.display()))?;
    csv_io::write_trace(
        BufWriter::new(file),
        &trace,
        decimate,
        csv_io::precision_from_env(),
    )?;
    let s = summarize(&trace, cfg.control.v_c_ref, cfg.duration);
    println!(
        "summary: peak |i| = {:.3} A, peak |v_c - {:.0}| = {:.2} V, sat_i active {:.4} s, sat_mu active {:.4} s",
        s.peak_i, cfg.control.v_c_ref, s.peak_vc_dev, s.sat_i_seconds, s.sat_mu_seconds
    );
    Ok(())
}

fn cmd_tune(scenario: &str) -> Result<()> {
    let sf = load_scenario(scenario)?;
    let (bundle, report) = sf.synthesize()?;
    println!("# gain synthesis from the scenario settling-time menu");
    for eig in &report.eigs {
        let targets: Vec<String> = eig.targets.iter().map(|t| format!("{t:.1}")).collect();
        let achieved: Vec<String> = eig
            .achieved
            .iter()
            .map(|c| format!("{:.3}{}j{:.3}", c.re, if c.im < 0.0 { "-" } else { "+" }, c.im.abs()))
            .collect();
        println!(
            "# {}: targets [{}] rad/s, achieved [{}], max rel err {:.2e}",
            eig.matrix,
            targets.join(", "),
            achieved.join(", "),
            eig.max_rel_err
        );
    }
    println!(
        "# Re{{k_i/k_p}} = {:.1} (> 0: inner integral behaves as a stable low-pass)",
        report.ki_over_kp_re
    );
    println!(
        "# apparent-power ceiling at nominal voltage: {:.1} VA",
        report.s_max_nominal
    );
    println!("#");
    println!("# paste the section below into a scenario file to pin these gains");
    let section = selfsync::scenario::GainsSection::from(&bundle);
    let mut wrapper = toml::map::Map::new();
    wrapper.insert(
        "gains".into(),
        toml::Value::try_from(&section).expect("gains serialize"),
    );
    print!("{}", toml::to_string_pretty(&toml::Value::Table(wrapper)).expect("toml"));
    Ok(())
}

fn apply_sweep_value(cfg: &mut SimConfig, param: SweepParam, value: f64) {
    match param {
        SweepParam::XG => {
            cfg.grid.x_g = value;
            cfg.params.l_g = value / cfg.params.omega;
        }
        SweepParam::VGMagnitude => cfg.grid.v_g_magnitude = value,
        SweepParam::PI => {
            for ev in &mut cfg.events {
                if ev.kind == EventKind::SetPICommand && ev.value != 0.0 {
                    ev.value = value;
                }
            }
        }
    }
}

fn cmd_sweep(
    scenario: &str,
    param: SweepParam,
    values: &[f64],
    out: Option<&std::path::Path>,
) -> Result<()> {
    let sf = load_scenario(scenario)?;
    let base = sf.assemble()?;
    if matches!(param, SweepParam::XG) && values.iter().any(|v| *v <= 0.0) {
        bail!("x_g grid values must be positive");
    }

    // Rows are independent runs; execute them in parallel, emit in order.
    let mut results: Vec<Option<(f64, std::result::Result<Summary, String>)>> =
        (0..values.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (slot, &value) in results.iter_mut().zip(values.iter()) {
            let base = &base;
            scope.spawn(move || {
                let mut cfg = base.clone();
                apply_sweep_value(&mut cfg, param, value);
                let outcome = run(&cfg)
                    .map(|trace| summarize(&trace, cfg.control.v_c_ref, cfg.duration))
                    .map_err(|e| e.to_string());
                *slot = Some((value, outcome));
            });
        }
    });

    let mut out_text = String::from(
        "value,stable,peak_i,peak_v_c_dev,sat_i_seconds,sat_mu_seconds,error\n",
    );
    for entry in results.into_iter().flatten() {
        let (value, outcome) = entry;
        match outcome {
            Ok(s) => out_text.push_str(&format!(
                "{},{},{},{},{},{},\n",
                value, s.stable as u8, s.peak_i, s.peak_vc_dev, s.sat_i_seconds, s.sat_mu_seconds
            )),
            Err(e) => out_text.push_str(&format!("{value},0,,,,,\"{e}\"\n")),
        }
    }
    match out {
        Some(path) => {
            let mut f = File::create(path)
                .with_context(|| format!("cannot create {}", path.display()))?;
            f.write_all(out_text.as_bytes())?;
        }
        None => print!("{out_text}"),
    }
    Ok(())
}
