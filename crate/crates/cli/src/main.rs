use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use timebin_core::config::{Scenario, Topology};
use timebin_core::oracle::compare_with_oracle;
use timebin_core::pipeline::simulate;
use timebin_core::qkd;
use timebin_core::rng::rng_substream;
use timebin_core::sweep::{analyze_streams, run_and_analyze, sweep_phase, sweep_power, PowerPoint, RunAnalysis};
use timebin_core::tagio::{self, TagFile};

const CONFIG_DIR_ENV: &str = "TIMEBIN_CONFIG_DIR";

#[derive(Parser)]
#[command(name = "timebin", version, about = "Time-bin entanglement simulator")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Preset name, or the stem of a TOML file in the config directory.
    #[arg(long, global = true)]
    scenario: Option<String>,
    /// Scenario TOML file. Relative paths fall back to the config directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Default directory for scenario files.
    #[arg(long, global = true, env = CONFIG_DIR_ENV)]
    config_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline and write per-channel TTG1 tag files and a manifest.
    Simulate {
        /// Override the pulse count.
        #[arg(long)]
        pulses: Option<u64>,
    },
    /// Analyze tag files (TTG1, or CSV by extension).
    Analyze {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// The two channels to correlate.
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0u8, 1])]
        channels: Vec<u8>,
        /// Tick resolution of CSV inputs.
        #[arg(long, default_value_t = 1.0)]
        tick_ps: f64,
        /// Run duration; defaults to the manifest next to the inputs, then the tag span.
        #[arg(long)]
        duration_s: Option<f64>,
    },
    /// Scan the interferometer phase and fit the center-peak fringe.
    SweepPhase {
        #[arg(long)]
        point_pulses: Option<u64>,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Scan pump power; singles, coincidences and CAR per point.
    SweepPower {
        #[arg(long, value_delimiter = ',')]
        powers: Option<Vec<f64>>,
        #[arg(long)]
        pulses: Option<u64>,
    },
    /// Compare the Monte Carlo pulse-train sampler with the amplitude oracle.
    OracleCheck {
        #[arg(long, default_value_t = 10)]
        n_pulses: usize,
        /// Phase differences in units of pi.
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.25, 0.5, 0.75])]
        deltas: Vec<f64>,
        #[arg(long, default_value_t = 1_000_000)]
        samples: u64,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
    },
    /// Run a scenario end to end: rates, CAR and peaks, or sifted key for two receivers.
    Report {
        #[arg(long)]
        pulses: Option<u64>,
    },
}

/// Errors that map to exit code 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    match err.downcast_ref::<timebin_core::Error>() {
        Some(timebin_core::Error::Config { .. } | timebin_core::Error::InvalidArgument(_)) => 2,
        _ => 1,
    }
}

fn resolve_scenario(g: &Global) -> Result<Scenario> {
    let load = |path: &Path| {
        Scenario::load(path).map_err(|e| match e {
            timebin_core::Error::Io(io) => usage(format!("cannot read {}: {io}", path.display())),
            other => other.into(),
        })
    };
    let mut scenario = match (&g.config, &g.scenario) {
        (Some(_), Some(_)) => return Err(usage("--config and --scenario are mutually exclusive")),
        (Some(path), None) => {
            let path = match &g.config_dir {
                Some(dir) if path.is_relative() && !path.exists() => dir.join(path),
                _ => path.clone(),
            };
            load(&path)?
        }
        (None, name) => {
            let name = name.as_deref().unwrap_or("back_to_back");
            match Scenario::preset(name) {
                Some(s) => s,
                None => {
                    let file = g.config_dir.as_ref().map(|d| d.join(format!("{name}.toml")));
                    match file {
                        Some(f) if f.exists() => load(&f)?,
                        _ => return Err(Scenario::unknown_preset(name).into()),
                    }
                }
            }
        }
    };
    if let Some(seed) = g.seed {
        scenario.run.seed = seed;
    }
    for w in scenario.validate()? {
        eprintln!("warning: {w}");
    }
    Ok(scenario)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn loss_budget_json(s: &Scenario) -> Value {
    let items: Vec<Value> = s
        .loss_budget()
        .into_iter()
        .map(|(component, db)| json!({ "component": component, "loss_db": db }))
        .collect();
    let total: f64 = s.loss_budget().iter().map(|(_, db)| db).sum();
    json!({ "components": items, "total_db": total })
}

fn cmd_simulate(s: &mut Scenario, out: &Path, pulses: Option<u64>) -> Result<()> {
    if let Some(n) = pulses {
        s.run.pulse_count = n;
    }
    s.validate()?;
    let sim = simulate(s)?;
    let count = sim.channels.len() as u8;
    let mut files = Vec::new();
    for (ch, tags) in sim.channels.iter().enumerate() {
        let name = format!("ch{ch}.ttg");
        let file = TagFile {
            tick_resolution_ps: sim.tick_resolution_ps,
            channel_count: count,
            tags: tags.clone(),
        };
        let mut w = create(out, &name)?;
        tagio::write_binary(&mut w, &file)?;
        w.flush()?;
        println!("{name}: {} tags", tags.len());
        files.push(name);
    }
    let manifest = json!({
        "seed": s.run.seed,
        "pulses": sim.pulses,
        "duration_s": sim.duration_s(),
        "tick_resolution_ps": sim.tick_resolution_ps,
        "bin_period_ps": sim.bin_period_ps,
        "loss_budget": loss_budget_json(s),
        "stats": sim.stats,
        "files": files,
        "scenario": s,
    });
    write_json(out, "manifest.json", &manifest)
}

fn analysis_rows(r: &RunAnalysis) -> Vec<(String, String)> {
    let mut rows = vec![
        ("duration_s".to_string(), r.duration_s.to_string()),
        ("center".into(), r.center.to_string()),
        ("side_minus".into(), r.side_minus.to_string()),
        ("side_plus".into(), r.side_plus.to_string()),
        ("accidental_mean".into(), r.accidental_mean.to_string()),
        ("car".into(), r.car.car.to_string()),
    ];
    for (i, s) in r.rates.singles.iter().enumerate() {
        rows.push((format!("singles_{i}_hz"), s.rate_hz.to_string()));
    }
    rows.push(("coincidences_hz".into(), r.rates.coincidences.rate_hz.to_string()));
    if let Some(p) = &r.center_peak {
        rows.push(("center_position_ps".into(), p.position_ps.to_string()));
        rows.push(("center_fwhm_ps".into(), p.fwhm_ps.to_string()));
    }
    rows
}

fn write_analysis(out: &Path, format: Format, r: &RunAnalysis) -> Result<()> {
    let mut w = create(out, "histogram.csv")?;
    r.histogram.write_csv(&mut w)?;
    w.flush()?;
    match format {
        Format::Json => write_json(out, "analysis.json", r)?,
        Format::Csv => {
            let mut w = create(out, "analysis.csv")?;
            writeln!(w, "key,value")?;
            for (k, v) in analysis_rows(r) {
                writeln!(w, "{k},{v}")?;
            }
            w.flush()?;
        }
    }
    println!(
        "center {} side {}/{} accidentals {:.2}/window CAR {:.1}",
        r.center, r.side_minus, r.side_plus, r.accidental_mean, r.car.car
    );
    Ok(())
}

fn read_manifest(files: &[PathBuf]) -> Option<Value> {
    let dir = files.first()?.parent()?;
    let text = fs::read_to_string(dir.join("manifest.json")).ok()?;
    serde_json::from_str(&text).ok()
}

fn cmd_analyze(
    g: &Global,
    files: &[PathBuf],
    channels: &[u8],
    tick_ps: f64,
    duration_s: Option<f64>,
) -> Result<()> {
    let manifest = read_manifest(files);
    let explicit = g.config.is_some() || g.scenario.is_some();
    let scenario = match manifest.as_ref().and_then(|m| m.get("scenario")) {
        Some(v) if !explicit => serde_json::from_value::<Scenario>(v.clone())
            .map_err(|e| usage(format!("manifest scenario: {e}")))?,
        _ => resolve_scenario(g)?,
    };
    let mut tick = None;
    let mut tags = Vec::new();
    for path in files {
        let f = tagio::load(path, tick_ps).map_err(|e| match e {
            timebin_core::Error::Io(io) => usage(format!("cannot read {}: {io}", path.display())),
            other => anyhow::Error::from(other).context(format!("reading {}", path.display())),
        })?;
        match tick {
            None => tick = Some(f.tick_resolution_ps),
            Some(t) if t != f.tick_resolution_ps => bail!(
                "{} has tick resolution {} ps, expected {t} ps",
                path.display(),
                f.tick_resolution_ps
            ),
            _ => {}
        }
        tags.extend(f.tags);
    }
    let tick = tick.unwrap_or(tick_ps);
    tags.sort_by_key(|t| (t.ticks, t.channel));
    let pick = |ch: u8| -> Vec<u64> { tags.iter().filter(|t| t.channel == ch).map(|t| t.ticks).collect() };
    let (a, b) = (pick(channels[0]), pick(channels[1]));
    let duration = duration_s
        .or_else(|| manifest.as_ref()?.get("duration_s")?.as_f64())
        .unwrap_or_else(|| {
            let first = tags.first().map_or(0, |t| t.ticks);
            let last = tags.last().map_or(0, |t| t.ticks);
            (last - first) as f64 * tick * 1e-12
        });
    let r = analyze_streams(
        &a,
        &b,
        duration,
        tick,
        scenario.run.units.bin_period_ps,
        &scenario.analysis,
    )?;
    write_analysis(&g.out, g.format, &r)
}

fn cmd_sweep_phase(g: &Global, s: &mut Scenario, point_pulses: Option<u64>, points: Option<usize>) -> Result<()> {
    if let Some(n) = point_pulses {
        s.sweep.point_pulses = n;
    }
    if let Some(n) = points {
        s.sweep.phase_points = n;
    }
    s.validate()?;
    let report = sweep_phase(s, s.run.seed)?;
    if g.format == Format::Csv {
        let mut w = create(&g.out, "fringe.csv")?;
        report.write_csv(&mut w)?;
        w.flush()?;
    }
    write_json(&g.out, "fringe.json", &report)?;
    match (&report.fit, &report.fit_error) {
        (Some(f), _) => println!(
            "visibility raw {:.4} ± {:.4} corrected {}",
            f.visibility,
            f.visibility_err,
            report
                .corrected_visibility
                .map_or("undefined".to_string(), |v| format!("{v:.4}"))
        ),
        (None, e) => bail!("fringe fit failed: {}", e.as_deref().unwrap_or("unknown")),
    }
    Ok(())
}

fn cmd_sweep_power(g: &Global, s: &mut Scenario, powers: Option<Vec<f64>>, pulses: Option<u64>) -> Result<()> {
    if let Some(p) = powers {
        s.sweep.power_mw = p;
    }
    if let Some(n) = pulses {
        s.run.pulse_count = n;
    }
    s.validate()?;
    let pts = sweep_power(s, s.run.seed)?;
    match g.format {
        Format::Json => write_json(&g.out, "power.json", &pts)?,
        Format::Csv => {
            let mut w = create(&g.out, "power.csv")?;
            writeln!(w, "{}", PowerPoint::CSV_HEADER)?;
            for p in &pts {
                writeln!(w, "{}", p.csv_row())?;
            }
            w.flush()?;
        }
    }
    for p in &pts {
        println!("{}", p.csv_row());
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cmd_oracle_check(g: &Global, n: usize, deltas: &[f64], samples: u64, alpha: f64) -> Result<bool> {
    let seed = g.seed.unwrap_or(1);
    let phases = vec![0.0; n];
    let mut results = Vec::new();
    for (i, d) in deltas.iter().enumerate() {
        let mut rng = rng_substream(seed, i as u64);
        let c = compare_with_oracle(n, d * PI, &phases, samples, &mut rng)?;
        let ratio = |r: Option<f64>| r.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "delta {d}π: chi2 {:.1}/{} p {:.4} center:side oracle {} mc {} {}",
            c.chi2,
            c.dof,
            c.p_value,
            ratio(c.oracle_center_side_ratio),
            ratio(c.mc_center_side_ratio),
            if c.passed(alpha) { "ok" } else { "FAIL" }
        );
        results.push(c);
    }
    let passed = results.iter().all(|c| c.passed(alpha));
    match g.format {
        Format::Json => write_json(
            &g.out,
            "oracle.json",
            &json!({ "seed": seed, "alpha": alpha, "passed": passed, "results": results }),
        )?,
        Format::Csv => {
            let mut w = create(&g.out, "oracle.csv")?;
            writeln!(w, "n_pulses,delta_rad,samples,chi2,dof,p_value,oracle_center_side,mc_center_side")?;
            for c in &results {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    c.n_pulses,
                    c.delta,
                    c.samples,
                    c.chi2,
                    c.dof,
                    c.p_value,
                    opt(c.oracle_center_side_ratio),
                    opt(c.mc_center_side_ratio)
                )?;
            }
            w.flush()?;
        }
    }
    Ok(passed)
}

fn cmd_report(g: &Global, s: &mut Scenario, pulses: Option<u64>) -> Result<()> {
    if let Some(n) = pulses {
        s.run.pulse_count = n;
    }
    s.validate()?;
    if s.topology != Topology::TwoReceiver {
        let r = run_and_analyze(s)?;
        return write_analysis(&g.out, g.format, &r);
    }
    let tags = qkd::distribute_and_detect(s)?;
    let sifted = qkd::sift(
        &tags.alice,
        &tags.bob,
        tags.tick_resolution_ps,
        s.analysis.window_ps,
        tags.bin_period_ps,
    )?;
    let rep = qkd::report(&sifted)?;
    for (name, bits) in [
        ("alice_time.bits", &sifted.time.alice_bits),
        ("bob_time.bits", &sifted.time.bob_bits),
        ("alice_phase.bits", &sifted.phase.alice_bits),
        ("bob_phase.bits", &sifted.phase.bob_bits),
    ] {
        let mut w = create(&g.out, name)?;
        qkd::write_key_bits(&mut w, bits)?;
        w.flush()?;
    }
    match g.format {
        Format::Json => write_json(&g.out, "qkd.json", &rep)?,
        Format::Csv => {
            let mut w = create(&g.out, "qkd.csv")?;
            writeln!(w, "basis,pairs,errors,qber,qber_sigma")?;
            for b in [&rep.time, &rep.phase] {
                writeln!(w, "{:?},{},{},{},{}", b.basis, b.pair_count, b.errors, b.qber, b.qber_sigma)?;
            }
            w.flush()?;
        }
    }
    println!(
        "qber time {:.4} phase {:.4} key fraction {:.4} entangled {} key positive {}",
        rep.time.qber, rep.phase.qber, rep.key_fraction, rep.threshold.entangled, rep.threshold.key_positive
    );
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    fs::create_dir_all(&g.out).with_context(|| format!("cannot create {}", g.out.display()))?;
    match &cli.command {
        Command::Simulate { pulses } => cmd_simulate(&mut resolve_scenario(g)?, &g.out, *pulses)?,
        Command::Analyze { files, channels, tick_ps, duration_s } => {
            cmd_analyze(g, files, channels, *tick_ps, *duration_s)?
        }
        Command::SweepPhase { point_pulses, points } => {
            cmd_sweep_phase(g, &mut resolve_scenario(g)?, *point_pulses, *points)?
        }
        Command::SweepPower { powers, pulses } => {
            cmd_sweep_power(g, &mut resolve_scenario(g)?, powers.clone(), *pulses)?
        }
        Command::OracleCheck { n_pulses, deltas, samples, alpha } => {
            if !cmd_oracle_check(g, *n_pulses, deltas, *samples, *alpha)? {
                eprintln!("oracle check failed");
                return Ok(ExitCode::from(1));
            }
        }
        Command::Report { pulses } => cmd_report(g, &mut resolve_scenario(g)?, *pulses)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
