//! The `steering` command line.

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::analysis::{
    analyze_with_curve, csv_error, parse_x_values, set_for_counts, AnalysisReport, XSource,
    DEFAULT_THRESHOLD, DEFAULT_X,
};
use crate::error::{invalid, Result, SteeringError};
use crate::geometry::{werner_from_fidelity, MeasurementSet, WernerState, BUILTIN_SETS};
use crate::simulator::{
    apply_misalignment, draw_perturbed_axes, estimate_xk, run_cheat_with_curve, run_honest,
    CheatConfig, CountsTable, HonestConfig, MisalignmentConfig,
};
use crate::strategies::{bound_curve, c_infinity, deterministic_bound, BoundCurve};

pub const DEFAULT_SEED: u64 = 20_100_301;
pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const CSV_FORMAT_VERSION: u32 = 1;
pub const OUT_DIR_ENV: &str = "STEERING_OUT_DIR";

const SOURCE_FIDELITY: f64 = 0.992;

#[derive(Debug, Parser)]
#[command(
    name = "steering",
    version,
    about = "Loss-tolerant EPR-steering bounds, simulation and analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print C_n(ε) with its mixture, or D_n(m) with its ensemble size.
    Bounds(BoundsArgs),
    /// Write the bound curve as CSV.
    Curve(CurveArgs),
    /// Print the optimal cheating ensembles as JSON.
    Families(FamiliesArgs),
    /// Simulate an honest or cheating Alice and write the counts.
    Simulate(SimulateArgs),
    /// Analyze a counts file.
    Analyze(AnalyzeArgs),
    /// Estimate per-setting alignment bounds X_k by the waveplate Monte Carlo.
    Xk(XkArgs),
    /// Regenerate figure and table data.
    Reproduce(ReproduceArgs),
    /// Re-run the command recorded in a manifest.
    Rerun { manifest: PathBuf },
}

#[derive(Debug, Args)]
pub struct SetArgs {
    /// Built-in set name.
    #[arg(long, conflicts_with = "set_file")]
    pub set: Option<String>,
    /// Set in the text format (`set: <name> n: <n>` then one axis per line).
    #[arg(long)]
    pub set_file: Option<PathBuf>,
}

impl SetArgs {
    fn resolve(&self) -> Result<MeasurementSet> {
        match (&self.set, &self.set_file) {
            (Some(name), None) => MeasurementSet::builtin(name),
            (None, Some(path)) => read_to_string(path)?.parse(),
            _ => Err(invalid(format!(
                "give --set <{}> or --set-file <path>",
                BUILTIN_SETS.join("|")
            ))),
        }
    }
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[command(flatten)]
    pub set: SetArgs,
    #[arg(long, conflicts_with = "m")]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub m: Option<usize>,
    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[command(flatten)]
    pub set: SetArgs,
    #[arg(long, default_value_t = 100)]
    pub resolution: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Add the n → ∞ bound as a column.
    #[arg(long)]
    pub c_infinity: bool,
}

#[derive(Debug, Args)]
pub struct FamiliesArgs {
    #[command(flatten)]
    pub set: SetArgs,
    #[arg(long)]
    pub m: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Honest,
    Cheat,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub mode: Mode,
    #[command(flatten)]
    pub set: SetArgs,
    #[arg(long)]
    pub rounds: u64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Singlet fidelity of the shared Werner state (honest).
    #[arg(long, conflicts_with = "visibility")]
    pub fidelity: Option<f64>,
    /// Werner visibility (honest).
    #[arg(long)]
    pub visibility: Option<f64>,
    /// Alice's per-round announcement probability (honest).
    #[arg(long)]
    pub heralding: Option<f64>,
    /// Target efficiency of the cheating mixture (cheat).
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub bob_efficiency: f64,
    /// Use waveplate-perturbed projectors drawn with this sample index (honest).
    #[arg(long)]
    pub misalignment_sample: Option<u64>,
    /// Output counts file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub counts: PathBuf,
    /// Measurement set file for counts of a custom set without echoed axes.
    #[arg(long)]
    pub set_file: Option<PathBuf>,
    /// Same alignment bound for every setting.
    #[arg(long, conflicts_with_all = ["x_file", "x_monte_carlo"])]
    pub x: Option<f64>,
    /// Per-setting alignment bounds, one per line.
    #[arg(long, conflicts_with = "x_monte_carlo")]
    pub x_file: Option<PathBuf>,
    /// Estimate alignment bounds by the waveplate Monte Carlo.
    #[arg(long)]
    pub x_monte_carlo: bool,
    #[arg(long, default_value_t = 10_000)]
    pub x_samples: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub x_seed: u64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Report file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-setting CSV export.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct XkArgs {
    #[command(flatten)]
    pub set: SetArgs,
    /// Radians; defaults to the tuned value.
    #[arg(long)]
    pub alignment_sigma: Option<f64>,
    /// Radians; defaults to the tuned value.
    #[arg(long)]
    pub repeatability_sigma: Option<f64>,
    /// Radians; defaults to π/250.
    #[arg(long)]
    pub retardance_tolerance: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Fig3,
    Fig4,
    Fig6,
    Tables,
    All,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    pub target: Target,
    #[arg(long, env = OUT_DIR_ENV, default_value = "results")]
    pub out_dir: PathBuf,
    /// Rounds per simulated point.
    #[arg(long, default_value_t = 1_000_000)]
    pub rounds: u64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub resolution: usize,
}

/// Provenance written next to every output file.
#[derive(Debug, Serialize)]
struct Manifest<'a> {
    format_version: u32,
    command: &'a str,
    argv: &'a [String],
    seed: Option<u64>,
    config: Value,
    artifacts: Vec<String>,
    tool_version: &'static str,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        SteeringError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents).map_err(|e| {
        SteeringError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_manifest(
    path: &Path,
    command: &str,
    argv: &[String],
    seed: Option<u64>,
    config: Value,
    artifacts: &[PathBuf],
) -> Result<()> {
    let m = Manifest {
        format_version: MANIFEST_FORMAT_VERSION,
        command,
        argv,
        seed,
        config,
        artifacts: artifacts.iter().map(|p| p.display().to_string()).collect(),
        tool_version: env!("CARGO_PKG_VERSION"),
    };
    write_file(path, &(serde_json::to_string_pretty(&m)? + "\n"))
}

/// CSV text with a leading `# format_version` comment.
fn csv_text<R: Serialize>(rows: &[R]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    let body = w
        .into_inner()
        .map_err(|e| csv_error(e.into_error().into()))?;
    Ok(format!(
        "# format_version: {CSV_FORMAT_VERSION}\n{}",
        String::from_utf8(body).expect("csv output is utf-8")
    ))
}

/// Parses `args` (without the program name) and runs the command, writing
/// human-facing output to `out`.
pub fn run(args: &[String], out: &mut dyn Write) -> Result<()> {
    let argv: Vec<String> = std::iter::once("steering".to_string())
        .chain(args.iter().cloned())
        .collect();
    let cli = Cli::try_parse_from(&argv).map_err(|e| invalid(e.to_string()))?;
    execute(cli.command, args, out)
}

pub fn execute(command: Command, argv: &[String], out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Bounds(a) => cmd_bounds(&a, out),
        Command::Curve(a) => cmd_curve(&a, argv, out),
        Command::Families(a) => cmd_families(&a, out),
        Command::Simulate(a) => cmd_simulate(&a, argv, out),
        Command::Analyze(a) => cmd_analyze(&a, argv, out),
        Command::Xk(a) => cmd_xk(&a, out),
        Command::Reproduce(a) => cmd_reproduce(&a, argv, out),
        Command::Rerun { manifest } => cmd_rerun(&manifest, out),
    }
}

fn cmd_bounds(a: &BoundsArgs, out: &mut dyn Write) -> Result<()> {
    let set = a.set.resolve()?;
    let doc = match (a.epsilon, a.m) {
        (Some(eps), None) => {
            let (c, mixture) = bound_curve(&set)?.at(eps)?;
            json!({ "set": set.name(), "n": set.n(), "epsilon": eps, "C": c, "mixture": mixture })
        }
        (None, Some(m)) => {
            let fam = deterministic_bound(&set, m)?;
            json!({ "set": set.name(), "n": set.n(), "m": m, "D": fam.value, "p": fam.p(), "exact": fam.exact })
        }
        _ => return Err(invalid("give exactly one of --epsilon or --m")),
    };
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&doc)?)?;
        return Ok(());
    }
    writeln!(out, "set {} (n = {})", set.name(), set.n())?;
    if let Some(c) = doc.get("C") {
        writeln!(out, "C({}) = {c}", doc["epsilon"])?;
        let parts: Vec<String> = doc["mixture"]["components"]
            .as_array()
            .into_iter()
            .flatten()
            .map(|c| {
                let w = format!("{:.9}", c["weight"].as_f64().unwrap_or(f64::NAN));
                format!("m={}:{}", c["m"], w.trim_end_matches('0').trim_end_matches('.'))
            })
            .collect();
        writeln!(out, "mixture {}", parts.join(" "))?;
    } else {
        writeln!(out, "D({}) = {}", doc["m"], doc["D"])?;
        writeln!(
            out,
            "p = {}{}",
            doc["p"],
            if doc["exact"] == true {
                ""
            } else {
                " (heuristic)"
            }
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CurveRow {
    epsilon: f64,
    #[serde(rename = "C")]
    c: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    c_infinity: Option<f64>,
}

fn curve_rows(curve: &BoundCurve, resolution: usize, with_inf: bool) -> Result<Vec<CurveRow>> {
    curve
        .sample(resolution)?
        .into_iter()
        .map(|(epsilon, c)| {
            Ok(CurveRow {
                epsilon,
                c,
                c_infinity: if with_inf {
                    Some(c_infinity(epsilon)?)
                } else {
                    None
                },
            })
        })
        .collect()
}

fn cmd_curve(a: &CurveArgs, argv: &[String], out: &mut dyn Write) -> Result<()> {
    let set = a.set.resolve()?;
    let curve = bound_curve(&set)?;
    let rows = curve_rows(&curve, a.resolution, a.c_infinity)?;
    write_file(&a.out, &csv_text(&rows)?)?;
    write_manifest(
        &manifest_path(&a.out),
        "curve",
        argv,
        None,
        json!({ "set": set.name(), "resolution": a.resolution, "c_infinity": a.c_infinity }),
        std::slice::from_ref(&a.out),
    )?;
    writeln!(out, "wrote {} rows to {}", rows.len(), a.out.display())?;
    Ok(())
}

fn cmd_families(a: &FamiliesArgs, out: &mut dyn Write) -> Result<()> {
    let set = a.set.resolve()?;
    let fams: Vec<Value> = match a.m {
        Some(m) => vec![deterministic_bound(&set, m)?.to_json()],
        None => bound_curve(&set)?
            .families()
            .iter()
            .map(|f| f.to_json())
            .collect(),
    };
    let doc = json!({ "set": set.name(), "n": set.n(), "families": fams });
    writeln!(out, "{}", serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

fn honest_state(fidelity: Option<f64>, visibility: Option<f64>) -> Result<WernerState> {
    match (fidelity, visibility) {
        (Some(f), None) => werner_from_fidelity(f),
        (None, Some(v)) => WernerState::new(v),
        (None, None) => Err(invalid(
            "honest simulation needs --fidelity or --visibility",
        )),
        _ => Err(invalid("give only one of --fidelity and --visibility")),
    }
}

fn simulate_counts(a: &SimulateArgs) -> Result<CountsTable> {
    let set = a.set.resolve()?;
    match a.mode {
        Mode::Honest => {
            if a.epsilon.is_some() {
                return Err(invalid("--epsilon applies to cheat simulations only"));
            }
            let cfg = HonestConfig {
                set,
                state: honest_state(a.fidelity, a.visibility)?,
                alice_heralding: a
                    .heralding
                    .ok_or_else(|| invalid("honest simulation needs --heralding"))?,
                bob_efficiency: a.bob_efficiency,
                rounds: a.rounds,
                seed: a.seed,
            };
            match a.misalignment_sample {
                None => run_honest(&cfg),
                Some(sample) => {
                    let axes =
                        draw_perturbed_axes(&MisalignmentConfig::default(), &cfg.set, sample)?;
                    apply_misalignment(&cfg, &axes)
                }
            }
        }
        Mode::Cheat => {
            if a.fidelity.is_some() || a.visibility.is_some() || a.heralding.is_some() {
                return Err(invalid(
                    "--fidelity, --visibility and --heralding apply to honest simulations only",
                ));
            }
            if a.misalignment_sample.is_some() {
                return Err(invalid(
                    "--misalignment-sample applies to honest simulations only",
                ));
            }
            let cfg = CheatConfig {
                target_epsilon: a
                    .epsilon
                    .ok_or_else(|| invalid("cheat simulation needs --epsilon"))?,
                bob_efficiency: a.bob_efficiency,
                rounds: a.rounds,
                seed: a.seed,
                set,
            };
            cfg.validate()?;
            let curve = bound_curve(&cfg.set)?;
            run_cheat_with_curve(&cfg, &curve)
        }
    }
}

fn cmd_simulate(a: &SimulateArgs, argv: &[String], out: &mut dyn Write) -> Result<()> {
    let table = simulate_counts(a)?;
    let text = table.to_json_string()?;
    match &a.out {
        None => out.write_all(text.as_bytes())?,
        Some(path) => {
            write_file(path, &text)?;
            write_manifest(
                &manifest_path(path),
                "simulate",
                argv,
                Some(a.seed),
                table.config.clone(),
                std::slice::from_ref(path),
            )?;
            writeln!(
                out,
                "wrote {} clicks over {} rounds to {}",
                table.total_detections(),
                table.rounds,
                path.display()
            )?;
        }
    }
    Ok(())
}

fn analyze_report(a: &AnalyzeArgs) -> Result<AnalysisReport> {
    let counts = CountsTable::from_json_str(&read_to_string(&a.counts)?)?;
    let set = match &a.set_file {
        Some(p) => read_to_string(p)?.parse()?,
        None => set_for_counts(&counts)?,
    };
    let x_source = if let Some(x) = a.x {
        XSource::Constant(x)
    } else if let Some(p) = &a.x_file {
        XSource::Values(parse_x_values(&read_to_string(p)?)?)
    } else if a.x_monte_carlo {
        XSource::MonteCarlo(MisalignmentConfig {
            samples: a.x_samples,
            seed: a.x_seed,
            ..MisalignmentConfig::default()
        })
    } else {
        XSource::Constant(DEFAULT_X)
    };
    let curve = bound_curve(&set)?;
    analyze_with_curve(&counts, &curve, &set, &x_source, a.threshold)
}

fn cmd_analyze(a: &AnalyzeArgs, argv: &[String], out: &mut dyn Write) -> Result<()> {
    let report = analyze_report(a)?;
    let text = report.to_json_string()?;
    let mut artifacts = Vec::new();
    if let Some(path) = &a.csv {
        write_file(path, &report.to_csv()?)?;
        artifacts.push(path.clone());
    }
    match &a.out {
        None => out.write_all(text.as_bytes())?,
        Some(path) => {
            write_file(path, &text)?;
            artifacts.insert(0, path.clone());
            let v = &report.verdict;
            writeln!(
                out,
                "S = {:.5} ± {:.5}, epsilon = {:.5}, bound = {:.5}, significance = {:.2}, steering demonstrated: {}",
                v.s, v.delta_s, v.epsilon_hat, v.bound, v.significance, v.steering_demonstrated
            )?;
        }
    }
    if let Some(first) = artifacts.first() {
        write_manifest(
            &manifest_path(first),
            "analyze",
            argv,
            None,
            json!({ "counts": a.counts.display().to_string(), "threshold": a.threshold, "x_source": report.x_source }),
            &artifacts,
        )?;
    }
    Ok(())
}

fn cmd_xk(a: &XkArgs, out: &mut dyn Write) -> Result<()> {
    let set = a.set.resolve()?;
    let d = MisalignmentConfig::default();
    let cfg = MisalignmentConfig {
        waveplate_alignment_sigma: a.alignment_sigma.unwrap_or(d.waveplate_alignment_sigma),
        stage_repeatability_sigma: a.repeatability_sigma.unwrap_or(d.stage_repeatability_sigma),
        retardance_tolerance: a.retardance_tolerance.unwrap_or(d.retardance_tolerance),
        samples: a.samples,
        seed: a.seed,
    };
    let x = estimate_xk(&cfg, &set)?;
    let doc = json!({ "set": set.name(), "config": cfg, "X": x });
    writeln!(out, "{}", serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

fn cmd_rerun(path: &Path, out: &mut dyn Write) -> Result<()> {
    let doc: Value = serde_json::from_str(&read_to_string(path)?)
        .map_err(|e| SteeringError::Schema(format!("manifest: {e}")))?;
    if doc["format_version"] != MANIFEST_FORMAT_VERSION {
        return Err(SteeringError::Schema(
            "unsupported manifest format_version".into(),
        ));
    }
    let argv: Vec<String> = serde_json::from_value(doc["argv"].clone())
        .map_err(|e| SteeringError::Schema(format!("manifest argv: {e}")))?;
    if argv.first().map(String::as_str) == Some("rerun") {
        return Err(SteeringError::Schema("manifest records a rerun".into()));
    }
    run(&argv, out)
}

// Parameters of the simulated analogues of the experimental runs.
const NO_FIBER_HERALDING: f64 = 0.354;
const EXPERIMENT_SETS: [&str; 5] = [
    "octahedron3",
    "cube4",
    "icosahedron6",
    "dodecahedron10",
    "geodesic16",
];
const FIBER_RUNS: [(&str, f64); 2] = [("dodecahedron10", 0.132), ("geodesic16", 0.130)];
const FIG6_SETS: [&str; 6] = [
    "pair2",
    "octahedron3",
    "cube4",
    "icosahedron6",
    "dodecahedron10",
    "geodesic16",
];

struct Reproduction<'a> {
    args: &'a ReproduceArgs,
    artifacts: Vec<PathBuf>,
}

impl Reproduction<'_> {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.args.out_dir.join(name);
        write_file(&path, contents)?;
        self.artifacts.push(path);
        Ok(())
    }

    /// Distinct, reproducible seed per simulated point.
    fn seed(&self, index: u64) -> u64 {
        self.args
            .seed
            .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

fn set_label(name: &str) -> Result<String> {
    Ok(format!("n{}", MeasurementSet::builtin(name)?.n()))
}

fn reproduce_fig3(r: &mut Reproduction) -> Result<()> {
    #[derive(Serialize)]
    struct Point {
        set: String,
        n: usize,
        m: usize,
        epsilon: f64,
        #[serde(rename = "D")]
        d: f64,
        on_bound: bool,
    }
    let mut points = Vec::new();
    for name in FIG6_SETS {
        let set = MeasurementSet::builtin(name)?;
        let curve = bound_curve(&set)?;
        r.write(
            &format!("fig3_curve_{}.csv", set_label(name)?),
            &csv_text(&curve_rows(&curve, r.args.resolution, false)?)?,
        )?;
        let vertices: Vec<usize> = curve.vertices().iter().map(|v| v.m).collect();
        for f in curve.families() {
            points.push(Point {
                set: name.to_string(),
                n: set.n(),
                m: f.m,
                epsilon: f.m as f64 / set.n() as f64,
                d: f.value,
                on_bound: vertices.contains(&f.m),
            });
        }
    }
    let res = r.args.resolution;
    let inf: Vec<CurveRow> = (1..=res)
        .map(|i| {
            let e = i as f64 / res as f64;
            Ok(CurveRow {
                epsilon: e,
                c: c_infinity(e)?,
                c_infinity: None,
            })
        })
        .collect::<Result<_>>()?;
    r.write("fig3_curve_inf.csv", &csv_text(&inf)?)?;
    r.write("fig3_points.csv", &csv_text(&points)?)
}

#[derive(Serialize)]
struct RunRow {
    series: String,
    set: String,
    n: usize,
    seed: u64,
    rounds: u64,
    epsilon_target: f64,
    epsilon_hat: f64,
    #[serde(rename = "S")]
    s: f64,
    delta_s_stat: f64,
    delta_s_sys: f64,
    delta_s: f64,
    bound: f64,
    significance: f64,
    steering_demonstrated: bool,
}

impl RunRow {
    fn new(series: &str, seed: u64, rounds: u64, target: f64, rep: &AnalysisReport) -> Self {
        RunRow {
            series: series.to_string(),
            set: rep.set.clone(),
            n: rep.n,
            seed,
            rounds,
            epsilon_target: target,
            epsilon_hat: rep.epsilon_hat,
            s: rep.s,
            delta_s_stat: rep.budget.statistical,
            delta_s_sys: rep.budget.systematic,
            delta_s: rep.budget.total,
            bound: rep.verdict.bound,
            significance: rep.verdict.significance,
            steering_demonstrated: rep.verdict.steering_demonstrated,
        }
    }
}

/// Honest run with waveplate-perturbed projectors, analyzed with Monte Carlo
/// alignment bounds.
fn honest_point(name: &str, heralding: f64, rounds: u64, seed: u64) -> Result<AnalysisReport> {
    let set = MeasurementSet::builtin(name)?;
    let mis = MisalignmentConfig {
        seed,
        ..MisalignmentConfig::default()
    };
    let cfg = HonestConfig {
        set: set.clone(),
        state: werner_from_fidelity(SOURCE_FIDELITY)?,
        alice_heralding: heralding,
        bob_efficiency: 1.0,
        rounds,
        seed,
    };
    let axes = draw_perturbed_axes(&mis, &set, 0)?;
    let counts = apply_misalignment(&cfg, &axes)?;
    let x = estimate_xk(&mis, &set)?;
    let curve = bound_curve(&set)?;
    analyze_with_curve(
        &counts,
        &curve,
        &set,
        &XSource::Values(x),
        DEFAULT_THRESHOLD,
    )
}

fn reproduce_fig4(r: &mut Reproduction) -> Result<()> {
    let rounds = r.args.rounds;
    let mut rows = Vec::new();
    for (i, name) in EXPERIMENT_SETS.iter().enumerate() {
        let seed = r.seed(100 + i as u64);
        let rep = honest_point(name, NO_FIBER_HERALDING, rounds, seed)?;
        rows.push(RunRow::new(
            "honest_no_fiber",
            seed,
            rounds,
            NO_FIBER_HERALDING,
            &rep,
        ));
    }
    for (i, (name, herald)) in FIBER_RUNS.iter().enumerate() {
        let seed = r.seed(200 + i as u64);
        let rep = honest_point(name, *herald, rounds, seed)?;
        rows.push(RunRow::new("honest_fiber", seed, rounds, *herald, &rep));
    }
    r.write("fig4_points.csv", &csv_text(&rows)?)
}

fn reproduce_fig6(r: &mut Reproduction) -> Result<()> {
    #[derive(Serialize)]
    struct Point {
        set: String,
        n: usize,
        m: usize,
        seed: u64,
        epsilon_hat: f64,
        #[serde(rename = "S")]
        s: f64,
        #[serde(rename = "nS")]
        n_s: f64,
        delta_s_stat: f64,
        #[serde(rename = "D")]
        d: f64,
    }
    #[derive(Serialize)]
    struct Scaled {
        epsilon: f64,
        #[serde(rename = "C")]
        c: f64,
        #[serde(rename = "nC")]
        n_c: f64,
    }
    #[derive(Serialize)]
    struct Dashed {
        epsilon: f64,
        #[serde(rename = "S")]
        s: f64,
        #[serde(rename = "nS")]
        n_s: f64,
    }
    let rounds = r.args.rounds;
    let mut points = Vec::new();
    for (si, name) in FIG6_SETS.iter().enumerate() {
        let set = MeasurementSet::builtin(name)?;
        let n = set.n();
        let curve = bound_curve(&set)?;
        let label = set_label(name)?;
        let scaled: Vec<Scaled> = curve
            .sample(r.args.resolution)?
            .into_iter()
            .map(|(epsilon, c)| Scaled {
                epsilon,
                c,
                n_c: n as f64 * c,
            })
            .collect();
        r.write(&format!("fig6_curve_{label}.csv"), &csv_text(&scaled)?)?;
        let mut observed = Vec::new();
        for f in curve.families() {
            let seed = r.seed(1000 * (si as u64 + 1) + f.m as u64);
            let cfg = CheatConfig {
                set: set.clone(),
                target_epsilon: f.m as f64 / n as f64,
                bob_efficiency: 1.0,
                rounds,
                seed,
            };
            let counts = run_cheat_with_curve(&cfg, &curve)?;
            let rep = analyze_with_curve(
                &counts,
                &curve,
                &set,
                &XSource::Constant(1.0),
                DEFAULT_THRESHOLD,
            )?;
            observed.push((rep.epsilon_hat, rep.s));
            points.push(Point {
                set: name.to_string(),
                n,
                m: f.m,
                seed,
                epsilon_hat: rep.epsilon_hat,
                s: rep.s,
                n_s: n as f64 * rep.s,
                delta_s_stat: rep.budget.statistical,
                d: f.value,
            });
        }
        let dashed: Vec<Dashed> = two_strategy_envelope(&observed, r.args.resolution)
            .into_iter()
            .map(|(epsilon, s)| Dashed {
                epsilon,
                s,
                n_s: n as f64 * s,
            })
            .collect();
        r.write(&format!("fig6_dashed_{label}.csv"), &csv_text(&dashed)?)?;
    }
    r.write("fig6_points.csv", &csv_text(&points)?)
}

/// Best value reachable by mixing two observed deterministic strategies
/// `(ε_m, S_m)`: the upper concave envelope of `(ε, ε S)` divided by `ε`,
/// sampled between the smallest and largest observed efficiency.
fn two_strategy_envelope(points: &[(f64, f64)], resolution: usize) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|&(e, s)| (e, e * s)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for p in pts {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            if (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0) >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    let (lo, hi) = match (hull.first(), hull.last()) {
        (Some(a), Some(b)) => (a.0, b.0),
        _ => return Vec::new(),
    };
    let mut grid: Vec<f64> = (0..=resolution)
        .map(|i| lo + (hi - lo) * i as f64 / resolution as f64)
        .chain(hull.iter().map(|p| p.0))
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid.into_iter()
        .map(|e| {
            let seg = hull
                .windows(2)
                .find(|w| e <= w[1].0)
                .map(|w| (w[0], w[1]))
                .unwrap_or((hull[0], hull[0]));
            let g = if seg.1 .0 > seg.0 .0 {
                seg.0 .1 + (seg.1 .1 - seg.0 .1) * (e - seg.0 .0) / (seg.1 .0 - seg.0 .0)
            } else {
                seg.0 .1
            };
            (e, g / e)
        })
        .collect()
}

fn reproduce_tables(r: &mut Reproduction) -> Result<()> {
    #[derive(Serialize)]
    struct SysRow {
        series: String,
        n: usize,
        delta_s_sys: f64,
        mean_first_term: f64,
        mean_second_term: f64,
        mean_one_minus_x: f64,
        mean_delta_n: f64,
    }
    #[derive(Serialize)]
    struct TotalRow {
        series: String,
        n: usize,
        rounds: u64,
        #[serde(rename = "S")]
        s: f64,
        delta_s: f64,
        delta_s_sys: f64,
        delta_s_stat: f64,
    }
    let runs: Vec<(&str, &str, f64)> = EXPERIMENT_SETS
        .iter()
        .map(|s| ("no_fiber", *s, NO_FIBER_HERALDING))
        .chain(FIBER_RUNS.iter().map(|(s, h)| ("fiber", *s, *h)))
        .collect();
    let mut sys_rows = Vec::new();
    let mut total_rows = Vec::new();
    for (i, (series, name, herald)) in runs.into_iter().enumerate() {
        let seed = r.seed(300 + i as u64);
        let rep = honest_point(name, herald, r.args.rounds, seed)?;
        let n = rep.n as f64;
        let mut first = 0.0;
        let mut second = 0.0;
        for (e, p) in rep.settings.iter().zip(&rep.budget.per_setting) {
            let t1 = (1.0 - p.x + p.delta_n) * e.e_tilde.abs() / p.x;
            first += t1;
            second += p.delta_e - t1;
        }
        let per = &rep.budget.per_setting;
        sys_rows.push(SysRow {
            series: series.to_string(),
            n: rep.n,
            delta_s_sys: rep.budget.systematic,
            mean_first_term: first / n,
            mean_second_term: second / n,
            mean_one_minus_x: per.iter().map(|p| 1.0 - p.x).sum::<f64>() / n,
            mean_delta_n: per.iter().map(|p| p.delta_n).sum::<f64>() / n,
        });
        total_rows.push(TotalRow {
            series: series.to_string(),
            n: rep.n,
            rounds: r.args.rounds,
            s: rep.s,
            delta_s: rep.budget.total,
            delta_s_sys: rep.budget.systematic,
            delta_s_stat: rep.budget.statistical,
        });
    }
    r.write("table_systematic.csv", &csv_text(&sys_rows)?)?;
    r.write("table_total.csv", &csv_text(&total_rows)?)
}

fn cmd_reproduce(a: &ReproduceArgs, argv: &[String], out: &mut dyn Write) -> Result<()> {
    let mut r = Reproduction {
        args: a,
        artifacts: Vec::new(),
    };
    let all = a.target == Target::All;
    if all || a.target == Target::Fig3 {
        reproduce_fig3(&mut r)?;
    }
    if all || a.target == Target::Fig4 {
        reproduce_fig4(&mut r)?;
    }
    if all || a.target == Target::Fig6 {
        reproduce_fig6(&mut r)?;
    }
    if all || a.target == Target::Tables {
        reproduce_tables(&mut r)?;
    }
    let target = format!("{:?}", a.target).to_lowercase();
    let manifest = a.out_dir.join(format!("{target}.manifest.json"));
    write_manifest(
        &manifest,
        "reproduce",
        argv,
        Some(a.seed),
        json!({
            "target": target,
            "rounds": a.rounds,
            "resolution": a.resolution,
            "simulated": "points are simulated analogues, not measured data",
        }),
        &r.artifacts,
    )?;
    for p in &r.artifacts {
        writeln!(out, "{}", p.display())?;
    }
    Ok(())
}
