//! Command-line front end: synthesize, solve, verify, benchmark and
//! gradient-check scene files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use diagram_sdf::constraints::{check_gradients, check_gradients_with, LossEvaluator};
use diagram_sdf::measure::Measurement;
use diagram_sdf::optimizer::{BatchSummary, RunSummary};
use diagram_sdf::renderer::{DEFAULT_MARGIN, DEFAULT_RESOLUTION, DEFAULT_THRESHOLD};
use diagram_sdf::{
    answer_choice, answer_completion, auto_viewport, batch_optimize, build_scene, measure_all,
    parse_spec, render_image, sample_grid, validate_spec, verify, Annotations, BatchReport,
    Configuration, CrowdPolicy, Method, OptimizeResult, OptimizerConfig, RasterImage, SceneSpec,
    Snapshot, Style, VerificationReport,
};

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NO_CONVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(name = "diagram-sdf", version, about = "Synthesize geometry diagrams from constraint scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a batch of layouts and render the best one.
    Synth(SynthArgs),
    /// Print the measured answer of the scene's target.
    Solve(SolveArgs),
    /// Check the best layout against the scene's `expect` line.
    Verify(VerifyArgs),
    /// Accuracy and timing per batch size, as CSV.
    Bench(BenchArgs),
    /// Compare analytic gradients with finite differences.
    CheckGrad(CheckGradArgs),
    /// Render a saved layout.
    Render(RenderArgs),
    /// Report diagnostics without optimizing.
    Validate { spec: PathBuf },
}

#[derive(Args, Clone)]
struct OptArgs {
    /// First seed of the batch.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    /// Disable the automatic crowd term.
    #[arg(long)]
    no_crowd: bool,
    /// Success threshold on the total loss.
    #[arg(long, default_value_t = 0.1)]
    threshold: f64,
    #[arg(long, default_value_t = 10_000)]
    steps: usize,
    /// Use Adam instead of plain gradient descent.
    #[arg(long)]
    adam: bool,
}

impl OptArgs {
    fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            max_steps: self.steps.max(1),
            success_threshold: self.threshold,
            method: if self.adam {
                Method::Adam
            } else {
                Method::GradientDescent
            },
            ..OptimizerConfig::default()
        }
    }

    fn crowd(&self) -> CrowdPolicy {
        CrowdPolicy {
            enabled: !self.no_crowd,
            ..CrowdPolicy::default()
        }
    }
}

#[derive(Args, Clone)]
struct RenderOpts {
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: usize,
    /// Iso-band half width in field units.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    render_threshold: f64,
    /// Colour-mapped distance field instead of black strokes.
    #[arg(long)]
    heatmap: bool,
    /// Blend stroke edges over one pixel.
    #[arg(long, conflicts_with = "heatmap")]
    antialias: bool,
    #[arg(long)]
    no_labels: bool,
}

#[derive(Args)]
struct SynthArgs {
    spec: PathBuf,
    #[command(flatten)]
    opt: OptArgs,
    #[command(flatten)]
    render: RenderOpts,
    #[arg(long, default_value = "./out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    spec: PathBuf,
    /// Comma-separated answer choices; prints the index of the nearest.
    #[arg(long, value_delimiter = ',')]
    choices: Option<Vec<f64>>,
    #[command(flatten)]
    opt: OptArgs,
}

#[derive(Args)]
struct VerifyArgs {
    spec: PathBuf,
    #[command(flatten)]
    opt: OptArgs,
}

#[derive(Args)]
struct BenchArgs {
    spec: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "32,64,128,256,512,1024,2048")]
    batch_sizes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    steps: usize,
    #[arg(long)]
    no_crowd: bool,
}

#[derive(Args)]
struct CheckGradArgs {
    spec: PathBuf,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_crowd: bool,
    /// Perturbs the analytic gradient; the check is then expected to fail.
    #[arg(long, hide = true)]
    corrupt_gradient: bool,
}

#[derive(Args)]
struct RenderArgs {
    spec: PathBuf,
    /// A snapshot JSON, or a synth report containing one.
    layout: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    render: RenderOpts,
}

/// Failure carrying the process exit code.
struct Fail(u8);

type CmdResult = Result<(), Fail>;

fn usage(msg: impl std::fmt::Display) -> Fail {
    eprintln!("error: {msg}");
    Fail(EXIT_USAGE)
}

fn load_spec(path: &Path) -> Result<SceneSpec, Fail> {
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{shown}: {e}")))?;
    match parse_spec(&text) {
        Ok(spec) => {
            for d in validate_spec(&spec) {
                eprintln!("{}", d.render(&shown));
            }
            Ok(spec)
        }
        Err(diags) => {
            for d in diags {
                eprintln!("{}", d.render(&shown));
            }
            Err(Fail(EXIT_USAGE))
        }
    }
}

fn run_batch(spec: &SceneSpec, opt: &OptArgs) -> Result<BatchReport, Fail> {
    if opt.batch == 0 {
        return Err(usage("--batch must be at least 1"));
    }
    if !(opt.threshold > 0.0) {
        return Err(usage("--threshold must be positive"));
    }
    batch_optimize(spec, opt.batch, opt.seed, &opt.optimizer(), opt.crowd()).map_err(usage)
}

fn render_config(
    spec: &SceneSpec,
    cfg: &Configuration,
    opts: &RenderOpts,
) -> Result<RasterImage, Fail> {
    let vp = auto_viewport(cfg, DEFAULT_MARGIN);
    let grid = sample_grid(cfg, opts.resolution, vp).map_err(usage)?;
    let ann = (!opts.no_labels).then(|| Annotations::from_scene(spec, cfg));
    let style = match (opts.heatmap, opts.antialias) {
        (true, _) => Style::Heatmap,
        (false, true) => Style::SmoothMask,
        (false, false) => Style::Mask,
    };
    render_image(&grid, opts.render_threshold, style, ann.as_ref()).map_err(usage)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Fail> {
    let text = serde_json::to_string_pretty(value).map_err(usage)?;
    fs::write(path, text + "\n").map_err(|e| usage(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct Artifacts {
    image: Option<String>,
    report: String,
}

#[derive(Serialize)]
struct RunReport {
    spec: String,
    base_seed: u64,
    batch: usize,
    runs: Vec<RunSummary>,
    summary: BatchSummary,
    best: Option<RunSummary>,
    measurements: Vec<Measurement>,
    verification: Option<VerificationReport>,
    snapshot: Option<Snapshot>,
    artifacts: Artifacts,
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    let spec = load_spec(&a.spec)?;
    let report = run_batch(&spec, &a.opt)?;
    eprintln!(
        "accuracy {:.3} over {} runs in {:.2}s",
        report.accuracy,
        report.runs.len(),
        report.wall_seconds
    );
    let best = report.best();
    let stem = a
        .spec
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());
    let seed = best.map_or(a.opt.seed, |b| b.seed);
    fs::create_dir_all(&a.out_dir).map_err(|e| usage(format!("{}: {e}", a.out_dir.display())))?;
    let json_path = a.out_dir.join(format!("{stem}-{seed}.json"));
    let png_path = a.out_dir.join(format!("{stem}-{seed}.png"));

    let mut image = None;
    let mut measurements = Vec::new();
    let mut verification = None;
    if let Some(b) = best {
        let img = render_config(&spec, &b.final_config, &a.render)?;
        let bytes = img.png_bytes().map_err(usage)?;
        fs::write(&png_path, bytes).map_err(|e| usage(format!("{}: {e}", png_path.display())))?;
        image = Some(png_path.display().to_string());
        measurements = measure_all(&spec, &b.final_config).unwrap_or_default();
        if spec.expected.is_some() {
            verification = verify(&spec, b, a.opt.threshold).ok();
        }
    }
    let mut json = report.to_json();
    json.summary.wall_seconds = None;
    let out = RunReport {
        spec: a.spec.display().to_string(),
        base_seed: a.opt.seed,
        batch: a.opt.batch,
        runs: json.runs,
        summary: json.summary,
        best: best.map(RunSummary::from),
        measurements,
        verification,
        snapshot: best.map(|b| b.final_config.snapshot(Some(b.final_loss))),
        artifacts: Artifacts {
            image,
            report: json_path.display().to_string(),
        },
    };
    write_json(&json_path, &out)?;
    println!("{}", json_path.display());
    if let Some(img) = &out.artifacts.image {
        println!("{img}");
    }
    if best.is_some() {
        Ok(())
    } else {
        eprintln!("no run converged to a non-degenerate layout");
        Err(Fail(EXIT_NO_CONVERGENCE))
    }
}

fn best_or_fail(report: &BatchReport) -> Result<&OptimizeResult, Fail> {
    report.best().ok_or_else(|| {
        eprintln!("no run converged to a non-degenerate layout");
        Fail(EXIT_NO_CONVERGENCE)
    })
}

fn cmd_solve(a: SolveArgs) -> CmdResult {
    let spec = load_spec(&a.spec)?;
    if spec.targets.len() != 1 {
        return Err(usage("solve needs exactly one target line"));
    }
    if let Some(c) = &a.choices {
        if c.len() < 2 {
            return Err(usage("--choices needs at least two values"));
        }
    }
    let report = run_batch(&spec, &a.opt)?;
    let best = best_or_fail(&report)?;
    let value = answer_completion(&spec, best).map_err(usage)?;
    match &a.choices {
        Some(choices) => println!("{}", answer_choice(value, choices).map_err(usage)?),
        None => println!("{value:.4}"),
    }
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> CmdResult {
    let spec = load_spec(&a.spec)?;
    if spec.expected.is_none() {
        return Err(usage("scene has no expect line"));
    }
    let report = run_batch(&spec, &a.opt)?;
    // Without a converged layout, the lowest-loss run is reported and fails
    // the loss check.
    let run = report.best().or_else(|| {
        report
            .runs
            .iter()
            .min_by(|x, y| x.final_loss.total_cmp(&y.final_loss))
    });
    let run = run.ok_or_else(|| usage("empty batch"))?;
    let v = verify(&spec, run, a.opt.threshold).map_err(usage)?;
    println!("{}", serde_json::to_string_pretty(&v).map_err(usage)?);
    if v.pass {
        Ok(())
    } else {
        Err(Fail(EXIT_FAIL))
    }
}

fn cmd_bench(a: BenchArgs) -> CmdResult {
    let spec = load_spec(&a.spec)?;
    if a.batch_sizes.is_empty() || a.batch_sizes.contains(&0) {
        return Err(usage("batch sizes must be positive"));
    }
    let ocfg = OptimizerConfig {
        max_steps: a.steps.max(1),
        ..OptimizerConfig::default()
    };
    let crowd = CrowdPolicy {
        enabled: !a.no_crowd,
        ..CrowdPolicy::default()
    };
    let opts = RenderOpts {
        resolution: DEFAULT_RESOLUTION,
        render_threshold: DEFAULT_THRESHOLD,
        heatmap: false,
        antialias: false,
        no_labels: false,
    };
    println!("batch,accuracy,wall_seconds,render_seconds");
    for &n in &a.batch_sizes {
        let report = batch_optimize(&spec, n, a.seed, &ocfg, crowd).map_err(usage)?;
        let start = Instant::now();
        let shown = report.best().unwrap_or(&report.runs[0]);
        render_config(&spec, &shown.final_config, &opts)?;
        let render = start.elapsed().as_secs_f64();
        println!("{n},{:.4},{:.3},{:.3}", report.accuracy, report.wall_seconds, render);
    }
    Ok(())
}

const GRADIENT_TOLERANCE: f64 = 1e-4;

fn cmd_check_grad(a: CheckGradArgs) -> CmdResult {
    if a.samples == 0 {
        return Err(usage("--samples must be at least 1"));
    }
    let spec = load_spec(&a.spec)?;
    let crowd = CrowdPolicy {
        enabled: !a.no_crowd,
        ..CrowdPolicy::default()
    };
    let check = if a.corrupt_gradient {
        let mut ev = LossEvaluator::new();
        check_gradients_with(&spec, crowd, a.samples, a.seed, |cfg, terms| {
            let mut g = ev.evaluate(cfg, terms, &cfg.read_params().0).gradient;
            for x in g.iter_mut() {
                *x = *x * 1.01 + 1e-3;
            }
            g
        })
    } else {
        check_gradients(&spec, crowd, a.samples, a.seed)
    }
    .map_err(usage)?;
    println!("{}", serde_json::to_string_pretty(&check).map_err(usage)?);
    if check.max_relative_error < GRADIENT_TOLERANCE {
        Ok(())
    } else {
        eprintln!(
            "relative gradient error {:.3e} exceeds {GRADIENT_TOLERANCE:e}",
            check.max_relative_error
        );
        Err(Fail(EXIT_FAIL))
    }
}

fn cmd_render(a: RenderArgs) -> CmdResult {
    let spec = load_spec(&a.spec)?;
    let text = fs::read_to_string(&a.layout)
        .map_err(|e| usage(format!("{}: {e}", a.layout.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(usage)?;
    let snap_value = value.get("snapshot").cloned().unwrap_or(value);
    let snap: Snapshot = serde_json::from_value(snap_value).map_err(usage)?;
    let mut cfg = build_scene(&spec, snap.seed);
    cfg.apply_snapshot(&snap).map_err(usage)?;
    let img = render_config(&spec, &cfg, &a.render)?;
    let is_pnm = a
        .out
        .extension()
        .is_some_and(|e| e == "pgm" || e == "ppm");
    let mut buf = Vec::new();
    if is_pnm {
        img.write_pnm(&mut buf).map_err(usage)?;
    } else {
        img.write_png(&mut buf).map_err(usage)?;
    }
    fs::write(&a.out, buf).map_err(|e| usage(format!("{}: {e}", a.out.display())))?;
    println!("{}", a.out.display());
    Ok(())
}

fn cmd_validate(path: PathBuf) -> CmdResult {
    load_spec(&path).map(|_| ())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Bench(a) => cmd_bench(a),
        Command::CheckGrad(a) => cmd_check_grad(a),
        Command::Render(a) => cmd_render(a),
        Command::Validate { spec } => cmd_validate(spec),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail(code)) => ExitCode::from(code),
    }
}
