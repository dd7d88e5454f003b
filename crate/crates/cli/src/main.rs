use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use arcfit_core::fitter::{fit_multi, fit_single_arc, validate, ArcSpline, FitConfig, Verdict};
use arcfit_core::io::{config_hash, format_points, format_trajectory, parse_points, parse_trajectory, write_atomic, SplineFile};
use arcfit_core::lane_ingest::{ingest, Side};
use arcfit_core::models::{Association, DataPoint, NodeVector};
use arcfit_core::svg::render_svg;
use arcfit_core::synth::{generate, lane_path, trajectory, GenerateParams, Kind, TrajectoryNoise};
use arcfit_core::{ArcSpan, FitError};

#[derive(Parser)]
#[command(name = "arcfit", version, about = "Fit G1 arc splines to ordered 2D points with covariances")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Left,
    Right,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic points (circle, two-arc, line, s-curve, lane) or a
    /// vehicle trajectory (trajectory).
    Generate {
        kind: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
        /// TOML file with generator parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of points (overrides the config file).
        #[arg(long)]
        points: Option<usize>,
    },
    /// Convert a trajectory file into planar lane points with propagated
    /// covariances.
    Ingest {
        trajectory: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "left")]
        side: SideArg,
    },
    /// Fit one arc to all points.
    FitSingle {
        points: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fit a multi-segment arc spline.
    FitMulti {
        points: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write an SVG plot.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Render points and an optional spline to SVG.
    Render {
        points: PathBuf,
        #[arg(long)]
        spline: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
}

enum Failure {
    Input(String),
    Output(String),
    Solver(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Output(_) => 3,
            Failure::Solver(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Output(m) | Failure::Solver(m) => m,
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    write_atomic(path, contents.as_bytes()).map_err(|e| Failure::Output(format!("{}: {e}", path.display())))
}

fn load_points(path: &Path) -> Result<Vec<DataPoint>, Failure> {
    parse_points(&read(path)?).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&Path>) -> Result<FitConfig, Failure> {
    let cfg = match path {
        Some(p) => toml::from_str::<FitConfig>(&read(p)?).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?,
        None => FitConfig::default(),
    };
    cfg.validate().map_err(|e| Failure::Input(e.to_string()))?;
    Ok(cfg)
}

fn fit_failure(e: FitError) -> Failure {
    match e {
        FitError::TooFewPoints(n) => Failure::Input(format!("need ≥ 3 points, got {n}")),
        FitError::Solver(report) => Failure::Solver(format!(
            "solver failed ({:?}) after {} outer / {} inner iterations",
            report.termination, report.outer_iterations, report.inner_iterations
        )),
        other => Failure::Input(other.to_string()),
    }
}

fn cmd_generate(kind: &str, seed: u64, output: &Path, config: Option<&Path>, points: Option<usize>) -> Result<(), Failure> {
    let mut params: GenerateParams = match config {
        Some(p) => toml::from_str(&read(p)?).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?,
        None => GenerateParams::default(),
    };
    if points.is_some() {
        params.points = points;
    }
    if kind == "trajectory" {
        let n = params.points.unwrap_or(768);
        if n < 2 {
            return Err(Failure::Input(format!("need at least 2 states, got {n}")));
        }
        let states = trajectory(&lane_path(), n, 1.8, &TrajectoryNoise::default(), seed);
        write(output, &format_trajectory(&states))?;
        println!("states {n}");
        return Ok(());
    }
    let kind: Kind = kind.parse().map_err(Failure::Input)?;
    let (pts, truth) = generate(kind, &params, seed).map_err(Failure::Input)?;
    let mut sidecar = output.as_os_str().to_owned();
    sidecar.push(".truth.json");
    let truth_json = serde_json::to_string_pretty(&truth).expect("truth serializes") + "\n";
    write(output, &format_points(&pts))?;
    write(Path::new(&sidecar), &truth_json)?;
    println!("points {}", pts.len());
    println!("length {:.6}", truth.total_length);
    Ok(())
}

fn cmd_ingest(path: &Path, output: &Path, side: SideArg) -> Result<(), Failure> {
    let states = parse_trajectory(&read(path)?).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let side = match side {
        SideArg::Left => Side::Left,
        SideArg::Right => Side::Right,
    };
    let pts = ingest(&states, side).map_err(|e| Failure::Input(e.to_string()))?;
    write(output, &format_points(&pts))?;
    println!("points {}", pts.len());
    Ok(())
}

fn cmd_fit_single(path: &Path, output: &Path, config: Option<&Path>) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let pts = load_points(path)?;
    let (arc, report) = fit_single_arc(&pts, &cfg).map_err(fit_failure)?;
    let nodes = NodeVector::single(&arc);
    let assoc = Association::whole(pts.len()).map_err(|e| Failure::Input(e.to_string()))?;
    let validation = validate(&nodes, &assoc, &pts, &cfg);
    let stats = &validation.segments[0];
    let pass = 1.0 - stats.invalid_count as f64 / stats.owned_points as f64;
    let spline = ArcSpline::new(nodes, assoc, &validation);
    let file = SplineFile::from_spline(&spline, &pts, validation.verdict, config_hash(&cfg), report.cost);
    write(output, &file.to_json())?;
    println!("cost {:.6}", report.cost);
    match ArcSpan::of(&arc) {
        Ok(span) => println!("radius {:.6}", span.geometry.radius),
        Err(_) => println!("radius inf"),
    }
    println!("chi2_pass_rate {pass:.4}");
    println!("termination {:?}", report.termination);
    println!("verdict {}", verdict_name(validation.verdict));
    Ok(())
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Valid => "valid",
        Verdict::Invalid => "invalid",
        Verdict::Capped => "capped",
    }
}

fn cmd_fit_multi(path: &Path, output: &Path, config: Option<&Path>, plot: Option<&Path>) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let pts = load_points(path)?;
    let fit = fit_multi(&pts, &cfg).map_err(fit_failure)?;
    let file = SplineFile::from_spline(&fit.spline, &pts, fit.report.verdict, config_hash(&cfg), fit.solve.cost);
    write(output, &file.to_json())?;
    if let Some(plot) = plot {
        write(plot, &render_svg(&pts, Some(&file)))?;
    }
    println!("segments {}", file.metadata.segments);
    println!("total_length {:.6}", file.metadata.total_length);
    println!("control_points {}", file.metadata.control_points);
    println!("rounds {}", fit.history.len());
    println!("verdict {}", verdict_name(fit.report.verdict));
    if fit.report.verdict == Verdict::Capped {
        eprintln!("warning: segment cap reached with invalid segments remaining");
    }
    Ok(())
}

fn cmd_render(points: &Path, spline: Option<&Path>, output: &Path) -> Result<(), Failure> {
    let pts = load_points(points)?;
    let file = match spline {
        Some(p) => Some(SplineFile::from_json(&read(p)?).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?),
        None => None,
    };
    write(output, &render_svg(&pts, file.as_ref()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate { kind, seed, output, config, points } => cmd_generate(kind, *seed, output, config.as_deref(), *points),
        Command::Ingest { trajectory, output, side } => cmd_ingest(trajectory, output, *side),
        Command::FitSingle { points, output, config } => cmd_fit_single(points, output, config.as_deref()),
        Command::FitMulti { points, output, config, plot } => cmd_fit_multi(points, output, config.as_deref(), plot.as_deref()),
        Command::Render { points, spline, output } => cmd_render(points, spline.as_deref(), output),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
