use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use clearance::pipeline::{run_pipeline, run_sweep, PipelineConfig, SweepParameter};

/// Finds vegetation hanging over the road below a clearance height.
#[derive(Debug, Parser)]
#[command(name = "clearance", version)]
struct Cli {
    /// Sequence directory (meta.json, frames/, optional images/).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use every n-th frame.
    #[arg(long)]
    step: Option<usize>,
    /// Target road sample count.
    #[arg(long)]
    samples: Option<usize>,
    /// Contour neighborhood radius in meters.
    #[arg(long)]
    radius: Option<f64>,
    /// Contour angle threshold in degrees.
    #[arg(long)]
    threshold: Option<f64>,
    /// Clearance height above the road in meters.
    #[arg(long)]
    height: Option<f64>,
    /// Worker threads (0 = all CPUs).
    #[arg(long)]
    threads: Option<usize>,
    /// Sweep one parameter: step, samples, radius or threshold, then a
    /// comma-separated value list.
    #[arg(long, num_args = 2, value_names = ["PARAM", "VALUES"])]
    sweep: Option<Vec<String>>,
    /// JSON or TOML config file. Command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn build_config(cli: &Cli) -> clearance::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = &cli.input {
        cfg.input = v.clone();
    }
    if let Some(v) = &cli.out {
        cfg.output = v.clone();
    }
    if let Some(v) = cli.step {
        cfg.concat.step = v;
    }
    if let Some(v) = cli.samples {
        cfg.sampling.target_count = v;
    }
    if let Some(v) = cli.radius {
        cfg.contour.radius = v;
    }
    if let Some(v) = cli.threshold {
        cfg.contour.angle_threshold = v;
    }
    if let Some(v) = cli.height {
        cfg.gauge.clearance_height = v;
    }
    if let Some(v) = cli.threads {
        cfg.threads = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_values(list: &str) -> clearance::Result<Vec<f64>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| clearance::Error::InvalidConfig(format!("bad sweep value '{s}'")))
        })
        .collect()
}

fn run(cli: &Cli) -> clearance::Result<()> {
    let cfg = build_config(cli)?;
    if let Some(sweep) = &cli.sweep {
        let param: SweepParameter = sweep[0].parse()?;
        let values = parse_values(&sweep[1])?;
        let table = run_sweep(&cfg, param, &values)?;
        let failed = table.rows.iter().filter(|r| r.error.is_some()).count();
        println!(
            "{} sweep: {} run(s), {failed} failed",
            param,
            table.rows.len()
        );
        return Ok(());
    }
    let report = run_pipeline(&cfg)?;
    let c = &report.counts;
    println!(
        "{}: {} point(s) from {} frame(s), {} contour point(s) in {} ring(s), {} of {} vegetation point(s) violate clearance, {} pixel hit(s)",
        report.sequence_id,
        c.total_points,
        c.frames_concatenated,
        c.contour_points,
        c.polygon_rings,
        c.vegetation_inliers,
        c.vegetation_points,
        c.pixel_hits
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
