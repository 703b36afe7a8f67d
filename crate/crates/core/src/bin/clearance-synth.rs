use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use clearance::synth::{generate_scene, write_scene, SceneSpec};

/// Writes a synthetic road scene with a planted low branch.
#[derive(Debug, Parser)]
#[command(name = "clearance-synth", version)]
struct Cli {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Frames to split the scene across.
    #[arg(long, default_value_t = 1)]
    frames: usize,
    /// Also write flat gray camera images.
    #[arg(long)]
    images: bool,
    /// Scene spec as JSON; replaces the built-in branch scene.
    #[arg(long)]
    spec: Option<PathBuf>,
}

fn run(cli: &Cli) -> clearance::Result<()> {
    let spec = match &cli.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| clearance::Error::Io {
                path: path.clone(),
                source: e,
            })?;
            serde_json::from_str(&text).map_err(|e| clearance::Error::Json {
                path: path.clone(),
                source: e,
            })?
        }
        None => {
            let mut s = SceneSpec::branch_scene(cli.seed);
            s.frame_count = cli.frames;
            s.cameras.write_images = cli.images;
            s
        }
    };
    let scene = generate_scene(&spec)?;
    write_scene(&scene, &cli.out)?;
    println!(
        "wrote {} point(s) in {} frame(s) to {}; {} ground-truth inlier(s)",
        scene.world.len(),
        scene.sequence.frames.len(),
        cli.out.display(),
        scene.truth.inliers.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(&Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
