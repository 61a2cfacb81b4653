use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crowd_anomaly::eval::labels_to_csv;
use crowd_anomaly::pipeline::metrics_report;
use crowd_anomaly::synth::SceneScript;
use crowd_anomaly::{run_pipeline, DumpSet, Result, RunManifest};

/// Training-less frame-level anomaly detection for crowd video.
#[derive(Parser, Debug)]
#[command(name = "crowd-anomaly", version, args_conflicts_with_subcommands = true, subcommand_negates_reqs = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a scene script to a frame directory plus labels.csv.
    Render(RenderArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Frame directory (PGM/PNG) or scene script file.
    #[arg(long, value_name = "DIR|SCRIPT", required = true)]
    input: Option<PathBuf>,

    /// Configuration overrides in `key = value` form.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Per-frame ground truth (`frame_index,label`).
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,

    /// Output directory.
    #[arg(long, value_name = "DIR", required = true)]
    out: Option<PathBuf>,

    /// Debug dumps: comma list of masks, flow, pools, descriptors, proposals, or `all`.
    #[arg(long, value_name = "LIST")]
    dump: Option<String>,

    /// Noise seed override for scene script inputs.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    /// Print the per-stage timing table and write bench.txt.
    #[arg(long)]
    bench: bool,
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// Script file, or one of the built-in scenes: run-scene, opposing-mover, occlusion.
    #[arg(long, value_name = "NAME|FILE")]
    script: String,

    /// Output directory; frames go to OUT/frames.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,

    /// Number of frames (defaults to the script's length).
    #[arg(long, value_name = "T")]
    frames: Option<usize>,

    /// Noise seed override.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

fn builtin(name: &str) -> Option<SceneScript> {
    match name {
        "run-scene" => Some(SceneScript::run_scene()),
        "opposing-mover" => Some(SceneScript::opposing_mover()),
        "occlusion" => Some(SceneScript::occlusion()),
        _ => None,
    }
}

fn render(args: &RenderArgs) -> Result<()> {
    let mut script = match builtin(&args.script) {
        Some(s) => s,
        None => SceneScript::from_file(Path::new(&args.script))?,
    };
    if let Some(seed) = args.seed {
        script.seed = seed;
    }
    let t = args.frames.unwrap_or(script.frames);
    let (frames, labels, _) = script.render(t)?;
    frames.write_pgm_dir(&args.out.join("frames"))?;
    fs::write(args.out.join("labels.csv"), labels_to_csv(&labels))?;
    fs::write(args.out.join("scene.txt"), script.to_text())?;
    println!("wrote {} frames to {}", frames.len(), args.out.join("frames").display());
    Ok(())
}

fn run(args: &RunArgs) -> Result<()> {
    let (Some(input), Some(out)) = (&args.input, &args.out) else {
        unreachable!("clap enforces --input and --out");
    };
    let mut m = RunManifest::new(input, out);
    m.config = args.config.clone();
    m.labels = args.labels.clone();
    m.seed = args.seed;
    m.bench = args.bench;
    if let Some(list) = &args.dump {
        m.dumps = DumpSet::parse(list)?;
    }
    let summary = run_pipeline(&m)?;
    print!("{}", metrics_report(&summary));
    if args.bench {
        print!("\n{}", summary.timings.table());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Some(Command::Render(r)) => render(r),
        None => run(&cli.run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
