use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use vanf::geometry::HandLabel;
use vanf::harness::commands::{
    cmd_eval, cmd_gradcheck, cmd_render, cmd_synth, cmd_train, exit_code, RenderRequest, EXIT_CHECK_FAILED, EXIT_OK,
    EXIT_USAGE,
};
use vanf::harness::config::RunConfig;

#[derive(Parser)]
#[command(name = "vanf", version, about = "Visibility-aware neural radiance fields for two interacting hands")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted `key=value` override, e.g. `train.steps=50`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Hand {
    Left,
    Right,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    Synth(Common),
    /// Train, writing logs and checkpoints into the run directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to resume from.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Skip the held-out evaluation after training.
        #[arg(long)]
        no_eval: bool,
    },
    /// Render target views of one scene.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        scene: usize,
        #[arg(long, default_value_t = 0)]
        input_camera: usize,
        /// Render only this camera; all cameras otherwise.
        #[arg(long)]
        target_camera: Option<usize>,
        /// Drop one hand from encoding, distance queries and visibility.
        #[arg(long, value_enum)]
        exclude_hand: Option<Hand>,
        /// Also write predicted and ground-truth visibility maps.
        #[arg(long)]
        dump_visibility: bool,
    },
    /// PSNR / SSIM report on a dataset split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Finite-difference gradient suite; JSON report on stdout.
    Gradcheck(Common),
}

fn config(common: &Common, checkpoint: Option<PathBuf>) -> vanf::Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    if checkpoint.is_some() {
        cfg.checkpoint = checkpoint;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> vanf::Result<i32> {
    match cli.command {
        Command::Synth(common) => {
            let cfg = config(&common, None)?;
            let m = cmd_synth(&cfg)?;
            println!(
                "wrote {} train and {} test scenes ({} touching) to {}",
                m.train.len(),
                m.test.len(),
                m.touching,
                cfg.dataset.dir.display()
            );
        }
        Command::Train { common, resume, no_eval } => {
            let cfg = config(&common, resume)?;
            let s = cmd_train(&cfg, !no_eval)?;
            if let (Some(a), Some(b)) = (&s.first, &s.last) {
                println!("step {}: {:?}", a.step, a.losses);
                println!("step {}: {:?}", b.step, b.losses);
            }
            if let Some(e) = &s.eval {
                print!("{}", e.summary());
            }
            println!("checkpoint: {}", s.checkpoint.display());
        }
        Command::Render { common, checkpoint, scene, input_camera, target_camera, exclude_hand, dump_visibility } => {
            let cfg = config(&common, checkpoint)?;
            let exclude_hand = exclude_hand.map(|h| match h {
                Hand::Left => HandLabel::Left,
                Hand::Right => HandLabel::Right,
            });
            let req = RenderRequest { scene, input_camera, target_camera, exclude_hand, dump_visibility };
            for p in cmd_render(&cfg, &req)? {
                println!("{}", p.display());
            }
        }
        Command::Eval { common, checkpoint } => {
            let cfg = config(&common, checkpoint)?;
            print!("{}", cmd_eval(&cfg)?.summary());
        }
        Command::Gradcheck(common) => {
            let cfg = config(&common, None)?;
            let r = cmd_gradcheck(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            if !r.passed {
                return Ok(EXIT_CHECK_FAILED);
            }
        }
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let code = match run(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
