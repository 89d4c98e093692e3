//! Scene runner: execute a scene's probes and emit the JSON report, list or
//! emit the built-in gallery, or re-render a report as text.
//!
//! Exit codes: 0 all checks passed, 1 at least one fail verdict, 2 usage or
//! input errors.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use flowspace::checks::{render_report_text, run_checks, CheckReport, RunOptions};
use flowspace::scene::{gallery_list, gallery_scene, gallery_source, load_scene, Scene};

#[derive(Parser)]
#[command(name = "flowspace", version, about = "Flows, adapted charts and orbit-space checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scene's checks and print the JSON report.
    Run(RunArgs),
    /// List or emit the built-in gallery scenes.
    Gallery {
        #[command(subcommand)]
        action: GalleryAction,
    },
    /// Re-render a JSON report as human-readable text.
    Report {
        /// Path to a report produced by `run`.
        path: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scene file, or a gallery name when --gallery is set.
    scene: String,
    /// Interpret the scene argument as a built-in gallery name.
    #[arg(long)]
    gallery: bool,
    /// Comma-separated probe names to run (default: all).
    #[arg(long, value_delimiter = ',')]
    checks: Vec<String>,
    /// Override the scene's random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override every probe's horizon.
    #[arg(long)]
    horizon: Option<f64>,
    /// Directory for CSV and chart-patch artifacts (also gets report.json).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent probes (default: FLOWSPACE_WORKERS or
    /// all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Print the human-readable rendering instead of JSON.
    #[arg(long)]
    text: bool,
}

#[derive(Subcommand)]
enum GalleryAction {
    /// Print scene names with one-line descriptions.
    List,
    /// Write a gallery scene document (or all of them) to a directory.
    Emit {
        /// Scene name, or `all`.
        name: String,
        #[arg(long, default_value = ".")]
        dir: PathBuf,
    },
}

fn default_workers() -> usize {
    std::env::var("FLOWSPACE_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0)
}

fn load(args: &RunArgs) -> Result<Scene> {
    if args.gallery {
        Ok(gallery_scene(&args.scene)?)
    } else {
        let path = PathBuf::from(&args.scene);
        load_scene(&path).with_context(|| format!("loading scene {}", path.display()))
    }
}

fn run(args: RunArgs) -> Result<CheckReport> {
    let scene = load(&args)?;
    if !args.checks.is_empty() {
        for name in &args.checks {
            if !scene.probes.iter().any(|p| &p.name == name) {
                bail!("scene `{}` has no probe named `{name}`", scene.name);
            }
        }
    }
    let opts = RunOptions {
        selection: args.checks.clone(),
        seed_override: args.seed,
        horizon_override: args.horizon,
        out_dir: args.out.clone(),
        workers: args.workers.unwrap_or_else(default_workers),
    };
    let report = run_checks(&scene, &opts);
    let rendered = if args.text {
        render_report_text(&report)
    } else {
        report.to_canonical_json()
    };
    println!("{rendered}");
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), report.to_canonical_json())?;
    }
    Ok(report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome: Result<i32> = (|| match cli.command {
        Command::Run(args) => Ok(run(args)?.exit_code),
        Command::Gallery { action } => {
            match action {
                GalleryAction::List => {
                    for (name, description) in gallery_list() {
                        println!("{name:<20} {description}");
                    }
                }
                GalleryAction::Emit { name, dir } => {
                    std::fs::create_dir_all(&dir)?;
                    let names: Vec<String> = if name == "all" {
                        gallery_list().into_iter().map(|(n, _)| n).collect()
                    } else {
                        vec![name]
                    };
                    for n in names {
                        let Some(text) = gallery_source(&n) else {
                            bail!("no gallery scene named `{n}`");
                        };
                        let path = dir.join(format!("{n}.toml"));
                        std::fs::write(&path, text)?;
                        println!("wrote {}", path.display());
                    }
                }
            }
            Ok(0)
        }
        Command::Report { path } => {
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading {}", path.display()))?;
            let report: CheckReport = serde_json::from_str(&text).context("parsing report JSON")?;
            print!("{}", render_report_text(&report));
            Ok(report.exit_code)
        }
    })();
    match outcome {
        Ok(code) => ExitCode::from(code.clamp(0, 255) as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
