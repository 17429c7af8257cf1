//! `samtrack`: headless tracking, evaluation, scenario harness and the
//! session service.

mod eval;
mod harness;
mod track;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use samtrack_core::backends::{BackendError, BackendSelection, BackendSpec};
use samtrack_core::harness::Scenario;
use samtrack_core::pipeline::video::VideoError;
use samtrack_core::pipeline::{PipelineError, RunError};
use samtrack_service::model_stub::{self, StubOptions};
use samtrack_service::ServiceConfig;
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "samtrack", version, about = "Prompt-driven multi-object video segmentation and tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Track objects through a directory of frames.
    Track(track::TrackArgs),
    /// Score predicted label maps against ground truth.
    Eval(eval::EvalArgs),
    /// Synthetic scenarios: verify runs, render datasets, emit prompt scripts.
    Harness {
        #[command(subcommand)]
        command: harness::HarnessCommand,
    },
    /// Run the HTTP session service.
    Serve {
        #[arg(long, env = "SAMTRACK_ADDR", default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Per-session result directories go here.
        #[arg(long, default_value = "samtrack-data")]
        data_dir: PathBuf,
        /// Backends for sessions whose config names none.
        #[arg(long)]
        backend: Option<BackendSpec>,
        /// Model server used as the default backend when --backend is absent.
        #[arg(long, env = "SAMTRACK_BACKEND_URL")]
        backend_url: Option<String>,
    },
    /// Serve the remote model protocol from a scenario's ground truth.
    ModelStub {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8090")]
        addr: SocketAddr,
        /// Answer propagate calls for this frame and later with 503.
        #[arg(long)]
        fail_propagate_from: Option<usize>,
    },
}

/// Resolves the backend flags shared by `track`. The per-interface
/// overrides win over `--backend`; `SAMTRACK_BACKEND_URL` is the last
/// resort.
#[derive(Debug, clap::Args)]
struct BackendArgs {
    /// oracle:SCENARIO | classical | remote:URL
    #[arg(long)]
    backend: Option<BackendSpec>,
    #[arg(long)]
    segmenter: Option<BackendSpec>,
    #[arg(long)]
    detector: Option<BackendSpec>,
    #[arg(long)]
    propagator: Option<BackendSpec>,
}

impl BackendArgs {
    fn selection(&self) -> anyhow::Result<BackendSelection> {
        let fallback = self
            .backend
            .clone()
            .or_else(|| std::env::var("SAMTRACK_BACKEND_URL").ok().map(BackendSpec::Remote));
        let pick = |o: &Option<BackendSpec>, what: &str| {
            o.clone()
                .or_else(|| fallback.clone())
                .with_context(|| format!("no {what} backend: pass --backend or --{what}"))
        };
        Ok(BackendSelection {
            segmenter: pick(&self.segmenter, "segmenter")?,
            detector: pick(&self.detector, "detector")?,
            propagator: pick(&self.propagator, "propagator")?,
        })
    }
}

/// Error code and exit status for a failure.
fn classify(err: &anyhow::Error) -> (String, Option<usize>, u8) {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<RunError>() {
            let (code, _, exit) = pipeline_code(&e.source);
            return (code, Some(e.frame_index), exit);
        }
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return pipeline_code(e);
        }
        if let Some(e) = cause.downcast_ref::<BackendError>() {
            return (e.code().to_string(), None, backend_exit(e));
        }
        if cause.downcast_ref::<VideoError>().is_some() {
            return ("InvalidVideo".into(), None, 1);
        }
        if let Some(e) = cause.downcast_ref::<harness::VerificationFailed>() {
            return ("VerificationFailed".into(), e.frame, 1);
        }
    }
    ("Error".into(), None, 1)
}

fn pipeline_code(e: &PipelineError) -> (String, Option<usize>, u8) {
    let exit = match e {
        PipelineError::Backend(b) => backend_exit(b),
        _ => 1,
    };
    (e.code().to_string(), None, exit)
}

fn backend_exit(e: &BackendError) -> u8 {
    match e {
        BackendError::Unavailable(_) => 3,
        _ => 4,
    }
}

/// The error chain joined with `: `, skipping causes already spelled out
/// by the message that wraps them.
fn message(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Track(args) => track::run(&args),
        Command::Eval(args) => eval::run(&args),
        Command::Harness { command } => harness::run(&command),
        Command::Serve {
            addr,
            data_dir,
            backend,
            backend_url,
        } => {
            let default_backends = backend
                .or(backend_url.map(BackendSpec::Remote))
                .map(BackendSelection::uniform);
            std::fs::create_dir_all(&data_dir).with_context(|| format!("creating {}", data_dir.display()))?;
            let config = ServiceConfig {
                data_dir,
                default_backends,
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(samtrack_service::serve(addr, config))?;
            Ok(())
        }
        Command::ModelStub {
            scenario,
            addr,
            fail_propagate_from,
        } => {
            let scene = Scenario::load(&scenario)?.render()?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(model_stub::serve(addr, scene.shared(), StubOptions { fail_propagate_from }))?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            if !usage {
                return ExitCode::SUCCESS;
            }
            eprintln!("{}", json!({ "code": "Usage", "message": e.kind().to_string() }));
            return ExitCode::from(2);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_env("SAMTRACK_LOG"))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, frame_index, exit) = classify(&err);
            let mut line = json!({ "code": code, "message": message(&err) });
            if let Some(f) = frame_index {
                line["frame_index"] = json!(f);
            }
            eprintln!("{line}");
            ExitCode::from(exit)
        }
    }
}
