use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Subcommand;
use samtrack_core::backends::TextPrompt;
use samtrack_core::harness::{click_prompts, scenario_files, verify_run, Scenario};
use samtrack_core::metrics::davis;
use samtrack_core::pipeline::script::PromptScript;
use samtrack_core::pipeline::{CmrSettings, KeyframeSource, Mode, Prompt, SessionConfig};

#[derive(Debug, Subcommand)]
pub enum HarnessCommand {
    /// Run a scenario (or every scenario in a directory) on oracle backends
    /// and check the output against ground truth.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "interactive")]
        mode: Mode,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0.8)]
        t: f64,
        #[arg(long)]
        min_area: Option<u64>,
        /// Key frames only admit objects matching these phrases.
        #[arg(long = "text")]
        text: Vec<String>,
    },
    /// Write a scenario's frames and annotations in the DAVIS layout.
    Render {
        #[arg(long)]
        scenario: PathBuf,
        /// Dataset root.
        #[arg(long)]
        out: PathBuf,
        /// Sequence name; defaults to the scenario name.
        #[arg(long)]
        name: Option<String>,
    },
    /// Print a prompt script clicking every actor visible in frame 0.
    Script {
        #[arg(long)]
        scenario: PathBuf,
        /// Use a text prompt instead of clicks.
        #[arg(long)]
        text: Option<String>,
    },
}

/// Scenarios whose run did not reproduce the ground truth.
#[derive(Debug)]
pub struct VerificationFailed {
    pub frame: Option<usize>,
    pub failed: Vec<String>,
}

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "verification failed: {}", self.failed.join(", "))
    }
}

impl std::error::Error for VerificationFailed {}

fn scenarios(path: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if path.is_dir() {
        Ok(scenario_files(path)?)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

pub fn run(cmd: &HarnessCommand) -> anyhow::Result<()> {
    match cmd {
        HarnessCommand::Run {
            scenario,
            mode,
            n,
            t,
            min_area,
            text,
        } => {
            let config = SessionConfig {
                mode: *mode,
                keyframe_interval: *n,
                keyframe_source: if text.is_empty() {
                    KeyframeSource::SegmentEverything
                } else {
                    KeyframeSource::ObjectOfInterest
                },
                text_prompts: text.iter().map(|p| TextPrompt::new(p.as_str(), 0.35)).collect(),
                cmr: CmrSettings {
                    t: *t,
                    min_area: *min_area,
                },
                ..SessionConfig::default()
            };
            config.validate()?;
            let mut failed = Vec::new();
            let mut first = None;
            for path in scenarios(scenario)? {
                let scene = Scenario::load(&path)?;
                let report = verify_run(&scene, &config);
                println!("{}", serde_json::to_string(&report)?);
                if !report.passed {
                    first = first.or(report.first_divergent_frame);
                    failed.push(report.scenario);
                }
            }
            if !failed.is_empty() {
                return Err(VerificationFailed { frame: first, failed }.into());
            }
            Ok(())
        }
        HarnessCommand::Render { scenario, out, name } => {
            let sc = Scenario::load(scenario)?;
            let scene = sc.render()?;
            let seq = name.clone().unwrap_or(sc.name.clone());
            davis::write_sequence(out, &seq, &scene.frames, &scene.gt)
                .with_context(|| format!("writing {}", out.display()))?;
            println!("{}", out.join(davis::IMAGES_DIR).join(&seq).display());
            Ok(())
        }
        HarnessCommand::Script { scenario, text } => {
            let scene = Scenario::load(scenario)?.render()?;
            let prompts = match text {
                Some(p) => vec![Prompt::Text(TextPrompt::new(p.as_str(), 0.35))],
                None => click_prompts(&scene, &scene.gt[0].ids()),
            };
            print!("{}", PromptScript { prompts }.to_toml());
            Ok(())
        }
    }
}
