use std::path::PathBuf;

use anyhow::{bail, Context};
use samtrack_core::backends::TextPrompt;
use samtrack_core::pipeline::manifest::run_to_dir;
use samtrack_core::pipeline::script::PromptScript;
use samtrack_core::pipeline::{video, CmrSettings, KeyframeSource, Mode, Session, SessionConfig};
use serde_json::json;

use crate::BackendArgs;

#[derive(Debug, clap::Args)]
pub struct TrackArgs {
    /// Directory of frames (PNG/JPEG, name order).
    #[arg(long)]
    video: PathBuf,
    /// Prompt script for the first frame (TOML). Required unless automatic.
    #[arg(long)]
    prompts: Option<PathBuf>,
    #[arg(long, default_value = "interactive")]
    mode: Mode,
    /// Key-frame interval.
    #[arg(long, default_value_t = 10)]
    n: usize,
    /// New-object ratio threshold.
    #[arg(long, default_value_t = 0.8)]
    t: f64,
    /// Minimum area of an admitted object; derived from the frame size if unset.
    #[arg(long)]
    min_area: Option<u64>,
    /// Restrict key-frame detection to these phrases (repeatable).
    #[arg(long = "text")]
    text: Vec<String>,
    #[arg(long, default_value_t = 0.35)]
    score_threshold: f64,
    #[arg(long, default_value_t = 8)]
    memory: usize,
    #[command(flatten)]
    backends: BackendArgs,
    /// Result directory (label PNGs + manifest.json).
    #[arg(long)]
    out: PathBuf,
}

impl TrackArgs {
    fn config(&self) -> anyhow::Result<SessionConfig> {
        let config = SessionConfig {
            mode: self.mode,
            keyframe_interval: self.n,
            keyframe_source: if self.text.is_empty() {
                KeyframeSource::SegmentEverything
            } else {
                KeyframeSource::ObjectOfInterest
            },
            text_prompts: self
                .text
                .iter()
                .map(|p| TextPrompt::new(p.as_str(), self.score_threshold))
                .collect(),
            cmr: CmrSettings {
                t: self.t,
                min_area: self.min_area,
            },
            memory_capacity: self.memory,
            backends: Some(self.backends.selection()?),
        };
        config.validate()?;
        Ok(config)
    }
}

pub fn run(args: &TrackArgs) -> anyhow::Result<()> {
    let config = args.config()?;
    let frames = video::load_video(&args.video).with_context(|| format!("loading {}", args.video.display()))?;
    let backends = config.backends.as_ref().expect("set by config()").build()?;
    let mut session = Session::new(config.clone(), backends)?;

    if config.mode != Mode::Automatic {
        let Some(path) = &args.prompts else {
            bail!("--prompts is required in {:?} mode", config.mode);
        };
        let script = PromptScript::load(path)?;
        session.load_reference(frames[0].clone())?;
        for p in &script.prompts {
            session.add_prompt(p)?;
        }
        session.commit_reference()?;
    } else if args.prompts.is_some() {
        bail!("--prompts is not accepted in automatic mode");
    }

    tracing::info!(frames = frames.len(), out = %args.out.display(), "tracking");
    run_to_dir(&mut session, &frames, &args.out)??;
    println!(
        "{}",
        json!({
            "out": args.out,
            "frames": session.results().len(),
            "objects": session.registry().len(),
        })
    );
    Ok(())
}
