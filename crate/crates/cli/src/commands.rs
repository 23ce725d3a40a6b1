//! Offline operator commands: replay, train-offline and validate-config.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use hitl_core::agents::{AgentKind, AgentParams};
use hitl_core::config::{validate_config, Diagnostic, ProjectCatalog};
use hitl_core::env::{EnvConfig, EnvId, Environment, Observation};
use hitl_core::recorder::{load_trial, EventPayload, LoadError, LoadedTrial};
use hitl_core::session::{train_offline, OfflineError};

/// A failed command: a stable machine-readable class and a one-line message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub class: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(class: &'static str, message: impl Into<String>) -> Self {
        CliError {
            class,
            message: message.into().replace('\n', " "),
        }
    }

    /// Process exit status for this error class.
    pub fn exit_code(&self) -> i32 {
        match self.class {
            "config_invalid" => 3,
            "corrupt_log" | "empty_log" => 4,
            "connection_refused" | "connection_lost" | "protocol" => 5,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.class, self.message)
    }
}

impl std::error::Error for CliError {}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::new("io", format!("{}: {e}", path.display()))
}

fn load(path: &Path) -> Result<LoadedTrial, CliError> {
    load_trial(path).map_err(|e| match e {
        LoadError::Io(io) => io_error(path, io),
        other => CliError::new("corrupt_log", format!("{}: {other}", path.display())),
    })
}

/// Config diagnostics joined onto one line.
pub fn config_error(diags: &[Diagnostic]) -> CliError {
    let text = diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ");
    CliError::new("config_invalid", text)
}

pub fn load_config(path: &Path) -> Result<ProjectCatalog, CliError> {
    validate_config(path).map_err(|d| config_error(&d))
}

/// Checks a config file and writes `ok` plus the project ids.
pub fn validate(path: &Path, out: &mut dyn Write) -> Result<ProjectCatalog, CliError> {
    let catalog = load_config(path)?;
    let ids = catalog.ids().collect::<Vec<_>>().join(",");
    writeln!(out, "ok projects={} ids={ids}", catalog.len()).map_err(|e| io_error(path, e))?;
    Ok(catalog)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplaySummary {
    pub events: usize,
    pub frames: u64,
    /// Frames produced by an environment step.
    pub steps: u64,
    pub episodes: u64,
    /// Sum of `steps` over logged episode ends.
    pub episode_steps: u64,
    pub images_written: u64,
}

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    /// Playback speed relative to the recording; 0 dumps without sleeping.
    pub speed: f64,
    /// Re-render every frame into this directory as PNG.
    pub frames_dir: Option<PathBuf>,
    /// Render size for re-rendered frames.
    pub render: (u32, u32),
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions {
            speed: 0.0,
            frames_dir: None,
            render: (320, 240),
        }
    }
}

fn describe(p: &EventPayload) -> String {
    match p {
        EventPayload::SessionStart {
            project_id,
            user_id,
            env_id,
            seed,
            mode,
            ..
        } => format!("project={project_id} user={user_id} env={env_id} seed={seed} mode={mode}"),
        EventPayload::UiConfig(c) => format!("page={} frameRateHz={}", c.page, c.frame_rate_hz),
        EventPayload::FrameEmitted(f) => {
            let action = f
                .transition
                .as_ref()
                .map(|t| format!(" action={} source={:?}", t.label, t.source))
                .unwrap_or_default();
            format!("frameId={} episode={} step={} score={}{action}", f.frame_id, f.episode, f.step, f.score)
        }
        EventPayload::Command { action, frame_id } => format!("action={action} frameId={frame_id}"),
        EventPayload::Feedback {
            value,
            frame_id,
            applied,
            budget_used,
        } => format!("value={value} frameId={frame_id} applied={applied} budgetUsed={budget_used}"),
        EventPayload::Click { x, y, frame_id } => format!("x={x} y={y} frameId={frame_id}"),
        EventPayload::Control { verb, detail } => match detail {
            Some(d) => format!("verb={} detail={d}", verb.as_str()),
            None => format!("verb={}", verb.as_str()),
        },
        EventPayload::EpisodeEnd {
            episode,
            steps,
            total_return,
            reason,
        } => format!("episode={episode} steps={steps} return={total_return} reason={reason}"),
        EventPayload::SessionEnd { reason } => format!("reason={reason}"),
        EventPayload::Info { text } => format!("text={text:?}"),
    }
}

fn kind_name(p: &EventPayload) -> &'static str {
    match p {
        EventPayload::SessionStart { .. } => "session_start",
        EventPayload::UiConfig(_) => "ui_config",
        EventPayload::FrameEmitted(_) => "frame_emitted",
        EventPayload::Command { .. } => "command",
        EventPayload::Feedback { .. } => "feedback",
        EventPayload::Click { .. } => "click",
        EventPayload::Control { .. } => "control",
        EventPayload::EpisodeEnd { .. } => "episode_end",
        EventPayload::SessionEnd { .. } => "session_end",
        EventPayload::Info { .. } => "info",
    }
}

/// Prints a per-event trace of a trial log, pacing it by the recorded
/// monotonic clock divided by `speed`.
pub fn replay(path: &Path, opts: &ReplayOptions, out: &mut dyn Write) -> Result<ReplaySummary, CliError> {
    if !(opts.speed >= 0.0 && opts.speed.is_finite()) {
        return Err(CliError::new("usage", format!("speed must be a finite number >= 0, got {}", opts.speed)));
    }
    let trial = load(path)?;
    if let Some(dir) = &opts.frames_dir {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    let mut env_cfg: Option<EnvConfig> = None;
    let mut summary = ReplaySummary {
        events: trial.events.len(),
        ..ReplaySummary::default()
    };
    let w = |out: &mut dyn Write, line: String| writeln!(out, "{line}").map_err(|e| io_error(path, e));
    w(
        out,
        format!(
            "trial session={} project={} user={}",
            trial.header.session_id, trial.header.project_id, trial.header.user_id
        ),
    )?;
    let mut previous_mono: Option<u64> = None;
    for e in &trial.events {
        if opts.speed > 0.0 {
            if let Some(prev) = previous_mono {
                let gap = e.mono_ms.saturating_sub(prev) as f64 / opts.speed;
                std::thread::sleep(Duration::from_secs_f64(gap / 1000.0));
            }
        }
        previous_mono = Some(e.mono_ms);
        match &e.payload {
            EventPayload::SessionStart { env_id, seed, .. } => {
                env_cfg = Some(EnvConfig::new(*env_id, *seed).with_render_size(opts.render.0, opts.render.1));
            }
            EventPayload::FrameEmitted(f) => {
                summary.frames += 1;
                if f.transition.is_some() {
                    summary.steps += 1;
                }
                if let (Some(dir), Some(cfg)) = (&opts.frames_dir, &env_cfg) {
                    let frame = Environment::render_observation(cfg, &Observation::new(f.obs.clone()))
                        .map_err(|err| CliError::new("corrupt_log", format!("frame {}: {err}", f.frame_id)))?;
                    let png = frame
                        .to_png()
                        .map_err(|err| CliError::new("io", format!("frame {}: {err}", f.frame_id)))?;
                    let file = dir.join(format!("frame_{:06}.png", f.frame_id));
                    std::fs::write(&file, png).map_err(|err| io_error(&file, err))?;
                    summary.images_written += 1;
                }
            }
            EventPayload::EpisodeEnd { steps, .. } => {
                summary.episodes += 1;
                summary.episode_steps += *steps as u64;
            }
            _ => {}
        }
        w(out, format!("{:>9} {:<13} {}", e.mono_ms, kind_name(&e.payload), describe(&e.payload)))?;
    }
    if let Some(line) = trial.truncated_at {
        w(out, format!("warning: final line {line} was cut off mid-write and skipped"))?;
    }
    w(
        out,
        format!(
            "summary events={} frames={} steps={} episodes={} episodeSteps={}",
            summary.events, summary.frames, summary.steps, summary.episodes, summary.episode_steps
        ),
    )?;
    Ok(summary)
}

/// Trains a `kind` agent from a trial log and writes its snapshot to `out`.
pub fn train_offline_cli(log: &Path, kind: AgentKind, out: &Path) -> Result<EnvId, CliError> {
    let trial = load(log)?;
    let env = trial
        .events
        .iter()
        .find_map(|e| match &e.payload {
            EventPayload::SessionStart { env_id, .. } => Some(*env_id),
            _ => None,
        })
        .ok_or_else(|| CliError::new("corrupt_log", format!("{}: no session_start event", log.display())))?;
    let snapshot = train_offline(&trial.events, env, kind, &AgentParams::default()).map_err(|e| match e {
        OfflineError::EmptyLog(_) => CliError::new("empty_log", e.to_string()),
        OfflineError::Mismatch { .. } => CliError::new("corrupt_log", e.to_string()),
    })?;
    std::fs::write(out, snapshot.to_text()).map_err(|e| io_error(out, e))?;
    Ok(env)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exit_codes_by_class() {
        assert_eq!(CliError::new("config_invalid", "x").exit_code(), 3);
        assert_eq!(CliError::new("corrupt_log", "x").exit_code(), 4);
        assert_eq!(CliError::new("empty_log", "x").exit_code(), 4);
        assert_eq!(CliError::new("connection_refused", "x").exit_code(), 5);
        assert_eq!(CliError::new("io", "x").exit_code(), 1);
    }

    #[test]
    fn describe_click_lists_its_fields() {
        let text = describe(&EventPayload::Click { x: 1, y: 2, frame_id: 3 });
        assert_eq!(text, "x=1 y=2 frameId=3");
    }

    proptest! {
        #[test]
        fn errors_render_on_one_line(msg in ".*") {
            let shown = CliError::new("io", msg).to_string();
            prop_assert!(!shown.contains('\n'));
            prop_assert!(shown.starts_with("error[io]: "));
        }
    }
}
