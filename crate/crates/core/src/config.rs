//! Project configuration files.
//!
//! One TOML document defines any number of projects as `[[projects]]`
//! tables whose keys mirror [`ProjectConfig`]. Parsing is deliberately loose
//! and validation is a separate pass, so a bad file yields a list of
//! diagnostics naming each offending field rather than the first serde error.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;

use crate::agents::{AgentKind, AgentParams};
use crate::env::{EnvConfig, EnvId, MIN_RENDER_DIM};
use crate::session::{FrameRateConfig, InteractionMode, ProjectConfig};

/// Buttons the front end knows how to draw.
pub const KNOWN_BUTTONS: [&str; 16] = [
    "left",
    "right",
    "up",
    "down",
    "fire",
    "noop",
    "good",
    "bad",
    "start",
    "pause",
    "stop",
    "reset",
    "speedUp",
    "speedDown",
    "trainOffline",
    "trainOnline",
];

pub const GAME_PAGE: &str = "game";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub project: Option<String>,
    pub field: String,
    pub constraint: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.project {
            Some(p) => write!(f, "project {p}: {}: {}", self.field, self.constraint),
            None => write!(f, "{}: {}", self.field, self.constraint),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    #[serde(default)]
    projects: Vec<RawProject>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RawEnvConfig {
    env_id: Option<String>,
    seed: Option<u64>,
    horizon: Option<i64>,
    render_width: Option<i64>,
    render_height: Option<i64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFrameRate {
    min: Option<f64>,
    max: Option<f64>,
    default: Option<f64>,
    multiplier: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RawProject {
    project_id: Option<String>,
    env_config: Option<RawEnvConfig>,
    agent_kind: Option<String>,
    #[serde(default)]
    agent_params: AgentParams,
    mode: Option<String>,
    ui_buttons: Option<Vec<String>>,
    budget_max: Option<i64>,
    frame_rate: Option<RawFrameRate>,
    max_session_seconds: Option<f64>,
    idle_timeout_seconds: Option<f64>,
    #[serde(default)]
    pages: Vec<String>,
    #[serde(default)]
    expose_observation: bool,
    redirect: Option<String>,
}

/// All projects loaded from one config file, keyed by id.
#[derive(Debug, Clone, Default)]
pub struct ProjectCatalog {
    projects: BTreeMap<String, Arc<ProjectConfig>>,
}

impl ProjectCatalog {
    pub fn from_projects(projects: impl IntoIterator<Item = ProjectConfig>) -> Self {
        ProjectCatalog {
            projects: projects
                .into_iter()
                .map(|p| (p.project_id.clone(), Arc::new(p)))
                .collect(),
        }
    }

    pub fn get(&self, id: &str) -> Option<Arc<ProjectConfig>> {
        self.projects.get(id).cloned()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.projects.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.projects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.projects.is_empty()
    }

    pub fn parse(text: &str) -> Result<Self, Vec<Diagnostic>> {
        let raw: RawFile = toml::from_str(text).map_err(|e| {
            vec![Diagnostic {
                project: None,
                field: "(document)".into(),
                constraint: e.message().to_string(),
            }]
        })?;
        let mut diags = Vec::new();
        if raw.projects.is_empty() {
            diags.push(Diagnostic {
                project: None,
                field: "projects".into(),
                constraint: "at least one [[projects]] table is required".into(),
            });
        }
        let mut projects = BTreeMap::new();
        for (i, p) in raw.projects.into_iter().enumerate() {
            let label = p.project_id.clone().unwrap_or_else(|| format!("#{i}"));
            match validate_project(p) {
                Ok(cfg) => {
                    if projects.contains_key(&cfg.project_id) {
                        diags.push(Diagnostic {
                            project: Some(label),
                            field: "projectId".into(),
                            constraint: "must be unique".into(),
                        });
                    } else {
                        projects.insert(cfg.project_id.clone(), Arc::new(cfg));
                    }
                }
                Err(mut d) => {
                    for x in &mut d {
                        x.project = Some(label.clone());
                    }
                    diags.extend(d);
                }
            }
        }
        if diags.is_empty() {
            Ok(ProjectCatalog { projects })
        } else {
            Err(diags)
        }
    }

    pub fn load(path: &Path) -> Result<Self, Vec<Diagnostic>> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            vec![Diagnostic {
                project: None,
                field: "(file)".into(),
                constraint: format!("cannot read {}: {e}", path.display()),
            }]
        })?;
        Self::parse(&text)
    }
}

/// Checks every project invariant in the file at `path`.
pub fn validate_config(path: &Path) -> Result<ProjectCatalog, Vec<Diagnostic>> {
    ProjectCatalog::load(path)
}

fn validate_project(p: RawProject) -> Result<ProjectConfig, Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let mut diag = |field: &str, constraint: String| {
        diags.push(Diagnostic {
            project: None,
            field: field.into(),
            constraint,
        })
    };

    let project_id = match p.project_id {
        Some(id) if !id.trim().is_empty() => id,
        _ => {
            diag("projectId", "required, non-empty".into());
            String::new()
        }
    };

    let env_config = match p.env_config {
        None => {
            diag("envConfig", "required".into());
            None
        }
        Some(e) => {
            let env_id = match e.env_id.as_deref().map(str::parse::<EnvId>) {
                Some(Ok(id)) => Some(id),
                Some(Err(_)) => {
                    diag("envConfig.envId", "must be one of mountain_car, grid_world".into());
                    None
                }
                None => {
                    diag("envConfig.envId", "required".into());
                    None
                }
            };
            let horizon = e.horizon.unwrap_or(crate::env::DEFAULT_HORIZON as i64);
            if horizon < 1 || horizon > u32::MAX as i64 {
                diag("envConfig.horizon", "must be >= 1".into());
            }
            let w = e.render_width.unwrap_or(crate::env::DEFAULT_RENDER_WIDTH as i64);
            let h = e.render_height.unwrap_or(crate::env::DEFAULT_RENDER_HEIGHT as i64);
            let dim_ok = |d: i64| (MIN_RENDER_DIM as i64..=8192).contains(&d);
            if !dim_ok(w) {
                diag("envConfig.renderWidth", format!("must be in [{MIN_RENDER_DIM}, 8192]"));
            }
            if !dim_ok(h) {
                diag("envConfig.renderHeight", format!("must be in [{MIN_RENDER_DIM}, 8192]"));
            }
            env_id.map(|id| EnvConfig {
                env_id: id,
                seed: e.seed.unwrap_or(0),
                horizon: horizon.clamp(1, u32::MAX as i64) as u32,
                render_width: w.clamp(1, 8192) as u32,
                render_height: h.clamp(1, 8192) as u32,
            })
        }
    };

    let agent_kind = match p.agent_kind.as_deref() {
        None | Some("none") => None,
        Some(s) => match s.parse::<AgentKind>() {
            Ok(AgentKind::Bc) | Err(_) => {
                diag("agentKind", format!("{s:?} is not one of tamer, coach, qlearning, none"));
                None
            }
            Ok(k) => Some(k),
        },
    };

    let mode = match p.mode.as_deref() {
        Some("human_control") | None => InteractionMode::HumanControl,
        Some("agent_control_feedback") => InteractionMode::AgentControlFeedback,
        Some(other) => {
            diag("mode", format!("{other:?} is not one of human_control, agent_control_feedback"));
            InteractionMode::HumanControl
        }
    };
    if mode == InteractionMode::AgentControlFeedback && matches!(p.agent_kind.as_deref(), None | Some("none")) {
        diag("agentKind", "agent_control_feedback mode needs an agent".into());
    }

    let ui_buttons = p.ui_buttons.unwrap_or_default();
    for b in &ui_buttons {
        if !KNOWN_BUTTONS.contains(&b.as_str()) {
            diag("uiButtons", format!("unknown button {b:?}"));
        }
    }

    let budget_max = match p.budget_max {
        Some(b) if b < 0 => {
            diag("budgetMax", "must be >= 0".into());
            None
        }
        Some(b) => Some(b as u64),
        None => None,
    };

    let frame_rate = match p.frame_rate {
        None => FrameRateConfig::default(),
        Some(r) => {
            let d = FrameRateConfig::default();
            let fr = FrameRateConfig {
                min: r.min.unwrap_or(d.min),
                max: r.max.unwrap_or(d.max),
                default: r.default.unwrap_or(d.default),
                multiplier: r.multiplier.unwrap_or(d.multiplier),
            };
            if !(fr.min.is_finite() && fr.max.is_finite() && fr.default.is_finite()) || fr.min <= 0.0 {
                diag("frameRate", "rates must be finite and positive".into());
            } else if !(fr.min <= fr.default && fr.default <= fr.max) {
                diag("frameRate", "requires min <= default <= max".into());
            }
            if !(fr.multiplier.is_finite() && fr.multiplier > 1.0) {
                diag("frameRate.multiplier", "must be > 1".into());
            }
            fr
        }
    };

    let mut seconds = |field: &str, v: Option<f64>, default: f64| -> Duration {
        let v = v.unwrap_or(default);
        if v.is_finite() && v > 0.0 && v < 1e9 {
            Duration::from_secs_f64(v)
        } else {
            diag(field, "must be > 0".into());
            Duration::from_secs(1)
        }
    };
    let max_session = seconds("maxSessionSeconds", p.max_session_seconds, 3600.0);
    let idle_timeout = seconds("idleTimeoutSeconds", p.idle_timeout_seconds, 300.0);

    if !p.pages.is_empty() {
        let games = p.pages.iter().filter(|x| x.as_str() == GAME_PAGE).count();
        if games != 1 {
            diag("pages", format!("must contain {GAME_PAGE:?} exactly once"));
        }
        if p.pages.iter().any(|x| x.trim().is_empty()) {
            diag("pages", "page ids must be non-empty".into());
        }
    }

    let ap = &p.agent_params;
    let check = |v: Option<f64>, ok: fn(f64) -> bool| v.is_none_or(|x| x.is_finite() && ok(x));
    if !check(ap.alpha, |x| x > 0.0) {
        diag("agentParams.alpha", "must be > 0".into());
    }
    if !check(ap.lambda, |x| (0.0..1.0).contains(&x)) {
        diag("agentParams.lambda", "must be in [0, 1)".into());
    }
    if !check(ap.temperature, |x| x > 0.0) {
        diag("agentParams.temperature", "must be > 0".into());
    }
    if !check(ap.gamma, |x| x > 0.0 && x <= 1.0) {
        diag("agentParams.gamma", "must be in (0, 1]".into());
    }
    if !check(ap.epsilon, |x| (0.0..=1.0).contains(&x)) {
        diag("agentParams.epsilon", "must be in [0, 1]".into());
    }

    if !diags.is_empty() {
        return Err(diags);
    }
    Ok(ProjectConfig {
        project_id,
        env_config: env_config.expect("validated"),
        agent_kind,
        agent_params: p.agent_params,
        mode,
        ui_buttons,
        budget_max,
        frame_rate,
        max_session,
        idle_timeout,
        pages: p.pages,
        expose_observation: p.expose_observation,
        redirect: p.redirect,
    })
}
