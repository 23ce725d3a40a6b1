//! Versioned plain-text weight files.
//!
//! ```text
//! hitl-agent-snapshot 1
//! kind tamer
//! env mountain_car
//! tilings 8
//! tiles 8 8
//! bounds -1.2 0.6 -0.07 0.07
//! actions 3
//! features 512
//! param alpha 0.5
//! weights
//! <actions lines of features space-separated reals, row-major>
//! end
//! ```
//!
//! Reals are written with Rust's shortest round-trip formatting, so a
//! snapshot reparses to bit-identical weights.

use std::fmt::Write as _;

use super::{Agent, AgentError, AgentKind, BcPolicy, CoachAgent, LinearWeights, QAgent, TamerAgent, TileCoder};
use crate::env::EnvId;

pub const SNAPSHOT_MAGIC: &str = "hitl-agent-snapshot";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSnapshot {
    pub env: EnvId,
    pub agent: Agent,
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items
        .into_iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

impl AgentSnapshot {
    pub fn new(env: EnvId, agent: Agent) -> Self {
        AgentSnapshot { env, agent }
    }

    fn params(&self) -> Vec<(&'static str, f64)> {
        match &self.agent {
            Agent::Tamer(a) => vec![("alpha", a.alpha())],
            Agent::Coach(a) => vec![
                ("alpha", a.alpha()),
                ("lambda", a.lambda()),
                ("temperature", a.temperature()),
            ],
            Agent::QLearning(a) => vec![
                ("alpha", a.alpha()),
                ("gamma", a.gamma()),
                ("epsilon", a.epsilon()),
            ],
            Agent::Bc(_) => vec![],
        }
    }

    pub fn to_text(&self) -> String {
        let coder = self.agent.coder();
        let w = self.agent.weights();
        let mut out = String::new();
        let _ = writeln!(out, "{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION}");
        let _ = writeln!(out, "kind {}", self.agent.kind());
        let _ = writeln!(out, "env {}", self.env);
        let _ = writeln!(out, "tilings {}", coder.num_tilings());
        let _ = writeln!(out, "tiles {}", join(coder.tiles_per_dim()));
        let _ = writeln!(
            out,
            "bounds {}",
            join(coder.bounds().iter().flat_map(|(lo, hi)| [*lo, *hi]))
        );
        let _ = writeln!(out, "actions {}", w.actions());
        let _ = writeln!(out, "features {}", w.features());
        for (name, value) in self.params() {
            let _ = writeln!(out, "param {name} {value}");
        }
        out.push_str("weights\n");
        for a in 0..w.actions() {
            out.push_str(&join(w.row(a)));
            out.push('\n');
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self, AgentError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |want: &str| -> Result<(usize, Vec<&str>), AgentError> {
            let (n, line) = lines.next().ok_or(AgentError::Snapshot {
                line: 0,
                reason: format!("unexpected end of file, expected {want:?}"),
            })?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            Ok((n, parts))
        };
        let bad = |line: usize, reason: String| AgentError::Snapshot { line, reason };

        let (n, magic) = next("header")?;
        if magic.len() != 2 || magic[0] != SNAPSHOT_MAGIC {
            return Err(bad(n, "missing snapshot header".into()));
        }
        if magic[1] != SNAPSHOT_VERSION.to_string() {
            return Err(bad(n, format!("unsupported version {}", magic[1])));
        }

        let mut keyed = |key: &str| -> Result<(usize, Vec<String>), AgentError> {
            let (n, parts) = next(key)?;
            if parts.first() != Some(&key) {
                return Err(bad(n, format!("expected {key:?}")));
            }
            Ok((n, parts[1..].iter().map(|s| s.to_string()).collect()))
        };
        let single = |n: usize, v: &[String]| -> Result<String, AgentError> {
            match v {
                [x] => Ok(x.clone()),
                _ => Err(bad(n, "expected exactly one value".into())),
            }
        };
        let num = |n: usize, s: &str| -> Result<f64, AgentError> {
            s.parse::<f64>().map_err(|e| bad(n, format!("bad number {s:?}: {e}")))
        };
        let int = |n: usize, s: &str| -> Result<usize, AgentError> {
            s.parse::<usize>().map_err(|e| bad(n, format!("bad integer {s:?}: {e}")))
        };

        let (n, v) = keyed("kind")?;
        let kind: AgentKind = single(n, &v)?.parse().map_err(|e| bad(n, e))?;
        let (n, v) = keyed("env")?;
        let env: EnvId = single(n, &v)?.parse().map_err(|e| bad(n, e))?;
        let (n, v) = keyed("tilings")?;
        let tilings = int(n, &single(n, &v)?)?;
        let (n, v) = keyed("tiles")?;
        let tiles = v.iter().map(|s| int(n, s)).collect::<Result<Vec<_>, _>>()?;
        let (n, v) = keyed("bounds")?;
        let flat = v.iter().map(|s| num(n, s)).collect::<Result<Vec<_>, _>>()?;
        if flat.len() % 2 != 0 {
            return Err(bad(n, "bounds need low/high pairs".into()));
        }
        let bounds: Vec<(f64, f64)> = flat.chunks(2).map(|c| (c[0], c[1])).collect();
        let coder = TileCoder::new(tilings, tiles, bounds).map_err(|e| bad(n, e.to_string()))?;
        let (n, v) = keyed("actions")?;
        let actions = int(n, &single(n, &v)?)?;
        let (n, v) = keyed("features")?;
        let features = int(n, &single(n, &v)?)?;
        if features != coder.feature_count() {
            return Err(bad(n, format!("features {features} disagree with coder ({})", coder.feature_count())));
        }

        let mut alpha = None;
        let mut lambda = None;
        let mut temperature = None;
        let mut gamma = None;
        let mut epsilon = None;
        let mut values = Vec::with_capacity(actions * features);
        loop {
            let (n, parts) = next("param or weights")?;
            match parts.as_slice() {
                ["param", name, value] => {
                    let value = num(n, value)?;
                    let slot = match *name {
                        "alpha" => &mut alpha,
                        "lambda" => &mut lambda,
                        "temperature" => &mut temperature,
                        "gamma" => &mut gamma,
                        "epsilon" => &mut epsilon,
                        other => return Err(bad(n, format!("unknown param {other:?}"))),
                    };
                    *slot = Some(value);
                }
                ["weights"] => break,
                _ => return Err(bad(n, "expected param or weights".into())),
            }
        }
        for _ in 0..actions {
            let (n, parts) = next("weight row")?;
            if parts.len() != features {
                return Err(bad(n, format!("row has {} values, expected {features}", parts.len())));
            }
            for s in parts {
                values.push(num(n, s)?);
            }
        }
        let (n, end) = next("end")?;
        if end != ["end"] {
            return Err(bad(n, "expected end".into()));
        }
        let weights = LinearWeights::from_rows(actions, features, values).expect("row lengths checked");
        let need = |name: &str, p: Option<f64>| p.ok_or_else(|| bad(0, format!("missing param {name}")));
        let agent = match kind {
            AgentKind::Tamer => Agent::Tamer(TamerAgent::from_parts(coder, weights, need("alpha", alpha)?)),
            AgentKind::Coach => Agent::Coach(CoachAgent::from_parts(
                coder,
                weights,
                need("alpha", alpha)?,
                need("lambda", lambda)?,
                need("temperature", temperature)?,
            )),
            AgentKind::Qlearning => Agent::QLearning(QAgent::from_parts(
                coder,
                weights,
                need("alpha", alpha)?,
                need("gamma", gamma)?,
                need("epsilon", epsilon)?,
            )),
            AgentKind::Bc => Agent::Bc(BcPolicy::from_parts(coder, weights)),
        };
        Ok(AgentSnapshot { env, agent })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{AgentParams, Feedback};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn text_round_trip(seeds in proptest::collection::vec((-1.2f64..0.6, -0.07f64..0.07, 0usize..3, any::<bool>()), 0..40),
                           kind in prop_oneof![Just(AgentKind::Tamer), Just(AgentKind::Coach), Just(AgentKind::Qlearning), Just(AgentKind::Bc)]) {
            let mut agent = Agent::new(kind, EnvId::MountainCar, &AgentParams::default());
            for (x, v, a, g) in seeds {
                let f = if g { Feedback::Good } else { Feedback::Bad };
                agent.feedback(&[x, v], a, f).unwrap();
                agent.observe(&[x, v], a, -1.0, &[x, 0.0], g).unwrap();
            }
            agent.end_episode();
            let snap = AgentSnapshot::new(EnvId::MountainCar, agent);
            let text = snap.to_text();
            let back = AgentSnapshot::parse(&text).unwrap();
            prop_assert_eq!(&back, &snap);
            prop_assert_eq!(back.to_text(), text);
        }
    }

    #[test]
    fn rejects_wrong_version_and_truncation() {
        let snap = AgentSnapshot::new(
            EnvId::GridWorld,
            Agent::new(AgentKind::Tamer, EnvId::GridWorld, &AgentParams::default()),
        );
        let text = snap.to_text();
        let v2 = text.replacen("hitl-agent-snapshot 1", "hitl-agent-snapshot 2", 1);
        assert!(matches!(AgentSnapshot::parse(&v2), Err(AgentError::Snapshot { line: 1, .. })));
        let cut: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
        assert!(AgentSnapshot::parse(&cut).is_err());
    }
}
