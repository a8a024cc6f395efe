//! Simulation configuration read from TOML.
//!
//! Physical parameters (`a`, `b`, `q`, `delta`) have no defaults. Numerical
//! knobs (`record_every`, `n_theta`, ...) do, and the resolved values are what
//! gets echoed in run manifests.
//!
//! ```toml
//! [grid]
//! dims = 1
//! cells_per_axis = 64
//! nodes_per_axis = 24
//! v_max = 8.0
//!
//! [physics]
//! a = 1.0
//! b = 0.0
//! q = 12.0
//! delta = 0.1
//!
//! [time]
//! dt = 0.05
//! t_final = 10.0
//!
//! [scenario]
//! kind = "near-equilibrium"
//! amplitude = 0.01
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{BgkError, Result};

pub const DEFAULT_RECORD_EVERY: u64 = 1;
pub const DEFAULT_N_THETA: usize = 32;
pub const DEFAULT_CHECKPOINT_EVERY: u64 = 100;
pub const DEFAULT_NEAR_EQUILIBRIUM_AMPLITUDE: f64 = 0.01;
pub const DEFAULT_LARGE_AMPLITUDE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridConfig {
    pub dims: usize,
    pub cells_per_axis: usize,
    pub nodes_per_axis: usize,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhysicsConfig {
    pub a: f64,
    pub b: f64,
    pub q: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeConfig {
    pub dt: f64,
    pub t_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scenario {
    Equilibrium,
    /// `amplitude` is the target `||f0||_{inf,q}`.
    NearEquilibrium { amplitude: f64 },
    /// `F0 = mu (1 + A sin(2 pi x1) exp(-|v|^2 / 4))` with `A = amplitude`.
    LargeAmplitude { amplitude: f64 },
    Custom { snapshot: PathBuf },
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Equilibrium => "equilibrium",
            Scenario::NearEquilibrium { .. } => "near-equilibrium",
            Scenario::LargeAmplitude { .. } => "large-amplitude",
            Scenario::Custom { .. } => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub record_every: u64,
    pub n_theta: usize,
    pub svg: bool,
    pub checkpoint_every: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub grid: GridConfig,
    pub physics: PhysicsConfig,
    pub time: TimeConfig,
    pub scenario: Scenario,
    pub output: OutputConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    dims: Option<usize>,
    cells_per_axis: Option<usize>,
    nodes_per_axis: Option<usize>,
    v_max: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhysics {
    a: Option<f64>,
    b: Option<f64>,
    q: Option<f64>,
    delta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTime {
    dt: Option<f64>,
    t_final: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    kind: Option<String>,
    amplitude: Option<f64>,
    snapshot: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    record_every: Option<u64>,
    n_theta: Option<usize>,
    svg: Option<bool>,
    checkpoint_every: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    grid: Option<RawGrid>,
    physics: Option<RawPhysics>,
    time: Option<RawTime>,
    scenario: Option<RawScenario>,
    output: Option<RawOutput>,
}

fn required<T: Copy>(value: Option<T>, key: &str, problems: &mut Vec<String>) -> Option<T> {
    if value.is_none() {
        problems.push(format!("{key}: missing"));
    }
    value
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| BgkError::Config(vec![e.message().to_string()]))?;
        Self::from_raw(raw)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        // relative snapshot paths are taken relative to the config file
        if let Scenario::Custom { snapshot } = &mut cfg.scenario {
            if snapshot.is_relative() {
                if let Some(parent) = path.parent() {
                    *snapshot = parent.join(&*snapshot);
                }
            }
        }
        Ok(cfg)
    }

    fn from_raw(raw: RawConfig) -> Result<Self> {
        let mut p = Vec::new();
        let g = raw.grid.unwrap_or_default();
        let ph = raw.physics.unwrap_or_default();
        let t = raw.time.unwrap_or_default();
        let s = raw.scenario.unwrap_or_default();
        let o = raw.output.unwrap_or_default();

        let dims = required(g.dims, "grid.dims", &mut p);
        let cells = required(g.cells_per_axis, "grid.cells_per_axis", &mut p);
        let nodes = required(g.nodes_per_axis, "grid.nodes_per_axis", &mut p);
        let v_max = required(g.v_max, "grid.v_max", &mut p);
        let a = required(ph.a, "physics.a", &mut p);
        let b = required(ph.b, "physics.b", &mut p);
        let q = required(ph.q, "physics.q", &mut p);
        let delta = required(ph.delta, "physics.delta", &mut p);
        let dt = required(t.dt, "time.dt", &mut p);
        let t_final = required(t.t_final, "time.t_final", &mut p);

        let scenario = match s.kind.as_deref() {
            None => {
                p.push("scenario.kind: missing".into());
                None
            }
            Some("equilibrium") => Some(Scenario::Equilibrium),
            Some("near-equilibrium") => Some(Scenario::NearEquilibrium {
                amplitude: s.amplitude.unwrap_or(DEFAULT_NEAR_EQUILIBRIUM_AMPLITUDE),
            }),
            Some("large-amplitude") => Some(Scenario::LargeAmplitude {
                amplitude: s.amplitude.unwrap_or(DEFAULT_LARGE_AMPLITUDE),
            }),
            Some("custom") => match s.snapshot {
                Some(path) => Some(Scenario::Custom { snapshot: path }),
                None => {
                    p.push("scenario.snapshot: required when kind = \"custom\"".into());
                    None
                }
            },
            Some(other) => {
                p.push(format!(
                    "scenario.kind: unknown scenario {other:?} (expected equilibrium, near-equilibrium, large-amplitude or custom)"
                ));
                None
            }
        };

        let cfg_output = OutputConfig {
            dir: o.dir,
            record_every: o.record_every.unwrap_or(DEFAULT_RECORD_EVERY),
            n_theta: o.n_theta.unwrap_or(DEFAULT_N_THETA),
            svg: o.svg.unwrap_or(false),
            checkpoint_every: o.checkpoint_every.unwrap_or(DEFAULT_CHECKPOINT_EVERY),
        };

        let (
            Some(dims),
            Some(cells),
            Some(nodes),
            Some(v_max),
            Some(a),
            Some(b),
            Some(q),
            Some(delta),
            Some(dt),
            Some(t_final),
            Some(scenario),
        ) = (dims, cells, nodes, v_max, a, b, q, delta, dt, t_final, scenario)
        else {
            let mut cfg_problems = p;
            cfg_problems.sort();
            return Err(BgkError::Config(cfg_problems));
        };

        let cfg = SimConfig {
            grid: GridConfig {
                dims,
                cells_per_axis: cells,
                nodes_per_axis: nodes,
                v_max,
            },
            physics: PhysicsConfig { a, b, q, delta },
            time: TimeConfig { dt, t_final },
            scenario,
            output: cfg_output,
        };
        p.extend(cfg.problems());
        if p.is_empty() {
            Ok(cfg)
        } else {
            Err(BgkError::Config(p))
        }
    }

    /// Every violated constraint, one message per field.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let g = &self.grid;
        if !(1..=3).contains(&g.dims) {
            p.push(format!("grid.dims: must be 1, 2 or 3, got {}", g.dims));
        }
        if g.cells_per_axis < 2 {
            p.push(format!("grid.cells_per_axis: must be >= 2, got {}", g.cells_per_axis));
        }
        if g.nodes_per_axis < 4 || g.nodes_per_axis % 2 != 0 {
            p.push(format!(
                "grid.nodes_per_axis: must be even and >= 4, got {}",
                g.nodes_per_axis
            ));
        }
        if !(g.v_max > 0.0) || !g.v_max.is_finite() {
            p.push(format!("grid.v_max: must be positive, got {}", g.v_max));
        }

        let ph = &self.physics;
        if !(ph.b >= 0.0) || !ph.b.is_finite() {
            p.push(format!(
                "physics.b: collision frequency rho^a T^b needs a >= b >= 0, got b = {}",
                ph.b
            ));
        }
        if !(ph.a >= ph.b) || !ph.a.is_finite() {
            p.push(format!(
                "physics.a: collision frequency rho^a T^b needs a >= b >= 0, got a = {}, b = {}",
                ph.a, ph.b
            ));
        }
        if !(ph.q > 10.0) || !ph.q.is_finite() {
            p.push(format!("physics.q: must exceed 10, got {}", ph.q));
        }
        if !(ph.delta > 0.0 && ph.delta < 1.0 / 3.0) {
            p.push(format!("physics.delta: must lie in (0, 1/3), got {}", ph.delta));
        }

        let t = &self.time;
        if !(t.dt > 0.0) || !t.dt.is_finite() {
            p.push(format!("time.dt: must be positive, got {}", t.dt));
        }
        if !(t.t_final >= 0.0) || !t.t_final.is_finite() {
            p.push(format!("time.t_final: must be non-negative, got {}", t.t_final));
        }

        match &self.scenario {
            Scenario::NearEquilibrium { amplitude } if !(*amplitude > 0.0) => {
                p.push(format!("scenario.amplitude: must be positive, got {amplitude}"));
            }
            Scenario::LargeAmplitude { amplitude } if !(*amplitude > 0.0 && *amplitude < 1.0) => {
                p.push(format!(
                    "scenario.amplitude: must lie in (0, 1) to keep F0 positive, got {amplitude}"
                ));
            }
            _ => {}
        }

        let o = &self.output;
        if o.record_every == 0 {
            p.push("output.record_every: must be >= 1".into());
        }
        if o.n_theta == 0 {
            p.push("output.n_theta: must be >= 1".into());
        }
        if o.checkpoint_every == 0 {
            p.push("output.checkpoint_every: must be >= 1".into());
        }
        p
    }

    /// Number of steps to reach `t_final`.
    pub fn n_steps(&self) -> u64 {
        (self.time.t_final / self.time.dt).round() as u64
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
