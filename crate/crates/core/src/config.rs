//! Experiment configuration: the JSON schema read by the command-line
//! driver, semantic validation with field-path diagnostics, and the
//! built-in benchmark catalogue.
//!
//! One experiment is one file.  Schema version 1:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "system":     {"kind": "grushin", "phi": "x"},
//!   "lagrangian": {"potential": "x^2 + y^2", "normalized": true},
//!   "grid":       {"lower": [-2, -2], "upper": [2, 2], "nodes": [161, 161]},
//!   "solver":     {"dt": 0.01, "mesh_radius": 3.0, "mesh_points_per_axis": 21,
//!                  "boundary": "extend-linear", "tolerance": 1e-6,
//!                  "max_iterations": 50000},
//!   "task":       {"name": "solve-vt", "horizon": 20.0, "checkpoints": [5, 10, 20]},
//!   "seed": 7,
//!   "output_dir": "out"
//! }
//! ```
//!
//! `system.kind` is one of `heisenberg`, `grushin` (with a polynomial
//! `phi` in `x`), `euclidean` (with `dim`), `double-integrator`,
//! `harmonic-oscillator`, or `linear` (with row-major matrices `a`, `b`).
//! The Lagrangian is always the quadratic form `½|u − u*|² + g(x)`; `g`
//! comes from the expression grammar over the state coordinates (`x`,
//! `y`, `z` up to dimension three, `x1…xd` beyond).  Closure-defined
//! costs exist in the library API but have no file representation.
//!
//! `solver.dt` may be omitted, in which case the CFL-style heuristic
//! picks a step.  Unknown fields anywhere are rejected rather than
//! ignored, so typos surface as schema errors instead of silently
//! running with defaults.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::hjb::{Boundary, ControlMeshConfig, Grid, SolverConfig};
use crate::lagrangian::{BetaBound, LagrangianSpec};
use crate::systems::ControlSystemSpec;
use crate::{Error, Result};

use nalgebra::DMatrix;

/// Schema version this build reads and writes.
pub const SCHEMA_VERSION: u32 = 1;

fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Everything one experiment run needs, as parsed from a config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub system: SystemConfig,
    pub lagrangian: LagrangianConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverSettings,
    pub task: TaskConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Control system selector.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemConfig {
    Heisenberg,
    Grushin { phi: String },
    Euclidean { dim: usize },
    DoubleIntegrator,
    HarmonicOscillator,
    Linear { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
}

impl SystemConfig {
    pub fn build(&self) -> Result<ControlSystemSpec> {
        match self {
            SystemConfig::Heisenberg => Ok(ControlSystemSpec::heisenberg()),
            SystemConfig::Grushin { phi } => ControlSystemSpec::grushin(phi)
                .map_err(|e| config_err("system.phi", e.to_string())),
            SystemConfig::Euclidean { dim } => {
                if *dim == 0 {
                    return Err(config_err("system.dim", "dimension must be positive"));
                }
                Ok(ControlSystemSpec::euclidean(*dim))
            }
            SystemConfig::DoubleIntegrator => Ok(ControlSystemSpec::double_integrator()),
            SystemConfig::HarmonicOscillator => Ok(ControlSystemSpec::harmonic_oscillator()),
            SystemConfig::Linear { a, b } => {
                let a = rows_to_matrix(a, "system.a")?;
                let b = rows_to_matrix(b, "system.b")?;
                ControlSystemSpec::linear(a, b).map_err(|e| config_err("system", e.to_string()))
            }
        }
    }
}

fn rows_to_matrix(rows: &[Vec<f64>], path: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(config_err(path, "matrix must have at least one row and column"));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(config_err(path, "matrix rows must all have the same length"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Quadratic running cost `½|u − u*|² + g(x)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagrangianConfig {
    /// Potential `g` in the expression grammar over the state coordinates.
    pub potential: String,
    /// Growth bound `β(r)` with `L ≤ β(|x|)(1 + |u|²)`, closed form in `r`.
    #[serde(default = "default_beta")]
    pub beta: String,
    #[serde(default)]
    pub u_star: Option<Vec<f64>>,
    #[serde(default)]
    pub x_star: Option<Vec<f64>>,
    /// Radius of the attractor neighborhood used by the assumption audits.
    #[serde(default)]
    pub k_radius: Option<f64>,
    /// Declares `min L = 0` attained at `(x*, u*)`.
    #[serde(default)]
    pub normalized: bool,
}

fn default_beta() -> String {
    "1 + r^2".to_string()
}

impl LagrangianConfig {
    pub fn build(&self, system: &ControlSystemSpec) -> Result<LagrangianSpec> {
        let beta = BetaBound::closed_form(&self.beta)
            .map_err(|e| config_err("lagrangian.beta", e.to_string()))?;
        let mut spec = LagrangianSpec::quadratic(
            &self.potential,
            system.state_dim(),
            system.control_dim(),
            beta,
        )
        .map_err(|e| config_err("lagrangian.potential", e.to_string()))?;
        if let Some(u) = &self.u_star {
            if u.len() != system.control_dim() {
                return Err(config_err(
                    "lagrangian.u_star",
                    format!(
                        "length {} does not match control dimension {}",
                        u.len(),
                        system.control_dim()
                    ),
                ));
            }
            spec = spec.with_u_star(u.clone());
        }
        if let Some(x) = &self.x_star {
            if x.len() != system.state_dim() {
                return Err(config_err(
                    "lagrangian.x_star",
                    format!(
                        "length {} does not match state dimension {}",
                        x.len(),
                        system.state_dim()
                    ),
                ));
            }
            spec = spec.with_x_star(x.clone());
        }
        if let Some(r) = self.k_radius {
            if !(r > 0.0) {
                return Err(config_err("lagrangian.k_radius", "radius must be positive"));
            }
            spec = spec.with_k_radius(r);
        }
        if self.normalized {
            spec = spec.declare_normalized();
        }
        Ok(spec)
    }
}

/// Uniform box grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes: Vec<usize>,
}

impl GridConfig {
    pub fn build(&self, system: &ControlSystemSpec) -> Result<Grid> {
        let d = system.state_dim();
        if self.lower.len() != d || self.upper.len() != d || self.nodes.len() != d {
            return Err(config_err(
                "grid",
                format!("lower/upper/nodes must each have the state dimension {d}"),
            ));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if *n < 3 {
                return Err(config_err(
                    &format!("grid.nodes[{i}]"),
                    "each axis needs at least 3 nodes so the grid has an interior",
                ));
            }
        }
        for i in 0..d {
            if !(self.lower[i] < self.upper[i]) {
                return Err(config_err(
                    &format!("grid.lower[{i}]"),
                    "lower bound must be strictly below the upper bound",
                ));
            }
        }
        Grid::new(self.lower.clone(), self.upper.clone(), self.nodes.clone())
            .map_err(|e| config_err("grid", e.to_string()))
    }
}

/// Boundary rule selector for the grid solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryRule {
    ExtendLinear,
    Clamp,
}

impl From<BoundaryRule> for Boundary {
    fn from(rule: BoundaryRule) -> Boundary {
        match rule {
            BoundaryRule::ExtendLinear => Boundary::ExtendLinear,
            BoundaryRule::Clamp => Boundary::Clamp,
        }
    }
}

/// Grid-solver knobs; every field has a default so `"solver": {}` works.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    /// Time step; omit to let the CFL heuristic choose one.
    pub dt: Option<f64>,
    pub mesh_radius: f64,
    pub mesh_points_per_axis: usize,
    pub boundary: BoundaryRule,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let base = SolverConfig::default();
        SolverSettings {
            dt: None,
            mesh_radius: base.control_mesh.radius,
            mesh_points_per_axis: base.control_mesh.points_per_axis,
            boundary: BoundaryRule::ExtendLinear,
            tolerance: base.tolerance,
            max_iterations: base.max_iterations,
        }
    }
}

impl SolverSettings {
    /// Resolves the settings into a concrete [`SolverConfig`], running the
    /// `dt` heuristic when no step was pinned.
    pub fn build(
        &self,
        system: &ControlSystemSpec,
        spec: &LagrangianSpec,
        grid: &Grid,
    ) -> Result<SolverConfig> {
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(config_err("solver.dt", "time step must be positive"));
            }
        }
        if !(self.mesh_radius > 0.0) {
            return Err(config_err("solver.mesh_radius", "radius must be positive"));
        }
        if self.mesh_points_per_axis < 2 {
            return Err(config_err(
                "solver.mesh_points_per_axis",
                "the control mesh needs at least 2 points per axis",
            ));
        }
        if !(self.tolerance > 0.0) {
            return Err(config_err("solver.tolerance", "tolerance must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(config_err(
                "solver.max_iterations",
                "iteration budget must be positive",
            ));
        }
        let mesh = ControlMeshConfig {
            radius: self.mesh_radius,
            points_per_axis: self.mesh_points_per_axis,
        };
        let dt = match self.dt {
            Some(dt) => dt,
            None => crate::hjb::suggest_dt(system, spec, grid, &mesh),
        };
        Ok(SolverConfig {
            dt,
            control_mesh: mesh,
            boundary: self.boundary.into(),
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
        })
    }
}

/// Which experiment to run, with its parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskConfig {
    /// Audit the declared assumptions and report; no solver runs.
    Validate,
    /// Finite-horizon value function with checkpoint snapshots.
    SolveVt {
        horizon: f64,
        #[serde(default)]
        checkpoints: Vec<f64>,
    },
    /// Discounted value functions along a decreasing λ chain.
    SolveDiscounted { lambdas: Vec<f64> },
    /// Point-to-point sub-Riemannian distance.
    SrDistance {
        from: Vec<f64>,
        to: Vec<f64>,
        #[serde(default)]
        n_intervals: Option<usize>,
        #[serde(default)]
        restarts: Option<usize>,
    },
    /// Hölder-equivalence audit on sampled pairs.
    BallBox {
        radius: f64,
        pairs: usize,
    },
    /// Critical constant by both routes plus the closed form.
    ErgodicEstimate {
        #[serde(default)]
        horizons: Vec<f64>,
        #[serde(default)]
        lambdas: Vec<f64>,
        #[serde(default)]
        probe_radius: Option<f64>,
    },
    /// Vanishing-discount corrector extraction.
    Corrector {
        #[serde(default)]
        lambdas: Vec<f64>,
    },
    /// Corrector extraction followed by the fixed-point refinement.
    LaxOleinik {
        t_step: f64,
        max_time: f64,
    },
}

impl TaskConfig {
    /// Subcommand-style name, used for artifact prefixes and plan output.
    pub fn name(&self) -> &'static str {
        match self {
            TaskConfig::Validate => "validate",
            TaskConfig::SolveVt { .. } => "solve-vt",
            TaskConfig::SolveDiscounted { .. } => "solve-discounted",
            TaskConfig::SrDistance { .. } => "sr-distance",
            TaskConfig::BallBox { .. } => "ball-box",
            TaskConfig::ErgodicEstimate { .. } => "ergodic-estimate",
            TaskConfig::Corrector { .. } => "corrector",
            TaskConfig::LaxOleinik { .. } => "lax-oleinik",
        }
    }
}

/// The fully constructed objects a task runs against.
#[derive(Debug)]
pub struct BuiltExperiment {
    pub system: ControlSystemSpec,
    pub lagrangian: LagrangianSpec,
    pub grid: Grid,
    pub solver: SolverConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let parsed: std::result::Result<ExperimentConfig, _> =
            serde_path_to_error::deserialize(de);
        parsed.map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "<root>".to_string() } else { path };
            Error::Config {
                path,
                message: e.inner().to_string(),
            }
        })
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("config serializes");
        out.push('\n');
        out
    }

    /// Checks every cross-field invariant and returns the constructed
    /// system, Lagrangian, grid, and solver configuration.  Nothing heavy
    /// runs here; a passing build means the solvers can start.
    pub fn build(&self) -> Result<BuiltExperiment> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err(
                "schema_version",
                format!(
                    "unsupported version {} (this build reads {SCHEMA_VERSION})",
                    self.schema_version
                ),
            ));
        }
        let system = self.system.build()?;
        if system.state_dim() > 3 {
            return Err(config_err(
                "system",
                "grid solvers cover state dimension at most 3",
            ));
        }
        let lagrangian = self.lagrangian.build(&system)?;
        let grid = self.grid.build(&system)?;
        let solver = self.solver.build(&system, &lagrangian, &grid)?;
        self.check_task(&system, &grid)?;
        Ok(BuiltExperiment {
            system,
            lagrangian,
            grid,
            solver,
        })
    }

    fn check_task(&self, system: &ControlSystemSpec, grid: &Grid) -> Result<()> {
        match &self.task {
            TaskConfig::Validate => Ok(()),
            TaskConfig::SolveVt { horizon, checkpoints } => {
                if !(*horizon > 0.0) {
                    return Err(config_err("task.horizon", "horizon must be positive"));
                }
                for (i, t) in checkpoints.iter().enumerate() {
                    if !(*t > 0.0 && *t <= *horizon) {
                        return Err(config_err(
                            &format!("task.checkpoints[{i}]"),
                            "checkpoints must lie in (0, horizon]",
                        ));
                    }
                }
                if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(config_err(
                        "task.checkpoints",
                        "checkpoints must be strictly increasing",
                    ));
                }
                Ok(())
            }
            TaskConfig::SolveDiscounted { lambdas } => check_lambda_chain(lambdas),
            TaskConfig::SrDistance {
                from,
                to,
                n_intervals,
                restarts,
            } => {
                if !system.is_driftless() {
                    return Err(config_err(
                        "task",
                        "sr-distance needs a driftless system",
                    ));
                }
                let d = system.state_dim();
                if from.len() != d || to.len() != d {
                    return Err(config_err(
                        "task.from",
                        format!("endpoints must have the state dimension {d}"),
                    ));
                }
                if n_intervals.is_some_and(|n| n < 2) {
                    return Err(config_err(
                        "task.n_intervals",
                        "need at least 2 control intervals",
                    ));
                }
                if restarts.is_some_and(|r| r == 0) {
                    return Err(config_err("task.restarts", "need at least 1 restart"));
                }
                Ok(())
            }
            TaskConfig::BallBox { radius, pairs } => {
                if !system.is_driftless() {
                    return Err(config_err("task", "ball-box needs a driftless system"));
                }
                if !(*radius > 0.0) {
                    return Err(config_err("task.radius", "radius must be positive"));
                }
                if *pairs < 2 {
                    return Err(config_err(
                        "task.pairs",
                        "the envelope fit needs at least 2 pairs",
                    ));
                }
                Ok(())
            }
            TaskConfig::ErgodicEstimate {
                horizons,
                lambdas,
                probe_radius,
            } => {
                if horizons.windows(2).any(|w| w[0] >= w[1])
                    || horizons.iter().any(|t| !(*t > 0.0))
                {
                    return Err(config_err(
                        "task.horizons",
                        "horizons must be positive and strictly increasing",
                    ));
                }
                if !lambdas.is_empty() {
                    check_lambda_chain(lambdas)?;
                }
                if let Some(r) = probe_radius {
                    let fits = (0..grid.dim())
                        .all(|i| *r < grid.upper()[i].min(-grid.lower()[i]));
                    if !(*r > 0.0) || !fits {
                        return Err(config_err(
                            "task.probe_radius",
                            "probe ball must be positive and strictly inside the grid",
                        ));
                    }
                }
                Ok(())
            }
            TaskConfig::Corrector { lambdas } => {
                if lambdas.is_empty() {
                    Ok(())
                } else if lambdas.len() < 2 {
                    Err(config_err(
                        "task.lambdas",
                        "the vanishing-discount chain needs at least 2 rates",
                    ))
                } else {
                    check_lambda_chain(lambdas)
                }
            }
            TaskConfig::LaxOleinik { t_step, max_time } => {
                if !(*t_step > 0.0) {
                    return Err(config_err("task.t_step", "iteration step must be positive"));
                }
                if !(*max_time >= *t_step) {
                    return Err(config_err(
                        "task.max_time",
                        "time budget must cover at least one step",
                    ));
                }
                Ok(())
            }
        }
    }
}

fn check_lambda_chain(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() {
        return Err(config_err("task.lambdas", "need at least one discount rate"));
    }
    if lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(config_err("task.lambdas", "discount rates must be positive"));
    }
    if lambdas.windows(2).any(|w| w[0] <= w[1]) {
        return Err(config_err(
            "task.lambdas",
            "discount rates must be strictly decreasing",
        ));
    }
    Ok(())
}

// --- benchmark catalogue ------------------------------------------------

/// A named preset scenario.
pub struct Benchmark {
    pub name: &'static str,
    pub summary: &'static str,
}

/// The built-in scenarios, stable in content and order.
pub fn benchmarks() -> Vec<Benchmark> {
    vec![
        Benchmark {
            name: "grushin-quadratic",
            summary: "Grushin plane (φ = x), g = x² + y²; the degenerate-axis \
                      workhorse for the critical-constant and corrector runs",
        },
        Benchmark {
            name: "heisenberg-quadratic",
            summary: "Heisenberg group with g = |x|²; bracket-generating in one \
                      step, used for distance and controllability checks",
        },
        Benchmark {
            name: "euclidean-sanity",
            summary: "Full-rank planar system with g = x² + y²; every quantity \
                      has a closed form, so this anchors the oracles",
        },
        Benchmark {
            name: "double-integrator",
            summary: "Control of acceleration: linear drift ẋ = v, v̇ = u; \
                      Kalman-controllable with rank reached at the second block",
        },
        Benchmark {
            name: "harmonic-oscillator",
            summary: "Controlled harmonic oscillator: rotation drift plus forcing; \
                      Kalman-controllable despite rank-one input",
        },
    ]
}

/// Looks up a preset by name.  The task defaults to `validate`; callers
/// (and the CLI subcommands) replace it as needed.
pub fn benchmark(name: &str) -> Option<ExperimentConfig> {
    let (system, potential, grid) = match name {
        "grushin-quadratic" => (
            SystemConfig::Grushin { phi: "x".into() },
            "x^2 + y^2",
            GridConfig {
                lower: vec![-2.0, -2.0],
                upper: vec![2.0, 2.0],
                nodes: vec![161, 161],
            },
        ),
        "heisenberg-quadratic" => (
            SystemConfig::Heisenberg,
            "x^2 + y^2 + z^2",
            GridConfig {
                lower: vec![-2.0; 3],
                upper: vec![2.0; 3],
                nodes: vec![21; 3],
            },
        ),
        "euclidean-sanity" => (
            SystemConfig::Euclidean { dim: 2 },
            "x^2 + y^2",
            GridConfig {
                lower: vec![-2.0, -2.0],
                upper: vec![2.0, 2.0],
                nodes: vec![41, 41],
            },
        ),
        "double-integrator" => (
            SystemConfig::DoubleIntegrator,
            "x^2 + y^2",
            GridConfig {
                lower: vec![-2.0, -2.0],
                upper: vec![2.0, 2.0],
                nodes: vec![41, 41],
            },
        ),
        "harmonic-oscillator" => (
            SystemConfig::HarmonicOscillator,
            "x^2 + y^2",
            GridConfig {
                lower: vec![-2.0, -2.0],
                upper: vec![2.0, 2.0],
                nodes: vec![41, 41],
            },
        ),
        _ => return None,
    };
    let dt = match name {
        "grushin-quadratic" => Some(0.01),
        _ => None,
    };
    Some(ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        system,
        lagrangian: LagrangianConfig {
            potential: potential.into(),
            beta: default_beta(),
            u_star: None,
            x_star: None,
            k_radius: None,
            normalized: true,
        },
        grid,
        solver: SolverSettings {
            dt,
            ..SolverSettings::default()
        },
        task: TaskConfig::Validate,
        seed: 0,
        output_dir: default_output_dir(),
    })
}
