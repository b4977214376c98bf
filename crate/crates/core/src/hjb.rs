//! Semi-Lagrangian grid solvers: finite-horizon value functions, discounted
//! value functions, and the Lax-Oleinik operator.
//!
//! All three share one sweep: per node, minimize over a fixed control mesh
//!
//! ```text
//!   (S v)(x) = min_u { dt·L(x, u) + q·I[v](x ± dt·f(x, u)) },
//! ```
//!
//! with `I` multilinear interpolation, `q` a discount factor (1 for the
//! undiscounted problems), `+` for the departing-trajectory orientation of
//! the finite-horizon problem and `−` for the arriving orientation of
//! Lax-Oleinik.  Multilinear interpolation keeps the scheme monotone, which
//! is what the order-theoretic tests (and the semigroup limit arguments they
//! mirror) rely on.  Ties in the control minimum go to the lowest mesh
//! index, so results are reproducible across runs and thread counts; node
//! updates within a sweep only ever write their own slot and may be freely
//! parallelized.
//!
//! Feet that leave the box are handled by the configured [`Boundary`] rule.
//! `ExtendLinear` continues the field by first-order extrapolation — the
//! honest choice for problems posed on all of space, where the cost keeps
//! growing outward — while `Clamp` freezes boundary values and preserves
//! exact monotonicity arguments.

use std::io::{self, Read, Write};

use rayon::prelude::*;

use crate::lagrangian::{hamiltonian_closed_form, LagrangianSpec};
use crate::numerics::{self, norm};
use crate::systems::{ControlSystemSpec, SystemKind};
use crate::trajectory::{self, ControlSignal, Trajectory};
use crate::{Error, Result};

/// Uniform rectangular grid over a box in `ℝ^d`, `d ≤ 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    nodes: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
}

impl Grid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, nodes: Vec<usize>) -> Result<Self> {
        let d = lower.len();
        if d == 0 || d > 3 || upper.len() != d || nodes.len() != d {
            return Err(Error::Unsupported(format!(
                "grid must have matching corner/node dimensions in 1..=3, got {}/{}/{}",
                lower.len(),
                upper.len(),
                nodes.len()
            )));
        }
        for a in 0..d {
            if !(upper[a] > lower[a]) {
                return Err(Error::Unsupported(format!(
                    "grid axis {a} has empty extent [{}, {}]",
                    lower[a], upper[a]
                )));
            }
            if nodes[a] < 3 {
                return Err(Error::Unsupported(format!(
                    "grid axis {a} needs at least 3 nodes, got {}",
                    nodes[a]
                )));
            }
        }
        let spacing: Vec<f64> = (0..d)
            .map(|a| (upper[a] - lower[a]) / (nodes[a] - 1) as f64)
            .collect();
        let mut strides = vec![1usize; d];
        for a in (0..d.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * nodes[a + 1];
        }
        Ok(Grid {
            lower,
            upper,
            nodes,
            spacing,
            strides,
        })
    }

    /// Cube `[lower, upper]^d` with the same node count per axis.
    pub fn cube(lower: f64, upper: f64, nodes_per_axis: usize, d: usize) -> Result<Self> {
        Grid::new(vec![lower; d], vec![upper; d], vec![nodes_per_axis; d])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn node_count(&self) -> usize {
        self.nodes.iter().product()
    }

    /// Row-major flat index (last axis fastest).
    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn unflatten(&self, flat: usize, idx: &mut [usize]) {
        let mut rem = flat;
        for a in 0..self.dim() {
            idx[a] = rem / self.strides[a];
            rem %= self.strides[a];
        }
    }

    pub fn coords_into(&self, flat: usize, out: &mut [f64]) {
        let mut rem = flat;
        for a in 0..self.dim() {
            let i = rem / self.strides[a];
            rem %= self.strides[a];
            out[a] = self.lower[a] + i as f64 * self.spacing[a];
        }
    }

    pub fn coords(&self, flat: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.coords_into(flat, &mut out);
        out
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && (0..self.dim()).all(|a| x[a] >= self.lower[a] && x[a] <= self.upper[a])
    }

    /// Flat index of the node nearest to `x`.
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut flat = 0;
        for a in 0..self.dim() {
            let t = ((x[a] - self.lower[a]) / self.spacing[a]).round();
            let i = (t.max(0.0) as usize).min(self.nodes[a] - 1);
            flat += i * self.strides[a];
        }
        flat
    }

    pub fn is_interior(&self, flat: usize) -> bool {
        let mut rem = flat;
        for a in 0..self.dim() {
            let i = rem / self.strides[a];
            rem %= self.strides[a];
            if i == 0 || i == self.nodes[a] - 1 {
                return false;
            }
        }
        true
    }
}

/// Rule for feet that leave the grid box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// First-order extrapolation from the outermost cell.
    ExtendLinear,
    /// Project onto the box (freezes boundary values).
    Clamp,
}

/// Scalar samples on a [`Grid`] with multilinear interpolation.
#[derive(Debug, Clone)]
pub struct ValueField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ValueField {
    pub fn constant(grid: &Grid, value: f64) -> Self {
        ValueField {
            values: vec![value; grid.node_count()],
            grid: grid.clone(),
        }
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let mut x = vec![0.0; grid.dim()];
        let values = (0..grid.node_count())
            .map(|n| {
                grid.coords_into(n, &mut x);
                f(&x)
            })
            .collect();
        ValueField {
            values,
            grid: grid.clone(),
        }
    }

    /// Multilinear interpolation with the given boundary rule.
    pub fn eval_with(&self, x: &[f64], boundary: Boundary) -> f64 {
        interp_values(&self.grid, &self.values, x, boundary)
    }

    /// Interpolation with clamped boundary (safe default for probing).
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_with(x, Boundary::Clamp)
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    /// `max − min` over nodes within the Euclidean ball of `radius`.
    pub fn oscillation_in_ball(&self, radius: f64) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut x = vec![0.0; self.grid.dim()];
        for (n, &v) in self.values.iter().enumerate() {
            self.grid.coords_into(n, &mut x);
            if norm(&x) <= radius {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        hi - lo
    }

    /// Sup-distance to another field on the same grid.
    pub fn sup_distance(&self, other: &ValueField) -> f64 {
        assert_eq!(self.grid, other.grid);
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// CSV rows `x_1,…,x_d,value` in row-major node order.
    pub fn write_csv<W: io::Write>(&self, w: &mut W) -> io::Result<()> {
        let d = self.grid.dim();
        for a in 1..=d {
            write!(w, "x_{a},")?;
        }
        writeln!(w, "value")?;
        let mut x = vec![0.0; d];
        for (n, v) in self.values.iter().enumerate() {
            self.grid.coords_into(n, &mut x);
            for c in &x {
                write!(w, "{c},")?;
            }
            writeln!(w, "{v}")?;
        }
        Ok(())
    }

    /// Compact binary layout: 8-byte magic `ERGHJBVF`, then little-endian
    /// `u32` dimension, `u32` nodes per axis, `f64` lower then upper corner
    /// per axis, then the values as row-major `f64`.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        let d = self.grid.dim();
        w.write_all(&(d as u32).to_le_bytes())?;
        for a in 0..d {
            w.write_all(&(self.grid.nodes[a] as u32).to_le_bytes())?;
        }
        for a in 0..d {
            w.write_all(&self.grid.lower[a].to_le_bytes())?;
        }
        for a in 0..d {
            w.write_all(&self.grid.upper[a].to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::FieldFormat("bad magic".into()));
        }
        let d = read_u32(r)? as usize;
        if d == 0 || d > 3 {
            return Err(Error::FieldFormat(format!("dimension {d} out of range")));
        }
        let mut nodes = Vec::with_capacity(d);
        for _ in 0..d {
            nodes.push(read_u32(r)? as usize);
        }
        let mut lower = Vec::with_capacity(d);
        for _ in 0..d {
            lower.push(read_f64(r)?);
        }
        let mut upper = Vec::with_capacity(d);
        for _ in 0..d {
            upper.push(read_f64(r)?);
        }
        let grid = Grid::new(lower, upper, nodes)
            .map_err(|e| Error::FieldFormat(format!("invalid grid header: {e}")))?;
        let count = grid.node_count();
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let v = read_f64(r)?;
            if !v.is_finite() {
                return Err(Error::FieldFormat("non-finite value".into()));
            }
            values.push(v);
        }
        Ok(ValueField { grid, values })
    }
}

const MAGIC: &[u8; 8] = b"ERGHJBVF";

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn interp_values(grid: &Grid, values: &[f64], x: &[f64], boundary: Boundary) -> f64 {
    let d = grid.dim();
    let mut cell = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..d {
        let t = (x[a] - grid.lower[a]) / grid.spacing[a];
        let c = (t.floor().max(0.0) as usize).min(grid.nodes[a] - 2);
        let f = t - c as f64;
        cell[a] = c;
        frac[a] = match boundary {
            Boundary::ExtendLinear => f,
            Boundary::Clamp => f.clamp(0.0, 1.0),
        };
    }
    let mut acc = 0.0;
    for corner in 0..1usize << d {
        let mut w = 1.0;
        let mut idx = 0;
        for a in 0..d {
            if corner >> a & 1 == 1 {
                w *= frac[a];
                idx += (cell[a] + 1) * grid.strides[a];
            } else {
                w *= 1.0 - frac[a];
                idx += cell[a] * grid.strides[a];
            }
        }
        acc += w * values[idx];
    }
    acc
}

/// Control-mesh descriptor for the sweep (cube lattice intersected with the
/// ball of `radius`, distinguished control appended).
#[derive(Debug, Clone, Copy)]
pub struct ControlMeshConfig {
    pub radius: f64,
    pub points_per_axis: usize,
}

impl Default for ControlMeshConfig {
    fn default() -> Self {
        ControlMeshConfig {
            radius: 3.0,
            points_per_axis: 21,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub dt: f64,
    pub control_mesh: ControlMeshConfig,
    pub boundary: Boundary,
    /// Fixed-point stop threshold: the discounted iteration stops when the
    /// sup-change drops below `tolerance·(1−e^{−λ·dt})`, which bounds the
    /// remaining distance to the fixed point by `tolerance`.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: 0.05,
            control_mesh: ControlMeshConfig::default(),
            boundary: Boundary::ExtendLinear,
            tolerance: 1e-3,
            max_iterations: 50_000,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.tolerance > 0.0) {
            return Err(Error::Unsupported(
                "solver config needs dt > 0 and tolerance > 0".into(),
            ));
        }
        Ok(())
    }
}

/// CFL-like accuracy heuristic: `0.5·min spacing / max |f|` with the max
/// taken over all grid nodes and control-mesh points.  The scheme is
/// unconditionally stable; this just keeps feet within about half a cell.
pub fn suggest_dt(
    system: &ControlSystemSpec,
    spec: &LagrangianSpec,
    grid: &Grid,
    mesh: &ControlMeshConfig,
) -> f64 {
    let d = grid.dim();
    let controls = numerics::control_mesh(
        mesh.radius,
        mesh.points_per_axis,
        system.control_dim(),
        Some(spec.u_star()),
    );
    let mut x = vec![0.0; d];
    let mut f = vec![0.0; d];
    let mut fmax = 0.0f64;
    for n in 0..grid.node_count() {
        grid.coords_into(n, &mut x);
        for u in &controls {
            system.eval_dynamics_into(&x, u, &mut f);
            fmax = fmax.max(norm(&f));
        }
    }
    let hmin = grid.spacing.iter().cloned().fold(f64::INFINITY, f64::min);
    if fmax == 0.0 {
        hmin
    } else {
        0.5 * hmin / fmax
    }
}

/// Number of sweeps needed to cover `horizon` at the requested step,
/// treating near-integer ratios as exact before rounding up.
fn steps_for(horizon: f64, dt: f64) -> usize {
    let raw = horizon / dt;
    let rounded = raw.round();
    if (raw - rounded).abs() <= 1e-9 * raw.max(1.0) && rounded >= 1.0 {
        rounded as usize
    } else {
        raw.ceil().max(1.0) as usize
    }
}

// --- sweep engine -------------------------------------------------------

enum FootRule {
    /// `foot = base[node] + disp[control]` — linear dynamics.
    SharedDisplacement { base: Vec<f64>, disp: Vec<f64> },
    /// `foot = coords[node] + mat[node]·u` — driftless control-affine.
    PerNodeMatrix { mat: Vec<f64> },
    /// `foot = coords[node] + dt·f(x, u)` evaluated per pair.
    Closure { signed_dt: f64 },
}

/// Column-sliced sweep data.  When the control fields never read the last
/// coordinate — true for every driftless built-in — all nodes of a grid
/// column (fixed prefix indices, last axis varying) share one displacement
/// per control, so the prefix interpolation cells and weights hoist out of
/// the innermost loop and the sweep marches down contiguous memory.  Holds
/// one `d×m` scaled field block per column.
struct SlicePlan {
    nz: usize,
    col_mat: Vec<f64>,
}

enum StageRule {
    /// `dt·(g(x)+offset)` per node plus `dt·½|u−u*|²` per control.
    Separable { node: Vec<f64>, control: Vec<f64> },
    /// `dt·L(x, u)` per pair.
    Full { dt: f64 },
}

/// One Bellman sweep, prepared once and applied many times.
struct Engine<'a> {
    system: &'a ControlSystemSpec,
    spec: &'a LagrangianSpec,
    grid: &'a Grid,
    d: usize,
    m: usize,
    controls: Vec<f64>, // n_controls × m
    n_controls: usize,
    coords: Vec<f64>, // node_count × d
    foot: FootRule,
    stage: StageRule,
    slice: Option<SlicePlan>,
    signed_dt: f64,
    discount: f64,
    boundary: Boundary,
}

impl<'a> Engine<'a> {
    /// `direction` is `+1` for the departing orientation (finite-horizon,
    /// discounted) and `−1` for the arriving orientation (Lax-Oleinik).
    fn new(
        system: &'a ControlSystemSpec,
        spec: &'a LagrangianSpec,
        grid: &'a Grid,
        config: &SolverConfig,
        direction: f64,
        discount: f64,
    ) -> Engine<'a> {
        let d = grid.dim();
        let m = system.control_dim();
        assert_eq!(system.state_dim(), d);
        assert_eq!(spec.state_dim(), d);
        assert_eq!(spec.control_dim(), m);
        let dt = config.dt;
        let signed_dt = direction * dt;
        let mesh = numerics::control_mesh(
            config.control_mesh.radius,
            config.control_mesh.points_per_axis,
            m,
            Some(spec.u_star()),
        );
        let n_controls = mesh.len();
        let controls: Vec<f64> = mesh.into_iter().flatten().collect();

        let count = grid.node_count();
        let mut coords = vec![0.0; count * d];
        for n in 0..count {
            grid.coords_into(n, &mut coords[n * d..(n + 1) * d]);
        }

        let foot = match system.kind() {
            SystemKind::Linear => {
                let (a, b) = system.linear_parts().expect("linear kind");
                let mut base = vec![0.0; count * d];
                for n in 0..count {
                    let x = &coords[n * d..(n + 1) * d];
                    for i in 0..d {
                        let mut ax = 0.0;
                        for j in 0..d {
                            ax += a[(i, j)] * x[j];
                        }
                        base[n * d + i] = x[i] + signed_dt * ax;
                    }
                }
                let mut disp = vec![0.0; n_controls * d];
                for c in 0..n_controls {
                    let u = &controls[c * m..(c + 1) * m];
                    for i in 0..d {
                        let mut bu = 0.0;
                        for (j, uj) in u.iter().enumerate() {
                            bu += b[(i, j)] * uj;
                        }
                        disp[c * d + i] = signed_dt * bu;
                    }
                }
                FootRule::SharedDisplacement { base, disp }
            }
            SystemKind::DriftlessAffine => {
                let mut mat = vec![0.0; count * d * m];
                let mut cols = vec![0.0; d * m];
                for n in 0..count {
                    let x = &coords[n * d..(n + 1) * d];
                    system.field_matrix_into(x, &mut cols);
                    // column-major source → row-major scaled copy
                    for i in 0..d {
                        for j in 0..m {
                            mat[(n * d + i) * m + j] = signed_dt * cols[j * d + i];
                        }
                    }
                }
                FootRule::PerNodeMatrix { mat }
            }
            SystemKind::Generic => FootRule::Closure { signed_dt },
        };

        let stage = if spec.is_quadratic() {
            let node = (0..count)
                .map(|n| dt * spec.potential(&coords[n * d..(n + 1) * d]).expect("quadratic"))
                .collect();
            let control = (0..n_controls)
                .map(|c| {
                    let u = &controls[c * m..(c + 1) * m];
                    let du2: f64 = u
                        .iter()
                        .zip(spec.u_star())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    dt * 0.5 * du2
                })
                .collect();
            StageRule::Separable { node, control }
        } else {
            StageRule::Full { dt }
        };

        let slice = match (&foot, &stage) {
            (FootRule::PerNodeMatrix { mat }, StageRule::Separable { .. }) => {
                let nz = grid.nodes[d - 1];
                let columns = count / nz;
                let block = d * m;
                let uniform = (0..columns).all(|p| {
                    let first = &mat[p * nz * block..(p * nz + 1) * block];
                    (1..nz).all(|j| {
                        let n = p * nz + j;
                        mat[n * block..(n + 1) * block] == *first
                    })
                });
                uniform.then(|| SlicePlan {
                    nz,
                    col_mat: (0..columns)
                        .flat_map(|p| mat[p * nz * block..(p * nz + 1) * block].to_vec())
                        .collect(),
                })
            }
            _ => None,
        };

        Engine {
            system,
            spec,
            grid,
            d,
            m,
            controls,
            n_controls,
            coords,
            foot,
            stage,
            slice,
            signed_dt,
            discount,
            boundary: config.boundary,
        }
    }

    /// `dst[n] = min_u { stage + discount·I[src](foot) }` for every node.
    fn sweep(&self, src: &[f64], dst: &mut [f64]) {
        if let Some(plan) = &self.slice {
            return self.sweep_sliced(plan, src, dst);
        }
        let d = self.d;
        let m = self.m;
        dst.par_iter_mut().enumerate().for_each(|(n, out)| {
            let mut foot = [0.0f64; 3];
            let mut fval = [0.0f64; 3];
            let x = &self.coords[n * d..(n + 1) * d];
            let mut best = f64::INFINITY;
            for c in 0..self.n_controls {
                let u = &self.controls[c * m..(c + 1) * m];
                match &self.foot {
                    FootRule::SharedDisplacement { base, disp } => {
                        for i in 0..d {
                            foot[i] = base[n * d + i] + disp[c * d + i];
                        }
                    }
                    FootRule::PerNodeMatrix { mat } => {
                        for i in 0..d {
                            let row = &mat[(n * d + i) * m..(n * d + i + 1) * m];
                            let mut acc = 0.0;
                            for j in 0..m {
                                acc += row[j] * u[j];
                            }
                            foot[i] = x[i] + acc;
                        }
                    }
                    FootRule::Closure { signed_dt } => {
                        self.system.eval_dynamics_into(x, u, &mut fval[..d]);
                        for i in 0..d {
                            foot[i] = x[i] + signed_dt * fval[i];
                        }
                    }
                }
                let stage = match &self.stage {
                    StageRule::Separable { node, control } => node[n] + control[c],
                    StageRule::Full { dt } => dt * self.spec.eval(x, u),
                };
                let value =
                    stage + self.discount * interp_values(self.grid, src, &foot[..d], self.boundary);
                if value < best {
                    best = value;
                }
            }
            *out = best;
        });
    }

    /// The sliced sweep: one column of the grid per task, prefix-axis
    /// interpolation hoisted per control.  Cell, weight, and accumulation
    /// arithmetic replicates [`interp_values`] operation for operation, so
    /// this path and the generic one produce identical floats.
    fn sweep_sliced(&self, plan: &SlicePlan, src: &[f64], dst: &mut [f64]) {
        let d = self.d;
        let m = self.m;
        let nz = plan.nz;
        let (node_stage, control_stage) = match &self.stage {
            StageRule::Separable { node, control } => (node, control),
            StageRule::Full { .. } => unreachable!("sliced sweep needs a separable stage"),
        };
        let zlo = self.grid.lower[d - 1];
        let zh = self.grid.spacing[d - 1];
        let zmax = self.grid.nodes[d - 1] - 2;
        dst.par_chunks_mut(nz).enumerate().for_each(|(p, out)| {
            out.fill(f64::INFINITY);
            let base = p * nz;
            let x = &self.coords[base * d..base * d + d];
            let zs = &self.coords[base * d..(base + nz) * d];
            let mat = &plan.col_mat[p * d * m..(p + 1) * d * m];
            let stage_n = &node_stage[base..base + nz];
            // Partial weights and flat offsets over the prefix corners.
            let mut pw = [0.0f64; 4];
            let mut pi = [0usize; 4];
            for c in 0..self.n_controls {
                let u = &self.controls[c * m..(c + 1) * m];
                let mut np = 1usize;
                pw[0] = 1.0;
                pi[0] = 0;
                for a in 0..d - 1 {
                    let row = &mat[a * m..(a + 1) * m];
                    let mut acc = 0.0;
                    for j in 0..m {
                        acc += row[j] * u[j];
                    }
                    let foot = x[a] + acc;
                    let t = (foot - self.grid.lower[a]) / self.grid.spacing[a];
                    let cell = (t.floor().max(0.0) as usize).min(self.grid.nodes[a] - 2);
                    let f = t - cell as f64;
                    let f = match self.boundary {
                        Boundary::ExtendLinear => f,
                        Boundary::Clamp => f.clamp(0.0, 1.0),
                    };
                    let s = self.grid.strides[a];
                    for k in 0..np {
                        pw[np + k] = pw[k] * f;
                        pi[np + k] = pi[k] + (cell + 1) * s;
                        pw[k] *= 1.0 - f;
                        pi[k] += cell * s;
                    }
                    np *= 2;
                }
                let rowz = &mat[(d - 1) * m..d * m];
                let mut dz = 0.0;
                for j in 0..m {
                    dz += rowz[j] * u[j];
                }
                let ucost = control_stage[c];
                for j in 0..nz {
                    let foot = zs[j * d + (d - 1)] + dz;
                    let t = (foot - zlo) / zh;
                    let cell = (t.floor().max(0.0) as usize).min(zmax);
                    let f = t - cell as f64;
                    let f = match self.boundary {
                        Boundary::ExtendLinear => f,
                        Boundary::Clamp => f.clamp(0.0, 1.0),
                    };
                    let g = 1.0 - f;
                    let mut acc = 0.0;
                    for k in 0..np {
                        acc += pw[k] * g * src[pi[k] + cell];
                    }
                    for k in 0..np {
                        acc += pw[k] * f * src[pi[k] + cell + 1];
                    }
                    let value = stage_n[j] + ucost + self.discount * acc;
                    if value < out[j] {
                        out[j] = value;
                    }
                }
            }
        });
    }

    fn check_finite(&self, values: &[f64], step: usize) -> Result<()> {
        match values.iter().position(|v| !v.is_finite()) {
            Some(node) => Err(Error::NonFiniteValue { node, step }),
            None => Ok(()),
        }
    }

    /// Greedy control at an arbitrary state `x` against the field `values`:
    /// the minimizing mesh index, the minimizing value, and the foot point.
    fn policy_at(&self, x: &[f64], values: &[f64]) -> (usize, f64, Vec<f64>) {
        let d = self.d;
        let m = self.m;
        let dt = self.signed_dt.abs();
        let mut f = vec![0.0; d];
        let mut foot = vec![0.0; d];
        let mut best = (0usize, f64::INFINITY, vec![0.0; d]);
        for c in 0..self.n_controls {
            let u = &self.controls[c * m..(c + 1) * m];
            self.system.eval_dynamics_into(x, u, &mut f);
            for i in 0..d {
                foot[i] = x[i] + self.signed_dt * f[i];
            }
            let stage = dt * self.spec.eval(x, u);
            let value = stage + self.discount * interp_values(self.grid, values, &foot, self.boundary);
            if value < best.1 {
                best = (c, value, foot.clone());
            }
        }
        best
    }

    fn control(&self, c: usize) -> &[f64] {
        &self.controls[c * self.m..(c + 1) * self.m]
    }
}

/// Finite-horizon solve result: the adjusted step, total sweep count and the
/// requested checkpoint fields in ascending time order.
pub struct HorizonSolution {
    pub dt: f64,
    pub steps: usize,
    pub checkpoints: Vec<(f64, ValueField)>,
}

/// Iterates `V⁰ ≡ 0`, `Vⁿ⁺¹ = min_u { dt·L + I[Vⁿ](x + dt·f) }` up to
/// horizon `T`, recording the field whenever the elapsed horizon crosses a
/// requested checkpoint.  `dt` is adjusted downward to divide `T` exactly
/// and reported in the result.
pub fn solve_finite_horizon(
    system: &ControlSystemSpec,
    spec: &LagrangianSpec,
    grid: &Grid,
    horizon: f64,
    checkpoints: &[f64],
    config: &SolverConfig,
) -> Result<HorizonSolution> {
    config.validate()?;
    if !(horizon > 0.0) {
        return Err(Error::Unsupported("horizon must be positive".into()));
    }
    let steps = steps_for(horizon, config.dt);
    let dt = horizon / steps as f64;
    let mut cfg = config.clone();
    cfg.dt = dt;
    let engine = Engine::new(system, spec, grid, &cfg, 1.0, 1.0);

    let mut step_marks: Vec<usize> = checkpoints
        .iter()
        .map(|t| ((t / dt).round() as usize).min(steps))
        .collect();
    step_marks.sort_unstable();
    step_marks.dedup();

    let count = grid.node_count();
    let mut src = vec![0.0; count];
    let mut dst = vec![0.0; count];
    let mut out = Vec::new();
    if step_marks.first() == Some(&0) {
        out.push((0.0, ValueField::constant(grid, 0.0)));
    }
    for n in 1..=steps {
        engine.sweep(&src, &mut dst);
        engine.check_finite(&dst, n)?;
        std::mem::swap(&mut src, &mut dst);
        if step_marks.binary_search(&n).is_ok() {
            out.push((
                n as f64 * dt,
                ValueField {
                    grid: grid.clone(),
                    values: src.clone(),
                },
            ));
        }
    }
    Ok(HorizonSolution {
        dt,
        steps,
        checkpoints: out,
    })
}

/// One forward dynamic-programming update of a horizon field: the field for
/// horizon `T+dt` given the field for horizon `T`.
pub fn finite_horizon_step(
    system: &ControlSystemSpec,
    spec: &LagrangianSpec,
    field: &ValueField,
    config: &SolverConfig,
) -> Result<ValueField> {
    config.validate()?;
    let engine = Engine::new(system, spec, &field.grid, config, 1.0, 1.0);
    let mut values = vec![0.0; field.values.len()];
    engine.sweep(&field.values, &mut values);
    engine.check_finite(&values, 1)?;
    Ok(ValueField {
        grid: field.grid.clone(),
        values,
    })
}

pub struct DiscountedSolution {
    pub field: ValueField,
    pub iterations: usize,
    /// Final sup-change between successive iterates.
    pub residual: f64,
    /// Sup-change per iteration, for contraction diagnostics.
    pub change_history: Vec<f64>,
}

/// Fixed-point iteration of the discounted Bellman operator
/// `v ← min_u { dt·L + e^{−λdt}·I[v](x + dt·f) }` from `v ≡ 0` (or a warm
/// start), stopping once the sup-change falls below
/// `tolerance·(1−e^{−λdt})`.
pub fn solve_discounted(
    system: &ControlSystemSpec,
    spec: &LagrangianSpec,
    grid: &Grid,
    lambda: f64,
    config: &SolverConfig,
    warm_start: Option<&ValueField>,
) -> Result<DiscountedSolution> {
    config.validate()?;
    if !(lambda > 0.0) {
        return Err(Error::Unsupported("discount rate must be positive".into()));
    }
    let q = (-lambda * config.dt).exp();
    let engine = Engine::new(system, spec, grid, config, 1.0, q);
    let stop = config.tolerance * (1.0 - q);

    let count = grid.node_count();
    let mut src = match warm_start {
        Some(f) => {
            assert_eq!(f.grid, *grid);
            engine.check_finite(&f.values, 0)?;
            f.values.clone()
        }
        None => vec![0.0; count],
    };
    let mut dst = vec![0.0; count];
    let mut history = Vec::new();
    for it in 1..=config.max_iterations {
        engine.sweep(&src, &mut dst);
        engine.check_finite(&dst, it)?;
        let change = src
            .iter()
            .zip(&dst)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        history.push(change);
        std::mem::swap(&mut src, &mut dst);
        if change < stop {
            return Ok(DiscountedSolution {
                field: ValueField {
                    grid: grid.clone(),
                    values: src,
                },
                iterations: it,
                residual: change,
                change_history: history,
            });
        }
    }
    Err(Error::IterationLimit {
        limit: config.max_iterations,
        residual: history.last().copied().unwrap_or(f64::INFINITY),
        target: stop,
    })
}

/// Applies the Lax-Oleinik operator `T_t` to `φ`: `t/dt` sweeps with the
/// arriving-trajectory foot `x − dt·f(x,u)`.  Driftless systems only, and
/// `t` must be a (near-exact) multiple of `dt`; `t = 0` returns `φ`
/// unchanged.
pub fn lax_oleinik_apply(
    system: &ControlSystemSpec,
    spec: &LagrangianSpec,
    phi: &ValueField,
    t: f64,
    config: &SolverConfig,
) -> Result<ValueField> {
    config.validate()?;
    if system.kind() != SystemKind::DriftlessAffine {
        return Err(Error::Unsupported(format!(
            "Lax-Oleinik updates need a driftless system; `{}` has drift",
            system.name()
        )));
    }
    if t < 0.0 {
        return Err(Error::Unsupported("duration must be nonnegative".into()));
    }
    let steps_f = t / config.dt;
    let steps = steps_f.round() as usize;
    if (steps_f - steps as f64).abs() > 1e-9 * steps_f.max(1.0) {
        return Err(Error::Unsupported(format!(
            "duration {t} is not a multiple of dt = {}",
            config.dt
        )));
    }
    if steps == 0 {
        return Ok(phi.clone());
    }
    let engine = Engine::new(system, spec, &phi.grid, config, -1.0, 1.0);
    engine.check_finite(&phi.values, 0)?;
    let mut src = phi.values.clone();
    let mut dst = vec![0.0; src.len()];
    for n in 1..=steps {
        engine.sweep(&src, &mut dst);
        engine.check_finite(&dst, n)?;
        std::mem::swap(&mut src, &mut dst);
    }
    Ok(ValueField {
        grid: phi.grid.clone(),
        values: src,
    })
}

pub struct ResidualReport {
    /// Sup over interior nodes of `|field − T_dt field| / dt`.
    pub sup: f64,
    /// The per-node residuals (zero on boundary nodes).
    pub field: ValueField,
    /// Sup over interior nodes of `|H(x, Dfield)|` on central-difference
    /// gradients, using the closed-form Hamiltonian.  Reported for
    /// diagnostics only; fields reconstructed from nonsmooth solutions
    /// carry O(1) central-difference artifacts near kinks.
    pub hamiltonian_sup: f64,
}

/// Monotone-scheme residual of a candidate critical solution: how far the
/// field is from being fixed by one Lax-Oleinik step, in units of `dt`.
pub fn scheme_residual(
    system: &ControlSystemSpec,
    spec: &LagrangianSpec,
    field: &ValueField,
    config: &SolverConfig,
) -> Result<ResidualReport> {
    let stepped = lax_oleinik_apply(system, spec, field, config.dt, config)?;
    let grid = &field.grid;
    let mut residuals = vec![0.0; field.values.len()];
    let mut sup = 0.0f64;
    for n in 0..field.values.len() {
        if grid.is_interior(n) {
            let r = (field.values[n] - stepped.values[n]).abs() / config.dt;
            residuals[n] = r;
            sup = sup.max(r);
        }
    }

    let d = grid.dim();
    let mut ham_sup = 0.0f64;
    let mut ham_available = false;
    let mut x = vec![0.0; d];
    let mut p = vec![0.0; d];
    for n in 0..field.values.len() {
        if !grid.is_interior(n) {
            continue;
        }
        grid.coords_into(n, &mut x);
        for a in 0..d {
            let up = field.values[n + grid.strides[a]];
            let dn = field.values[n - grid.strides[a]];
            p[a] = (up - dn) / (2.0 * grid.spacing[a]);
        }
        match hamiltonian_closed_form(spec, system, &x, &p) {
            Ok(h) => {
                ham_available = true;
                ham_sup = ham_sup.max(h.abs());
            }
            Err(_) => break,
        }
    }

    Ok(ResidualReport {
        sup,
        field: ValueField {
            grid: grid.clone(),
            values: residuals,
        },
        hamiltonian_sup: if ham_available { ham_sup } else { f64::NAN },
    })
}

/// Recovers a near-optimal control sequence for the finite-horizon problem
/// by replaying the dynamic-programming argmins from `x0`, then
/// re-integrates it with RK4 into a proper [`Trajectory`].
///
/// The solve stores only every `window`-th field; the replay reconstructs
/// each window from its checkpoint, so the whole pass costs about two
/// solves but never holds more than `window` fields in memory.
pub fn optimal_trajectory_finite(
    system: &ControlSystemSpec,
    spec: &LagrangianSpec,
    grid: &Grid,
    horizon: f64,
    config: &SolverConfig,
    x0: &[f64],
    window: usize,
) -> Result<Trajectory> {
    config.validate()?;
    assert!(window >= 1);
    if !grid.contains(x0) {
        return Err(Error::Unsupported(
            "replay start must lie inside the grid".into(),
        ));
    }
    let steps = steps_for(horizon, config.dt);
    let dt = horizon / steps as f64;
    let mut cfg = config.clone();
    cfg.dt = dt;
    let engine = Engine::new(system, spec, grid, &cfg, 1.0, 1.0);
    let count = grid.node_count();

    // Pass 1: checkpoint fields V^{0}, V^{w}, V^{2w}, … by remaining steps.
    let mut checkpoints: Vec<Vec<f64>> = vec![vec![0.0; count]];
    {
        let mut src = vec![0.0; count];
        let mut dst = vec![0.0; count];
        for n in 1..=steps {
            engine.sweep(&src, &mut dst);
            engine.check_finite(&dst, n)?;
            std::mem::swap(&mut src, &mut dst);
            if n % window == 0 {
                checkpoints.push(src.clone());
            }
        }
    }

    // Pass 2: walk forward in time; the field with `r` remaining steps is
    // rebuilt from checkpoint `⌊r/w⌋` on demand, one window at a time.
    let mut cache: Vec<Vec<f64>> = Vec::new(); // fields V^{jw}..V^{jw+w-1}
    let mut cache_base = usize::MAX;
    let mut gamma = x0.to_vec();
    let mut controls = Vec::with_capacity(steps);
    let mut scratch = vec![0.0; count];
    for k in 0..steps {
        let remaining = steps - k - 1;
        let base = remaining / window * window;
        if base != cache_base {
            cache.clear();
            cache.push(checkpoints[base / window].clone());
            for i in 1..window {
                if base + i > steps {
                    break;
                }
                engine.sweep(cache.last().unwrap(), &mut scratch);
                cache.push(scratch.clone());
            }
            cache_base = base;
        }
        let field = &cache[remaining - base];
        let (c, _, foot) = engine.policy_at(&gamma, field);
        controls.push(engine.control(c).to_vec());
        gamma = foot;
    }

    let t_grid = trajectory::uniform_grid(0.0, horizon, steps);
    let mut traj = trajectory::integrate(system, x0, &ControlSignal::Piecewise(&controls), &t_grid)?;
    trajectory::cost(spec, &mut traj);
    Ok(traj)
}

/// Replays the stationary greedy policy of a discounted value field from
/// `x0` for `horizon` time units and re-integrates the recovered controls.
pub fn optimal_trajectory_discounted(
    system: &ControlSystemSpec,
    spec: &LagrangianSpec,
    v: &ValueField,
    lambda: f64,
    config: &SolverConfig,
    x0: &[f64],
    horizon: f64,
) -> Result<Trajectory> {
    config.validate()?;
    if !v.grid.contains(x0) {
        return Err(Error::Unsupported(
            "replay start must lie inside the grid".into(),
        ));
    }
    let q = (-lambda * config.dt).exp();
    let engine = Engine::new(system, spec, &v.grid, config, 1.0, q);
    let steps = steps_for(horizon, config.dt);
    let mut gamma = x0.to_vec();
    let mut controls = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (c, _, foot) = engine.policy_at(&gamma, &v.values);
        controls.push(engine.control(c).to_vec());
        gamma = foot;
    }
    let t_grid = trajectory::uniform_grid(0.0, steps as f64 * config.dt, steps);
    let mut traj = trajectory::integrate(system, x0, &ControlSignal::Piecewise(&controls), &t_grid)?;
    trajectory::cost(spec, &mut traj);
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrangian::BetaBound;
    use approx::assert_abs_diff_eq;

    fn quadratic_spec(g: &str, d: usize, m: usize) -> LagrangianSpec {
        LagrangianSpec::quadratic(g, d, m, BetaBound::closed_form("20 + 20*r^2").unwrap())
            .unwrap()
            .declare_normalized()
    }

    fn unit_cost(d: usize, m: usize) -> LagrangianSpec {
        LagrangianSpec::generic(
            |_x: &[f64], _u: &[f64]| 1.0,
            d,
            m,
            BetaBound::closed_form("2").unwrap(),
        )
    }

    fn small_config(dt: f64) -> SolverConfig {
        SolverConfig {
            dt,
            control_mesh: ControlMeshConfig {
                radius: 2.0,
                points_per_axis: 9,
            },
            boundary: Boundary::ExtendLinear,
            tolerance: 1e-6,
            max_iterations: 50_000,
        }
    }

    #[test]
    fn grid_indexing_roundtrip() {
        let g = Grid::new(vec![-1.0, 0.0], vec![1.0, 2.0], vec![5, 4]).unwrap();
        assert_eq!(g.node_count(), 20);
        assert_eq!(g.spacing(), &[0.5, 2.0 / 3.0]);
        let mut idx = [0usize; 2];
        for flat in 0..g.node_count() {
            g.unflatten(flat, &mut idx);
            assert_eq!(g.flat(&idx), flat);
        }
        assert_eq!(g.coords(0), vec![-1.0, 0.0]);
        assert_eq!(g.coords(g.node_count() - 1), vec![1.0, 2.0]);
        assert!(Grid::new(vec![0.0], vec![1.0], vec![2]).is_err());
        assert!(Grid::new(vec![0.0; 4], vec![1.0; 4], vec![5; 4]).is_err());
    }

    #[test]
    fn interpolation_reproduces_nodes_and_linear_functions() {
        let g = Grid::cube(-1.0, 1.0, 5, 2).unwrap();
        let f = ValueField::from_fn(&g, |x| 2.0 * x[0] - 3.0 * x[1] + 0.5);
        let mut x = vec![0.0; 2];
        for n in 0..g.node_count() {
            g.coords_into(n, &mut x);
            assert_abs_diff_eq!(f.eval(&x), f.values[n], epsilon = 1e-15);
        }
        for probe in [[0.13, -0.41], [0.99, 0.99], [-0.5, 0.25]] {
            assert_abs_diff_eq!(
                f.eval(&probe),
                2.0 * probe[0] - 3.0 * probe[1] + 0.5,
                epsilon = 1e-12
            );
        }
        // Linear extrapolation continues the plane; clamping projects.
        let outside = [1.5, 0.0];
        assert_abs_diff_eq!(
            f.eval_with(&outside, Boundary::ExtendLinear),
            2.0 * 1.5 + 0.5,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            f.eval_with(&outside, Boundary::Clamp),
            2.0 * 1.0 + 0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn binary_roundtrip_is_exact_and_validates() {
        let g = Grid::new(vec![-2.0, -1.0], vec![2.0, 3.0], vec![7, 5]).unwrap();
        let f = ValueField::from_fn(&g, |x| (x[0] * 1.7).sin() + x[1]);
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        let back = ValueField::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(back.grid, f.grid);
        assert_eq!(back.values, f.values);

        buf[0] = b'X';
        assert!(matches!(
            ValueField::read_binary(&mut buf.as_slice()),
            Err(Error::FieldFormat(_))
        ));
    }

    #[test]
    fn csv_export_lists_every_node() {
        let g = Grid::cube(0.0, 1.0, 3, 2).unwrap();
        let f = ValueField::constant(&g, 0.25);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x_1,x_2,value");
        assert_eq!(lines.len(), 10);
        assert_eq!(lines[1], "0,0,0.25");
    }

    #[test]
    fn constant_running_cost_gives_linear_growth() {
        let system = ControlSystemSpec::grushin("x").unwrap();
        let spec = unit_cost(2, 2);
        let grid = Grid::cube(-1.0, 1.0, 11, 2).unwrap();
        let sol = solve_finite_horizon(&system, &spec, &grid, 1.0, &[0.5, 1.0], &small_config(0.05))
            .unwrap();
        assert_eq!(sol.checkpoints.len(), 2);
        for (t, field) in &sol.checkpoints {
            for v in &field.values {
                assert_abs_diff_eq!(*v, *t, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn value_vanishes_at_rest_point_and_stays_nonnegative() {
        let system = ControlSystemSpec::grushin("x").unwrap();
        let spec = quadratic_spec("x^2 + y^2", 2, 2);
        let grid = Grid::cube(-1.0, 1.0, 21, 2).unwrap();
        let sol =
            solve_finite_horizon(&system, &spec, &grid, 2.0, &[2.0], &small_config(0.05)).unwrap();
        let field = &sol.checkpoints[0].1;
        let star = grid.nearest_node(&[0.0, 0.0]);
        assert!(field.values[star].abs() <= 1e-12);
        assert!(field.min() >= -1e-12);
    }

    #[test]
    fn dt_is_adjusted_downward_to_divide_the_horizon() {
        let system = ControlSystemSpec::euclidean(1);
        let spec = unit_cost(1, 1);
        let grid = Grid::cube(-1.0, 1.0, 5, 1).unwrap();
        let sol =
            solve_finite_horizon(&system, &spec, &grid, 1.0, &[1.0], &small_config(0.3)).unwrap();
        assert_eq!(sol.steps, 4);
        assert_abs_diff_eq!(sol.dt, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn horizon_step_reproduces_one_more_sweep_exactly() {
        let system = ControlSystemSpec::grushin("x").unwrap();
        let spec = quadratic_spec("x^2 + y^2", 2, 2);
        let grid = Grid::cube(-1.0, 1.0, 15, 2).unwrap();
        // dt and both horizons are binary-exact so all three runs build
        // bitwise-identical sweeps.
        let config = small_config(0.0625);
        let short =
            solve_finite_horizon(&system, &spec, &grid, 0.5, &[0.5], &config).unwrap();
        let long =
            solve_finite_horizon(&system, &spec, &grid, 0.5625, &[0.5625], &config).unwrap();
        assert_eq!(long.steps, 9);
        let stepped = finite_horizon_step(&system, &spec, &short.checkpoints[0].1, &config).unwrap();
        assert_eq!(stepped.values, long.checkpoints[0].1.values);
    }

    #[test]
    fn sliced_sweep_matches_generic_sweep_bitwise() {
        // Driftless fields never read the sweep axis, so the engine hoists
        // per-column displacements; the fast path must reproduce the
        // per-node path float for float, including tie-breaks.
        let cases: Vec<(ControlSystemSpec, &str)> = vec![
            (ControlSystemSpec::heisenberg(), "x^2 + y^2 + z^2"),
            (ControlSystemSpec::grushin("x").unwrap(), "x^2 + 0.3*y^2"),
            (ControlSystemSpec::euclidean(1), "x^2"),
        ];
        for (system, g) in cases {
            let d = system.state_dim();
            let spec = quadratic_spec(g, d, system.control_dim());
            let grid = Grid::cube(-1.0, 1.0, if d == 3 { 9 } else { 21 }, d).unwrap();
            let src = ValueField::from_fn(&grid, |x| {
                (1.3 * x[0]).sin() + x.iter().map(|c| c * c).sum::<f64>()
            });
            for boundary in [Boundary::ExtendLinear, Boundary::Clamp] {
                let mut config = small_config(0.05);
                config.boundary = boundary;
                let mut engine = Engine::new(&system, &spec, &grid, &config, 1.0, 1.0);
                assert!(engine.slice.is_some(), "{} should slice", system.name());
                let mut fast = vec![0.0; grid.node_count()];
                engine.sweep(&src.values, &mut fast);
                engine.slice = None;
                let mut slow = vec![0.0; grid.node_count()];
                engine.sweep(&src.values, &mut slow);
                assert_eq!(fast, slow);
            }
        }
    }

    #[test]
    fn slicing_is_declined_without_uniform_columns() {
        let grid = Grid::cube(-1.0, 1.0, 7, 2).unwrap();
        let config = small_config(0.05);

        // Linear drift couples the axes through the base points.
        let di = ControlSystemSpec::double_integrator();
        let spec = quadratic_spec("x^2 + y^2", 2, 1);
        let engine = Engine::new(&di, &spec, &grid, &config, 1.0, 1.0);
        assert!(engine.slice.is_none());

        // A non-quadratic cost keeps the stage per-pair.
        let grushin = ControlSystemSpec::grushin("x").unwrap();
        let flat = unit_cost(2, 2);
        let engine = Engine::new(&grushin, &flat, &grid, &config, 1.0, 1.0);
        assert!(engine.slice.is_none());

        // Closure dynamics never build the per-node table at all.
        let generic = ControlSystemSpec::generic("plain", 2, 2, 1.0, |_x, u, out| {
            out.copy_from_slice(u);
        });
        let spec2 = quadratic_spec("x^2 + y^2", 2, 2);
        let engine = Engine::new(&generic, &spec2, &grid, &config, 1.0, 1.0);
        assert!(engine.slice.is_none());
    }

    #[test]
    fn discounted_constant_cost_hits_inverse_rate() {
        let system = ControlSystemSpec::euclidean(2);
        let spec = unit_cost(2, 2);
        let grid = Grid::cube(-1.0, 1.0, 9, 2).unwrap();
        let mut config = small_config(0.1);
        config.tolerance = 1e-6;
        let sol = solve_discounted(&system, &spec, &grid, 0.5, &config, None).unwrap();
        // The discrete fixed point of v = dt + e^{−λdt} v is
        // dt/(1−e^{−λdt}), within tolerance of the continuous 1/λ.
        let discrete = config.dt / (1.0 - (-0.5 * config.dt).exp());
        for v in &sol.field.values {
            assert_abs_diff_eq!(*v, discrete, epsilon = 2e-6);
        }
        assert!((discrete - 2.0).abs() < 0.06);
    }

    #[test]
    fn discounted_value_nonnegative_and_zero_at_rest() {
        let system = ControlSystemSpec::grushin("x").unwrap();
        let spec = quadratic_spec("x^2 + y^2", 2, 2);
        let grid = Grid::cube(-1.0, 1.0, 21, 2).unwrap();
        let mut config = small_config(0.05);
        config.tolerance = 1e-4;
        let sol = solve_discounted(&system, &spec, &grid, 0.5, &config, None).unwrap();
        let star = grid.nearest_node(&[0.0, 0.0]);
        assert!(sol.field.values[star].abs() <= 1e-12);
        assert!(sol.field.min() >= -1e-12);
    }

    #[test]
    fn discounted_iterates_contract_with_clamped_boundary() {
        let system = ControlSystemSpec::grushin("x").unwrap();
        let spec = quadratic_spec("x^2 + y^2", 2, 2);
        let grid = Grid::cube(-1.0, 1.0, 15, 2).unwrap();
        let mut config = small_config(0.1);
        config.boundary = Boundary::Clamp;
        config.tolerance = 1e-5;
        let lambda = 1.0;
        let sol = solve_discounted(&system, &spec, &grid, lambda, &config, None).unwrap();
        let q = (-lambda * config.dt).exp();
        for w in sol.change_history.windows(2) {
            assert!(
                w[1] <= q * w[0] * (1.0 + 1e-12) + 1e-15,
                "contraction violated: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn warm_start_cuts_iterations() {
        let system = ControlSystemSpec::grushin("x").unwrap();
        let spec = quadratic_spec("x^2 + y^2", 2, 2);
        let grid = Grid::cube(-1.0, 1.0, 15, 2).unwrap();
        let mut config = small_config(0.1);
        config.tolerance = 1e-4;
        let cold = solve_discounted(&system, &spec, &grid, 0.5, &config, None).unwrap();
        let warm =
            solve_discounted(&system, &spec, &grid, 0.45, &config, Some(&cold.field)).unwrap();
        let cold45 = solve_discounted(&system, &spec, &grid, 0.45, &config, None).unwrap();
        assert!(warm.iterations < cold45.iterations);
        assert!(warm.field.sup_distance(&cold45.field) <= 2.0 * config.tolerance);
    }

    #[test]
    fn lax_oleinik_zero_duration_is_identity() {
        let system = ControlSystemSpec::heisenberg();
        let spec = quadratic_spec("x^2 + y^2 + z^2", 3, 2);
        let grid = Grid::cube(-1.0, 1.0, 7, 3).unwrap();
        let phi = ValueField::from_fn(&grid, |x| x[0] + x[1] * x[2]);
        let out = lax_oleinik_apply(&system, &spec, &phi, 0.0, &small_config(0.05)).unwrap();
        assert_eq!(out.values, phi.values);
    }

    #[test]
    fn lax_oleinik_commutes_with_constants() {
        let system = ControlSystemSpec::grushin("x").unwrap();
        let spec = quadratic_spec("x^2 + y^2", 2, 2);
        let grid = Grid::cube(-1.0, 1.0, 15, 2).unwrap();
        let config = small_config(0.05);
        let phi = ValueField::from_fn(&grid, |x| (2.0 * x[0]).sin() + x[1] * x[1]);
        let c = 0.731;
        let shifted_in = ValueField {
            grid: grid.clone(),
            values: phi.values.iter().map(|v| v + c).collect(),
        };
        let a = lax_oleinik_apply(&system, &spec, &shifted_in, 0.5, &config).unwrap();
        let b = lax_oleinik_apply(&system, &spec, &phi, 0.5, &config).unwrap();
        let gap = a
            .values
            .iter()
            .zip(&b.values)
            .fold(0.0f64, |m, (x, y)| m.max((x - (y + c)).abs()));
        assert!(gap <= 1e-12, "constant commutation gap {gap}");
    }

    #[test]
    fn lax_oleinik_constant_cost_accumulates_duration() {
        let system = ControlSystemSpec::euclidean(2);
        let spec = unit_cost(2, 2);
        let grid = Grid::cube(-1.0, 1.0, 9, 2).unwrap();
        let phi = ValueField::constant(&grid, 0.0);
        let out = lax_oleinik_apply(&system, &spec, &phi, 0.6, &small_config(0.05)).unwrap();
        for v in &out.values {
            assert_abs_diff_eq!(*v, 0.6, epsilon = 1e-12);
        }
    }

    #[test]
    fn lax_oleinik_rejects_drift_and_uneven_durations() {
        let spec2 = quadratic_spec("x^2 + y^2", 2, 1);
        let system = ControlSystemSpec::double_integrator();
        let grid = Grid::cube(-1.0, 1.0, 5, 2).unwrap();
        let phi = ValueField::constant(&grid, 0.0);
        assert!(lax_oleinik_apply(&system, &spec2, &phi, 0.5, &small_config(0.05)).is_err());

        let grushin = ControlSystemSpec::grushin("x").unwrap();
        let specg = quadratic_spec("x^2 + y^2", 2, 2);
        assert!(lax_oleinik_apply(&grushin, &specg, &phi, 0.513, &small_config(0.05)).is_err());
    }

    #[test]
    fn monotonicity_is_exact_per_node_with_clamp() {
        let system = ControlSystemSpec::grushin("x").unwrap();
        let spec = quadratic_spec("x^2 + y^2", 2, 2);
        let grid = Grid::cube(-1.0, 1.0, 13, 2).unwrap();
        let mut config = small_config(0.05);
        config.boundary = Boundary::Clamp;
        let phi = ValueField::from_fn(&grid, |x| (3.0 * x[0]).sin() * (2.0 * x[1]).cos());
        let psi = ValueField {
            grid: grid.clone(),
            values: phi
                .values
                .iter()
                .enumerate()
                .map(|(i, v)| v + 0.05 * (1.0 + ((i * 2654435761) % 97) as f64 / 97.0))
                .collect(),
        };
        let t_phi = lax_oleinik_apply(&system, &spec, &phi, 0.05, &config).unwrap();
        let t_psi = lax_oleinik_apply(&system, &spec, &psi, 0.05, &config).unwrap();
        for (a, b) in t_phi.values.iter().zip(&t_psi.values) {
            assert!(a <= b, "monotonicity violated: {a} > {b}");
        }
    }

    #[test]
    fn semigroup_law_is_bitwise_for_step_multiples() {
        let system = ControlSystemSpec::grushin("x").unwrap();
        let spec = quadratic_spec("x^2 + y^2", 2, 2);
        let grid = Grid::cube(-1.0, 1.0, 11, 2).unwrap();
        let config = small_config(0.05);
        let phi = ValueField::from_fn(&grid, |x| x[0] * x[0] + 0.3 * x[1]);
        let joint = lax_oleinik_apply(&system, &spec, &phi, 0.5, &config).unwrap();
        let t1 = lax_oleinik_apply(&system, &spec, &phi, 0.2, &config).unwrap();
        let split = lax_oleinik_apply(&system, &spec, &t1, 0.3, &config).unwrap();
        assert_eq!(joint.values, split.values);
    }

    #[test]
    fn oscillation_over_inner_ball_stable_in_horizon() {
        let system = ControlSystemSpec::grushin("x").unwrap();
        let spec = quadratic_spec("x^2 + y^2", 2, 2);
        let grid = Grid::cube(-2.0, 2.0, 41, 2).unwrap();
        let config = small_config(0.1);
        // Horizons long enough for the field to settle over the inner ball;
        // short horizons still carry the transient near the degenerate axis.
        let sol =
            solve_finite_horizon(&system, &spec, &grid, 16.0, &[8.0, 16.0], &config).unwrap();
        let osc_short = sol.checkpoints[0].1.oscillation_in_ball(0.75);
        let osc_long = sol.checkpoints[1].1.oscillation_in_ball(0.75);
        assert!(
            osc_long <= 1.1 * osc_short + 1e-9,
            "oscillation grew: {osc_short} -> {osc_long}"
        );
    }

    #[test]
    fn residual_vanishes_for_constants_when_rest_is_free() {
        let system = ControlSystemSpec::grushin("x").unwrap();
        let spec = quadratic_spec("0", 2, 2);
        let grid = Grid::cube(-1.0, 1.0, 11, 2).unwrap();
        let field = ValueField::constant(&grid, 0.4);
        let report = scheme_residual(&system, &spec, &field, &small_config(0.05)).unwrap();
        assert!(report.sup <= 1e-12, "residual {}", report.sup);
        assert!(report.hamiltonian_sup <= 1e-12);
    }

    #[test]
    fn non_finite_inputs_are_reported_with_node_and_step() {
        let system = ControlSystemSpec::grushin("x").unwrap();
        let spec = quadratic_spec("x^2 + y^2", 2, 2);
        let grid = Grid::cube(-1.0, 1.0, 5, 2).unwrap();
        let mut phi = ValueField::constant(&grid, 0.0);
        phi.values[7] = f64::NAN;
        match lax_oleinik_apply(&system, &spec, &phi, 0.05, &small_config(0.05)) {
            Err(Error::NonFiniteValue { node, step }) => {
                assert_eq!(node, 7);
                assert_eq!(step, 0);
            }
            Err(e) => panic!("unexpected error kind: {e}"),
            Ok(_) => panic!("expected a divergence error"),
        }
    }

    #[test]
    fn suggest_dt_scales_with_spacing() {
        let system = ControlSystemSpec::euclidean(2);
        let spec = quadratic_spec("x^2 + y^2", 2, 2);
        let coarse = Grid::cube(-1.0, 1.0, 11, 2).unwrap();
        let fine = Grid::cube(-1.0, 1.0, 21, 2).unwrap();
        let mesh = ControlMeshConfig {
            radius: 2.0,
            points_per_axis: 9,
        };
        let dt_coarse = suggest_dt(&system, &spec, &coarse, &mesh);
        let dt_fine = suggest_dt(&system, &spec, &fine, &mesh);
        assert!(dt_fine < dt_coarse);
        // |f| = |u| tops out at the mesh radius; half of min-spacing over it.
        assert_abs_diff_eq!(dt_coarse, 0.5 * 0.2 / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn replayed_trajectory_cost_matches_field_value() {
        let system = ControlSystemSpec::euclidean(2);
        let spec = quadratic_spec("x^2 + y^2", 2, 2);
        let grid = Grid::cube(-2.0, 2.0, 41, 2).unwrap();
        let mut config = small_config(0.05);
        config.control_mesh = ControlMeshConfig {
            radius: 2.0,
            points_per_axis: 13,
        };
        let horizon = 1.0;
        let x0 = [1.0, 0.0];
        let sol =
            solve_finite_horizon(&system, &spec, &grid, horizon, &[horizon], &config).unwrap();
        let v = sol.checkpoints[0].1.eval(&x0);
        let traj =
            optimal_trajectory_finite(&system, &spec, &grid, horizon, &config, &x0, 8).unwrap();
        traj.verify(&system).unwrap();
        assert!(
            (traj.cost - v).abs() <= 0.1 * v.abs() + 0.02,
            "replay cost {} vs field value {v}",
            traj.cost
        );
    }

    #[test]
    fn discounted_replay_descends_toward_rest() {
        let system = ControlSystemSpec::grushin("x").unwrap();
        let spec = quadratic_spec("x^2 + y^2", 2, 2);
        let grid = Grid::cube(-2.0, 2.0, 41, 2).unwrap();
        let mut config = small_config(0.05);
        config.tolerance = 1e-3;
        let sol = solve_discounted(&system, &spec, &grid, 0.3, &config, None).unwrap();
        let traj = optimal_trajectory_discounted(
            &system,
            &spec,
            &sol.field,
            0.3,
            &config,
            &[1.0, 1.0],
            6.0,
        )
        .unwrap();
        let start = norm(&traj.states[0]);
        let end = norm(traj.final_state());
        assert!(end < 0.3 * start, "did not approach rest: {start} -> {end}");
    }
}
