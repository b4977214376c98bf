//! Controlled-ODE integration, cost evaluation, and direct open-loop
//! optimization.
//!
//! Controls are piecewise constant on the intervals of the time grid and the
//! state is advanced by classical RK4 with the control frozen per interval.
//! Time-dependent control signals are sampled at interval midpoints, which
//! keeps the freezing error second order; the control discretization, not
//! the integrator, dominates the overall error.
//!
//! [`direct_minimize`] searches the space of piecewise-constant controls
//! directly.  Endpoint constraints enter through a quadratic penalty ramped
//! over three continuation rounds (×10 each) — far more robust than shooting
//! when the target is only reachable sideways through Lie brackets.  The
//! inner solver is the accelerated descent from [`crate::numerics`], fed by
//! a discrete adjoint pass: differentiating the rolled-out RK4 recursion
//! backwards costs a handful of dynamics evaluations per step, where
//! coordinate-wise differences would cost two full rollouts per control
//! coordinate.

use std::io;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::lagrangian::LagrangianSpec;
use crate::numerics::{self, norm, DescentOptions};
use crate::systems::{ControlSystemSpec, SystemKind};
use crate::{Error, Result};

/// A sampled trajectory-control pair.
///
/// `states` has one entry per grid node, `controls` one per interval (the
/// control is constant on `[times[k], times[k+1])`).  `cost` is the
/// accumulated running cost; it is zero until [`cost`] fills it.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub cost: f64,
}

impl Trajectory {
    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn control_dim(&self) -> usize {
        self.controls.first().map_or(0, Vec::len)
    }

    pub fn n_intervals(&self) -> usize {
        self.controls.len()
    }

    pub fn horizon(&self) -> f64 {
        self.times.last().unwrap() - self.times[0]
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().unwrap()
    }

    /// Grid spacing when the grid is uniform (to relative 1e-9).
    pub fn uniform_dt(&self) -> Option<f64> {
        let n = self.n_intervals();
        let h = self.horizon() / n as f64;
        let uniform = self
            .times
            .windows(2)
            .all(|w| (w[1] - w[0] - h).abs() <= 1e-9 * h);
        uniform.then_some(h)
    }

    pub fn max_state_norm(&self) -> f64 {
        self.states.iter().map(|x| norm(x)).fold(0.0, f64::max)
    }

    /// `∫ |u(t) − u*|² dt`, exact for piecewise-constant controls.
    pub fn control_energy(&self, u_star: &[f64]) -> f64 {
        self.times
            .windows(2)
            .zip(&self.controls)
            .map(|(w, u)| {
                let du2: f64 = u
                    .iter()
                    .zip(u_star)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (w[1] - w[0]) * du2
            })
            .sum()
    }

    /// Re-runs one RK4 step per interval and checks the stored states, plus
    /// grid monotonicity.  A trajectory that was actually produced by
    /// [`integrate`] replays the identical arithmetic and passes exactly.
    pub fn verify(&self, system: &ControlSystemSpec) -> Result<()> {
        if self.states.len() != self.times.len() || self.controls.len() + 1 != self.times.len() {
            return Err(Error::Inconsistent(format!(
                "trajectory shape mismatch: {} times, {} states, {} controls",
                self.times.len(),
                self.states.len(),
                self.controls.len()
            )));
        }
        let d = self.state_dim();
        let mut scratch = Rk4Scratch::new(d);
        let mut next = vec![0.0; d];
        for k in 0..self.controls.len() {
            let h = self.times[k + 1] - self.times[k];
            if h <= 0.0 {
                return Err(Error::Inconsistent(format!(
                    "time grid not increasing at index {k}"
                )));
            }
            rk4_step(system, &self.states[k], &self.controls[k], h, &mut scratch, &mut next);
            for i in 0..d {
                let gap = (next[i] - self.states[k + 1][i]).abs();
                if gap > 1e-12 * (1.0 + next[i].abs()) {
                    return Err(Error::Inconsistent(format!(
                        "state {} deviates from RK4 replay by {gap:.3e}",
                        k + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Checks the a-priori growth bound
    /// `|γ(t)| ≤ (|γ(0)| + c_f(1+max|u|)t)·exp(c_f(1+max|u|)t)`
    /// against every node.
    pub fn gronwall_check(&self, system: &ControlSystemSpec) -> GronwallReport {
        let c = system.c_f();
        let umax = self.controls.iter().map(|u| norm(u)).fold(0.0, f64::max);
        let rate = c * (1.0 + umax);
        let x0 = norm(&self.states[0]);
        let mut worst: f64 = 0.0;
        for (k, x) in self.states.iter().enumerate() {
            let tau = self.times[k] - self.times[0];
            let bound = (x0 + rate * tau) * (rate * tau).exp();
            if bound > 0.0 {
                worst = worst.max(norm(x) / bound);
            } else if norm(x) > 0.0 {
                worst = f64::INFINITY;
            }
        }
        GronwallReport {
            holds: worst <= 1.0 + 1e-6,
            worst_ratio: worst,
        }
    }

    /// CSV with columns `t, x_1..x_d, u_1..u_m, running_cost`.  The final
    /// row repeats the last interval's control; `running_cost` is the
    /// cumulative trapezoid of the running cost up to that node.
    pub fn write_csv<W: io::Write>(&self, spec: &LagrangianSpec, w: &mut W) -> io::Result<()> {
        let d = self.state_dim();
        let m = self.control_dim();
        write!(w, "t")?;
        for i in 1..=d {
            write!(w, ",x_{i}")?;
        }
        for i in 1..=m {
            write!(w, ",u_{i}")?;
        }
        writeln!(w, ",running_cost")?;

        let n = self.n_intervals();
        let mut running = 0.0;
        let mut prev_l = 0.0;
        for k in 0..=n {
            let u = &self.controls[k.min(n.saturating_sub(1))];
            let l = spec.eval(&self.states[k], u);
            if k > 0 {
                running += 0.5 * (self.times[k] - self.times[k - 1]) * (prev_l + l);
            }
            prev_l = l;
            write!(w, "{}", self.times[k])?;
            for v in &self.states[k] {
                write!(w, ",{v}")?;
            }
            for v in u {
                write!(w, ",{v}")?;
            }
            writeln!(w, ",{running}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GronwallReport {
    pub holds: bool,
    pub worst_ratio: f64,
}

/// Control input for [`integrate`].
pub enum ControlSignal<'a> {
    /// Same control on every interval.
    Constant(&'a [f64]),
    /// One control vector per grid interval.
    Piecewise(&'a [Vec<f64>]),
    /// Sampled at the midpoint of each interval and frozen there.
    TimeFn(&'a dyn Fn(f64) -> Vec<f64>),
}

/// `n` equal intervals from `t0` to `t1`.
pub fn uniform_grid(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    numerics::linspace(t0, t1, n + 1)
}

struct Rk4Scratch {
    k: [Vec<f64>; 4],
    stage: Vec<f64>,
}

impl Rk4Scratch {
    fn new(d: usize) -> Self {
        Rk4Scratch {
            k: std::array::from_fn(|_| vec![0.0; d]),
            stage: vec![0.0; d],
        }
    }
}

fn rk4_step(
    system: &ControlSystemSpec,
    x: &[f64],
    u: &[f64],
    h: f64,
    s: &mut Rk4Scratch,
    out: &mut [f64],
) {
    let d = x.len();
    system.eval_dynamics_into(x, u, &mut s.k[0]);
    for i in 0..d {
        s.stage[i] = x[i] + 0.5 * h * s.k[0][i];
    }
    system.eval_dynamics_into(&s.stage, u, &mut s.k[1]);
    for i in 0..d {
        s.stage[i] = x[i] + 0.5 * h * s.k[1][i];
    }
    system.eval_dynamics_into(&s.stage, u, &mut s.k[2]);
    for i in 0..d {
        s.stage[i] = x[i] + h * s.k[2][i];
    }
    system.eval_dynamics_into(&s.stage, u, &mut s.k[3]);
    for i in 0..d {
        out[i] = x[i]
            + h / 6.0 * (s.k[0][i] + 2.0 * s.k[1][i] + 2.0 * s.k[2][i] + s.k[3][i]);
    }
}

/// Integrates the system from `x0` under `control` over `t_grid`.
///
/// The cost field is left at zero; [`cost`] fills it.
pub fn integrate(
    system: &ControlSystemSpec,
    x0: &[f64],
    control: &ControlSignal,
    t_grid: &[f64],
) -> Result<Trajectory> {
    let d = system.state_dim();
    let m = system.control_dim();
    if x0.len() != d {
        return Err(Error::Dimension {
            context: "integrate initial state",
            expected: d,
            got: x0.len(),
        });
    }
    if t_grid.len() < 2 {
        return Err(Error::Inconsistent("time grid needs at least two nodes".into()));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Inconsistent("time grid must be strictly increasing".into()));
    }
    let n = t_grid.len() - 1;
    if let ControlSignal::Piecewise(cs) = control {
        if cs.len() != n {
            return Err(Error::Dimension {
                context: "integrate piecewise control count",
                expected: n,
                got: cs.len(),
            });
        }
    }

    let mut states = Vec::with_capacity(n + 1);
    let mut controls = Vec::with_capacity(n);
    states.push(x0.to_vec());
    let mut scratch = Rk4Scratch::new(d);
    let mut next = vec![0.0; d];
    for k in 0..n {
        let u: Vec<f64> = match control {
            ControlSignal::Constant(u) => u.to_vec(),
            ControlSignal::Piecewise(cs) => cs[k].clone(),
            ControlSignal::TimeFn(f) => f(0.5 * (t_grid[k] + t_grid[k + 1])),
        };
        if u.len() != m {
            return Err(Error::Dimension {
                context: "integrate control",
                expected: m,
                got: u.len(),
            });
        }
        let h = t_grid[k + 1] - t_grid[k];
        rk4_step(system, &states[k], &u, h, &mut scratch, &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                step: k + 1,
                time: t_grid[k + 1],
            });
        }
        states.push(next.clone());
        controls.push(u);
    }

    Ok(Trajectory {
        times: t_grid.to_vec(),
        states,
        controls,
        cost: 0.0,
    })
}

/// Integrates `L(γ(t), u(t))` over the trajectory grid — composite Simpson
/// on uniform grids with an even interval count, trapezoid otherwise —
/// storing the value into `traj.cost` and returning it.
pub fn cost(spec: &LagrangianSpec, traj: &mut Trajectory) -> f64 {
    assert_eq!(spec.state_dim(), traj.state_dim());
    assert_eq!(spec.control_dim(), traj.control_dim());
    let n = traj.n_intervals();
    let values: Vec<f64> = (0..=n)
        .map(|k| spec.eval(&traj.states[k], &traj.controls[k.min(n - 1)]))
        .collect();
    let total = match traj.uniform_dt() {
        Some(h) => numerics::integrate_uniform(&values, h),
        None => traj
            .times
            .windows(2)
            .enumerate()
            .map(|(k, w)| 0.5 * (w[1] - w[0]) * (values[k] + values[k + 1]))
            .sum(),
    };
    traj.cost = total;
    total
}

/// Endpoint target with quadratic penalty weight `μ` (the final weight of
/// the continuation schedule).
#[derive(Debug, Clone)]
pub struct Endpoint {
    pub target: Vec<f64>,
    pub weight: f64,
}

const FD_JAC_STEP: f64 = 1e-6;

/// Shooting buffer: rolls out the RK4 recursion for a flat control vector
/// and differentiates the discrete objective by a reverse pass.
struct Shoot<'a> {
    system: &'a ControlSystemSpec,
    spec: &'a LagrangianSpec,
    x0: &'a [f64],
    h: f64,
    n: usize,
    d: usize,
    m: usize,
    states: Vec<f64>, // (n+1)·d
    stages: Vec<f64>, // n·3·d: the three off-node RK4 stage points
    scratch: Rk4Scratch,
    xk: Vec<f64>,
}

impl<'a> Shoot<'a> {
    fn new(
        system: &'a ControlSystemSpec,
        spec: &'a LagrangianSpec,
        x0: &'a [f64],
        h: f64,
        n: usize,
    ) -> Self {
        let d = system.state_dim();
        Shoot {
            system,
            spec,
            x0,
            h,
            n,
            d,
            m: system.control_dim(),
            states: vec![0.0; (n + 1) * d],
            stages: vec![0.0; n * 3 * d],
            scratch: Rk4Scratch::new(d),
            xk: vec![0.0; d],
        }
    }

    /// Objective `Σ_k (h/2)[L(x_k,u_k) + L(x_{k+1},u_k)] + μ|x_N − y|²`;
    /// fills `grad` (layout matching `theta`: n×m row-major) when requested.
    /// Per-interval trapezoid with the interval's frozen control keeps every
    /// control at full weight `h`; node-weighted rules would let the
    /// minimizer shift effort onto under-weighted nodes.  Non-finite
    /// rollouts return NaN, which the line search treats as a rejection.
    fn objective(
        &mut self,
        theta: &[f64],
        endpoint: Option<(&[f64], f64)>,
        grad: Option<&mut [f64]>,
    ) -> f64 {
        let (d, m, n, h) = (self.d, self.m, self.n, self.h);
        debug_assert_eq!(theta.len(), n * m);

        // Forward rollout, stage points recorded for the reverse pass.
        self.states[..d].copy_from_slice(self.x0);
        for k in 0..n {
            let u = &theta[k * m..(k + 1) * m];
            self.xk.copy_from_slice(&self.states[k * d..(k + 1) * d]);
            let s = &mut self.scratch;
            self.system.eval_dynamics_into(&self.xk, u, &mut s.k[0]);
            for i in 0..d {
                s.stage[i] = self.xk[i] + 0.5 * h * s.k[0][i];
            }
            self.stages[(k * 3) * d..(k * 3 + 1) * d].copy_from_slice(&s.stage);
            self.system.eval_dynamics_into(&s.stage, u, &mut s.k[1]);
            for i in 0..d {
                s.stage[i] = self.xk[i] + 0.5 * h * s.k[1][i];
            }
            self.stages[(k * 3 + 1) * d..(k * 3 + 2) * d].copy_from_slice(&s.stage);
            self.system.eval_dynamics_into(&s.stage, u, &mut s.k[2]);
            for i in 0..d {
                s.stage[i] = self.xk[i] + h * s.k[2][i];
            }
            self.stages[(k * 3 + 2) * d..(k * 3 + 3) * d].copy_from_slice(&s.stage);
            self.system.eval_dynamics_into(&s.stage, u, &mut s.k[3]);
            let next = &mut self.states[(k + 1) * d..(k + 2) * d];
            for i in 0..d {
                next[i] = self.xk[i]
                    + h / 6.0 * (s.k[0][i] + 2.0 * s.k[1][i] + 2.0 * s.k[2][i] + s.k[3][i]);
            }
            if next.iter().any(|v| !v.is_finite()) {
                if let Some(g) = grad {
                    g.fill(0.0);
                }
                return f64::NAN;
            }
        }

        let mut value = 0.0;
        for k in 0..n {
            let u = &theta[k * m..(k + 1) * m];
            let left = self.spec.eval(&self.states[k * d..(k + 1) * d], u);
            let right = self.spec.eval(&self.states[(k + 1) * d..(k + 2) * d], u);
            value += 0.5 * h * (left + right);
        }
        if let Some((y, mu)) = endpoint {
            let xn = &self.states[n * d..(n + 1) * d];
            value += mu * numerics::dist(xn, y).powi(2);
        }
        let grad = match grad {
            Some(g) => g,
            None => return value,
        };

        // Reverse pass.
        grad.fill(0.0);
        let mut lam = vec![0.0; d];
        let mut xbar = vec![0.0; d];
        let mut sbar = vec![0.0; d];
        let mut ubar = vec![0.0; m];
        let mut kbar = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
        let mut dl_dx = vec![0.0; d];
        let mut dl_du = vec![0.0; m];

        if let Some((y, mu)) = endpoint {
            let xn = &self.states[n * d..(n + 1) * d];
            for i in 0..d {
                lam[i] = 2.0 * mu * (xn[i] - y[i]);
            }
        }

        for k in (0..n).rev() {
            let u = &theta[k * m..(k + 1) * m];
            // Stage points: s1 is the node itself.
            let s1 = &self.states[k * d..(k + 1) * d];
            let s2 = &self.stages[(k * 3) * d..(k * 3 + 1) * d];
            let s3 = &self.stages[(k * 3 + 1) * d..(k * 3 + 2) * d];
            let s4 = &self.stages[(k * 3 + 2) * d..(k * 3 + 3) * d];

            // Right end of interval k rides on node k+1.
            self.cost_gradients(&self.states[(k + 1) * d..(k + 2) * d], u, &mut dl_dx, &mut dl_du);
            for i in 0..d {
                lam[i] += 0.5 * h * dl_dx[i];
            }
            for j in 0..m {
                grad[k * m + j] += 0.5 * h * dl_du[j];
            }

            xbar.copy_from_slice(&lam);
            for i in 0..d {
                kbar[0][i] = h / 6.0 * lam[i];
                kbar[1][i] = h / 3.0 * lam[i];
                kbar[2][i] = h / 3.0 * lam[i];
                kbar[3][i] = h / 6.0 * lam[i];
            }
            ubar.fill(0.0);

            jac_x_transpose(self.system, s4, u, &kbar[3], &mut sbar);
            jac_u_transpose_accumulate(self.system, s4, u, &kbar[3], &mut ubar);
            for i in 0..d {
                xbar[i] += sbar[i];
                kbar[2][i] += h * sbar[i];
            }
            jac_x_transpose(self.system, s3, u, &kbar[2], &mut sbar);
            jac_u_transpose_accumulate(self.system, s3, u, &kbar[2], &mut ubar);
            for i in 0..d {
                xbar[i] += sbar[i];
                kbar[1][i] += 0.5 * h * sbar[i];
            }
            jac_x_transpose(self.system, s2, u, &kbar[1], &mut sbar);
            jac_u_transpose_accumulate(self.system, s2, u, &kbar[1], &mut ubar);
            for i in 0..d {
                xbar[i] += sbar[i];
                kbar[0][i] += 0.5 * h * sbar[i];
            }
            jac_x_transpose(self.system, s1, u, &kbar[0], &mut sbar);
            jac_u_transpose_accumulate(self.system, s1, u, &kbar[0], &mut ubar);
            for i in 0..d {
                xbar[i] += sbar[i];
            }

            self.cost_gradients(s1, u, &mut dl_dx, &mut dl_du);
            for i in 0..d {
                lam[i] = xbar[i] + 0.5 * h * dl_dx[i];
            }
            for j in 0..m {
                grad[k * m + j] += ubar[j] + 0.5 * h * dl_du[j];
            }
        }

        value
    }

    fn cost_gradients(&self, x: &[f64], u: &[f64], dl_dx: &mut [f64], dl_du: &mut [f64]) {
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            let eps = FD_JAC_STEP * (1.0 + x[i].abs());
            xp[i] = x[i] + eps;
            let fp = self.spec.eval(&xp, u);
            xp[i] = x[i] - eps;
            let fm = self.spec.eval(&xp, u);
            xp[i] = x[i];
            dl_dx[i] = (fp - fm) / (2.0 * eps);
        }
        if self.spec.is_quadratic() {
            for (j, g) in dl_du.iter_mut().enumerate() {
                *g = u[j] - self.spec.u_star()[j];
            }
        } else {
            let mut up = u.to_vec();
            for j in 0..u.len() {
                let eps = FD_JAC_STEP * (1.0 + u[j].abs());
                up[j] = u[j] + eps;
                let fp = self.spec.eval(x, &up);
                up[j] = u[j] - eps;
                let fm = self.spec.eval(x, &up);
                up[j] = u[j];
                dl_du[j] = (fp - fm) / (2.0 * eps);
            }
        }
    }
}

/// `out = (∂f/∂x)ᵀ v` at `(x, u)` via central differences, column by column.
fn jac_x_transpose(
    system: &ControlSystemSpec,
    x: &[f64],
    u: &[f64],
    v: &[f64],
    out: &mut [f64],
) {
    let d = x.len();
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; d];
    let mut fm = vec![0.0; d];
    for j in 0..d {
        let eps = FD_JAC_STEP * (1.0 + x[j].abs());
        xp[j] = x[j] + eps;
        system.eval_dynamics_into(&xp, u, &mut fp);
        xp[j] = x[j] - eps;
        system.eval_dynamics_into(&xp, u, &mut fm);
        xp[j] = x[j];
        let mut acc = 0.0;
        for i in 0..d {
            acc += v[i] * (fp[i] - fm[i]) / (2.0 * eps);
        }
        out[j] = acc;
    }
}

/// `out += (∂f/∂u)ᵀ v` at `(x, u)`.  Exact for control-affine and linear
/// kinds, central differences otherwise.
fn jac_u_transpose_accumulate(
    system: &ControlSystemSpec,
    x: &[f64],
    u: &[f64],
    v: &[f64],
    out: &mut [f64],
) {
    let d = x.len();
    match system.kind() {
        SystemKind::DriftlessAffine => {
            let mut col = vec![0.0; d];
            for (j, o) in out.iter_mut().enumerate() {
                system.vector_field_into(j, x, &mut col);
                *o += numerics::dot(v, &col);
            }
        }
        SystemKind::Linear => {
            let (_, b) = system.linear_parts().expect("linear kind");
            for (j, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for i in 0..d {
                    acc += v[i] * b[(i, j)];
                }
                *o += acc;
            }
        }
        SystemKind::Generic => {
            let mut up = u.to_vec();
            let mut fp = vec![0.0; d];
            let mut fm = vec![0.0; d];
            for (j, o) in out.iter_mut().enumerate() {
                let eps = FD_JAC_STEP * (1.0 + u[j].abs());
                up[j] = u[j] + eps;
                system.eval_dynamics_into(x, &up, &mut fp);
                up[j] = u[j] - eps;
                system.eval_dynamics_into(x, &up, &mut fm);
                up[j] = u[j];
                let mut acc = 0.0;
                for i in 0..d {
                    acc += v[i] * (fp[i] - fm[i]) / (2.0 * eps);
                }
                *o += acc;
            }
        }
    }
}

/// Minimizes the running cost over piecewise-constant controls on `n`
/// equal intervals, optionally with a quadratic endpoint penalty, taking
/// the best of `restarts` initializations (the first is `u ≡ u*`, the rest
/// Gaussian perturbations of scale 0.5 around it).  Returns the best
/// trajectory with its running cost — an upper bound on the true infimum.
pub fn direct_minimize(
    system: &ControlSystemSpec,
    spec: &LagrangianSpec,
    x0: &[f64],
    horizon: f64,
    n_intervals: usize,
    endpoint: Option<&Endpoint>,
    restarts: usize,
    seed: u64,
) -> Result<(Trajectory, f64)> {
    let d = system.state_dim();
    let m = system.control_dim();
    assert!(horizon > 0.0 && n_intervals >= 1);
    assert_eq!(spec.state_dim(), d);
    assert_eq!(spec.control_dim(), m);
    if x0.len() != d {
        return Err(Error::Dimension {
            context: "direct_minimize initial state",
            expected: d,
            got: x0.len(),
        });
    }
    if let Some(e) = endpoint {
        if e.target.len() != d {
            return Err(Error::Dimension {
                context: "direct_minimize endpoint target",
                expected: d,
                got: e.target.len(),
            });
        }
        assert!(e.weight > 0.0);
    }

    let n = n_intervals;
    let h = horizon / n as f64;
    let rounds: Vec<Option<(Vec<f64>, f64)>> = match endpoint {
        None => vec![None],
        Some(e) => [0.01, 0.1, 1.0]
            .iter()
            .map(|s| Some((e.target.clone(), s * e.weight)))
            .collect(),
    };
    let opts = DescentOptions::default();
    let base: Vec<f64> = std::iter::repeat(spec.u_star())
        .take(n)
        .flatten()
        .copied()
        .collect();

    let candidates: Vec<(f64, usize, Vec<f64>)> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut shoot = Shoot::new(system, spec, x0, h, n);
            let mut theta = base.clone();
            if r > 0 {
                let mut rng =
                    numerics::seeded_rng(seed.wrapping_add(r as u64).wrapping_mul(0x9E3779B97F4A7C15));
                let normal = Normal::new(0.0, 0.5).expect("valid scale");
                for v in theta.iter_mut() {
                    *v += normal.sample(&mut rng);
                }
            }
            for round in &rounds {
                let ep = round.as_ref().map(|(y, mu)| (y.as_slice(), *mu));
                let mut f =
                    |th: &[f64], g: Option<&mut [f64]>| shoot.objective(th, ep, g);
                let result = numerics::minimize_with_grad(&mut f, &theta, &opts);
                theta = result.x;
            }
            let ep = rounds.last().unwrap().as_ref().map(|(y, mu)| (y.as_slice(), *mu));
            let final_objective = shoot.objective(&theta, ep, None);
            (final_objective, r, theta)
        })
        .collect();

    let best = candidates
        .into_iter()
        .min_by(|a, b| {
            let fa = if a.0.is_finite() { a.0 } else { f64::INFINITY };
            let fb = if b.0.is_finite() { b.0 } else { f64::INFINITY };
            fa.partial_cmp(&fb).unwrap().then(a.1.cmp(&b.1))
        })
        .expect("at least one restart");

    let controls: Vec<Vec<f64>> = best.2.chunks(m).map(<[f64]>::to_vec).collect();
    let grid = uniform_grid(0.0, horizon, n);
    let mut traj = integrate(system, x0, &ControlSignal::Piecewise(&controls), &grid)?;
    let c = cost(spec, &mut traj);
    Ok((traj, c))
}

/// Empirical constants for the energy-based trajectory bounds: the state
/// bound `|γ(s)| ≤ κ(1+|γ(0)|)` and the square-root modulus
/// `|γ(t₂)−γ(t₁)| ≤ C·c_f(1+|γ(0)|)‖u‖₂·|t₂−t₁|^{1/2}`.
///
/// `holder_exponent` is the fitted slope of the max oscillation against the
/// gap width over dyadic gaps; for energy-bounded controls it should not
/// fall below ½ in the limit, and smooth controls give exponents closer
/// to 1.
#[derive(Debug, Clone, Copy)]
pub struct KappaReport {
    pub kappa: f64,
    pub holder_exponent: f64,
    pub holder_constant: f64,
}

/// Measures the constants above over a batch of trajectories (meaningful
/// for driftless systems, where displacement is controlled by `‖u‖₂` alone).
pub fn kappa_report(system: &ControlSystemSpec, trajectories: &[&Trajectory]) -> KappaReport {
    assert!(!trajectories.is_empty());
    let c_f = system.c_f();
    let mut kappa: f64 = 0.0;
    let mut constant: f64 = 0.0;
    let mut gaps = Vec::new();
    let mut oscs = Vec::new();

    for traj in trajectories {
        let x0_factor = 1.0 + norm(&traj.states[0]);
        let zero = vec![0.0; traj.control_dim()];
        let u_l2 = traj.control_energy(&zero).sqrt();
        kappa = kappa.max(traj.max_state_norm() / x0_factor);
        let denom = c_f * x0_factor * u_l2;
        if denom == 0.0 {
            continue;
        }
        let dt = match traj.uniform_dt() {
            Some(dt) => dt,
            None => continue,
        };
        let n = traj.n_intervals();
        let mut shift = 2usize;
        while shift <= n / 2 {
            let gap = shift as f64 * dt;
            let mut osc: f64 = 0.0;
            for k in 0..=(n - shift) {
                osc = osc.max(numerics::dist(&traj.states[k], &traj.states[k + shift]));
            }
            gaps.push(gap);
            oscs.push(osc / denom);
            constant = constant.max(osc / denom / gap.sqrt());
            shift *= 2;
        }
    }

    let (holder_exponent, _) = numerics::fit_power_law(&gaps, &oscs);
    KappaReport {
        kappa,
        holder_exponent,
        holder_constant: constant,
    }
}
