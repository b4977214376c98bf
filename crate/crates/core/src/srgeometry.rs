//! Sub-Riemannian energy and distance: point estimates through penalized
//! trajectory optimization, whole-grid distance fields through min-time
//! value iteration, and the ball-box audit comparing `d_SR` against
//! Euclidean distance on sampled pairs.
//!
//! The energy between two states is the infimum of `∫₀¹ |u|² dt` over
//! horizontal paths joining them in unit time, and the distance is its
//! square root.  Both are estimated from above: the optimizer settles on an
//! admissible control whose endpoint misses the target by at most the
//! penalty residual, and that control's energy is reported.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::hjb::{Boundary, Grid, ValueField};
use crate::lagrangian::{BetaBound, LagrangianSpec};
use crate::numerics::{self, dist, fit_power_law, norm};
use crate::systems::{check_chow, ChowOptions, ControlSystemSpec};
use crate::trajectory::{direct_minimize, Endpoint, Trajectory};
use crate::{Error, Result};

/// Endpoint-penalty weight after continuation.
const ENDPOINT_WEIGHT: f64 = 1e4;
/// Largest acceptable endpoint miss.
const RESIDUAL_TOL: f64 = 1e-3;
const FIELD_TOL: f64 = 1e-6;
const FIELD_MAX_SWEEPS: usize = 20_000;

/// Knobs shared by the distance estimators.
#[derive(Debug, Clone, Copy)]
pub struct SrOptions {
    pub n_intervals: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SrOptions {
    fn default() -> Self {
        SrOptions {
            n_intervals: 32,
            restarts: 4,
            seed: 0x5eed,
        }
    }
}

fn energy_cost(system: &ControlSystemSpec) -> LagrangianSpec {
    LagrangianSpec::quadratic(
        "0",
        system.state_dim(),
        system.control_dim(),
        BetaBound::closed_form("1").expect("constant bound"),
    )
    .expect("zero potential always parses")
}

fn require_driftless(system: &ControlSystemSpec, what: &str) -> Result<()> {
    if !system.is_driftless() {
        return Err(Error::Unsupported(format!(
            "{what} needs a driftless control-affine system, `{}` is not",
            system.name()
        )));
    }
    Ok(())
}

/// Sub-Riemannian energy estimate together with the optimizing path.
///
/// Minimizes `∫₀ᵗ |u|²` (as twice the optimizer's `½|u|²` running cost)
/// under an endpoint penalty driven up to weight `1e4`; errors if the
/// converged path still misses `y` by more than `1e-3`.
pub fn sr_energy_path(
    system: &ControlSystemSpec,
    x: &[f64],
    y: &[f64],
    horizon: f64,
    n_intervals: usize,
    restarts: usize,
    seed: u64,
) -> Result<(f64, Trajectory)> {
    require_driftless(system, "sub-Riemannian energy")?;
    let d = system.state_dim();
    if x.len() != d || y.len() != d {
        return Err(Error::Dimension {
            context: "sr_energy endpoints",
            expected: d,
            got: if x.len() != d { x.len() } else { y.len() },
        });
    }
    let spec = energy_cost(system);
    let endpoint = Endpoint {
        target: y.to_vec(),
        weight: ENDPOINT_WEIGHT,
    };
    let (traj, _) = direct_minimize(
        system,
        &spec,
        x,
        horizon,
        n_intervals,
        Some(&endpoint),
        restarts,
        seed,
    )?;
    let residual = dist(traj.final_state(), y);
    if residual > RESIDUAL_TOL {
        return Err(Error::EndpointResidual {
            residual,
            tolerance: RESIDUAL_TOL,
        });
    }
    Ok((2.0 * traj.cost, traj))
}

/// Unit-horizon sub-Riemannian energy `e_SR(x, y)`.
pub fn sr_energy(
    system: &ControlSystemSpec,
    x: &[f64],
    y: &[f64],
    n_intervals: usize,
    restarts: usize,
    seed: u64,
) -> Result<f64> {
    sr_energy_path(system, x, y, 1.0, n_intervals, restarts, seed).map(|(e, _)| e)
}

/// `d_SR(x, y) = √e_SR(x, y)`.
pub fn sr_distance(
    system: &ControlSystemSpec,
    x: &[f64],
    y: &[f64],
    options: &SrOptions,
) -> Result<f64> {
    sr_energy(system, x, y, options.n_intervals, options.restarts, options.seed)
        .map(f64::sqrt)
}

/// Distance-from-`x0` field by min-time value iteration with unit-speed
/// controls: `d(x) = min over sphere directions of Δ + I[d](x + Δ·f(x,u))`,
/// `d` pinned to zero at the node nearest `x0`, iterated until the
/// sup-change drops below `1e-6`.
pub fn sr_distance_field(
    system: &ControlSystemSpec,
    x0: &[f64],
    grid: &Grid,
) -> Result<ValueField> {
    require_driftless(system, "the distance field")?;
    let d = grid.dim();
    if system.state_dim() != d {
        return Err(Error::Dimension {
            context: "distance-field grid",
            expected: system.state_dim(),
            got: d,
        });
    }
    if !grid.contains(x0) {
        return Err(Error::Unsupported(
            "distance-field source must lie inside the grid".into(),
        ));
    }
    let directions = numerics::sphere_directions(system.control_dim(), 32);
    let count = grid.node_count();

    // Feet are state-independent given the node, so freeze them up front.
    let mut fmax = 0.0f64;
    let mut feet = vec![0.0; count * directions.len() * d];
    {
        let mut x = vec![0.0; d];
        let mut f = vec![0.0; d];
        for n in 0..count {
            grid.coords_into(n, &mut x);
            for (k, u) in directions.iter().enumerate() {
                system.eval_dynamics_into(&x, u, &mut f);
                fmax = fmax.max(norm(&f));
                let slot = (n * directions.len() + k) * d;
                feet[slot..slot + d].copy_from_slice(&f);
            }
        }
    }
    if fmax <= 0.0 {
        return Err(Error::Unsupported(
            "control fields vanish on the whole grid".into(),
        ));
    }
    let hmin = grid.spacing().iter().cloned().fold(f64::INFINITY, f64::min);
    let step = hmin / fmax;
    {
        let mut x = vec![0.0; d];
        for n in 0..count {
            grid.coords_into(n, &mut x);
            for k in 0..directions.len() {
                let slot = (n * directions.len() + k) * d;
                for i in 0..d {
                    feet[slot + i] = x[i] + step * feet[slot + i];
                }
            }
        }
    }

    let pin = grid.nearest_node(x0);
    let mut src = vec![0.0; count];
    let mut dst = vec![0.0; count];
    let n_dirs = directions.len();
    for _sweep in 0..FIELD_MAX_SWEEPS {
        {
            let src_ref = &src;
            let feet_ref = &feet;
            dst.par_iter_mut().enumerate().for_each(|(n, out)| {
                let mut best = f64::INFINITY;
                for k in 0..n_dirs {
                    let slot = (n * n_dirs + k) * d;
                    let v = step
                        + crate::hjb::interp_values(
                            grid,
                            src_ref,
                            &feet_ref[slot..slot + d],
                            Boundary::Clamp,
                        );
                    if v < best {
                        best = v;
                    }
                }
                *out = best;
            });
        }
        dst[pin] = 0.0;
        let change = src
            .iter()
            .zip(&dst)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        std::mem::swap(&mut src, &mut dst);
        if change < FIELD_TOL {
            return Ok(ValueField {
                grid: grid.clone(),
                values: src,
            });
        }
    }
    let residual = src
        .iter()
        .zip(&dst)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Err(Error::IterationLimit {
        limit: FIELD_MAX_SWEEPS,
        residual,
        target: FIELD_TOL,
    })
}

/// Two-sided comparison of `d_SR` with Euclidean distance on `B_R`.
#[derive(Debug, Clone)]
pub struct BallBoxReport {
    pub compact_radius: f64,
    /// Largest bracket-generation degree seen over sampled points.
    pub degree: usize,
    /// Largest constant with `c₁|x−y| ≤ d_SR(x,y)` on every sampled pair.
    pub c1: f64,
    /// Smallest constant with `d_SR(x,y) ≤ c₂|x−y|^{1/degree}` on every
    /// sampled pair.
    pub c2: f64,
    /// Pooled log-log slope of `d_SR` against `|x−y|`.
    pub fitted_exponent: f64,
    /// Largest excess over either fitted bound (nonpositive when the
    /// envelope constants are consistent).
    pub worst_violation: f64,
}

/// Samples `n_pairs` pairs in the ball of radius `R`, estimates `d_SR` for
/// each, and fits the envelope constants of the Hölder equivalence
/// `c₁|x−y| ≤ d_SR ≤ c₂|x−y|^{1/r}` with `r` the largest `check_chow`
/// degree over 50 sampled points.
pub fn ball_box_audit(
    system: &ControlSystemSpec,
    radius: f64,
    n_pairs: usize,
    seed: u64,
) -> Result<BallBoxReport> {
    require_driftless(system, "the ball-box audit")?;
    if !(radius > 0.0) || n_pairs == 0 {
        return Err(Error::Unsupported(
            "ball-box audit needs a positive radius and at least one pair".into(),
        ));
    }
    let d = system.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let degree = {
        let opts = ChowOptions::default();
        let mut worst = 1usize;
        for _ in 0..50 {
            let p = sample_ball(&mut rng, radius, d);
            let report = check_chow(system, &p, &opts)?;
            worst = worst.max(report.degree);
        }
        worst
    };

    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..n_pairs)
        .map(|_| (sample_ball(&mut rng, radius, d), sample_ball(&mut rng, radius, d)))
        .collect();

    // A pair whose optimization stalls is retried with more restarts and
    // dropped if it still misses; the audit reports what converged.
    let distances: Vec<Option<f64>> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, (x, y))| {
            for attempt in 0u64..3 {
                let restarts = 2 + 2 * attempt as usize;
                let pair_seed = seed.wrapping_add(1 + i as u64 + 7919 * attempt);
                if let Ok(e) = sr_energy(system, x, y, 32, restarts, pair_seed) {
                    return Some(e.sqrt());
                }
            }
            None
        })
        .collect();

    let mut c1 = f64::INFINITY;
    let mut c2 = 0.0f64;
    let mut gaps = Vec::with_capacity(n_pairs);
    let mut seps = Vec::with_capacity(n_pairs);
    for ((x, y), dsr) in pairs.iter().zip(&distances) {
        let (sep, dsr) = match dsr {
            Some(v) => (dist(x, y), *v),
            None => continue,
        };
        if sep < 1e-9 {
            continue;
        }
        c1 = c1.min(dsr / sep);
        c2 = c2.max(dsr / sep.powf(1.0 / degree as f64));
        seps.push(sep);
        gaps.push(dsr);
    }
    if seps.len() < 2 {
        return Err(Error::Unsupported(
            "too few pair distances converged to fit the ball-box envelope".into(),
        ));
    }
    let (fitted_exponent, _) = fit_power_law(&seps, &gaps);
    let mut worst_violation = f64::NEG_INFINITY;
    for (sep, dsr) in seps.iter().zip(&gaps) {
        let lower_excess = c1 * sep - dsr;
        let upper_excess = dsr - c2 * sep.powf(1.0 / degree as f64);
        worst_violation = worst_violation.max(lower_excess).max(upper_excess);
    }
    Ok(BallBoxReport {
        compact_radius: radius,
        degree,
        c1,
        c2,
        fitted_exponent,
        worst_violation,
    })
}

fn sample_ball(rng: &mut ChaCha8Rng, radius: f64, d: usize) -> Vec<f64> {
    loop {
        let p: Vec<f64> = (0..d).map(|_| rng.gen_range(-radius..=radius)).collect();
        if norm(&p) <= radius {
            return p;
        }
    }
}
