//! The critical constant and its correctors.
//!
//! Two independent numerical routes approach the same number: the
//! finite-horizon average `V_T(x)/T` and the discounted proxy `λ·v_λ(x)`.
//! For costs with a strict minimum the constant is also available in closed
//! form as `min L`, which turns the whole module into a cross-examination:
//! both grid routes are estimated on a probe set, compared against each
//! other on matched pairs `λ = 1/T`, and compared against the closed form.
//! On top of that sit the correctors — limits `χ` of the discounted family
//! after normalization — and the Lax-Oleinik iteration that upgrades `χ` to
//! a genuine fixed point `χ̄` of the semigroup.

use rand::Rng;

use crate::error::{Error, Result};
use crate::hjb::{self, Grid, SolverConfig, ValueField};
use crate::lagrangian::{LagrangianSpec, SampleBox};
use crate::numerics::{self, DescentOptions};
use crate::srgeometry::{self, SrOptions};
use crate::systems::ControlSystemSpec;
use crate::trajectory::{self, ControlSignal, Trajectory};

/// One horizon (or discount rate) evaluated over the probe set.
#[derive(Debug, Clone)]
pub struct ProbeSweep {
    /// `T` for the horizon route, `λ` for the discounted route.
    pub parameter: f64,
    /// `V_T(x)/T` (resp. `λ·v_λ(x)`) per probe, in probe order.
    pub per_probe: Vec<f64>,
    pub sup: f64,
    pub inf: f64,
}

impl ProbeSweep {
    fn new(parameter: f64, per_probe: Vec<f64>) -> Self {
        let sup = per_probe.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let inf = per_probe.iter().copied().fold(f64::INFINITY, f64::min);
        ProbeSweep {
            parameter,
            per_probe,
            sup,
            inf,
        }
    }

    pub fn spread(&self) -> f64 {
        self.sup - self.inf
    }
}

/// Gap between the two routes on one matched pair `λ = 1/T`.
#[derive(Debug, Clone, Copy)]
pub struct TauberianGap {
    pub horizon: f64,
    pub lambda: f64,
    /// `max` over probes of `|λ·v_λ(x) − V_T(x)/T|`.
    pub gap: f64,
}

/// Everything the two estimation routes produce, side by side.
#[derive(Debug, Clone)]
pub struct ErgodicEstimate {
    pub probe_set: Vec<Vec<f64>>,
    pub mane_closed_form: f64,
    pub mane_horizon: Vec<ProbeSweep>,
    pub mane_discounted: Vec<ProbeSweep>,
    /// Filled by [`tauberian_check`].
    pub discrepancies: Vec<TauberianGap>,
}

impl ErgodicEstimate {
    pub fn new(probe_set: Vec<Vec<f64>>, mane_closed_form: f64) -> Self {
        ErgodicEstimate {
            probe_set,
            mane_closed_form,
            mane_horizon: Vec::new(),
            mane_discounted: Vec::new(),
            discrepancies: Vec::new(),
        }
    }
}

/// The default probe set: the center plus each axis at half and full radius,
/// both signs — `4d + 1` points spanning the ball.
pub fn default_probes(radius: f64, d: usize) -> Vec<Vec<f64>> {
    assert!(radius > 0.0 && d >= 1);
    let mut out = vec![vec![0.0; d]];
    for axis in 0..d {
        for frac in [0.5, 1.0] {
            for sign in [-1.0, 1.0] {
                let mut p = vec![0.0; d];
                p[axis] = sign * frac * radius;
                out.push(p);
            }
        }
    }
    out
}

/// The geometric discount sequence used for corrector extraction,
/// `λ_k = 0.4·2^{−k}` for four terms.
pub fn default_lambda_sequence() -> Vec<f64> {
    (0..4).map(|k| 0.4 * 0.5f64.powi(k)).collect()
}

/// The critical constant as `min L`.
///
/// Quadratic costs short-circuit to `L(x*, u*)`.  Anything else is sampled
/// over `sample_box` (controls from the centered cube of its
/// `control_radius`) and the best sample is polished by local descent over
/// the joint `(x, u)` variable.
pub fn mane_closed_form(
    spec: &LagrangianSpec,
    sample_box: &SampleBox,
    n_samples: usize,
    seed: u64,
) -> f64 {
    if spec.is_quadratic() {
        return spec.eval(spec.x_star(), spec.u_star());
    }
    let d = spec.state_dim();
    let m = spec.control_dim();
    assert_eq!(sample_box.lower.len(), d);
    let mut rng = numerics::seeded_rng(seed);
    let r = sample_box.control_radius;
    let mut best_value = f64::INFINITY;
    let mut best = vec![0.0; d + m];
    let mut z = vec![0.0; d + m];
    for _ in 0..n_samples.max(1) {
        for i in 0..d {
            z[i] = rng.gen_range(sample_box.lower[i]..sample_box.upper[i]);
        }
        for j in 0..m {
            z[d + j] = rng.gen_range(-r..r);
        }
        let v = spec.eval(&z[..d], &z[d..]);
        if v < best_value {
            best_value = v;
            best.copy_from_slice(&z);
        }
    }
    let mut f = |zz: &[f64]| spec.eval(&zz[..d], &zz[d..]);
    let refined = numerics::minimize(&mut f, &best, &DescentOptions::default());
    refined.value.min(best_value)
}

fn assert_probes_interior(grid: &Grid, probes: &[Vec<f64>]) {
    assert!(!probes.is_empty(), "empty probe set");
    for p in probes {
        assert_eq!(p.len(), grid.dim(), "probe dimension mismatch");
        for a in 0..grid.dim() {
            assert!(
                p[a] > grid.lower()[a] && p[a] < grid.upper()[a],
                "probe {p:?} not in the grid interior"
            );
        }
    }
}

/// `V_T(x)/T` over the probes for every horizon in `t_list` (strictly
/// increasing, positive), from a single horizon solve with checkpoints.
pub fn estimate_mane_horizon(
    system: &ControlSystemSpec,
    spec: &LagrangianSpec,
    grid: &Grid,
    probes: &[Vec<f64>],
    t_list: &[f64],
    config: &SolverConfig,
) -> Result<Vec<ProbeSweep>> {
    assert_probes_interior(grid, probes);
    assert!(!t_list.is_empty() && t_list[0] > 0.0);
    assert!(t_list.windows(2).all(|w| w[1] > w[0]), "t_list must increase");
    let horizon = *t_list.last().unwrap();
    let sol = hjb::solve_finite_horizon(system, spec, grid, horizon, t_list, config)?;
    Ok(sol
        .checkpoints
        .iter()
        .map(|(t, field)| {
            let per: Vec<f64> = probes.iter().map(|p| field.eval(p) / t).collect();
            ProbeSweep::new(*t, per)
        })
        .collect())
}

/// `λ·v_λ(x)` over the probes for every rate in `lambda_list` (strictly
/// decreasing, positive).  Each solve warm-starts from the previous field,
/// so the list order is the continuation order.
pub fn estimate_mane_discounted(
    system: &ControlSystemSpec,
    spec: &LagrangianSpec,
    grid: &Grid,
    probes: &[Vec<f64>],
    lambda_list: &[f64],
    config: &SolverConfig,
) -> Result<Vec<ProbeSweep>> {
    assert_probes_interior(grid, probes);
    assert!(!lambda_list.is_empty() && lambda_list.iter().all(|&l| l > 0.0));
    assert!(
        lambda_list.windows(2).all(|w| w[1] < w[0]),
        "lambda_list must decrease"
    );
    let mut warm: Option<ValueField> = None;
    let mut out = Vec::with_capacity(lambda_list.len());
    for &lambda in lambda_list {
        let sol = hjb::solve_discounted(system, spec, grid, lambda, config, warm.as_ref())?;
        let per: Vec<f64> = probes.iter().map(|p| lambda * sol.field.eval(p)).collect();
        out.push(ProbeSweep::new(lambda, per));
        warm = Some(sol.field);
    }
    Ok(out)
}

/// Fills `estimate.discrepancies` from the matched pairs `λ = 1/T` and
/// returns the largest gap.  At least one matched pair must be present.
pub fn tauberian_check(estimate: &mut ErgodicEstimate) -> f64 {
    estimate.discrepancies.clear();
    for h in &estimate.mane_horizon {
        for disc in &estimate.mane_discounted {
            if (h.parameter * disc.parameter - 1.0).abs() > 1e-9 {
                continue;
            }
            assert_eq!(h.per_probe.len(), disc.per_probe.len());
            let gap = h
                .per_probe
                .iter()
                .zip(&disc.per_probe)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            estimate.discrepancies.push(TauberianGap {
                horizon: h.parameter,
                lambda: disc.parameter,
                gap,
            });
        }
    }
    assert!(
        !estimate.discrepancies.is_empty(),
        "no matched (T, λ=1/T) pairs to compare"
    );
    estimate
        .discrepancies
        .iter()
        .map(|g| g.gap)
        .fold(0.0f64, f64::max)
}

/// One sampled node pair for the sub-Riemannian regularity of a corrector.
#[derive(Debug, Clone)]
pub struct SrSample {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub distance: f64,
    /// `|χ(a) − χ(b)|`.
    pub gap: f64,
}

/// Output of [`extract_corrector`]: the corrector itself plus the evidence
/// gathered along the way.
#[derive(Debug, Clone)]
pub struct CorrectorExtraction {
    pub chi: ValueField,
    /// The constant subtracted from the cost before solving.
    pub mane: f64,
    pub lambdas: Vec<f64>,
    /// `sup|v_{λ_{k+1}} − v_{λ_k}|` along the continuation.
    pub cauchy_gaps: Vec<f64>,
    /// Whether the gaps are nonincreasing.  Reported, not asserted: only
    /// subsequential convergence is guaranteed in general.
    pub cauchy_decreasing: bool,
    pub sr_lipschitz_samples: Vec<SrSample>,
    /// `max` over samples of `gap / distance`.
    pub lipschitz_constant: f64,
    /// Power-law exponent fitted to `gap` against `distance` (NaN when the
    /// sampled gaps are all negligible).
    pub holder_exponent: f64,
}

/// The fixed-point record for `χ̄`.
#[derive(Debug, Clone)]
pub struct CorrectorReport {
    pub chi: ValueField,
    pub chi_bar: ValueField,
    /// Sup-change per semigroup application, in order.
    pub residuals: Vec<f64>,
    /// Sampled failures of `χ(γ(b)) − χ(γ(a)) ≤ ∫L` in the entry audit.
    pub domination_violations: usize,
    /// Copied from the extraction when available; empty otherwise.
    pub sr_lipschitz_samples: Vec<SrSample>,
    /// Largest `sup|iterate|` seen, the equiboundedness record.
    pub iterate_sup: f64,
    /// `sup|T χ̄ − χ̄|`, measured by one extra application.
    pub fixed_point_gap: f64,
}

/// The constant to subtract so the cost is normalized to `min L = 0`.
fn normalization_constant(spec: &LagrangianSpec, grid: &Grid) -> f64 {
    if spec.is_quadratic() {
        spec.eval(spec.x_star(), spec.u_star())
    } else {
        let sample_box = SampleBox {
            lower: grid.lower().to_vec(),
            upper: grid.upper().to_vec(),
            control_radius: 3.0,
        };
        mane_closed_form(spec, &sample_box, 512, 0x6d61_6e65)
    }
}

fn random_interior_node(grid: &Grid, rng: &mut impl Rng) -> Vec<f64> {
    let d = grid.dim();
    (0..d)
        .map(|a| {
            let n = grid.nodes()[a];
            let lo = n / 5;
            let hi = n - n / 5;
            let idx = rng.gen_range(lo..hi);
            grid.lower()[a] + idx as f64 * grid.spacing()[a]
        })
        .collect()
}

fn sample_sr_regularity(
    system: &ControlSystemSpec,
    chi: &ValueField,
    n_pairs: usize,
    seed: u64,
) -> Vec<SrSample> {
    let grid = &chi.grid;
    let min_h = grid.spacing().iter().copied().fold(f64::INFINITY, f64::min);
    let mut rng = numerics::seeded_rng(seed);
    let mut samples = Vec::new();
    let mut attempts = 0;
    while samples.len() < n_pairs && attempts < 20 * n_pairs {
        attempts += 1;
        let a = random_interior_node(grid, &mut rng);
        let b = random_interior_node(grid, &mut rng);
        if numerics::dist(&a, &b) < 2.0 * min_h {
            continue;
        }
        let opts = SrOptions {
            n_intervals: 24,
            restarts: 3,
            seed: seed.wrapping_add(samples.len() as u64),
        };
        if let Ok(distance) = srgeometry::sr_distance(system, &a, &b, &opts) {
            if distance > 1e-9 {
                let gap = (chi.eval(&a) - chi.eval(&b)).abs();
                samples.push(SrSample { a, b, distance, gap });
            }
        }
    }
    samples
}

/// Extracts a corrector `χ` as the last field of a warm-started discounted
/// continuation, after normalizing the cost (`L − min L`), and reports the
/// Cauchy trend of the family together with sampled sub-Riemannian
/// regularity (driftless systems only; skipped when `χ` is flat).
pub fn extract_corrector(
    system: &ControlSystemSpec,
    spec: &LagrangianSpec,
    grid: &Grid,
    lambda_sequence: &[f64],
    config: &SolverConfig,
) -> Result<CorrectorExtraction> {
    assert!(lambda_sequence.len() >= 2, "need at least two rates");
    assert!(lambda_sequence.iter().all(|&l| l > 0.0));
    assert!(
        lambda_sequence.windows(2).all(|w| w[1] < w[0]),
        "lambda_sequence must decrease"
    );
    let mane = normalization_constant(spec, grid);
    let normalized = spec.shifted(-mane);

    let mut fields: Vec<ValueField> = Vec::with_capacity(lambda_sequence.len());
    for &lambda in lambda_sequence {
        let warm = fields.last();
        let sol = hjb::solve_discounted(system, &normalized, grid, lambda, config, warm)?;
        fields.push(sol.field);
    }
    let cauchy_gaps: Vec<f64> = fields
        .windows(2)
        .map(|w| w[0].sup_distance(&w[1]))
        .collect();
    let cauchy_decreasing = cauchy_gaps.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let chi = fields.pop().expect("nonempty sequence");

    let samples = if system.is_driftless() && chi.sup_abs() > 1e-12 {
        sample_sr_regularity(system, &chi, 6, 0x5eed_c0de)
    } else {
        Vec::new()
    };
    let lipschitz_constant = samples
        .iter()
        .map(|s| s.gap / s.distance)
        .fold(0.0f64, f64::max);
    let fit: (Vec<f64>, Vec<f64>) = samples
        .iter()
        .filter(|s| s.gap > 1e-14)
        .map(|s| (s.distance, s.gap))
        .unzip();
    let holder_exponent = if fit.0.len() >= 2 {
        numerics::fit_power_law(&fit.0, &fit.1).0
    } else {
        f64::NAN
    };

    Ok(CorrectorExtraction {
        chi,
        mane,
        lambdas: lambda_sequence.to_vec(),
        cauchy_gaps,
        cauchy_decreasing,
        sr_lipschitz_samples: samples,
        lipschitz_constant,
        holder_exponent,
    })
}

/// Sampled audit of `χ(γ(b)) − χ(γ(a)) ≤ ∫_a^b L` over short random
/// trajectories through the middle of the grid.  Returns the violation
/// count; discretization noise is absorbed by `tol`.
pub fn audit_domination(
    system: &ControlSystemSpec,
    spec: &LagrangianSpec,
    chi: &ValueField,
    tol: f64,
    trials: usize,
    seed: u64,
) -> Result<usize> {
    let grid = &chi.grid;
    let d = grid.dim();
    let m = system.control_dim();
    let mut rng = numerics::seeded_rng(seed);
    let n = 16;
    let tgrid = trajectory::uniform_grid(0.0, 0.8, n);
    let h = tgrid[1] - tgrid[0];
    let mut violations = 0;
    for _ in 0..trials {
        let x0: Vec<f64> = (0..d)
            .map(|a| {
                let mid = 0.5 * (grid.lower()[a] + grid.upper()[a]);
                let half = 0.3 * (grid.upper()[a] - grid.lower()[a]);
                rng.gen_range(mid - half..mid + half)
            })
            .collect();
        let controls: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..m).map(|_| rng.gen_range(-0.7..0.7)).collect())
            .collect();
        let traj = trajectory::integrate(system, &x0, &ControlSignal::Piecewise(&controls), &tgrid)?;
        let a = rng.gen_range(0..n / 2);
        let b = rng.gen_range(n / 2..=n);
        let mut integral = 0.0;
        for k in a..b {
            let left = spec.eval(&traj.states[k], &controls[k]);
            let right = spec.eval(&traj.states[k + 1], &controls[k]);
            integral += 0.5 * h * (left + right);
        }
        if chi.eval(&traj.states[b]) - chi.eval(&traj.states[a]) > integral + tol {
            violations += 1;
        }
    }
    Ok(violations)
}

/// Iterates the Lax-Oleinik update `t_step` at a time (after normalizing
/// the cost) until the sup-change drops below `config.tolerance` or total
/// time reaches `max_time`, checking the monotone-nondecrease property on
/// the way up.  Entry requires `chi ≥ −tolerance`; domination is sampled
/// and reported rather than enforced.
pub fn lax_oleinik_fixed_point(
    system: &ControlSystemSpec,
    spec: &LagrangianSpec,
    chi: &ValueField,
    config: &SolverConfig,
    t_step: f64,
    max_time: f64,
) -> Result<CorrectorReport> {
    assert!(t_step > 0.0 && max_time >= t_step);
    let tol = config.tolerance;
    let mane = normalization_constant(spec, &chi.grid);
    let normalized = spec.shifted(-mane);

    let chi_min = chi.min();
    if chi_min < -tol {
        return Err(Error::Inconsistent(format!(
            "corrector reaches {chi_min:.3e}, below -tolerance {tol:.1e}"
        )));
    }
    let domination_violations = audit_domination(system, &normalized, chi, tol, 12, 0x0d0_1417)?;

    let steps = ((max_time / t_step) + 1e-9).floor().max(1.0) as usize;
    let mut w = chi.clone();
    let mut residuals = Vec::new();
    let mut iterate_sup = w.sup_abs();
    for _ in 0..steps {
        let next = hjb::lax_oleinik_apply(system, &normalized, &w, t_step, config)?;
        let worst = w
            .values
            .iter()
            .zip(&next.values)
            .map(|(old, new)| old - new)
            .fold(f64::NEG_INFINITY, f64::max);
        if worst > 2.0 * tol {
            return Err(Error::MonotonicityViolated {
                worst,
                allowed: 2.0 * tol,
            });
        }
        let change = w.sup_distance(&next);
        residuals.push(change);
        iterate_sup = iterate_sup.max(next.sup_abs());
        w = next;
        if change < tol {
            break;
        }
    }
    let reapplied = hjb::lax_oleinik_apply(system, &normalized, &w, t_step, config)?;
    let fixed_point_gap = w.sup_distance(&reapplied);

    Ok(CorrectorReport {
        chi: chi.clone(),
        chi_bar: w,
        residuals,
        domination_violations,
        sr_lipschitz_samples: Vec::new(),
        iterate_sup,
        fixed_point_gap,
    })
}

/// Total time a trajectory spends outside the centered ball of `radius`,
/// each interval charged half per endpoint outside.
pub fn excursion_time(traj: &Trajectory, radius: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..traj.n_intervals() {
        let dt = traj.times[k + 1] - traj.times[k];
        let mut outside = 0.0;
        if numerics::norm(&traj.states[k]) > radius {
            outside += 0.5;
        }
        if numerics::norm(&traj.states[k + 1]) > radius {
            outside += 0.5;
        }
        total += dt * outside;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hjb::{Boundary, ControlMeshConfig};
    use crate::lagrangian::BetaBound;

    fn quadratic_spec(g: &str, d: usize, m: usize) -> LagrangianSpec {
        LagrangianSpec::quadratic(g, d, m, BetaBound::closed_form("1").unwrap()).unwrap()
    }

    fn config(dt: f64) -> SolverConfig {
        SolverConfig {
            dt,
            control_mesh: ControlMeshConfig {
                radius: 2.0,
                points_per_axis: 9,
            },
            boundary: Boundary::ExtendLinear,
            tolerance: 1e-3,
            max_iterations: 50_000,
        }
    }

    #[test]
    fn closed_form_is_direct_for_quadratic_costs() {
        let spec = quadratic_spec("x^2 + y^2", 2, 2);
        let sb = SampleBox::centered(2.0, 2);
        assert_eq!(mane_closed_form(&spec, &sb, 10, 1), 0.0);
        // Shifting the cost shifts the constant by the same amount.
        let shifted = spec.shifted(0.7);
        assert!((mane_closed_form(&shifted, &sb, 10, 1) - 0.7).abs() <= 1e-15);
        // A relocated rest point is honored.
        let moved = quadratic_spec("(x - 1)^2", 1, 1).with_x_star(vec![1.0]);
        assert_eq!(mane_closed_form(&moved, &SampleBox::centered(2.0, 1), 10, 1), 0.0);
    }

    #[test]
    fn closed_form_matches_dense_grid_for_generic_costs() {
        let spec = LagrangianSpec::generic(
            |x: &[f64], u: &[f64]| {
                0.5 * u[0] * u[0] + (x[0] * x[0] - 1.0).powi(2)
            },
            1,
            1,
            BetaBound::closed_form("1").unwrap(),
        );
        let sb = SampleBox::centered(2.0, 1);
        let mane = mane_closed_form(&spec, &sb, 400, 9);

        let mut oracle = f64::INFINITY;
        let mut x = -2.0f64;
        while x <= 2.0 {
            oracle = oracle.min((x * x - 1.0).powi(2));
            x += 1e-4;
        }
        assert!(
            (mane - oracle).abs() <= 1e-6,
            "mane {mane} vs dense-grid {oracle}"
        );
    }

    #[test]
    fn horizon_estimates_are_exact_for_constant_cost() {
        let system = ControlSystemSpec::euclidean(1);
        let spec = quadratic_spec("1", 1, 1);
        let grid = Grid::cube(-1.0, 1.0, 11, 1).unwrap();
        let probes = vec![vec![0.0], vec![0.25]];
        let sweeps =
            estimate_mane_horizon(&system, &spec, &grid, &probes, &[0.5, 1.0], &config(0.125))
                .unwrap();
        assert_eq!(sweeps.len(), 2);
        for sweep in &sweeps {
            for v in &sweep.per_probe {
                assert!((v - 1.0).abs() <= 1e-12, "entry {v}");
            }
            // The pathwise lower bound: no estimate dips under min L.
            assert!(sweep.inf >= mane_closed_form(&spec, &SampleBox::centered(1.0, 1), 1, 1) - 1e-9);
        }
    }

    #[test]
    fn probe_at_rest_point_reads_zero() {
        let system = ControlSystemSpec::grushin("x").unwrap();
        let spec = quadratic_spec("x^2 + y^2", 2, 2);
        let grid = Grid::cube(-1.0, 1.0, 11, 2).unwrap();
        let probes = vec![vec![0.0, 0.0]];
        let sweeps =
            estimate_mane_horizon(&system, &spec, &grid, &probes, &[1.0, 2.0], &config(0.1))
                .unwrap();
        for sweep in &sweeps {
            assert!(sweep.per_probe[0].abs() <= 1e-12);
        }
    }

    #[test]
    fn discounted_estimates_trace_the_discrete_rate() {
        let system = ControlSystemSpec::euclidean(1);
        let spec = quadratic_spec("1", 1, 1);
        let grid = Grid::cube(-1.0, 1.0, 11, 1).unwrap();
        let probes = vec![vec![0.0]];
        let sweeps =
            estimate_mane_discounted(&system, &spec, &grid, &probes, &[0.4, 0.2], &config(0.05))
                .unwrap();
        for sweep in &sweeps {
            assert!(
                (sweep.per_probe[0] - 1.0).abs() <= 0.02,
                "λ {} gave {}",
                sweep.parameter,
                sweep.per_probe[0]
            );
        }
    }

    #[test]
    fn discounted_values_obey_the_stay_bound() {
        let system = ControlSystemSpec::grushin("x").unwrap();
        let spec = quadratic_spec("x^2 + y^2", 2, 2);
        let grid = Grid::cube(-1.5, 1.5, 21, 2).unwrap();
        let probes = default_probes(0.9, 2);
        let cfg = config(0.1);
        let sweeps =
            estimate_mane_discounted(&system, &spec, &grid, &probes, &[0.4, 0.2], &cfg).unwrap();
        for sweep in &sweeps {
            let lambda = sweep.parameter;
            let rate = lambda * cfg.dt / (1.0 - (-lambda * cfg.dt).exp());
            for (p, v) in probes.iter().zip(&sweep.per_probe) {
                let g = p[0] * p[0] + p[1] * p[1];
                assert!(
                    *v <= g * rate + 1e-9,
                    "λv = {v} exceeds the stay bound {high} at {p:?}",
                    high = g * rate
                );
            }
        }
    }

    #[test]
    fn tauberian_gap_vanishes_for_constant_cost() {
        let system = ControlSystemSpec::euclidean(1);
        let spec = quadratic_spec("1", 1, 1);
        let grid = Grid::cube(-1.0, 1.0, 11, 1).unwrap();
        let probes = vec![vec![0.0], vec![0.3]];
        let cfg = config(0.05);
        let mut estimate = ErgodicEstimate::new(
            probes.clone(),
            mane_closed_form(&spec, &SampleBox::centered(1.0, 1), 1, 1),
        );
        estimate.mane_horizon =
            estimate_mane_horizon(&system, &spec, &grid, &probes, &[2.0, 5.0], &cfg).unwrap();
        estimate.mane_discounted =
            estimate_mane_discounted(&system, &spec, &grid, &probes, &[0.5, 0.2], &cfg).unwrap();
        let max_gap = tauberian_check(&mut estimate);
        assert_eq!(estimate.discrepancies.len(), 2);
        assert!(max_gap <= 0.02, "gap {max_gap}");
        let g0 = estimate.discrepancies[0].gap; // (T=2, λ=0.5)
        let g1 = estimate.discrepancies[1].gap; // (T=5, λ=0.2)
        assert!(g1 <= g0 + 1e-12, "gap trend {g0} -> {g1}");
    }

    #[test]
    fn grushin_estimates_converge_and_agree() {
        let system = ControlSystemSpec::grushin("x").unwrap();
        let spec = quadratic_spec("x^2 + y^2", 2, 2);
        let grid = Grid::cube(-1.5, 1.5, 21, 2).unwrap();
        let probes = default_probes(0.75, 2);
        let cfg = config(0.1);

        let mut estimate = ErgodicEstimate::new(
            probes.clone(),
            mane_closed_form(&spec, &SampleBox::centered(1.5, 2), 1, 1),
        );
        assert_eq!(estimate.mane_closed_form, 0.0);
        estimate.mane_horizon =
            estimate_mane_horizon(&system, &spec, &grid, &probes, &[5.0, 20.0], &cfg).unwrap();
        estimate.mane_discounted = estimate_mane_discounted(
            &system,
            &spec,
            &grid,
            &probes,
            &[0.4, 0.2, 0.1, 0.05],
            &cfg,
        )
        .unwrap();

        let at_20 = &estimate.mane_horizon[1];
        assert!(at_20.sup <= 0.15, "V_20/20 sup {}", at_20.sup);
        assert!(at_20.inf >= -1e-12);
        // Uniformity over the ball: the spread narrows with the horizon.
        assert!(
            estimate.mane_horizon[1].spread() <= estimate.mane_horizon[0].spread() + 1e-9,
            "spread {} -> {}",
            estimate.mane_horizon[0].spread(),
            estimate.mane_horizon[1].spread()
        );
        let smallest = estimate.mane_discounted.last().unwrap();
        assert!(smallest.sup <= 0.15, "λv sup {}", smallest.sup);

        let max_gap = tauberian_check(&mut estimate);
        assert_eq!(estimate.discrepancies.len(), 2);
        assert!(max_gap <= 0.1, "tauberian gap {max_gap}");
        let g0 = estimate.discrepancies[0].gap;
        let g1 = estimate.discrepancies[1].gap;
        assert!(g1 <= g0 + 1e-9, "gap trend {g0} -> {g1}");
    }

    #[test]
    fn corrector_is_zero_for_pure_energy() {
        let system = ControlSystemSpec::grushin("x").unwrap();
        let spec = quadratic_spec("0", 2, 2);
        let grid = Grid::cube(-1.0, 1.0, 11, 2).unwrap();
        let ext = extract_corrector(
            &system,
            &spec,
            &grid,
            &default_lambda_sequence(),
            &config(0.1),
        )
        .unwrap();
        assert!(ext.chi.sup_abs() <= 1e-12);
        assert!(ext.cauchy_gaps.iter().all(|&g| g <= 1e-12));
        assert!(ext.cauchy_decreasing);
        assert!(ext.sr_lipschitz_samples.is_empty());
        assert_eq!(ext.lipschitz_constant, 0.0);
        assert!(ext.holder_exponent.is_nan());
        assert_eq!(ext.mane, 0.0);
    }

    #[test]
    fn grushin_corrector_pipeline() {
        let system = ControlSystemSpec::grushin("x").unwrap();
        let spec = quadratic_spec("x^2 + y^2", 2, 2);
        let grid = Grid::cube(-1.0, 1.0, 21, 2).unwrap();
        let cfg = config(0.1);
        let ext =
            extract_corrector(&system, &spec, &grid, &default_lambda_sequence(), &cfg).unwrap();

        assert!(ext.chi.min() >= -1e-12, "chi min {}", ext.chi.min());
        assert!(ext.chi.eval(&[0.0, 0.0]).abs() <= 1e-12);
        assert_eq!(ext.cauchy_gaps.len(), 3);
        assert_eq!(ext.sr_lipschitz_samples.len(), 6);
        assert!(ext.lipschitz_constant.is_finite() && ext.lipschitz_constant > 0.0);
        assert!(ext.lipschitz_constant < 100.0);
        assert!(ext.holder_exponent.is_finite());

        // Consistency of the extracted field under one scheme step.
        let residual = hjb::scheme_residual(&system, &spec, &ext.chi, &cfg).unwrap();
        assert!(residual.sup <= 5.0 * cfg.dt, "residual {}", residual.sup);

        // Upgrade to a fixed point.
        let report =
            lax_oleinik_fixed_point(&system, &spec, &ext.chi, &cfg, 0.5, 20.0).unwrap();
        assert_eq!(report.domination_violations, 0);
        assert!(
            report.fixed_point_gap <= cfg.tolerance,
            "gap {}",
            report.fixed_point_gap
        );
        let worst_drop = report
            .chi
            .values
            .iter()
            .zip(&report.chi_bar.values)
            .map(|(c, cb)| c - cb)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(worst_drop <= cfg.tolerance, "χ̄ dips {worst_drop} under χ");
        assert!(report.iterate_sup.is_finite());
        assert!(!report.residuals.is_empty());

        // A vertical shift of a fixed point is again a fixed point.
        let mut shifted = report.chi_bar.clone();
        for v in &mut shifted.values {
            *v += 0.35;
        }
        let reapplied = hjb::lax_oleinik_apply(&system, &spec, &shifted, 0.5, &cfg).unwrap();
        let gap_shifted = shifted.sup_distance(&reapplied);
        assert!(
            gap_shifted <= report.fixed_point_gap + 1e-9,
            "shifted gap {gap_shifted} vs {}",
            report.fixed_point_gap
        );
    }

    #[test]
    fn fixed_point_of_zero_corrector_is_zero() {
        let system = ControlSystemSpec::grushin("x").unwrap();
        let spec = quadratic_spec("0", 2, 2);
        let grid = Grid::cube(-1.0, 1.0, 11, 2).unwrap();
        let chi = ValueField::constant(&grid, 0.0);
        let report =
            lax_oleinik_fixed_point(&system, &spec, &chi, &config(0.1), 0.5, 10.0).unwrap();
        assert!(report.chi_bar.sup_abs() <= 1e-15);
        assert!(report.fixed_point_gap <= 1e-15);
        assert_eq!(report.residuals.len(), 1);
        assert_eq!(report.domination_violations, 0);
    }

    #[test]
    fn spike_corrector_violates_monotonicity() {
        let system = ControlSystemSpec::grushin("x").unwrap();
        let spec = quadratic_spec("x^2 + y^2", 2, 2);
        let grid = Grid::cube(-1.0, 1.0, 11, 2).unwrap();
        let mut chi = ValueField::constant(&grid, 0.0);
        let spike = chi.grid.nearest_node(&[0.2, 0.2]);
        chi.values[spike] = 5.0;
        match lax_oleinik_fixed_point(&system, &spec, &chi, &config(0.1), 0.5, 10.0) {
            Err(Error::MonotonicityViolated { worst, allowed }) => {
                assert!(worst > allowed);
            }
            other => panic!("expected a monotonicity error, got {other:?}"),
        }
    }

    #[test]
    fn excursion_time_outside_compact_is_stable() {
        let system = ControlSystemSpec::grushin("x").unwrap();
        let spec = quadratic_spec("x^2 + y^2", 2, 2);
        let grid = Grid::cube(-2.0, 2.0, 41, 2).unwrap();
        let cfg = config(0.1);
        let x0 = [1.3, 1.2];
        let m_at = |horizon: f64| {
            let traj =
                hjb::optimal_trajectory_finite(&system, &spec, &grid, horizon, &cfg, &x0, 16)
                    .unwrap();
            excursion_time(&traj, 0.8)
        };
        let m_short = m_at(3.0);
        let m_long = m_at(6.0);
        assert!(m_short > 0.0, "start lies outside the ball");
        assert!(
            m_long <= 1.2 * m_short + 1e-9,
            "excursion grew: {m_short} -> {m_long}"
        );
    }

    #[test]
    fn default_probe_layout_spans_the_ball() {
        let probes = default_probes(1.0, 2);
        assert_eq!(probes.len(), 9);
        let mut norms: Vec<f64> = probes.iter().map(|p| numerics::norm(p)).collect();
        norms.sort_by(f64::total_cmp);
        assert_eq!(norms[0], 0.0);
        assert!(norms[1..5].iter().all(|&n| n == 0.5));
        assert!(norms[5..].iter().all(|&n| n == 1.0));
        assert_eq!(default_probes(2.0, 3).len(), 13);
    }
}
