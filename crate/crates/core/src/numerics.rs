//! Shared numerical building blocks: slice arithmetic, rank computation,
//! quadrature, control meshes, power-law fits, and the first-order descent
//! engine used by every optimizer in the crate.

use nalgebra::DMatrix;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline(always)]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline(always)]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline(always)]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let h = (hi - lo) / (n - 1) as f64;
    let mut v: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();
    v[n - 1] = hi;
    v
}

/// Deterministic RNG used everywhere sampling is needed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Numerical rank: singular values above `rel_tol` times the largest one.
pub fn rank(matrix: &DMatrix<f64>, rel_tol: f64) -> usize {
    if matrix.ncols() == 0 || matrix.nrows() == 0 {
        return 0;
    }
    let sv = matrix.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

/// Integrates nodal values on a uniform grid with spacing `h`.
///
/// Composite Simpson when the interval count is even, trapezoid otherwise.
pub fn integrate_uniform(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let intervals = n - 1;
    if intervals >= 2 && intervals % 2 == 0 {
        let mut acc = values[0] + values[n - 1];
        for (k, v) in values.iter().enumerate().take(n - 1).skip(1) {
            acc += if k % 2 == 1 { 4.0 * v } else { 2.0 * v };
        }
        acc * h / 3.0
    } else {
        let mut acc = 0.5 * (values[0] + values[n - 1]);
        for v in &values[1..n - 1] {
            acc += v;
        }
        acc * h
    }
}

/// Uniform mesh on the closed control ball of the given radius.
///
/// Points come from a `points_per_axis`-per-axis cube grid intersected with
/// the ball, in lexicographic order, followed by `extra` (typically the
/// distinguished control `u*`) if it is not already on the mesh.  The cube
/// grid is symmetrized exactly, so `u` on the mesh implies `-u` on the mesh.
pub fn control_mesh(radius: f64, points_per_axis: usize, m: usize, extra: Option<&[f64]>) -> Vec<Vec<f64>> {
    assert!(m >= 1 && m <= 3, "control meshes support m in 1..=3");
    let p = points_per_axis.max(2);
    let mut axis = linspace(-radius, radius, p);
    for i in 0..p / 2 {
        axis[p - 1 - i] = -axis[i];
    }
    if p % 2 == 1 {
        axis[p / 2] = 0.0;
    }
    let mut mesh = Vec::new();
    let mut idx = vec![0usize; m];
    loop {
        let u: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
        if norm(&u) <= radius * (1.0 + 1e-12) {
            mesh.push(u);
        }
        // odometer increment
        let mut k = m;
        loop {
            if k == 0 {
                break;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < p {
                break;
            }
            idx[k] = 0;
            if k == 0 {
                let mut done_mesh = mesh;
                if let Some(e) = extra {
                    assert_eq!(e.len(), m);
                    if !done_mesh.iter().any(|u| dist(u, e) <= 1e-12) {
                        done_mesh.push(e.to_vec());
                    }
                }
                return done_mesh;
            }
        }
    }
}

/// Roughly equidistributed unit directions in R^m (m = 1, 2, 3).
pub fn sphere_directions(m: usize, n: usize) -> Vec<Vec<f64>> {
    match m {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..n)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                vec![th.cos(), th.sin()]
            })
            .collect(),
        3 => {
            // Fibonacci sphere.
            let phi = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
            (0..n)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let th = phi * k as f64;
                    vec![r * th.cos(), r * th.sin(), z]
                })
                .collect()
        }
        _ => panic!("sphere directions support m in 1..=3, got {m}"),
    }
}

/// Least-squares fit of `y ≈ a * x^p` through the logs.
/// Returns `(p, a)`.  Pairs with non-positive entries are skipped.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(&x, &y)| x > 0.0 && y > 0.0)
        .map(|(&x, &y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len() as f64;
    assert!(n >= 2.0, "power-law fit needs at least two positive samples");
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    assert!(denom.abs() > 1e-300, "degenerate abscissae in power-law fit");
    let p = (n * sxy - sx * sy) / denom;
    let a = ((sy - p * sx) / n).exp();
    (p, a)
}

// --- first-order descent ------------------------------------------------

/// Options for [`minimize`].
#[derive(Debug, Clone)]
pub struct DescentOptions {
    pub max_iterations: usize,
    /// Stop when the best value improves by less than
    /// `rel_decrease * (1 + |best|)` over this many iterations.
    pub stall_window: usize,
    pub rel_decrease: f64,
    pub initial_step: f64,
    /// Central-difference step, scaled by `1 + |x_i|` per coordinate.
    pub fd_step: f64,
}

impl Default for DescentOptions {
    fn default() -> Self {
        DescentOptions {
            max_iterations: 5000,
            stall_window: 20,
            rel_decrease: 1e-8,
            initial_step: 1.0,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DescentResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Minimizes `f` from `x0` by Nesterov-accelerated gradient descent with
/// central-difference gradients, backtracking line search and restart on
/// non-monotone steps.
///
/// Plain steepest descent needs on the order of the condition number in
/// iterations, which is hopeless once quadratic endpoint penalties reach
/// their final weight; the momentum sequence brings that down to its square
/// root while keeping the method derivative-free from the caller's side.
pub fn minimize(f: &mut dyn FnMut(&[f64]) -> f64, x0: &[f64], opts: &DescentOptions) -> DescentResult {
    let evals = std::cell::Cell::new(0usize);
    let fd_step = opts.fd_step;
    let mut xt = x0.to_vec();
    let mut wrapped = |x: &[f64], grad: Option<&mut [f64]>| -> f64 {
        if let Some(g) = grad {
            for i in 0..x.len() {
                let h = fd_step * (1.0 + x[i].abs());
                xt.copy_from_slice(x);
                xt[i] = x[i] + h;
                let fp = f(&xt);
                xt[i] = x[i] - h;
                let fm = f(&xt);
                g[i] = (fp - fm) / (2.0 * h);
            }
            evals.set(evals.get() + 2 * x.len());
        }
        evals.set(evals.get() + 1);
        f(x)
    };
    let mut result = minimize_with_grad(&mut wrapped, x0, opts);
    result.evaluations = evals.get();
    result
}

/// [`minimize`] with a caller-supplied gradient: when the second argument is
/// `Some`, the callback must fill it with `∇f(x)` and still return `f(x)`.
/// An adjoint pass makes this dramatically cheaper than coordinate-wise
/// differences once the dimension is in the hundreds.
pub fn minimize_with_grad(
    f: &mut dyn FnMut(&[f64], Option<&mut [f64]>) -> f64,
    x0: &[f64],
    opts: &DescentOptions,
) -> DescentResult {
    let n = x0.len();
    let mut evals = 0usize;

    let mut x = x0.to_vec();
    evals += 1;
    let mut fx = f(&x, None);
    let mut x_prev = x.clone();
    let mut best = fx;
    let mut best_x = x.clone();
    let mut theta: f64 = 1.0; // Nesterov t_k
    let mut alpha = opts.initial_step;
    let mut grad = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut cand = vec![0.0; n];
    let mut history: Vec<f64> = vec![best];
    let mut iterations = 0;

    for it in 0..opts.max_iterations {
        iterations = it + 1;
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let beta = (theta - 1.0) / theta_next;
        for i in 0..n {
            y[i] = x[i] + beta * (x[i] - x_prev[i]);
        }
        evals += 1;
        let fy = f(&y, Some(&mut grad));
        let gnorm2 = dot(&grad, &grad);
        if gnorm2 == 0.0 {
            break;
        }

        // Backtracking from the adaptive step.
        let mut accepted = false;
        let mut fc = fy;
        for _ in 0..40 {
            for i in 0..n {
                cand[i] = y[i] - alpha * grad[i];
            }
            evals += 1;
            fc = f(&cand, None);
            if fc <= fy - 1e-4 * alpha * gnorm2 {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // Momentum restart at the best known point; if that has already
            // happened and the step is microscopic, settle.
            if alpha < 1e-15 {
                break;
            }
            x_prev.copy_from_slice(&best_x);
            x.copy_from_slice(&best_x);
            fx = best;
            theta = 1.0;
            continue;
        }

        x_prev.copy_from_slice(&x);
        x.copy_from_slice(&cand);
        let f_last = fx;
        fx = fc;
        theta = theta_next;
        alpha = (alpha * 1.3).min(opts.initial_step * 1e3);

        if fx > f_last {
            // Non-monotone momentum step: restart the sequence.
            theta = 1.0;
        }
        if fx < best {
            best = fx;
            best_x.copy_from_slice(&x);
        }
        history.push(best);
        if history.len() > opts.stall_window {
            let prev = history[history.len() - 1 - opts.stall_window];
            if prev - best <= opts.rel_decrease * (1.0 + best.abs()) {
                break;
            }
        }
    }

    DescentResult {
        x: best_x,
        value: best,
        iterations,
        evaluations: evals,
    }
}
