//! Control systems `γ'(t) = f(γ(t), u(t))` and their controllability
//! structure.
//!
//! Three shapes of dynamics are supported:
//!
//! * **driftless affine** `f(x, u) = Σ u_i f_i(x)`, the sub-Riemannian case;
//!   built-ins are the Heisenberg group, the Grushin plane with a polynomial
//!   weight `φ`, and the trivial Euclidean system `f_i = e_i`;
//! * **linear** `f(x, u) = A x + B u`, kept as explicit matrices so the
//!   Kalman rank check is exact;
//! * **generic** — an arbitrary closure, treated as a black box.
//!
//! Lie brackets are computed from field evaluations alone, with
//! central-difference Jacobians:
//!
//! ```text
//!   [X, Y](x) = DY(x) X(x) − DX(x) Y(x) + O(h²).
//! ```
//!
//! The filtration `Δ¹ = span{f_i}`, `Δ^{s+1} = Δ^s + [Δ¹, Δ^s]` is evaluated
//! pointwise by nesting that formula; `check_chow` reports the smallest
//! degree at which the filtration reaches full rank (the degree of
//! nonholonomy), which later drives the ball-box exponent audit.

use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::expr::Expr;
use crate::numerics::{self, norm};
use crate::{Error, Result};

/// Coordinate names used by the expression grammar for states in `d ≤ 3`.
pub const STATE_VARS: [&str; 3] = ["x", "y", "z"];

/// Variable names for a `d`-dimensional state.
pub fn state_vars(d: usize) -> Vec<String> {
    if d <= 3 {
        STATE_VARS[..d].iter().map(|s| s.to_string()).collect()
    } else {
        (1..=d).map(|i| format!("x{i}")).collect()
    }
}

type GenericFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
enum Dynamics {
    Euclidean {
        dim: usize,
    },
    Heisenberg,
    /// Grushin-type plane: `f_1 = (1, 0)`, `f_2 = (0, φ(x))` with `φ` a
    /// univariate polynomial stored as coefficients (lowest degree first).
    Grushin {
        phi: Vec<f64>,
        phi_source: String,
    },
    Linear {
        a: DMatrix<f64>,
        b: DMatrix<f64>,
    },
    Generic {
        dim: usize,
        controls: usize,
        f: GenericFn,
    },
}

/// Discriminates how the dynamics enter the solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    Generic,
    DriftlessAffine,
    Linear,
}

/// A control system together with its declared structural constants.
///
/// `c_f` is the declared Lipschitz/growth constant: the audits check
/// `|f(x,u) − f(y,u)| ≤ c_f (1+|u|) |x−y|` and
/// `|f(x,u)| ≤ c_f (1+|u|) (1+|x|)` by sampling; it is an assumption made by
/// the user, not something fitted from data.  `u_star` is the distinguished
/// control at which the running cost attains its minimum (zero for driftless
/// systems).
#[derive(Clone)]
pub struct ControlSystemSpec {
    name: String,
    dynamics: Dynamics,
    c_f: f64,
    u_star: Vec<f64>,
}

impl fmt::Debug for ControlSystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlSystemSpec")
            .field("name", &self.name)
            .field("kind", &self.kind())
            .field("d", &self.state_dim())
            .field("m", &self.control_dim())
            .field("c_f", &self.c_f)
            .field("u_star", &self.u_star)
            .finish()
    }
}

impl ControlSystemSpec {
    // --- constructors ---------------------------------------------------

    /// Heisenberg group: `ẋ = u`, `ẏ = v`, `ż = u y − v x`.
    pub fn heisenberg() -> Self {
        ControlSystemSpec {
            name: "heisenberg".into(),
            dynamics: Dynamics::Heisenberg,
            c_f: 1.0,
            u_star: vec![0.0; 2],
        }
    }

    /// Grushin-type plane `ẋ = u`, `ẏ = φ(x) v` with polynomial `φ`.
    pub fn grushin(phi_source: &str) -> Result<Self> {
        let expr = Expr::parse(phi_source, &["x"])?;
        let poly = expr.to_polynomial().ok_or_else(|| {
            Error::Expr(format!(
                "grushin weight `{phi_source}` must be a polynomial in x"
            ))
        })?;
        let phi = poly
            .univariate_coeffs()
            .expect("single-variable polynomial");
        Ok(ControlSystemSpec {
            name: format!("grushin({phi_source})"),
            dynamics: Dynamics::Grushin {
                phi,
                phi_source: phi_source.to_string(),
            },
            c_f: 1.0,
            u_star: vec![0.0; 2],
        })
    }

    /// Trivial system `ẋ = u` on `R^d`.
    pub fn euclidean(dim: usize) -> Self {
        assert!(dim >= 1);
        ControlSystemSpec {
            name: format!("euclidean({dim})"),
            dynamics: Dynamics::Euclidean { dim },
            c_f: 1.0,
            u_star: vec![0.0; dim],
        }
    }

    /// Linear system `ẋ = A x + B u`.
    pub fn linear(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension {
                context: "linear system matrix A (must be square)",
                expected: a.nrows(),
                got: a.ncols(),
            });
        }
        if b.nrows() != a.nrows() {
            return Err(Error::Dimension {
                context: "linear system matrix B rows",
                expected: a.nrows(),
                got: b.nrows(),
            });
        }
        let m = b.ncols();
        let gain = |m: &DMatrix<f64>| m.iter().map(|v| v.abs()).fold(0.0_f64, f64::max) * m.ncols() as f64;
        let c_f = gain(&a).max(gain(&b)).max(1.0);
        Ok(ControlSystemSpec {
            name: "linear".into(),
            dynamics: Dynamics::Linear { a, b },
            c_f,
            u_star: vec![0.0; m],
        })
    }

    /// Double integrator: position/velocity state, acceleration control.
    pub fn double_integrator() -> Self {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let mut s = Self::linear(a, b).expect("static dimensions");
        s.name = "double-integrator".into();
        s
    }

    /// Harmonic oscillator with forcing control.
    pub fn harmonic_oscillator() -> Self {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let mut s = Self::linear(a, b).expect("static dimensions");
        s.name = "harmonic-oscillator".into();
        s
    }

    /// A black-box system given by a closure writing `f(x, u)` into `out`.
    pub fn generic<F>(name: &str, dim: usize, controls: usize, c_f: f64, f: F) -> Self
    where
        F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        ControlSystemSpec {
            name: name.into(),
            dynamics: Dynamics::Generic {
                dim,
                controls,
                f: Arc::new(f),
            },
            c_f,
            u_star: vec![0.0; controls],
        }
    }

    pub fn with_c_f(mut self, c_f: f64) -> Self {
        self.c_f = c_f;
        self
    }

    pub fn with_u_star(mut self, u_star: Vec<f64>) -> Self {
        assert_eq!(u_star.len(), self.control_dim());
        self.u_star = u_star;
        self
    }

    // --- accessors ------------------------------------------------------

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        match &self.dynamics {
            Dynamics::Euclidean { dim } => *dim,
            Dynamics::Heisenberg => 3,
            Dynamics::Grushin { .. } => 2,
            Dynamics::Linear { a, .. } => a.nrows(),
            Dynamics::Generic { dim, .. } => *dim,
        }
    }

    pub fn control_dim(&self) -> usize {
        match &self.dynamics {
            Dynamics::Euclidean { dim } => *dim,
            Dynamics::Heisenberg => 2,
            Dynamics::Grushin { .. } => 2,
            Dynamics::Linear { b, .. } => b.ncols(),
            Dynamics::Generic { controls, .. } => *controls,
        }
    }

    pub fn kind(&self) -> SystemKind {
        match &self.dynamics {
            Dynamics::Euclidean { .. } | Dynamics::Heisenberg | Dynamics::Grushin { .. } => {
                SystemKind::DriftlessAffine
            }
            Dynamics::Linear { .. } => SystemKind::Linear,
            Dynamics::Generic { .. } => SystemKind::Generic,
        }
    }

    pub fn is_driftless(&self) -> bool {
        self.kind() == SystemKind::DriftlessAffine
    }

    pub fn c_f(&self) -> f64 {
        self.c_f
    }

    pub fn u_star(&self) -> &[f64] {
        &self.u_star
    }

    pub fn linear_parts(&self) -> Option<(&DMatrix<f64>, &DMatrix<f64>)> {
        match &self.dynamics {
            Dynamics::Linear { a, b } => Some((a, b)),
            _ => None,
        }
    }

    /// The Grushin weight source, when this is a Grushin system.
    pub fn grushin_phi(&self) -> Option<&str> {
        match &self.dynamics {
            Dynamics::Grushin { phi_source, .. } => Some(phi_source),
            _ => None,
        }
    }

    // --- dynamics evaluation --------------------------------------------

    /// Writes `f(x, u)` into `out` without allocating.  Hot path.
    #[inline]
    pub fn eval_dynamics_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.state_dim());
        debug_assert_eq!(u.len(), self.control_dim());
        debug_assert_eq!(out.len(), self.state_dim());
        match &self.dynamics {
            Dynamics::Euclidean { .. } => out.copy_from_slice(u),
            Dynamics::Heisenberg => {
                out[0] = u[0];
                out[1] = u[1];
                out[2] = u[0] * x[1] - u[1] * x[0];
            }
            Dynamics::Grushin { phi, .. } => {
                out[0] = u[0];
                out[1] = horner(phi, x[0]) * u[1];
            }
            Dynamics::Linear { a, b } => {
                let d = a.nrows();
                let m = b.ncols();
                for i in 0..d {
                    let mut acc = 0.0;
                    for j in 0..d {
                        acc += a[(i, j)] * x[j];
                    }
                    for j in 0..m {
                        acc += b[(i, j)] * u[j];
                    }
                    out[i] = acc;
                }
            }
            Dynamics::Generic { f, .. } => f(x, u, out),
        }
    }

    /// Returns `f(x, u)` with dimension checking.
    pub fn eval_dynamics(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.state_dim() {
            return Err(Error::Dimension {
                context: "eval_dynamics state",
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        if u.len() != self.control_dim() {
            return Err(Error::Dimension {
                context: "eval_dynamics control",
                expected: self.control_dim(),
                got: u.len(),
            });
        }
        let mut out = vec![0.0; self.state_dim()];
        self.eval_dynamics_into(x, u, &mut out);
        Ok(out)
    }

    /// Writes the `i`-th control vector field `f_i(x)` into `out`
    /// (driftless systems only).
    pub fn vector_field_into(&self, i: usize, x: &[f64], out: &mut [f64]) {
        debug_assert!(self.is_driftless());
        match &self.dynamics {
            Dynamics::Euclidean { dim } => {
                out.fill(0.0);
                debug_assert!(i < *dim);
                out[i] = 1.0;
            }
            Dynamics::Heisenberg => match i {
                0 => {
                    out[0] = 1.0;
                    out[1] = 0.0;
                    out[2] = x[1];
                }
                1 => {
                    out[0] = 0.0;
                    out[1] = 1.0;
                    out[2] = -x[0];
                }
                _ => panic!("heisenberg has two control fields"),
            },
            Dynamics::Grushin { phi, .. } => match i {
                0 => {
                    out[0] = 1.0;
                    out[1] = 0.0;
                }
                1 => {
                    out[0] = 0.0;
                    out[1] = horner(phi, x[0]);
                }
                _ => panic!("grushin has two control fields"),
            },
            _ => panic!("vector fields are only defined for driftless systems"),
        }
    }

    /// Writes the field matrix `F(x) = [f_1(x) | … | f_m(x)]` column-major
    /// into `out` (length `d·m`).  Driftless systems only.
    pub fn field_matrix_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.state_dim();
        let m = self.control_dim();
        debug_assert_eq!(out.len(), d * m);
        for j in 0..m {
            self.vector_field_into(j, x, &mut out[j * d..(j + 1) * d]);
        }
    }

    /// The `i`-th control field as a closure, for bracket computations.
    pub fn field_closure(&self, i: usize) -> Result<impl Fn(&[f64], &mut [f64]) + '_> {
        if !self.is_driftless() {
            return Err(Error::Unsupported(format!(
                "system `{}` is not driftless affine; control vector fields are undefined",
                self.name
            )));
        }
        if i >= self.control_dim() {
            return Err(Error::Dimension {
                context: "field index",
                expected: self.control_dim(),
                got: i,
            });
        }
        Ok(move |x: &[f64], out: &mut [f64]| self.vector_field_into(i, x, out))
    }

    /// Exact Lie bracket `[f_i, f_j]` for the built-in driftless systems,
    /// used as an oracle for the finite-difference version.
    pub fn exact_bracket(&self, i: usize, j: usize, x: &[f64]) -> Option<Vec<f64>> {
        if i == j {
            return Some(vec![0.0; self.state_dim()]);
        }
        let sign = if i < j { 1.0 } else { -1.0 };
        match &self.dynamics {
            Dynamics::Euclidean { dim } => Some(vec![0.0; *dim]),
            // [X1, X2] = DX2·X1 − DX1·X2 = (0,0,−1) − (0,0,1) = (0,0,−2)
            Dynamics::Heisenberg => Some(vec![0.0, 0.0, -2.0 * sign]),
            Dynamics::Grushin { phi, .. } => {
                let dphi = derivative(phi);
                Some(vec![0.0, sign * horner(&dphi, x[0])])
            }
            _ => None,
        }
    }

    // --- structural audits ----------------------------------------------

    /// Samples the Lipschitz and growth quotients of `f` over a box of the
    /// given radius, returning the worst quotients seen.  The declared `c_f`
    /// should dominate both.
    pub fn audit_f_bounds(&self, radius: f64, samples: usize, seed: u64) -> FBoundsAudit {
        let d = self.state_dim();
        let m = self.control_dim();
        let mut rng = numerics::seeded_rng(seed);
        let mut fx = vec![0.0; d];
        let mut fy = vec![0.0; d];
        let mut lipschitz: f64 = 0.0;
        let mut growth: f64 = 0.0;
        for _ in 0..samples {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-radius..radius)).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-radius..radius)).collect();
            let u: Vec<f64> = (0..m).map(|_| rng.gen_range(-radius..radius)).collect();
            self.eval_dynamics_into(&x, &u, &mut fx);
            self.eval_dynamics_into(&y, &u, &mut fy);
            let un = norm(&u);
            let sep = numerics::dist(&x, &y);
            if sep > 1e-9 {
                lipschitz = lipschitz.max(numerics::dist(&fx, &fy) / ((1.0 + un) * sep));
            }
            growth = growth.max(norm(&fx) / ((1.0 + un) * (1.0 + norm(&x))));
        }
        FBoundsAudit { lipschitz, growth }
    }
}

/// Worst sampled quotients for the Lipschitz and growth bounds on `f`.
#[derive(Debug, Clone, Copy)]
pub struct FBoundsAudit {
    pub lipschitz: f64,
    pub growth: f64,
}

#[inline(always)]
fn horner(coeffs: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for &c in coeffs.iter().rev() {
        acc = acc * x + c;
    }
    acc
}

fn derivative(coeffs: &[f64]) -> Vec<f64> {
    if coeffs.len() <= 1 {
        return vec![0.0];
    }
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, c)| k as f64 * c)
        .collect()
}

// --- Lie brackets -------------------------------------------------------

/// `[X, Y](x) = DY(x) X(x) − DX(x) Y(x)`, with the Jacobians approximated by
/// central differences of step `h`.  The error is `O(h²)` for smooth fields.
pub fn lie_bracket<X, Y>(x_field: &X, y_field: &Y, point: &[f64], h: f64) -> Vec<f64>
where
    X: Fn(&[f64], &mut [f64]) + ?Sized,
    Y: Fn(&[f64], &mut [f64]) + ?Sized,
{
    assert!(h > 0.0);
    let d = point.len();
    let mut x_val = vec![0.0; d];
    let mut y_val = vec![0.0; d];
    x_field(point, &mut x_val);
    y_field(point, &mut y_val);

    let mut out = vec![0.0; d];
    let mut shifted = point.to_vec();
    let mut plus = vec![0.0; d];
    let mut minus = vec![0.0; d];
    for j in 0..d {
        let pj = point[j];
        shifted[j] = pj + h;
        y_field(&shifted, &mut plus);
        shifted[j] = pj - h;
        y_field(&shifted, &mut minus);
        for k in 0..d {
            out[k] += (plus[k] - minus[k]) / (2.0 * h) * x_val[j];
        }
        shifted[j] = pj + h;
        x_field(&shifted, &mut plus);
        shifted[j] = pj - h;
        x_field(&shifted, &mut minus);
        for k in 0..d {
            out[k] -= (plus[k] - minus[k]) / (2.0 * h) * y_val[j];
        }
        shifted[j] = pj;
    }
    out
}

/// Convenience wrapper: bracket of two control fields of a driftless system.
pub fn system_bracket(
    system: &ControlSystemSpec,
    i: usize,
    j: usize,
    point: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    let fi = system.field_closure(i)?;
    let fj = system.field_closure(j)?;
    Ok(lie_bracket(&fi, &fj, point, h))
}

// --- Chow / LARC --------------------------------------------------------

/// Options for [`check_chow`].
#[derive(Debug, Clone, Copy)]
pub struct ChowOptions {
    pub max_degree: usize,
    pub h: f64,
    pub rank_tol: f64,
}

impl Default for ChowOptions {
    fn default() -> Self {
        ChowOptions {
            max_degree: 4,
            h: 1e-4,
            rank_tol: 1e-8,
        }
    }
}

/// Pointwise bracket-generation report.
#[derive(Debug, Clone)]
pub struct ChowReport {
    pub point: Vec<f64>,
    /// Whether the filtration reaches rank `d` by `max_degree`.
    pub holds: bool,
    /// Smallest spanning degree when `holds`, otherwise the `max_degree`
    /// that was exhausted.
    pub degree: usize,
    /// `rank(Δ^s(x))` for `s = 1..=degree`.
    pub basis_ranks: Vec<usize>,
}

/// Evaluates the Lie-algebra rank condition at `x`.
///
/// Words of bracket depth `s+1` are formed as `[f_i, w]` with `w` ranging
/// over the depth-`s` words, which realizes `Δ^{s+1} = Δ^s + [Δ¹, Δ^s]`.
/// All words are evaluated at `x` and the rank of the accumulated column set
/// is measured through singular values above `rank_tol` (relative to the
/// largest).
pub fn check_chow(
    system: &ControlSystemSpec,
    x: &[f64],
    opts: &ChowOptions,
) -> Result<ChowReport> {
    if !system.is_driftless() {
        return Err(Error::Unsupported(format!(
            "check_chow requires a driftless affine system, `{}` is not",
            system.name()
        )));
    }
    if x.len() != system.state_dim() {
        return Err(Error::Dimension {
            context: "check_chow point",
            expected: system.state_dim(),
            got: x.len(),
        });
    }
    let m = system.control_dim();
    let leaves: Vec<Field<'_>> = (0..m)
        .map(|i| {
            let f: Field<'_> = Rc::new(move |p: &[f64], out: &mut [f64]| {
                system.vector_field_into(i, p, out)
            });
            f
        })
        .collect();
    Ok(check_chow_fields(leaves, x, opts))
}

/// A black-box vector field used by the bracket-generation machinery.
pub type Field<'a> = Rc<dyn Fn(&[f64], &mut [f64]) + 'a>;

/// [`check_chow`] on an explicit list of fields.
pub fn check_chow_fields(leaves: Vec<Field<'_>>, x: &[f64], opts: &ChowOptions) -> ChowReport {
    assert!(opts.max_degree >= 1);
    assert!(!leaves.is_empty());
    let d = x.len();

    let mut columns: Vec<f64> = Vec::new();
    let mut ncols = 0usize;
    let mut basis_ranks = Vec::new();
    let mut level: Vec<Field<'_>> = leaves.clone();
    let h = opts.h;

    for degree in 1..=opts.max_degree {
        let mut val = vec![0.0; d];
        for w in &level {
            w(x, &mut val);
            columns.extend_from_slice(&val);
            ncols += 1;
        }
        let matrix = DMatrix::from_column_slice(d, ncols, &columns);
        let rank = numerics::rank(&matrix, opts.rank_tol);
        basis_ranks.push(rank);
        if rank == d {
            return ChowReport {
                point: x.to_vec(),
                holds: true,
                degree,
                basis_ranks,
            };
        }
        if degree == opts.max_degree {
            break;
        }
        // Next level: bracket every leaf against every current word.
        let mut next: Vec<Field<'_>> = Vec::with_capacity(leaves.len() * level.len());
        for leaf in &leaves {
            for w in &level {
                let leaf = Rc::clone(leaf);
                let w = Rc::clone(w);
                let f: Field<'_> = Rc::new(move |p: &[f64], out: &mut [f64]| {
                    let v = lie_bracket(&*leaf, &*w, p, h);
                    out.copy_from_slice(&v);
                });
                next.push(f);
            }
        }
        level = next;
    }

    ChowReport {
        point: x.to_vec(),
        holds: false,
        degree: opts.max_degree,
        basis_ranks,
    }
}

// --- Kalman -------------------------------------------------------------

/// Kalman rank test: `rank [B, AB, …, A^{d−1}B] = d`.
pub fn kalman_controllable(a: &DMatrix<f64>, b: &DMatrix<f64>, rank_tol: f64) -> Result<bool> {
    if !a.is_square() {
        return Err(Error::Dimension {
            context: "kalman matrix A (must be square)",
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    if b.nrows() != a.nrows() {
        return Err(Error::Dimension {
            context: "kalman matrix B rows",
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    let d = a.nrows();
    let m = b.ncols();
    let mut block = b.clone();
    let mut ctrb = DMatrix::zeros(d, d * m);
    for k in 0..d {
        ctrb.view_mut((0, k * m), (d, m)).copy_from(&block);
        if k + 1 < d {
            block = a * block;
        }
    }
    Ok(numerics::rank(&ctrb, rank_tol) == d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn assert_vec_close(got: &[f64], want: &[f64], tol: f64) {
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(want) {
            assert_abs_diff_eq!(g, w, epsilon = tol);
        }
    }

    #[test]
    fn heisenberg_dynamics_example() {
        let s = ControlSystemSpec::heisenberg();
        let f = s.eval_dynamics(&[1.0, 2.0, 3.0], &[1.0, 0.0]).unwrap();
        assert_vec_close(&f, &[1.0, 0.0, 2.0], 0.0);
    }

    #[test]
    fn grushin_dynamics_example() {
        let s = ControlSystemSpec::grushin("x").unwrap();
        let f = s.eval_dynamics(&[2.0, 5.0], &[0.0, 1.0]).unwrap();
        assert_vec_close(&f, &[0.0, 2.0], 0.0);
    }

    #[test]
    fn double_integrator_dynamics_example() {
        let s = ControlSystemSpec::double_integrator();
        let f = s.eval_dynamics(&[1.0, 1.0], &[3.0]).unwrap();
        assert_vec_close(&f, &[1.0, 3.0], 0.0);
    }

    #[test]
    fn dynamics_dimension_mismatch_is_an_error() {
        let s = ControlSystemSpec::heisenberg();
        assert!(s.eval_dynamics(&[0.0, 0.0], &[0.0, 0.0]).is_err());
        assert!(s.eval_dynamics(&[0.0, 0.0, 0.0], &[0.0]).is_err());
    }

    #[test]
    fn driftless_dynamics_vanish_at_zero_control() {
        let systems = [
            ControlSystemSpec::heisenberg(),
            ControlSystemSpec::grushin("x").unwrap(),
            ControlSystemSpec::euclidean(3),
        ];
        for s in &systems {
            let d = s.state_dim();
            let m = s.control_dim();
            for k in 0..20 {
                let x: Vec<f64> = (0..d).map(|i| ((k * 7 + i) as f64).sin() * 3.0).collect();
                let f = s.eval_dynamics(&x, &vec![0.0; m]).unwrap();
                assert!(f.iter().all(|&v| v == 0.0), "nonzero drift at {x:?}");
            }
        }
    }

    #[test]
    fn driftless_dynamics_are_linear_in_control() {
        let s = ControlSystemSpec::grushin("x^2 - 1").unwrap();
        let x = [1.3, -0.4];
        let u = [0.7, -1.1];
        let w = [0.2, 0.9];
        let (alpha, beta) = (1.7, -0.6);
        let mix: Vec<f64> = u.iter().zip(&w).map(|(a, b)| alpha * a + beta * b).collect();
        let fu = s.eval_dynamics(&x, &u).unwrap();
        let fw = s.eval_dynamics(&x, &w).unwrap();
        let fmix = s.eval_dynamics(&x, &mix).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(fmix[i], alpha * fu[i] + beta * fw[i], epsilon = 1e-14);
        }
    }

    // With the convention [X,Y] = DY·X − DX·Y fixed by the Grushin pair
    // ((0,1) below), the Heisenberg fields X1=(1,0,y), X2=(0,1,−x) bracket
    // to (0,0,−2): DX2·X1 = (0,0,−1) and DX1·X2 = (0,0,1).
    #[test]
    fn heisenberg_bracket_is_vertical() {
        let s = ControlSystemSpec::heisenberg();
        for point in [[0.0, 0.0, 0.0], [1.0, 2.0, 3.0], [-0.5, 0.25, 7.0]] {
            let br = system_bracket(&s, 0, 1, &point, 1e-4).unwrap();
            assert_vec_close(&br, &[0.0, 0.0, -2.0], 1e-8);
        }
    }

    #[test]
    fn grushin_bracket_is_constant_vertical() {
        let s = ControlSystemSpec::grushin("x").unwrap();
        for point in [[0.0, 0.0], [2.0, -1.0], [-3.0, 0.5]] {
            let br = system_bracket(&s, 0, 1, &point, 1e-4).unwrap();
            assert_vec_close(&br, &[0.0, 1.0], 1e-8);
        }
    }

    #[test]
    fn bracket_of_field_with_itself_vanishes() {
        let s = ControlSystemSpec::heisenberg();
        let br = system_bracket(&s, 1, 1, &[0.3, -0.7, 0.1], 1e-4).unwrap();
        assert_vec_close(&br, &[0.0, 0.0, 0.0], 1e-10);
    }

    #[test]
    fn bracket_antisymmetry_on_polynomial_builtins() {
        let systems = [
            ControlSystemSpec::heisenberg(),
            ControlSystemSpec::grushin("x^3 + 2*x").unwrap(),
        ];
        for s in &systems {
            let d = s.state_dim();
            let point: Vec<f64> = (0..d).map(|i| 0.3 * i as f64 - 0.4).collect();
            let ij = system_bracket(s, 0, 1, &point, 1e-4).unwrap();
            let ji = system_bracket(s, 1, 0, &point, 1e-4).unwrap();
            let sum: f64 = ij.iter().zip(&ji).map(|(a, b)| (a + b).abs()).sum();
            assert!(sum <= 1e-8, "antisymmetry defect {sum} for {}", s.name());
        }
    }

    #[test]
    fn bracket_error_is_second_order_in_h() {
        // Grushin with cubic weight has x-dependent bracket (0, 3x²+2), so
        // the finite-difference error is visible and must shrink ~4× per
        // halving of h.
        let s = ControlSystemSpec::grushin("x^3 + 2*x").unwrap();
        let point = [0.9, 0.0];
        let exact = s.exact_bracket(0, 1, &point).unwrap();
        let err = |h: f64| {
            let b = system_bracket(&s, 0, 1, &point, h).unwrap();
            numerics::dist(&b, &exact)
        };
        let e1 = err(1e-2);
        let e2 = err(5e-3);
        let ratio = e1 / e2;
        assert!(
            (3.0..5.0).contains(&ratio),
            "expected ~4x error reduction, got {ratio} ({e1} -> {e2})"
        );
    }

    #[test]
    fn exact_brackets_match_finite_differences() {
        let systems = [
            ControlSystemSpec::heisenberg(),
            ControlSystemSpec::grushin("x^2").unwrap(),
            ControlSystemSpec::euclidean(2),
        ];
        for s in &systems {
            let d = s.state_dim();
            let point: Vec<f64> = (0..d).map(|i| 0.2 + 0.3 * i as f64).collect();
            for i in 0..s.control_dim() {
                for j in 0..s.control_dim() {
                    let fd = system_bracket(s, i, j, &point, 1e-4).unwrap();
                    let exact = s.exact_bracket(i, j, &point).unwrap();
                    assert_vec_close(&fd, &exact, 1e-7);
                }
            }
        }
    }

    #[test]
    fn chow_heisenberg_degree_two() {
        let s = ControlSystemSpec::heisenberg();
        for point in [[0.0, 0.0, 0.0], [1.0, -2.0, 0.3]] {
            let r = check_chow(&s, &point, &ChowOptions { max_degree: 3, ..Default::default() })
                .unwrap();
            assert!(r.holds);
            assert_eq!(r.degree, 2);
            assert_eq!(r.basis_ranks, vec![2, 3]);
        }
    }

    #[test]
    fn chow_grushin_on_and_off_axis() {
        let s = ControlSystemSpec::grushin("x").unwrap();
        let on_axis = check_chow(&s, &[0.0, 1.5], &ChowOptions::default()).unwrap();
        assert!(on_axis.holds);
        assert_eq!(on_axis.degree, 2);
        assert_eq!(on_axis.basis_ranks, vec![1, 2]);

        let off_axis = check_chow(&s, &[1.0, 0.7], &ChowOptions::default()).unwrap();
        assert!(off_axis.holds);
        assert_eq!(off_axis.degree, 1);
        assert_eq!(off_axis.basis_ranks, vec![2]);
    }

    #[test]
    fn chow_degree_invariant_under_field_permutation() {
        let base = ControlSystemSpec::heisenberg();
        let x = [0.4, -0.2, 1.0];
        let mut reports = Vec::new();
        for order in [[0usize, 1], [1, 0]] {
            let leaves: Vec<Field<'_>> = order
                .iter()
                .map(|&i| {
                    let b = base.clone();
                    let f: Field<'_> =
                        Rc::new(move |p: &[f64], out: &mut [f64]| b.vector_field_into(i, p, out));
                    f
                })
                .collect();
            reports.push(check_chow_fields(leaves, &x, &ChowOptions::default()));
        }
        assert_eq!(reports[0].degree, reports[1].degree);
        assert_eq!(reports[0].basis_ranks, reports[1].basis_ranks);
        assert!(reports.iter().all(|r| r.holds && r.degree == 2));
    }

    #[test]
    fn chow_rejects_linear_systems() {
        let s = ControlSystemSpec::double_integrator();
        assert!(check_chow(&s, &[0.0, 0.0], &ChowOptions::default()).is_err());
    }

    #[test]
    fn chow_reports_failure_without_exception() {
        // A single field on R^2 can never span: holds=false at max_degree.
        let s = ControlSystemSpec::generic("shear", 2, 1, 1.0, |_x, u, out| {
            out[0] = u[0];
            out[1] = 0.0;
        });
        // generic kind is rejected...
        assert!(check_chow(&s, &[0.0, 0.0], &ChowOptions::default()).is_err());
        // ...so use a degenerate Grushin weight φ ≡ 0 instead: f2 = 0.
        let s = ControlSystemSpec::grushin("0").unwrap();
        let r = check_chow(&s, &[0.0, 0.0], &ChowOptions { max_degree: 3, ..Default::default() })
            .unwrap();
        assert!(!r.holds);
        assert_eq!(r.degree, 3);
        assert_eq!(r.basis_ranks, vec![1, 1, 1]);
    }

    #[test]
    fn kalman_examples() {
        let di = ControlSystemSpec::double_integrator();
        let (a, b) = di.linear_parts().unwrap();
        assert!(kalman_controllable(a, b, 1e-8).unwrap());

        let ho = ControlSystemSpec::harmonic_oscillator();
        let (a, b) = ho.linear_parts().unwrap();
        assert!(kalman_controllable(a, b, 1e-8).unwrap());

        let z2 = DMatrix::zeros(2, 2);
        let zb = DMatrix::zeros(2, 1);
        assert!(!kalman_controllable(&z2, &zb, 1e-8).unwrap());
    }

    #[test]
    fn kalman_dimension_mismatch() {
        let a = DMatrix::zeros(2, 3);
        let b = DMatrix::zeros(2, 1);
        assert!(kalman_controllable(&a, &b, 1e-8).is_err());
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::zeros(3, 1);
        assert!(kalman_controllable(&a, &b, 1e-8).is_err());
    }

    #[test]
    fn declared_c_f_dominates_sampled_quotients() {
        for s in [
            ControlSystemSpec::heisenberg(),
            ControlSystemSpec::grushin("x").unwrap(),
            ControlSystemSpec::euclidean(2),
            ControlSystemSpec::double_integrator(),
            ControlSystemSpec::harmonic_oscillator(),
        ] {
            let audit = s.audit_f_bounds(3.0, 4000, 7);
            assert!(
                audit.lipschitz <= s.c_f() + 1e-9,
                "{}: lipschitz {} > c_f {}",
                s.name(),
                audit.lipschitz,
                s.c_f()
            );
            assert!(
                audit.growth <= s.c_f() + 1e-9,
                "{}: growth {} > c_f {}",
                s.name(),
                audit.growth,
                s.c_f()
            );
        }
    }
}
