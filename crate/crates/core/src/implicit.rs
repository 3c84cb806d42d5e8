//! The implicit stage `c = d + h v(t, c)` of the split-step scheme.
//!
//! Under the one-sided Lipschitz condition with constant `L_v` and the step
//! bound `1 - 2 h L_v > 0`, the map `u -> u - h v(t, u)` is strongly monotone,
//! so the stage has exactly one solution.  The induced maps
//!
//! * `resolvent(t, d) = c` and
//! * `resolvent_drift(t, d) = v(t, resolvent(t, d))`
//!
//! inherit quantitative contraction bounds that the property test-suite
//! checks directly:
//!
//! * `|resolvent_drift(t, x)| <= |v(t, x)| / (1 - h L_v)`
//! * `|resolvent(t, x) - resolvent(t, y)|^2 <= |x - y|^2 / (1 - 2 h L_v)`
//! * `<x - y, resolvent_drift(t,x) - resolvent_drift(t,y)> <= L_v / (1 - 2 h L_v) |x - y|^2`
//!
//! Closed forms are used wherever the model's solver hint allows (monotone
//! scalar cubics per component, or a direct division for componentwise-linear
//! drifts); everything else goes through a damped Newton iteration with a
//! bisection fallback in one dimension.

use crate::model::{MeasureStats, ModelSpec, SolverHint};
use crate::{Error, Real, Result};

/// Residual tolerance and iteration budget for the implicit stage.
///
/// The default residual bound `1e-12 (1 + |d|)` keeps solver error far below
/// the O(h^(1/2)) scheme error at any desk-scale step size.  For scalar types
/// narrower than f64 the bound floors at `32 * epsilon` instead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveSettings<T: Real> {
    pub tol_abs: T,
    pub tol_rel: T,
    pub max_iter: usize,
}

impl<T: Real> Default for SolveSettings<T> {
    fn default() -> Self {
        let tol = T::of(1e-12).max(T::epsilon() * T::of(32.0));
        SolveSettings { tol_abs: tol, tol_rel: tol, max_iter: 100 }
    }
}

impl<T: Real> SolveSettings<T> {
    #[inline]
    pub fn tolerance_for(&self, d_norm: T) -> T {
        self.tol_abs + self.tol_rel * d_norm
    }
}

/// How a particular implicit solve was carried out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    CubicClosedForm,
    LinearClosedForm,
    NewtonBisection,
}

/// Outcome of one implicit solve.
#[derive(Debug, Clone)]
pub struct SolveReport<T: Real> {
    pub solution: Vec<T>,
    /// `|c - d - h v(t, c)|` evaluated with the model's own drift.
    pub residual_norm: T,
    pub iterations: usize,
    pub method_used: SolveMethod,
}

/// Largest admissible step for a one-sided constant, infinite when any
/// positive step is allowed.
pub fn max_step<T: Real>(l_v: T) -> T {
    if l_v > T::of(-0.5) {
        T::one() / (T::one() + T::of(2.0) * l_v)
    } else {
        T::infinity()
    }
}

/// Check the step-size rule for the implicit stage: `h <= 1/(1 + 2 L_v)` when
/// `L_v > -1/2`, any positive `h` otherwise.  Implies `1 - 2 h L_v > 0`.
pub fn validate_stepsize<T: Real>(l_v: T, h: T) -> Result<()> {
    if !(h > T::zero()) {
        return Err(Error::Config(format!("step size must be positive, got {h}")));
    }
    let max_h = max_step(l_v);
    if h > max_h {
        return Err(Error::StepSize {
            l_v: l_v.to_f64().unwrap_or(f64::NAN),
            h: h.to_f64().unwrap_or(f64::NAN),
            max_h: max_h.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok(())
}

/// Unique real root of the strictly increasing cubic `a3 y^3 + a1 y = rhs`
/// (`a3 >= 0`, `a1 > 0`).
///
/// The equation is rescaled to the canonical `z^3 + z = w` and solved with the
/// single-real-root Cardano formula, taking the cube root of the
/// larger-magnitude term so the two branches never cancel; a short Newton
/// polish then pins the residual to working precision.
pub fn solve_cubic_monotone<T: Real>(a3: T, a1: T, rhs: T) -> Result<T> {
    if a3 < T::zero() || !(a1 > T::zero()) {
        return Err(Error::Numerical(format!(
            "cubic solve needs a3 >= 0 and a1 > 0, got a3={a3}, a1={a1}"
        )));
    }
    if a3 == T::zero() {
        return Ok(rhs / a1);
    }
    if rhs == T::zero() {
        return Ok(T::zero()); // odd function
    }
    // y = scale * z turns a3 y^3 + a1 y = rhs into z^3 + z = w.
    let scale = (a1 / a3).sqrt();
    let w = rhs / (a1 * scale);
    let mut y = if !w.is_finite() || w.abs() < T::of(1e-3) {
        // Nearly linear at this magnitude: the Cardano branches cancel, the
        // series z = w - w^3 + O(w^5) is accurate to ~3 w^4 relative.
        if w.is_finite() {
            (w - w * w * w) * scale
        } else {
            rhs / a1
        }
    } else {
        let u = w * T::of(0.5);
        let s = (u * u + T::of(1.0 / 27.0)).sqrt();
        let arm = if u >= T::zero() { u + s } else { u - s };
        let croot = arm.cbrt();
        (croot - T::one() / (T::of(3.0) * croot)) * scale
    };
    // Newton polish: f' = 3 a3 y^2 + a1 >= a1 > 0.
    let tol = T::of(1e-15) * (rhs.abs() + a1 * y.abs() + T::one());
    for _ in 0..3 {
        let f = a3 * y * y * y + a1 * y - rhs;
        if f.abs() <= tol {
            break;
        }
        y = y - f / (T::of(3.0) * a3 * y * y + a1);
    }
    Ok(y)
}

fn eval_v<T: Real>(
    spec: &ModelSpec<T>,
    t: T,
    x: &[T],
    stats: Option<&MeasureStats<T>>,
    out: &mut [T],
) -> Result<()> {
    match stats {
        Some(s) => {
            spec.v.eval(t, x, s, out);
            Ok(())
        }
        None => spec.v.eval_plain(t, x, out),
    }
}

fn norm<T: Real>(x: &[T]) -> T {
    x.iter().fold(T::zero(), |acc, v| acc + *v * *v).sqrt()
}

/// Solve the implicit stage `c = d + h v(t, c)` for one particle state `d`.
///
/// `frozen_stats` must be present exactly when the model's superlinear drift
/// reads the (frozen) measure.  Dispatches on the model's solver hint; the
/// reported residual is always evaluated with the model's own drift closure,
/// so a wrong hint cannot go unnoticed.
pub fn solve_implicit<T: Real>(
    spec: &ModelSpec<T>,
    t: T,
    d: &[T],
    h: T,
    frozen_stats: Option<&MeasureStats<T>>,
    settings: &SolveSettings<T>,
) -> Result<SolveReport<T>> {
    validate_stepsize(spec.constants.l_v, h)?;
    if d.len() != spec.dim {
        return Err(Error::Dimension(format!(
            "state has {} components, model dimension is {}",
            d.len(),
            spec.dim
        )));
    }
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite state entering the implicit stage".into()));
    }
    if spec.v.needs_measure() && frozen_stats.is_none() {
        return Err(Error::Unsupported(
            "the superlinear drift of this model reads the measure; only the frozen-measure \
             scheme can take its implicit step"
                .into(),
        ));
    }

    let (mut solution, iterations, method) = match &spec.solver_hint {
        SolverHint::ComponentwiseCubic { coeffs } => {
            let mut c = vec![T::zero(); spec.dim];
            for (j, coeff) in coeffs.iter().enumerate() {
                // y = d_j + h (cube y^3 + lin y)  <=>  (-h cube) y^3 + (1 - h lin) y = d_j
                c[j] = solve_cubic_monotone(-h * coeff.cube, T::one() - h * coeff.lin, d[j])?;
            }
            (c, 1, SolveMethod::CubicClosedForm)
        }
        SolverHint::Linear => {
            // Componentwise-linear drift: the slope in coordinate j is v_j
            // evaluated at the all-ones state.
            let ones = vec![T::one(); spec.dim];
            let mut slope = vec![T::zero(); spec.dim];
            eval_v(spec, t, &ones, frozen_stats, &mut slope)?;
            let mut c = vec![T::zero(); spec.dim];
            for j in 0..spec.dim {
                let denom = T::one() - h * slope[j];
                if !(denom > T::zero()) {
                    return Err(Error::Numerical(format!(
                        "linear implicit stage is singular: 1 - h*slope = {denom}"
                    )));
                }
                c[j] = d[j] / denom;
            }
            (c, 1, SolveMethod::LinearClosedForm)
        }
        SolverHint::GeneralMonotone => newton_monotone(spec, t, d, h, frozen_stats, settings)?,
    };

    // Residual against the model's own drift.
    let mut v_at = vec![T::zero(); spec.dim];
    eval_v(spec, t, &solution, frozen_stats, &mut v_at)?;
    let mut residual = residual_norm(&solution, d, h, &v_at);
    let tol = settings.tolerance_for(norm(d));

    // The closed forms solve each component to machine precision already; a
    // couple of damped-free Newton touches absorb any hint/closure rounding gap.
    if residual > tol && !matches!(spec.solver_hint, SolverHint::GeneralMonotone) {
        for _ in 0..3 {
            if residual <= tol {
                break;
            }
            let step = newton_step(spec, t, &solution, d, h, frozen_stats)?;
            for (s, dy) in solution.iter_mut().zip(step.iter()) {
                *s += *dy;
            }
            eval_v(spec, t, &solution, frozen_stats, &mut v_at)?;
            residual = residual_norm(&solution, d, h, &v_at);
        }
    }

    if residual > tol || !residual.is_finite() {
        return Err(Error::SolveDiverged {
            residual: residual.to_f64().unwrap_or(f64::NAN),
            iterations,
        });
    }
    Ok(SolveReport { solution, residual_norm: residual, iterations, method_used: method })
}

#[inline]
fn residual_norm<T: Real>(c: &[T], d: &[T], h: T, v_at_c: &[T]) -> T {
    let mut acc = T::zero();
    for j in 0..c.len() {
        let r = c[j] - d[j] - h * v_at_c[j];
        acc += r * r;
    }
    acc.sqrt()
}

/// One Newton step for `F(u) = u - h v(t, u) - d` with a forward-difference
/// Jacobian, solved by Gaussian elimination with partial pivoting.
fn newton_step<T: Real>(
    spec: &ModelSpec<T>,
    t: T,
    u: &[T],
    d: &[T],
    h: T,
    stats: Option<&MeasureStats<T>>,
) -> Result<Vec<T>> {
    let n = u.len();
    let mut v_u = vec![T::zero(); n];
    eval_v(spec, t, u, stats, &mut v_u)?;
    let mut rhs: Vec<T> = (0..n).map(|j| -(u[j] - h * v_u[j] - d[j])).collect();

    // Jacobian of F: I - h dv.
    let mut jac = vec![T::zero(); n * n];
    let mut bumped = u.to_vec();
    let mut v_bumped = vec![T::zero(); n];
    let sqrt_eps = T::of(1.49e-8);
    for col in 0..n {
        let eps = sqrt_eps * (T::one() + u[col].abs());
        bumped[col] = u[col] + eps;
        eval_v(spec, t, &bumped, stats, &mut v_bumped)?;
        bumped[col] = u[col];
        for row in 0..n {
            let dv = (v_bumped[row] - v_u[row]) / eps;
            jac[row * n + col] = if row == col { T::one() - h * dv } else { -h * dv };
        }
    }

    // In-place elimination.
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if jac[row * n + col].abs() > jac[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if jac[pivot * n + col].abs() < T::of(1e-300) {
            return Err(Error::Numerical("singular Jacobian in the implicit stage".into()));
        }
        if pivot != col {
            for k in 0..n {
                jac.swap(col * n + k, pivot * n + k);
            }
            rhs.swap(col, pivot);
        }
        for row in col + 1..n {
            let factor = jac[row * n + col] / jac[col * n + col];
            for k in col..n {
                let upper = jac[col * n + k];
                jac[row * n + k] -= factor * upper;
            }
            let r = rhs[col];
            rhs[row] -= factor * r;
        }
    }
    let mut step = vec![T::zero(); n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in row + 1..n {
            acc -= jac[row * n + k] * step[k];
        }
        step[row] = acc / jac[row * n + row];
    }
    Ok(step)
}

/// Damped Newton for the general monotone case. Full step when the residual
/// decreases, otherwise halve the step up to 30 times; when no damping helps
/// fall back to bisection on the monotone scalar reduction (dimension one
/// only, where the left-hand side is strictly increasing).
fn newton_monotone<T: Real>(
    spec: &ModelSpec<T>,
    t: T,
    d: &[T],
    h: T,
    stats: Option<&MeasureStats<T>>,
    settings: &SolveSettings<T>,
) -> Result<(Vec<T>, usize, SolveMethod)> {
    let n = d.len();
    let tol = settings.tolerance_for(norm(d));
    let mut u = d.to_vec();
    let mut v_u = vec![T::zero(); n];
    eval_v(spec, t, &u, stats, &mut v_u)?;
    let mut res = residual_norm(&u, d, h, &v_u);
    let mut trial = vec![T::zero(); n];

    for iter in 0..settings.max_iter {
        if res <= tol {
            return Ok((u, iter, SolveMethod::NewtonBisection));
        }
        let step = newton_step(spec, t, &u, d, h, stats)?;
        let mut damping = T::one();
        let mut accepted = false;
        for _ in 0..30 {
            for j in 0..n {
                trial[j] = u[j] + damping * step[j];
            }
            eval_v(spec, t, &trial, stats, &mut v_u)?;
            let trial_res = residual_norm(&trial, d, h, &v_u);
            if trial_res < res && trial_res.is_finite() {
                u.copy_from_slice(&trial);
                res = trial_res;
                accepted = true;
                break;
            }
            damping *= T::of(0.5);
        }
        if !accepted {
            if n == 1 {
                let y = bisect_scalar(spec, t, d[0], h, stats, tol)?;
                return Ok((vec![y], iter + 1, SolveMethod::NewtonBisection));
            }
            return Err(Error::SolveDiverged {
                residual: res.to_f64().unwrap_or(f64::NAN),
                iterations: iter,
            });
        }
    }
    if res <= tol {
        return Ok((u, settings.max_iter, SolveMethod::NewtonBisection));
    }
    if n == 1 {
        let y = bisect_scalar(spec, t, d[0], h, stats, tol)?;
        return Ok((vec![y], settings.max_iter, SolveMethod::NewtonBisection));
    }
    Err(Error::SolveDiverged {
        residual: res.to_f64().unwrap_or(f64::NAN),
        iterations: settings.max_iter,
    })
}

/// Bisection on `g(y) = y - h v(t, y) - d`, strictly increasing under the
/// step-size rule.
fn bisect_scalar<T: Real>(
    spec: &ModelSpec<T>,
    t: T,
    d: T,
    h: T,
    stats: Option<&MeasureStats<T>>,
    tol: T,
) -> Result<T> {
    let mut v_buf = [T::zero()];
    let mut g = |y: T| -> Result<T> {
        eval_v(spec, t, &[y], stats, &mut v_buf[..])?;
        Ok(y - h * v_buf[0] - d)
    };
    let mut radius = T::one().max(d.abs());
    let (mut lo, mut hi) = (d - radius, d + radius);
    for _ in 0..200 {
        if g(lo)? <= T::zero() && g(hi)? >= T::zero() {
            break;
        }
        radius *= T::of(2.0);
        lo = d - radius;
        hi = d + radius;
    }
    if !(g(lo)? <= T::zero() && g(hi)? >= T::zero()) {
        return Err(Error::Numerical("bisection could not bracket the implicit stage".into()));
    }
    let mut mid = (lo + hi) * T::of(0.5);
    for _ in 0..200 {
        mid = (lo + hi) * T::of(0.5);
        let gm = g(mid)?;
        if gm.abs() <= tol {
            return Ok(mid);
        }
        if gm < T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let residual = g(mid)?.abs();
    if residual <= tol {
        Ok(mid)
    } else {
        Err(Error::SolveDiverged {
            residual: residual.to_f64().unwrap_or(f64::NAN),
            iterations: 200,
        })
    }
}

/// `resolvent(t, d)`: the solution of the implicit stage as a map of `d`.
pub fn resolvent<T: Real>(
    spec: &ModelSpec<T>,
    t: T,
    d: &[T],
    h: T,
    frozen_stats: Option<&MeasureStats<T>>,
    settings: &SolveSettings<T>,
) -> Result<Vec<T>> {
    Ok(solve_implicit(spec, t, d, h, frozen_stats, settings)?.solution)
}

/// `resolvent_drift(t, d) = v(t, resolvent(t, d))`.
pub fn resolvent_drift<T: Real>(
    spec: &ModelSpec<T>,
    t: T,
    d: &[T],
    h: T,
    frozen_stats: Option<&MeasureStats<T>>,
    settings: &SolveSettings<T>,
) -> Result<Vec<T>> {
    let c = resolvent(spec, t, d, h, frozen_stats, settings)?;
    let mut out = vec![T::zero(); spec.dim];
    eval_v(spec, t, &c, frozen_stats, &mut out)?;
    Ok(out)
}

/// Witness pair for the resolvent contraction bound: returns
/// `(|resolvent(t,x) - resolvent(t,y)|^2, |x - y|^2 / (1 - 2 h L_v))`.
/// The first component never exceeds the second (up to numerical slack).
pub fn resolvent_contraction_witness<T: Real>(
    spec: &ModelSpec<T>,
    t: T,
    x: &[T],
    y: &[T],
    h: T,
    frozen_stats: Option<&MeasureStats<T>>,
    settings: &SolveSettings<T>,
) -> Result<(T, T)> {
    let fx = resolvent(spec, t, x, h, frozen_stats, settings)?;
    let fy = resolvent(spec, t, y, h, frozen_stats, settings)?;
    let mut gap = T::zero();
    let mut input_gap = T::zero();
    for j in 0..spec.dim {
        let dg = fx[j] - fy[j];
        gap += dg * dg;
        let dx = x[j] - y[j];
        input_gap += dx * dx;
    }
    let denom = T::one() - T::of(2.0) * h * spec.constants.l_v;
    Ok((gap, input_gap / denom))
}
