//! Box-constrained smooth minimization.
//!
//! Projected limited-memory BFGS: the two-loop recursion runs on the free
//! variables (those not pinned at a bound by an outward-pointing gradient),
//! the trial point is projected back onto the box, and a backtracking Armijo
//! search decides acceptance. Whenever the quasi-Newton step fails to descend
//! the solver falls back to projected steepest descent.
//!
//! Near the optimum of stiff problems the function-value test in Armijo's rule
//! drowns in rounding. In that regime a step is also accepted when the
//! trapezoidal estimate of the decrease, `½(g₀ + g₁)ᵀΔx` (exact for quadratics),
//! satisfies the Armijo inequality and the raw value rose by no more than
//! rounding noise.

use std::collections::VecDeque;

use nalgebra::DVector;

use crate::error::{check_dim, DpxError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSolveConfig {
    pub memory: usize,
    pub max_iters: usize,
    /// Threshold on `‖x − P(x − ∇f(x))‖_∞`.
    pub grad_tol: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
}

impl BoxSolveConfig {
    /// High-accuracy settings used by oracles and evaluation.
    pub fn oracle() -> Self {
        Self {
            memory: 10,
            max_iters: 500,
            grad_tol: 1e-8,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
        }
    }

    /// Cheaper settings used for inner solves during training.
    pub fn training() -> Self {
        Self {
            max_iters: 100,
            grad_tol: 1e-6,
            ..Self::oracle()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.memory < 1 || self.max_iters < 1 || !(self.grad_tol > 0.0) {
            return Err(DpxError::InvalidArgument(format!(
                "bad solver config: {self:?}"
            )));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0)
            || !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0)
        {
            return Err(DpxError::InvalidArgument(format!(
                "line-search constants out of (0,1): {self:?}"
            )));
        }
        Ok(())
    }
}

impl Default for BoxSolveConfig {
    fn default() -> Self {
        Self::oracle()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub final_projected_grad_norm: f64,
    pub converged: bool,
    pub objective_value: f64,
}

/// Componentwise clamp onto `[lower, upper]`.
pub fn project_box(
    x: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim("lower", x.len(), lower.len())?;
    check_dim("upper", x.len(), upper.len())?;
    if let Some(i) = (0..x.len()).find(|&i| !(lower[i] <= upper[i])) {
        return Err(DpxError::InvalidArgument(format!(
            "crossed bounds at {i}: [{}, {}]",
            lower[i], upper[i]
        )));
    }
    Ok(clamp(x, lower, upper))
}

fn clamp(x: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| x[i].max(lower[i]).min(upper[i]))
}

/// `‖x − P(x − g)‖_∞`
pub fn projected_gradient_norm(
    x: &DVector<f64>,
    g: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> f64 {
    (0..x.len())
        .map(|i| (x[i] - (x[i] - g[i]).max(lower[i]).min(upper[i])).abs())
        .fold(0.0, f64::max)
}

struct History {
    pairs: VecDeque<(DVector<f64>, DVector<f64>)>,
    cap: usize,
}

impl History {
    fn push(&mut self, s: DVector<f64>, y: DVector<f64>) {
        let sy = s.dot(&y);
        if sy <= 1e-12 * s.norm() * y.norm() || !sy.is_finite() {
            self.pairs.clear();
            return;
        }
        if self.pairs.len() == self.cap {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y));
    }

    /// `−H·g` restricted to the free mask; zero on fixed coordinates.
    fn direction(&self, g: &DVector<f64>, free: &[bool]) -> Option<DVector<f64>> {
        let mask = |v: &DVector<f64>| {
            DVector::from_fn(v.len(), |i, _| if free[i] { v[i] } else { 0.0 })
        };
        let mut q = mask(g);
        let masked: Vec<(DVector<f64>, DVector<f64>, f64)> = self
            .pairs
            .iter()
            .filter_map(|(s, y)| {
                let (s, y) = (mask(s), mask(y));
                let sy = s.dot(&y);
                (sy > 1e-12 * s.norm() * y.norm() && sy > 0.0).then(|| (s, y, 1.0 / sy))
            })
            .collect();
        let (s_last, y_last, _) = masked.last()?;
        let gamma = s_last.dot(y_last) / y_last.norm_squared();

        let mut alphas = Vec::with_capacity(masked.len());
        for (s, y, rho) in masked.iter().rev() {
            let a = rho * s.dot(&q);
            q.axpy(-a, y, 1.0);
            alphas.push(a);
        }
        q *= gamma;
        for ((s, y, rho), a) in masked.iter().zip(alphas.into_iter().rev()) {
            let b = rho * y.dot(&q);
            q.axpy(a - b, s, 1.0);
        }
        Some(-mask(&q))
    }
}

fn eval<F>(f: &F, x: &DVector<f64>) -> Result<(f64, DVector<f64>)>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let (v, g) = f(x);
    if !v.is_finite() || g.iter().any(|c| !c.is_finite()) {
        return Err(DpxError::NonFinite(format!(
            "objective/gradient at x with ‖x‖∞ = {:e}: f = {v}",
            x.amax()
        )));
    }
    Ok((v, g))
}

struct Accepted {
    x: DVector<f64>,
    f: f64,
    g: DVector<f64>,
}

/// Projected backtracking along `P(x + t·d)`.
#[allow(clippy::too_many_arguments)]
fn line_search<F>(
    f_and_grad: &F,
    x: &DVector<f64>,
    fx: f64,
    gx: &DVector<f64>,
    d: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    cfg: &BoxSolveConfig,
) -> Result<Option<Accepted>>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let noise = 1e-13 * (1.0 + fx.abs());
    let mut t = 1.0;
    for _ in 0..60 {
        let xt = clamp(&(x + d * t), lower, upper);
        let step = &xt - x;
        let slope = gx.dot(&step);
        if step.amax() == 0.0 {
            return Ok(None);
        }
        if slope < 0.0 {
            let (ft, gt) = eval(f_and_grad, &xt)?;
            let armijo = ft <= fx + cfg.armijo_c * slope;
            let approx = ft <= fx + noise && 0.5 * (slope + gt.dot(&step)) <= cfg.armijo_c * slope;
            if armijo || approx {
                return Ok(Some(Accepted { x: xt, f: ft, g: gt }));
            }
        }
        t *= cfg.backtrack_factor;
    }
    Ok(None)
}

/// Minimizes a smooth function over the box `[lower, upper]`.
///
/// `f_and_grad` must be pure. Every iterate, including the returned one, lies
/// in the box exactly because projection is the last operation of each update.
pub fn minimize_box<F>(
    f_and_grad: F,
    x0: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    cfg: &BoxSolveConfig,
) -> Result<SolveReport>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    minimize_box_traced(f_and_grad, x0, lower, upper, cfg, |_, _| {})
}

/// As [`minimize_box`], invoking `on_iterate(x, f)` for the start point and
/// every accepted iterate.
pub fn minimize_box_traced<F, T>(
    f_and_grad: F,
    x0: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    cfg: &BoxSolveConfig,
    mut on_iterate: T,
) -> Result<SolveReport>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
    T: FnMut(&DVector<f64>, f64),
{
    cfg.validate()?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(DpxError::NonFinite("starting point".into()));
    }
    let mut x = project_box(x0, lower, upper)?;
    let n = x.len();
    let (mut fx, mut gx) = eval(&f_and_grad, &x)?;
    check_dim("gradient", n, gx.len())?;
    on_iterate(&x, fx);

    let mut history = History {
        pairs: VecDeque::with_capacity(cfg.memory),
        cap: cfg.memory,
    };
    let mut pg = projected_gradient_norm(&x, &gx, lower, upper);
    let mut iterations = 0;

    while pg > cfg.grad_tol && iterations < cfg.max_iters {
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lower[i] && gx[i] > 0.0) || (x[i] >= upper[i] && gx[i] < 0.0)))
            .collect();

        let mut accepted = None;
        if let Some(d) = history.direction(&gx, &free) {
            if gx.dot(&d) < 0.0 {
                accepted = line_search(&f_and_grad, &x, fx, &gx, &d, lower, upper, cfg)?;
            }
        }
        if accepted.is_none() {
            history.pairs.clear();
            let scale = 1.0 / gx.norm().max(1.0);
            let d = -&gx * scale;
            accepted = line_search(&f_and_grad, &x, fx, &gx, &d, lower, upper, cfg)?;
        }
        let Some(next) = accepted else {
            // no representable decrease along the projected gradient
            break;
        };

        history.push(&next.x - &x, &next.g - &gx);
        x = next.x;
        fx = next.f;
        gx = next.g;
        iterations += 1;
        on_iterate(&x, fx);
        pg = projected_gradient_norm(&x, &gx, lower, upper);
    }

    Ok(SolveReport {
        converged: pg <= cfg.grad_tol,
        x,
        iterations,
        final_projected_grad_norm: pg,
        objective_value: fx,
    })
}

/// Unconstrained variant: [`minimize_box`] with infinite bounds.
pub fn minimize_unconstrained<F>(
    f_and_grad: F,
    x0: &DVector<f64>,
    cfg: &BoxSolveConfig,
) -> Result<SolveReport>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    minimize_box(
        f_and_grad,
        x0,
        &DVector::from_element(n, f64::NEG_INFINITY),
        &DVector::from_element(n, f64::INFINITY),
        cfg,
    )
}
