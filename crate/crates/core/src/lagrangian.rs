//! Lagrangians, dual functions and primal recovery.
//!
//! ```text
//! L(x, λ, ν)  = f(x) + λᵀg(x) + νᵀh(x)
//! L_ρ(x, ν)   = f(x) + νᵀh(x) + ρ‖h(x)‖²
//! d(λ, ν)     = min_x L(x, λ, ν)            ∇_λ d = g(x*), ∇_ν d = h(x*)
//! d_ρ(ν)      = min_{l≤x≤u} L_ρ(x, ν)       ∇_ν d_ρ = h(x*)
//! ```
//!
//! For the convex QP the unconstrained minimizer solves `2Qx = −(c + Aᵀν + Gᵀλ)`
//! with a cached Cholesky factor of `2Q`.

use nalgebra::DVector;

use crate::error::{check_dim, DpxError, Result};
use crate::inner_solver::{minimize_box, minimize_unconstrained, BoxSolveConfig};
use crate::problems::{Mode, ProblemFamily};

/// Multiplier estimate. `lambda` is nonnegative by construction and empty in
/// the box-reformulated (equality-only) setting.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEstimate {
    lambda: DVector<f64>,
    nu: DVector<f64>,
}

impl DualEstimate {
    /// Negative `lambda` components are clamped to zero.
    pub fn new(lambda: DVector<f64>, nu: DVector<f64>) -> Self {
        Self {
            lambda: lambda.map(|v| v.max(0.0)),
            nu,
        }
    }

    pub fn equality_only(nu: DVector<f64>) -> Self {
        Self {
            lambda: DVector::zeros(0),
            nu,
        }
    }

    pub fn zeros(family: &ProblemFamily) -> Self {
        Self::new(DVector::zeros(family.m()), DVector::zeros(family.p()))
    }

    pub fn lambda(&self) -> &DVector<f64> {
        &self.lambda
    }

    pub fn nu(&self) -> &DVector<f64> {
        &self.nu
    }

    fn check(&self, family: &ProblemFamily, with_lambda: bool) -> Result<()> {
        if with_lambda {
            check_dim("lambda", family.m(), self.lambda.len())?;
        }
        check_dim("nu", family.p(), self.nu.len())
    }
}

/// Minimizer of a Lagrangian together with solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalRecovery {
    pub x: DVector<f64>,
    pub inner_iterations: usize,
    pub inner_grad_norm: f64,
    pub converged: bool,
}

fn check_c(family: &ProblemFamily, c: &DVector<f64>) -> Result<()> {
    check_dim("c", family.n(), c.len())
}

pub fn lagrangian_value(
    family: &ProblemFamily,
    c: &DVector<f64>,
    x: &DVector<f64>,
    dual: &DualEstimate,
) -> Result<f64> {
    dual.check(family, true)?;
    let f = family.objective(c, x)?;
    let g = family.inequality_residual(x)?;
    let h = family.equality_residual(x)?;
    Ok(f + dual.lambda.dot(&g) + dual.nu.dot(&h))
}

/// `f + νᵀh + ρ‖h‖²`. The box indicator is never evaluated here; callers keep
/// `x` inside the box.
pub fn augmented_lagrangian_value(
    family: &ProblemFamily,
    c: &DVector<f64>,
    x: &DVector<f64>,
    nu: &DVector<f64>,
    rho: f64,
) -> Result<f64> {
    check_dim("nu", family.p(), nu.len())?;
    if !(rho > 0.0) {
        return Err(DpxError::InvalidArgument(format!("rho must be positive, got {rho}")));
    }
    let f = family.objective(c, x)?;
    let h = family.equality_residual(x)?;
    Ok(f + nu.dot(&h) + rho * h.norm_squared())
}

fn lagrangian_grad(
    family: &ProblemFamily,
    c: &DVector<f64>,
    x: &DVector<f64>,
    dual: &DualEstimate,
) -> DVector<f64> {
    family.objective_grad_unchecked(c, x)
        + family.a().tr_mul(&dual.nu)
        + family.inequality_jacobian_t(&dual.lambda)
}

/// `argmin_x L(x, λ, ν)`: closed form for the convex QP, a local iterative
/// minimizer (started at the origin) for the sinusoidal objective.
pub fn lagrangian_minimizer(
    family: &ProblemFamily,
    c: &DVector<f64>,
    dual: &DualEstimate,
    cfg: &BoxSolveConfig,
) -> Result<PrimalRecovery> {
    check_c(family, c)?;
    dual.check(family, true)?;
    match family.mode() {
        Mode::ConvexQp => {
            let rhs = -(c + family.a().tr_mul(&dual.nu) + family.inequality_jacobian_t(&dual.lambda));
            let x = family.hessian_cholesky().solve(&rhs);
            let grad = lagrangian_grad(family, c, &x, dual);
            Ok(PrimalRecovery {
                inner_grad_norm: grad.amax(),
                x,
                inner_iterations: 0,
                converged: true,
            })
        }
        Mode::NonconvexSin => {
            let f = |x: &DVector<f64>| {
                let val = family.objective_unchecked(c, x)
                    + dual.nu.dot(&family.equality_residual_unchecked(x))
                    + dual.lambda.dot(&family.inequality_residual(x).expect("checked dims"));
                (val, lagrangian_grad(family, c, x, dual))
            };
            let rep = minimize_unconstrained(f, &DVector::zeros(family.n()), cfg)?;
            if !rep.converged {
                log::warn!(
                    "Lagrangian minimization stopped at projected-gradient norm {:e}",
                    rep.final_projected_grad_norm
                );
            }
            Ok(PrimalRecovery {
                x: rep.x,
                inner_iterations: rep.iterations,
                inner_grad_norm: rep.final_projected_grad_norm,
                converged: rep.converged,
            })
        }
    }
}

/// `d(λ, ν)` and the minimizer it was evaluated at.
pub fn dual_function(
    family: &ProblemFamily,
    c: &DVector<f64>,
    dual: &DualEstimate,
) -> Result<(f64, PrimalRecovery)> {
    let rec = lagrangian_minimizer(family, c, dual, &BoxSolveConfig::oracle())?;
    let value = lagrangian_value(family, c, &rec.x, dual)?;
    Ok((value, rec))
}

/// `(∇_λ d, ∇_ν d) = (g(x*), h(x*))`.
pub fn dual_gradients(
    family: &ProblemFamily,
    c: &DVector<f64>,
    recovery: &PrimalRecovery,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_c(family, c)?;
    Ok((
        family.inequality_residual(&recovery.x)?,
        family.equality_residual(&recovery.x)?,
    ))
}

/// `argmin_{l≤x≤u} f + νᵀh + ρ‖h‖²`, warm-started from `warm_start` (clamped
/// into the box) or from the projection of the origin.
pub fn primal_recovery_box(
    family: &ProblemFamily,
    c: &DVector<f64>,
    nu: &DVector<f64>,
    rho: f64,
    warm_start: Option<&DVector<f64>>,
    cfg: &BoxSolveConfig,
) -> Result<PrimalRecovery> {
    check_c(family, c)?;
    check_dim("nu", family.p(), nu.len())?;
    if !(rho > 0.0) {
        return Err(DpxError::InvalidArgument(format!("rho must be positive, got {rho}")));
    }
    let x0 = match warm_start {
        Some(w) => {
            check_dim("warm start", family.n(), w.len())?;
            w.clone()
        }
        None => DVector::zeros(family.n()),
    };
    let a = family.a();
    let f = |x: &DVector<f64>| {
        let h = family.equality_residual_unchecked(x);
        let val = family.objective_unchecked(c, x) + nu.dot(&h) + rho * h.norm_squared();
        let grad = family.objective_grad_unchecked(c, x) + a.tr_mul(&(nu + &h * (2.0 * rho)));
        (val, grad)
    };
    let rep = minimize_box(f, &x0, family.lower(), family.upper(), cfg)?;
    if !rep.converged {
        log::debug!(
            "box recovery stopped after {} iterations at projected-gradient norm {:e}",
            rep.iterations,
            rep.final_projected_grad_norm
        );
    }
    Ok(PrimalRecovery {
        x: rep.x,
        inner_iterations: rep.iterations,
        inner_grad_norm: rep.final_projected_grad_norm,
        converged: rep.converged,
    })
}

/// `d_ρ(ν)` over the box, returned with its minimizer.
pub fn box_augmented_dual(
    family: &ProblemFamily,
    c: &DVector<f64>,
    nu: &DVector<f64>,
    rho: f64,
    warm_start: Option<&DVector<f64>>,
    cfg: &BoxSolveConfig,
) -> Result<(f64, PrimalRecovery)> {
    let rec = primal_recovery_box(family, c, nu, rho, warm_start, cfg)?;
    let value = augmented_lagrangian_value(family, c, &rec.x, nu, rho)?;
    Ok((value, rec))
}

/// Closed-form `argmin_x f + νᵀh + ρ‖h‖²` without the box (convex QP only):
/// solves `(2Q + 2ρAᵀA)x = −(c + Aᵀν − 2ρAᵀb)`.
pub fn augmented_minimizer_unboxed(
    family: &ProblemFamily,
    c: &DVector<f64>,
    nu: &DVector<f64>,
    rho: f64,
) -> Result<DVector<f64>> {
    check_c(family, c)?;
    check_dim("nu", family.p(), nu.len())?;
    if family.mode() != Mode::ConvexQp {
        return Err(DpxError::InvalidArgument(
            "closed-form augmented minimizer requires a convex QP".into(),
        ));
    }
    let a = family.a();
    let hess = family.q() * 2.0 + a.tr_mul(a) * (2.0 * rho);
    let rhs = -(c + a.tr_mul(&(nu - family.b() * (2.0 * rho))));
    let chol = hess
        .cholesky()
        .ok_or_else(|| DpxError::InvalidArgument("augmented Hessian not positive definite".into()))?;
    Ok(chol.solve(&rhs))
}

/// How predicted multipliers are mapped back to a primal point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Recovery {
    /// Unconstrained minimization of the full Lagrangian (Deep Dual Ascent).
    Unconstrained,
    /// Box-constrained minimization of the augmented Lagrangian (Deep ALM).
    BoxAugmented { rho: f64 },
}

/// The composite primal proxy: predicted duals in, primal point out.
pub fn recover_primal_proxy(
    family: &ProblemFamily,
    c: &DVector<f64>,
    dual: &DualEstimate,
    recovery: Recovery,
    warm_start: Option<&DVector<f64>>,
    cfg: &BoxSolveConfig,
) -> Result<PrimalRecovery> {
    let rec = match recovery {
        Recovery::Unconstrained => lagrangian_minimizer(family, c, dual, cfg)?,
        Recovery::BoxAugmented { rho } => {
            primal_recovery_box(family, c, dual.nu(), rho, warm_start, cfg)?
        }
    };
    if !rec.converged {
        log::info!(
            "primal recovery did not converge (projected-gradient norm {:e})",
            rec.inner_grad_norm
        );
    }
    Ok(rec)
}
