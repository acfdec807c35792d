//! Ground-truth solvers: projected dual ascent (convex QP only) and a
//! LANCELOT-style augmented Lagrangian over the box, plus a KKT certificate
//! and the ground-truth archive.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::codec::{archive_hash, Decoder, Encoder};
use crate::error::{check_dim, DpxError, Result};
use crate::inner_solver::{project_box, projected_gradient_norm, BoxSolveConfig};
use crate::lagrangian::{
    dual_function, dual_gradients, lagrangian_minimizer, lagrangian_value, primal_recovery_box, DualEstimate,
    PrimalRecovery,
};
use crate::problems::{BoundSide, Dataset, Mode, ProblemFamily, ProblemInstance};

/// Certified primal/dual optimum of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub index: usize,
    pub x_star: DVector<f64>,
    pub nu_star: DVector<f64>,
    /// One entry per inequality row of the family.
    pub lambda_star: DVector<f64>,
    pub f_star: f64,
    pub d_star: f64,
    pub kkt_residual: f64,
    pub feasible: bool,
    pub iterations: usize,
}

impl GroundTruth {
    pub fn dual(&self) -> DualEstimate {
        DualEstimate::new(self.lambda_star.clone(), self.nu_star.clone())
    }
}

/// `max` of stationarity `‖∇f + Aᵀν + Gᵀλ‖∞`, primal infeasibility, negative
/// multipliers and complementarity `|λᵢgᵢ|`.
pub fn kkt_check(family: &ProblemFamily, c: &DVector<f64>, gt: &GroundTruth) -> Result<f64> {
    check_dim("lambda_star", family.m(), gt.lambda_star.len())?;
    check_dim("nu_star", family.p(), gt.nu_star.len())?;
    let x = &gt.x_star;
    let stat = family.objective_grad(c, x)? + family.a().tr_mul(&gt.nu_star) + family.inequality_jacobian_t(&gt.lambda_star);
    let h = family.equality_residual(x)?;
    let g = family.inequality_residual(x)?;
    let mut worst = stat.amax().max(h.amax());
    for (k, &gk) in g.iter().enumerate() {
        let l = gt.lambda_star[k];
        worst = worst.max(gk.max(0.0)).max((-l).max(0.0)).max((l * gk).abs());
    }
    Ok(if worst.is_nan() { f64::INFINITY } else { worst })
}

/// Multipliers for the bound rows from stationarity of the equality-only
/// Lagrangian: `r = ∇f(x) + Aᵀν`, `λ = [r]₊` on active lower bounds and
/// `[−r]₊` on active upper bounds.
pub fn recover_bound_multipliers(family: &ProblemFamily, c: &DVector<f64>, x: &DVector<f64>, nu: &DVector<f64>) -> Result<DVector<f64>> {
    let r = family.objective_grad(c, x)? + family.a().tr_mul(nu);
    let (l, u) = (family.lower(), family.upper());
    let near = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + b.abs());
    Ok(DVector::from_iterator(
        family.m(),
        family.inequality_rows().iter().map(|&(i, side)| match side {
            BoundSide::Lower if near(x[i], l[i]) => r[i].max(0.0),
            BoundSide::Upper if near(x[i], u[i]) => (-r[i]).max(0.0),
            _ => 0.0,
        }),
    ))
}

// ---------------------------------------------------------------------------
// Projected dual ascent

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdaConfig {
    /// Fixed stepsize; `None` uses `1/L` from [`dual_lipschitz`].
    pub alpha: Option<f64>,
    pub max_iters: usize,
    /// Stop when infeasibility and complementarity fall below this.
    pub tol: f64,
    /// Nesterov extrapolation between steps, restarted whenever the step
    /// stops agreeing with the momentum direction. The step map itself is
    /// unchanged; `false` gives the textbook iteration.
    pub accelerated: bool,
}

impl Default for PdaConfig {
    fn default() -> Self {
        Self {
            alpha: None,
            max_iters: 2_000_000,
            tol: 1e-10,
            accelerated: true,
        }
    }
}

/// Constraint Jacobian `J = [G; A]` and offset `o` with `[g(x); h(x)] = Jx + o`.
fn stacked_constraints(family: &ProblemFamily) -> (DMatrix<f64>, DVector<f64>) {
    let (n, m, p) = (family.n(), family.m(), family.p());
    let mut j = DMatrix::zeros(m + p, n);
    let mut o = DVector::zeros(m + p);
    for (k, &(i, side)) in family.inequality_rows().iter().enumerate() {
        match side {
            BoundSide::Lower => {
                j[(k, i)] = -1.0;
                o[k] = family.lower()[i];
            }
            BoundSide::Upper => {
                j[(k, i)] = 1.0;
                o[k] = -family.upper()[i];
            }
        }
    }
    j.view_mut((m, 0), (p, n)).copy_from(family.a());
    o.rows_mut(m, p).copy_from(&(-family.b()));
    (j, o)
}

/// Lipschitz constant of `∇d` for the convex QP: `λ_max(J (2Q)⁻¹ Jᵀ)` where `J`
/// stacks the inequality and equality Jacobians.
pub fn dual_lipschitz(family: &ProblemFamily) -> Result<f64> {
    if family.mode() != Mode::ConvexQp {
        return Err(DpxError::InvalidArgument("dual ascent requires a convex QP".into()));
    }
    let (j, _) = stacked_constraints(family);
    let inv_jt = family.hessian_cholesky().solve(&j.transpose());
    let mut h = &j * inv_jt;
    h = (&h + h.transpose()) * 0.5;
    Ok(h.symmetric_eigenvalues().max())
}

/// One step from `(λᵏ, νᵏ)`: `xᵏ = argmin L`, then `ν + α·h(xᵏ)` and
/// `[λ + α·g(xᵏ)]₊`. Returns the new multipliers and `xᵏ`.
pub fn pda_step(
    family: &ProblemFamily,
    c: &DVector<f64>,
    dual: &DualEstimate,
    alpha: f64,
) -> Result<(DualEstimate, PrimalRecovery)> {
    let rec = lagrangian_minimizer(family, c, dual, &BoxSolveConfig::oracle())?;
    let (g, h) = dual_gradients(family, c, &rec)?;
    let next = DualEstimate::new(dual.lambda() + g * alpha, dual.nu() + h * alpha);
    Ok((next, rec))
}

/// Classical projected dual ascent from `(λ, ν) = (0, 0)`.
pub fn projected_dual_ascent(family: &ProblemFamily, c: &DVector<f64>, cfg: &PdaConfig) -> Result<GroundTruth> {
    projected_dual_ascent_from(family, c, &DualEstimate::zeros(family), cfg)
}

/// Projected dual ascent from a given multiplier estimate. Reaching the
/// iteration cap yields `feasible = false`; a non-finite dual value is an error.
pub fn projected_dual_ascent_from(
    family: &ProblemFamily,
    c: &DVector<f64>,
    start: &DualEstimate,
    cfg: &PdaConfig,
) -> Result<GroundTruth> {
    let alpha = match cfg.alpha {
        Some(a) if a > 0.0 && a.is_finite() => a,
        Some(a) => return Err(DpxError::InvalidArgument(format!("bad stepsize {a}"))),
        None => 1.0 / dual_lipschitz(family)?,
    };
    if family.mode() != Mode::ConvexQp {
        return Err(DpxError::InvalidArgument("dual ascent requires a convex QP".into()));
    }
    check_dim("c", family.n(), c.len())?;
    check_dim("lambda", family.m(), start.lambda().len())?;
    check_dim("nu", family.p(), start.nu().len())?;

    // Work in multiplier space: x(μ) = x_c − Bμ and ∇d(μ) = a − Hμ with
    // B = (2Q)⁻¹Jᵀ, H = JB, x_c = −(2Q)⁻¹c, a = Jx_c + o.
    let (m, p) = (family.m(), family.p());
    let (j, o) = stacked_constraints(family);
    let chol = family.hessian_cholesky();
    let b = chol.solve(&j.transpose());
    let h = &j * &b;
    let x_c = -chol.solve(c);
    let a = &j * &x_c + o;

    let mut mu = DVector::zeros(m + p);
    mu.rows_mut(0, m).copy_from(start.lambda());
    mu.rows_mut(m, p).copy_from(start.nu());
    let gradient_at = |point: &DVector<f64>, out: &mut DVector<f64>| -> Result<()> {
        out.copy_from(&a);
        out.gemv(-1.0, &h, point, 1.0);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(DpxError::Divergence(format!(
                "non-finite dual gradient (‖μ‖∞ = {:e})",
                point.amax()
            )));
        }
        Ok(())
    };
    let residual_of = |point: &DVector<f64>, grad: &DVector<f64>| {
        let mut r = grad.rows(m, p).amax();
        for k in 0..m {
            r = r.max(grad[k].max(0.0)).max((point[k] * grad[k]).abs());
        }
        r
    };
    let mut grad = DVector::zeros(m + p);
    let mut y = mu.clone();
    let mut t = 1.0_f64;
    let mut iterations = 0;
    let converged = loop {
        if !cfg.accelerated || iterations % 16 == 0 || iterations >= cfg.max_iters {
            // with momentum the step gradient is taken at y, so test μ separately
            gradient_at(&mu, &mut grad)?;
            let residual = residual_of(&mu, &grad);
            if residual <= cfg.tol {
                break true;
            }
            if iterations >= cfg.max_iters {
                log::warn!("projected dual ascent hit {iterations} iterations with residual {residual:e}");
                break false;
            }
        }
        if cfg.accelerated {
            gradient_at(&y, &mut grad)?;
            let mut next = &y + &grad * alpha;
            for k in 0..m {
                next[k] = next[k].max(0.0);
            }
            let step = &next - &mu;
            if (&next - &y).dot(&step) < 0.0 {
                t = 1.0;
                y.copy_from(&next);
            } else {
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                y = &next + step * ((t - 1.0) / t_next);
                t = t_next;
            }
            mu = next;
        } else {
            mu.axpy(alpha, &grad, 1.0);
            for k in 0..m {
                mu[k] = mu[k].max(0.0);
            }
        }
        iterations += 1;
    };

    let dual = DualEstimate::new(mu.rows(0, m).into_owned(), mu.rows(m, p).into_owned());
    let x = &x_c - &b * &mu;
    let value = lagrangian_value(family, c, &x, &dual)?;
    if !value.is_finite() {
        return Err(DpxError::Divergence(format!("dual value {value} after {iterations} iterations")));
    }
    let mut gt = GroundTruth {
        index: 0,
        f_star: family.objective(c, &x)?,
        d_star: value,
        x_star: x,
        nu_star: dual.nu().clone(),
        lambda_star: dual.lambda().clone(),
        kkt_residual: 0.0,
        feasible: converged,
        iterations,
    };
    gt.kkt_residual = kkt_check(family, c, &gt)?;
    Ok(gt)
}

// ---------------------------------------------------------------------------
// Classical augmented Lagrangian

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlmConfig {
    pub rho0: f64,
    /// Penalty growth per outer iteration.
    pub gamma: f64,
    pub rho_max: f64,
    pub max_outer: usize,
    pub eq_tol: f64,
    pub stationarity_tol: f64,
    pub inner: BoxSolveConfig,
    /// Number of starting points for nonconvex families (cold start included).
    pub starts: usize,
    pub seed: u64,
}

impl Default for AlmConfig {
    fn default() -> Self {
        Self {
            rho0: 10.0,
            gamma: 2.0,
            rho_max: 1e8,
            max_outer: 200,
            eq_tol: 1e-9,
            stationarity_tol: 1e-8,
            inner: BoxSolveConfig {
                max_iters: 2000,
                ..BoxSolveConfig::oracle()
            },
            starts: 8,
            seed: 0x0a11,
        }
    }
}

impl AlmConfig {
    fn validate(&self) -> Result<()> {
        if !(self.rho0 > 0.0) || !(self.gamma >= 1.0) || !(self.rho_max >= self.rho0) || self.max_outer == 0 {
            return Err(DpxError::InvalidArgument(format!("bad ALM config {self:?}")));
        }
        self.inner.validate()
    }
}

/// LANCELOT-style iterations from the cold start `project_box(0)`:
/// `xᵏ = argmin_{l≤x≤u} f + νᵀh + ρ‖h‖²` (warm-started), then `ν ← ν + ρ·h(xᵏ)`.
pub fn classical_alm(family: &ProblemFamily, c: &DVector<f64>, cfg: &AlmConfig) -> Result<GroundTruth> {
    let x0 = project_box(&DVector::zeros(family.n()), family.lower(), family.upper())?;
    classical_alm_from(family, c, &x0, cfg)
}

/// [`classical_alm`] from an arbitrary start point.
///
/// The reported `ν*` is the first-order estimate `ν + 2ρh(x*)`, the multiplier
/// for which `x*` is exactly stationary; `λ*` follows from
/// [`recover_bound_multipliers`].
pub fn classical_alm_from(family: &ProblemFamily, c: &DVector<f64>, x0: &DVector<f64>, cfg: &AlmConfig) -> Result<GroundTruth> {
    cfg.validate()?;
    check_dim("c", family.n(), c.len())?;
    let mut nu = DVector::zeros(family.p());
    let mut rho = cfg.rho0;
    let mut x = project_box(x0, family.lower(), family.upper())?;
    let mut outer = 0;
    let (mut h_norm, mut pg);
    loop {
        let rec = primal_recovery_box(family, c, &nu, rho, Some(&x), &cfg.inner)?;
        x = rec.x;
        let h = family.equality_residual_unchecked(&x);
        h_norm = h.norm();
        pg = rec.inner_grad_norm;
        outer += 1;
        let done = h_norm <= cfg.eq_tol && pg <= cfg.stationarity_tol;
        if done || outer >= cfg.max_outer {
            nu += &h * (2.0 * rho);
            break;
        }
        nu += &h * rho;
        if nu.iter().any(|v| !v.is_finite()) {
            return Err(DpxError::Divergence(format!("multipliers diverged at outer iteration {outer}")));
        }
        rho = (rho * cfg.gamma).min(cfg.rho_max);
    }
    let feasible = h_norm <= cfg.eq_tol && pg <= cfg.stationarity_tol;
    if !feasible {
        log::warn!("classical ALM stopped after {outer} outer iterations: ‖h‖ = {h_norm:e}, pg = {pg:e}");
    }
    finish_ground_truth(family, c, x, nu, feasible, outer)
}

fn finish_ground_truth(
    family: &ProblemFamily,
    c: &DVector<f64>,
    x: DVector<f64>,
    nu: DVector<f64>,
    feasible: bool,
    iterations: usize,
) -> Result<GroundTruth> {
    let lambda = recover_bound_multipliers(family, c, &x, &nu)?;
    let dual = DualEstimate::new(lambda.clone(), nu.clone());
    let d_star = match family.mode() {
        Mode::ConvexQp => dual_function(family, c, &dual)?.0,
        // the global dual is out of reach; report the Lagrangian at the local optimum
        Mode::NonconvexSin => lagrangian_value(family, c, &x, &dual)?,
    };
    let mut gt = GroundTruth {
        index: 0,
        f_star: family.objective(c, &x)?,
        d_star,
        x_star: x,
        nu_star: nu,
        lambda_star: lambda,
        kkt_residual: 0.0,
        feasible,
        iterations,
    };
    gt.kkt_residual = kkt_check(family, c, &gt)?;
    Ok(gt)
}

/// Start points for multi-start: the cold start followed by seeded uniform
/// draws from the box (unbounded sides are capped at one unit past the finite bound).
pub fn multistart_points(family: &ProblemFamily, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let n = family.n();
    let (l, u) = (family.lower(), family.upper());
    let cold = DVector::from_fn(n, |i, _| 0.0f64.max(l[i]).min(u[i]));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = vec![cold];
    for _ in 1..count {
        pts.push(DVector::from_fn(n, |i, _| {
            let lo = if l[i].is_finite() { l[i] } else { u[i].min(0.0) - 1.0 };
            let hi = if u[i].is_finite() { u[i] } else { lo + 1.0 };
            if hi > lo {
                rng.gen_range(lo..=hi)
            } else {
                lo
            }
        }));
    }
    pts
}

/// Ground truth for one instance. Convex families use a single cold-started
/// run; nonconvex families keep the best of `cfg.starts` runs (feasible first,
/// then lowest objective).
pub fn solve_instance(family: &ProblemFamily, inst: &ProblemInstance, cfg: &AlmConfig) -> Result<GroundTruth> {
    let mut gt = match family.mode() {
        Mode::ConvexQp => classical_alm(family, &inst.c, cfg)?,
        Mode::NonconvexSin => {
            let seed = cfg.seed ^ (inst.index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            let mut best: Option<GroundTruth> = None;
            for x0 in multistart_points(family, cfg.starts.max(1), seed) {
                let run = match classical_alm_from(family, &inst.c, &x0, cfg) {
                    Ok(r) => r,
                    Err(e) => {
                        log::warn!("instance {}: start failed: {e}", inst.index);
                        continue;
                    }
                };
                let better = match &best {
                    None => true,
                    Some(b) => match (run.feasible, b.feasible) {
                        (true, false) => true,
                        (false, true) => false,
                        _ => run.f_star < b.f_star,
                    },
                };
                if better {
                    best = Some(run);
                }
            }
            best.ok_or_else(|| DpxError::Divergence(format!("every start failed on instance {}", inst.index)))?
        }
    };
    gt.index = inst.index;
    Ok(gt)
}

/// Ground truth for many instances; parallel unless `serial`.
pub fn solve_instances(
    family: &ProblemFamily,
    instances: &[ProblemInstance],
    cfg: &AlmConfig,
    serial: bool,
) -> Result<Vec<GroundTruth>> {
    if serial {
        instances.iter().map(|i| solve_instance(family, i, cfg)).collect()
    } else {
        instances.par_iter().map(|i| solve_instance(family, i, cfg)).collect()
    }
}

/// Projected-gradient stationarity of the Lagrangian at `gt` over the box.
pub fn box_stationarity(family: &ProblemFamily, c: &DVector<f64>, gt: &GroundTruth) -> Result<f64> {
    let g = family.objective_grad(c, &gt.x_star)? + family.a().tr_mul(&gt.nu_star);
    Ok(projected_gradient_norm(&gt.x_star, &g, family.lower(), family.upper()))
}

// ---------------------------------------------------------------------------
// Archive

const MAGIC: &[u8] = b"DPXG1";
const VERSION: u32 = 1;

/// Ground truths for one dataset, keyed by global instance index.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSet {
    pub dataset_hash: String,
    pub entries: BTreeMap<usize, GroundTruth>,
}

impl GroundTruthSet {
    pub fn new(dataset_hash: String, truths: Vec<GroundTruth>) -> Self {
        Self {
            dataset_hash,
            entries: truths.into_iter().map(|g| (g.index, g)).collect(),
        }
    }

    pub fn get(&self, index: usize) -> Result<&GroundTruth> {
        self.entries.get(&index).ok_or(DpxError::MissingGroundTruth(index))
    }

    pub fn to_bytes(&self, family: &ProblemFamily) -> Vec<u8> {
        let mut enc = Encoder::new(MAGIC);
        enc.u32(VERSION);
        enc.usize(self.dataset_hash.len());
        enc.bytes(self.dataset_hash.as_bytes());
        enc.usize(family.n());
        enc.usize(family.m());
        enc.usize(family.p());
        enc.usize(self.entries.len());
        for gt in self.entries.values() {
            enc.usize(gt.index);
            enc.vector(&gt.x_star);
            enc.vector(&gt.nu_star);
            enc.vector(&gt.lambda_star);
            enc.f64(gt.f_star);
            enc.f64(gt.d_star);
            enc.f64(gt.kkt_residual);
            enc.u8(u8::from(gt.feasible));
            enc.usize(gt.iterations);
        }
        enc.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut dec = Decoder::open(bytes, MAGIC)?;
        let version = dec.u32()?;
        if version != VERSION {
            return Err(DpxError::Format(format!("unsupported ground-truth version {version}")));
        }
        let hash_len = dec.bounded(256, "hash length")?;
        let dataset_hash = String::from_utf8(dec.bytes(hash_len)?.to_vec())
            .map_err(|_| DpxError::Format("dataset hash is not UTF-8".into()))?;
        let n = dec.bounded(1 << 16, "n")?;
        let m = dec.bounded(1 << 17, "m")?;
        let p = dec.bounded(1 << 16, "p")?;
        let count = dec.bounded(1 << 26, "entry count")?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let gt = GroundTruth {
                index: dec.usize()?,
                x_star: dec.vector(n)?,
                nu_star: dec.vector(p)?,
                lambda_star: dec.vector(m)?,
                f_star: dec.f64()?,
                d_star: dec.f64()?,
                kkt_residual: dec.f64()?,
                feasible: dec.u8()? != 0,
                iterations: dec.usize()?,
            };
            if entries.insert(gt.index, gt).is_some() {
                return Err(DpxError::Format("duplicate instance index".into()));
            }
        }
        dec.finish()?;
        Ok(Self { dataset_hash, entries })
    }

    pub fn save(&self, family: &ProblemFamily, path: &Path) -> Result<String> {
        let bytes = self.to_bytes(family);
        std::fs::write(path, &bytes)?;
        Ok(archive_hash(&bytes))
    }

    /// Loads an archive and refuses it unless it was computed for `dataset`.
    pub fn load_for(path: &Path, dataset: &Dataset, dataset_hash: &str) -> Result<Self> {
        let set = Self::from_bytes(&std::fs::read(path)?)?;
        if set.dataset_hash != dataset_hash {
            return Err(DpxError::Format(format!(
                "ground truth was computed for dataset {}, not {dataset_hash}",
                set.dataset_hash
            )));
        }
        let fam = &dataset.family;
        for gt in set.entries.values() {
            check_dim("x_star", fam.n(), gt.x_star.len())?;
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::fixtures::two_var;
    use crate::problems::{generate_dataset, generate_family};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn hand_optimum() -> GroundTruth {
        GroundTruth {
            index: 0,
            x_star: v(&[0.5, 0.5]),
            nu_star: v(&[-1.0]),
            lambda_star: v(&[0.0, 0.0]),
            f_star: 0.5,
            d_star: 0.5,
            kkt_residual: 0.0,
            feasible: true,
            iterations: 0,
        }
    }

    #[test]
    fn kkt_examples() {
        let fam = two_var(Mode::ConvexQp);
        let c = DVector::zeros(2);
        let gt = hand_optimum();
        assert!(kkt_check(&fam, &c, &gt).unwrap() <= 1e-9);

        let mut off = gt.clone();
        off.x_star[0] += 1e-3;
        assert!(kkt_check(&fam, &c, &off).unwrap() > 1e-4);

        let mut neg = gt.clone();
        neg.lambda_star[1] = -0.25;
        assert!(kkt_check(&fam, &c, &neg).unwrap() >= 0.25);
    }

    #[test]
    fn two_var_lipschitz() {
        // J = [−I; 1 1], (2Q)⁻¹ = I/2 → eigenvalues of JJᵀ/2 are 1.5, 0.5, 0
        let l = dual_lipschitz(&two_var(Mode::ConvexQp)).unwrap();
        assert!((l - 1.5).abs() < 1e-12);
        assert!(dual_lipschitz(&two_var(Mode::NonconvexSin)).is_err());
    }

    #[test]
    fn pda_two_var() {
        let fam = two_var(Mode::ConvexQp);
        for accelerated in [false, true] {
            let cfg = PdaConfig {
                alpha: Some(0.5),
                accelerated,
                ..PdaConfig::default()
            };
            let gt = projected_dual_ascent(&fam, &DVector::zeros(2), &cfg).unwrap();
            assert!(gt.feasible);
            assert!((&gt.x_star - v(&[0.5, 0.5])).amax() < 1e-9);
            assert!((gt.nu_star[0] + 1.0).abs() < 1e-9);
            assert!(gt.lambda_star.amax() < 1e-9);
            assert!((gt.f_star - 0.5).abs() < 1e-9 && (gt.d_star - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn pda_fixed_point_at_optimum() {
        let fam = two_var(Mode::ConvexQp);
        let opt = hand_optimum().dual();
        let (next, rec) = pda_step(&fam, &DVector::zeros(2), &opt, 0.5).unwrap();
        assert!((next.nu() - opt.nu()).amax() < 1e-15);
        assert!(next.lambda().amax() == 0.0);
        assert!((&rec.x - v(&[0.5, 0.5])).amax() < 1e-15);
        let gt = projected_dual_ascent_from(&fam, &DVector::zeros(2), &opt, &PdaConfig::default()).unwrap();
        assert_eq!(gt.iterations, 0);
    }

    #[test]
    fn pda_oversized_step_does_not_converge() {
        let fam = generate_family(5, 10, 4, Mode::ConvexQp).unwrap();
        let c = DVector::from_element(10, 0.3);
        let l = dual_lipschitz(&fam).unwrap();
        let cfg = PdaConfig {
            alpha: Some(4.0 / l),
            max_iters: 400,
            tol: 1e-8,
            accelerated: false,
        };
        match projected_dual_ascent(&fam, &c, &cfg) {
            Ok(gt) => assert!(!gt.feasible),
            Err(e) => assert!(matches!(e, DpxError::Divergence(_)), "{e}"),
        }
    }

    #[test]
    fn alm_two_var() {
        let fam = two_var(Mode::ConvexQp);
        let gt = classical_alm(&fam, &DVector::zeros(2), &AlmConfig::default()).unwrap();
        assert!(gt.feasible);
        assert!((&gt.x_star - v(&[0.5, 0.5])).amax() < 1e-9);
        assert!((gt.nu_star[0] + 1.0).abs() < 1e-8);
        assert!(gt.lambda_star.amax() < 1e-9);
        assert!((gt.f_star - 0.5).abs() < 1e-9 && (gt.d_star - 0.5).abs() < 1e-8);
        assert!(gt.kkt_residual <= 1e-8);
    }

    #[test]
    fn alm_with_active_bounds() {
        // c = (3, 0): optimum is x = (0, 1) with λ₁ = 1, ν = −2
        let fam = two_var(Mode::ConvexQp);
        let c = v(&[3.0, 0.0]);
        let gt = classical_alm(&fam, &c, &AlmConfig::default()).unwrap();
        assert!((&gt.x_star - v(&[0.0, 1.0])).amax() < 1e-9);
        assert!((gt.nu_star[0] + 2.0).abs() < 1e-7);
        assert!((gt.lambda_star[0] - 1.0).abs() < 1e-7 && gt.lambda_star[1] == 0.0);
        assert!(gt.kkt_residual < 1e-7);
        let pda = projected_dual_ascent(&fam, &c, &PdaConfig::default()).unwrap();
        assert!((&pda.x_star - &gt.x_star).amax() < 1e-8);
    }

    #[test]
    fn alm_beats_witness_and_agrees_with_pda() {
        let fam = generate_family(11, 12, 5, Mode::ConvexQp).unwrap();
        let ds = generate_dataset(fam.clone(), 10, -1.0, 1.0, 3, 0.5).unwrap();
        for inst in ds.train.iter().chain(&ds.test) {
            let gt = solve_instance(&fam, inst, &AlmConfig::default()).unwrap();
            assert_eq!(gt.index, inst.index);
            assert!(gt.feasible);
            assert!(fam.equality_residual(&gt.x_star).unwrap().norm() <= 1e-9);
            assert!(gt.f_star <= fam.objective(&inst.c, fam.witness().unwrap()).unwrap() + 1e-12);
            assert!(gt.kkt_residual <= 1e-6, "{}", gt.kkt_residual);
            assert!((gt.f_star - gt.d_star).abs() <= 1e-6 * (1.0 + gt.f_star.abs()));
            let pda = projected_dual_ascent(&fam, &inst.c, &PdaConfig::default()).unwrap();
            assert!(pda.feasible);
            assert!((&pda.x_star - &gt.x_star).norm() <= 1e-5);
        }
    }

    #[test]
    fn nonconvex_multistart_small() {
        let fam = generate_family(2, 4, 2, Mode::NonconvexSin).unwrap();
        let ds = generate_dataset(fam.clone(), 6, -1.0, 1.0, 5, 0.5).unwrap();
        for inst in &ds.test {
            let gt = solve_instance(&fam, inst, &AlmConfig::default()).unwrap();
            assert!(gt.feasible);
            assert!(gt.kkt_residual <= 1e-6, "{}", gt.kkt_residual);
            // no single start does better than the selected run
            for x0 in multistart_points(&fam, 8, 99) {
                let run = classical_alm_from(&fam, &inst.c, &x0, &AlmConfig::default()).unwrap();
                if run.feasible {
                    assert!(gt.f_star <= run.f_star + 1e-6);
                }
            }
        }
    }

    #[test]
    fn multistart_points_stay_in_box() {
        let fam = generate_family(2, 6, 2, Mode::NonconvexSin).unwrap();
        let pts = multistart_points(&fam, 8, 1);
        assert_eq!(pts.len(), 8);
        assert!(pts[0].iter().all(|&v| v == 0.0));
        for p in &pts {
            assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        assert_eq!(pts, multistart_points(&fam, 8, 1));
    }

    #[test]
    fn archive_roundtrip_and_refusal() {
        let fam = two_var(Mode::ConvexQp);
        let ds = generate_dataset(fam.clone(), 4, -0.5, 0.5, 1, 0.5).unwrap();
        let truths = solve_instances(&fam, &ds.test, &AlmConfig::default(), true).unwrap();
        let set = GroundTruthSet::new(ds.hash(), truths);
        assert!(set.get(ds.test[0].index).is_ok());
        assert!(matches!(set.get(0), Err(DpxError::MissingGroundTruth(0))));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.bin");
        set.save(&fam, &path).unwrap();
        let back = GroundTruthSet::load_for(&path, &ds, &ds.hash()).unwrap();
        assert_eq!(back, set);

        let other = generate_dataset(fam.clone(), 4, -0.5, 0.5, 2, 0.5).unwrap();
        assert!(GroundTruthSet::load_for(&path, &other, &other.hash()).is_err());

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[20] ^= 1;
        assert!(GroundTruthSet::from_bytes(&bytes).is_err());
    }

    #[test]
    fn parallel_and_serial_agree() {
        let fam = generate_family(4, 8, 3, Mode::ConvexQp).unwrap();
        let ds = generate_dataset(fam.clone(), 8, -1.0, 1.0, 9, 0.5).unwrap();
        let a = solve_instances(&fam, &ds.test, &AlmConfig::default(), true).unwrap();
        let b = solve_instances(&fam, &ds.test, &AlmConfig::default(), false).unwrap();
        assert_eq!(a, b);
    }
}
