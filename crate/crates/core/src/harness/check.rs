use clap::ValueEnum;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checks::{dual_gradient_check, projected_gradient_reference, random_network_check};
use crate::error::Result;
use crate::inner_solver::{minimize_box_traced, BoxSolveConfig};
use crate::lagrangian::DualEstimate;
use crate::oracle::{classical_alm, pda_step, projected_dual_ascent, solve_instance, AlmConfig, PdaConfig};
use crate::problems::fixtures::two_var;
use crate::problems::{generate_family, Mode, ProblemInstance};
use crate::training::{train_dda_epoch, DualTable, Method, TrainConfig};

/// Faults that can be switched on to confirm the checks catch them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    /// Negate the analytic dual gradient.
    DualGradientSign,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CheckOptions {
    pub quick: bool,
    pub fault: Option<Fault>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn(&CheckOptions) -> Result<(bool, String)>;

const CHECKS: [(&str, Check); 7] = [
    ("network-gradients", network_gradients),
    ("dual-gradients", dual_gradients),
    ("box-solver", box_solver),
    ("oracle-two-var", oracle_two_var),
    ("oracle-cross-check", oracle_cross_check),
    ("pda-equivalence", pda_equivalence),
    ("nonconvex-kkt", nonconvex_kkt),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|(n, _)| *n).collect()
}

/// Runs every named check. An error inside a check counts as a failure.
pub fn run_checks(opts: &CheckOptions) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|(name, check)| {
            let (passed, detail) = check(opts).unwrap_or_else(|e| (false, format!("error: {e}")));
            log::debug!("{name}: {detail}");
            CheckResult { name, passed, detail }
        })
        .collect()
}

fn verdict(worst: f64, tol: f64, what: &str) -> (bool, String) {
    (worst <= tol, format!("worst {what} {worst:.3e} (limit {tol:.0e})"))
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(lo..hi))
}

fn network_gradients(opts: &CheckOptions) -> Result<(bool, String)> {
    let seeds = if opts.quick { 5 } else { 20 };
    let mut worst = 0.0_f64;
    for seed in 0..seeds {
        for (bn, train) in [(false, false), (false, true), (true, true), (true, false)] {
            worst = worst.max(random_network_check(seed, 8, 3, bn, train)?.max_rel_error);
        }
    }
    Ok(verdict(worst, 1e-5, "relative error"))
}

fn dual_gradients(opts: &CheckOptions) -> Result<(bool, String)> {
    let points = if opts.quick { 10 } else { 50 };
    let fam = generate_family(3, 10, 4, Mode::ConvexQp)?;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let flip = opts.fault == Some(Fault::DualGradientSign);
    let mut worst = 0.0_f64;
    for _ in 0..points {
        let c = uniform(&mut rng, fam.n(), -5.0, 5.0);
        let dual = DualEstimate::new(uniform(&mut rng, fam.m(), 0.1, 2.0), uniform(&mut rng, fam.p(), -2.0, 2.0));
        worst = worst.max(dual_gradient_check(&fam, &c, &dual, flip)?);
    }
    Ok(verdict(worst, 1e-4, "relative error"))
}

fn box_solver(opts: &CheckOptions) -> Result<(bool, String)> {
    let (count, max_n) = if opts.quick { (20, 20) } else { (100, 50) };
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let mut worst = 0.0_f64;
    let mut escapes = 0usize;
    for _ in 0..count {
        let n = rng.gen_range(1..=max_n);
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let h = m.transpose() * &m / n as f64 + DMatrix::identity(n, n) * 0.1;
        let q = uniform(&mut rng, n, -5.0, 5.0);
        let lower = uniform(&mut rng, n, -2.0, 0.0);
        let upper = &lower + uniform(&mut rng, n, 0.1, 3.0);
        let x0 = uniform(&mut rng, n, -3.0, 3.0);
        let f = |x: &DVector<f64>| {
            let hx = &h * x;
            (0.5 * x.dot(&hx) + q.dot(x), hx + &q)
        };
        let report = minimize_box_traced(f, &x0, &lower, &upper, &BoxSolveConfig::oracle(), |x, _| {
            if (0..n).any(|i| x[i] < lower[i] || x[i] > upper[i]) {
                escapes += 1;
            }
        })?;
        let reference = projected_gradient_reference(&h, &q, &lower, &upper, 1_000_000);
        worst = worst.max((&report.x - reference).norm());
    }
    let (ok, detail) = verdict(worst, 1e-6, "distance to reference");
    Ok((ok && escapes == 0, format!("{detail}, {escapes} out-of-box iterates")))
}

fn oracle_two_var(_: &CheckOptions) -> Result<(bool, String)> {
    let fam = two_var(Mode::ConvexQp);
    let c = DVector::zeros(2);
    let runs = [
        classical_alm(&fam, &c, &AlmConfig::default())?,
        projected_dual_ascent(&fam, &c, &PdaConfig::default())?,
    ];
    let mut worst = 0.0_f64;
    for gt in &runs {
        let errs = [
            (gt.x_star[0] - 0.5).abs(),
            (gt.x_star[1] - 0.5).abs(),
            (gt.nu_star[0] + 1.0).abs(),
            gt.lambda_star.amax(),
            (gt.f_star - 0.5).abs(),
            (gt.d_star - 0.5).abs(),
        ];
        worst = errs.iter().fold(worst, |w, &e| w.max(e));
    }
    Ok(verdict(worst, 1e-8, "deviation from hand solution"))
}

fn oracle_cross_check(opts: &CheckOptions) -> Result<(bool, String)> {
    let (count, n, p) = if opts.quick { (3, 10, 4) } else { (10, 20, 8) };
    let fam = generate_family(11, n, p, Mode::ConvexQp)?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut dx, mut kkt) = (0.0_f64, 0.0_f64);
    for _ in 0..count {
        let c = uniform(&mut rng, n, -20.0, 20.0);
        let alm = classical_alm(&fam, &c, &AlmConfig::default())?;
        let pda = projected_dual_ascent(&fam, &c, &PdaConfig::default())?;
        dx = dx.max((&alm.x_star - &pda.x_star).norm());
        kkt = kkt.max(alm.kkt_residual);
    }
    let ok = dx <= 1e-5 && kkt <= 1e-6;
    Ok((ok, format!("worst ‖Δx‖ {dx:.3e} (limit 1e-5), worst KKT {kkt:.3e} (limit 1e-6)")))
}

fn pda_equivalence(opts: &CheckOptions) -> Result<(bool, String)> {
    let steps = if opts.quick { 50 } else { 200 };
    let fam = two_var(Mode::ConvexQp);
    let instances: Vec<ProblemInstance> = [[0.0, 0.0], [3.0, 0.0], [-1.0, 0.5]]
        .iter()
        .enumerate()
        .map(|(index, c)| ProblemInstance {
            c: DVector::from_column_slice(c),
            index,
        })
        .collect();
    let alpha = 0.5;
    let cfg = TrainConfig {
        batch_size: instances.len(),
        ..TrainConfig::new(Method::Dda)
    };
    let mut table = DualTable::new(alpha, fam.m(), fam.m() + fam.p());
    let mut reference: Vec<DualEstimate> = instances.iter().map(|_| DualEstimate::zeros(&fam)).collect();
    let order: Vec<&ProblemInstance> = instances.iter().collect();
    let mut worst = 0.0_f64;
    for _ in 0..steps {
        train_dda_epoch(&mut table, &fam, &order, &cfg)?;
        for (k, inst) in instances.iter().enumerate() {
            reference[k] = pda_step(&fam, &inst.c, &reference[k], alpha)?.0;
            let e = table.entry(inst.index);
            worst = worst
                .max((e.rows(0, fam.m()) - reference[k].lambda()).amax())
                .max((e.rows(fam.m(), fam.p()) - reference[k].nu()).amax());
        }
    }
    Ok(verdict(worst, 1e-12, "per-step deviation"))
}

fn nonconvex_kkt(opts: &CheckOptions) -> Result<(bool, String)> {
    let count = if opts.quick { 2 } else { 6 };
    let fam = generate_family(12, 10, 4, Mode::NonconvexSin)?;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut kkt, mut infeasible) = (0.0_f64, 0usize);
    for index in 0..count {
        let inst = ProblemInstance {
            c: uniform(&mut rng, fam.n(), -20.0, 20.0),
            index,
        };
        let gt = solve_instance(&fam, &inst, &AlmConfig::default())?;
        kkt = kkt.max(gt.kkt_residual);
        infeasible += usize::from(!gt.feasible);
    }
    let (ok, detail) = verdict(kkt, 1e-5, "KKT residual");
    Ok((ok && infeasible == 0, format!("{detail}, {infeasible} infeasible")))
}
