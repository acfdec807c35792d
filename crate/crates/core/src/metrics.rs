//! Test-set metrics: dual optimality gap, primal objective, equality and
//! inequality residuals and distance to the reference solution.
//!
//! For Deep Dual Ascent the gap is `d(λ*, ν*) − d(λ̂, ν̂)` with the unconstrained
//! Lagrangian dual. For Deep ALM it is `d_ρ(ν*) − d_ρ(ν̂)` with the box-augmented
//! dual at the penalty of the epoch being evaluated. On nonconvex families the
//! reference solution is a best-effort local optimum, so the solution residual
//! there only indicates proximity to one particular local solution.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_dim, DpxError, Result};
use crate::inner_solver::BoxSolveConfig;
use crate::lagrangian::{
    box_augmented_dual, lagrangian_value, recover_primal_proxy, DualEstimate, Recovery,
};
use crate::neural::{relu_clamp_head, MlpModel};
use crate::oracle::{GroundTruth, GroundTruthSet};
use crate::problems::{ProblemFamily, ProblemInstance};
use crate::training::{Method, WarmStartStore};

pub const CSV_HEADER: [&str; 12] = [
    "epoch",
    "dual_gap_mean",
    "dual_gap_std",
    "primal_obj_mean",
    "primal_obj_std",
    "optimal_obj_mean",
    "eq_res_mean",
    "eq_res_std",
    "ineq_res_mean",
    "ineq_res_std",
    "sol_res_mean",
    "sol_res_std",
];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub dual_gap_mean: f64,
    pub dual_gap_std: f64,
    pub primal_obj_mean: f64,
    pub primal_obj_std: f64,
    pub optimal_obj_mean: f64,
    pub eq_res_mean: f64,
    pub eq_res_std: f64,
    pub ineq_res_mean: f64,
    pub ineq_res_std: f64,
    pub sol_res_mean: f64,
    pub sol_res_std: f64,
}

impl MetricsRecord {
    fn fields(&self) -> [f64; 11] {
        [
            self.dual_gap_mean,
            self.dual_gap_std,
            self.primal_obj_mean,
            self.primal_obj_std,
            self.optimal_obj_mean,
            self.eq_res_mean,
            self.eq_res_std,
            self.ineq_res_mean,
            self.ineq_res_std,
            self.sol_res_mean,
            self.sol_res_std,
        ]
    }
}

/// Metrics of a single test instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMetrics {
    pub index: usize,
    pub dual_gap: f64,
    pub primal_obj: f64,
    pub optimal_obj: f64,
    pub eq_res: f64,
    pub ineq_res: f64,
    pub sol_res: f64,
    pub x_hat: DVector<f64>,
}

impl InstanceMetrics {
    /// `|f(x̂) − f*| / (1 + |f*|)`
    pub fn relative_objective_error(&self) -> f64 {
        (self.primal_obj - self.optimal_obj).abs() / (1.0 + self.optimal_obj.abs())
    }
}

/// Evaluates one raw network output column against the ground truth.
///
/// `rho` is required for Deep ALM. `warm` seeds the box solve for `x̂`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_prediction(
    family: &ProblemFamily,
    c: &DVector<f64>,
    raw_output: &DVector<f64>,
    method: Method,
    gt: &GroundTruth,
    rho: Option<f64>,
    warm: Option<&DVector<f64>>,
    cfg: &BoxSolveConfig,
) -> Result<InstanceMetrics> {
    check_dim("raw output", method.out_dim(family), raw_output.len())?;
    let (x_hat, dual_gap) = match method {
        Method::Dda => {
            let raw = DMatrix::from_column_slice(raw_output.len(), 1, raw_output.as_slice());
            let (l, n) = relu_clamp_head(&raw, family.m())?;
            let dual = DualEstimate::new(l.column(0).into_owned(), n.column(0).into_owned());
            let rec = recover_primal_proxy(family, c, &dual, Recovery::Unconstrained, None, cfg)?;
            let d_hat = lagrangian_value(family, c, &rec.x, &dual)?;
            (rec.x, gt.d_star - d_hat)
        }
        Method::DeepAlm => {
            let rho = rho.ok_or_else(|| DpxError::InvalidArgument("Deep ALM evaluation needs rho".into()))?;
            let (d_hat, rec) = box_augmented_dual(family, c, raw_output, rho, warm, cfg)?;
            let (d_ref, _) = box_augmented_dual(family, c, &gt.nu_star, rho, Some(&gt.x_star), cfg)?;
            (rec.x, d_ref - d_hat)
        }
    };
    let g = family.inequality_residual(&x_hat)?;
    Ok(InstanceMetrics {
        index: gt.index,
        dual_gap,
        primal_obj: family.objective(c, &x_hat)?,
        optimal_obj: gt.f_star,
        eq_res: family.equality_residual(&x_hat)?.norm(),
        ineq_res: g.map(|v| v.max(0.0)).norm(),
        sol_res: (&x_hat - &gt.x_star).norm(),
        x_hat,
    })
}

/// Eval-mode prediction for a single instance followed by
/// [`evaluate_prediction`] at oracle-grade inner tolerance.
pub fn evaluate_instance(
    family: &ProblemFamily,
    c: &DVector<f64>,
    model: &MlpModel,
    method: Method,
    gt: &GroundTruth,
    rho: Option<f64>,
) -> Result<InstanceMetrics> {
    let out = model.predict(&DMatrix::from_column_slice(c.len(), 1, c.as_slice()))?;
    evaluate_prediction(family, c, &out.column(0).into_owned(), method, gt, rho, None, &BoxSolveConfig::oracle())
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and population standard deviation of every metric.
pub fn aggregate(records: &[InstanceMetrics], epoch: usize) -> Result<MetricsRecord> {
    if records.is_empty() {
        return Err(DpxError::InvalidArgument("cannot aggregate an empty set".into()));
    }
    let col = |f: fn(&InstanceMetrics) -> f64| mean_std(records.iter().map(f));
    let (dual_gap_mean, dual_gap_std) = col(|r| r.dual_gap);
    let (primal_obj_mean, primal_obj_std) = col(|r| r.primal_obj);
    let (optimal_obj_mean, _) = col(|r| r.optimal_obj);
    let (eq_res_mean, eq_res_std) = col(|r| r.eq_res);
    let (ineq_res_mean, ineq_res_std) = col(|r| r.ineq_res);
    let (sol_res_mean, sol_res_std) = col(|r| r.sol_res);
    Ok(MetricsRecord {
        epoch,
        dual_gap_mean,
        dual_gap_std,
        primal_obj_mean,
        primal_obj_std,
        optimal_obj_mean,
        eq_res_mean,
        eq_res_std,
        ineq_res_mean,
        ineq_res_std,
        sol_res_mean,
        sol_res_std,
    })
}

/// Test-set evaluator that keeps its own warm starts for `x̂` between epochs.
pub struct Evaluator<'a> {
    family: &'a ProblemFamily,
    instances: &'a [ProblemInstance],
    truths: &'a GroundTruthSet,
    method: Method,
    pub cfg: BoxSolveConfig,
    pub serial: bool,
    store: WarmStartStore,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        family: &'a ProblemFamily,
        instances: &'a [ProblemInstance],
        truths: &'a GroundTruthSet,
        method: Method,
        serial: bool,
    ) -> Result<Self> {
        for inst in instances {
            truths.get(inst.index)?;
        }
        Ok(Self {
            family,
            instances,
            truths,
            method,
            cfg: BoxSolveConfig::oracle(),
            serial,
            store: WarmStartStore::new(),
        })
    }

    /// Eval-mode forward over the whole set, then per-instance metrics.
    pub fn evaluate(&mut self, epoch: usize, model: &MlpModel, rho: f64) -> Result<(MetricsRecord, Vec<InstanceMetrics>)> {
        let n = self.family.n();
        let inputs = DMatrix::from_fn(n, self.instances.len(), |r, b| self.instances[b].c[r]);
        let outputs = model.predict(&inputs)?;
        let rho = (self.method == Method::DeepAlm).then_some(rho);
        let store = &self.store;
        let eval_one = |b: usize| {
            let inst = &self.instances[b];
            let gt = self.truths.get(inst.index)?;
            evaluate_prediction(
                self.family,
                &inst.c,
                &outputs.column(b).into_owned(),
                self.method,
                gt,
                rho,
                store.get(inst.index),
                &self.cfg,
            )
        };
        let per: Vec<InstanceMetrics> = if self.serial {
            (0..self.instances.len()).map(eval_one).collect::<Result<_>>()?
        } else {
            (0..self.instances.len()).into_par_iter().map(eval_one).collect::<Result<_>>()?
        };
        if self.method == Method::DeepAlm {
            for r in &per {
                self.store.insert(self.family, r.index, r.x_hat.clone())?;
            }
        }
        Ok((aggregate(&per, epoch)?, per))
    }
}

/// Writes the header and one row per record.
pub fn write_metrics_csv<W: Write>(out: W, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        let mut row = vec![r.epoch.to_string()];
        row.extend(r.fields().iter().map(|v| format!("{v:e}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a metrics CSV written by [`write_metrics_csv`].
pub fn read_metrics_csv<R: std::io::Read>(input: R) -> Result<Vec<MetricsRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(DpxError::Format(format!("unexpected metrics header {header:?}")));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let num = |k: usize| -> Result<f64> {
            row[k]
                .parse()
                .map_err(|_| DpxError::Format(format!("bad number '{}' in column {}", &row[k], CSV_HEADER[k])))
        };
        out.push(MetricsRecord {
            epoch: row[0]
                .parse()
                .map_err(|_| DpxError::Format(format!("bad epoch '{}'", &row[0])))?,
            dual_gap_mean: num(1)?,
            dual_gap_std: num(2)?,
            primal_obj_mean: num(3)?,
            primal_obj_std: num(4)?,
            optimal_obj_mean: num(5)?,
            eq_res_mean: num(6)?,
            eq_res_std: num(7)?,
            ineq_res_mean: num(8)?,
            ineq_res_std: num(9)?,
            sol_res_mean: num(10)?,
            sol_res_std: num(11)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{classical_alm, AlmConfig};
    use crate::problems::fixtures::two_var;
    use crate::problems::Mode;

    fn metric(v: f64) -> InstanceMetrics {
        InstanceMetrics {
            index: 0,
            dual_gap: v,
            primal_obj: v,
            optimal_obj: v,
            eq_res: v,
            ineq_res: v,
            sol_res: v,
            x_hat: DVector::zeros(1),
        }
    }

    fn two_var_truth() -> (ProblemFamily, GroundTruth) {
        let fam = two_var(Mode::ConvexQp);
        let gt = classical_alm(&fam, &DVector::zeros(2), &AlmConfig::default()).unwrap();
        (fam, gt)
    }

    #[test]
    fn aggregate_basics() {
        let r = aggregate(&[metric(0.0), metric(2.0)], 3).unwrap();
        assert_eq!(r.epoch, 3);
        assert_eq!((r.dual_gap_mean, r.dual_gap_std), (1.0, 1.0));
        let c = aggregate(&vec![metric(4.0); 5], 1).unwrap();
        assert_eq!(c.eq_res_std, 0.0);
        assert!(aggregate(&[], 1).is_err());
    }

    #[test]
    fn aggregate_permutation_invariant_and_matches_two_pass() {
        let vals = [0.3, -1.7, 2.9, 1e-3, 8.25, -0.5];
        let recs: Vec<_> = vals.iter().map(|&v| metric(v)).collect();
        let mut rev = recs.clone();
        rev.reverse();
        let a = aggregate(&recs, 1).unwrap();
        let b = aggregate(&rev, 1).unwrap();
        assert!((a.sol_res_mean - b.sol_res_mean).abs() <= 1e-12);
        assert!((a.sol_res_std - b.sol_res_std).abs() <= 1e-12);
        let mean = vals.iter().sum::<f64>() / 6.0;
        let std = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 6.0).sqrt();
        assert!((a.dual_gap_mean - mean).abs() <= 1e-12 && (a.dual_gap_std - std).abs() <= 1e-12);
    }

    #[test]
    fn zero_duals_on_two_var() {
        // c = 0, zero duals: x̂ = 0, ‖h‖ = 1, gap = 0.5 − 0
        let (fam, gt) = two_var_truth();
        let m = evaluate_prediction(
            &fam,
            &DVector::zeros(2),
            &DVector::zeros(3),
            Method::Dda,
            &gt,
            None,
            None,
            &BoxSolveConfig::oracle(),
        )
        .unwrap();
        assert!(m.x_hat.amax() == 0.0);
        assert!((m.eq_res - 1.0).abs() < 1e-15);
        assert!((m.dual_gap - 0.5).abs() < 1e-8);
        assert_eq!(m.ineq_res, 0.0);
    }

    #[test]
    fn optimum_in_optimum_out() {
        let (fam, gt) = two_var_truth();
        let c = DVector::zeros(2);
        let raw = DVector::from_vec(vec![gt.lambda_star[0], gt.lambda_star[1], gt.nu_star[0]]);
        let m = evaluate_prediction(&fam, &c, &raw, Method::Dda, &gt, None, None, &BoxSolveConfig::oracle()).unwrap();
        assert!(m.dual_gap.abs() < 1e-8);
        assert!(m.eq_res <= 1e-8 && m.sol_res <= 1e-7);

        let m = evaluate_prediction(
            &fam,
            &c,
            &gt.nu_star,
            Method::DeepAlm,
            &gt,
            Some(10.0),
            None,
            &BoxSolveConfig::oracle(),
        )
        .unwrap();
        assert!(m.dual_gap.abs() < 1e-8);
        assert!(m.eq_res <= 1e-8 && m.sol_res <= 1e-7);
        assert_eq!(m.ineq_res, 0.0);
    }

    #[test]
    fn dalm_gap_nonnegative_and_ineq_zero() {
        let (fam, gt) = two_var_truth();
        let c = DVector::zeros(2);
        for nu in [-3.0, -1.5, 0.0, 2.0] {
            let m = evaluate_prediction(
                &fam,
                &c,
                &DVector::from_element(1, nu),
                Method::DeepAlm,
                &gt,
                Some(10.0),
                None,
                &BoxSolveConfig::oracle(),
            )
            .unwrap();
            assert!(m.dual_gap >= -1e-9, "{nu}: {}", m.dual_gap);
            assert_eq!(m.ineq_res, 0.0);
        }
        assert!(evaluate_prediction(
            &fam,
            &c,
            &DVector::zeros(1),
            Method::DeepAlm,
            &gt,
            None,
            None,
            &BoxSolveConfig::oracle()
        )
        .is_err());
    }

    #[test]
    fn csv_roundtrip_and_header() {
        let recs = vec![
            aggregate(&[metric(0.25), metric(1.0)], 1).unwrap(),
            aggregate(&[metric(1e-9), metric(3.0)], 2).unwrap(),
        ];
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "epoch,dual_gap_mean,dual_gap_std,primal_obj_mean,primal_obj_std,optimal_obj_mean,eq_res_mean,eq_res_std,ineq_res_mean,ineq_res_std,sol_res_mean,sol_res_std\n"
        ));
        assert_eq!(read_metrics_csv(&buf[..]).unwrap(), recs);

        let mut empty = Vec::new();
        write_metrics_csv(&mut empty, &[]).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().lines().count(), 1);
    }
}
