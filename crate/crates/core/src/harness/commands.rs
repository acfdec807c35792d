use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use super::{run_checks, CheckArgs, CheckOptions, EvalArgs, GenDataArgs, OracleArgs, RunConfig, CONFIG_FILE, METRICS_FILE, MODEL_FILE};
use crate::error::{DpxError, Result};
use crate::metrics::{write_metrics_csv, Evaluator, MetricsRecord};
use crate::neural::{load_model, save_model};
use crate::oracle::{solve_instances, AlmConfig, GroundTruthSet};
use crate::problems::{generate_dataset, generate_family, Dataset, ProblemInstance};
use crate::training::{rho_update, run_training, TrainConfig};

/// Ground truths whose KKT residual exceeds this are refused.
pub const CERTIFICATION_TOL: f64 = 1e-5;

/// Writes the dataset archive and returns its hash.
pub fn cmd_gen_data(args: &GenDataArgs) -> Result<String> {
    let family = generate_family(args.family_seed.unwrap_or(args.seed), args.n, args.p, args.mode)?;
    let ds = generate_dataset(family, args.count, args.low, args.high, args.seed, args.split)?;
    let hash = ds.save(&args.out)?;
    if let Some(csv_path) = &args.csv {
        ds.write_csv(BufWriter::new(File::create(csv_path)?))?;
    }
    log::info!(
        "{} family n={} p={} m={}: {} train / {} test instances -> {}",
        args.mode,
        ds.family.n(),
        ds.family.p(),
        ds.family.m(),
        ds.train.len(),
        ds.test.len(),
        args.out.display()
    );
    Ok(hash)
}

/// Solves the test split (or every instance with `--all`), certifies each
/// solution and writes the ground-truth archive. Returns the archive hash.
pub fn cmd_oracle(args: &OracleArgs) -> Result<String> {
    let (ds, hash) = Dataset::load(&args.dataset)?;
    if let Some(expected) = &args.dataset_hash {
        if !expected.eq_ignore_ascii_case(&hash) {
            return Err(DpxError::Format(format!(
                "dataset hash {hash} does not match the expected {expected}"
            )));
        }
    }
    let instances: Vec<ProblemInstance> = if args.all {
        ds.train.iter().chain(&ds.test).cloned().collect()
    } else {
        ds.test.clone()
    };
    let truths = solve_instances(&ds.family, &instances, &AlmConfig::default(), args.strict_serial)?;
    let mut worst = 0.0_f64;
    for gt in &truths {
        if !(gt.kkt_residual <= CERTIFICATION_TOL) {
            return Err(DpxError::Certification {
                index: gt.index,
                residual: gt.kkt_residual,
            });
        }
        worst = worst.max(gt.kkt_residual);
    }
    let infeasible = truths.iter().filter(|g| !g.feasible).count();
    if infeasible > 0 {
        log::warn!("{infeasible} instances ended above the feasibility tolerance");
    }
    log::info!("certified {} instances, worst KKT residual {worst:.3e}", truths.len());
    GroundTruthSet::new(hash, truths).save(&ds.family, &args.out)
}

/// Files produced by a training run plus the metric history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics_path: PathBuf,
    pub model_path: PathBuf,
    pub history: Vec<MetricsRecord>,
}

/// Penalty used in the last epoch of a run with this configuration.
pub fn final_rho(cfg: &TrainConfig) -> f64 {
    let mut rho = cfg.rho0;
    for _ in 1..cfg.epochs {
        rho = rho_update(rho, cfg);
    }
    rho
}

/// Trains, evaluating on the test split every `eval_every` epochs and after
/// the last one. The metrics CSV is rewritten after each evaluation so a run
/// in progress can be inspected.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (ds, hash) = Dataset::load(&cfg.dataset)?;
    let truths = GroundTruthSet::load_for(&cfg.ground_truth, &ds, &hash)?;
    let tc = cfg.train_config();

    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join(CONFIG_FILE), serde_json::to_string_pretty(cfg)?)?;
    let metrics_path = cfg.output_dir.join(METRICS_FILE);
    let model_path = cfg.output_dir.join(MODEL_FILE);
    write_metrics_csv(File::create(&metrics_path)?, &[])?;

    let mut evaluator = Evaluator::new(&ds.family, &ds.test, &truths, tc.method, tc.strict_serial)?;
    let mut written: Vec<MetricsRecord> = Vec::new();
    let (model, history) = run_training(&ds, &tc, |epoch, model, rho| {
        if epoch % cfg.eval_every != 0 && epoch != tc.epochs {
            return Ok(None);
        }
        let (rec, _) = evaluator.evaluate(epoch, model, rho)?;
        log::info!(
            "eval epoch {epoch}: dual gap {:.4e}, eq residual {:.4e}, objective {:.6e} (optimal {:.6e})",
            rec.dual_gap_mean,
            rec.eq_res_mean,
            rec.primal_obj_mean,
            rec.optimal_obj_mean
        );
        written.push(rec.clone());
        write_metrics_csv(BufWriter::new(File::create(&metrics_path)?), &written)?;
        Ok(Some(rec))
    })?;
    save_model(&model, &model_path)?;
    Ok(TrainOutcome {
        metrics_path,
        model_path,
        history,
    })
}

/// Evaluates a saved model on the test split and writes one metrics row.
pub fn cmd_eval(args: &EvalArgs) -> Result<MetricsRecord> {
    let cfg = RunConfig::from_json_file(&args.config)?;
    cfg.validate()?;
    let (ds, hash) = Dataset::load(&cfg.dataset)?;
    let truths = GroundTruthSet::load_for(&cfg.ground_truth, &ds, &hash)?;
    let model_path = args.model.clone().unwrap_or_else(|| cfg.output_dir.join(MODEL_FILE));
    let model = load_model(&model_path, Some(cfg.method.out_dim(&ds.family)))?;
    if model.in_dim() != ds.family.n() {
        return Err(DpxError::Dimension {
            what: "model input",
            expected: ds.family.n(),
            got: model.in_dim(),
        });
    }
    let tc = cfg.train_config();
    let rho = args.rho.unwrap_or_else(|| final_rho(&tc));
    if !(rho > 0.0) {
        return Err(DpxError::InvalidArgument(format!("rho must be positive, got {rho}")));
    }
    let serial = cfg.strict_serial || args.strict_serial;
    let mut evaluator = Evaluator::new(&ds.family, &ds.test, &truths, cfg.method, serial)?;
    let (rec, _) = evaluator.evaluate(cfg.epochs, &model, rho)?;
    let rows = std::slice::from_ref(&rec);
    match &args.out {
        Some(path) => write_metrics_csv(File::create(path)?, rows)?,
        None => write_metrics_csv(std::io::stdout().lock(), rows)?,
    }
    Ok(rec)
}

/// Prints one line per named check; true iff every check passed.
pub fn cmd_check(args: &CheckArgs) -> bool {
    let results = run_checks(&CheckOptions {
        quick: args.quick,
        fault: args.inject_fault,
    });
    for r in &results {
        println!("{} {:<20} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed", results.len());
    failed == 0
}
