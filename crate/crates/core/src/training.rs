//! Deep Dual Ascent and Deep ALM training loops.
//!
//! Both loops share the same skeleton: predict multipliers for a mini-batch,
//! recover a primal point per sample, use the constraint residuals at that
//! point as the gradient of the dual objective with respect to the predicted
//! multipliers, and push that gradient back into the predictor with an ascent
//! step. The predictor is abstracted by [`DualPredictor`] so that a free
//! per-instance multiplier table can stand in for the network.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, DpxError, Result};
use crate::inner_solver::BoxSolveConfig;
use crate::lagrangian::{
    augmented_lagrangian_value, dual_gradients, lagrangian_minimizer, lagrangian_value, primal_recovery_box,
    DualEstimate,
};
use crate::metrics::MetricsRecord;
use crate::neural::{relu_clamp_head, relu_clamp_head_backward, step, ForwardCache, MlpModel, OptimizerKind, OptimizerState};
use crate::problems::{Dataset, Mode, ProblemFamily, ProblemInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "dda")]
    Dda,
    #[serde(rename = "dalm")]
    DeepAlm,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Dda => "dda",
            Self::DeepAlm => "dalm",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = DpxError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dda" | "dual-ascent" => Ok(Self::Dda),
            "dalm" | "deep-alm" | "alm" => Ok(Self::DeepAlm),
            other => Err(DpxError::InvalidArgument(format!("unknown method '{other}'"))),
        }
    }
}

impl Method {
    /// Width of the network output for a family.
    pub fn out_dim(self, family: &ProblemFamily) -> usize {
        match self {
            Self::Dda => family.m() + family.p(),
            Self::DeepAlm => family.p(),
        }
    }
}

/// How per-sample parameter gradients are combined into one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradReduction {
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub reduction: GradReduction,
    pub rho0: f64,
    pub gamma: f64,
    pub rho_max: f64,
    pub seed: u64,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Inner solves during training.
    pub inner: BoxSolveConfig,
    pub strict_serial: bool,
}

impl TrainConfig {
    /// Published settings: Adam at 5e-4 for Deep Dual Ascent, plain SGD at
    /// 1e-5 for Deep ALM, 200 epochs, batches of 50, `ρ₀ = 10`, `γ = 1.05`.
    pub fn new(method: Method) -> Self {
        let (learning_rate, optimizer) = match method {
            Method::Dda => (5e-4, OptimizerKind::Adam),
            Method::DeepAlm => (1e-5, OptimizerKind::Sgd),
        };
        Self {
            method,
            epochs: 200,
            batch_size: 50,
            learning_rate,
            optimizer,
            reduction: GradReduction::Mean,
            rho0: 10.0,
            gamma: 1.05,
            rho_max: 1e6,
            seed: 0,
            hidden_width: 200,
            hidden_layers: 4,
            inner: BoxSolveConfig::training(),
            strict_serial: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DpxError::InvalidArgument(msg));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2 for batch norm, got {}", self.batch_size));
        }
        if !(self.gamma >= 1.0) || !(self.rho0 > 0.0) || !(self.rho_max >= self.rho0) {
            return bad(format!(
                "need gamma ≥ 1 and 0 < rho0 ≤ rho_max (gamma={}, rho0={}, rho_max={})",
                self.gamma, self.rho0, self.rho_max
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.hidden_width == 0 || self.hidden_layers == 0 {
            return bad("network needs at least one hidden layer of nonzero width".into());
        }
        self.inner.validate()
    }

    pub fn layer_dims(&self, family: &ProblemFamily) -> Vec<usize> {
        let mut dims = vec![family.n()];
        dims.extend(std::iter::repeat(self.hidden_width).take(self.hidden_layers));
        dims.push(self.method.out_dim(family));
        dims
    }

    pub fn init_model(&self, family: &ProblemFamily) -> Result<MlpModel> {
        MlpModel::init_xavier(self.seed, &self.layer_dims(family), true)
    }
}

/// `min(ρ·γ, ρ_max)`.
pub fn rho_update(rho: f64, cfg: &TrainConfig) -> f64 {
    (rho * cfg.gamma).min(cfg.rho_max)
}

/// Last primal solution per instance index, used to warm-start box solves.
#[derive(Debug, Clone, Default)]
pub struct WarmStartStore {
    family_key: Option<(usize, usize, u64)>,
    entries: HashMap<usize, DVector<f64>>,
}

fn family_key(family: &ProblemFamily) -> (usize, usize, u64) {
    let mut acc = 0xcbf2_9ce4_8422_2325u64;
    for v in family.a().iter().chain(family.b().iter()).chain(family.q().iter()) {
        acc = (acc ^ v.to_bits()).wrapping_mul(0x0100_0000_01b3);
    }
    (family.n(), family.p(), acc)
}

impl WarmStartStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Associates the store with `family`, clearing it if it held entries for
    /// a different one.
    pub fn bind(&mut self, family: &ProblemFamily) {
        let key = family_key(family);
        if self.family_key != Some(key) {
            self.entries.clear();
            self.family_key = Some(key);
        }
    }

    pub fn get(&self, index: usize) -> Option<&DVector<f64>> {
        self.entries.get(&index)
    }

    /// Stores `x` for `index`. Points outside the family's box are rejected.
    pub fn insert(&mut self, family: &ProblemFamily, index: usize, x: DVector<f64>) -> Result<()> {
        self.bind(family);
        check_dim("warm start", family.n(), x.len())?;
        let inside = (0..x.len()).all(|i| x[i] >= family.lower()[i] && x[i] <= family.upper()[i]);
        if !inside {
            return Err(DpxError::InvalidArgument(format!("warm start for {index} leaves the box")));
        }
        self.entries.insert(index, x);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub samples: usize,
    pub batches: usize,
    /// Mean Lagrangian (DDA) or augmented Lagrangian (Deep ALM) value at the
    /// recovered primal points.
    pub mean_dual_value: f64,
    pub mean_output_grad_norm: f64,
    pub mean_param_grad_norm: f64,
    pub mean_inner_iterations: f64,
    pub inner_nonconverged: usize,
    /// `(instance index, inner iterations)` sorted by index.
    pub inner_iterations: Vec<(usize, usize)>,
    pub rho: Option<f64>,
}

/// Something that maps a batch of instances to raw multiplier outputs and can
/// be moved along a gradient on those outputs.
pub trait DualPredictor {
    /// Raw outputs, one column per instance.
    fn forward_batch(&mut self, batch: &[&ProblemInstance]) -> Result<DMatrix<f64>>;

    /// Ascent step along `output_grad` (gradient of the summed per-sample
    /// objective with respect to the raw outputs of the last forward pass).
    /// Returns the norm of the parameter gradient that was applied.
    fn ascend(&mut self, batch: &[&ProblemInstance], output_grad: &DMatrix<f64>) -> Result<f64>;
}

/// A network, its optimizer and the cache of the last train-mode forward pass.
pub struct NetworkLearner {
    pub model: MlpModel,
    pub optimizer: OptimizerState,
    pub reduction: GradReduction,
    cache: Option<ForwardCache>,
}

impl NetworkLearner {
    pub fn new(model: MlpModel, optimizer: OptimizerState, reduction: GradReduction) -> Self {
        Self {
            model,
            optimizer,
            reduction,
            cache: None,
        }
    }
}

fn stack_inputs(batch: &[&ProblemInstance]) -> DMatrix<f64> {
    let n = batch.first().map_or(0, |i| i.c.len());
    DMatrix::from_fn(n, batch.len(), |r, b| batch[b].c[r])
}

impl DualPredictor for NetworkLearner {
    fn forward_batch(&mut self, batch: &[&ProblemInstance]) -> Result<DMatrix<f64>> {
        let (out, cache) = self.model.forward(&stack_inputs(batch), true)?;
        self.cache = Some(cache);
        Ok(out)
    }

    fn ascend(&mut self, batch: &[&ProblemInstance], output_grad: &DMatrix<f64>) -> Result<f64> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| DpxError::InvalidArgument("ascend called without a forward pass".into()))?;
        let scaled;
        let grad = match self.reduction {
            GradReduction::Sum => output_grad,
            GradReduction::Mean => {
                scaled = output_grad / batch.len() as f64;
                &scaled
            }
        };
        let grads = self.model.backward(&cache, grad)?;
        let norm = grads.norm();
        step(&mut self.model, &mut self.optimizer, &grads, true)?;
        Ok(norm)
    }
}

/// A free multiplier vector per instance, updated by plain projected ascent
/// with stepsize `alpha`. The first `lambda_dim` entries are kept nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct DualTable {
    pub alpha: f64,
    pub lambda_dim: usize,
    pub out_dim: usize,
    pub entries: HashMap<usize, DVector<f64>>,
}

impl DualTable {
    pub fn new(alpha: f64, lambda_dim: usize, out_dim: usize) -> Self {
        Self {
            alpha,
            lambda_dim,
            out_dim,
            entries: HashMap::new(),
        }
    }

    pub fn entry(&self, index: usize) -> DVector<f64> {
        self.entries.get(&index).cloned().unwrap_or_else(|| DVector::zeros(self.out_dim))
    }
}

impl DualPredictor for DualTable {
    fn forward_batch(&mut self, batch: &[&ProblemInstance]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.out_dim, batch.len());
        for (b, inst) in batch.iter().enumerate() {
            out.set_column(b, &self.entry(inst.index));
        }
        Ok(out)
    }

    fn ascend(&mut self, batch: &[&ProblemInstance], output_grad: &DMatrix<f64>) -> Result<f64> {
        check_dim("table gradient rows", self.out_dim, output_grad.nrows())?;
        for (b, inst) in batch.iter().enumerate() {
            let mut v = self.entry(inst.index) + output_grad.column(b) * self.alpha;
            for k in 0..self.lambda_dim {
                v[k] = v[k].max(0.0);
            }
            self.entries.insert(inst.index, v);
        }
        Ok(output_grad.norm())
    }
}

struct SampleResult {
    index: usize,
    x: DVector<f64>,
    value: f64,
    grad: DVector<f64>,
    iterations: usize,
    converged: bool,
}

fn map_samples<T, F>(items: &[T], serial: bool, f: F) -> Result<Vec<SampleResult>>
where
    T: Sync,
    F: Fn(&T) -> Result<SampleResult> + Sync,
{
    if serial {
        items.iter().map(&f).collect()
    } else {
        items.par_iter().map(&f).collect()
    }
}

/// Batches in order, with a trailing singleton merged into the previous batch
/// so train-mode batch norm always sees at least two samples.
pub fn make_batches(len: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> = (0..len)
        .step_by(batch_size.max(1))
        .map(|s| s..(s + batch_size).min(len))
        .collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().expect("nonempty");
        out.last_mut().expect("nonempty").end = last.end;
    }
    out
}

#[derive(Default)]
struct Accum {
    samples: usize,
    batches: usize,
    value: f64,
    out_norm: f64,
    param_norm: f64,
    iters: usize,
    nonconverged: usize,
    per_sample: Vec<(usize, usize)>,
}

impl Accum {
    fn add(&mut self, r: &SampleResult) {
        self.samples += 1;
        self.value += r.value;
        self.out_norm += r.grad.norm();
        self.iters += r.iterations;
        self.nonconverged += usize::from(!r.converged);
        self.per_sample.push((r.index, r.iterations));
    }

    fn finish(mut self, rho: Option<f64>) -> EpochStats {
        self.per_sample.sort_unstable();
        let s = self.samples.max(1) as f64;
        EpochStats {
            samples: self.samples,
            batches: self.batches,
            mean_dual_value: self.value / s,
            mean_output_grad_norm: self.out_norm / s,
            mean_param_grad_norm: self.param_norm / self.batches.max(1) as f64,
            mean_inner_iterations: self.iters as f64 / s,
            inner_nonconverged: self.nonconverged,
            inner_iterations: self.per_sample,
            rho,
        }
    }
}

/// One epoch of Deep Dual Ascent over `instances` in the given order.
pub fn train_dda_epoch<P: DualPredictor>(
    predictor: &mut P,
    family: &ProblemFamily,
    instances: &[&ProblemInstance],
    cfg: &TrainConfig,
) -> Result<EpochStats> {
    if family.mode() != Mode::ConvexQp {
        return Err(DpxError::InvalidArgument(
            "Deep Dual Ascent needs the closed-form Lagrangian minimizer of a convex QP".into(),
        ));
    }
    let m = family.m();
    let mut acc = Accum::default();
    for range in make_batches(instances.len(), cfg.batch_size) {
        let batch = &instances[range];
        let raw = predictor.forward_batch(batch)?;
        check_dim("predictor output", m + family.p(), raw.nrows())?;
        let (lambda, nu) = relu_clamp_head(&raw, m)?;
        let cols: Vec<usize> = (0..batch.len()).collect();
        let results = map_samples(&cols, cfg.strict_serial, |&b| {
            let inst = batch[b];
            let dual = DualEstimate::new(lambda.column(b).into_owned(), nu.column(b).into_owned());
            let rec = lagrangian_minimizer(family, &inst.c, &dual, &cfg.inner)?;
            let value = lagrangian_value(family, &inst.c, &rec.x, &dual)?;
            if !value.is_finite() {
                return Err(DpxError::NonFinite(format!("dual value at instance {}", inst.index)));
            }
            let (g, h) = dual_gradients(family, &inst.c, &rec)?;
            let mut grad = DVector::zeros(m + family.p());
            grad.rows_mut(0, m).copy_from(&g);
            grad.rows_mut(m, family.p()).copy_from(&h);
            Ok(SampleResult {
                index: inst.index,
                value,
                grad,
                iterations: rec.inner_iterations,
                converged: rec.converged,
                x: rec.x,
            })
        })?;
        let mut gl = DMatrix::zeros(m, batch.len());
        let mut gn = DMatrix::zeros(family.p(), batch.len());
        for (b, r) in results.iter().enumerate() {
            gl.set_column(b, &r.grad.rows(0, m));
            gn.set_column(b, &r.grad.rows(m, family.p()));
            acc.add(r);
        }
        let out_grad = relu_clamp_head_backward(&raw, &gl, &gn)?;
        acc.param_norm += predictor.ascend(batch, &out_grad)?;
        acc.batches += 1;
    }
    Ok(acc.finish(None))
}

/// One epoch of Deep ALM at penalty `rho`. Inner box solves are warm-started
/// from `store` (cold start `project_box(0)`), and the store is updated with
/// every new solution.
pub fn train_dalm_epoch<P: DualPredictor>(
    predictor: &mut P,
    family: &ProblemFamily,
    instances: &[&ProblemInstance],
    cfg: &TrainConfig,
    store: &mut WarmStartStore,
    rho: f64,
) -> Result<EpochStats> {
    if !(rho > 0.0) {
        return Err(DpxError::InvalidArgument(format!("rho must be positive, got {rho}")));
    }
    store.bind(family);
    let p = family.p();
    let mut acc = Accum::default();
    for range in make_batches(instances.len(), cfg.batch_size) {
        let batch = &instances[range];
        let nu = predictor.forward_batch(batch)?;
        check_dim("predictor output", p, nu.nrows())?;
        let cols: Vec<usize> = (0..batch.len()).collect();
        let store_ref = &*store;
        let results = map_samples(&cols, cfg.strict_serial, |&b| {
            let inst = batch[b];
            let nu_b = nu.column(b).into_owned();
            let rec = primal_recovery_box(family, &inst.c, &nu_b, rho, store_ref.get(inst.index), &cfg.inner)?;
            let value = augmented_lagrangian_value(family, &inst.c, &rec.x, &nu_b, rho)?;
            if !value.is_finite() {
                return Err(DpxError::NonFinite(format!("augmented dual value at instance {}", inst.index)));
            }
            Ok(SampleResult {
                index: inst.index,
                value,
                grad: family.equality_residual(&rec.x)?,
                iterations: rec.inner_iterations,
                converged: rec.converged,
                x: rec.x,
            })
        })?;
        let mut out_grad = DMatrix::zeros(p, batch.len());
        for (b, r) in results.into_iter().enumerate() {
            if !r.converged {
                log::debug!("instance {}: inner solve stopped early", r.index);
            }
            out_grad.set_column(b, &r.grad);
            acc.add(&r);
            store.insert(family, r.index, r.x)?;
        }
        acc.param_norm += predictor.ascend(batch, &out_grad)?;
        acc.batches += 1;
    }
    if acc.nonconverged > 0 {
        log::info!("{} of {} inner solves hit the iteration cap", acc.nonconverged, acc.samples);
    }
    Ok(acc.finish(Some(rho)))
}

/// Epoch-by-epoch driver owning the network, optimizer, warm-start store and
/// penalty schedule.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub learner: NetworkLearner,
    pub store: WarmStartStore,
    rho: f64,
    epoch: usize,
}

impl Trainer {
    pub fn new(dataset: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = cfg.init_model(&dataset.family)?;
        Self::with_model(dataset, cfg, model)
    }

    pub fn with_model(dataset: &Dataset, cfg: &TrainConfig, model: MlpModel) -> Result<Self> {
        cfg.validate()?;
        check_dim("model input", dataset.family.n(), model.in_dim())?;
        check_dim("model output", cfg.method.out_dim(&dataset.family), model.out_dim())?;
        if cfg.method == Method::Dda && dataset.family.mode() != Mode::ConvexQp {
            return Err(DpxError::InvalidArgument("Deep Dual Ascent requires a convex QP dataset".into()));
        }
        let mut store = WarmStartStore::new();
        store.bind(&dataset.family);
        Ok(Self {
            learner: NetworkLearner::new(model, OptimizerState::new(cfg.optimizer, cfg.learning_rate)?, cfg.reduction),
            cfg: cfg.clone(),
            store,
            rho: cfg.rho0,
            epoch: 0,
        })
    }

    /// Penalty used by the next epoch.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn model(&self) -> &MlpModel {
        &self.learner.model
    }

    pub fn into_model(self) -> MlpModel {
        self.learner.model
    }

    /// The training order for `epoch`: a permutation drawn from a stream
    /// seeded by `(seed, epoch)` only.
    pub fn epoch_order<'a>(&self, train: &'a [ProblemInstance], epoch: usize) -> Vec<&'a ProblemInstance> {
        let mut order: Vec<&ProblemInstance> = train.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x5f0f_f1e5);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        order
    }

    /// Trains one epoch; returns its stats and the penalty that was used.
    pub fn run_epoch(&mut self, dataset: &Dataset) -> Result<(EpochStats, f64)> {
        let order = self.epoch_order(&dataset.train, self.epoch);
        let rho = self.rho;
        let stats = match self.cfg.method {
            Method::Dda => train_dda_epoch(&mut self.learner, &dataset.family, &order, &self.cfg)?,
            Method::DeepAlm => {
                let s = train_dalm_epoch(&mut self.learner, &dataset.family, &order, &self.cfg, &mut self.store, rho)?;
                self.rho = rho_update(rho, &self.cfg);
                s
            }
        };
        self.epoch += 1;
        Ok((stats, rho))
    }
}

/// Trains for `cfg.epochs` epochs, calling `eval_hook(epoch, model, rho)`
/// (1-based epoch, penalty used during that epoch) after each one. Records
/// returned by the hook form the history.
pub fn run_training<H>(dataset: &Dataset, cfg: &TrainConfig, eval_hook: H) -> Result<(MlpModel, Vec<MetricsRecord>)>
where
    H: FnMut(usize, &MlpModel, f64) -> Result<Option<MetricsRecord>>,
{
    let trainer = Trainer::new(dataset, cfg)?;
    run_training_with(trainer, dataset, eval_hook)
}

/// [`run_training`] starting from an existing trainer.
pub fn run_training_with<H>(mut trainer: Trainer, dataset: &Dataset, mut eval_hook: H) -> Result<(MlpModel, Vec<MetricsRecord>)>
where
    H: FnMut(usize, &MlpModel, f64) -> Result<Option<MetricsRecord>>,
{
    let mut history = Vec::new();
    for _ in 0..trainer.cfg.epochs {
        let (stats, rho) = trainer.run_epoch(dataset)?;
        let epoch = trainer.epochs_done();
        log::info!(
            "epoch {epoch}: mean dual value {:.6e}, mean residual norm {:.3e}, mean inner iterations {:.1}",
            stats.mean_dual_value,
            stats.mean_output_grad_norm,
            stats.mean_inner_iterations
        );
        if let Some(rec) = eval_hook(epoch, trainer.model(), rho)? {
            history.push(rec);
        }
    }
    Ok((trainer.into_model(), history))
}
