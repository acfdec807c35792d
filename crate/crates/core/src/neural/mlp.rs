use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, DpxError, Result};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    fn apply(&self, input: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = &self.weight * input;
        for mut col in z.column_iter_mut() {
            col += &self.bias;
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
    pub running_mean: DVector<f64>,
    pub running_var: DVector<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            gamma: DVector::from_element(width, 1.0),
            beta: DVector::zeros(width),
            running_mean: DVector::zeros(width),
            running_var: DVector::from_element(width, 1.0),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }
}

/// Feedforward ReLU network. Every hidden layer is
/// `affine → batch norm (optional) → ReLU`; the output layer is affine only.
/// Activations are stored one column per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub(crate) layers: Vec<Dense>,
    /// One per hidden layer, or empty when batch norm is disabled.
    pub(crate) norms: Vec<BatchNorm>,
}

struct BnCache {
    xhat: DMatrix<f64>,
    inv_std: DVector<f64>,
}

struct LayerCache {
    input: DMatrix<f64>,
    bn: Option<BnCache>,
    /// Pre-ReLU activations of hidden layers.
    pre_relu: Option<DMatrix<f64>>,
}

/// Intermediate values retained by [`MlpModel::forward`] for [`MlpModel::backward`].
pub struct ForwardCache {
    train_mode: bool,
    dims: Vec<usize>,
    batch: usize,
    layers: Vec<LayerCache>,
}

impl ForwardCache {
    pub fn train_mode(&self) -> bool {
        self.train_mode
    }
}

/// Parameter gradients, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<(DMatrix<f64>, DVector<f64>)>,
    pub norms: Vec<(DVector<f64>, DVector<f64>)>,
}

impl ParamGrads {
    /// Flat views in the same order as [`MlpModel::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.push(w.as_slice());
            out.push(b.as_slice());
        }
        for (g, b) in &self.norms {
            out.push(g.as_slice());
            out.push(b.as_slice());
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
        return Err(DpxError::InvalidArgument(format!("bad layer dimensions {dims:?}")));
    }
    Ok(())
}

impl MlpModel {
    /// Xavier-uniform weights `U[±√(6/(fan_in+fan_out))]`, zero biases,
    /// batch-norm `γ = 1, β = 0`.
    pub fn init_xavier(seed: u64, dims: &[usize], batchnorm: bool) -> Result<Self> {
        validate_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    weight: DMatrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-bound..=bound)),
                    bias: DVector::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self::assemble(layers, dims, batchnorm))
    }

    /// All weights and biases zero.
    pub fn zeros(dims: &[usize], batchnorm: bool) -> Result<Self> {
        validate_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| Dense {
                weight: DMatrix::zeros(w[1], w[0]),
                bias: DVector::zeros(w[1]),
            })
            .collect();
        Ok(Self::assemble(layers, dims, batchnorm))
    }

    /// Five affine layers `in → w → w → w → w → out` with batch norm.
    pub fn dual_predictor(seed: u64, in_dim: usize, width: usize, out_dim: usize) -> Result<Self> {
        Self::init_xavier(seed, &[in_dim, width, width, width, width, out_dim], true)
    }

    fn assemble(layers: Vec<Dense>, dims: &[usize], batchnorm: bool) -> Self {
        let norms = if batchnorm {
            dims[1..dims.len() - 1].iter().map(|&w| BatchNorm::new(w)).collect()
        } else {
            Vec::new()
        };
        Self { layers, norms }
    }

    pub(crate) fn from_parts(layers: Vec<Dense>, norms: Vec<BatchNorm>) -> Result<Self> {
        if layers.is_empty() {
            return Err(DpxError::InvalidArgument("model needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            check_dim("layer chain", w[0].weight.nrows(), w[1].weight.ncols())?;
        }
        for l in &layers {
            check_dim("bias", l.weight.nrows(), l.bias.len())?;
        }
        if !norms.is_empty() {
            check_dim("batch-norm count", layers.len() - 1, norms.len())?;
            for (l, bn) in layers.iter().zip(&norms) {
                check_dim("batch-norm width", l.weight.nrows(), bn.gamma.len())?;
                if bn.running_var.iter().any(|&v| !(v > 0.0)) {
                    return Err(DpxError::InvalidArgument("running variance must be positive".into()));
                }
            }
        }
        Ok(Self { layers, norms })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].weight.ncols()];
        dims.extend(self.layers.iter().map(|l| l.weight.nrows()));
        dims
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.nrows())
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn has_batchnorm(&self) -> bool {
        !self.norms.is_empty()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn norms(&self) -> &[BatchNorm] {
        &self.norms
    }

    pub fn norms_mut(&mut self) -> &mut [BatchNorm] {
        &mut self.norms
    }

    /// Flat mutable views: `(W, b)` per layer, then `(γ, β)` per batch norm.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        for bn in &mut self.norms {
            out.push(bn.gamma.as_mut_slice());
            out.push(bn.beta.as_mut_slice());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum::<usize>()
            + self.norms.iter().map(|b| 2 * b.gamma.len()).sum::<usize>()
    }

    /// Forward pass. `input` is `in_dim × B`. Train mode normalizes with batch
    /// statistics (requires `B ≥ 2`) and updates running statistics.
    pub fn forward(&mut self, input: &DMatrix<f64>, train_mode: bool) -> Result<(DMatrix<f64>, ForwardCache)> {
        let (out, cache, stats) = self.run(input, train_mode)?;
        for (bn, (mean, var)) in self.norms.iter_mut().zip(stats) {
            let m = bn.momentum;
            bn.running_mean = &bn.running_mean * (1.0 - m) + mean * m;
            bn.running_var = &bn.running_var * (1.0 - m) + var * m;
        }
        Ok((out, cache))
    }

    /// Eval-mode forward on an immutable model.
    pub fn forward_eval(&self, input: &DMatrix<f64>) -> Result<(DMatrix<f64>, ForwardCache)> {
        let (out, cache, _) = self.run(input, false)?;
        Ok((out, cache))
    }

    /// Eval-mode output only.
    pub fn predict(&self, input: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward_eval(input)?.0)
    }

    /// Returns batch `(mean, unbiased variance)` per batch norm in train mode.
    #[allow(clippy::type_complexity)]
    fn run(
        &self,
        input: &DMatrix<f64>,
        train_mode: bool,
    ) -> Result<(DMatrix<f64>, ForwardCache, Vec<(DVector<f64>, DVector<f64>)>)> {
        check_dim("input rows", self.in_dim(), input.nrows())?;
        let batch = input.ncols();
        if batch == 0 || (train_mode && self.has_batchnorm() && batch < 2) {
            return Err(DpxError::InvalidArgument(format!(
                "batch of {batch} samples is too small for this forward mode"
            )));
        }
        let dims = self.dims();
        let last = self.layers.len() - 1;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut stats = Vec::new();
        let mut act = input.clone();
        for k in 0..self.layers.len() {
            let z = self.layers[k].apply(&act);
            if k == last {
                caches.push(LayerCache {
                    input: act,
                    bn: None,
                    pre_relu: None,
                });
                act = z;
                break;
            }
            let (y, bn_cache) = match self.norms.get(k) {
                None => (z, None),
                Some(bn) if train_mode => {
                    let (y, c, mean, var) = batchnorm_train(bn, &z);
                    stats.push((mean, var));
                    (y, Some(c))
                }
                Some(bn) => {
                    let (y, c) = batchnorm_eval(bn, &z);
                    (y, Some(c))
                }
            };
            let a = y.map(|v| v.max(0.0));
            caches.push(LayerCache {
                input: act,
                bn: bn_cache,
                pre_relu: Some(y),
            });
            act = a;
        }
        if act.iter().any(|v| !v.is_finite()) {
            return Err(DpxError::NonFinite("network output".into()));
        }
        let cache = ForwardCache {
            train_mode,
            dims,
            batch,
            layers: caches,
        };
        Ok((act, cache, stats))
    }

    /// Reverse-mode gradients of `Σ output_grad ⊙ output` with respect to every
    /// parameter, including batch-norm scale/shift and, in train mode, the
    /// dependence of the batch statistics on the inputs.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &DMatrix<f64>) -> Result<ParamGrads> {
        if cache.dims != self.dims() || cache.layers.len() != self.layers.len() {
            return Err(DpxError::InvalidArgument("forward cache does not match model".into()));
        }
        check_dim("output_grad rows", self.out_dim(), output_grad.nrows())?;
        check_dim("output_grad columns", cache.batch, output_grad.ncols())?;

        let n_layers = self.layers.len();
        let mut layer_grads = vec![(DMatrix::zeros(0, 0), DVector::zeros(0)); n_layers];
        let mut norm_grads = vec![(DVector::zeros(0), DVector::zeros(0)); self.norms.len()];

        let mut d = output_grad.clone();
        for k in (0..n_layers).rev() {
            let lc = &cache.layers[k];
            if let Some(y) = &lc.pre_relu {
                d.zip_apply(y, |g, yv| {
                    if yv <= 0.0 {
                        *g = 0.0;
                    }
                });
                if let (Some(bn), Some(bc)) = (self.norms.get(k), &lc.bn) {
                    let (dz, dgamma, dbeta) = batchnorm_backward(bn, bc, &d, cache.train_mode);
                    norm_grads[k] = (dgamma, dbeta);
                    d = dz;
                }
            }
            let dw = &d * lc.input.transpose();
            let db = row_sums(&d);
            let dx = (k > 0).then(|| self.layers[k].weight.tr_mul(&d));
            layer_grads[k] = (dw, db);
            if let Some(dx) = dx {
                d = dx;
            }
        }
        Ok(ParamGrads {
            layers: layer_grads,
            norms: norm_grads,
        })
    }
}

fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.sum()))
}

fn batchnorm_train(bn: &BatchNorm, z: &DMatrix<f64>) -> (DMatrix<f64>, BnCache, DVector<f64>, DVector<f64>) {
    let (rows, batch) = z.shape();
    let bf = batch as f64;
    let mean = DVector::from_iterator(rows, z.row_iter().map(|r| r.sum() / bf));
    let var = DVector::from_fn(rows, |j, _| {
        z.row(j).iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / bf
    });
    let inv_std = var.map(|v| 1.0 / (v + bn.eps).sqrt());
    let xhat = DMatrix::from_fn(rows, batch, |j, b| (z[(j, b)] - mean[j]) * inv_std[j]);
    let y = DMatrix::from_fn(rows, batch, |j, b| bn.gamma[j] * xhat[(j, b)] + bn.beta[j]);

    // running variance tracks the unbiased estimate
    let unbiased = var * (bf / (bf - 1.0));
    (y, BnCache { xhat, inv_std }, mean, unbiased)
}

fn batchnorm_eval(bn: &BatchNorm, z: &DMatrix<f64>) -> (DMatrix<f64>, BnCache) {
    let (rows, batch) = z.shape();
    let inv_std = bn.running_var.map(|v| 1.0 / (v + bn.eps).sqrt());
    let xhat = DMatrix::from_fn(rows, batch, |j, b| (z[(j, b)] - bn.running_mean[j]) * inv_std[j]);
    let y = DMatrix::from_fn(rows, batch, |j, b| bn.gamma[j] * xhat[(j, b)] + bn.beta[j]);
    (y, BnCache { xhat, inv_std })
}

fn batchnorm_backward(
    bn: &BatchNorm,
    cache: &BnCache,
    dy: &DMatrix<f64>,
    train_mode: bool,
) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let (rows, batch) = dy.shape();
    let dgamma = DVector::from_fn(rows, |j, _| dy.row(j).dot(&cache.xhat.row(j)));
    let dbeta = row_sums(dy);
    let dz = if train_mode {
        let bf = batch as f64;
        DMatrix::from_fn(rows, batch, |j, b| {
            // dx̂ = γ·dy; the batch-mean terms collapse to dβ and dγ
            let g = bn.gamma[j];
            cache.inv_std[j] / bf
                * (bf * g * dy[(j, b)] - g * dbeta[j] - cache.xhat[(j, b)] * g * dgamma[j])
        })
    } else {
        DMatrix::from_fn(rows, batch, |j, b| dy[(j, b)] * bn.gamma[j] * cache.inv_std[j])
    };
    (dz, dgamma, dbeta)
}

/// Splits raw outputs into `(λ, ν)`: the first `lambda_dim` rows pass through
/// ReLU, the remaining rows are returned untouched.
pub fn relu_clamp_head(output: &DMatrix<f64>, lambda_dim: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if lambda_dim > output.nrows() {
        return Err(DpxError::Dimension {
            what: "lambda head",
            expected: output.nrows(),
            got: lambda_dim,
        });
    }
    let lambda = output.rows(0, lambda_dim).map(|v| v.max(0.0));
    let nu = output.rows(lambda_dim, output.nrows() - lambda_dim).into_owned();
    Ok((lambda, nu))
}

/// Backward of [`relu_clamp_head`]: stacks `(∂/∂λ, ∂/∂ν)` into a raw-output
/// gradient, zeroing λ coordinates whose raw value is negative.
pub fn relu_clamp_head_backward(
    raw: &DMatrix<f64>,
    grad_lambda: &DMatrix<f64>,
    grad_nu: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let m = grad_lambda.nrows();
    check_dim("head rows", raw.nrows(), m + grad_nu.nrows())?;
    check_dim("head columns", raw.ncols(), grad_lambda.ncols())?;
    check_dim("head columns", raw.ncols(), grad_nu.ncols())?;
    Ok(DMatrix::from_fn(raw.nrows(), raw.ncols(), |r, b| {
        if r < m {
            if raw[(r, b)] < 0.0 {
                0.0
            } else {
                grad_lambda[(r, b)]
            }
        } else {
            grad_nu[(r - m, b)]
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn xavier_bounds_and_zero_biases() {
        let m = MlpModel::init_xavier(1, &[2, 3], false).unwrap();
        let bound = (6.0f64 / 5.0).sqrt();
        assert!((bound - 1.0954).abs() < 1e-4);
        assert!(m.layers[0].weight.iter().all(|w| w.abs() <= bound));
        assert!(m.layers[0].bias.iter().all(|&b| b == 0.0));
        let big = MlpModel::dual_predictor(3, 20, 200, 8).unwrap();
        assert_eq!(big.num_layers(), 5);
        assert_eq!(big.dims(), vec![20, 200, 200, 200, 200, 8]);
        for bn in big.norms() {
            assert!(bn.gamma.iter().all(|&g| g == 1.0) && bn.beta.iter().all(|&b| b == 0.0));
        }
        assert_eq!(MlpModel::init_xavier(9, &[4, 5, 2], true).unwrap(), MlpModel::init_xavier(9, &[4, 5, 2], true).unwrap());
        assert_ne!(MlpModel::init_xavier(9, &[4, 5, 2], true).unwrap(), MlpModel::init_xavier(10, &[4, 5, 2], true).unwrap());
    }

    #[test]
    fn zero_model_outputs_zero() {
        let mut m = MlpModel::zeros(&[3, 4, 4, 2], true).unwrap();
        let x = DMatrix::from_fn(3, 5, |i, j| (i * 5 + j) as f64);
        let (out, _) = m.forward(&x, true).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        assert!(m.predict(&x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_is_deterministic_and_pure() {
        let m = MlpModel::init_xavier(4, &[3, 6, 2], true).unwrap();
        let x = DMatrix::from_fn(3, 4, |i, j| (i as f64 - j as f64) * 0.3);
        let before = m.clone();
        assert_eq!(m.predict(&x).unwrap(), m.predict(&x).unwrap());
        assert_eq!(m, before);
    }

    #[test]
    fn train_mode_needs_two_samples() {
        let mut m = MlpModel::init_xavier(4, &[3, 6, 2], true).unwrap();
        let x = DMatrix::from_element(3, 1, 1.0);
        assert!(m.forward(&x, true).is_err());
        assert!(m.forward(&x, false).is_ok());
        let mut plain = MlpModel::init_xavier(4, &[3, 6, 2], false).unwrap();
        assert!(plain.forward(&x, true).is_ok());
    }

    #[test]
    fn hand_computed_two_sample_batchnorm() {
        // one hidden unit: z = x, batch {1, 3} → mean 2, var 1, x̂ = ∓1/√(1+ε)
        let mut m = MlpModel::zeros(&[1, 1, 1], true).unwrap();
        m.layers[0].weight[(0, 0)] = 1.0;
        m.layers[1].weight[(0, 0)] = 2.0;
        m.layers[1].bias[0] = 0.5;
        m.norms[0].gamma[0] = 1.5;
        m.norms[0].beta[0] = 0.25;
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 3.0]);
        let (out, _) = m.forward(&x, true).unwrap();
        let s = 1.0 / (1.0 + BN_EPS).sqrt();
        let relu = |v: f64| v.max(0.0);
        let expect = [2.0 * relu(1.5 * -s + 0.25) + 0.5, 2.0 * relu(1.5 * s + 0.25) + 0.5];
        assert!((out[(0, 0)] - expect[0]).abs() < 1e-15);
        assert!((out[(0, 1)] - expect[1]).abs() < 1e-15);
        // running stats: mean 0.9·0 + 0.1·2, unbiased var 2 → 0.9·1 + 0.1·2
        assert!((m.norms[0].running_mean[0] - 0.2).abs() < 1e-15);
        assert!((m.norms[0].running_var[0] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = MlpModel::init_xavier(5, &[3, 4, 2], true).unwrap();
        let x = rand_matrix(&mut rng, 3, 3);
        let (_, cache) = m.forward(&x, true).unwrap();
        let g = m.backward(&cache, &DMatrix::zeros(2, 3)).unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn single_affine_layer_grads_are_outer_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = MlpModel::init_xavier(6, &[3, 2], false).unwrap();
        let x = rand_matrix(&mut rng, 3, 4);
        let dout = rand_matrix(&mut rng, 2, 4);
        let (_, cache) = m.forward_eval(&x).unwrap();
        let g = m.backward(&cache, &dout).unwrap();
        let mut expect_w = DMatrix::zeros(2, 3);
        for b in 0..4 {
            expect_w += dout.column(b) * x.column(b).transpose();
        }
        assert!((&g.layers[0].0 - expect_w).amax() < 1e-14);
        assert!((&g.layers[0].1 - row_sums(&dout)).amax() < 1e-14);
    }

    #[test]
    fn linear_net_with_positive_activations() {
        // positive weights and inputs keep every ReLU open: the net is W₂W₁x
        let mut m = MlpModel::zeros(&[2, 2, 1], false).unwrap();
        m.layers[0].weight = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.25, 2.0]);
        m.layers[1].weight = DMatrix::from_row_slice(1, 2, &[3.0, -1.0]);
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let (_, cache) = m.forward(&x, false).unwrap();
        let g = m.backward(&cache, &DMatrix::from_element(1, 1, 1.0)).unwrap();
        // ∂/∂W₂ = (W₁x)ᵀ, ∂/∂W₁ = W₂ᵀ xᵀ
        let h = &m.layers[0].weight * &x;
        assert!((&g.layers[1].0 - h.transpose()).amax() < 1e-15);
        assert!((&g.layers[0].0 - m.layers[1].weight.transpose() * x.transpose()).amax() < 1e-15);
    }

    #[test]
    fn backward_rejects_mismatched_cache() {
        let mut a = MlpModel::init_xavier(1, &[3, 4, 2], true).unwrap();
        let b = MlpModel::init_xavier(1, &[3, 5, 2], true).unwrap();
        let x = DMatrix::from_element(3, 2, 0.5);
        let (_, cache) = a.forward(&x, true).unwrap();
        assert!(b.backward(&cache, &DMatrix::zeros(2, 2)).is_err());
        assert!(a.backward(&cache, &DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn head_clamps_lambda_only() {
        let raw = DMatrix::from_row_slice(3, 1, &[-3.0, 2.0, -7.0]);
        let (l, n) = relu_clamp_head(&raw, 2).unwrap();
        assert_eq!(l, DMatrix::from_row_slice(2, 1, &[0.0, 2.0]));
        assert_eq!(n, DMatrix::from_row_slice(1, 1, &[-7.0]));
        let pos = DMatrix::from_row_slice(2, 1, &[1.0, 4.0]);
        assert_eq!(relu_clamp_head(&pos, 2).unwrap().0, pos);

        let g = relu_clamp_head_backward(
            &raw,
            &DMatrix::from_row_slice(2, 1, &[5.0, 6.0]),
            &DMatrix::from_row_slice(1, 1, &[7.0]),
        )
        .unwrap();
        assert_eq!(g, DMatrix::from_row_slice(3, 1, &[0.0, 6.0, 7.0]));
    }
}
