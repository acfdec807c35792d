//! Finite-difference and reference-solver checks. These deliberately avoid the
//! code paths they verify: network gradients are compared against perturbed
//! forward passes, dual gradients against perturbed dual values, and the box
//! solver against plain projected gradient descent.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::lagrangian::{dual_function, dual_gradients, DualEstimate};
use crate::neural::MlpModel;
use crate::problems::ProblemFamily;

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for relative errors. Biases feeding a batch norm have
/// identically zero gradient; the floor keeps their comparison meaningful.
pub const REL_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: &[f64], reference: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(reference)
        .map(|(a, r)| (a - r).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nr = reference.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / na.max(nr).max(REL_FLOOR)
}

/// Outcome of a network gradient check: the worst per-tensor relative error.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_tensor: usize,
    pub tensors: usize,
}

fn scalar_loss(model: &MlpModel, x: &DMatrix<f64>, w: &DMatrix<f64>, train_mode: bool) -> Result<f64> {
    // train-mode forward mutates running statistics, so probe a throwaway copy
    let mut probe = model.clone();
    let (out, _) = probe.forward(x, train_mode)?;
    Ok(out.dot(w))
}

/// Compares `backward` against central differences of `Σ w ⊙ forward(x)` for
/// every parameter of `model`.
pub fn network_gradient_check(
    model: &MlpModel,
    x: &DMatrix<f64>,
    output_grad: &DMatrix<f64>,
    train_mode: bool,
) -> Result<GradCheck> {
    let mut fwd = model.clone();
    let (_, cache) = fwd.forward(x, train_mode)?;
    let grads = model.backward(&cache, output_grad)?;
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();

    let mut worst = (0.0, 0);
    for (t, a) in analytic.iter().enumerate() {
        let mut fd = vec![0.0; a.len()];
        for (i, slot) in fd.iter_mut().enumerate() {
            let mut plus = model.clone();
            plus.param_slices_mut()[t][i] += FD_STEP;
            let mut minus = model.clone();
            minus.param_slices_mut()[t][i] -= FD_STEP;
            *slot = (scalar_loss(&plus, x, output_grad, train_mode)?
                - scalar_loss(&minus, x, output_grad, train_mode)?)
                / (2.0 * FD_STEP);
        }
        let err = relative_error(a, &fd);
        if err > worst.0 {
            worst = (err, t);
        }
    }
    Ok(GradCheck {
        max_rel_error: worst.0,
        worst_tensor: worst.1,
        tensors: analytic.len(),
    })
}

/// A random small network check: dims drawn in `2..=max_width`, batch `B`,
/// random inputs and output gradients.
pub fn random_network_check(seed: u64, max_width: usize, batch: usize, batchnorm: bool, train_mode: bool) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.gen_range(2..=4);
    let dims: Vec<usize> = (0..=depth).map(|_| rng.gen_range(2..=max_width)).collect();
    let mut model = MlpModel::init_xavier(seed ^ 0x5eed, &dims, batchnorm)?;
    for bn in model.norms_mut() {
        bn.gamma.iter_mut().for_each(|g| *g = rng.gen_range(0.5..1.5));
        bn.beta.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        bn.running_mean.iter_mut().for_each(|m| *m = rng.gen_range(-0.5..0.5));
        bn.running_var.iter_mut().for_each(|v| *v = rng.gen_range(0.5..2.0));
    }
    for layer in model.layers_mut() {
        layer.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
    }
    let x = DMatrix::from_fn(dims[0], batch, |_, _| rng.gen_range(-1.0..1.0));
    let w = DMatrix::from_fn(dims[depth], batch, |_, _| rng.gen_range(-1.0..1.0));
    network_gradient_check(&model, &x, &w, train_mode)
}

/// Relative error between `(∇_λ d, ∇_ν d)` and central differences of the
/// dual function. `flip_sign` negates the analytic gradient, which must make
/// the check fail.
pub fn dual_gradient_check(
    family: &ProblemFamily,
    c: &DVector<f64>,
    dual: &DualEstimate,
    flip_sign: bool,
) -> Result<f64> {
    let (_, rec) = dual_function(family, c, dual)?;
    let (gl, gn) = dual_gradients(family, c, &rec)?;
    let sign = if flip_sign { -1.0 } else { 1.0 };
    let analytic: Vec<f64> = gl.iter().chain(gn.iter()).map(|v| sign * v).collect();

    let m = dual.lambda().len();
    let base: Vec<f64> = dual.lambda().iter().chain(dual.nu().iter()).copied().collect();
    let eval = |theta: &[f64]| -> Result<f64> {
        let d = DualEstimate::new(
            DVector::from_column_slice(&theta[..m]),
            DVector::from_column_slice(&theta[m..]),
        );
        Ok(dual_function(family, c, &d)?.0)
    };
    let mut fd = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += FD_STEP;
        let mut minus = base.clone();
        minus[i] -= FD_STEP;
        fd.push((eval(&plus)? - eval(&minus)?) / (2.0 * FD_STEP));
    }
    Ok(relative_error(&analytic, &fd))
}

/// Projected gradient descent with step `1/L` on `½xᵀHx + qᵀx` over a box,
/// run until the iterate stops moving. `L` is taken as the largest
/// eigenvalue of `H`.
pub fn projected_gradient_reference(
    h: &DMatrix<f64>,
    q: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    max_iters: usize,
) -> DVector<f64> {
    let lmax = h.clone().symmetric_eigenvalues().max();
    let step = 1.0 / lmax;
    let clamp = |v: &DVector<f64>| DVector::from_fn(v.len(), |i, _| v[i].max(lower[i]).min(upper[i]));
    let mut x = clamp(&DVector::zeros(q.len()));
    for _ in 0..max_iters {
        let next = clamp(&(&x - (h * &x + q) * step));
        let moved = (&next - &x).amax();
        x = next;
        if moved <= 1e-15 {
            break;
        }
    }
    x
}
