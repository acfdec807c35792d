use serde::{Deserialize, Serialize};

use super::mlp::{MlpModel, ParamGrads};
use crate::error::{DpxError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
        })
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = DpxError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(DpxError::InvalidArgument(format!("unknown optimizer '{other}'"))),
        }
    }
}

/// Optimizer hyperparameters plus Adam moment buffers (allocated lazily on the
/// first step, in parameter-slice order).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(DpxError::InvalidArgument(format!(
                "learning rate must be nonnegative, got {learning_rate}"
            )));
        }
        Ok(Self {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        })
    }

    pub fn sgd(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step_count
    }
}

/// One parameter update. `ascent` climbs the objective (`θ + α·direction`);
/// otherwise the step descends.
pub fn step(model: &mut MlpModel, state: &mut OptimizerState, grads: &ParamGrads, ascent: bool) -> Result<()> {
    let gslices = grads.slices();
    let mut params = model.param_slices_mut();
    if gslices.len() != params.len() || gslices.iter().zip(&params).any(|(g, p)| g.len() != p.len()) {
        return Err(DpxError::InvalidArgument("gradient shapes do not match model".into()));
    }
    if gslices.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(DpxError::NonFinite("parameter gradient".into()));
    }
    let sign = if ascent { 1.0 } else { -1.0 };
    let lr = state.learning_rate;
    state.step_count += 1;
    match state.kind {
        OptimizerKind::Sgd => {
            for (p, g) in params.iter_mut().zip(&gslices) {
                for (pi, gi) in p.iter_mut().zip(g.iter()) {
                    *pi += sign * lr * gi;
                }
            }
        }
        OptimizerKind::Adam => {
            if state.first_moment.is_empty() {
                state.first_moment = gslices.iter().map(|g| vec![0.0; g.len()]).collect();
                state.second_moment = state.first_moment.clone();
            }
            let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
            let t = state.step_count as i32;
            let c1 = 1.0 - b1.powi(t);
            let c2 = 1.0 - b2.powi(t);
            for (k, (p, g)) in params.iter_mut().zip(&gslices).enumerate() {
                let m = &mut state.first_moment[k];
                let v = &mut state.second_moment[k];
                for i in 0..p.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                    let mhat = m[i] / c1;
                    let vhat = v[i] / c2;
                    p[i] += sign * lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn scalar_model(w: f64) -> MlpModel {
        let mut m = MlpModel::zeros(&[1, 1], false).unwrap();
        m.layers_mut()[0].weight[(0, 0)] = w;
        m
    }

    fn scalar_grads(g: f64) -> ParamGrads {
        ParamGrads {
            layers: vec![(DMatrix::from_element(1, 1, g), DVector::zeros(1))],
            norms: vec![],
        }
    }

    #[test]
    fn sgd_ascent_and_descent() {
        let mut m = scalar_model(1.0);
        let mut s = OptimizerState::sgd(0.1).unwrap();
        step(&mut m, &mut s, &scalar_grads(2.0), true).unwrap();
        assert!((m.layers()[0].weight[(0, 0)] - 1.2).abs() < 1e-15);
        step(&mut m, &mut s, &scalar_grads(2.0), false).unwrap();
        assert!((m.layers()[0].weight[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        for (g, ascent) in [(2.0, true), (-0.003, true), (5.0, false)] {
            let mut m = scalar_model(0.0);
            let mut s = OptimizerState::adam(0.01).unwrap();
            step(&mut m, &mut s, &scalar_grads(g), ascent).unwrap();
            let moved = m.layers()[0].weight[(0, 0)];
            let dir = if ascent { g.signum() } else { -g.signum() };
            assert!((moved - dir * 0.01).abs() < 1e-7 * 0.01 / g.abs() + 1e-12, "{moved}");
            // a zero-gradient coordinate stays put
            assert_eq!(m.layers()[0].bias[0], 0.0);
        }
    }

    #[test]
    fn adam_matches_reference_second_step() {
        let mut m = scalar_model(0.0);
        let mut s = OptimizerState::adam(0.1).unwrap();
        step(&mut m, &mut s, &scalar_grads(1.0), false).unwrap();
        step(&mut m, &mut s, &scalar_grads(3.0), false).unwrap();
        let (b1, b2) = (0.9f64, 0.999f64);
        let m2 = b1 * (1.0 - b1) * 1.0 + (1.0 - b1) * 3.0;
        let v2 = b2 * (1.0 - b2) * 1.0 + (1.0 - b2) * 9.0;
        let step2 = 0.1 * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + 1e-8);
        let step1 = 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((m.layers()[0].weight[(0, 0)] + step1 + step2).abs() < 1e-14);
        assert_eq!(s.steps_taken(), 2);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(OptimizerState::sgd(-1e-3).is_err());
        assert!(OptimizerState::adam(f64::NAN).is_err());
        let mut m = scalar_model(1.0);
        let mut s = OptimizerState::sgd(0.1).unwrap();
        assert!(step(&mut m, &mut s, &scalar_grads(f64::INFINITY), true).is_err());
        let wrong = ParamGrads {
            layers: vec![(DMatrix::zeros(2, 1), DVector::zeros(1))],
            norms: vec![],
        };
        assert!(step(&mut m, &mut s, &wrong, true).is_err());
        assert_eq!("ADAM".parse::<OptimizerKind>().unwrap(), OptimizerKind::Adam);
        assert!("rmsprop".parse::<OptimizerKind>().is_err());
    }
}
