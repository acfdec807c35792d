use std::path::Path;

use super::mlp::{BatchNorm, Dense, MlpModel};
use crate::codec::{Decoder, Encoder};
use crate::error::{DpxError, Result};

const MAGIC: &[u8] = b"DPXM1";
const VERSION: u32 = 1;
const MAX_LAYERS: usize = 64;
const MAX_WIDTH: usize = 1 << 16;

impl MlpModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new(MAGIC);
        enc.u32(VERSION);
        let dims = self.dims();
        enc.usize(dims.len());
        for &d in &dims {
            enc.usize(d);
        }
        enc.u8(u8::from(self.has_batchnorm()));
        for l in self.layers() {
            enc.matrix(&l.weight);
            enc.vector(&l.bias);
        }
        for bn in self.norms() {
            enc.f64(bn.momentum);
            enc.f64(bn.eps);
            enc.vector(&bn.gamma);
            enc.vector(&bn.beta);
            enc.vector(&bn.running_mean);
            enc.vector(&bn.running_var);
        }
        enc.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut dec = Decoder::open(bytes, MAGIC)?;
        let version = dec.u32()?;
        if version != VERSION {
            return Err(DpxError::Format(format!("unsupported model version {version}")));
        }
        let count = dec.bounded(MAX_LAYERS + 1, "dimension count")?;
        if count < 2 {
            return Err(DpxError::Format("model needs at least two dimensions".into()));
        }
        let dims = (0..count)
            .map(|_| dec.bounded(MAX_WIDTH, "layer width"))
            .collect::<Result<Vec<_>>>()?;
        let batchnorm = match dec.u8()? {
            0 => false,
            1 => true,
            b => return Err(DpxError::Format(format!("bad batch-norm flag {b}"))),
        };
        let layers = dims
            .windows(2)
            .map(|w| {
                Ok(Dense {
                    weight: dec.matrix(w[1], w[0])?,
                    bias: dec.vector(w[1])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let norms = if batchnorm {
            dims[1..count - 1]
                .iter()
                .map(|&w| {
                    Ok(BatchNorm {
                        momentum: dec.f64()?,
                        eps: dec.f64()?,
                        gamma: dec.vector(w)?,
                        beta: dec.vector(w)?,
                        running_mean: dec.vector(w)?,
                        running_var: dec.vector(w)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        dec.finish()?;
        MlpModel::from_parts(layers, norms).map_err(|e| DpxError::Format(e.to_string()))
    }
}

pub fn save_model(model: &MlpModel, path: &Path) -> Result<()> {
    std::fs::write(path, model.to_bytes())?;
    Ok(())
}

/// Loads a model archive, optionally insisting on the output width.
pub fn load_model(path: &Path, expected_out_dim: Option<usize>) -> Result<MlpModel> {
    let model = MlpModel::from_bytes(&std::fs::read(path)?)?;
    if let Some(out) = expected_out_dim {
        if model.out_dim() != out {
            return Err(DpxError::Dimension {
                what: "model output width",
                expected: out,
                got: model.out_dim(),
            });
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn roundtrip_preserves_outputs_bitwise() {
        let mut m = MlpModel::init_xavier(11, &[4, 7, 7, 3], true).unwrap();
        let x = DMatrix::from_fn(4, 6, |i, j| ((i * 7 + j) % 5) as f64 - 2.0);
        m.forward(&x, true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save_model(&m, &path).unwrap();
        let back = load_model(&path, Some(3)).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.predict(&x).unwrap(), m.predict(&x).unwrap());
        assert!(matches!(load_model(&path, Some(4)), Err(DpxError::Dimension { .. })));

        let plain = MlpModel::init_xavier(2, &[2, 3], false).unwrap();
        assert_eq!(MlpModel::from_bytes(&plain.to_bytes()).unwrap(), plain);
    }

    #[test]
    fn corrupt_or_foreign_bytes_are_rejected() {
        let m = MlpModel::init_xavier(1, &[2, 3, 1], true).unwrap();
        let mut bytes = m.to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(MlpModel::from_bytes(&bytes), Err(DpxError::Format(_))));
        assert!(MlpModel::from_bytes(b"DPX1garbage").is_err());
        assert!(MlpModel::from_bytes(&[]).is_err());
    }
}
