use std::path::Path;

use super::{ConvNet, ConvNetSpec};
use crate::binio::{self, Decoder, Encoder};
use crate::error::{OsrError, Result};

const MODEL_MAGIC: &[u8; 4] = b"OSRM";
const MAX_STAGES: usize = 16;
const MAX_DIM: usize = 1 << 16;

/// A model snapshot together with the training position it was taken at.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ConvNet,
    pub step: u64,
    pub seed: u64,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let spec = ckpt.model.spec();
    let mut enc = Encoder::new(MODEL_MAGIC);
    enc.u64(spec.input_height as u64)
        .u64(spec.input_width as u64)
        .u64(spec.input_channels as u64)
        .u64(spec.num_classes as u64)
        .u64(spec.widths.len() as u64);
    for &w in &spec.widths {
        enc.u64(w as u64);
    }
    enc.u64(ckpt.step).u64(ckpt.seed).f64s(ckpt.model.params());
    enc.finish()
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut dec = Decoder::open(bytes, MODEL_MAGIC, "model checkpoint")?;
    let dim = |dec: &mut Decoder| -> Result<usize> {
        let v = dec.usize_u64()?;
        if v > MAX_DIM {
            return Err(OsrError::Data(format!("model checkpoint: dimension {v} too large")));
        }
        Ok(v)
    };
    let input_height = dim(&mut dec)?;
    let input_width = dim(&mut dec)?;
    let input_channels = dim(&mut dec)?;
    let num_classes = dim(&mut dec)?;
    let stages = dim(&mut dec)?;
    if stages > MAX_STAGES {
        return Err(OsrError::Data(format!("model checkpoint: {stages} stages")));
    }
    let widths = (0..stages).map(|_| dim(&mut dec)).collect::<Result<Vec<_>>>()?;
    let spec = ConvNetSpec { input_height, input_width, input_channels, widths, num_classes };
    spec.validate().map_err(|e| OsrError::Data(format!("model checkpoint: {e}")))?;
    let step = dec.u64()?;
    let seed = dec.u64()?;
    let params = dec.f64s(spec.param_count())?;
    dec.finish()?;
    if params.iter().any(|p| !p.is_finite()) {
        return Err(OsrError::Data("model checkpoint: non-finite parameter".into()));
    }
    Ok(Checkpoint { model: ConvNet::from_params(spec, params)?, step, seed })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    binio::write_file(path, &encode_checkpoint(ckpt))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&binio::read_file(path)?)
}
