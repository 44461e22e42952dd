use std::path::{Path, PathBuf};

use super::TrainState;
use crate::binio::{self, Decoder, Encoder};
use crate::cambank::{decode_bank, encode_bank};
use crate::error::{OsrError, Result};
use crate::model::{decode_checkpoint, encode_checkpoint, Checkpoint};

const STATE_MAGIC: &[u8; 4] = b"OSRT";

pub fn encode_state(state: &TrainState) -> Vec<u8> {
    let model = encode_checkpoint(&Checkpoint { model: state.model.clone(), step: state.step, seed: state.seed });
    let bank = state.bank.as_ref().map(encode_bank);
    let mut enc = Encoder::new(STATE_MAGIC);
    enc.u64(state.epoch as u64)
        .u64(state.loss_history.len() as u64)
        .f64s(&state.loss_history)
        .u64(state.velocity.len() as u64)
        .f64s(&state.velocity)
        .u64(model.len() as u64)
        .bytes(&model);
    match &bank {
        Some(b) => enc.u8(1).u64(b.len() as u64).bytes(b),
        None => enc.u8(0),
    };
    enc.finish()
}

pub fn decode_state(bytes: &[u8]) -> Result<TrainState> {
    let mut dec = Decoder::open(bytes, STATE_MAGIC, "training state")?;
    let epoch = dec.usize_u64()?;
    let history_len = dec.usize_u64()?;
    let loss_history = dec.f64s(history_len)?;
    if loss_history.len() != epoch {
        return Err(OsrError::Data(format!("training state: {} losses for {epoch} epochs", loss_history.len())));
    }
    let velocity_len = dec.usize_u64()?;
    let velocity = dec.f64s(velocity_len)?;
    let model_len = dec.usize_u64()?;
    let ckpt = decode_checkpoint(dec.bytes(model_len)?)?;
    let bank = match dec.u8()? {
        0 => None,
        1 => {
            let len = dec.usize_u64()?;
            Some(decode_bank(dec.bytes(len)?)?)
        }
        other => return Err(OsrError::Data(format!("training state: bad bank flag {other}"))),
    };
    dec.finish()?;
    if velocity.len() != ckpt.model.params().len() {
        return Err(OsrError::Data("training state: velocity does not match model".into()));
    }
    Ok(TrainState { model: ckpt.model, bank, velocity, epoch, step: ckpt.step, seed: ckpt.seed, loss_history })
}

pub fn save_state(path: &Path, state: &TrainState) -> Result<()> {
    binio::write_file(path, &encode_state(state))
}

pub fn load_state(path: &Path) -> Result<TrainState> {
    decode_state(&binio::read_file(path)?)
}

/// Path of the newest `epoch-NNNN/state.osrt` under `dir`, if any.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    if !dir.exists() {
        return Ok(None);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in std::fs::read_dir(dir).map_err(|e| OsrError::io(dir, e))? {
        let entry = entry.map_err(|e| OsrError::io(dir, e))?;
        let name = entry.file_name();
        let Some(epoch) = name.to_str().and_then(|n| n.strip_prefix("epoch-")).and_then(|n| n.parse::<usize>().ok()) else {
            continue;
        };
        let path = entry.path().join("state.osrt");
        if path.exists() && best.as_ref().is_none_or(|(e, _)| epoch > *e) {
            best = Some((epoch, path));
        }
    }
    Ok(best.map(|(_, p)| p))
}
