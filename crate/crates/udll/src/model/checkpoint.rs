//! Binary checkpoints: magic `UDLL-CKPT`, format version, config echo,
//! seed, epoch counter, then every parameter tensor in declaration order
//! (encoder kernel/bias per layer, decoder kernel/bias per layer, then the
//! self-expressive matrix when present) as little-endian f64.

use super::{ModelState, NetworkConfig};
use crate::error::UdllError;
use crate::tensor::Tensor;
use crate::Result;
use std::io::Read;
use std::path::Path;

const MAGIC: &[u8; 9] = b"UDLL-CKPT";
const VERSION: u32 = 1;

fn push_tensor(bytes: &mut Vec<u8>, t: &Tensor) {
    bytes.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let slice = &self.bytes[self.at..end];
                self.at = end;
                Ok(slice)
            }
            None => Err(UdllError::Data(format!(
                "{}: truncated checkpoint at byte {}",
                self.path.display(),
                self.at
            ))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(UdllError::Data(format!(
                "{}: implausible tensor rank {rank}",
                self.path.display()
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = self.take(len * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::from_vec(&shape, data)
    }
}

pub fn save_checkpoint(state: &ModelState, path: &Path) -> Result<()> {
    let echo = state.config.echo();
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(echo.len() as u32).to_le_bytes());
    bytes.extend_from_slice(echo.as_bytes());
    bytes.extend_from_slice(&state.seed.to_le_bytes());
    bytes.extend_from_slice(&(state.epoch as u64).to_le_bytes());
    let selfexpr_n = state
        .selfexpr
        .as_ref()
        .map_or(0, |w| w.value.shape()[0] as u32);
    bytes.extend_from_slice(&selfexpr_n.to_le_bytes());
    let tensor_count = 4 * state.encoder.len() as u32 + u32::from(state.selfexpr.is_some());
    bytes.extend_from_slice(&tensor_count.to_le_bytes());
    for layer in state.encoder.iter().chain(&state.decoder) {
        push_tensor(&mut bytes, &layer.kernels.value);
        push_tensor(&mut bytes, &layer.bias.value);
    }
    if let Some(w) = &state.selfexpr {
        push_tensor(&mut bytes, &w.value);
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(UdllError::Data(format!(
            "{}: not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let mut cur = Cursor {
        bytes: &bytes,
        at: MAGIC.len(),
        path,
    };
    let version = cur.u32()?;
    if version != VERSION {
        return Err(UdllError::Data(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let echo_len = cur.u32()? as usize;
    let echo = std::str::from_utf8(cur.take(echo_len)?)
        .map_err(|_| UdllError::Data(format!("{}: config echo is not UTF-8", path.display())))?
        .to_string();
    let config = NetworkConfig::parse_echo(&echo)?;
    let seed = cur.u64()?;
    let epoch = cur.u64()? as usize;
    let selfexpr_n = cur.u32()? as usize;
    let declared = cur.u32()? as usize;
    let expected = 4 * config.layers.len() + usize::from(selfexpr_n > 0);
    if declared != expected {
        return Err(UdllError::Data(format!(
            "{}: checkpoint declares {declared} tensors, config implies {expected}",
            path.display()
        )));
    }

    let mut state = ModelState::new(config, seed)?;
    state.epoch = epoch;
    for idx in 0..state.encoder.len() {
        let kernels = cur.tensor()?;
        let bias = cur.tensor()?;
        replace_tensor(
            path,
            "encoder kernel",
            &mut state.encoder[idx].kernels.value,
            kernels,
        )?;
        replace_tensor(
            path,
            "encoder bias",
            &mut state.encoder[idx].bias.value,
            bias,
        )?;
    }
    for idx in 0..state.decoder.len() {
        let kernels = cur.tensor()?;
        let bias = cur.tensor()?;
        replace_tensor(
            path,
            "decoder kernel",
            &mut state.decoder[idx].kernels.value,
            kernels,
        )?;
        replace_tensor(
            path,
            "decoder bias",
            &mut state.decoder[idx].bias.value,
            bias,
        )?;
    }
    if selfexpr_n > 0 {
        state.attach_selfexpr(selfexpr_n);
        let w = cur.tensor()?;
        let slot = &mut state.selfexpr.as_mut().expect("just attached").value;
        replace_tensor(path, "self-expressive matrix", slot, w)?;
    }
    if cur.at != bytes.len() {
        return Err(UdllError::Data(format!(
            "{}: {} trailing bytes after the last tensor",
            path.display(),
            bytes.len() - cur.at
        )));
    }
    Ok(state)
}

fn replace_tensor(path: &Path, what: &str, slot: &mut Tensor, loaded: Tensor) -> Result<()> {
    if slot.shape() != loaded.shape() {
        return Err(UdllError::Data(format!(
            "{}: {what} has shape {:?}, config implies {:?}",
            path.display(),
            loaded.shape(),
            slot.shape()
        )));
    }
    *slot = loaded;
    Ok(())
}
