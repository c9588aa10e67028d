//! IDX container (the MNIST distribution format), unsigned-byte payloads.
//!
//! ```text
//! 0x00 0x00 <type> <rank> | rank x u32 big-endian dims | row-major payload
//! ```

use super::DatasetError;

/// Type code for unsigned bytes, the only payload type supported.
pub const TYPE_U8: u8 = 0x08;
const MAX_RANK: usize = 4;

/// Decoded IDX array of unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn new(shape: Vec<usize>, data: Vec<u8>) -> Result<Self, DatasetError> {
        let n: usize = shape.iter().product();
        if n != data.len() || shape.is_empty() || shape.len() > MAX_RANK {
            return Err(DatasetError::Invalid(format!(
                "shape {shape:?} does not describe {} bytes",
                data.len()
            )));
        }
        Ok(IdxArray { shape, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.shape.len() + self.data.len());
        out.extend_from_slice(&[0, 0, TYPE_U8, self.shape.len() as u8]);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }
}

fn idx_err(offset: usize, reason: impl Into<String>) -> DatasetError {
    DatasetError::Idx {
        offset,
        reason: reason.into(),
    }
}

/// Parses an IDX byte sequence. The payload must be exactly the size the
/// header declares.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray, DatasetError> {
    if bytes.len() < 4 {
        return Err(idx_err(bytes.len(), "truncated header"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(idx_err(0, "magic must start with two zero bytes"));
    }
    if bytes[2] != TYPE_U8 {
        return Err(idx_err(2, format!("unsupported type code 0x{:02x}", bytes[2])));
    }
    let rank = bytes[3] as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(idx_err(3, format!("dimension count {rank} outside 1..={MAX_RANK}")));
    }
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(idx_err(bytes.len(), "truncated dimension list"));
    }
    let shape: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| idx_err(4, "dimension product overflows"))?;
    let payload = &bytes[header..];
    if payload.len() < n {
        return Err(idx_err(
            bytes.len(),
            format!("truncated payload: {} of {n} bytes", payload.len()),
        ));
    }
    if payload.len() > n {
        return Err(idx_err(header + n, format!("{} trailing bytes", payload.len() - n)));
    }
    Ok(IdxArray {
        shape,
        data: payload.to_vec(),
    })
}
