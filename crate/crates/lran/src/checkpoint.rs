//! Binary checkpoints: `LRAN` magic, version, latent size, grid, the
//! normalization pair, then every parameter tensor as rank, dims and
//! binary64 values. All little-endian.

use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::model::{Architecture, LranModel, PARAM_NAMES};
use crate::LranError;

const MAGIC: &[u8; 4] = b"LRAN";
const VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<(), LranError> {
    let v = u32::try_from(v).map_err(|_| LranError::Format(format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn to_bytes(model: &LranModel) -> Result<Vec<u8>, LranError> {
    let arch = model.architecture();
    let mut buf = Vec::with_capacity(64 + 8 * model.parameter_count());
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION as usize)?;
    put_u32(&mut buf, arch.latent_dim)?;
    put_u32(&mut buf, arch.ny)?;
    put_u32(&mut buf, arch.nx)?;
    buf.extend_from_slice(&model.input_mean.to_le_bytes());
    buf.extend_from_slice(&model.input_std.to_le_bytes());
    put_u32(&mut buf, model.params().len())?;
    for p in model.params() {
        put_u32(&mut buf, p.ndim())?;
        for &d in p.shape() {
            put_u32(&mut buf, d)?;
        }
        for v in p.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], LranError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            LranError::Format(format!("truncated checkpoint at byte {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize, LranError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64, LranError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<LranModel, LranError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(LranError::Format("bad magic, not an LRAN checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(LranError::Format(format!("unsupported version {version}")));
    }
    let latent = r.u32()?;
    let ny = r.u32()?;
    let nx = r.u32()?;
    let mean = r.f64()?;
    let std = r.f64()?;
    let count = r.u32()?;
    if count != PARAM_NAMES.len() {
        return Err(LranError::Format(format!(
            "expected {} tensors, header says {count}",
            PARAM_NAMES.len()
        )));
    }
    let mut params = Vec::with_capacity(count);
    for name in PARAM_NAMES {
        let rank = r.u32()?;
        if rank > 4 {
            return Err(LranError::Format(format!("{name}: rank {rank} too large")));
        }
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let len: usize = dims.iter().product();
        if len > (bytes.len() - r.pos) / 8 {
            return Err(LranError::Format(format!("truncated checkpoint in {name}")));
        }
        let values = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        params.push(ArrayD::from_shape_vec(IxDyn(&dims), values).expect("length checked"));
    }
    if r.pos != bytes.len() {
        return Err(LranError::Format(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    // Channel widths are the output counts of the four encoder convolutions.
    let channels = [0, 2, 4, 6].map(|i| params[i].shape().first().copied().unwrap_or(0));
    let arch = Architecture::new(ny, nx, channels, latent).map_err(|e| LranError::Format(e.to_string()))?;
    LranModel::from_parts(arch, params, mean, std).map_err(|e| match e {
        LranError::InvalidArchitecture(m) => LranError::Format(m),
        LranError::ZeroVariance => LranError::Format(format!("invalid normalization ({mean}, {std})")),
        other => other,
    })
}

pub fn save_checkpoint(model: &LranModel, path: &Path) -> Result<(), LranError> {
    std::fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<LranModel, LranError> {
    from_bytes(&std::fs::read(path)?)
}
