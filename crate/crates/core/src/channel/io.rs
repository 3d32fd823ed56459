//! Binary dataset container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic    8 bytes  "HBFCHDS\0"
//! version  u32
//! params   m u64, n u64, f u64, carrier_hz f64, bandwidth_hz f64,
//!          n_clusters u64, rays_per_cluster u64, angle_spread_rad f64, delay_spread_s f64
//! seed     u64
//! count    u64
//! data     count * f * n * m * (re f64, im f64), in (realization, subcarrier, row, column) order
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use sha2::{Digest, Sha256};

use super::{ChannelDataset, ChannelModelParams, ChannelRealization};
use crate::error::{Error, Result};
use crate::linalg;

pub const DATASET_MAGIC: &[u8; 8] = b"HBFCHDS\0";
pub const DATASET_VERSION: u32 = 1;

const HEADER_LEN: usize = 8 + 4 + 9 * 8 + 8 + 8;

pub fn write_dataset(ds: &ChannelDataset) -> Vec<u8> {
    let p = &ds.params;
    let values = ds.len() * p.f * p.n * p.m * 2;
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * values);
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    for v in [p.m as u64, p.n as u64, p.f as u64] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&p.carrier_hz.to_le_bytes());
    buf.extend_from_slice(&p.bandwidth_hz.to_le_bytes());
    buf.extend_from_slice(&(p.n_clusters as u64).to_le_bytes());
    buf.extend_from_slice(&(p.rays_per_cluster as u64).to_le_bytes());
    buf.extend_from_slice(&p.angle_spread_rad.to_le_bytes());
    buf.extend_from_slice(&p.delay_spread_s.to_le_bytes());
    buf.extend_from_slice(&ds.seed.to_le_bytes());
    buf.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    for r in &ds.realizations {
        for hf in &r.h {
            for row in 0..hf.nrows() {
                for col in 0..hf.ncols() {
                    let z = hf[(row, col)];
                    buf.extend_from_slice(&z.re.to_le_bytes());
                    buf.extend_from_slice(&z.im.to_le_bytes());
                }
            }
        }
    }
    buf
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| Error::Format(format!("file truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice length checked"))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("size field overflows".into()))
    }
}

pub fn read_dataset(buf: &[u8]) -> Result<ChannelDataset> {
    let mut cur = Cursor { buf, pos: 0 };
    let magic: [u8; 8] = cur.take()?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format("not a channel dataset (bad magic)".into()));
    }
    let version = u32::from_le_bytes(cur.take()?);
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version} (expected {DATASET_VERSION})")));
    }
    let params = ChannelModelParams {
        m: cur.usize()?,
        n: cur.usize()?,
        f: cur.usize()?,
        carrier_hz: cur.f64()?,
        bandwidth_hz: cur.f64()?,
        n_clusters: cur.usize()?,
        rays_per_cluster: cur.usize()?,
        angle_spread_rad: cur.f64()?,
        delay_spread_s: cur.f64()?,
    };
    params.validate().map_err(|e| Error::Format(format!("invalid params block: {e}")))?;
    let seed = cur.u64()?;
    let count = cur.usize()?;
    let expected = count
        .checked_mul(params.f)
        .and_then(|v| v.checked_mul(params.n))
        .and_then(|v| v.checked_mul(params.m))
        .and_then(|v| v.checked_mul(16))
        .ok_or_else(|| Error::Format("dataset size overflows".into()))?;
    let remaining = buf.len() - cur.pos;
    if remaining < expected {
        return Err(Error::Format(format!("file truncated: {remaining} data bytes, expected {expected}")));
    }
    if remaining > expected {
        return Err(Error::Format(format!("{} trailing bytes after data", remaining - expected)));
    }
    let mut realizations = Vec::with_capacity(count);
    for _ in 0..count {
        let mut h = Vec::with_capacity(params.f);
        for _ in 0..params.f {
            let mut hf = linalg::zeros(params.n, params.m);
            for row in 0..params.n {
                for col in 0..params.m {
                    hf[(row, col)] = Complex64::new(cur.f64()?, cur.f64()?);
                }
            }
            h.push(hf);
        }
        realizations.push(ChannelRealization::new(h).map_err(|e| Error::Format(e.to_string()))?);
    }
    Ok(ChannelDataset { params, seed, realizations })
}

pub fn save_dataset(ds: &ChannelDataset, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&write_dataset(ds))?;
    file.sync_all()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<ChannelDataset> {
    read_dataset(&fs::read(path)?)
}

pub fn dataset_fingerprint(ds: &ChannelDataset) -> String {
    hex::encode(Sha256::digest(write_dataset(ds)))
}
