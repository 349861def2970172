//! Binary dump of a [`FlowSample`].
//!
//! Layout, all little-endian:
//! - 8 bytes magic `KIWFLOW1`
//! - `u64` fields: `n`, `L` (grid steps), `n_paths`, `seed`, `n_seeds`, `n_records`
//! - `n_records` `u64` recorded step indices
//! - `n_seeds * n` `f64` seed coordinates
//! - for each path, record and seed: `n` coordinates of `φ_t(x)` then the
//!   `n * n` row-major entries of `J`; excluded paths are written as NaN.

use std::io::{self, Read, Write};

use super::{FlowSample, FlowPoint, PathFlow};
use crate::error::{Error, Result};
use crate::exterior::JacobianSample;
use crate::linalg::Mat;

pub const MAGIC: &[u8; 8] = b"KIWFLOW1";

pub fn write_flow<W: Write>(sample: &FlowSample, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    let n = sample.n;
    for v in [
        n,
        sample.n_steps,
        sample.paths.len(),
        sample.seed as usize,
        sample.seeds.len(),
        sample.steps.len(),
    ] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    for &s in &sample.steps {
        w.write_all(&(s as u64).to_le_bytes())?;
    }
    for x in sample.seeds.iter().flatten() {
        w.write_all(&x.to_le_bytes())?;
    }
    let per_point = n + n * n;
    for p in &sample.paths {
        for r in 0..sample.steps.len() {
            for s in 0..sample.seeds.len() {
                match p {
                    Some(p) => {
                        let pt = &p.states[r][s];
                        for v in pt.x.iter().chain(pt.jac.j.as_slice()) {
                            w.write_all(&v.to_le_bytes())?;
                        }
                    }
                    None => {
                        for _ in 0..per_point {
                            w.write_all(&f64::NAN.to_le_bytes())?;
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

/// Reads a dump back; `dt` is not stored and is returned as NaN.
pub fn read_flow<R: Read>(mut r: R) -> Result<FlowSample> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Invalid("not a flow dump".into()));
    }
    let mut h = [0u64; 6];
    for v in h.iter_mut() {
        *v = read_u64(&mut r)?;
    }
    let [n, n_steps, n_paths, seed, n_seeds, n_records] = h.map(|v| v as usize);
    let steps = (0..n_records)
        .map(|_| read_u64(&mut r).map(|v| v as usize))
        .collect::<io::Result<Vec<_>>>()?;
    let seeds = (0..n_seeds)
        .map(|_| (0..n).map(|_| read_f64(&mut r)).collect())
        .collect::<io::Result<Vec<Vec<f64>>>>()?;
    let mut paths = Vec::with_capacity(n_paths);
    for path in 0..n_paths {
        let mut states = Vec::with_capacity(n_records);
        let mut excluded = false;
        for _ in 0..n_records {
            let mut row = Vec::with_capacity(n_seeds);
            for _ in 0..n_seeds {
                let x = (0..n).map(|_| read_f64(&mut r)).collect::<io::Result<Vec<f64>>>()?;
                let j = (0..n * n).map(|_| read_f64(&mut r)).collect::<io::Result<Vec<f64>>>()?;
                if x.iter().any(|v| v.is_nan()) {
                    excluded = true;
                    continue;
                }
                row.push(FlowPoint {
                    x,
                    jac: JacobianSample {
                        j: Mat::from_row_slice(n, &j),
                        jinv: None,
                    },
                });
            }
            states.push(row);
        }
        paths.push((!excluded).then(|| PathFlow {
            path,
            steps: steps.clone(),
            states,
        }));
    }
    Ok(FlowSample {
        n,
        n_steps,
        dt: f64::NAN,
        seed: seed as u64,
        seeds,
        steps,
        paths,
    })
}
