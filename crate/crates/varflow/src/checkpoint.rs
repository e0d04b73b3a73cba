//! Versioned little-endian binary snapshots of a velocity state.

use crate::mac::VelocityField;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{Read, Write};
use thiserror::Error;

const MAGIC: &[u8; 8] = b"VFLOWCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub t: f64,
    pub theta: f64,
    pub d: usize,
    pub cells: [usize; 3],
    pub u: VelocityField,
}

pub fn write_checkpoint<W: Write>(w: &mut W, c: &Checkpoint) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    w.write_u64::<LittleEndian>(c.step)?;
    w.write_f64::<LittleEndian>(c.t)?;
    w.write_f64::<LittleEndian>(c.theta)?;
    w.write_u32::<LittleEndian>(c.d as u32)?;
    for n in c.cells {
        w.write_u64::<LittleEndian>(n as u64)?;
    }
    w.write_u32::<LittleEndian>(c.u.comps.len() as u32)?;
    for comp in &c.u.comps {
        w.write_u64::<LittleEndian>(comp.len() as u64)?;
        for &v in comp {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let step = r.read_u64::<LittleEndian>()?;
    let t = r.read_f64::<LittleEndian>()?;
    let theta = r.read_f64::<LittleEndian>()?;
    let d = r.read_u32::<LittleEndian>()? as usize;
    if !(2..=3).contains(&d) {
        return Err(CheckpointError::Malformed(format!("dimension {d}")));
    }
    let mut cells = [0usize; 3];
    for n in cells.iter_mut() {
        *n = r.read_u64::<LittleEndian>()? as usize;
    }
    let ncomp = r.read_u32::<LittleEndian>()? as usize;
    if ncomp != d {
        return Err(CheckpointError::Malformed(format!(
            "{ncomp} components for d = {d}"
        )));
    }
    let total: usize = cells[..d].iter().map(|n| n + 1).product();
    let mut comps = Vec::with_capacity(d);
    for _ in 0..d {
        let len = r.read_u64::<LittleEndian>()? as usize;
        if len > total {
            return Err(CheckpointError::Malformed(format!(
                "component length {len}"
            )));
        }
        let mut v = vec![0.0; len];
        r.read_f64_into::<LittleEndian>(&mut v)?;
        comps.push(v);
    }
    Ok(Checkpoint {
        step,
        t,
        theta,
        d,
        cells,
        u: VelocityField { comps },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            step: 7,
            t: 0.35,
            theta: 1e-3,
            d: 2,
            cells: [3, 2, 1],
            u: VelocityField {
                comps: vec![
                    vec![0.5, -1.25, 3.0, 0.0, 1e-300, 2.0, 7.0, 8.0],
                    vec![1.0; 9],
                ],
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &c).unwrap();
        assert_eq!(read_checkpoint(&mut buf.as_slice()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_header_and_truncation() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_checkpoint(&mut bad.as_slice()),
            Err(CheckpointError::BadMagic)
        ));
        let mut ver = buf.clone();
        ver[8] = 9;
        assert!(matches!(
            read_checkpoint(&mut ver.as_slice()),
            Err(CheckpointError::Version(9))
        ));
        let cut = &buf[..buf.len() - 3];
        assert!(matches!(
            read_checkpoint(&mut &cut[..]),
            Err(CheckpointError::Io(_))
        ));
    }
}
