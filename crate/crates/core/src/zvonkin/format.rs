//! `ZVK1`: magic, then little-endian `u64` slice and node counts, `f64`
//! λ, R₀, x₀, dx, sup|u|, sup|u'|, margin, the slice times and `u` slice by
//! slice. The λ trace is not stored; a loaded solution carries only its
//! final attempt.

use std::io::{Read, Write};

use super::pde::{LambdaAttempt, PdeSolution};
use crate::error::{FlowError, Result};

const MAGIC: &[u8; 4] = b"ZVK1";

pub fn write_solution(s: &PdeSolution, mut w: impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(s.times.len() as u64).to_le_bytes())?;
    w.write_all(&(s.n_x() as u64).to_le_bytes())?;
    for v in [s.lambda, s.r0, s.x0, s.dx, s.sup_u, s.sup_du, s.margin] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in s.times.iter().chain(s.u.iter().flatten()) {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn u64_of(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn f64_of(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_solution(mut r: impl Read) -> Result<PdeSolution> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(FlowError::Format("not a ZVK1 file".into()));
    }
    let nt = u64_of(&mut r)? as usize;
    let nx = u64_of(&mut r)? as usize;
    if nt == 0 || nx == 0 || nt.saturating_mul(nx) > 1 << 32 {
        return Err(FlowError::Format(format!("implausible dimensions {nt}×{nx}")));
    }
    let mut head = [0.0; 7];
    for v in &mut head {
        *v = f64_of(&mut r)?;
    }
    let [lambda, r0, x0, dx, sup_u, sup_du, margin] = head;
    let times = (0..nt).map(|_| f64_of(&mut r)).collect::<Result<Vec<_>>>()?;
    let u = (0..nt)
        .map(|_| (0..nx).map(|_| f64_of(&mut r)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let accepted = sup_u + sup_du <= 0.5;
    Ok(PdeSolution {
        lambda,
        r0,
        x0,
        dx,
        times,
        u,
        sup_u,
        sup_du,
        accepted,
        margin,
        trace: vec![LambdaAttempt { lambda, sup_u, sup_du, accepted }],
    })
}
