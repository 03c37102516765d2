//! Field snapshots, history checkpoints and the diagnostics table.
//!
//! Binary layouts are little-endian: a four-byte magic, a format version,
//! the grid header `dim, n`, then raw `f64` pairs per coefficient.

use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::history::{HistoryField, LagGrid};
use crate::integrator::Trajectory;
use crate::kernel::{ExpTerm, KernelShape};
use crate::spectral::{Grid, SpectralField};

const FIELD_MAGIC: &[u8; 4] = b"NSVF";
const HISTORY_MAGIC: &[u8; 4] = b"NSVH";
const VERSION: u32 = 1;

pub const DIAGNOSTICS_HEADER: [&str; 16] = [
    "t",
    "E",
    "E1",
    "Pi",
    "Pi1",
    "Phi",
    "Phi1",
    "Psi",
    "Psi1",
    "Lambda_eps",
    "Lambda1",
    "norm_u_minus_theta",
    "norm_u_0",
    "norm_u_1",
    "norm_u_2",
    "residual",
];

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn put_complex<W: Write>(w: &mut W, zs: &[Complex64]) -> Result<()> {
    put_u64(w, zs.len() as u64)?;
    for z in zs {
        put_f64(w, z.re)?;
        put_f64(w, z.im)?;
    }
    Ok(())
}

fn get_complex<R: Read>(r: &mut R, expect: usize) -> Result<Vec<Complex64>> {
    let len = get_u64(r)? as usize;
    if len != expect {
        return Err(Error::Format(format!("expected {expect} coefficients, found {len}")));
    }
    (0..len).map(|_| Ok(Complex64::new(get_f64(r)?, get_f64(r)?))).collect()
}

fn put_header<W: Write>(w: &mut W, magic: &[u8; 4], grid: &Grid) -> Result<()> {
    w.write_all(magic)?;
    put_u32(w, VERSION)?;
    put_u32(w, grid.dim() as u32)?;
    put_u32(w, grid.n() as u32)
}

fn get_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<Arc<Grid>> {
    let mut m = [0; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let v = get_u32(r)?;
    if v != VERSION {
        return Err(Error::Format(format!("unsupported format version {v}")));
    }
    let dim = get_u32(r)? as usize;
    let n = get_u32(r)? as usize;
    Grid::new(dim, n)
}

pub fn write_field<W: Write>(w: &mut W, u: &SpectralField) -> Result<()> {
    put_header(w, FIELD_MAGIC, u.grid())?;
    put_complex(w, u.coeffs())
}

pub fn read_field<R: Read>(r: &mut R) -> Result<SpectralField> {
    let grid = get_header(r, FIELD_MAGIC)?;
    let coeffs = get_complex(r, grid.coeff_len())?;
    SpectralField::from_coeffs(&grid, coeffs)
}

/// One row per retained mode and component: `kx,ky,kz,component,re,im`.
pub fn write_field_csv<W: Write>(w: &mut W, u: &SpectralField) -> Result<()> {
    writeln!(w, "kx,ky,kz,component,re,im")?;
    let grid = u.grid();
    for m in 0..grid.mode_count() {
        let k = grid.wavevector(m);
        for (c, z) in u.mode(m).iter().enumerate() {
            writeln!(w, "{},{},{},{},{},{}", k[0], k[1], k[2], c, z.re, z.im)?;
        }
    }
    Ok(())
}

/// Checkpoint of a history together with the kernel it was built for.
pub fn write_history<W: Write>(w: &mut W, eta: &HistoryField, kernel: &KernelShape, epsilon: f64) -> Result<()> {
    put_header(w, HISTORY_MAGIC, eta.grid())?;
    let spec = serde_json::to_vec(kernel).map_err(|e| Error::Format(e.to_string()))?;
    put_u64(w, spec.len() as u64)?;
    w.write_all(&spec)?;
    put_f64(w, epsilon)?;
    if let (Some(lags), Some(data)) = (eta.lags(), eta.node_data()) {
        put_u32(w, 0)?;
        put_u64(w, lags.len() as u64)?;
        put_f64(w, lags.ratio())?;
        for s in lags.nodes() {
            put_f64(w, *s)?;
        }
        put_complex(w, data)?;
    } else if let Some((terms, moments, quad)) = eta.moment_parts() {
        put_u32(w, 1)?;
        put_u64(w, terms.len() as u64)?;
        for ((t, m), q) in terms.iter().zip(moments).zip(quad) {
            put_f64(w, t.amplitude)?;
            put_f64(w, t.rate)?;
            put_f64(w, q[0])?;
            put_f64(w, q[1])?;
            put_complex(w, m.coeffs())?;
        }
    }
    Ok(())
}

/// Reads a checkpoint back; returns the history, the kernel shape and `ε`.
pub fn read_history<R: Read>(r: &mut R) -> Result<(HistoryField, KernelShape, f64)> {
    let grid = get_header(r, HISTORY_MAGIC)?;
    let len = get_u64(r)? as usize;
    let mut spec = vec![0; len];
    r.read_exact(&mut spec)?;
    let shape: KernelShape = serde_json::from_slice(&spec).map_err(|e| Error::Format(e.to_string()))?;
    let epsilon = get_f64(r)?;
    let eta = match get_u32(r)? {
        0 => {
            let p = get_u64(r)? as usize;
            let ratio = get_f64(r)?;
            let nodes = (0..p).map(|_| get_f64(r)).collect::<Result<Vec<_>>>()?;
            let lags = LagGrid::from_nodes(nodes, ratio)?;
            let data = get_complex(r, grid.coeff_len() * p)?;
            HistoryField::from_nodes(&grid, &lags, data)?
        }
        1 => {
            let count = get_u64(r)? as usize;
            let mut terms = Vec::with_capacity(count);
            let mut moments = Vec::with_capacity(count);
            let mut quad = Vec::with_capacity(count);
            for _ in 0..count {
                terms.push(ExpTerm::new(get_f64(r)?, get_f64(r)?));
                quad.push([get_f64(r)?, get_f64(r)?]);
                moments.push(SpectralField::from_coeffs(&grid, get_complex(r, grid.coeff_len())?)?);
            }
            HistoryField::from_moments(&grid, terms, moments, quad)?
        }
        tag => return Err(Error::Format(format!("unknown history representation tag {tag}"))),
    };
    Ok((eta, shape, epsilon))
}

/// Diagnostics table with the fixed column order of `DIAGNOSTICS_HEADER`.
pub fn write_diagnostics<W: Write>(w: &mut W, traj: &Trajectory) -> Result<()> {
    writeln!(w, "{}", DIAGNOSTICS_HEADER.join(","))?;
    for (r, res) in traj.reports.iter().zip(traj.residual_column()) {
        let row = [
            r.t,
            r.e,
            r.e1,
            r.pi,
            r.pi1,
            r.phi,
            r.phi1,
            r.psi,
            r.psi1,
            r.lambda_eps,
            r.lambda1,
            r.norm_u_minus_theta,
            r.norm_u_0,
            r.norm_u_1,
            r.norm_u_2,
            res,
        ];
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}
