//! Binary and CSV serialization of fields and DN matrices.
//!
//! Binary layouts are little endian. A field file is the magic `HSF1`,
//! `dim: u32`, `N: u32`, `pad: f64`, `domain: u8` (0 = Ω, 1 = padded),
//! `support: u8`, then the values as `(re, im)` pairs of `f64`. A DN file
//! is `HSD1`, `dim: u32`, `N: u32`, `pad: f64`, `modes_per_face: u32`,
//! `k: f64`, the label as `u32` length plus UTF-8 bytes, then the matrix in
//! row-major `(re, im)` pairs.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::dn::{BoundaryBasis, DnMap};
use crate::error::{Error, Result};
use crate::fields::{Domain, GridSpec, ScalarField};

const FIELD_MAGIC: &[u8; 4] = b"HSF1";
const DN_MAGIC: &[u8; 4] = b"HSD1";

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_complex<W: Write>(w: &mut W, v: Complex64) -> Result<()> {
    put_f64(w, v.re)?;
    put_f64(w, v.im)
}

fn get_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_complex<R: Read>(r: &mut R) -> Result<Complex64> {
    let re = get_f64(r)?;
    let im = get_f64(r)?;
    Ok(Complex64::new(re, im))
}

fn check_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    if &b != magic {
        return Err(Error::InvalidConfig(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&b),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

fn put_grid<W: Write>(w: &mut W, grid: &GridSpec) -> Result<()> {
    put_u32(w, grid.dim() as u32)?;
    put_u32(w, grid.points_per_axis() as u32)?;
    put_f64(w, grid.pad_factor())
}

fn get_grid<R: Read>(r: &mut R) -> Result<GridSpec> {
    let dim = get_u32(r)? as usize;
    let n = get_u32(r)? as usize;
    let pad = get_f64(r)?;
    GridSpec::new(dim, n, pad)
}

pub fn write_field<W: Write>(field: &ScalarField, mut w: W) -> Result<()> {
    w.write_all(FIELD_MAGIC)?;
    put_grid(&mut w, field.grid())?;
    let domain = match field.domain() {
        Domain::Omega => 0u8,
        Domain::Padded => 1u8,
    };
    w.write_all(&[domain, field.has_support() as u8])?;
    for v in field.values() {
        put_complex(&mut w, *v)?;
    }
    Ok(w.flush()?)
}

pub fn read_field<R: Read>(mut r: R) -> Result<ScalarField> {
    check_magic(&mut r, FIELD_MAGIC)?;
    let grid = get_grid(&mut r)?;
    let domain = match get_u8(&mut r)? {
        0 => Domain::Omega,
        1 => Domain::Padded,
        d => return Err(Error::InvalidConfig(format!("unknown domain tag {d}"))),
    };
    let support = get_u8(&mut r)? != 0;
    let values = (0..grid.len(domain))
        .map(|_| get_complex(&mut r))
        .collect::<Result<Vec<_>>>()?;
    ScalarField::new(grid, domain, values, support)
}

/// `i0, …, re, im` with one row per lattice node.
pub fn write_field_csv<W: Write>(field: &ScalarField, w: W) -> Result<()> {
    let grid = field.grid();
    let dim = grid.dim();
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (0..dim).map(|a| format!("x{a}")).collect();
    header.push("re".into());
    header.push("im".into());
    out.write_record(&header)?;
    let mut x = [0.0; 3];
    for (flat, v) in field.values().iter().enumerate() {
        grid.coords(field.domain(), flat, &mut x);
        let mut row: Vec<String> = x[..dim].iter().map(|c| format!("{c:e}")).collect();
        row.push(format!("{:e}", v.re));
        row.push(format!("{:e}", v.im));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_dn<W: Write>(map: &DnMap, mut w: W) -> Result<()> {
    w.write_all(DN_MAGIC)?;
    put_grid(&mut w, map.basis.grid())?;
    put_u32(&mut w, map.basis.modes_per_face() as u32)?;
    put_f64(&mut w, map.k)?;
    put_u32(&mut w, map.label.len() as u32)?;
    w.write_all(map.label.as_bytes())?;
    for i in 0..map.matrix.nrows() {
        for j in 0..map.matrix.ncols() {
            put_complex(&mut w, map.matrix[(i, j)])?;
        }
    }
    Ok(w.flush()?)
}

pub fn read_dn<R: Read>(mut r: R) -> Result<DnMap> {
    check_magic(&mut r, DN_MAGIC)?;
    let grid = get_grid(&mut r)?;
    let modes = get_u32(&mut r)? as usize;
    let basis = BoundaryBasis::new(&grid, modes)?;
    let k = get_f64(&mut r)?;
    let len = get_u32(&mut r)? as usize;
    let mut label = vec![0u8; len];
    r.read_exact(&mut label)?;
    let label = String::from_utf8(label).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let size = basis.len();
    let mut matrix = DMatrix::zeros(size, size);
    for i in 0..size {
        for j in 0..size {
            matrix[(i, j)] = get_complex(&mut r)?;
        }
    }
    Ok(DnMap {
        basis,
        matrix,
        k,
        label,
    })
}

/// `i, j, re, im` for every entry.
pub fn write_dn_csv<W: Write>(map: &DnMap, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["i", "j", "re", "im"])?;
    for i in 0..map.matrix.nrows() {
        for j in 0..map.matrix.ncols() {
            let v = map.matrix[(i, j)];
            out.write_record(&[
                i.to_string(),
                j.to_string(),
                format!("{:e}", v.re),
                format!("{:e}", v.im),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}
