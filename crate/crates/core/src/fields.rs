//! Grids over the unit box, complex scalar fields, the shared Fourier
//! convention and spectral Sobolev norms.
//!
//! The Fourier transform used everywhere is
//!
//! ```text
//! F f(rho) = ∫ f(x) exp(-i rho·x) dx
//! ```
//!
//! with no 2π normalization, so Parseval reads `‖f‖² = (2π)^-n ∫ |F f|²`.
//! On a periodic box of side `L` the lattice frequencies are `2π m / L`
//! and the same identity becomes `‖f‖² = L^-n Σ_m |F f(2π m/L)|²`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{fft_nd, lattice_frequency, unflatten};

/// Side of the smallest periodic box used when evaluating norms of
/// compactly supported fields.
pub const NORM_BOX_MIN: f64 = 8.0;

/// Regular lattice over Ω = (0,1)^n embedded in a periodic box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    points_per_axis: usize,
    pad_factor: f64,
    padded_points: usize,
}

impl GridSpec {
    pub fn new(dim: usize, points_per_axis: usize, pad_factor: f64) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidDimension(dim));
        }
        if points_per_axis < 8 {
            return Err(Error::InvalidResolution(format!(
                "points_per_axis = {points_per_axis} < 8"
            )));
        }
        if !pad_factor.is_finite() || pad_factor < 2.0 {
            return Err(Error::InvalidResolution(format!("pad_factor = {pad_factor} < 2")));
        }
        let cells = (points_per_axis - 1) as f64;
        let mut padded = (pad_factor * cells).round() as usize;
        if padded % 2 == 1 {
            padded += 1;
        }
        // Ω must sit strictly inside the box.
        let min = 2 * (points_per_axis - 1);
        if padded < min {
            padded = min;
        }
        Ok(Self {
            dim,
            points_per_axis,
            pad_factor,
            padded_points: padded,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn pad_factor(&self) -> f64 {
        self.pad_factor
    }

    /// Lattice spacing on Ω.
    pub fn h(&self) -> f64 {
        1.0 / (self.points_per_axis - 1) as f64
    }

    /// Lattice points per axis on the padded box.
    pub fn padded_points(&self) -> usize {
        self.padded_points
    }

    /// Side length of the padded box.
    pub fn box_len(&self) -> f64 {
        self.padded_points as f64 * self.h()
    }

    /// Padded-lattice index of the Ω origin along each axis.
    pub fn offset(&self) -> usize {
        (self.padded_points - (self.points_per_axis - 1)) / 2
    }

    /// Spacing 2π/L of the frequency lattice.
    pub fn frequency_step(&self) -> f64 {
        2.0 * PI / self.box_len()
    }

    pub fn omega_len(&self) -> usize {
        self.points_per_axis.pow(self.dim as u32)
    }

    pub fn padded_len(&self) -> usize {
        self.padded_points.pow(self.dim as u32)
    }

    pub fn len(&self, domain: Domain) -> usize {
        match domain {
            Domain::Omega => self.omega_len(),
            Domain::Padded => self.padded_len(),
        }
    }

    /// Same Ω lattice with a different box.
    pub fn with_pad(&self, pad_factor: f64) -> Result<Self> {
        Self::new(self.dim, self.points_per_axis, pad_factor)
    }

    /// Physical coordinates of flat point `flat` on `domain`.
    pub fn coords(&self, domain: Domain, flat: usize, out: &mut [f64]) {
        let (p, shift) = match domain {
            Domain::Omega => (self.points_per_axis, 0.0),
            Domain::Padded => (self.padded_points, self.offset() as f64),
        };
        let mut idx = [0usize; 3];
        unflatten(flat, p, self.dim, &mut idx[..self.dim]);
        let h = self.h();
        for axis in 0..self.dim {
            out[axis] = (idx[axis] as f64 - shift) * h;
        }
    }

    /// Flat Ω index of a multi-index.
    pub fn omega_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.points_per_axis + i)
    }

    /// Flat padded index of the Ω point with multi-index `idx`.
    pub fn padded_index_of_omega(&self, idx: &[usize]) -> usize {
        let off = self.offset();
        idx.iter().fold(0, |acc, &i| acc * self.padded_points + i + off)
    }

    /// Trapezoid weight (product of 1/2 per boundary axis) of an Ω multi-index.
    pub fn trapezoid_weight(&self, idx: &[usize]) -> f64 {
        let last = self.points_per_axis - 1;
        idx.iter()
            .map(|&i| if i == 0 || i == last { 0.5 } else { 1.0 })
            .product()
    }
}

/// Convenience constructor mirroring the CLI vocabulary.
pub fn make_grid(dim: usize, points_per_axis: usize, pad_factor: f64) -> Result<GridSpec> {
    GridSpec::new(dim, points_per_axis, pad_factor)
}

/// Which lattice a field's samples live on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    /// The `N^n` nodes of the closed box [0,1]^n.
    Omega,
    /// The `P^n` nodes of the periodic padded box.
    Padded,
}

/// Complex samples of a function on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    domain: Domain,
    values: Vec<Complex64>,
    support: bool,
}

impl ScalarField {
    pub fn new(grid: GridSpec, domain: Domain, values: Vec<Complex64>, support: bool) -> Result<Self> {
        let expected = grid.len(domain);
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a lattice of {expected}",
                values.len()
            )));
        }
        let field = Self {
            grid,
            domain,
            values,
            support,
        };
        if support && domain == Domain::Padded && !field.vanishes_outside_omega() {
            return Err(Error::SupportViolation(
                "support flag set but values outside Ω are nonzero".into(),
            ));
        }
        Ok(field)
    }

    pub fn zeros(grid: &GridSpec, domain: Domain) -> Self {
        Self {
            grid: grid.clone(),
            domain,
            values: vec![Complex64::new(0.0, 0.0); grid.len(domain)],
            support: true,
        }
    }

    pub fn from_fn(grid: &GridSpec, domain: Domain, support: bool, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let mut x = [0.0; 3];
        let dim = grid.dim();
        let values = (0..grid.len(domain))
            .map(|flat| {
                grid.coords(domain, flat, &mut x);
                f(&x[..dim])
            })
            .collect();
        Self {
            grid: grid.clone(),
            domain,
            values,
            support,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn has_support(&self) -> bool {
        self.support
    }

    pub fn is_real(&self) -> bool {
        self.values.iter().all(|v| v.im == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    fn vanishes_outside_omega(&self) -> bool {
        let p = self.grid.padded_points();
        let off = self.grid.offset();
        let hi = off + self.grid.points_per_axis() - 1;
        let dim = self.grid.dim();
        let mut idx = [0usize; 3];
        self.values.iter().enumerate().all(|(flat, v)| {
            unflatten(flat, p, dim, &mut idx[..dim]);
            let inside = idx[..dim].iter().all(|&i| i >= off && i <= hi);
            inside || *v == Complex64::new(0.0, 0.0)
        })
    }

    /// Zero extension of an Ω field to the padded box of `grid` (which must
    /// share the Ω lattice).
    pub fn zero_extend_onto(&self, grid: &GridSpec) -> Result<Self> {
        if grid.dim() != self.grid.dim() || grid.points_per_axis() != self.grid.points_per_axis() {
            return Err(Error::ShapeMismatch("grids do not share the Ω lattice".into()));
        }
        match self.domain {
            Domain::Padded => {
                if grid == &self.grid {
                    Ok(self.clone())
                } else {
                    self.restrict()?.zero_extend_onto(grid)
                }
            }
            Domain::Omega => {
                let n = self.grid.points_per_axis();
                let dim = self.grid.dim();
                let mut values = vec![Complex64::new(0.0, 0.0); grid.padded_len()];
                let mut idx = [0usize; 3];
                for (flat, v) in self.values.iter().enumerate() {
                    unflatten(flat, n, dim, &mut idx[..dim]);
                    values[grid.padded_index_of_omega(&idx[..dim])] = *v;
                }
                Ok(Self {
                    grid: grid.clone(),
                    domain: Domain::Padded,
                    values,
                    support: self.support,
                })
            }
        }
    }

    /// Zero extension onto the field's own padded box.
    pub fn zero_extend(&self) -> Self {
        let grid = self.grid.clone();
        self.zero_extend_onto(&grid).expect("same grid")
    }

    /// Samples of a padded field at the Ω nodes.
    pub fn restrict(&self) -> Result<Self> {
        match self.domain {
            Domain::Omega => Ok(self.clone()),
            Domain::Padded => {
                let n = self.grid.points_per_axis();
                let dim = self.grid.dim();
                let mut idx = [0usize; 3];
                let values = (0..self.grid.omega_len())
                    .map(|flat| {
                        unflatten(flat, n, dim, &mut idx[..dim]);
                        self.values[self.grid.padded_index_of_omega(&idx[..dim])]
                    })
                    .collect();
                Ok(Self {
                    grid: self.grid.clone(),
                    domain: Domain::Omega,
                    values,
                    support: self.support,
                })
            }
        }
    }

    /// Lattice L² norm: `(h^n Σ |f|²)^{1/2}` over the field's own nodes.
    pub fn l2_norm(&self) -> f64 {
        let cell = self.grid.h().powi(self.grid.dim() as i32);
        (cell * self.values.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
    }

    fn zip_with(&self, other: &Self, op: impl Fn(Complex64, Complex64) -> Complex64) -> Result<Self> {
        if self.grid != other.grid || self.domain != other.domain {
            return Err(Error::ShapeMismatch("fields live on different lattices".into()));
        }
        Ok(Self {
            grid: self.grid.clone(),
            domain: self.domain,
            values: self.values.iter().zip(&other.values).map(|(a, b)| op(*a, *b)).collect(),
            support: self.support && other.support,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        Self {
            grid: self.grid.clone(),
            domain: self.domain,
            values: self.values.iter().map(|v| v * factor).collect(),
            support: self.support,
        }
    }

    /// Lattice transform `F f(rho_m)` of a padded field, in FFT bin order.
    pub fn lattice_transform(&self) -> Result<Vec<Complex64>> {
        if self.domain != Domain::Padded {
            return Err(Error::ShapeMismatch("lattice transform needs a padded field".into()));
        }
        Ok(lattice_transform(&self.grid, self.values.clone()))
    }
}

/// `F f` on the frequency lattice of `grid`'s box from padded samples.
pub fn lattice_transform(grid: &GridSpec, mut values: Vec<Complex64>) -> Vec<Complex64> {
    let p = grid.padded_points();
    let dim = grid.dim();
    fft_nd(&mut values, p, dim, FftDirection::Forward);
    let h = grid.h();
    let cell = h.powi(dim as i32);
    let shift = grid.offset() as f64 * h;
    let box_len = grid.box_len();
    let mut rho = [0.0; 3];
    for (flat, v) in values.iter_mut().enumerate() {
        lattice_frequency(flat, p, dim, box_len, &mut rho);
        let phase: f64 = rho[..dim].iter().map(|r| r * shift).sum();
        *v *= Complex64::from_polar(cell, phase);
    }
    values
}

/// Inverse of [`lattice_transform`]: padded samples from lattice coefficients.
pub fn inverse_lattice_transform(grid: &GridSpec, mut coeffs: Vec<Complex64>) -> Vec<Complex64> {
    let p = grid.padded_points();
    let dim = grid.dim();
    let h = grid.h();
    let shift = grid.offset() as f64 * h;
    let box_len = grid.box_len();
    let volume = box_len.powi(dim as i32);
    let cell = h.powi(dim as i32);
    let mut rho = [0.0; 3];
    for (flat, v) in coeffs.iter_mut().enumerate() {
        lattice_frequency(flat, p, dim, box_len, &mut rho);
        let phase: f64 = rho[..dim].iter().map(|r| r * shift).sum();
        *v *= Complex64::from_polar(1.0 / cell, -phase);
    }
    fft_nd(&mut coeffs, p, dim, FftDirection::Inverse);
    let norm = cell / volume;
    for v in coeffs.iter_mut() {
        *v *= norm;
    }
    coeffs
}

/// Trapezoid-rule evaluation of `F f(rho)`.
///
/// Ω fields are integrated over [0,1]^n with trapezoid weights; padded
/// fields are summed over the whole periodic lattice.
pub fn sample_fourier(field: &ScalarField, rho: &[f64]) -> Result<Complex64> {
    let grid = field.grid();
    let dim = grid.dim();
    if rho.len() != dim {
        return Err(Error::ShapeMismatch(format!(
            "wavevector of length {} in dimension {dim}",
            rho.len()
        )));
    }
    let cell = grid.h().powi(dim as i32);
    let n = grid.points_per_axis();
    let mut x = [0.0; 3];
    let mut idx = [0usize; 3];
    let mut acc = Complex64::new(0.0, 0.0);
    for (flat, v) in field.values().iter().enumerate() {
        if *v == Complex64::new(0.0, 0.0) {
            continue;
        }
        grid.coords(field.domain(), flat, &mut x);
        let weight = match field.domain() {
            Domain::Omega => {
                unflatten(flat, n, dim, &mut idx[..dim]);
                grid.trapezoid_weight(&idx[..dim])
            }
            Domain::Padded => 1.0,
        };
        let phase: f64 = -rho.iter().zip(&x[..dim]).map(|(r, xi)| r * xi).sum::<f64>();
        acc += v * Complex64::from_polar(weight, phase);
    }
    Ok(acc * cell)
}

/// Σ_m over the lattice of `coeff_weight(rho_m) · |F f(rho_m)|²`, normalized by `L^-n`.
fn weighted_lattice_energy(grid: &GridSpec, values: Vec<Complex64>, t: f64) -> f64 {
    let transform = lattice_transform(grid, values);
    let p = grid.padded_points();
    let dim = grid.dim();
    let box_len = grid.box_len();
    let mut rho = [0.0; 3];
    let mut acc = 0.0;
    for (flat, v) in transform.iter().enumerate() {
        lattice_frequency(flat, p, dim, box_len, &mut rho);
        let r2: f64 = rho[..dim].iter().map(|r| r * r).sum();
        acc += (1.0 + r2).powf(t) * v.norm_sqr();
    }
    acc / box_len.powi(dim as i32)
}

/// Spectral H^t norm with weights `(1 + |rho|²)^t`.
///
/// Ω fields and support-flagged fields are zero-extended onto a box of side
/// at least [`NORM_BOX_MIN`], so the value approximates the whole-space norm
/// of the zero extension and does not depend on the working pad factor.
/// Padded fields without the support flag are treated as periodic on their
/// own box.
pub fn sobolev_norm(field: &ScalarField, t: f64) -> f64 {
    let grid = field.grid();
    if field.domain() == Domain::Padded && !field.has_support() {
        return weighted_lattice_energy(grid, field.values().to_vec(), t).sqrt();
    }
    let norm_grid = if grid.pad_factor() >= NORM_BOX_MIN {
        grid.clone()
    } else {
        grid.with_pad(NORM_BOX_MIN).expect("valid pad")
    };
    let extended = field.zero_extend_onto(&norm_grid).expect("same Ω lattice");
    weighted_lattice_energy(&norm_grid, extended.into_values(), t).sqrt()
}

/// Generator specification for a synthetic refractive index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialKind {
    Constant { value: f64 },
    GaussianBump(Bump),
    DoubleBump { first: Bump, second: Bump },
}

/// `amplitude · exp(-|x - center|² / width²)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Vec<f64>,
    pub width: f64,
    pub amplitude: f64,
}

/// Largest admissible boundary value of a bump, relative to its amplitude.
pub const SUPPORT_TOLERANCE: f64 = 1e-10;

impl Bump {
    pub fn standard(dim: usize) -> Self {
        Self {
            center: vec![0.5; dim],
            width: 0.08,
            amplitude: 1.0,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(&self.center).map(|(a, c)| (a - c) * (a - c)).sum();
        self.amplitude * (-r2 / (self.width * self.width)).exp()
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.center.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "bump center of length {} in dimension {dim}",
                self.center.len()
            )));
        }
        if !(self.width > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "bump width {} must be positive",
                self.width
            )));
        }
        let dist = self.center.iter().map(|c| c.min(1.0 - c)).fold(f64::INFINITY, f64::min);
        if dist < 4.0 * self.width {
            return Err(Error::SupportViolation(format!(
                "center at distance {dist:.4} from the boundary, less than 4 widths ({:.4})",
                4.0 * self.width
            )));
        }
        let tail = (-(dist * dist) / (self.width * self.width)).exp();
        if tail > SUPPORT_TOLERANCE {
            return Err(Error::SupportViolation(format!(
                "relative boundary value {tail:.3e} exceeds {SUPPORT_TOLERANCE:e}"
            )));
        }
        Ok(())
    }
}

impl PotentialKind {
    pub fn is_compact(&self) -> bool {
        !matches!(self, PotentialKind::Constant { .. })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            PotentialKind::Constant { value } => *value,
            PotentialKind::GaussianBump(b) => b.eval(x),
            PotentialKind::DoubleBump { first, second } => first.eval(x) + second.eval(x),
        }
    }

    /// H^s(Ω) surrogate used as the a-priori bound M: the spectral norm of
    /// the zero extension for compact kinds, `|c|` for constants (the
    /// periodic extension of a constant only carries the zero mode).
    pub fn hs_norm(&self, grid: &GridSpec, s: f64) -> Result<f64> {
        match self {
            PotentialKind::Constant { value } => Ok(value.abs()),
            _ => Ok(sobolev_norm(&make_test_potential(grid, self)?, s)),
        }
    }
}

/// Samples a synthetic potential on the Ω lattice.
pub fn make_test_potential(grid: &GridSpec, kind: &PotentialKind) -> Result<ScalarField> {
    match kind {
        PotentialKind::Constant { .. } => {}
        PotentialKind::GaussianBump(b) => b.validate(grid.dim())?,
        PotentialKind::DoubleBump { first, second } => {
            first.validate(grid.dim())?;
            second.validate(grid.dim())?;
        }
    }
    Ok(ScalarField::from_fn(grid, Domain::Omega, kind.is_compact(), |x| {
        Complex64::new(kind.eval(x), 0.0)
    }))
}
