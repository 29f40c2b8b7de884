//! Finite-difference Dirichlet solves and the Dirichlet-to-Neumann map in a
//! per-face sine basis.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{Domain, GridSpec, ScalarField};
use crate::linalg::{BandLu, BandMatrix};
use crate::spectral::unflatten;

/// Condition estimate above which a Helmholtz operator is refused.
pub const CONDITION_CAP: f64 = 1e12;
/// Relative spectral gap (against `max(1, k²‖q‖∞)`) below which the operator is refused.
pub const GAP_FLOOR: f64 = 1e-3;
/// Default admissible unrepresented fraction of a projected trace.
pub const DEFAULT_TAIL_LIMIT: f64 = 0.10;

/// Face `x_axis = 0` (`side == 0`) or `x_axis = 1` (`side == 1`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Face {
    pub axis: usize,
    pub side: usize,
}

impl Face {
    pub fn all(dim: usize) -> Vec<Face> {
        (0..dim)
            .flat_map(|axis| [0, 1].into_iter().map(move |side| Face { axis, side }))
            .collect()
    }

    /// Tangential axes in increasing order.
    pub fn tangential(&self, dim: usize) -> Vec<usize> {
        (0..dim).filter(|&a| a != self.axis).collect()
    }

    /// Outward normal component along `axis`.
    pub fn normal_sign(&self) -> f64 {
        if self.side == 0 {
            -1.0
        } else {
            1.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMode {
    pub face: usize,
    /// Sine indices along the face's tangential axes.
    pub m: Vec<usize>,
    /// Laplace–Beltrami eigenvalue π²|m|².
    pub mu2: f64,
    /// Factor making the mode L²(face)-normalized.
    pub norm_factor: f64,
}

/// Tensor sine modes `Π √2 sin(m_j π t_j)` on every face of the box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryBasis {
    grid: GridSpec,
    modes_per_face: usize,
    faces: Vec<Face>,
    modes: Vec<BoundaryMode>,
}

impl BoundaryBasis {
    pub fn new(grid: &GridSpec, modes_per_face: usize) -> Result<Self> {
        let n = grid.points_per_axis();
        if modes_per_face == 0 || modes_per_face > n - 2 {
            return Err(Error::InvalidResolution(format!(
                "modes_per_face = {modes_per_face} must lie in 1..={}",
                n - 2
            )));
        }
        let dim = grid.dim();
        let faces = Face::all(dim);
        let norm_factor = 2f64.powf((dim - 1) as f64 / 2.0);
        let mut modes = Vec::new();
        for face in 0..faces.len() {
            match dim {
                2 => {
                    for m in 1..=modes_per_face {
                        modes.push(BoundaryMode {
                            face,
                            m: vec![m],
                            mu2: PI * PI * (m * m) as f64,
                            norm_factor,
                        });
                    }
                }
                _ => {
                    for m1 in 1..=modes_per_face {
                        for m2 in 1..=modes_per_face {
                            modes.push(BoundaryMode {
                                face,
                                m: vec![m1, m2],
                                mu2: PI * PI * (m1 * m1 + m2 * m2) as f64,
                                norm_factor,
                            });
                        }
                    }
                }
            }
        }
        Ok(Self {
            grid: grid.clone(),
            modes_per_face,
            faces,
            modes,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn modes_per_face(&self) -> usize {
        self.modes_per_face
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn modes(&self) -> &[BoundaryMode] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn mu2(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.mu2).collect()
    }

    /// Index of the mode `(face, m)`.
    pub fn index_of(&self, face: usize, m: &[usize]) -> Option<usize> {
        self.modes.iter().position(|md| md.face == face && md.m == m)
    }

    /// Value of mode `i` at tangential coordinates `t` of its face.
    pub fn eval_mode(&self, i: usize, t: &[f64]) -> f64 {
        let md = &self.modes[i];
        md.norm_factor
            * md.m
                .iter()
                .zip(t)
                .map(|(&m, &tj)| (m as f64 * PI * tj).sin())
                .product::<f64>()
    }

    fn same_layout(&self, other: &Self) -> bool {
        self.grid == other.grid && self.modes_per_face == other.modes_per_face
    }

    /// Boundary values on the Ω lattice of `Σ c_j φ_j` (interior nodes are zero).
    pub fn synthesize(&self, coeffs: &[Complex64]) -> Result<ScalarField> {
        if coeffs.len() != self.len() {
            return Err(Error::BasisMismatch(format!(
                "{} coefficients for a basis of {}",
                coeffs.len(),
                self.len()
            )));
        }
        let geo = FaceGeometry::new(&self.grid);
        let mut values = vec![Complex64::new(0.0, 0.0); self.grid.omega_len()];
        for (j, c) in coeffs.iter().enumerate() {
            if *c == Complex64::new(0.0, 0.0) {
                continue;
            }
            let md = &self.modes[j];
            for node in &geo.faces[md.face] {
                values[node.flat] += c * geo.mode_value(md, &node.tidx);
            }
        }
        ScalarField::new(self.grid.clone(), Domain::Omega, values, false)
    }
}

struct FaceNode {
    flat: usize,
    inner: usize,
    tidx: Vec<usize>,
    /// Tangential neighbors, two per tangential axis.
    neighbors: Vec<usize>,
}

/// Interior nodes of each face with their inward neighbor and face stencil.
struct FaceGeometry {
    h: f64,
    sines: Vec<Vec<f64>>,
    faces: Vec<Vec<FaceNode>>,
}

impl FaceGeometry {
    fn new(grid: &GridSpec) -> Self {
        let n = grid.points_per_axis();
        let dim = grid.dim();
        let h = grid.h();
        let sines = (0..n - 1)
            .map(|m| (0..n).map(|i| (m as f64 * PI * i as f64 * h).sin()).collect())
            .collect();
        let faces = Face::all(dim)
            .into_iter()
            .map(|face| {
                let tang = face.tangential(dim);
                let fixed = if face.side == 0 { 0 } else { n - 1 };
                let inner_fixed = if face.side == 0 { 1 } else { n - 2 };
                let inner_count = (n - 2).pow((dim - 1) as u32);
                let mut nodes = Vec::with_capacity(inner_count);
                let mut t = vec![0usize; dim - 1];
                for flat_t in 0..inner_count {
                    unflatten(flat_t, n - 2, dim - 1, &mut t);
                    let mut idx = [0usize; 3];
                    idx[face.axis] = fixed;
                    for (a, &ax) in tang.iter().enumerate() {
                        idx[ax] = t[a] + 1;
                    }
                    let flat = grid.omega_index(&idx[..dim]);
                    let mut inner_idx = idx;
                    inner_idx[face.axis] = inner_fixed;
                    let inner = grid.omega_index(&inner_idx[..dim]);
                    let mut neighbors = Vec::with_capacity(2 * (dim - 1));
                    for &ax in &tang {
                        for delta in [-1i64, 1] {
                            let mut nb = idx;
                            nb[ax] = (nb[ax] as i64 + delta) as usize;
                            neighbors.push(grid.omega_index(&nb[..dim]));
                        }
                    }
                    nodes.push(FaceNode {
                        flat,
                        inner,
                        tidx: t.iter().map(|v| v + 1).collect(),
                        neighbors,
                    });
                }
                nodes
            })
            .collect();
        Self { h, sines, faces }
    }

    fn mode_value(&self, md: &BoundaryMode, tidx: &[usize]) -> f64 {
        md.norm_factor * md.m.iter().zip(tidx).map(|(&m, &i)| self.sines[m][i]).product::<f64>()
    }
}

/// Factorized `Δ_h + k² q` on the interior nodes of the Ω lattice.
pub struct HelmholtzOperator {
    grid: GridSpec,
    k: f64,
    q: Vec<f64>,
    lu: BandLu,
    condition: f64,
    gap: f64,
}

impl std::fmt::Debug for HelmholtzOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HelmholtzOperator")
            .field("k", &self.k)
            .field("condition", &self.condition)
            .field("gap", &self.gap)
            .finish()
    }
}

fn real_omega_values(q: &ScalarField) -> Result<Vec<f64>> {
    let q = q.restrict()?;
    if !q.is_real() {
        return Err(Error::InvalidConfig("refractive index must be real".into()));
    }
    Ok(q.values().iter().map(|v| v.re).collect())
}

impl HelmholtzOperator {
    pub fn new(q: &ScalarField, k: f64) -> Result<Self> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::InvalidConfig(format!("frequency k = {k} must be positive")));
        }
        let grid = q.grid().clone();
        let qv = real_omega_values(q)?;
        let n = grid.points_per_axis();
        let dim = grid.dim();
        let ni = n - 2;
        let unknowns = ni.pow(dim as u32);
        let bw = ni.pow((dim - 1) as u32);
        let h2 = 1.0 / (grid.h() * grid.h());
        let k2 = k * k;
        let mut a = BandMatrix::zeros(unknowns, bw);
        let mut idx = [0usize; 3];
        for row in 0..unknowns {
            unflatten(row, ni, dim, &mut idx[..dim]);
            let mut omega = idx;
            omega[..dim].iter_mut().for_each(|v| *v += 1);
            let qn = qv[grid.omega_index(&omega[..dim])];
            a.add(row, row, -2.0 * dim as f64 * h2 + k2 * qn);
            for axis in 0..dim {
                let stride = ni.pow((dim - 1 - axis) as u32);
                if idx[axis] > 0 {
                    a.add(row, row - stride, h2);
                }
                if idx[axis] + 1 < ni {
                    a.add(row, row + stride, h2);
                }
            }
        }
        let norm = a.norm1();
        let lu = a.factor().map_err(|e| match e {
            Error::SolveFailure(_) => Error::NearSingular {
                gap: 0.0,
                condition: f64::INFINITY,
            },
            other => other,
        })?;
        let inv = lu.inverse_norm1_estimate();
        let condition = norm * inv;
        let gap = 1.0 / inv;
        let qmax = qv.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let scale = (k2 * qmax).max(1.0);
        if !condition.is_finite() || condition > CONDITION_CAP || gap < GAP_FLOOR * scale {
            return Err(Error::NearSingular { gap, condition });
        }
        Ok(Self {
            grid,
            k,
            q: qv,
            lu,
            condition,
            gap,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn condition_estimate(&self) -> f64 {
        self.condition
    }

    pub fn gap_estimate(&self) -> f64 {
        self.gap
    }

    /// Solves with Dirichlet data taken from the boundary nodes of `g`.
    pub fn solve(&self, g: &ScalarField) -> Result<ScalarField> {
        if g.grid().dim() != self.grid.dim()
            || g.grid().points_per_axis() != self.grid.points_per_axis()
            || g.domain() != Domain::Omega
        {
            return Err(Error::ShapeMismatch("boundary data must live on the Ω lattice".into()));
        }
        let n = self.grid.points_per_axis();
        let dim = self.grid.dim();
        let ni = n - 2;
        let h2 = 1.0 / (self.grid.h() * self.grid.h());
        let unknowns = ni.pow(dim as u32);
        let gv = g.values();
        let mut rhs = vec![Complex64::new(0.0, 0.0); unknowns];
        let mut idx = [0usize; 3];
        for (row, slot) in rhs.iter_mut().enumerate() {
            unflatten(row, ni, dim, &mut idx[..dim]);
            for axis in 0..dim {
                if idx[axis] == 0 || idx[axis] + 1 == ni {
                    let mut b = idx;
                    b[..dim].iter_mut().for_each(|v| *v += 1);
                    for bnd in [0, n - 1] {
                        let inner = if bnd == 0 { 1 } else { n - 2 };
                        if b[axis] == inner {
                            let mut nb = b;
                            nb[axis] = bnd;
                            *slot -= gv[self.grid.omega_index(&nb[..dim])] * h2;
                        }
                    }
                }
            }
        }
        self.lu.solve_complex(&mut rhs);
        if rhs.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::SolveFailure("non-finite solution".into()));
        }
        let mut values = gv.to_vec();
        for (row, v) in rhs.into_iter().enumerate() {
            unflatten(row, ni, dim, &mut idx[..dim]);
            idx[..dim].iter_mut().for_each(|i| *i += 1);
            values[self.grid.omega_index(&idx[..dim])] = v;
        }
        ScalarField::new(self.grid.clone(), Domain::Omega, values, false)
    }

    fn flux_coefficients(&self, geo: &FaceGeometry, basis: &BoundaryBasis, u: &[Complex64]) -> Vec<Complex64> {
        let h = geo.h;
        let k2 = self.k * self.k;
        let cell = h.powi(self.grid.dim() as i32 - 1);
        let fluxes: Vec<Vec<Complex64>> = geo
            .faces
            .iter()
            .map(|nodes| {
                nodes
                    .iter()
                    .map(|nd| {
                        let ub = u[nd.flat];
                        let tlap =
                            nd.neighbors.iter().map(|&j| u[j]).sum::<Complex64>() - ub * nd.neighbors.len() as f64;
                        (ub - u[nd.inner]) / h - (tlap / (h * h) + ub * (k2 * self.q[nd.flat])) * (0.5 * h)
                    })
                    .collect()
            })
            .collect();
        basis
            .modes()
            .iter()
            .map(|md| {
                geo.faces[md.face]
                    .iter()
                    .zip(&fluxes[md.face])
                    .map(|(nd, f)| f * geo.mode_value(md, &nd.tidx))
                    .sum::<Complex64>()
                    * cell
            })
            .collect()
    }

    /// Basis coefficients of the Neumann data of the solve with boundary values `g`.
    pub fn neumann_coefficients(&self, basis: &BoundaryBasis, u: &ScalarField) -> Vec<Complex64> {
        let geo = FaceGeometry::new(&self.grid);
        self.flux_coefficients(&geo, basis, u.values())
    }
}

/// Discrete solution of `(Δ + k²q)u = 0` with `u = Σ f_j φ_j` on ∂Ω.
pub fn solve_dirichlet(q: &ScalarField, k: f64, basis: &BoundaryBasis, f: &[Complex64]) -> Result<ScalarField> {
    let op = HelmholtzOperator::new(q, k)?;
    op.solve(&basis.synthesize(f)?)
}

/// Matrix of the DN map in a boundary basis.
#[derive(Clone, Debug, PartialEq)]
pub struct DnMap {
    pub basis: BoundaryBasis,
    pub matrix: DMatrix<Complex64>,
    pub k: f64,
    pub label: String,
}

impl DnMap {
    pub fn mu2(&self) -> Vec<f64> {
        self.basis.mu2()
    }

    pub fn check_compatible(&self, other: &DnMap) -> Result<()> {
        if !self.basis.same_layout(&other.basis) || self.matrix.shape() != other.matrix.shape() {
            return Err(Error::BasisMismatch("DN maps built on different bases".into()));
        }
        Ok(())
    }

    /// Entrywise difference `self − other`.
    pub fn difference(&self, other: &DnMap) -> Result<DMatrix<Complex64>> {
        self.check_compatible(other)?;
        Ok(&self.matrix - &other.matrix)
    }

    /// `‖Λ − Λᵀ‖_F / ‖Λ‖_F`.
    pub fn asymmetry(&self) -> f64 {
        let diff = &self.matrix - self.matrix.transpose();
        diff.norm() / self.matrix.norm()
    }

    /// Copy with `perturbation` added to the matrix.
    pub fn perturbed(&self, perturbation: &DMatrix<Complex64>) -> Result<DnMap> {
        if perturbation.shape() != self.matrix.shape() {
            return Err(Error::ShapeMismatch("perturbation shape".into()));
        }
        Ok(DnMap {
            basis: self.basis.clone(),
            matrix: &self.matrix + perturbation,
            k: self.k,
            label: format!("{}+noise", self.label),
        })
    }
}

/// Assembles the DN matrix with one Dirichlet solve per basis mode.
pub fn assemble_dn(q: &ScalarField, k: f64, basis: &BoundaryBasis) -> Result<DnMap> {
    let op = HelmholtzOperator::new(q, k)?;
    assemble_with(&op, basis, "q")
}

/// [`assemble_dn`] with an already factorized operator.
pub fn assemble_with(op: &HelmholtzOperator, basis: &BoundaryBasis, label: &str) -> Result<DnMap> {
    let grid = op.grid();
    if basis.grid().dim() != grid.dim() || basis.grid().points_per_axis() != grid.points_per_axis() {
        return Err(Error::BasisMismatch("basis and potential use different grids".into()));
    }
    let geo = FaceGeometry::new(grid);
    let size = basis.len();
    let columns: Vec<Result<Vec<Complex64>>> = (0..size)
        .into_par_iter()
        .map(|j| {
            let md = &basis.modes()[j];
            let mut g = vec![Complex64::new(0.0, 0.0); grid.omega_len()];
            for nd in &geo.faces[md.face] {
                g[nd.flat] = Complex64::new(geo.mode_value(md, &nd.tidx), 0.0);
            }
            let g = ScalarField::new(grid.clone(), Domain::Omega, g, false)?;
            let u = op.solve(&g).map_err(|e| Error::ModeFailure {
                mode: j,
                source: Box::new(e),
            })?;
            Ok(op.flux_coefficients(&geo, basis, u.values()))
        })
        .collect();
    let mut matrix = DMatrix::zeros(size, size);
    for (j, col) in columns.into_iter().enumerate() {
        for (i, v) in col?.into_iter().enumerate() {
            matrix[(i, j)] = v;
        }
    }
    Ok(DnMap {
        basis: basis.clone(),
        matrix,
        k: op.k(),
        label: label.to_string(),
    })
}

/// Same-face diagonal DN response of the separable solution for constant `q = c`.
///
/// With `μ² = π²|m|² − k²c` the value is `μ coth μ` for `μ² > 0` and
/// `μ̂ cot μ̂`, `μ̂ = √(−μ²)`, otherwise.
pub fn analytic_dn_constant_q(m: &[usize], k: f64, c: f64, n: usize) -> Result<f64> {
    if m.len() + 1 != n {
        return Err(Error::ShapeMismatch(format!(
            "mode index of length {} in dimension {n}",
            m.len()
        )));
    }
    let m2: usize = m.iter().map(|v| v * v).sum();
    let mu2 = PI * PI * m2 as f64 - k * k * c;
    if mu2.abs() < 1e-10 {
        return Ok(1.0 + mu2 / 3.0);
    }
    if mu2 > 0.0 {
        let mu = mu2.sqrt();
        Ok(mu / mu.tanh())
    } else {
        let mh = (-mu2).sqrt();
        let s = mh.sin();
        if s.abs() < 1e-9 * mh.max(1.0) {
            return Err(Error::ResonantMode);
        }
        Ok(mh * mh.cos() / s)
    }
}

/// `H^{1/2} → H^{-1/2}` operator norm in the mode metric with eigenvalues `mu2`.
pub fn op_norm_star(d: &DMatrix<Complex64>, mu2: &[f64]) -> Result<f64> {
    if d.nrows() != d.ncols() || d.nrows() != mu2.len() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} matrix with {} weights",
            d.nrows(),
            d.ncols(),
            mu2.len()
        )));
    }
    if d.iter().all(|v| *v == Complex64::new(0.0, 0.0)) {
        return Ok(0.0);
    }
    let w: Vec<f64> = mu2.iter().map(|m| (1.0 + m).powf(-0.25)).collect();
    let scaled = DMatrix::from_fn(d.nrows(), d.ncols(), |i, j| d[(i, j)] * (w[i] * w[j]));
    let sv = scaled.singular_values();
    Ok(sv.iter().cloned().fold(0.0, f64::max))
}

/// A projected boundary trace.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub coeffs: Vec<Complex64>,
    /// Unrepresented fraction of the trace's L²(∂Ω) energy.
    pub tail_fraction: f64,
}

/// L²(face) projections of a boundary function onto the basis, by
/// trapezoid quadrature on each face of the Ω lattice.
pub fn boundary_project(
    basis: &BoundaryBasis,
    trace: impl Fn(&[f64]) -> Complex64 + Sync,
    tail_limit: f64,
) -> Result<Projection> {
    let grid = basis.grid();
    let dim = grid.dim();
    let n = grid.points_per_axis();
    let h = grid.h();
    let cell = h.powi(dim as i32 - 1);
    let faces = basis.faces();
    let on_face: Vec<Vec<(Vec<usize>, f64, Complex64)>> = faces
        .iter()
        .map(|face| {
            let tang = face.tangential(dim);
            let count = n.pow((dim - 1) as u32);
            let mut t = vec![0usize; dim - 1];
            (0..count)
                .map(|ft| {
                    unflatten(ft, n, dim - 1, &mut t);
                    let mut x = [0.0; 3];
                    x[face.axis] = face.side as f64;
                    for (a, &ax) in tang.iter().enumerate() {
                        x[ax] = t[a] as f64 * h;
                    }
                    let weight: f64 = t
                        .iter()
                        .map(|&i| if i == 0 || i == n - 1 { 0.5 } else { 1.0 })
                        .product();
                    (t.clone(), weight, trace(&x[..dim]))
                })
                .collect()
        })
        .collect();
    let energy: f64 = on_face.iter().flatten().map(|(_, w, g)| w * g.norm_sqr()).sum::<f64>() * cell;
    let geo_sines: Vec<Vec<f64>> = (0..n - 1)
        .map(|m| (0..n).map(|i| (m as f64 * PI * i as f64 * h).sin()).collect())
        .collect();
    let coeffs: Vec<Complex64> = basis
        .modes()
        .iter()
        .map(|md| {
            on_face[md.face]
                .iter()
                .map(|(t, w, g)| {
                    let phi: f64 = md.norm_factor * md.m.iter().zip(t).map(|(&m, &i)| geo_sines[m][i]).product::<f64>();
                    g * (w * phi)
                })
                .sum::<Complex64>()
                * cell
        })
        .collect();
    let captured: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum();
    let tail_fraction = if energy > 0.0 {
        ((energy - captured) / energy).max(0.0)
    } else {
        0.0
    };
    if tail_fraction > tail_limit {
        return Err(Error::TailTooLarge {
            fraction: tail_fraction,
            limit: tail_limit,
        });
    }
    Ok(Projection { coeffs, tail_fraction })
}

/// Entrywise complex Gaussian perturbation rescaled to `‖E‖_* = target`.
pub fn noise_matrix<R: Rng + ?Sized>(mu2: &[f64], target: f64, rng: &mut R) -> Result<DMatrix<Complex64>> {
    let size = mu2.len();
    let mut e = DMatrix::from_fn(size, size, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im)
    });
    if target == 0.0 || size == 0 {
        return Ok(DMatrix::zeros(size, size));
    }
    let norm = op_norm_star(&e, mu2)?;
    e *= Complex64::new(target / norm, 0.0);
    Ok(e)
}
