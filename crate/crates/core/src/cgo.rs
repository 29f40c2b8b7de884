//! Complex frequencies with `ξ·ξ = 0`, a periodic Faddeev-type solver for
//! `Δw + ξ·∇w = f`, and CGO solutions `u = exp(ξ·x/2)(1 + ψ)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{sobolev_norm, Domain, GridSpec, ScalarField};
use crate::reconstruct::ConstantsLedger;
use crate::spectral::{fft_nd, lattice_frequency, unflatten};

const C0: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Low,
    High,
}

impl Band {
    pub fn as_str(&self) -> &'static str {
        match self {
            Band::Low => "low",
            Band::High => "high",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMember {
    First,
    Second,
}

/// `ξ₁ = ζ + iα − irη` or `ξ₂ = −ζ − iα − irη`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgoVector {
    pub xi: Vec<Complex64>,
    pub zeta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub r: f64,
    pub eta: Vec<f64>,
    pub member: PairMember,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Largest violation of each defining relation, in the order
/// `ξ·ξ`, `α·η`, `α·ζ`, `η·ζ`, `|ζ|² − |α|² − r²`, `|ξ| − √2|ζ|`, the
/// member formula, all relative to `max(1, |ζ|²)` or `max(1, |ζ|)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InvariantDefects {
    pub null: f64,
    pub alpha_eta: f64,
    pub alpha_zeta: f64,
    pub eta_zeta: f64,
    pub pythagoras: f64,
    pub modulus: f64,
    pub formula: f64,
}

impl InvariantDefects {
    pub fn max(&self) -> f64 {
        [
            self.null,
            self.alpha_eta,
            self.alpha_zeta,
            self.eta_zeta,
            self.pythagoras,
            self.modulus,
            self.formula,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

impl CgoVector {
    pub fn dim(&self) -> usize {
        self.xi.len()
    }

    pub fn xi_norm(&self) -> f64 {
        self.xi.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn zeta_norm(&self) -> f64 {
        norm(&self.zeta)
    }

    /// Unconjugated `ξ·ξ`.
    pub fn self_dot(&self) -> Complex64 {
        self.xi.iter().map(|v| v * v).sum()
    }

    /// `ξ·x`.
    pub fn phase(&self, x: &[f64]) -> Complex64 {
        self.xi.iter().zip(x).map(|(v, xi)| v * xi).sum()
    }

    pub fn defects(&self) -> InvariantDefects {
        let z2 = dot(&self.zeta, &self.zeta);
        let scale2 = z2.max(1.0);
        let scale = scale2.sqrt();
        let a_norm = norm(&self.alpha);
        let sign = match self.member {
            PairMember::First => 1.0,
            PairMember::Second => -1.0,
        };
        let formula = self
            .xi
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let expected = Complex64::new(sign * self.zeta[j], sign * self.alpha[j] - self.r * self.eta[j]);
                (v - expected).norm()
            })
            .fold(0.0, f64::max)
            / scale;
        // η only enters through rη, so its orthogonality relations are void at r = 0.
        let eta_weight = if self.r > 0.0 { 1.0 } else { 0.0 };
        InvariantDefects {
            null: self.self_dot().norm() / scale2,
            alpha_eta: eta_weight * dot(&self.alpha, &self.eta).abs() / scale,
            alpha_zeta: dot(&self.alpha, &self.zeta).abs() / scale2,
            eta_zeta: eta_weight * dot(&self.eta, &self.zeta).abs() / scale,
            pythagoras: (z2 - a_norm * a_norm - self.r * self.r).abs() / scale2,
            modulus: (self.xi_norm() - 2f64.sqrt() * z2.sqrt()).abs() / scale,
            formula,
        }
    }
}

/// Unit vectors completing `η` to an orthonormal frame, by Gram–Schmidt
/// from the standard axis least aligned with `η` (lowest index on ties).
fn frame(eta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dim = eta.len();
    if dim == 2 {
        let z = vec![-eta[1], eta[0]];
        return (z, eta.to_vec());
    }
    let aux = (0..dim)
        .min_by(|&a, &b| eta[a].abs().partial_cmp(&eta[b].abs()).unwrap())
        .unwrap();
    let mut z: Vec<f64> = (0..dim).map(|i| if i == aux { 1.0 } else { 0.0 }).collect();
    let proj = dot(&z, eta);
    z.iter_mut().zip(eta).for_each(|(v, e)| *v -= proj * e);
    let zn = norm(&z);
    z.iter_mut().for_each(|v| *v /= zn);
    let a = vec![
        eta[1] * z[2] - eta[2] * z[1],
        eta[2] * z[0] - eta[0] * z[2],
        eta[0] * z[1] - eta[1] * z[0],
    ];
    (z, a)
}

fn check_eta(eta: &[f64]) -> Result<()> {
    if !(2..=3).contains(&eta.len()) {
        return Err(Error::InvalidDimension(eta.len()));
    }
    if (norm(eta) - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidConfig(format!("|eta| = {} is not 1", norm(eta))));
    }
    Ok(())
}

/// The pair `(ξ₁, ξ₂)` for given `r`, `η` and `|ζ| ≥ r`.
///
/// `|ζ| = r` gives `α = 0`. `|ζ| > r` needs the orthogonal triple, which
/// exists in the plane only for `r = 0`; there `η` is irrelevant and `α`
/// is taken along it.
pub fn xi_pair_with_zeta(r: f64, eta: &[f64], zeta_norm: f64) -> Result<(CgoVector, CgoVector)> {
    check_eta(eta)?;
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::InvalidConfig(format!("radius r = {r} must be nonnegative")));
    }
    let dim = eta.len();
    if zeta_norm < r * (1.0 - 1e-14) {
        return Err(Error::BandViolation {
            r,
            band: "any",
            detail: format!("|zeta| = {zeta_norm} < r"),
        });
    }
    let alpha_norm = (zeta_norm * zeta_norm - r * r).max(0.0).sqrt();
    let alpha_norm = if alpha_norm <= 1e-12 * zeta_norm.max(1.0) {
        0.0
    } else {
        alpha_norm
    };
    if dim == 2 && alpha_norm > 0.0 && r > 0.0 {
        return Err(Error::UnsupportedDimension(2));
    }
    let (zhat, ahat) = frame(eta);
    let zeta: Vec<f64> = zhat.iter().map(|v| v * zeta_norm).collect();
    let alpha: Vec<f64> = ahat.iter().map(|v| v * alpha_norm).collect();
    let make = |member: PairMember| {
        let s = if member == PairMember::First { 1.0 } else { -1.0 };
        let xi = (0..dim)
            .map(|j| Complex64::new(s * zeta[j], s * alpha[j] - r * eta[j]))
            .collect();
        CgoVector {
            xi,
            zeta: zeta.clone(),
            alpha: alpha.clone(),
            r,
            eta: eta.to_vec(),
            member,
        }
    };
    let first = make(PairMember::First);
    let second = make(PairMember::Second);
    Ok((first, second))
}

/// Band construction with thresholds `a₀k²M` and `C₁k²M` from the ledger.
pub fn build_xi_pair(
    r: f64,
    eta: &[f64],
    band: Band,
    k: f64,
    ledger: &ConstantsLedger,
) -> Result<(CgoVector, CgoVector)> {
    check_eta(eta)?;
    let dim = eta.len();
    let k2m = k * k * ledger.m_bound;
    match band {
        Band::Low => {
            if dim == 2 {
                return Err(Error::UnsupportedDimension(2));
            }
            let edge = ledger.a0 * k2m;
            if r > edge * (1.0 + 1e-12) {
                return Err(Error::BandViolation {
                    r,
                    band: "low",
                    detail: format!("r exceeds a0 k^2 M = {edge}"),
                });
            }
            xi_pair_with_zeta(r, eta, edge)
        }
        Band::High => {
            let edge = ledger.c1 * k2m;
            if r < edge * (1.0 - 1e-12) {
                return Err(Error::BandViolation {
                    r,
                    band: "high",
                    detail: format!("r below C1 k^2 M = {edge}"),
                });
            }
            xi_pair_with_zeta(r, eta, r)
        }
    }
}

/// Solver settings shared by the Faddeev inversion and the fixed-point loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CgoOptions {
    /// Pad factor of the periodic box the CGO problem is posed on.
    pub pad: f64,
    /// Symbols below `tau·|ξ|` in modulus are clamped.
    pub tau: f64,
    /// Largest admissible fraction of clamped lattice modes.
    pub degenerate_fraction: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Refuse `|ξ| < C₁k²‖q‖_{Hˢ}`.
    pub enforce_contraction: bool,
}

impl Default for CgoOptions {
    fn default() -> Self {
        Self {
            pad: 2.0,
            tau: 1e-3,
            degenerate_fraction: 0.02,
            tol: 1e-10,
            max_iter: 200,
            enforce_contraction: true,
        }
    }
}

/// Inverse of `Δ + ξ·∇` on a modulated periodic lattice.
///
/// Solutions are sought as `w = exp(iθ·x) v` with `v` periodic on the box;
/// the shift `θ` is a fraction of the lattice step chosen to keep the
/// symbol `−|κ+θ|² + iξ·(κ+θ)` away from zero.
#[derive(Clone, Debug)]
pub struct FaddeevSolver {
    grid: GridSpec,
    xi: Vec<Complex64>,
    theta: Vec<f64>,
    symbols: Vec<Complex64>,
    freqs: Vec<Vec<f64>>,
    clamped_fraction: f64,
}

fn symbol(xi: &[Complex64], kappa: &[f64]) -> Complex64 {
    let k2: f64 = kappa.iter().map(|v| v * v).sum();
    let xk: Complex64 = xi.iter().zip(kappa).map(|(x, k)| x * k).sum();
    Complex64::new(-k2, 0.0) + Complex64::i() * xk
}

impl FaddeevSolver {
    pub fn new(grid: &GridSpec, xi: &[Complex64], tau: f64, degenerate_fraction: f64) -> Result<Self> {
        let dim = grid.dim();
        if xi.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "xi of length {} in dimension {dim}",
                xi.len()
            )));
        }
        let p = grid.padded_points();
        let len = grid.padded_len();
        let box_len = grid.box_len();
        let step = grid.frequency_step();
        let xi_norm = xi.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let floor = tau * xi_norm;
        let mut lattice = vec![vec![0.0; dim]; len];
        for (flat, slot) in lattice.iter_mut().enumerate() {
            lattice_frequency(flat, p, dim, box_len, slot);
        }
        let fractions = [0.0, 0.25, 0.5, 0.75];
        let mut best: Option<(f64, Vec<f64>)> = None;
        let candidates = fractions.len().pow(dim as u32);
        for c in 0..candidates {
            let mut digits = [0usize; 3];
            unflatten(c, fractions.len(), dim, &mut digits[..dim]);
            let theta: Vec<f64> = digits[..dim].iter().map(|&d| fractions[d] * step).collect();
            let mut kappa = vec![0.0; dim];
            let min = lattice
                .iter()
                .map(|k| {
                    kappa.iter_mut().zip(k).zip(&theta).for_each(|((o, a), b)| *o = a + b);
                    symbol(xi, &kappa).norm()
                })
                .fold(f64::INFINITY, f64::min);
            if best.as_ref().is_none_or(|(m, _)| min > *m * (1.0 + 1e-12)) {
                best = Some((min, theta));
            }
        }
        let (_, theta) = best.expect("at least one candidate shift");
        let mut clamped = 0usize;
        let mut freqs = Vec::with_capacity(len);
        let symbols = lattice
            .iter()
            .map(|k| {
                let kappa: Vec<f64> = k.iter().zip(&theta).map(|(a, b)| a + b).collect();
                let mut s = symbol(xi, &kappa);
                if s.norm() < floor {
                    clamped += 1;
                    s = if s.norm() == 0.0 {
                        Complex64::new(floor, 0.0)
                    } else {
                        s * (floor / s.norm())
                    };
                }
                freqs.push(kappa);
                s
            })
            .collect();
        let clamped_fraction = clamped as f64 / len as f64;
        if clamped_fraction > degenerate_fraction {
            return Err(Error::SymbolDegenerate {
                fraction: clamped_fraction,
            });
        }
        Ok(Self {
            grid: grid.clone(),
            xi: xi.to_vec(),
            theta,
            symbols,
            freqs,
            clamped_fraction,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn clamped_fraction(&self) -> f64 {
        self.clamped_fraction
    }

    fn modulation(&self, sign: f64) -> Vec<Complex64> {
        let dim = self.grid.dim();
        let mut x = [0.0; 3];
        (0..self.grid.padded_len())
            .map(|flat| {
                self.grid.coords(Domain::Padded, flat, &mut x);
                Complex64::from_polar(1.0, sign * dot(&self.theta, &x[..dim]))
            })
            .collect()
    }

    /// Periodic coefficients `v̂(κ)` of `exp(−iθ·x) f`.
    fn coefficients(&self, f: &[Complex64]) -> Vec<Complex64> {
        let demod = self.modulation(-1.0);
        let mut g: Vec<Complex64> = f.iter().zip(&demod).map(|(a, b)| a * b).collect();
        fft_nd(
            &mut g,
            self.grid.padded_points(),
            self.grid.dim(),
            FftDirection::Forward,
        );
        g
    }

    fn synthesize(&self, mut coeffs: Vec<Complex64>) -> Vec<Complex64> {
        fft_nd(
            &mut coeffs,
            self.grid.padded_points(),
            self.grid.dim(),
            FftDirection::Inverse,
        );
        let scale = 1.0 / self.grid.padded_len() as f64;
        let modu = self.modulation(1.0);
        coeffs.iter().zip(&modu).map(|(a, b)| a * b * scale).collect()
    }

    /// `w` with `Δw + ξ·∇w = f` on the box.
    pub fn solve(&self, f: &[Complex64]) -> Vec<Complex64> {
        let mut c = self.coefficients(f);
        c.iter_mut().zip(&self.symbols).for_each(|(v, s)| *v /= s);
        self.synthesize(c)
    }

    /// Spectral application of `Δ + ξ·∇` to a field of the form `exp(iθ·x) v`.
    pub fn apply(&self, w: &[Complex64]) -> Vec<Complex64> {
        let mut c = self.coefficients(w);
        c.iter_mut()
            .zip(&self.freqs)
            .for_each(|(v, k)| *v *= symbol(&self.xi, k));
        self.synthesize(c)
    }

    /// `(Σ (1+|κ+θ|²)^t |ŵ|² / L^n)^{1/2}` for `w = exp(iθ·x) v`.
    pub fn modulated_norm(&self, w: &[Complex64], t: f64) -> f64 {
        let c = self.coefficients(w);
        let dim = self.grid.dim();
        let cell = self.grid.h().powi(dim as i32);
        let volume = self.grid.box_len().powi(dim as i32);
        let e: f64 = c
            .iter()
            .zip(&self.freqs)
            .map(|(v, k)| (1.0 + dot(k, k)).powf(t) * (v * cell).norm_sqr())
            .sum();
        (e / volume).sqrt()
    }
}

/// Pads `f` onto the CGO box: zero extension for supported fields, a smooth
/// taper equal to one on Ω otherwise.
fn box_extension(f: &ScalarField, grid: &GridSpec) -> Result<Vec<Complex64>> {
    if f.has_support() {
        return Ok(f.zero_extend_onto(grid)?.into_values());
    }
    let omega = f.restrict()?;
    let n = grid.points_per_axis();
    let p = grid.padded_points();
    let dim = grid.dim();
    let off = grid.offset();
    let margin = off as f64;
    let smooth = |u: f64| -> f64 {
        if u <= 0.0 {
            0.0
        } else if u >= 1.0 {
            1.0
        } else {
            let a = (-1.0 / u).exp();
            let b = (-1.0 / (1.0 - u)).exp();
            a / (a + b)
        }
    };
    let mut idx = [0usize; 3];
    let mut out = vec![C0; grid.padded_len()];
    for (flat, slot) in out.iter_mut().enumerate() {
        unflatten(flat, p, dim, &mut idx[..dim]);
        let mut weight = 1.0;
        let mut nearest = [0usize; 3];
        for a in 0..dim {
            let i = idx[a] as f64 - off as f64;
            let d = if i < 0.0 {
                -i
            } else if i > (n - 1) as f64 {
                i - (n - 1) as f64
            } else {
                0.0
            };
            weight *= smooth(1.0 - d / (0.9 * margin));
            nearest[a] = (i.max(0.0) as usize).min(n - 1);
        }
        if weight > 0.0 {
            *slot = omega.values()[grid.omega_index(&nearest[..dim])] * weight;
        }
    }
    Ok(out)
}

/// Remainder `ψ` of a CGO solution with the data needed to audit it.
#[derive(Clone, Debug)]
pub struct CgoSolution {
    /// `ψ` on the CGO box (not periodic: it carries the solver's modulation).
    pub psi: ScalarField,
    pub xi: CgoVector,
    pub k: f64,
    /// L²(Ω) norm of `Δψ + ξ·∇ψ + k²q(1+ψ)` over interior nodes.
    pub residual_norm: f64,
    /// `k²‖q(1+ψ)‖_{L²(Ω)}`, the natural scale of the residual.
    pub residual_scale: f64,
    pub iterations: usize,
    pub theta: Vec<f64>,
    pub psi_hs: f64,
}

/// JSON diagnostic record of a CGO construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgoDiagnostic {
    pub xi: Vec<[f64; 2]>,
    pub k: f64,
    pub iterations: usize,
    pub residual_norm: f64,
    pub psi_l2: f64,
    pub psi_hs: f64,
}

impl CgoSolution {
    /// `ψ` at the Ω nodes.
    pub fn psi_omega(&self) -> ScalarField {
        self.psi.restrict().expect("padded field")
    }

    pub fn psi_l2(&self) -> f64 {
        self.psi_omega().l2_norm()
    }

    /// `u = exp(ξ·x/2)(1+ψ)` at the Ω nodes.
    pub fn solution(&self) -> ScalarField {
        let psi = self.psi_omega();
        let grid = psi.grid().clone();
        let dim = grid.dim();
        let mut x = [0.0; 3];
        let values = psi
            .values()
            .iter()
            .enumerate()
            .map(|(flat, p)| {
                grid.coords(Domain::Omega, flat, &mut x);
                (self.xi.phase(&x[..dim]) * 0.5).exp() * (1.0 + p)
            })
            .collect();
        ScalarField::new(grid, Domain::Omega, values, false).expect("same lattice")
    }

    /// Trace of `u` at a boundary lattice point `x`.
    pub fn trace(&self, x: &[f64]) -> Complex64 {
        let grid = self.psi.grid();
        let n = grid.points_per_axis();
        let mut idx = [0usize; 3];
        for (a, v) in x.iter().enumerate() {
            idx[a] = ((v / grid.h()).round().max(0.0) as usize).min(n - 1);
        }
        let psi = self.psi.values()[grid.padded_index_of_omega(&idx[..x.len()])];
        (self.xi.phase(x) * 0.5).exp() * (1.0 + psi)
    }

    pub fn diagnostic(&self) -> CgoDiagnostic {
        CgoDiagnostic {
            xi: self.xi.xi.iter().map(|v| [v.re, v.im]).collect(),
            k: self.k,
            iterations: self.iterations,
            residual_norm: self.residual_norm,
            psi_l2: self.psi_l2(),
            psi_hs: self.psi_hs,
        }
    }
}

/// Pure exponential trace `exp(ξ·x/2)`.
pub fn exponential_trace(xi: &CgoVector, x: &[f64]) -> Complex64 {
    (xi.phase(x) * 0.5).exp()
}

fn lattice_l2(grid: &GridSpec, v: &[Complex64]) -> f64 {
    let cell = grid.h().powi(grid.dim() as i32);
    (cell * v.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt()
}

/// Fixed point `ψ = F_ξ(−k²q(1+ψ))` of the Faddeev iteration.
pub fn cgo_remainder(
    q: &ScalarField,
    k: f64,
    xi: &CgoVector,
    ledger: &ConstantsLedger,
    opts: &CgoOptions,
) -> Result<CgoSolution> {
    let omega_grid = q.grid();
    let dim = omega_grid.dim();
    if xi.dim() != dim {
        return Err(Error::ShapeMismatch("xi dimension differs from the grid".into()));
    }
    let xi_norm = xi.xi_norm();
    if xi_norm < ledger.eps0 {
        return Err(Error::ContractionViolated {
            xi_norm,
            threshold: ledger.eps0,
        });
    }
    let q_omega = q.restrict()?;
    if opts.enforce_contraction {
        let hs = sobolev_norm(&q_omega, ledger.s);
        let threshold = ledger.c1 * k * k * hs;
        if xi_norm < threshold {
            return Err(Error::ContractionViolated { xi_norm, threshold });
        }
    }
    let grid = omega_grid.with_pad(opts.pad)?;
    let len = grid.padded_len();
    let k2 = k * k;
    let qv = box_extension(&q_omega, &grid)?;
    let solver = FaddeevSolver::new(&grid, &xi.xi, opts.tau, opts.degenerate_fraction)?;
    let mut psi = vec![C0; len];
    let mut iterations = 0;
    if qv.iter().any(|v| *v != C0) {
        let mut last_update = f64::INFINITY;
        let mut growth = 0usize;
        loop {
            let rhs: Vec<Complex64> = qv.iter().zip(&psi).map(|(qq, p)| -k2 * qq * (1.0 + p)).collect();
            let next = solver.solve(&rhs);
            let diff: Vec<Complex64> = next.iter().zip(&psi).map(|(a, b)| a - b).collect();
            let update = lattice_l2(&grid, &diff);
            psi = next;
            iterations += 1;
            let size = lattice_l2(&grid, &psi);
            if !update.is_finite() || !size.is_finite() {
                return Err(Error::NoConvergence {
                    iterations,
                    update,
                    xi_norm,
                });
            }
            if update <= opts.tol * size.max(1.0) {
                break;
            }
            if update > last_update {
                growth += 1;
            } else {
                growth = 0;
            }
            if iterations >= opts.max_iter || (growth >= 5 && update > size) {
                return Err(Error::NoConvergence {
                    iterations,
                    update,
                    xi_norm,
                });
            }
            last_update = update;
        }
    }
    let lhs = solver.apply(&psi);
    let n = grid.points_per_axis();
    let mut idx = [0usize; 3];
    let mut res2 = 0.0;
    let mut scale2 = 0.0;
    let cell = grid.h().powi(dim as i32);
    for flat in 0..q_omega.values().len() {
        unflatten(flat, n, dim, &mut idx[..dim]);
        if idx[..dim].iter().any(|&i| i == 0 || i == n - 1) {
            continue;
        }
        let b = grid.padded_index_of_omega(&idx[..dim]);
        let src = k2 * qv[b] * (1.0 + psi[b]);
        res2 += (lhs[b] + src).norm_sqr();
        scale2 += src.norm_sqr();
    }
    let psi_hs = solver.modulated_norm(&psi, ledger.s);
    Ok(CgoSolution {
        psi: ScalarField::new(grid, Domain::Padded, psi, false)?,
        xi: xi.clone(),
        k,
        residual_norm: (res2 * cell).sqrt(),
        residual_scale: (scale2 * cell).sqrt(),
        iterations,
        theta: solver.theta().to_vec(),
        psi_hs,
    })
}

/// CGO solution `u = exp(ξ·x/2)(1+ψ)` on the Ω lattice.
pub fn cgo_solution(
    q: &ScalarField,
    k: f64,
    xi: &CgoVector,
    ledger: &ConstantsLedger,
    opts: &CgoOptions,
) -> Result<(ScalarField, CgoSolution)> {
    let sol = cgo_remainder(q, k, xi, ledger, opts)?;
    Ok((sol.solution(), sol))
}

/// Smallest `C₁` with which the fixed-point iteration converged for every
/// potential of the family, obtained by bisection on `|ζ|` along the high band
/// geometry with `η = e₁`.
pub fn calibrate_c1(family: &[ScalarField], k: f64, ledger: &ConstantsLedger, opts: &CgoOptions) -> Result<f64> {
    let mut relaxed = opts.clone();
    relaxed.enforce_contraction = false;
    let mut c1: f64 = 0.0;
    for q in family {
        let dim = q.grid().dim();
        let hs = sobolev_norm(&q.restrict()?, ledger.s);
        if hs == 0.0 {
            continue;
        }
        let mut eta = vec![0.0; dim];
        eta[0] = 1.0;
        let converges = |zeta: f64| -> bool {
            match xi_pair_with_zeta(zeta, &eta, zeta) {
                Ok((xi, _)) => cgo_remainder(q, k, &xi, ledger, &relaxed).is_ok(),
                Err(_) => false,
            }
        };
        let mut lo = ledger.eps0 / 2f64.sqrt();
        let mut hi = lo.max(1.0);
        if !converges(lo) {
            let mut tries = 0;
            while !converges(hi) {
                lo = hi;
                hi *= 2.0;
                tries += 1;
                if tries > 20 {
                    return Err(Error::NoConvergence {
                        iterations: opts.max_iter,
                        update: f64::NAN,
                        xi_norm: 2f64.sqrt() * hi,
                    });
                }
            }
            for _ in 0..30 {
                let mid = 0.5 * (lo + hi);
                if converges(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
        } else {
            hi = lo;
        }
        c1 = c1.max(2f64.sqrt() * hi / (k * k * hs));
    }
    Ok(c1)
}

/// Unit directions for polar designs: `count` equispaced angles in the
/// plane, or a Fibonacci sphere in space.
pub fn directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    match dim {
        2 => (0..count)
            .map(|j| {
                let t = 2.0 * PI * j as f64 / count as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        _ => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|j| {
                    let z = 1.0 - 2.0 * (j as f64 + 0.5) / count as f64;
                    let rho = (1.0 - z * z).sqrt();
                    let t = golden * j as f64;
                    vec![rho * t.cos(), rho * t.sin(), z]
                })
                .collect()
        }
    }
}
