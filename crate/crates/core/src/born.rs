//! Boundary pairings of DN-map differences and Born-type Fourier samples.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cgo::{cgo_remainder, exponential_trace, xi_pair_with_zeta, Band, CgoOptions, CgoVector};
use crate::dn::{boundary_project, DnMap, DEFAULT_TAIL_LIMIT};
use crate::error::{Error, Result};
use crate::fields::{sample_fourier, GridSpec, ScalarField};
use crate::reconstruct::ConstantsLedger;
use crate::spectral::lattice_frequency;

/// One estimate of `𝓕q̃(ρ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierSample {
    pub rho: Vec<f64>,
    pub value: Complex64,
    pub band: Band,
    pub zeta_norm: f64,
    pub error_budget: f64,
    /// Whether `|ζ|` satisfies the band rule.
    pub certified: bool,
    pub truth: Option<Complex64>,
}

impl FourierSample {
    pub fn r(&self) -> f64 {
        self.rho.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn error(&self) -> Option<f64> {
        self.truth.map(|t| (self.value - t).norm())
    }
}

/// `(1/k²) Σᵢⱼ c₂ᵢ (Λ₁ − Λ₂)ᵢⱼ c₁ⱼ`.
///
/// For discrete solutions `uₗ` of the two problems with those traces this
/// equals `∫(q₂ − q₁)u₁u₂`.
pub fn alessandrini_pair(
    lambda1: &DnMap,
    lambda2: &DnMap,
    c1: &[Complex64],
    c2: &[Complex64],
    k: f64,
) -> Result<Complex64> {
    let d = lambda1.difference(lambda2)?;
    let size = d.nrows();
    if c1.len() != size || c2.len() != size {
        return Err(Error::BasisMismatch(format!(
            "trace vectors of length {} and {} against {size} modes",
            c1.len(),
            c2.len()
        )));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..size {
        if c1[j] == Complex64::new(0.0, 0.0) {
            continue;
        }
        let col: Complex64 = (0..size).map(|i| c2[i] * d[(i, j)]).sum();
        acc += col * c1[j];
    }
    Ok(acc / (k * k))
}

/// Which boundary traces probe the DN maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMode {
    /// CGO traces `exp(ξ·x/2)(1+ψₗ)` with `ψₗ` computed from the true `qₗ`.
    Oracle,
    /// Pure exponential traces `exp(ξ·x/2)`.
    Blind,
}

impl ExtractionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExtractionMode::Oracle => "oracle",
            ExtractionMode::Blind => "blind",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionSettings {
    pub mode: ExtractionMode,
    pub cgo: CgoOptions,
    pub tail_limit: f64,
    /// Upper limit on `|ζ|` where the band rule leaves a choice.
    pub zeta_cap: Option<f64>,
}

impl Default for ExtractionSettings {
    fn default() -> Self {
        Self {
            mode: ExtractionMode::Oracle,
            cgo: CgoOptions::default(),
            tail_limit: DEFAULT_TAIL_LIMIT,
            zeta_cap: None,
        }
    }
}

/// Everything shared by the extractions of one sweep cell.
#[derive(Clone, Copy, Debug)]
pub struct ExtractionContext<'a> {
    pub lambda1: &'a DnMap,
    pub lambda2: &'a DnMap,
    /// True potentials, needed in oracle mode.
    pub potentials: Option<(&'a ScalarField, &'a ScalarField)>,
    /// `q̃ = q₁ − q₂` for truth values.
    pub truth: Option<&'a ScalarField>,
    pub k: f64,
    pub ledger: &'a ConstantsLedger,
    pub settings: &'a ExtractionSettings,
}

/// `2 C_χ M (2b + b²)` with `b = 2C₀k²M/|ξ|`, `|ξ| = √2|ζ|`.
pub fn error_budget(zeta_norm: f64, k: f64, ledger: &ConstantsLedger) -> f64 {
    if zeta_norm == 0.0 {
        return f64::INFINITY;
    }
    let b = 2.0 * ledger.c0 * k * k * ledger.m_bound / (2f64.sqrt() * zeta_norm);
    ledger.c_chi * 2.0 * ledger.m_bound * (2.0 * b + b * b)
}

/// `|ζ|` and certification for a design point.
fn zeta_for(r: f64, band: Band, dim: usize, ctx: &ExtractionContext) -> (f64, bool) {
    let k = ctx.k;
    let ledger = ctx.ledger;
    let cap = ctx.settings.zeta_cap.unwrap_or(f64::INFINITY);
    match band {
        Band::Low => {
            let edge = ledger.low_edge(k);
            let z = edge.min(cap).max(r);
            (z, z >= edge * (1.0 - 1e-12))
        }
        Band::High => {
            if dim == 2 && r == 0.0 {
                let z = ledger.high_edge(k).min(cap);
                (z, z >= ledger.high_edge(k) * (1.0 - 1e-12))
            } else {
                (r, r >= ledger.high_edge(k) * (1.0 - 1e-12))
            }
        }
    }
}

/// Born-type sample at `ρ = rη` with the band rule choosing `|ζ|`.
pub fn extract_fourier_sample(ctx: &ExtractionContext, r: f64, eta: &[f64], band: Band) -> Result<FourierSample> {
    let (zeta_norm, certified) = zeta_for(r, band, eta.len(), ctx);
    let mut s = extract_with_zeta(ctx, r, eta, zeta_norm)?;
    s.band = band;
    s.certified = certified;
    Ok(s)
}

fn is_zero(d: &nalgebra::DMatrix<Complex64>) -> bool {
    d.iter().all(|v| *v == Complex64::new(0.0, 0.0))
}

/// Sample at `ρ = rη` with an explicit `|ζ|`.
pub fn extract_with_zeta(ctx: &ExtractionContext, r: f64, eta: &[f64], zeta_norm: f64) -> Result<FourierSample> {
    let (xi1, xi2) = xi_pair_with_zeta(r, eta, zeta_norm)?;
    let rho: Vec<f64> = eta.iter().map(|e| r * e).collect();
    let truth = match ctx.truth {
        Some(t) => Some(sample_fourier(t, &rho)?),
        None => None,
    };
    let band = if zeta_norm > r * (1.0 + 1e-12) {
        Band::Low
    } else {
        Band::High
    };
    let sample = |value| FourierSample {
        rho: rho.clone(),
        value,
        band,
        zeta_norm,
        error_budget: error_budget(zeta_norm, ctx.k, ctx.ledger),
        certified: false,
        truth,
    };
    let d = ctx.lambda1.difference(ctx.lambda2)?;
    if is_zero(&d) {
        return Ok(sample(Complex64::new(0.0, 0.0)));
    }
    let c1 = probe_trace(ctx, &xi1, 0)?;
    let c2 = probe_trace(ctx, &xi2, 1)?;
    let pairing = alessandrini_pair(ctx.lambda1, ctx.lambda2, &c1, &c2, ctx.k)?;
    Ok(sample(-pairing))
}

fn probe_trace(ctx: &ExtractionContext, xi: &CgoVector, which: usize) -> Result<Vec<Complex64>> {
    let basis = &ctx.lambda1.basis;
    let tail = ctx.settings.tail_limit;
    let proj = match ctx.settings.mode {
        ExtractionMode::Blind => boundary_project(basis, |x| exponential_trace(xi, x), tail)?,
        ExtractionMode::Oracle => {
            let (q1, q2) = ctx
                .potentials
                .ok_or(Error::MissingConstant("oracle extraction needs the true potentials"))?;
            let q = if which == 0 { q1 } else { q2 };
            let sol = cgo_remainder(q, ctx.k, xi, ctx.ledger, &ctx.settings.cgo)?;
            boundary_project(basis, |x| sol.trace(x), tail)?
        }
    };
    Ok(proj.coeffs)
}

/// One point of a sampling design.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignPoint {
    pub rho: Vec<f64>,
    pub r: f64,
    pub eta: Vec<f64>,
    pub band: Band,
}

/// Every frequency of the padded-box lattice of `grid` with `|ρ| ≤ T`, in
/// polar form, with its band.
///
/// At `r = 0` the direction is the last axis.
pub fn sample_design(t: f64, k: f64, ledger: &ConstantsLedger, grid: &GridSpec) -> Result<Vec<DesignPoint>> {
    let dim = grid.dim();
    if dim != ledger.n {
        return Err(Error::ShapeMismatch("ledger and grid dimensions differ".into()));
    }
    let low = ledger.low_edge(k);
    if dim == 3 && t < low * (1.0 - 1e-12) {
        return Err(Error::CutoffBelowBand { t, edge: low });
    }
    if ledger.a0 < ledger.c1 {
        return Err(Error::InvalidLedger("a0 < C1 leaves a band gap".into()));
    }
    let p = grid.padded_points();
    let mut out = Vec::new();
    let mut rho = [0.0; 3];
    for flat in 0..grid.padded_len() {
        lattice_frequency(flat, p, dim, grid.box_len(), &mut rho);
        let r = rho[..dim].iter().map(|v| v * v).sum::<f64>().sqrt();
        if r > t {
            continue;
        }
        let eta: Vec<f64> = if r == 0.0 {
            (0..dim).map(|i| if i == dim - 1 { 1.0 } else { 0.0 }).collect()
        } else {
            rho[..dim].iter().map(|v| v / r).collect()
        };
        let band = if dim == 3 && r <= low { Band::Low } else { Band::High };
        out.push(DesignPoint {
            rho: rho[..dim].to_vec(),
            r,
            eta,
            band,
        });
    }
    Ok(out)
}

/// Extracts every design point in parallel; the output keeps the design order.
pub fn extract_design(ctx: &ExtractionContext, design: &[DesignPoint]) -> Result<Vec<FourierSample>> {
    design
        .par_iter()
        .map(|d| {
            let mut s = extract_fourier_sample(ctx, d.r, &d.eta, d.band)?;
            s.rho = d.rho.clone();
            Ok(s)
        })
        .collect()
}

/// Writes samples as CSV: `r, eta_*, band, zeta_norm, re, im, error_budget, truth_re, truth_im`.
pub fn write_samples_csv<W: Write>(samples: &[FourierSample], out: W) -> Result<()> {
    let dim = samples.first().map_or(2, |s| s.rho.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["r".to_string()];
    header.extend((0..dim).map(|i| format!("eta_{i}")));
    header.extend(
        ["band", "zeta_norm", "re", "im", "error_budget", "truth_re", "truth_im"]
            .iter()
            .map(|s| s.to_string()),
    );
    w.write_record(&header)?;
    for s in samples {
        let r = s.r();
        let mut row = vec![format!("{r:e}")];
        row.extend(s.rho.iter().map(|v| format!("{:e}", if r > 0.0 { v / r } else { 0.0 })));
        row.push(s.band.as_str().to_string());
        row.push(format!("{:e}", s.zeta_norm));
        row.push(format!("{:e}", s.value.re));
        row.push(format!("{:e}", s.value.im));
        row.push(format!("{:e}", s.error_budget));
        match s.truth {
            Some(t) => {
                row.push(format!("{:e}", t.re));
                row.push(format!("{:e}", t.im));
            }
            None => {
                row.push(String::new());
                row.push(String::new());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dn::{assemble_dn, BoundaryBasis};
    use crate::fields::{make_grid, make_test_potential, Bump, PotentialKind};

    fn bump(c: [f64; 2], w: f64, a: f64) -> PotentialKind {
        PotentialKind::GaussianBump(Bump {
            center: c.to_vec(),
            width: w,
            amplitude: a,
        })
    }

    #[test]
    fn equal_maps_give_zero() {
        let g = make_grid(2, 17, 2.0).unwrap();
        let q = make_test_potential(&g, &bump([0.5, 0.5], 0.08, 1.0)).unwrap();
        let b = BoundaryBasis::new(&g, 6).unwrap();
        let d = assemble_dn(&q, 2.0, &b).unwrap();
        let c: Vec<Complex64> = (0..b.len()).map(|i| Complex64::new(i as f64, 1.0)).collect();
        assert_eq!(
            alessandrini_pair(&d, &d, &c, &c, 2.0).unwrap(),
            Complex64::new(0.0, 0.0)
        );
        let ledger = ConstantsLedger::new(2, 3.0, 1.0).unwrap();
        let settings = ExtractionSettings::default();
        let ctx = ExtractionContext {
            lambda1: &d,
            lambda2: &d,
            potentials: Some((&q, &q)),
            truth: None,
            k: 2.0,
            ledger: &ledger,
            settings: &settings,
        };
        let s = extract_fourier_sample(&ctx, 10.0, &[0.6, 0.8], Band::High).unwrap();
        assert_eq!(s.value, Complex64::new(0.0, 0.0));
        assert!(matches!(
            alessandrini_pair(&d, &d, &c[1..], &c, 2.0),
            Err(Error::BasisMismatch(_))
        ));
    }

    #[test]
    fn pairing_is_bilinear() {
        let g = make_grid(2, 17, 2.0).unwrap();
        let q1 = make_test_potential(&g, &bump([0.45, 0.5], 0.08, 1.0)).unwrap();
        let q2 = make_test_potential(&g, &bump([0.55, 0.5], 0.08, 0.5)).unwrap();
        let b = BoundaryBasis::new(&g, 6).unwrap();
        let d1 = assemble_dn(&q1, 2.0, &b).unwrap();
        let d2 = assemble_dn(&q2, 2.0, &b).unwrap();
        let c1: Vec<Complex64> = (0..b.len()).map(|i| Complex64::new((i as f64).sin(), 0.2)).collect();
        let c2: Vec<Complex64> = (0..b.len()).map(|i| Complex64::new(1.0, (i as f64).cos())).collect();
        let lam = Complex64::new(0.3, -1.7);
        let scaled: Vec<Complex64> = c1.iter().map(|v| v * lam).collect();
        let a = alessandrini_pair(&d1, &d2, &c1, &c2, 2.0).unwrap();
        let b2 = alessandrini_pair(&d1, &d2, &scaled, &c2, 2.0).unwrap();
        assert!((b2 - a * lam).norm() < 1e-12 * b2.norm());
    }

    #[test]
    fn planar_design_is_high_band_and_complete() {
        let g = make_grid(2, 17, 2.0).unwrap();
        let ledger = ConstantsLedger::new(2, 3.0, 1.0).unwrap();
        let design = sample_design(5.0, 1.0, &ledger, &g).unwrap();
        assert!(design.iter().all(|d| d.band == Band::High));
        let step = g.frequency_step();
        let expected = {
            let mut count = 0;
            let kmax = (5.0 / step).ceil() as i64 + 1;
            for i in -kmax..=kmax {
                for j in -kmax..=kmax {
                    if ((i * i + j * j) as f64).sqrt() * step <= 5.0 {
                        count += 1;
                    }
                }
            }
            count
        };
        assert_eq!(design.len(), expected);
    }

    #[test]
    fn spatial_design_at_the_low_edge_is_low_band() {
        let g = make_grid(3, 9, 2.0).unwrap();
        let ledger = ConstantsLedger::new(3, 3.0, 1.0).unwrap();
        let k = 1.0;
        let edge = ledger.low_edge(k);
        let design = sample_design(edge, k, &ledger, &g).unwrap();
        assert!(!design.is_empty());
        assert!(design.iter().all(|d| d.band == Band::Low));
        assert!(matches!(
            sample_design(0.5 * edge, k, &ledger, &g),
            Err(Error::CutoffBelowBand { .. })
        ));
    }

    #[test]
    fn budget_decays_like_inverse_zeta() {
        let ledger = ConstantsLedger::new(2, 3.0, 1.0).unwrap();
        let a = error_budget(1e6, 2.0, &ledger);
        let b = error_budget(2e6, 2.0, &ledger);
        assert!((a / b - 2.0).abs() < 1e-5);
    }
}
