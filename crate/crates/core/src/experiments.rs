//! Run configuration, verification suites, stability sweeps and their
//! CSV/JSON outputs.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::born::{
    alessandrini_pair, extract_design, sample_design, ExtractionContext, ExtractionMode, ExtractionSettings,
    FourierSample,
};
use crate::cgo::{calibrate_c1, cgo_remainder, xi_pair_with_zeta, Band, CgoDiagnostic};
use crate::dn::{
    analytic_dn_constant_q, assemble_with, noise_matrix, op_norm_star, BoundaryBasis, DnMap, HelmholtzOperator,
};
use crate::error::{Error, Result};
use crate::fields::{make_grid, make_test_potential, Bump, Domain, GridSpec, PotentialKind, ScalarField};
use crate::reconstruct::{
    bound_terms, choose_cutoff, error_report, fit_and_holdout, invert_truncated, ladder_end_rows, BoundFit,
    ConstantsLedger, LedgerOverrides, StabilityRecord,
};
use crate::spectral::lattice_frequency;

/// Column order of the stability CSV.
pub const STABILITY_HEADER: [&str; 10] = [
    "k",
    "A_star",
    "T_used",
    "regime",
    "err_hms",
    "err_l2",
    "lip_term",
    "log_term",
    "band_mode",
    "seed",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DnCheckSettings {
    pub value: f64,
    pub k: f64,
    /// Largest mode index compared.
    pub modes: usize,
    pub tolerance: f64,
}

impl Default for DnCheckSettings {
    fn default() -> Self {
        Self {
            value: 1.0,
            k: 2.0,
            modes: 4,
            tolerance: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentitySettings {
    pub pairs: usize,
    pub k: f64,
    pub modes_per_face: usize,
    /// Draw a fresh bump pair per trial instead of using `q1`, `q2`.
    pub random_potentials: bool,
    pub tolerance: f64,
}

impl Default for IdentitySettings {
    fn default() -> Self {
        Self {
            pairs: 20,
            k: 4.0,
            modes_per_face: 8,
            random_potentials: true,
            tolerance: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CgoSuiteSettings {
    /// `|ζ|` ladder; `ξ = ζ − i|ζ|e₁`-type high-band vectors.
    pub zeta: Vec<f64>,
    /// Defaults to the first entry of the k list.
    pub k: Option<f64>,
    pub slope_range: [f64; 2],
    pub residual_tolerance: f64,
    /// Allowed relative deviation of the `ψ` ratio from 4 when `k` doubles.
    pub k_scaling_slack: f64,
}

impl Default for CgoSuiteSettings {
    fn default() -> Self {
        Self {
            zeta: vec![8.0, 16.0, 32.0],
            k: None,
            slope_range: [-1.35, -0.65],
            residual_tolerance: 1e-4,
            k_scaling_slack: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGates {
    pub spearman_max: f64,
    pub noise_slack: f64,
}

impl Default for SweepGates {
    fn default() -> Self {
        Self {
            spearman_max: -0.9,
            noise_slack: 0.05,
        }
    }
}

/// A complete, replayable run description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dim: usize,
    pub points_per_axis: usize,
    pub pad: f64,
    /// Pad factor of the reconstruction lattice.
    pub recon_pad: f64,
    pub modes_per_face: usize,
    pub q1: PotentialKind,
    pub q2: PotentialKind,
    pub k: Vec<f64>,
    /// Target `A_star` values of the injected perturbation; 0 means noiseless.
    pub noise: Vec<f64>,
    pub s: f64,
    pub ledger: LedgerOverrides,
    pub extraction: ExtractionSettings,
    pub seed: u64,
    pub out: PathBuf,
    pub dn_check: DnCheckSettings,
    pub identity: IdentitySettings,
    pub cgo_suite: CgoSuiteSettings,
    pub gates: SweepGates,
}

impl Default for RunConfig {
    fn default() -> Self {
        let bump = |c: [f64; 2], w: f64, a: f64| {
            PotentialKind::GaussianBump(Bump {
                center: c.to_vec(),
                width: w,
                amplitude: a,
            })
        };
        let mut extraction = ExtractionSettings {
            mode: ExtractionMode::Blind,
            tail_limit: 0.25,
            zeta_cap: Some(6.0),
            ..Default::default()
        };
        extraction.cgo.enforce_contraction = false;
        Self {
            dim: 2,
            points_per_axis: 65,
            pad: 2.0,
            recon_pad: 8.0,
            modes_per_face: 63,
            q1: bump([0.45, 0.5], 0.09, 1.8e-4),
            q2: bump([0.55, 0.56], 0.072, 1.08e-4),
            k: vec![2.0, 4.0, 8.0, 16.0],
            noise: vec![0.0, 1e-6, 1e-4, 1e-2],
            s: 3.0,
            ledger: LedgerOverrides {
                m_bound: Some(0.2),
                c1: Some(1.25),
                c2: Some(0.625),
                c4: Some(50.0),
                eps0: Some(1e-3),
                ..Default::default()
            },
            extraction,
            seed: 7,
            out: PathBuf::from("out"),
            dn_check: DnCheckSettings::default(),
            identity: IdentitySettings::default(),
            cgo_suite: CgoSuiteSettings::default(),
            gates: SweepGates::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn grid(&self) -> Result<GridSpec> {
        make_grid(self.dim, self.points_per_axis, self.pad)
    }

    pub fn potentials(&self) -> Result<(ScalarField, ScalarField)> {
        let g = self.grid()?;
        Ok((make_test_potential(&g, &self.q1)?, make_test_potential(&g, &self.q2)?))
    }

    /// Ledger with `M` defaulting to the larger `Hˢ` norm of the two potentials.
    pub fn ledger(&self) -> Result<ConstantsLedger> {
        let g = self.grid()?;
        let m = match self.ledger.m_bound {
            Some(m) => m,
            None => self.q1.hs_norm(&g, self.s)?.max(self.q2.hs_norm(&g, self.s)?),
        };
        let base = ConstantsLedger::new(self.dim, self.s, m)?;
        base.with_overrides(&self.ledger)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.ledger()?;
        if self.k.iter().any(|k| !(*k > 0.0)) {
            return Err(Error::InvalidConfig("every k must be positive".into()));
        }
        if self.noise.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::InvalidConfig("noise targets must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Pass/fail outcome of one check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Gate {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// JSON record of a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub ledger: ConstantsLedger,
    pub gates: Vec<Gate>,
    pub failures: Vec<String>,
    pub summary: serde_json::Value,
}

impl Manifest {
    pub fn new(
        command: &str,
        config: &RunConfig,
        ledger: &ConstantsLedger,
        gates: Vec<Gate>,
        summary: serde_json::Value,
    ) -> Self {
        let failures = gates
            .iter()
            .filter(|g| !g.passed)
            .map(|g| format!("{}: {}", g.name, g.detail))
            .collect();
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: config.clone(),
            ledger: ledger.clone(),
            gates,
            failures,
            summary,
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(w.flush()?)
    }
}

fn rng_for(seed: u64, cell: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(cell))
}

fn write_csv<S: Serialize>(path: &Path, header: &[&str], rows: &[S]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- check-dn

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DnCheckRow {
    pub face: usize,
    pub mode: String,
    pub computed: f64,
    pub oracle: f64,
    pub rel: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DnCheckReport {
    pub rows: Vec<DnCheckRow>,
    pub max_rel: f64,
    pub asymmetry: f64,
}

/// Same-face diagonal entries for constant `q` against the separable solution.
pub fn run_dn_check(cfg: &RunConfig) -> Result<(DnCheckReport, DnMap)> {
    let g = cfg.grid()?;
    let set = &cfg.dn_check;
    let q = make_test_potential(&g, &PotentialKind::Constant { value: set.value })?;
    let modes = cfg.modes_per_face.max(set.modes).min(g.points_per_axis() - 2);
    let basis = BoundaryBasis::new(&g, modes)?;
    let op = HelmholtzOperator::new(&q, set.k)?;
    let map = assemble_with(&op, &basis, "constant")?;
    let mut rows = Vec::new();
    for (i, md) in basis.modes().iter().enumerate() {
        if md.m.iter().any(|&m| m > set.modes) {
            continue;
        }
        let oracle = analytic_dn_constant_q(&md.m, set.k, set.value, g.dim())?;
        let computed = map.matrix[(i, i)].re;
        rows.push(DnCheckRow {
            face: md.face,
            mode: md.m.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(":"),
            computed,
            oracle,
            rel: ((computed - oracle) / oracle).abs(),
        });
    }
    let max_rel = rows.iter().map(|r| r.rel).fold(0.0, f64::max);
    let asymmetry = map.asymmetry();
    Ok((
        DnCheckReport {
            rows,
            max_rel,
            asymmetry,
        },
        map,
    ))
}

// ---------------------------------------------------------- check-identity

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityRow {
    pub trial: usize,
    pub boundary_re: f64,
    pub boundary_im: f64,
    pub volume_re: f64,
    pub volume_im: f64,
    pub rel: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub rows: Vec<IdentityRow>,
    pub max_rel: f64,
}

fn random_bump<R: Rng>(rng: &mut R, dim: usize) -> PotentialKind {
    PotentialKind::GaussianBump(Bump {
        center: (0..dim).map(|_| rng.random_range(0.4..0.6)).collect(),
        width: rng.random_range(0.05..0.07),
        amplitude: rng.random_range(0.5..1.5),
    })
}

fn random_trace<R: Rng>(rng: &mut R, mu2: &[f64]) -> Vec<Complex64> {
    mu2.iter()
        .map(|m| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re, im) / (1.0 + m)
        })
        .collect()
}

/// `∫ f u v` by the trapezoid rule on the Ω lattice.
fn volume_integral(f: &ScalarField, u: &ScalarField, v: &ScalarField) -> Complex64 {
    let g = f.grid();
    let dim = g.dim();
    let n = g.points_per_axis();
    let cell = g.h().powi(dim as i32);
    let mut idx = [0usize; 3];
    let mut acc = Complex64::new(0.0, 0.0);
    for flat in 0..g.omega_len() {
        crate::spectral::unflatten(flat, n, dim, &mut idx[..dim]);
        acc += f.values()[flat] * u.values()[flat] * v.values()[flat] * g.trapezoid_weight(&idx[..dim]);
    }
    acc * cell
}

/// Boundary pairing `(1/k²)⟨(Λ₁−Λ₂)u₁, u₂⟩` against `∫(q₂−q₁)u₁u₂` over seeded trials.
pub fn run_identity_check(cfg: &RunConfig) -> Result<IdentityReport> {
    let g = cfg.grid()?;
    let set = &cfg.identity;
    let basis = BoundaryBasis::new(&g, set.modes_per_face.min(g.points_per_axis() - 2))?;
    let mu2 = basis.mu2();
    let fixed = if set.random_potentials {
        None
    } else {
        Some(cfg.potentials()?)
    };
    let rows: Vec<Result<IdentityRow>> = (0..set.pairs)
        .into_par_iter()
        .map(|trial| {
            let mut rng = rng_for(cfg.seed, trial as u64);
            let (q1, q2) = match &fixed {
                Some((a, b)) => (a.clone(), b.clone()),
                None => {
                    let a = random_bump(&mut rng, g.dim());
                    let b = random_bump(&mut rng, g.dim());
                    (make_test_potential(&g, &a)?, make_test_potential(&g, &b)?)
                }
            };
            let c1 = random_trace(&mut rng, &mu2);
            let c2 = random_trace(&mut rng, &mu2);
            let o1 = HelmholtzOperator::new(&q1, set.k)?;
            let o2 = HelmholtzOperator::new(&q2, set.k)?;
            let l1 = assemble_with(&o1, &basis, "q1")?;
            let l2 = assemble_with(&o2, &basis, "q2")?;
            let boundary = alessandrini_pair(&l1, &l2, &c1, &c2, set.k)?;
            let u1 = o1.solve(&basis.synthesize(&c1)?)?;
            let u2 = o2.solve(&basis.synthesize(&c2)?)?;
            let volume = volume_integral(&q2.sub(&q1)?, &u1, &u2);
            let rel = if volume.norm() == 0.0 {
                boundary.norm()
            } else {
                (boundary - volume).norm() / volume.norm()
            };
            Ok(IdentityRow {
                trial,
                boundary_re: boundary.re,
                boundary_im: boundary.im,
                volume_re: volume.re,
                volume_im: volume.im,
                rel,
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let max_rel = rows.iter().map(|r| r.rel).fold(0.0, f64::max);
    Ok(IdentityReport { rows, max_rel })
}

// --------------------------------------------------------------- check-cgo

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgoRow {
    pub k: f64,
    pub zeta_norm: f64,
    pub xi_norm: f64,
    pub iterations: usize,
    pub psi_l2: f64,
    pub psi_hs: f64,
    pub residual_rel: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgoReport {
    pub rows: Vec<CgoRow>,
    /// Least-squares slope of `log‖ψ‖_{L²}` against `log|ζ|` at the base frequency.
    pub slope: f64,
    /// `‖ψ‖` at `2k` over `‖ψ‖` at `k`, first ladder entry.
    pub k_ratio: f64,
    pub max_residual: f64,
    pub calibrated_c1: f64,
    pub diagnostics: Vec<CgoDiagnostic>,
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Remainder decay over the `|ζ|` ladder for `q1`, plus the `k`-doubling ratio.
pub fn run_cgo_suite(cfg: &RunConfig) -> Result<CgoReport> {
    let (q1, q2) = cfg.potentials()?;
    let ledger = cfg.ledger()?;
    let set = &cfg.cgo_suite;
    let k = set
        .k
        .or_else(|| cfg.k.first().copied())
        .ok_or(Error::InvalidConfig("empty k list".into()))?;
    let dim = cfg.dim;
    let mut eta = vec![0.0; dim];
    eta[0] = 1.0;
    let opts = &cfg.extraction.cgo;
    let mut jobs: Vec<(f64, f64)> = set.zeta.iter().map(|&z| (k, z)).collect();
    if let Some(&z0) = set.zeta.first() {
        jobs.push((2.0 * k, z0));
    }
    let solved: Vec<Result<(CgoRow, CgoDiagnostic)>> = jobs
        .par_iter()
        .map(|&(kk, z)| {
            let (xi, _) = xi_pair_with_zeta(z, &eta, z)?;
            let sol = cgo_remainder(&q1, kk, &xi, &ledger, opts)?;
            let residual_rel = if sol.residual_scale > 0.0 {
                sol.residual_norm / sol.residual_scale
            } else {
                sol.residual_norm
            };
            Ok((
                CgoRow {
                    k: kk,
                    zeta_norm: z,
                    xi_norm: xi.xi_norm(),
                    iterations: sol.iterations,
                    psi_l2: sol.psi_l2(),
                    psi_hs: sol.psi_hs,
                    residual_rel,
                },
                sol.diagnostic(),
            ))
        })
        .collect();
    let solved = solved.into_iter().collect::<Result<Vec<_>>>()?;
    let (rows, diagnostics): (Vec<CgoRow>, Vec<CgoDiagnostic>) = solved.into_iter().unzip();
    let ladder: Vec<&CgoRow> = rows.iter().filter(|r| r.k == k).collect();
    let slope = if ladder.len() >= 2 && ladder.iter().all(|r| r.psi_l2 > 0.0) {
        fit_slope(
            &ladder.iter().map(|r| r.zeta_norm.ln()).collect::<Vec<_>>(),
            &ladder.iter().map(|r| r.psi_l2.ln()).collect::<Vec<_>>(),
        )
    } else {
        f64::NAN
    };
    let k_ratio = match (ladder.first(), rows.iter().find(|r| r.k == 2.0 * k)) {
        (Some(a), Some(b)) if a.psi_l2 > 0.0 => b.psi_l2 / a.psi_l2,
        _ => f64::NAN,
    };
    let max_residual = rows.iter().map(|r| r.residual_rel).fold(0.0, f64::max);
    let calibrated_c1 = calibrate_c1(&[q1, q2], k, &ledger, opts)?;
    Ok(CgoReport {
        rows,
        slope,
        k_ratio,
        max_residual,
        calibrated_c1,
        diagnostics,
    })
}

// ------------------------------------------------------------------- sweep

/// The two DN maps of one frequency, assembled once and shared by its cells.
pub struct FrequencyData {
    pub k: f64,
    pub lambda1: DnMap,
    pub lambda2: DnMap,
}

pub fn assemble_pair(cfg: &RunConfig, q1: &ScalarField, q2: &ScalarField, k: f64) -> Result<FrequencyData> {
    let basis = BoundaryBasis::new(q1.grid(), cfg.modes_per_face)?;
    let lambda1 = assemble_with(&HelmholtzOperator::new(q1, k)?, &basis, "q1")?;
    let lambda2 = assemble_with(&HelmholtzOperator::new(q2, k)?, &basis, "q2")?;
    Ok(FrequencyData { k, lambda1, lambda2 })
}

/// Everything one `(k, A_star)` cell produces.
pub struct CellOutcome {
    pub record: StabilityRecord,
    pub noise: f64,
    pub reconstruction: ScalarField,
    pub samples: Vec<FourierSample>,
}

fn band_mode(samples: &[FourierSample], mode: ExtractionMode) -> String {
    let low = samples.iter().any(|s| s.band == Band::Low);
    let high = samples.iter().any(|s| s.band == Band::High);
    let bands = match (low, high) {
        (true, true) => "low+high",
        (true, false) => "low",
        (false, true) => "high",
        (false, false) => "none",
    };
    format!("{bands}/{}", mode.as_str())
}

fn lattice_radius(grid: &GridSpec) -> f64 {
    let p = grid.padded_points();
    let dim = grid.dim();
    let mut rho = [0.0; 3];
    (0..grid.padded_len())
        .map(|flat| {
            lattice_frequency(flat, p, dim, grid.box_len(), &mut rho);
            rho[..dim].iter().map(|v| v * v).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max)
}

/// Noise injection, cutoff, design, extraction, inversion and error norms
/// for one cell.
pub fn run_cell(
    cfg: &RunConfig,
    ledger: &ConstantsLedger,
    potentials: (&ScalarField, &ScalarField),
    data: &FrequencyData,
    noise: f64,
    cell: u64,
) -> Result<CellOutcome> {
    let k = data.k;
    let (q1, q2) = potentials;
    let truth = q1.sub(q2)?;
    let rec_grid = q1.grid().with_pad(cfg.recon_pad)?;
    let mu2 = data.lambda1.mu2();
    let lambda1 = if noise > 0.0 {
        let mut rng = rng_for(cfg.seed, cell);
        data.lambda1.perturbed(&noise_matrix(&mu2, noise, &mut rng)?)?
    } else {
        data.lambda1.clone()
    };
    let diff: DMatrix<Complex64> = lambda1.difference(&data.lambda2)?;
    let a_star = op_norm_star(&diff, &mu2)?;
    let (t, regime) = choose_cutoff(a_star, k, ledger)?;
    let (t_used, samples, reconstruction) = if a_star == 0.0 {
        let t_used = lattice_radius(&rec_grid);
        (t_used, Vec::new(), ScalarField::zeros(&rec_grid, Domain::Padded))
    } else {
        let design = sample_design(t, k, ledger, &rec_grid)?;
        let ctx = ExtractionContext {
            lambda1: &lambda1,
            lambda2: &data.lambda2,
            potentials: Some((q1, q2)),
            truth: Some(&truth),
            k,
            ledger,
            settings: &cfg.extraction,
        };
        let samples = extract_design(&ctx, &design)?;
        let rec = invert_truncated(&samples, t, &rec_grid)?;
        (t, samples, rec)
    };
    let report = error_report(&reconstruction, &truth, ledger)?;
    let (lip_term, log_term) = match ledger.fitted_c {
        Some(c) => {
            let (a, b) = bound_terms(c, a_star, k, ledger.m);
            (Some(a), Some(b))
        }
        None => (None, None),
    };
    let record = StabilityRecord {
        k,
        a_star,
        t_used,
        regime,
        err_hms: report.err_hms,
        err_l2: report.err_l2,
        lip_term,
        log_term,
        band_mode: band_mode(&samples, cfg.extraction.mode),
        seed: cfg.seed,
    };
    Ok(CellOutcome {
        record,
        noise,
        reconstruction,
        samples,
    })
}

/// Rows of a sweep with the cell each came from.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub records: Vec<StabilityRecord>,
    /// Injected noise target of each record.
    pub noise: Vec<f64>,
    /// Cells that failed, with the reason.
    pub row_errors: Vec<String>,
    pub fit: Option<BoundFit>,
    pub spearman: Option<f64>,
    pub zero_gap_rows: Vec<usize>,
}

/// Spearman rank correlation, average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &t in &idx[i..=j] {
                r[t] = avg;
            }
            i = j + 1;
        }
        r
    }
    let rx = ranks(x);
    let ry = ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx * vy).sqrt()
}

/// Every `(k, noise)` cell in list order, then the bound fit.
pub fn run_stability_sweep(cfg: &RunConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let mut ledger = cfg.ledger()?;
    let (q1, q2) = cfg.potentials()?;
    let mut records = Vec::new();
    let mut noise = Vec::new();
    let mut row_errors = Vec::new();
    for (ki, &k) in cfg.k.iter().enumerate() {
        if !ledger.admissible(k) {
            row_errors.push(format!(
                "k = {k}: {}",
                Error::FrequencyTooLow {
                    k2: k * k,
                    min: ledger.min_k2()
                }
            ));
            continue;
        }
        let data = match assemble_pair(cfg, &q1, &q2, k) {
            Ok(d) => d,
            Err(e) => {
                row_errors.push(format!("k = {k}: {e}"));
                continue;
            }
        };
        let cells: Vec<Result<CellOutcome>> = cfg
            .noise
            .par_iter()
            .map(|&a| run_cell(cfg, &ledger, (&q1, &q2), &data, a, ki as u64))
            .collect();
        for (cell, &a) in cells.into_iter().zip(&cfg.noise) {
            match cell {
                Ok(c) => {
                    records.push(c.record);
                    noise.push(a);
                }
                Err(e) => row_errors.push(format!("k = {k}, noise = {a}: {e}")),
            }
        }
    }
    let zero_gap_rows: Vec<usize> = (0..records.len()).filter(|&i| records[i].a_star == 0.0).collect();
    let fit = if ledger.fitted_c.is_none() && records.iter().any(|r| r.a_star > 0.0) {
        let ks: Vec<f64> = records.iter().map(|r| r.k).collect();
        let fit = fit_and_holdout(&records, ledger.m, &ladder_end_rows(&ks, &noise));
        ledger.fitted_c = Some(fit.fitted_c);
        Some(fit)
    } else {
        None
    };
    if let Some(c) = ledger.fitted_c {
        for r in &mut records {
            let (a, b) = bound_terms(c, r.a_star, r.k, ledger.m);
            r.lip_term = Some(a);
            r.log_term = Some(b);
        }
    }
    let clean: Vec<usize> = (0..records.len()).filter(|&i| noise[i] == 0.0).collect();
    let spearman = if clean.len() >= 2 {
        Some(spearman(
            &clean.iter().map(|&i| records[i].k).collect::<Vec<_>>(),
            &clean.iter().map(|&i| records[i].err_hms).collect::<Vec<_>>(),
        ))
    } else {
        None
    };
    Ok(SweepReport {
        records,
        noise,
        row_errors,
        fit,
        spearman,
        zero_gap_rows,
    })
}

/// Gates of a sweep: monotone decay in `k`, the bound on holdout rows,
/// regime consistency and monotonicity along each noise ladder.
pub fn sweep_gates(cfg: &RunConfig, report: &SweepReport, ledger: &ConstantsLedger) -> Vec<Gate> {
    let mut gates = Vec::new();
    let clean_k: Vec<f64> = report
        .records
        .iter()
        .zip(&report.noise)
        .filter(|(_, n)| **n == 0.0)
        .map(|(r, _)| r.k)
        .collect();
    if clean_k.len() >= 4 {
        let rho = report.spearman.unwrap_or(f64::NAN);
        gates.push(Gate::new(
            "k_monotonicity",
            rho <= cfg.gates.spearman_max,
            format!("Spearman(k, err_hms) = {rho:.4} over {} noiseless rows", clean_k.len()),
        ));
    }
    if let Some(fit) = &report.fit {
        gates.push(Gate::new(
            "bound_holdout",
            fit.violations.is_empty(),
            format!(
                "C = {:.6e} fitted on rows {:?}; holdout violations {:?}",
                fit.fitted_c, fit.training_rows, fit.violations
            ),
        ));
    }
    let bad: Vec<usize> = (0..report.records.len())
        .filter(|&i| !report.records[i].regime_consistent(ledger))
        .collect();
    gates.push(Gate::new(
        "regime_partition",
        bad.is_empty(),
        format!("inconsistent rows {bad:?}"),
    ));
    let mut ladder_bad = Vec::new();
    for &k in &cfg.k {
        let mut rows: Vec<(f64, f64)> = report
            .records
            .iter()
            .zip(&report.noise)
            .filter(|(r, _)| r.k == k)
            .map(|(r, n)| (*n, r.err_hms))
            .collect();
        rows.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        for w in rows.windows(2) {
            if w[1].1 > w[0].1 * (1.0 + cfg.gates.noise_slack) {
                ladder_bad.push(format!("k = {k}: noise {} -> {}", w[0].0, w[1].0));
            }
        }
    }
    gates.push(Gate::new(
        "noise_monotonicity",
        ladder_bad.is_empty(),
        if ladder_bad.is_empty() {
            "error nonincreasing as the noise target decreases".into()
        } else {
            ladder_bad.join("; ")
        },
    ));
    if !report.row_errors.is_empty() {
        gates.push(Gate::new("rows", false, report.row_errors.join("; ")));
    }
    gates
}

// ----------------------------------------------------------------- outputs

pub fn write_stability_csv(path: &Path, records: &[StabilityRecord]) -> Result<()> {
    write_csv(path, &STABILITY_HEADER, records)
}

pub fn write_samples(path: &Path, samples: &[FourierSample]) -> Result<()> {
    crate::born::write_samples_csv(samples, BufWriter::new(File::create(path)?))
}

/// Caps the global worker pool at `HELMSTAB_THREADS` when it is set.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("HELMSTAB_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("HELMSTAB_THREADS = {v:?} is not a count")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    }
    Ok(())
}

/// Subcommands of the command-line front end.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    CheckDn,
    CheckIdentity,
    CheckCgo,
    Extract,
    Reconstruct,
    Sweep,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::CheckDn => "check-dn",
            Command::CheckIdentity => "check-identity",
            Command::CheckCgo => "check-cgo",
            Command::Extract => "extract",
            Command::Reconstruct => "reconstruct",
            Command::Sweep => "sweep",
        }
    }
}

fn first_cell(cfg: &RunConfig) -> Result<(f64, f64)> {
    let k = *cfg.k.first().ok_or(Error::InvalidConfig("empty k list".into()))?;
    let noise = cfg.noise.first().copied().unwrap_or(0.0);
    Ok((k, noise))
}

/// Runs one subcommand, writes its files under `cfg.out` and returns the manifest.
pub fn execute(command: Command, cfg: &RunConfig) -> Result<Manifest> {
    cfg.validate()?;
    let out = &cfg.out;
    fs::create_dir_all(out)?;
    let ledger = cfg.ledger()?;
    let (gates, summary, ledger) = match command {
        Command::CheckDn => {
            let (report, map) = run_dn_check(cfg)?;
            write_csv(
                &out.join("dn_check.csv"),
                &["face", "mode", "computed", "oracle", "rel"],
                &report.rows,
            )?;
            crate::io::write_dn(&map, BufWriter::new(File::create(out.join("dn_constant.bin"))?))?;
            crate::io::write_dn_csv(&map, BufWriter::new(File::create(out.join("dn_constant.csv"))?))?;
            let gate = Gate::new(
                "dn_oracle",
                report.max_rel <= cfg.dn_check.tolerance,
                format!("max relative deviation {:.4e}", report.max_rel),
            );
            let summary = serde_json::json!({ "max_rel": report.max_rel, "asymmetry": report.asymmetry });
            (vec![gate], summary, ledger)
        }
        Command::CheckIdentity => {
            let report = run_identity_check(cfg)?;
            write_csv(
                &out.join("identity.csv"),
                &["trial", "boundary_re", "boundary_im", "volume_re", "volume_im", "rel"],
                &report.rows,
            )?;
            let gate = Gate::new(
                "identity",
                report.max_rel <= cfg.identity.tolerance,
                format!("max relative discrepancy {:.4e}", report.max_rel),
            );
            (vec![gate], serde_json::json!({ "max_rel": report.max_rel }), ledger)
        }
        Command::CheckCgo => {
            let report = run_cgo_suite(cfg)?;
            write_csv(
                &out.join("cgo.csv"),
                &[
                    "k",
                    "zeta_norm",
                    "xi_norm",
                    "iterations",
                    "psi_l2",
                    "psi_hs",
                    "residual_rel",
                ],
                &report.rows,
            )?;
            let mut w = BufWriter::new(File::create(out.join("cgo_diagnostics.json"))?);
            serde_json::to_writer_pretty(&mut w, &report.diagnostics)?;
            w.flush()?;
            let set = &cfg.cgo_suite;
            let gates = vec![
                Gate::new(
                    "cgo_slope",
                    report.slope >= set.slope_range[0] && report.slope <= set.slope_range[1],
                    format!("slope {:.4}", report.slope),
                ),
                Gate::new(
                    "cgo_residual",
                    report.max_residual <= set.residual_tolerance,
                    format!("max relative residual {:.3e}", report.max_residual),
                ),
                Gate::new(
                    "cgo_k_scaling",
                    (report.k_ratio / 4.0 - 1.0).abs() <= set.k_scaling_slack,
                    format!("psi ratio at doubled k {:.4}", report.k_ratio),
                ),
            ];
            let mut ledger = ledger;
            ledger.c1 = report.calibrated_c1.max(f64::MIN_POSITIVE);
            let summary = serde_json::json!({
                "slope": report.slope,
                "k_ratio": report.k_ratio,
                "max_residual": report.max_residual,
                "calibrated_c1": report.calibrated_c1,
            });
            (gates, summary, ledger)
        }
        Command::Extract | Command::Reconstruct => {
            let (k, noise) = first_cell(cfg)?;
            let (q1, q2) = cfg.potentials()?;
            let data = assemble_pair(cfg, &q1, &q2, k)?;
            let cell = run_cell(cfg, &ledger, (&q1, &q2), &data, noise, 0)?;
            write_samples(&out.join("samples.csv"), &cell.samples)?;
            if command == Command::Reconstruct {
                write_stability_csv(&out.join("stability.csv"), std::slice::from_ref(&cell.record))?;
                crate::io::write_field(
                    &cell.reconstruction,
                    BufWriter::new(File::create(out.join("reconstruction.bin"))?),
                )?;
                crate::io::write_field_csv(
                    &cell.reconstruction,
                    BufWriter::new(File::create(out.join("reconstruction.csv"))?),
                )?;
            }
            let max_err = cell.samples.iter().filter_map(|s| s.error()).fold(0.0, f64::max);
            let summary = serde_json::json!({
                "k": k,
                "noise": noise,
                "samples": cell.samples.len(),
                "max_sample_error": max_err,
                "record": cell.record,
            });
            (Vec::new(), summary, ledger)
        }
        Command::Sweep => {
            let report = run_stability_sweep(cfg)?;
            write_stability_csv(&out.join("stability.csv"), &report.records)?;
            let mut ledger = ledger;
            if let Some(fit) = &report.fit {
                ledger.fitted_c = Some(fit.fitted_c);
            }
            let gates = sweep_gates(cfg, &report, &ledger);
            let summary = serde_json::json!({
                "noise": report.noise,
                "spearman": report.spearman,
                "fit": report.fit,
                "zero_gap_rows": report.zero_gap_rows,
                "row_errors": report.row_errors,
            });
            (gates, summary, ledger)
        }
    };
    let manifest = Manifest::new(command.name(), cfg, &ledger, gates, summary);
    manifest.write(&out.join("manifest.json"))?;
    Ok(manifest)
}
