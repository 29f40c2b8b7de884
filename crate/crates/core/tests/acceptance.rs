//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use helmstab::born::{
    alessandrini_pair, extract_fourier_sample, extract_with_zeta, ExtractionContext, ExtractionMode,
    ExtractionSettings, FourierSample,
};
use helmstab::cgo::{cgo_remainder, xi_pair_with_zeta, Band, CgoOptions};
use helmstab::dn::{assemble_with, BoundaryBasis, HelmholtzOperator};
use helmstab::experiments::{execute, run_stability_sweep, Command, RunConfig};
use helmstab::fields::{make_grid, make_test_potential, Bump, Domain, GridSpec, PotentialKind, ScalarField};
use helmstab::reconstruct::{choose_cutoff, invert_truncated, ConstantsLedger, Regime};
use helmstab::spectral::lattice_frequency;

type Outcome = std::result::Result<String, String>;

fn sci(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(", ")
}

fn bump(center: Vec<f64>, width: f64, amplitude: f64) -> PotentialKind {
    PotentialKind::GaussianBump(Bump {
        center,
        width,
        amplitude,
    })
}

fn check(cond: bool, msg: String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg)
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> std::result::Result<(), String> {
    check(elapsed <= limit, format!("{what} took {elapsed:?}, limit {limit:?}"))
}

/// Trapezoid quadrature of `f e^{-iρ·x}` over the unit box, written out
/// independently of the library's sampler.
fn trapezoid_fourier(f: &ScalarField, rho: &[f64]) -> Complex64 {
    let g = f.grid();
    let n = g.points_per_axis();
    let dim = g.dim();
    let h = 1.0 / (n - 1) as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for (flat, v) in f.values().iter().enumerate() {
        let mut rest = flat;
        let mut w = 1.0;
        let mut phase = 0.0;
        for a in 0..dim {
            let i = rest % n;
            rest /= n;
            if i == 0 || i == n - 1 {
                w *= 0.5;
            }
            phase -= rho[a] * i as f64 * h;
        }
        acc += v * Complex64::from_polar(w, phase);
    }
    acc * h.powi(dim as i32)
}

// Criterion 1: constant-q DN diagonal against μ coth μ / μ̂ cot μ̂.
fn dn_oracle() -> Outcome {
    let start = Instant::now();
    let (n, k, c) = (65, 2.0, 1.0);
    let g = make_grid(2, n, 2.0).map_err(|e| e.to_string())?;
    let q = make_test_potential(&g, &PotentialKind::Constant { value: c }).map_err(|e| e.to_string())?;
    let basis = BoundaryBasis::new(&g, 8).map_err(|e| e.to_string())?;
    let op = HelmholtzOperator::new(&q, k).map_err(|e| e.to_string())?;
    let map = assemble_with(&op, &basis, "q=1").map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for face in 0..4 {
        for m in 1..=4usize {
            let i = basis.index_of(face, &[m]).ok_or("mode missing")?;
            let mu2 = (PI * m as f64).powi(2) - k * k * c;
            let oracle = if mu2 > 0.0 {
                let mu = mu2.sqrt();
                mu * mu.cosh() / mu.sinh()
            } else {
                let mh = (-mu2).sqrt();
                mh * mh.cos() / mh.sin()
            };
            worst = worst.max((map.matrix[(i, i)].re / oracle - 1.0).abs());
        }
    }
    let elapsed = start.elapsed();
    check(worst <= 0.01, format!("max relative deviation {worst:.3e} > 1%"))?;
    within(elapsed, Duration::from_secs(30), "DN assembly")?;
    Ok(format!(
        "max relative deviation {worst:.3e} over m = 1..4 on all faces, {elapsed:.1?}"
    ))
}

fn identity_max_discrepancy(n: usize, trials: usize, seed: u64) -> std::result::Result<f64, String> {
    let g = make_grid(2, n, 2.0).map_err(|e| e.to_string())?;
    let basis = BoundaryBasis::new(&g, 8).map_err(|e| e.to_string())?;
    let k = 4.0;
    let h = 1.0 / (n - 1) as f64;
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + t as u64);
        let mut draw = || {
            bump(
                vec![rng.random_range(0.4..0.6), rng.random_range(0.4..0.6)],
                rng.random_range(0.05..0.07),
                rng.random_range(0.5..1.5),
            )
        };
        let (p1, p2) = (draw(), draw());
        let q1 = make_test_potential(&g, &p1).map_err(|e| e.to_string())?;
        let q2 = make_test_potential(&g, &p2).map_err(|e| e.to_string())?;
        let c1: Vec<Complex64> = (0..basis.len())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let c2: Vec<Complex64> = (0..basis.len())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let o1 = HelmholtzOperator::new(&q1, k).map_err(|e| e.to_string())?;
        let o2 = HelmholtzOperator::new(&q2, k).map_err(|e| e.to_string())?;
        let l1 = assemble_with(&o1, &basis, "q1").map_err(|e| e.to_string())?;
        let l2 = assemble_with(&o2, &basis, "q2").map_err(|e| e.to_string())?;
        let boundary = alessandrini_pair(&l1, &l2, &c1, &c2, k).map_err(|e| e.to_string())?;
        let u1 = o1
            .solve(&basis.synthesize(&c1).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let u2 = o2
            .solve(&basis.synthesize(&c2).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let mut volume = Complex64::new(0.0, 0.0);
        for flat in 0..g.omega_len() {
            let (i, j) = (flat % n, flat / n);
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 } * if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
            volume += (q2.values()[flat] - q1.values()[flat]) * u1.values()[flat] * u2.values()[flat] * w;
        }
        volume *= h * h;
        worst = worst.max((boundary - volume).norm() / volume.norm());
    }
    Ok(worst)
}

// Criterion 2: boundary pairing against the volume integral.
fn identity() -> Outcome {
    let start = Instant::now();
    let coarse = identity_max_discrepancy(65, 20, 100)?;
    let fine = identity_max_discrepancy(129, 20, 100)?;
    let elapsed = start.elapsed();
    check(coarse <= 0.05, format!("N = 65 discrepancy {coarse:.3e} > 5%"))?;
    check(fine <= 0.02, format!("N = 129 discrepancy {fine:.3e} > 2%"))?;
    within(elapsed, Duration::from_secs(300), "identity check")?;
    Ok(format!(
        "max discrepancy {coarse:.2e} (N = 65), {fine:.2e} (N = 129) over 20 pairs, {elapsed:.1?}"
    ))
}

// Criterion 3: remainder decay and PDE residual.
fn cgo_decay() -> Outcome {
    let start = Instant::now();
    let g = make_grid(2, 65, 2.0).map_err(|e| e.to_string())?;
    let q = make_test_potential(&g, &bump(vec![0.5, 0.5], 0.08, 1.0)).map_err(|e| e.to_string())?;
    let mut ledger = ConstantsLedger::new(2, 3.0, 1.0).map_err(|e| e.to_string())?;
    ledger.eps0 = 1e-3;
    let opts = CgoOptions {
        enforce_contraction: false,
        ..Default::default()
    };
    let k = 2.0;
    let ladder = [16.0, 32.0, 64.0];
    let mut logs = Vec::new();
    let mut worst_res: f64 = 0.0;
    for &z in &ladder {
        let (xi, _) = xi_pair_with_zeta(z, &[1.0, 0.0], z).map_err(|e| e.to_string())?;
        let sol = cgo_remainder(&q, k, &xi, &ledger, &opts).map_err(|e| e.to_string())?;
        let psi = sol.psi_omega();
        let l2 = (psi.values().iter().map(|v| v.norm_sqr()).sum::<f64>() / (64.0 * 64.0)).sqrt();
        logs.push((z.ln(), l2.ln()));
        worst_res = worst_res.max(sol.residual_norm / sol.residual_scale);
    }
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / 3.0;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / 3.0;
    let slope = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / logs.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let elapsed = start.elapsed();
    check(
        (-1.35..=-0.65).contains(&slope),
        format!("slope {slope:.3} outside [-1.35, -0.65]"),
    )?;
    check(worst_res <= 1e-4, format!("relative residual {worst_res:.3e} > 1e-4"))?;
    within(elapsed, Duration::from_secs(120), "CGO suite")?;
    Ok(format!(
        "slope {slope:.3} over |zeta| = 16, 32, 64; max residual {worst_res:.2e}, {elapsed:.1?}"
    ))
}

// Criterion 4: Born error halves with |ζ|, and the spatial r = 0 low-band value.
fn born_law() -> Outcome {
    let start = Instant::now();
    let g = make_grid(2, 65, 2.0).map_err(|e| e.to_string())?;
    let q1 = make_test_potential(&g, &bump(vec![0.5, 0.5], 0.08, 1.0)).map_err(|e| e.to_string())?;
    let q2 = ScalarField::zeros(&g, Domain::Omega);
    let k = 6.0;
    let basis = BoundaryBasis::new(&g, 31).map_err(|e| e.to_string())?;
    let l1 = assemble_with(
        &HelmholtzOperator::new(&q1, k).map_err(|e| e.to_string())?,
        &basis,
        "q1",
    )
    .map_err(|e| e.to_string())?;
    let l2 = assemble_with(&HelmholtzOperator::new(&q2, k).map_err(|e| e.to_string())?, &basis, "0")
        .map_err(|e| e.to_string())?;
    let mut ledger = ConstantsLedger::new(2, 3.0, 1.0).map_err(|e| e.to_string())?;
    ledger.eps0 = 1e-3;
    let mut settings = ExtractionSettings {
        mode: ExtractionMode::Oracle,
        tail_limit: 0.5,
        ..Default::default()
    };
    settings.cgo.enforce_contraction = false;
    let ctx = ExtractionContext {
        lambda1: &l1,
        lambda2: &l2,
        potentials: Some((&q1, &q2)),
        truth: None,
        k,
        ledger: &ledger,
        settings: &settings,
    };
    let truth = trapezoid_fourier(&q1, &[0.0, 0.0]);
    let mut errs = Vec::new();
    for z in [2.0, 4.0, 8.0, 16.0] {
        let s = extract_with_zeta(&ctx, 0.0, &[0.0, 1.0], z).map_err(|e| e.to_string())?;
        errs.push((s.value - truth).norm());
    }
    let ratios: Vec<f64> = errs.windows(2).map(|w| w[1] / w[0]).collect();
    check(
        ratios.iter().all(|r| (0.35..=0.65).contains(r)),
        format!("error ratios {ratios:.3?} under |zeta| doubling, expected 0.5 +- 30%"),
    )?;

    let g3 = make_grid(3, 17, 2.0).map_err(|e| e.to_string())?;
    let p = bump(vec![0.5, 0.5, 0.5], 0.09, 1.8e-4);
    let q = make_test_potential(&g3, &p).map_err(|e| e.to_string())?;
    let zero = ScalarField::zeros(&g3, Domain::Omega);
    let m = p.hs_norm(&g3, 3.0).map_err(|e| e.to_string())?;
    let ledger3 = ConstantsLedger::new(3, 3.0, m).map_err(|e| e.to_string())?;
    let k3 = 2.0;
    let basis3 = BoundaryBasis::new(&g3, 8).map_err(|e| e.to_string())?;
    let a = assemble_with(
        &HelmholtzOperator::new(&q, k3).map_err(|e| e.to_string())?,
        &basis3,
        "q",
    )
    .map_err(|e| e.to_string())?;
    let b = assemble_with(
        &HelmholtzOperator::new(&zero, k3).map_err(|e| e.to_string())?,
        &basis3,
        "0",
    )
    .map_err(|e| e.to_string())?;
    let ctx3 = ExtractionContext {
        lambda1: &a,
        lambda2: &b,
        potentials: Some((&q, &zero)),
        truth: None,
        k: k3,
        ledger: &ledger3,
        settings: &settings,
    };
    let s = extract_fourier_sample(&ctx3, 0.0, &[0.0, 0.0, 1.0], Band::Low).map_err(|e| e.to_string())?;
    let mass = trapezoid_fourier(&q, &[0.0, 0.0, 0.0]);
    let err3 = (s.value - mass).norm();
    let elapsed = start.elapsed();
    check(s.certified, "low-band |zeta| not certified".into())?;
    check(
        err3 <= s.error_budget,
        format!("r = 0 error {err3:.3e} exceeds budget {:.3e}", s.error_budget),
    )?;
    Ok(format!(
        "planar error ratios {ratios:.3?}; spatial r = 0 error {:.2e} of {:.2e} (budget {:.2e}), {elapsed:.1?}",
        err3,
        mass.norm(),
        s.error_budget
    ))
}

fn padded_truth_samples(q: &ScalarField, grid: &GridSpec) -> Vec<FourierSample> {
    let p = grid.padded_points();
    let mut rho = [0.0; 3];
    (0..grid.padded_len())
        .map(|flat| {
            lattice_frequency(flat, p, 2, grid.box_len(), &mut rho);
            FourierSample {
                rho: rho[..2].to_vec(),
                value: trapezoid_fourier(q, &rho[..2]),
                band: Band::High,
                zeta_norm: 0.0,
                error_budget: 0.0,
                certified: true,
                truth: None,
            }
        })
        .collect()
}

// Criterion 5: truth-sample self-inversion.
fn self_inversion() -> Outcome {
    let g = make_grid(2, 65, 2.0).map_err(|e| e.to_string())?;
    let kind = bump(vec![0.5, 0.5], 0.08, 1.0);
    let q = make_test_potential(&g, &kind).map_err(|e| e.to_string())?;
    let samples = padded_truth_samples(&q, &g);
    let rel = |t: f64| -> std::result::Result<f64, String> {
        let rec = invert_truncated(&samples, t, &g).map_err(|e| e.to_string())?;
        let mut num = 0.0;
        let mut den = 0.0;
        let mut x = [0.0; 3];
        for (flat, v) in rec.values().iter().enumerate() {
            g.coords(Domain::Padded, flat, &mut x);
            let inside = x[..2].iter().all(|c| (-1e-12..=1.0 + 1e-12).contains(c));
            let exact = if inside { kind.eval(&x[..2]) } else { 0.0 };
            num += (v - exact).norm_sqr();
            den += exact * exact;
        }
        Ok((num / den).sqrt())
    };
    let full = rel(f64::INFINITY)?;
    let ladder = [2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
    let errs = ladder
        .iter()
        .map(|&t| rel(t))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    check(full <= 0.02, format!("full-lattice relative L2 error {full:.3e} > 2%"))?;
    check(
        errs.windows(2).all(|w| w[1] < w[0]),
        format!("errors [{}] not strictly decreasing in T", sci(&errs)),
    )?;
    Ok(format!(
        "full-lattice error {full:.2e}; T = 2..64 errors [{}]",
        sci(&errs)
    ))
}

// Criteria 6 and 7 share one sweep.
struct SweepFacts {
    records: Vec<helmstab::reconstruct::StabilityRecord>,
    noise: Vec<f64>,
    training: Vec<usize>,
    holdout: Vec<usize>,
    fitted_c: Option<f64>,
    ledger: ConstantsLedger,
    elapsed: Duration,
}

fn run_sweep() -> std::result::Result<SweepFacts, String> {
    let start = Instant::now();
    let cfg = RunConfig::default();
    let report = run_stability_sweep(&cfg).map_err(|e| e.to_string())?;
    if !report.row_errors.is_empty() {
        return Err(format!("sweep rows failed: {:?}", report.row_errors));
    }
    let fit = report.fit.clone().ok_or("no bound fit")?;
    Ok(SweepFacts {
        records: report.records,
        noise: report.noise,
        training: fit.training_rows,
        holdout: fit.holdout_rows,
        fitted_c: Some(fit.fitted_c),
        ledger: cfg.ledger().map_err(|e| e.to_string())?,
        elapsed: start.elapsed(),
    })
}

fn increasing_stability(s: &SweepFacts) -> Outcome {
    let clean: Vec<(f64, f64)> = s
        .records
        .iter()
        .zip(&s.noise)
        .filter(|(_, n)| **n == 0.0)
        .map(|(r, _)| (r.k, r.err_hms))
        .collect();
    check(clean.len() == 4, format!("{} noiseless rows", clean.len()))?;
    let strictly = clean.windows(2).all(|w| w[0].0 < w[1].0 && w[1].1 < w[0].1);
    // Distinct values: rho = 1 - 6 sum d² / (n(n² - 1)).
    let rank = |v: Vec<f64>| -> Vec<f64> {
        v.iter()
            .map(|x| v.iter().filter(|y| *y < x).count() as f64 + 1.0)
            .collect()
    };
    let rk = rank(clean.iter().map(|c| c.0).collect());
    let re = rank(clean.iter().map(|c| c.1).collect());
    let n = clean.len() as f64;
    let d2: f64 = rk.iter().zip(&re).map(|(a, b)| (a - b) * (a - b)).sum();
    let rho = 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
    let noisy = |k: f64| {
        s.records
            .iter()
            .zip(&s.noise)
            .find(|(r, n)| r.k == k && **n == 1e-4)
            .map(|(r, _)| r.err_hms)
    };
    let (e2, e16) = (
        noisy(2.0).ok_or("no noisy k = 2 row")?,
        noisy(16.0).ok_or("no noisy k = 16 row")?,
    );
    check(
        strictly,
        format!("noiseless errors not strictly decreasing: {clean:.3?}"),
    )?;
    check(rho <= -0.9, format!("Spearman {rho:.3} > -0.9"))?;
    check(
        e16 <= 0.5 * e2,
        format!("noisy err(16) = {e16:.3e} > 0.5 err(2) = {:.3e}", 0.5 * e2),
    )?;
    within(s.elapsed, Duration::from_secs(900), "sweep")?;
    Ok(format!(
        "noiseless err_hms [{}], Spearman {rho:.2}; at A_star = 1e-4 err(16)/err(2) = {:.3}, sweep {:.1?}",
        sci(&clean.iter().map(|c| c.1).collect::<Vec<_>>()),
        e16 / e2,
        s.elapsed
    ))
}

fn bound_structure(s: &SweepFacts) -> Outcome {
    let c = s.fitted_c.ok_or("no fitted constant")?;
    let m = 2.0 * s.ledger.s - s.ledger.n as f64;
    let positive = s.records.iter().filter(|r| r.a_star > 0.0).count();
    check(
        2 * s.training.len() == positive,
        format!("{} training rows of {positive}", s.training.len()),
    )?;
    let mut violations = Vec::new();
    for &i in &s.holdout {
        let r = &s.records[i];
        let k2 = r.k * r.k;
        let bound = c / k2 * (c * k2).exp() * r.a_star + c * (k2 + (1.0 / r.a_star).ln()).powf(-m);
        if r.err_hms > bound {
            violations.push(i);
        }
    }
    check(
        violations.is_empty(),
        format!("holdout rows {violations:?} violate the bound with C = {c:.4e}"),
    )?;
    let mut switch_at = None;
    for k in [2.0, 4.0, 8.0, 16.0] {
        let regimes: Vec<Regime> = s.records.iter().filter(|r| r.k == k).map(|r| r.regime).collect();
        if regimes.contains(&Regime::Small) && regimes.contains(&Regime::Large) {
            switch_at = Some(k);
            break;
        }
    }
    let k = switch_at.ok_or("no frequency shows both regimes")?;
    for r in s.records.iter().filter(|r| r.k == k) {
        let lhs = s.ledger.a * k * k;
        let rhs = s.ledger.p * (1.0 / (r.a_star * r.a_star)).ln();
        let expected = if lhs <= rhs { Regime::Small } else { Regime::Large };
        check(
            r.regime == expected,
            format!("row at A_star = {:.3e} has the wrong regime", r.a_star),
        )?;
    }
    let crossing = (-s.ledger.a * k * k / (2.0 * s.ledger.p)).exp();
    let (below, _) = choose_cutoff(crossing * (1.0 - 1e-9), k, &s.ledger).map_err(|e| e.to_string())?;
    let (above, _) = choose_cutoff(crossing * (1.0 + 1e-9), k, &s.ledger).map_err(|e| e.to_string())?;
    let (at, _) = choose_cutoff(crossing, k, &s.ledger).map_err(|e| e.to_string())?;
    check(
        (below - above).abs() <= 1e-6 * at && (at - s.ledger.a * k * k).abs() <= 1e-9 * at,
        format!("T jumps across the crossing: {below} / {at} / {above}"),
    )?;
    Ok(format!(
        "C = {c:.4e} fitted on {} rows, {} holdout rows satisfied; regime switch at k = {k}, A_star = {crossing:.3e}, T = {at:.4}",
        s.training.len(),
        s.holdout.len()
    ))
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        out.insert(
            p.file_name().unwrap().to_string_lossy().to_string(),
            fs::read(&p).unwrap(),
        );
    }
    out
}

// Criterion 8: byte-identical reruns.
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let commands = [
        Command::CheckDn,
        Command::CheckIdentity,
        Command::CheckCgo,
        Command::Extract,
        Command::Reconstruct,
        Command::Sweep,
    ];
    let mut files = 0;
    for command in commands {
        let mut cfg = RunConfig::default();
        cfg.out = dir.path().join(command.name());
        if command == Command::Extract || command == Command::Reconstruct {
            cfg.k = vec![8.0];
            cfg.noise = vec![1e-4];
        }
        execute(command, &cfg).map_err(|e| format!("{}: {e}", command.name()))?;
        let first = snapshot(&cfg.out);
        execute(command, &cfg).map_err(|e| format!("{}: {e}", command.name()))?;
        let second = snapshot(&cfg.out);
        check(
            first == second,
            format!("{} outputs differ between runs", command.name()),
        )?;
        files += first.len();
    }
    Ok(format!(
        "{files} output files identical across reruns of all six subcommands"
    ))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| match outcome {
        Ok(detail) => println!("PASS criterion {n} {name}: {detail}"),
        Err(detail) => {
            failed += 1;
            println!("FAIL criterion {n} {name}: {detail}");
        }
    };
    report(1, "dn_oracle", dn_oracle());
    report(2, "alessandrini_identity", identity());
    report(3, "cgo_decay", cgo_decay());
    report(4, "born_error_law", born_law());
    report(5, "self_inversion", self_inversion());
    match run_sweep() {
        Ok(s) => {
            report(6, "increasing_stability", increasing_stability(&s));
            report(7, "bound_structure", bound_structure(&s));
        }
        Err(e) => {
            report(6, "increasing_stability", Err(e.clone()));
            report(7, "bound_structure", Err(e));
        }
    }
    report(8, "determinism", determinism());
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
