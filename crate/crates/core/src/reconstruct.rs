//! Constants, the cutoff rule, truncated Fourier inversion, error norms and
//! the two-term stability bound.

use std::collections::HashMap;
use std::f64::consts::E;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::born::FourierSample;
use crate::error::{Error, Result};
use crate::fields::{inverse_lattice_transform, sobolev_norm, Domain, GridSpec, ScalarField};
use crate::spectral::lattice_frequency;

/// Every constant of the stability argument in one record.
///
/// `a0`, `a`, `p` and `m` are derived from the others by [`ConstantsLedger::refresh`]
/// unless `a0` is pinned explicitly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsLedger {
    pub n: usize,
    pub s: f64,
    /// A-priori bound `M ≥ ‖q_l‖_{Hˢ}`.
    pub m_bound: f64,
    /// `m = 2s − n`.
    pub m: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub c_chi: f64,
    pub a0: f64,
    /// `a = 2 C₂ C_χ M²`.
    pub a: f64,
    /// `p = 1/(2 C₄)`.
    pub p: f64,
    pub eps0: f64,
    pub fitted_c: Option<f64>,
}

/// Optional replacements for ledger entries, as read from a run configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerOverrides {
    pub s: Option<f64>,
    pub m_bound: Option<f64>,
    pub c0: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub c3: Option<f64>,
    pub c4: Option<f64>,
    pub c5: Option<f64>,
    pub c6: Option<f64>,
    pub c_chi: Option<f64>,
    pub a0: Option<f64>,
    pub eps0: Option<f64>,
    pub fitted_c: Option<f64>,
}

impl ConstantsLedger {
    pub fn new(n: usize, s: f64, m_bound: f64) -> Result<Self> {
        let mut ledger = Self {
            n,
            s,
            m_bound,
            m: 0.0,
            c0: 1.0,
            c1: 2.0,
            c2: 1.0,
            c3: 1.0,
            c4: 1.0,
            c5: 1.0,
            c6: 1.0,
            c_chi: 1.0,
            a0: 0.0,
            a: 0.0,
            p: 0.0,
            eps0: 1.0,
            fitted_c: None,
        };
        ledger.refresh(None);
        ledger.validate()?;
        Ok(ledger)
    }

    /// Recomputes the derived entries; `a0` follows `2 C₂ C_χ` unless pinned.
    pub fn refresh(&mut self, pinned_a0: Option<f64>) {
        self.m = 2.0 * self.s - self.n as f64;
        self.a0 = pinned_a0.unwrap_or(2.0 * self.c2 * self.c_chi);
        self.a = 2.0 * self.c2 * self.c_chi * self.m_bound * self.m_bound;
        self.p = 1.0 / (2.0 * self.c4);
    }

    pub fn with_overrides(&self, o: &LedgerOverrides) -> Result<Self> {
        let mut l = self.clone();
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = o.$f { l.$f = v; } )* };
        }
        take!(s, m_bound, c0, c1, c2, c3, c4, c5, c6, c_chi, eps0);
        if o.fitted_c.is_some() {
            l.fitted_c = o.fitted_c;
        }
        l.refresh(o.a0);
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidLedger(msg));
        if !(2..=3).contains(&self.n) {
            return bad(format!("dimension {}", self.n));
        }
        if !(self.s > self.n as f64 / 2.0 + 1.0) {
            return bad(format!("s = {} must exceed n/2 + 1", self.s));
        }
        let positive = [
            ("C0", self.c0),
            ("C1", self.c1),
            ("C2", self.c2),
            ("C3", self.c3),
            ("C4", self.c4),
            ("C5", self.c5),
            ("C6", self.c6),
            ("C_chi", self.c_chi),
            ("eps0", self.eps0),
            ("M", self.m_bound),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        if self.a0 < self.c1 {
            return bad(format!("a0 = {} must be at least C1 = {}", self.a0, self.c1));
        }
        if (self.m - (2.0 * self.s - self.n as f64)).abs() > 1e-12 {
            return bad("m must equal 2s - n".into());
        }
        if (self.p * 2.0 * self.c4 - 1.0).abs() > 1e-12 {
            return bad("p must equal 1/(2 C4)".into());
        }
        let a = 2.0 * self.c2 * self.c_chi * self.m_bound * self.m_bound;
        if (self.a - a).abs() > 1e-12 * a {
            return bad("a must equal 2 C2 C_chi M^2".into());
        }
        if let Some(c) = self.fitted_c {
            if !(c >= 0.0) {
                return bad(format!("fitted C = {c} must be nonnegative"));
            }
        }
        Ok(())
    }

    /// `k² ≥ 1/(C₁M)`.
    pub fn admissible(&self, k: f64) -> bool {
        k * k >= 1.0 / (self.c1 * self.m_bound)
    }

    /// Smallest admissible `k²`.
    pub fn min_k2(&self) -> f64 {
        1.0 / (self.c1 * self.m_bound)
    }

    /// Low band edge `a₀k²M`.
    pub fn low_edge(&self, k: f64) -> f64 {
        self.a0 * k * k * self.m_bound
    }

    /// High band edge `C₁k²M`.
    pub fn high_edge(&self, k: f64) -> f64 {
        self.c1 * k * k * self.m_bound
    }

    /// The closed-form choice of `C₅` from the small-gap case.
    pub fn c5_rule(&self) -> f64 {
        let m = self.m;
        let first = self.c1 * self.c1 * (4.0 * m / E).powf(2.0 * m);
        let second = self.p.powf(-2.0 * m);
        first.max(second) * self.m_bound * self.m_bound * (1.0 + self.p / self.a).powf(2.0 * m)
    }

    /// `ε = T^m / (4 C₃)`; kept for reference, no computation depends on it.
    pub fn epsilon(&self, t: f64) -> f64 {
        t.powf(self.m) / (4.0 * self.c3)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Small,
    Large,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Small => "small",
            Regime::Large => "large",
        }
    }
}

/// Cutoff `T` and regime for a DN gap `A_star = ‖Λ₁ − Λ₂‖_*`.
///
/// With `A = A_star²`: if `a k² ≤ p log(1/A)` then `T = p log(1/A)`,
/// otherwise `T = a k²`.
pub fn choose_cutoff(a_star: f64, k: f64, ledger: &ConstantsLedger) -> Result<(f64, Regime)> {
    if !(a_star >= 0.0) || a_star > 1.0 / E {
        return Err(Error::GapTooLarge(a_star));
    }
    if !ledger.admissible(k) {
        return Err(Error::FrequencyTooLow {
            k2: k * k,
            min: ledger.min_k2(),
        });
    }
    let log_inv = -2.0 * a_star.ln();
    let ak2 = ledger.a * k * k;
    let plog = ledger.p * log_inv;
    if ak2 <= plog {
        Ok((plog, Regime::Small))
    } else {
        Ok((ak2, Regime::Large))
    }
}

/// Truncated inverse transform of Fourier samples on the padded box of `grid`.
///
/// Every lattice frequency with `|ρ| ≤ T` takes the value of the nearest
/// sample, which must lie within half a lattice cell; the others are zero.
/// The result is the whole periodic-box field (nothing is cut to Ω).
pub fn invert_truncated(samples: &[FourierSample], t: f64, grid: &GridSpec) -> Result<ScalarField> {
    let dim = grid.dim();
    let p = grid.padded_points();
    let step = grid.frequency_step();
    let mut by_cell: HashMap<Vec<i64>, Vec<&FourierSample>> = HashMap::new();
    for s in samples {
        if s.rho.len() != dim {
            return Err(Error::ShapeMismatch("sample wavevector dimension".into()));
        }
        let key: Vec<i64> = s.rho.iter().map(|v| (v / step).round() as i64).collect();
        by_cell.entry(key).or_default().push(s);
    }
    let mut coeffs = vec![Complex64::new(0.0, 0.0); grid.padded_len()];
    let mut rho = [0.0; 3];
    for (flat, c) in coeffs.iter_mut().enumerate() {
        lattice_frequency(flat, p, dim, grid.box_len(), &mut rho);
        let r = rho[..dim].iter().map(|v| v * v).sum::<f64>().sqrt();
        if r > t {
            continue;
        }
        let key: Vec<i64> = rho[..dim].iter().map(|v| (v / step).round() as i64).collect();
        let best = by_cell.get(&key).and_then(|list| {
            list.iter()
                .map(|s| {
                    let d = s
                        .rho
                        .iter()
                        .zip(&rho[..dim])
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    (d, *s)
                })
                .filter(|(d, _)| *d <= 0.5 * step * (1.0 + 1e-9))
                .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
        });
        match best {
            Some((_, s)) => *c = s.value,
            None => return Err(Error::CoverageGap(rho[..dim].to_vec())),
        }
    }
    let values = inverse_lattice_transform(grid, coeffs);
    ScalarField::new(grid.clone(), Domain::Padded, values, false)
}

/// `(C/k²) exp(C k²) A_star` and `C (k² + log(1/A_star))^{−m}`.
pub fn bound_rhs(a_star: f64, k: f64, ledger: &ConstantsLedger) -> Result<(f64, f64)> {
    let c = ledger.fitted_c.ok_or(Error::MissingConstant("fitted C"))?;
    Ok(bound_terms(c, a_star, k, ledger.m))
}

/// [`bound_rhs`] with an explicit constant.
pub fn bound_terms(c: f64, a_star: f64, k: f64, m: f64) -> (f64, f64) {
    let k2 = k * k;
    let lip = if a_star == 0.0 {
        0.0
    } else {
        c / k2 * (c * k2).exp() * a_star
    };
    let log_term = if a_star == 0.0 {
        0.0
    } else {
        c * (k2 - a_star.ln()).powf(-m)
    };
    (lip, log_term)
}

/// Reconstruction error norms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub err_hms: f64,
    pub err_l2: f64,
}

/// `H^{−s}` and L² norms of `q_rec − q̃` on the lattice of `q_rec`.
pub fn error_report(q_rec: &ScalarField, q_true: &ScalarField, ledger: &ConstantsLedger) -> Result<ErrorReport> {
    let truth = match q_rec.domain() {
        Domain::Padded => q_true.zero_extend_onto(q_rec.grid())?,
        Domain::Omega => q_true.restrict()?,
    };
    let truth = ScalarField::new(truth.grid().clone(), truth.domain(), truth.into_values(), false)?;
    let rec = ScalarField::new(q_rec.grid().clone(), q_rec.domain(), q_rec.values().to_vec(), false)?;
    let diff = rec.sub(&truth)?;
    Ok(ErrorReport {
        err_hms: sobolev_norm(&diff, -ledger.s),
        err_l2: sobolev_norm(&diff, 0.0),
    })
}

/// One row of a stability sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRecord {
    pub k: f64,
    #[serde(rename = "A_star")]
    pub a_star: f64,
    #[serde(rename = "T_used")]
    pub t_used: f64,
    pub regime: Regime,
    pub err_hms: f64,
    pub err_l2: f64,
    /// Empty until a bound constant is known.
    pub lip_term: Option<f64>,
    pub log_term: Option<f64>,
    pub band_mode: String,
    pub seed: u64,
}

impl StabilityRecord {
    pub fn regime_consistent(&self, ledger: &ConstantsLedger) -> bool {
        if self.a_star == 0.0 {
            return self.regime == Regime::Small;
        }
        let lhs = ledger.a * self.k * self.k;
        let rhs = -2.0 * ledger.p * self.a_star.ln();
        match self.regime {
            Regime::Small => lhs <= rhs,
            Regime::Large => lhs > rhs,
        }
    }
}

/// Smallest `C` with `err ≤ lip + log` for one observation.
pub fn minimal_constant(err: f64, a_star: f64, k: f64, m: f64) -> f64 {
    if err <= 0.0 {
        return 0.0;
    }
    let holds = |c: f64| {
        let (l, g) = bound_terms(c, a_star, k, m);
        l + g >= err
    };
    let mut hi = 1.0;
    let mut tries = 0;
    while !holds(hi) {
        hi *= 2.0;
        tries += 1;
        if tries > 200 {
            return f64::INFINITY;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if holds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    hi
}

/// Outcome of fitting the bound constant on part of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundFit {
    pub fitted_c: f64,
    pub training_rows: Vec<usize>,
    pub holdout_rows: Vec<usize>,
    /// Holdout rows violating the fitted bound.
    pub violations: Vec<usize>,
}

/// Fits `C` as the largest per-row minimum over `training` and checks the
/// bound on the remaining rows with positive gap.
pub fn fit_and_holdout(records: &[StabilityRecord], m: f64, training: &[usize]) -> BoundFit {
    let usable: Vec<usize> = (0..records.len()).filter(|&i| records[i].a_star > 0.0).collect();
    let training: Vec<usize> = usable.iter().copied().filter(|i| training.contains(i)).collect();
    let holdout: Vec<usize> = usable.iter().copied().filter(|i| !training.contains(i)).collect();
    let fitted_c = training
        .iter()
        .map(|&i| {
            let r = &records[i];
            minimal_constant(r.err_hms, r.a_star, r.k, m)
        })
        .fold(0.0, f64::max);
    let violations = holdout
        .iter()
        .copied()
        .filter(|&i| {
            let r = &records[i];
            let (l, g) = bound_terms(fitted_c, r.a_star, r.k, m);
            r.err_hms > l + g
        })
        .collect();
    BoundFit {
        fitted_c,
        training_rows: training,
        holdout_rows: holdout,
        violations,
    }
}

/// Rows at the two ends of each frequency's noise ladder.
pub fn ladder_end_rows(k: &[f64], noise: &[f64]) -> Vec<usize> {
    (0..k.len())
        .filter(|&i| {
            let same: Vec<f64> = (0..k.len()).filter(|&j| k[j] == k[i]).map(|j| noise[j]).collect();
            let lo = same.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = same.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            noise[i] == lo || noise[i] == hi
        })
        .collect()
}
