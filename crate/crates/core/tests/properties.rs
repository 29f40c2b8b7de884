use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use helmstab::born::{alessandrini_pair, extract_with_zeta, ExtractionContext, ExtractionSettings, FourierSample};
use helmstab::cgo::{cgo_remainder, xi_pair_with_zeta, Band, CgoOptions};
use helmstab::dn::{assemble_dn, noise_matrix, op_norm_star, BoundaryBasis};
use helmstab::fields::{
    lattice_transform, make_grid, make_test_potential, sample_fourier, sobolev_norm, Bump, Domain, PotentialKind,
    ScalarField,
};
use helmstab::reconstruct::{bound_terms, choose_cutoff, invert_truncated, ConstantsLedger, Regime};
use helmstab::spectral::lattice_frequency;

fn bump_2d(cx: f64, cy: f64, w: f64, amp: f64) -> PotentialKind {
    PotentialKind::GaussianBump(Bump {
        center: vec![cx, cy],
        width: w,
        amplitude: amp,
    })
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn ledger() -> ConstantsLedger {
    let mut l = ConstantsLedger::new(2, 3.0, 0.5).unwrap();
    l.eps0 = 1e-3;
    l
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn real_fields_have_conjugate_symmetric_transforms(
        cx in 0.4..0.6f64, cy in 0.4..0.6f64, w in 0.05..0.08f64, amp in -2.0..2.0f64,
        rx in -40.0..40.0f64, ry in -40.0..40.0f64,
    ) {
        let g = make_grid(2, 33, 2.0).unwrap();
        let q = make_test_potential(&g, &bump_2d(cx, cy, w, amp)).unwrap();
        let a = sample_fourier(&q, &[rx, ry]).unwrap();
        let b = sample_fourier(&q, &[-rx, -ry]).unwrap();
        prop_assert!((a - b.conj()).norm() <= 1e-14 * (1.0 + a.norm()));
    }

    #[test]
    fn lattice_transform_satisfies_parseval(seed in any::<u64>(), pad in prop::sample::select(vec![2.0, 3.0, 4.0])) {
        let g = make_grid(2, 9, pad).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<Complex64> = (0..g.padded_len())
            .map(|_| Complex64::new(rand::Rng::random_range(&mut rng, -1.0..1.0), rand::Rng::random_range(&mut rng, -1.0..1.0)))
            .collect();
        let h2 = g.h() * g.h();
        let space: f64 = values.iter().map(|v| v.norm_sqr()).sum::<f64>() * h2;
        let freq: f64 = lattice_transform(&g, values).iter().map(|v| v.norm_sqr()).sum::<f64>()
            / g.box_len().powi(2);
        prop_assert!((space - freq).abs() <= 1e-12 * space);
    }

    #[test]
    fn negative_sobolev_norms_decrease_with_order(
        cx in 0.4..0.6f64, w in 0.05..0.08f64, s in 0.0..3.0f64, gap in 0.1..2.0f64,
    ) {
        let g = make_grid(2, 17, 2.0).unwrap();
        let q = make_test_potential(&g, &bump_2d(cx, 0.5, w, 1.0)).unwrap();
        prop_assert!(sobolev_norm(&q, -(s + gap)) <= sobolev_norm(&q, -s) * (1.0 + 1e-12));
        prop_assert!(sobolev_norm(&q, s) <= sobolev_norm(&q, s + gap) * (1.0 + 1e-12));
    }

    #[test]
    fn cutoff_is_monotone_and_continuous(
        a1 in 1e-12..0.3f64, a2 in 1e-12..0.3f64, k in 2.0..40.0f64,
    ) {
        let l = ledger();
        let (lo, hi) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
        let (t_lo, _) = choose_cutoff(lo, k, &l).unwrap();
        let (t_hi, _) = choose_cutoff(hi, k, &l).unwrap();
        prop_assert!(t_lo >= t_hi);
        let (t_k2, _) = choose_cutoff(lo, 2.0 * k, &l).unwrap();
        prop_assert!(t_k2 >= t_lo);
        let (t, regime) = choose_cutoff(lo, k, &l).unwrap();
        prop_assert!((t - (l.a * k * k).max(-2.0 * l.p * lo.ln())).abs() <= 1e-12 * t);
        prop_assert_eq!(regime == Regime::Small, l.a * k * k <= -2.0 * l.p * lo.ln());
    }

    #[test]
    fn logarithmic_term_has_exact_power_law(
        c in 0.01..5.0f64, a in 1e-15..0.3f64, k in 0.5..10.0f64, m in 0.5..5.0f64,
    ) {
        let (lip, log_term) = bound_terms(c, a, k, m);
        let restored = log_term * (k * k + (1.0 / a).ln()).powf(m);
        prop_assert!((restored - c).abs() <= 1e-10 * c);
        let (lip2, _) = bound_terms(c, 2.0 * a, k, m);
        prop_assert!((lip2 - 2.0 * lip).abs() <= 1e-12 * lip2);
    }

    #[test]
    fn complex_frequencies_are_null_vectors(
        r in 0.0..50.0f64, extra in 0.0..50.0f64,
        e in prop::collection::vec(-1.0..1.0f64, 3).prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-2),
    ) {
        let eta = unit(e);
        let (x1, x2) = xi_pair_with_zeta(r, &eta, r + extra).unwrap();
        let scale = (r + extra).max(1.0).powi(2);
        prop_assert!(x1.defects().max() <= 1e-12);
        prop_assert!(x2.defects().max() <= 1e-12);
        prop_assert!(x1.self_dot().norm() <= 1e-12 * scale);
        // ξ₁ + ξ₂ = −2iρ.
        for j in 0..3 {
            let sum = x1.xi[j] + x2.xi[j];
            prop_assert!((sum - Complex64::new(0.0, -2.0 * r * eta[j])).norm() <= 1e-12 * scale.sqrt());
        }
    }

    #[test]
    fn truncation_error_equals_discarded_energy(
        cx in 0.4..0.6f64, w in 0.05..0.08f64, t in 1.0..80.0f64,
    ) {
        let g = make_grid(2, 17, 2.0).unwrap();
        let q = make_test_potential(&g, &bump_2d(cx, 0.5, w, 1.0)).unwrap().zero_extend();
        let coeffs = q.lattice_transform().unwrap();
        let p = g.padded_points();
        let mut rho = [0.0; 3];
        let mut samples = Vec::new();
        let mut discarded = 0.0;
        for (flat, c) in coeffs.iter().enumerate() {
            lattice_frequency(flat, p, 2, g.box_len(), &mut rho);
            if (rho[0] * rho[0] + rho[1] * rho[1]).sqrt() > t {
                discarded += c.norm_sqr();
            }
            samples.push(FourierSample {
                rho: rho[..2].to_vec(),
                value: *c,
                band: Band::High,
                zeta_norm: 0.0,
                error_budget: 0.0,
                certified: true,
                truth: None,
            });
        }
        discarded /= g.box_len().powi(2);
        let rec = invert_truncated(&samples, t, &g).unwrap();
        let err: f64 = rec.values().iter().zip(q.values()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>()
            * g.h() * g.h();
        prop_assert!((err - discarded).abs() <= 1e-12 + 1e-9 * discarded);
    }

    #[test]
    fn noise_is_scaled_exactly_and_linearly(seed in any::<u64>(), t in 1e-8..1e-1f64, factor in 1.0..100.0f64) {
        let g = make_grid(2, 9, 2.0).unwrap();
        let mu2 = BoundaryBasis::new(&g, 4).unwrap().mu2();
        let e1 = noise_matrix(&mu2, t, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let e2 = noise_matrix(&mu2, factor * t, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!((op_norm_star(&e1, &mu2).unwrap() / t - 1.0).abs() <= 1e-10);
        prop_assert!((op_norm_star(&e2, &mu2).unwrap() / (factor * t) - 1.0).abs() <= 1e-10);
        let drift = (e2 - e1 * Complex64::new(factor, 0.0)).norm();
        prop_assert!(drift <= 1e-10 * factor * t * mu2.len() as f64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn equal_potentials_give_vanishing_pairing_and_samples(
        cx in 0.4..0.6f64, amp in 0.1..2.0f64, k in 1.0..6.0f64, r in 0.0..10.0f64, seed in any::<u64>(),
    ) {
        let g = make_grid(2, 17, 2.0).unwrap();
        let q = make_test_potential(&g, &bump_2d(cx, 0.5, 0.06, amp)).unwrap();
        let basis = BoundaryBasis::new(&g, 6).unwrap();
        let l = assemble_dn(&q, k, &basis).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coeffs = || -> Vec<Complex64> {
            (0..basis.len())
                .map(|_| Complex64::new(rand::Rng::random_range(&mut rng, -1.0..1.0), rand::Rng::random_range(&mut rng, -1.0..1.0)))
                .collect()
        };
        let (c1, c2) = (coeffs(), coeffs());
        prop_assert_eq!(alessandrini_pair(&l, &l, &c1, &c2, k).unwrap(), Complex64::new(0.0, 0.0));
        let ledger = ledger();
        let settings = ExtractionSettings::default();
        let ctx = ExtractionContext {
            lambda1: &l,
            lambda2: &l,
            potentials: Some((&q, &q)),
            truth: None,
            k,
            ledger: &ledger,
            settings: &settings,
        };
        prop_assert_eq!(extract_with_zeta(&ctx, r, &[1.0, 0.0], r).unwrap().value, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn fd_dn_maps_are_symmetric(cx in 0.4..0.6f64, cy in 0.4..0.6f64, amp in -2.0..2.0f64, k in 0.5..6.0f64) {
        let g = make_grid(2, 17, 2.0).unwrap();
        let q = make_test_potential(&g, &bump_2d(cx, cy, 0.06, amp)).unwrap();
        let l = assemble_dn(&q, k, &BoundaryBasis::new(&g, 6).unwrap()).unwrap();
        prop_assert!(l.asymmetry() <= 1e-10);
    }
}

#[test]
fn remainder_scales_with_k_squared() {
    let g = make_grid(2, 33, 2.0).unwrap();
    let q = make_test_potential(&g, &bump_2d(0.5, 0.5, 0.08, 1.0)).unwrap();
    let l = ledger();
    let opts = CgoOptions {
        enforce_contraction: false,
        ..Default::default()
    };
    let (xi, _) = xi_pair_with_zeta(16.0, &[1.0, 0.0], 16.0).unwrap();
    let base = cgo_remainder(&q, 1.0, &xi, &l, &opts).unwrap().psi_l2();
    let doubled = cgo_remainder(&q, 2.0, &xi, &l, &opts).unwrap().psi_l2();
    assert!((doubled / base - 4.0).abs() < 0.2, "ratio {}", doubled / base);
}

#[test]
fn sobolev_norm_ignores_working_pad() {
    let kind = bump_2d(0.5, 0.5, 0.07, 1.0);
    let a = make_test_potential(&make_grid(2, 17, 2.0).unwrap(), &kind).unwrap();
    let b = make_test_potential(&make_grid(2, 17, 4.0).unwrap(), &kind).unwrap();
    let (na, nb) = (sobolev_norm(&a, -2.0), sobolev_norm(&b, -2.0));
    assert!((na - nb).abs() <= 1e-12 * na);
    let zero = ScalarField::zeros(a.grid(), Domain::Omega);
    assert_eq!(sobolev_norm(&zero, 3.0), 0.0);
}
