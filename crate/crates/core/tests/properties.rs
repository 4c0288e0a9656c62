use std::sync::Arc;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qpeuler::lattice::canonical_omega_normalized;
use qpeuler::operators::{
    advect, inv_laplace_grad_div, leray_project, pressure_gradient, pressure_recover, project_bullet, quadratic,
    ProductBackend,
};
use qpeuler::oracle::finite_difference_check;
use qpeuler::solver::rhs_eulerian;
use qpeuler::{FrequencyMatrix, ModeIndex, ModeSet, NormParams, QPScalar, QPVectorField};

fn irrational_modes(k: u32) -> Arc<ModeSet> {
    let omega = canonical_omega_normalized(2, &[2f64.sqrt() - 1.0, 3f64.sqrt() - 1.0]).unwrap();
    ModeSet::new(omega, k).unwrap()
}

/// Random full-rank `M × n` matrix with entries in `[-scale, scale]`.
fn random_modes(seed: u64, m: usize, n: usize, scale: f64, k: u32) -> Arc<ModeSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let entries: Vec<f64> = (0..m * n).map(|_| rng.gen_range(-scale..scale)).collect();
        if let Ok(omega) = FrequencyMatrix::new(m, n, entries) {
            if let Ok(ms) = ModeSet::new(omega, k) {
                return ms;
            }
        }
    }
}

fn random_scalar(ms: &Arc<ModeSet>, rng: &mut ChaCha8Rng, density: f64) -> QPScalar {
    let entries: Vec<(ModeIndex, Complex64)> = ms
        .modes()
        .filter_map(|m| {
            let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            rng.gen_bool(density).then_some((m, c))
        })
        .collect();
    QPScalar::from_modes(ms, entries).unwrap()
}

fn random_vector(ms: &Arc<ModeSet>, rng: &mut ChaCha8Rng, density: f64) -> QPVectorField {
    QPVectorField::new((0..ms.space_dim()).map(|_| random_scalar(ms, rng, density)).collect()).unwrap()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn vdiff(a: &QPVectorField, b: &QPVectorField) -> f64 {
    a.max_coefficient_difference(b).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn product_is_commutative_and_real(seed in any::<u64>()) {
        let ms = irrational_modes(3);
        let mut r = rng(seed);
        let f = random_scalar(&ms, &mut r, 0.5);
        let g = random_scalar(&ms, &mut r, 0.5);
        let fg = f.multiply(&g).unwrap();
        let gf = g.multiply(&f).unwrap();
        prop_assert!(fg.max_coefficient_difference(&gf) <= 1e-14);
        prop_assert!(fg.reality_defect() <= 1e-14);
    }

    #[test]
    fn product_is_bilinear(seed in any::<u64>(), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let ms = irrational_modes(2);
        let mut r = rng(seed);
        let f = random_scalar(&ms, &mut r, 0.6);
        let g = random_scalar(&ms, &mut r, 0.6);
        let h = random_scalar(&ms, &mut r, 0.6);
        let lhs = QPScalar::linear_combination(&[(a, &f), (b, &g)]).unwrap().multiply(&h).unwrap();
        let rhs = QPScalar::linear_combination(&[(a, &f.multiply(&h).unwrap()), (b, &g.multiply(&h).unwrap())])
            .unwrap();
        prop_assert!(lhs.max_coefficient_difference(&rhs) <= 1e-13);
    }

    #[test]
    fn spectral_product_matches_direct(seed in any::<u64>()) {
        let ms = irrational_modes(3);
        let spectral = ProductBackend::spectral(&ms).unwrap();
        let mut r = rng(seed);
        let f = random_scalar(&ms, &mut r, 0.7);
        let g = random_scalar(&ms, &mut r, 0.7);
        let direct = f.multiply(&g).unwrap();
        let fast = spectral.multiply(&f, &g).unwrap();
        prop_assert!(direct.max_coefficient_difference(&fast) <= 1e-12);
    }

    #[test]
    fn leibniz_rule_at_galerkin_level(seed in any::<u64>(), j in 0usize..2) {
        let ms = irrational_modes(3);
        let mut r = rng(seed);
        let f = random_scalar(&ms, &mut r, 0.5);
        let g = random_scalar(&ms, &mut r, 0.5);
        let lhs = f.multiply(&g).unwrap().derivative(j);
        let rhs = f.derivative(j).multiply(&g).unwrap().add(&f.multiply(&g.derivative(j)).unwrap()).unwrap();
        prop_assert!(lhs.max_coefficient_difference(&rhs) <= 1e-12);
    }

    #[test]
    fn derivative_has_zero_mean(seed in any::<u64>(), j in 0usize..2) {
        let ms = irrational_modes(3);
        let f = random_scalar(&ms, &mut rng(seed), 0.8);
        prop_assert_eq!(f.derivative(j).mean(), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn exponent_map_is_additive(seed in any::<u64>()) {
        let ms = random_modes(seed, 3, 2, 2.0, 2);
        let mut r = rng(seed ^ 1);
        for _ in 0..20 {
            let a = r.gen_range(0..ms.len());
            let b = r.gen_range(0..ms.len());
            let neg = ms.neg_slot(a);
            for (x, y) in ms.lambda(neg).iter().zip(ms.lambda(a)) {
                prop_assert_eq!(*x, -*y);
            }
            if let Some(sum) = ms.add_slots(a, b) {
                for j in 0..2 {
                    let d = ms.lambda(sum)[j] - ms.lambda(a)[j] - ms.lambda(b)[j];
                    prop_assert!(d.abs() <= 1e-13);
                }
            }
        }
    }

    #[test]
    fn leray_is_idempotent_projector(seed in any::<u64>()) {
        let ms = irrational_modes(3);
        let w = random_vector(&ms, &mut rng(seed), 0.6);
        let p = leray_project(&w).unwrap();
        let pp = leray_project(&p).unwrap();
        prop_assert!(vdiff(&p, &pp) <= 1e-13);
        prop_assert!(p.divergence().max_coefficient() <= 1e-12);
        let g = inv_laplace_grad_div(&w).unwrap();
        let gg = inv_laplace_grad_div(&g).unwrap();
        prop_assert!(vdiff(&g, &gg) <= 1e-13);
    }

    #[test]
    fn euler_rhs_preserves_divergence(seed in any::<u64>()) {
        let ms = irrational_modes(3);
        let u = leray_project(&random_vector(&ms, &mut rng(seed), 0.4)).unwrap();
        let backend = ProductBackend::auto(&ms).unwrap();
        // one derivative of a product: relative to |Λ|² |u|²
        let scale = (ms.max_lambda() * u.max_coefficient()).powi(2).max(1e-300);
        let rhs = rhs_eulerian(&u, &backend).unwrap();
        prop_assert!(rhs.divergence().max_coefficient() / scale <= 1e-14);
        let d = advect(&u).unwrap().divergence();
        let q = quadratic(&u).unwrap();
        prop_assert!(d.max_coefficient_difference(&q) / scale <= 1e-14);
    }

    #[test]
    fn recovered_pressure_has_the_right_gradient(seed in any::<u64>()) {
        let ms = irrational_modes(3);
        let u = leray_project(&random_vector(&ms, &mut rng(seed), 0.4)).unwrap();
        let p = pressure_recover(&u).unwrap();
        let grad = p.gradient();
        let minus_pp = pressure_gradient(&u).unwrap().scale(-1.0);
        prop_assert!(vdiff(&grad, &minus_pp) <= 1e-11);
    }

    #[test]
    fn bullet_projection_smooths(seed in any::<u64>(), tau in 1u32..=3) {
        let ms = random_modes(seed, 3, 2, 0.1, 2);
        let f = random_scalar(&ms, &mut rng(seed ^ 7), 0.8);
        let base = NormParams { l: 1, s: 2.0 };
        let lifted = NormParams { l: 1 + tau, s: 2.0 };
        let bound = 2f64.powf(tau as f64 / 2.0) * f.norm(&base);
        prop_assert!(project_bullet(&f).norm(&lifted) <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn norm_satisfies_triangle_inequality(seed in any::<u64>(), l in 0u32..3) {
        let ms = irrational_modes(3);
        let mut r = rng(seed);
        let f = random_scalar(&ms, &mut r, 0.5);
        let g = random_scalar(&ms, &mut r, 0.5);
        let p = NormParams { l, s: 1.5 };
        prop_assert!(f.add(&g).unwrap().norm(&p) <= f.norm(&p) + g.norm(&p) + 1e-12);
    }

    #[test]
    fn norm_forms_are_equivalent(seed in any::<u64>()) {
        // For l = 2, n = 2 the derivative-sum weight lies between half the
        // bracket weight and the bracket weight.
        let ms = irrational_modes(3);
        let f = random_scalar(&ms, &mut rng(seed), 0.5);
        prop_assume!(!f.is_zero());
        let p = NormParams { l: 2, s: 1.5 };
        let ratio = f.derivative_sum_norm(&p) / f.norm(&p);
        prop_assert!((0.5f64.sqrt() - 1e-12..=1.0 + 1e-12).contains(&ratio), "ratio {}", ratio);
        let p1 = NormParams { l: 1, s: 1.5 };
        prop_assert!((f.derivative_sum_norm(&p1) / f.norm(&p1) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn derivative_matches_finite_differences(seed in any::<u64>(), j in 0usize..2) {
        let ms = irrational_modes(2);
        let mut r = rng(seed);
        let f = random_scalar(&ms, &mut r, 0.7);
        let x = [r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0)];
        let e1 = finite_difference_check(&f, j, &x, 1e-2);
        let e2 = finite_difference_check(&f, j, &x, 5e-3);
        prop_assume!(e2 > 1e-11);
        let ratio = e1 / e2;
        prop_assert!((3.5..=4.5).contains(&ratio), "ratio {}", ratio);
    }
}
