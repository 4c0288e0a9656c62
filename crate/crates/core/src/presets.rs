//! Standard initial data.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{QpError, Result};
use crate::field::{NormParams, QPScalar, QPVectorField};
use crate::lattice::{ModeIndex, ModeSet};
use crate::operators::leray_project;

/// A lattice direction `e_j` whose exponent has no `x₁` component, so that
/// functions built on its multiples do not depend on `x₁`.
pub fn shear_direction(ms: &ModeSet) -> Option<usize> {
    (0..ms.torus_dim()).find(|&j| {
        let e = ModeIndex::unit(ms.torus_dim(), j);
        let lam = ms.lambda_of(&e).expect("unit modes lie in the box");
        lam[0] == 0.0 && lam.iter().any(|&l| l != 0.0)
    })
}

/// `u = (g, 0, …, 0)` with `g = a cos(Λ_e · x) + (a/2) sin(Λ_{2e} · x)`
/// along [`shear_direction`]; a steady solution.
pub fn shear(ms: &Arc<ModeSet>, amplitude: f64) -> Result<QPVectorField> {
    let j = shear_direction(ms).ok_or_else(|| {
        QpError::InvalidArgument(
            "shear preset needs a lattice direction whose exponent is orthogonal to x1".into(),
        )
    })?;
    let e = ModeIndex::unit(ms.torus_dim(), j);
    let mut g = QPScalar::cosine(ms, &e, amplitude)?;
    if ms.radius() >= 2 {
        g = g.add(&QPScalar::sine(ms, &e.scaled(2), amplitude / 2.0)?)?;
    }
    let mut comps = vec![g];
    comps.extend((1..ms.space_dim()).map(|_| QPScalar::zero(ms)));
    QPVectorField::new(comps)
}

/// `u = a (sin(αx₁) cos(βx₂), −(α/β) cos(αx₁) sin(βx₂))` built on the first
/// two lattice directions, which must carry exponents `(α, 0)` and `(0, β)`.
pub fn taylor_green(ms: &Arc<ModeSet>, amplitude: f64) -> Result<QPVectorField> {
    if ms.space_dim() != 2 || ms.torus_dim() < 2 {
        return Err(QpError::InvalidArgument(
            "taylor_green preset needs n = 2".into(),
        ));
    }
    let e1 = ModeIndex::unit(ms.torus_dim(), 0);
    let e2 = ModeIndex::unit(ms.torus_dim(), 1);
    let l1 = ms.lambda_of(&e1).expect("unit mode").to_vec();
    let l2 = ms.lambda_of(&e2).expect("unit mode").to_vec();
    if l1[1] != 0.0 || l2[0] != 0.0 || l1[0] == 0.0 || l2[1] == 0.0 {
        return Err(QpError::InvalidArgument(
            "taylor_green preset needs the first two lattice directions along x1 and x2".into(),
        ));
    }
    let ratio = l1[0] / l2[1];
    let s1 = QPScalar::sine(ms, &e1, 1.0)?;
    let c1 = QPScalar::cosine(ms, &e1, 1.0)?;
    let s2 = QPScalar::sine(ms, &e2, 1.0)?;
    let c2 = QPScalar::cosine(ms, &e2, 1.0)?;
    QPVectorField::new(vec![
        s1.multiply(&c2)?.scale(amplitude),
        c1.multiply(&s2)?.scale(-amplitude * ratio),
    ])
}

/// Random field on the sub-box `|m|_∞ ≤ sub_radius`: uniform complex
/// coefficients, symmetrized, Leray-projected, mean removed, and scaled to
/// `‖u‖_{0,s} = amplitude`.
pub fn random_divfree(
    ms: &Arc<ModeSet>,
    seed: u64,
    sub_radius: u32,
    amplitude: f64,
    s: f64,
) -> Result<QPVectorField> {
    let r = sub_radius.min(ms.radius()) as i32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = ms.space_dim();
    let mut entries = Vec::new();
    for slot in 0..ms.len() {
        let m = ms.mode(slot);
        if m.max_norm() as i32 > r || slot == ms.zero_slot() {
            continue;
        }
        let v: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        entries.push((m, v));
    }
    let u = leray_project(&QPVectorField::from_modes(ms, entries)?)?;
    let p = NormParams { l: 0, s };
    let norm = u.norm(&p);
    if norm == 0.0 {
        return Ok(u);
    }
    Ok(u.scale(amplitude / norm))
}

/// `u = ∇^⊥ψ = (∂₂ψ, −∂₁ψ)` for `ψ = a Σ_j cos(Λ_{e_j} · x)` over all unit
/// lattice directions; for `n = 2`.
pub fn quasipattern(ms: &Arc<ModeSet>, amplitude: f64) -> Result<QPVectorField> {
    if ms.space_dim() != 2 {
        return Err(QpError::InvalidArgument(
            "quasipattern preset needs n = 2".into(),
        ));
    }
    let mut psi = QPScalar::zero(ms);
    for j in 0..ms.torus_dim() {
        psi = psi.add(&QPScalar::cosine(ms, &ModeIndex::unit(ms.torus_dim(), j), amplitude)?)?;
    }
    QPVectorField::new(vec![psi.derivative(1), psi.derivative(0).neg()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{canonical_omega, FrequencyMatrix};
    use crate::operators::pressure_gradient;

    #[test]
    fn presets_are_divergence_free() {
        let ms = ModeSet::new(canonical_omega(2, &[0.6, 0.8]).unwrap(), 3).unwrap();
        for u in [
            shear(&ms, 0.5).unwrap(),
            taylor_green(&ms, 0.5).unwrap(),
            random_divfree(&ms, 1, 2, 0.1, 2.0).unwrap(),
            quasipattern(&ms, 0.1).unwrap(),
        ] {
            assert!(u.divergence().max_coefficient() < 1e-14);
        }
    }

    #[test]
    fn random_divfree_is_normalized_and_seeded() {
        let ms = ModeSet::new(canonical_omega(2, &[0.6, 0.8]).unwrap(), 3).unwrap();
        let a = random_divfree(&ms, 9, 1, 0.2, 2.0).unwrap();
        let b = random_divfree(&ms, 9, 1, 0.2, 2.0).unwrap();
        assert!((a.norm(&NormParams { l: 0, s: 2.0 }) - 0.2).abs() < 1e-15);
        assert_eq!(a.max_coefficient_difference(&b).unwrap(), 0.0);
        assert!(a.mean().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn shear_is_balanced() {
        let ms = ModeSet::new(FrequencyMatrix::identity(2).unwrap(), 3).unwrap();
        assert_eq!(shear_direction(&ms), Some(1));
        let u = shear(&ms, 1.0).unwrap();
        assert_eq!(pressure_gradient(&u).unwrap().max_coefficient(), 0.0);
    }
}
