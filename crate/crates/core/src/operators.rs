//! Mode projections, inverse Laplacians, the nonlinearities `D(w) = w·∇w`
//! and `Q(w) = tr([dw]²)`, the pressure operator and the Leray projector.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{QpError, Result};
use crate::field::{QPScalar, QPVectorField};
use crate::lattice::ModeSet;
use crate::torus_fft::TorusTransform;

/// Exponents with `|Λ_m|` below this at `m ≠ 0` signal a resonant `Ω`.
pub const RESONANCE_TOL: f64 = 1e-12;

/// Largest coefficient tolerated on `I_•` by [`inv_laplace_infty`].
pub const BULLET_SUPPORT_TOL: f64 = 1e-14;

/// Per-mode symbols shared by all operators on one [`ModeSet`].
#[derive(Debug)]
pub struct MultiplierTable {
    lambda_sq: Vec<f64>,
    bullet: Vec<bool>,
    /// `1/|Λ_m|²` on `I_∞`, zero on `I_•`.
    inv_lambda_sq: Vec<f64>,
    resonant: Vec<bool>,
}

impl MultiplierTable {
    pub(crate) fn build(ms: &ModeSet) -> Self {
        let zero = ms.zero_slot();
        let lambda_sq: Vec<f64> = (0..ms.len()).map(|s| ms.lambda_sq(s)).collect();
        let bullet: Vec<bool> = (0..ms.len()).map(|s| ms.is_bullet(s)).collect();
        let inv_lambda_sq = lambda_sq
            .iter()
            .zip(&bullet)
            .map(|(&l2, &b)| if b { 0.0 } else { 1.0 / l2 })
            .collect();
        let resonant = lambda_sq
            .iter()
            .enumerate()
            .map(|(s, &l2)| s != zero && l2.sqrt() < RESONANCE_TOL)
            .collect();
        Self {
            lambda_sq,
            bullet,
            inv_lambda_sq,
            resonant,
        }
    }

    pub fn lambda_sq(&self, slot: usize) -> f64 {
        self.lambda_sq[slot]
    }

    pub fn is_bullet(&self, slot: usize) -> bool {
        self.bullet[slot]
    }

    pub fn inv_lambda_sq(&self, slot: usize) -> Option<f64> {
        (!self.bullet[slot]).then_some(self.inv_lambda_sq[slot])
    }

    pub fn is_resonant(&self, slot: usize) -> bool {
        self.resonant[slot]
    }
}

/// The shared multiplier table of `ms`, built on first use.
pub fn multiplier_table(ms: &ModeSet) -> &MultiplierTable {
    ms.multipliers()
}

/// `Π_• f`: keeps the modes with `|Λ_m| ≤ 1`.
pub fn project_bullet(f: &QPScalar) -> QPScalar {
    let ms = Arc::clone(f.modes());
    f.restrict(|s| ms.is_bullet(s))
}

/// `Π_∞ f`: keeps the modes with `|Λ_m| > 1`.
pub fn project_infty(f: &QPScalar) -> QPScalar {
    let ms = Arc::clone(f.modes());
    f.restrict(|s| !ms.is_bullet(s))
}

pub fn project_bullet_field(w: &QPVectorField) -> QPVectorField {
    w.map(project_bullet)
}

pub fn project_infty_field(w: &QPVectorField) -> QPVectorField {
    w.map(project_infty)
}

/// `Δ^{-1}` on `Q_∞`: `f̂_m ↦ −f̂_m / |Λ_m|²`. Rejects input carrying
/// bullet-class coefficients.
pub fn inv_laplace_infty(f: &QPScalar) -> Result<QPScalar> {
    let ms = f.modes();
    let table = ms.multipliers();
    if let Some(&(s, c)) = f
        .slot_coefficients()
        .iter()
        .find(|&&(s, c)| table.is_bullet(s) && c.norm() > BULLET_SUPPORT_TOL)
    {
        return Err(QpError::BulletSupport {
            mode: ms.mode(s).0,
            magnitude: c.norm(),
        });
    }
    let coeffs = f
        .slot_coefficients()
        .iter()
        .filter_map(|&(s, c)| table.inv_lambda_sq(s).map(|inv| (s, -c * inv)))
        .collect();
    Ok(QPScalar::from_sorted(ms, coeffs, f.is_complex()))
}

pub fn inv_laplace_infty_field(w: &QPVectorField) -> Result<QPVectorField> {
    w.try_map(inv_laplace_infty)
}

fn resonance_error(ms: &ModeSet, slot: usize) -> QpError {
    QpError::Resonance {
        mode: ms.mode(slot).0,
        norm: ms.lambda_sq(slot).sqrt(),
    }
}

/// `Δ^{-1}∇Div`: `ŵ_m ↦ Λ_m (Λ_m · ŵ_m) / |Λ_m|²`, zero at `m = 0`.
pub fn inv_laplace_grad_div(w: &QPVectorField) -> Result<QPVectorField> {
    let ms = Arc::clone(w.modes());
    let table = ms.multipliers();
    let n = w.dim();
    let zero = ms.zero_slot();
    let mut out: Vec<Vec<(usize, Complex64)>> = vec![Vec::new(); n];
    for s in w.support_slots() {
        if s == zero {
            continue;
        }
        if table.is_resonant(s) {
            return Err(resonance_error(&ms, s));
        }
        let lam = ms.lambda(s);
        let dot: Complex64 = (0..n)
            .map(|k| w.component(k).coefficient_at(s) * lam[k])
            .sum();
        let scaled = dot / table.lambda_sq(s);
        for (j, o) in out.iter_mut().enumerate() {
            o.push((s, scaled * lam[j]));
        }
    }
    QPVectorField::new(
        out.into_iter()
            .enumerate()
            .map(|(j, c)| QPScalar::from_sorted(&ms, c, w.component(j).is_complex()))
            .collect(),
    )
}

/// `w − Δ^{-1}∇Div w`, the divergence-free part of `w`.
pub fn leray_project(w: &QPVectorField) -> Result<QPVectorField> {
    w.sub(&inv_laplace_grad_div(w)?)
}

/// How Galerkin products are evaluated.
///
/// `Direct` convolves the sparse supports. `Spectral` samples the factors on
/// a torus grid with `G ≥ 3K + 1` points per axis, multiplies pointwise and
/// transforms back; at that size no product of two box functions aliases
/// onto the box, so both backends give the same box coefficients up to
/// rounding.
#[derive(Clone, Debug)]
pub enum ProductBackend {
    Direct,
    Spectral(Arc<TorusTransform>),
}

impl ProductBackend {
    /// Spectral backend sized for `ms`.
    pub fn spectral(ms: &ModeSet) -> Result<Self> {
        let g = 3 * ms.radius() as usize + 1;
        Ok(Self::Spectral(Arc::new(TorusTransform::new(ms.torus_dim(), g)?)))
    }

    /// Direct for sparse work, spectral once full-box supports make
    /// convolution quadratic in the box size.
    pub fn auto(ms: &ModeSet) -> Result<Self> {
        if ms.len() > 400 {
            Self::spectral(ms)
        } else {
            Ok(Self::Direct)
        }
    }

    pub fn multiply(&self, f: &QPScalar, g: &QPScalar) -> Result<QPScalar> {
        match self {
            Self::Direct => f.multiply(g),
            Self::Spectral(t) => {
                if !f.same_modes(g) {
                    return Err(QpError::MismatchedModeSet);
                }
                let mut a = t.synthesize(f)?;
                let b = t.synthesize(g)?;
                for (x, y) in a.iter_mut().zip(&b) {
                    *x *= y;
                }
                t.analyze(a, f.modes(), f.is_complex() || g.is_complex())
            }
        }
    }
}

/// `D(w)` and `Q(w)` evaluated together, sharing the derivative fields.
pub fn nonlinear_terms(
    w: &QPVectorField,
    backend: &ProductBackend,
) -> Result<(QPVectorField, QPScalar)> {
    let n = w.dim();
    let jac = w.jacobian();
    match backend {
        ProductBackend::Direct => {
            let mut d = Vec::with_capacity(n);
            for (j, row) in jac.iter().enumerate() {
                let mut acc = QPScalar::zero(w.modes());
                for (k, dkwj) in row.iter().enumerate() {
                    acc = acc.add(&w.component(k).multiply(dkwj)?)?;
                }
                if w.component(j).is_complex() {
                    acc = acc.into_complex();
                }
                d.push(acc);
            }
            let mut q = QPScalar::zero(w.modes());
            for j in 0..n {
                for k in 0..n {
                    q = q.add(&jac[j][k].multiply(&jac[k][j])?)?;
                }
            }
            Ok((QPVectorField::new(d)?, q))
        }
        ProductBackend::Spectral(t) => {
            let ms = w.modes();
            let complex = w.components().iter().any(QPScalar::is_complex);
            let wg = w
                .components()
                .iter()
                .map(|c| t.synthesize(c))
                .collect::<Result<Vec<_>>>()?;
            let jg = jac
                .iter()
                .map(|row| row.iter().map(|c| t.synthesize(c)).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            let len = t.len();
            let mut d = Vec::with_capacity(n);
            for row in &jg {
                let mut acc = vec![Complex64::new(0.0, 0.0); len];
                for (k, dk) in row.iter().enumerate() {
                    for ((a, x), y) in acc.iter_mut().zip(&wg[k]).zip(dk) {
                        *a += x * y;
                    }
                }
                d.push(t.analyze(acc, ms, complex)?);
            }
            let mut acc = vec![Complex64::new(0.0, 0.0); len];
            for j in 0..n {
                for k in 0..n {
                    for ((a, x), y) in acc.iter_mut().zip(&jg[j][k]).zip(&jg[k][j]) {
                        *a += x * y;
                    }
                }
            }
            let q = t.analyze(acc, ms, complex)?;
            Ok((QPVectorField::new(d)?, q))
        }
    }
}

/// `D(w) = w·∇w`, component `j` being `Σ_k w_k ∂_k w_j`.
pub fn advect(w: &QPVectorField) -> Result<QPVectorField> {
    advect_with(w, &ProductBackend::Direct)
}

pub fn advect_with(w: &QPVectorField, backend: &ProductBackend) -> Result<QPVectorField> {
    Ok(nonlinear_terms(w, backend)?.0)
}

/// `Q(w) = tr([dw]²) = Σ_{j,k} ∂_j w_k ∂_k w_j`.
pub fn quadratic(w: &QPVectorField) -> Result<QPScalar> {
    quadratic_with(w, &ProductBackend::Direct)
}

pub fn quadratic_with(w: &QPVectorField, backend: &ProductBackend) -> Result<QPScalar> {
    Ok(nonlinear_terms(w, backend)?.1)
}

/// `𝒫(w) = Δ^{-1}Π_∞ ∇Q(w) + Δ^{-1}∇Div Π_• D(w)`.
pub fn pressure_gradient(w: &QPVectorField) -> Result<QPVectorField> {
    pressure_gradient_with(w, &ProductBackend::Direct)
}

pub fn pressure_gradient_with(
    w: &QPVectorField,
    backend: &ProductBackend,
) -> Result<QPVectorField> {
    let (d, q) = nonlinear_terms(w, backend)?;
    pressure_from_terms(&d, &q)
}

/// The two summands of `𝒫` from precomputed `D(w)` and `Q(w)`.
pub fn pressure_from_terms(d: &QPVectorField, q: &QPScalar) -> Result<QPVectorField> {
    let first = inv_laplace_infty_field(&project_infty_field(&q.gradient()))?;
    let second = inv_laplace_grad_div(&project_bullet_field(d))?;
    first.add(&second)
}

/// Mean-zero pressure `p̂_m = −Σ_{j,k} Λ_{m,j}Λ_{m,k}/|Λ_m|² (u_k u_j)^_m`,
/// so that `∇p = −𝒫(u)` on divergence-free `u`.
pub fn pressure_recover(u: &QPVectorField) -> Result<QPScalar> {
    pressure_recover_with(u, &ProductBackend::Direct)
}

pub fn pressure_recover_with(u: &QPVectorField, backend: &ProductBackend) -> Result<QPScalar> {
    let ms = Arc::clone(u.modes());
    let table = ms.multipliers();
    let n = u.dim();
    let zero = ms.zero_slot();
    let mut products = Vec::new();
    for j in 0..n {
        for k in j..n {
            let weight = if j == k { 1.0 } else { 2.0 };
            products.push((j, k, weight, backend.multiply(u.component(j), u.component(k))?));
        }
    }
    let mut slots: Vec<usize> = products
        .iter()
        .flat_map(|(_, _, _, p)| p.slot_coefficients().iter().map(|&(s, _)| s))
        .collect();
    slots.sort_unstable();
    slots.dedup();
    let mut coeffs = Vec::with_capacity(slots.len());
    for s in slots {
        if s == zero {
            continue;
        }
        if table.is_resonant(s) {
            return Err(resonance_error(&ms, s));
        }
        let lam = ms.lambda(s);
        let acc: Complex64 = products
            .iter()
            .map(|(j, k, wgt, p)| p.coefficient_at(s) * (wgt * lam[*j] * lam[*k]))
            .sum();
        coeffs.push((s, -acc / table.lambda_sq(s)));
    }
    let complex = u.components().iter().any(QPScalar::is_complex);
    Ok(QPScalar::from_sorted(&ms, coeffs, complex))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{canonical_omega, FrequencyMatrix, ModeIndex};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn canonical(k: u32) -> Arc<ModeSet> {
        ModeSet::new(canonical_omega(2, &[0.6, 0.8]).unwrap(), k).unwrap()
    }

    fn random_field(ms: &Arc<ModeSet>, radius: i32, count: usize, seed: u64) -> QPVectorField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries: Vec<_> = (0..count)
            .map(|_| {
                let m: Vec<i32> = (0..ms.torus_dim()).map(|_| rng.gen_range(-radius..=radius)).collect();
                let v: Vec<Complex64> = (0..ms.space_dim())
                    .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                    .collect();
                (ModeIndex(m), v)
            })
            .collect();
        QPVectorField::from_modes(ms, entries).unwrap()
    }

    fn shear(ms: &Arc<ModeSet>) -> QPVectorField {
        // Ω = I₂: the mode (0, 1) depends on x₂ only
        let g = QPScalar::cosine(ms, &ModeIndex::new(vec![0, 1]), 0.7)
            .unwrap()
            .add(&QPScalar::sine(ms, &ModeIndex::new(vec![0, 2]), 0.2).unwrap())
            .unwrap();
        QPVectorField::new(vec![g, QPScalar::zero(ms)]).unwrap()
    }

    #[test]
    fn projections_partition() {
        let ms = canonical(2);
        let f = random_field(&ms, 2, 12, 1).component(0).clone();
        let sum = project_bullet(&f).add(&project_infty(&f)).unwrap();
        assert_eq!(sum.slot_coefficients(), f.slot_coefficients());
        let c = QPScalar::constant(&ms, 2.0);
        assert!(project_infty(&c).is_zero());
    }

    #[test]
    fn inverse_laplacian_one_mode_and_round_trip() {
        let ms = canonical(2);
        let m = ModeIndex::new(vec![0, 0, 1]);
        let e = QPScalar::exponential(&ms, &m, Complex64::new(1.0, 0.0)).unwrap();
        let inv = inv_laplace_infty(&e).unwrap();
        let expected = -1.0 / (4.0 * std::f64::consts::PI.powi(2));
        assert!((inv.coefficient(&m).re - expected).abs() < 1e-16);

        let f = project_infty(random_field(&ms, 2, 20, 2).component(1));
        let back = inv_laplace_infty(&f).unwrap().laplacian();
        assert!(back.sub(&f).unwrap().max_coefficient() <= 1e-13 * f.max_coefficient());

        assert!(matches!(
            inv_laplace_infty(&QPScalar::constant(&ms, 1.0)),
            Err(QpError::BulletSupport { .. })
        ));
    }

    #[test]
    fn grad_div_symbol() {
        let ms = canonical(2);
        let f = QPScalar::cosine(&ms, &ModeIndex::new(vec![1, -1, 1]), 1.0).unwrap();
        let grad = f.gradient();
        let back = inv_laplace_grad_div(&grad).unwrap();
        assert!(back.sub(&grad).unwrap().max_coefficient() < 1e-15);

        let c = QPVectorField::constant(&ms, &[1.0, 3.0]).unwrap();
        assert!(inv_laplace_grad_div(&c).unwrap().max_coefficient() == 0.0);

        let w = random_field(&ms, 2, 10, 3);
        let once = inv_laplace_grad_div(&w).unwrap();
        let twice = inv_laplace_grad_div(&once).unwrap();
        assert!(twice.sub(&once).unwrap().max_coefficient() <= 1e-13);
    }

    #[test]
    fn grad_div_detects_resonance() {
        let ms = ModeSet::new(canonical_omega(1, &[1.0]).unwrap(), 1).unwrap();
        let w = QPVectorField::from_modes(
            &ms,
            [(ModeIndex::new(vec![1, -1]), vec![Complex64::new(1.0, 0.0)])],
        )
        .unwrap();
        assert!(matches!(inv_laplace_grad_div(&w), Err(QpError::Resonance { .. })));
    }

    #[test]
    fn leray_behaviour() {
        let ms = canonical(2);
        let f = QPScalar::sine(&ms, &ModeIndex::new(vec![0, 1, 1]), 1.0).unwrap();
        assert!(leray_project(&f.gradient()).unwrap().max_coefficient() < 1e-15);
        let w = random_field(&ms, 2, 10, 4);
        let p = leray_project(&w).unwrap();
        assert!(p.divergence().max_coefficient() < 1e-13);
        let pp = leray_project(&p).unwrap();
        assert!(pp.sub(&p).unwrap().max_coefficient() < 1e-13);
    }

    #[test]
    fn shear_is_inert() {
        let ms = ModeSet::new(FrequencyMatrix::identity(2).unwrap(), 4).unwrap();
        let u = shear(&ms);
        assert!(advect(&u).unwrap().max_coefficient() == 0.0);
        assert!(quadratic(&u).unwrap().is_zero());
        assert!(pressure_gradient(&u).unwrap().max_coefficient() == 0.0);
        assert!(pressure_recover(&u).unwrap().max_coefficient() < 1e-15);
    }

    #[test]
    fn q_relation_and_pressure_consistency() {
        let ms = canonical(3);
        let w = leray_project(&random_field(&ms, 1, 6, 5)).unwrap();
        let (d, q) = nonlinear_terms(&w, &ProductBackend::Direct).unwrap();
        let lhs = d.divergence();
        assert!(lhs.sub(&q).unwrap().max_coefficient() <= 1e-12 * q.max_coefficient().max(1.0));

        let p = pressure_from_terms(&d, &q).unwrap();
        assert!(p.mean().iter().all(|c| *c == Complex64::new(0.0, 0.0)));
        let rhs = p.sub(&d).unwrap();
        assert!(rhs.divergence().max_coefficient() <= 1e-12 * d.max_coefficient().max(1.0));

        let pr = pressure_recover(&w).unwrap();
        let residual = pr.gradient().add(&p).unwrap();
        assert!(residual.max_coefficient() <= 1e-11);
    }

    #[test]
    fn spectral_backend_matches_direct() {
        let ms = canonical(3);
        let w = random_field(&ms, 3, 15, 6);
        let spectral = ProductBackend::spectral(&ms).unwrap();
        let (d1, q1) = nonlinear_terms(&w, &ProductBackend::Direct).unwrap();
        let (d2, q2) = nonlinear_terms(&w, &spectral).unwrap();
        let scale = d1.max_coefficient();
        assert!(d1.sub(&d2).unwrap().max_coefficient() <= 1e-12 * scale);
        assert!(q1.sub(&q2).unwrap().max_coefficient() <= 1e-12 * q1.max_coefficient());
        let p1 = pressure_recover(&w).unwrap();
        let p2 = pressure_recover_with(&w, &spectral).unwrap();
        assert!(p1.sub(&p2).unwrap().max_coefficient() <= 1e-12 * p1.max_coefficient());
    }
}
