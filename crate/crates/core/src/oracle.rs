//! Independent reference computations: a periodic vorticity-form
//! pseudo-spectral Euler solver on the unit square, a brute-force
//! convolution, and central-difference derivative checks.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{QpError, Result};
use crate::field::QPScalar;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Vorticity on the `N × N` grid of `[0, 1)²`, held as its spectrum
/// `ω̂_k = N^{-2} Σ_x ω(x) e^{−2πi (k, x)}` in FFT order, plus the constant
/// mean velocity which the vorticity does not see.
#[derive(Clone, Debug)]
pub struct PeriodicField2D {
    n: usize,
    spectrum: Vec<Complex64>,
    mean_velocity: [f64; 2],
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Plans {
    fn new(n: usize) -> Self {
        let mut p = FftPlanner::new();
        Self {
            forward: p.plan_fft_forward(n),
            inverse: p.plan_fft_inverse(n),
        }
    }

    fn transform_2d(&self, n: usize, data: &mut [Complex64], inverse: bool) {
        let fft = if inverse { &self.inverse } else { &self.forward };
        fft.process(data);
        let mut col = vec![ZERO; n];
        for c in 0..n {
            for r in 0..n {
                col[r] = data[r * n + c];
            }
            fft.process(&mut col);
            for r in 0..n {
                data[r * n + c] = col[r];
            }
        }
    }

    fn to_grid(&self, n: usize, spec: &[Complex64]) -> Vec<Complex64> {
        let mut d = spec.to_vec();
        self.transform_2d(n, &mut d, true);
        d
    }

    fn to_spectrum(&self, n: usize, grid: &[Complex64]) -> Vec<Complex64> {
        let mut d = grid.to_vec();
        self.transform_2d(n, &mut d, false);
        let s = 1.0 / (n * n) as f64;
        d.iter_mut().for_each(|c| *c *= s);
        d
    }
}

fn wavenumber(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

impl PeriodicField2D {
    /// Vorticity from velocity coefficients `û_k` at integer wavenumbers `k`;
    /// entries are symmetrized to a real field. The `k = 0` entry sets the
    /// mean velocity.
    pub fn from_velocity_modes(n: usize, modes: &[([i64; 2], [Complex64; 2])]) -> Result<Self> {
        if !n.is_power_of_two() || n < 4 {
            return Err(QpError::InvalidArgument(format!(
                "oracle grid size must be a power of two ≥ 4, got {n}"
            )));
        }
        let mut spectrum = vec![ZERO; n * n];
        let mut mean_velocity = [0.0, 0.0];
        let half = n as i64 / 2;
        for &(k, u) in modes {
            if k == [0, 0] {
                mean_velocity = [u[0].re, u[1].re];
                continue;
            }
            if k.iter().any(|&c| c.abs() >= half) {
                return Err(QpError::InvalidArgument(format!(
                    "wavenumber {k:?} does not fit the {n}×{n} oracle grid"
                )));
            }
            let kappa = [2.0 * PI * k[0] as f64, 2.0 * PI * k[1] as f64];
            let w = Complex64::new(0.0, kappa[0]) * u[1] - Complex64::new(0.0, kappa[1]) * u[0];
            for (kk, ww) in [(k, w * 0.5), ([-k[0], -k[1]], w.conj() * 0.5)] {
                let idx = Self::index_of(n, kk);
                spectrum[idx] += ww;
            }
        }
        Ok(Self {
            n,
            spectrum,
            mean_velocity,
        })
    }

    fn index_of(n: usize, k: [i64; 2]) -> usize {
        let r = k[0].rem_euclid(n as i64) as usize;
        let c = k[1].rem_euclid(n as i64) as usize;
        r * n + c
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn mean_velocity(&self) -> [f64; 2] {
        self.mean_velocity
    }

    pub fn vorticity_coefficient(&self, k: [i64; 2]) -> Complex64 {
        self.spectrum[Self::index_of(self.n, k)]
    }

    /// `û_k` from `ψ̂ = ω̂/|κ|²`, `u = (∂₂ψ, −∂₁ψ)`.
    pub fn velocity_coefficient(&self, k: [i64; 2]) -> [Complex64; 2] {
        if k == [0, 0] {
            return [
                Complex64::new(self.mean_velocity[0], 0.0),
                Complex64::new(self.mean_velocity[1], 0.0),
            ];
        }
        let half = self.n as i64 / 2;
        if k.iter().any(|&c| c < -half || c >= half) {
            return [ZERO, ZERO];
        }
        let kappa = [2.0 * PI * k[0] as f64, 2.0 * PI * k[1] as f64];
        let psi = self.vorticity_coefficient(k) / (kappa[0] * kappa[0] + kappa[1] * kappa[1]);
        [
            Complex64::new(0.0, kappa[1]) * psi,
            Complex64::new(0.0, -kappa[0]) * psi,
        ]
    }

    fn velocity_spectra(&self) -> [Vec<Complex64>; 2] {
        let n = self.n;
        let mut u1 = vec![ZERO; n * n];
        let mut u2 = vec![ZERO; n * n];
        for r in 0..n {
            for c in 0..n {
                let k = [wavenumber(r, n), wavenumber(c, n)];
                let v = self.velocity_coefficient(k);
                u1[r * n + c] = v[0];
                u2[r * n + c] = v[1];
            }
        }
        [u1, u2]
    }

    /// `½ Σ |û_k|²`, mean flow included.
    pub fn energy(&self) -> f64 {
        let [u1, u2] = self.velocity_spectra();
        0.5 * u1.iter().chain(&u2).map(|c| c.norm_sqr()).sum::<f64>()
    }

    /// `½ Σ |ω̂_k|²`.
    pub fn enstrophy(&self) -> f64 {
        0.5 * self.spectrum.iter().map(|c| c.norm_sqr()).sum::<f64>()
    }

    fn dealias_mask(n: usize) -> Vec<bool> {
        let cut = n as f64 / 3.0;
        (0..n * n)
            .map(|i| {
                let (r, c) = (i / n, i % n);
                (wavenumber(r, n) as f64).abs() < cut && (wavenumber(c, n) as f64).abs() < cut
            })
            .collect()
    }
}

fn vorticity_rhs(
    field: &PeriodicField2D,
    plans: &Plans,
    mask: &[bool],
) -> Vec<Complex64> {
    let n = field.n;
    let [u1s, u2s] = field.velocity_spectra();
    let mut wx = vec![ZERO; n * n];
    let mut wy = vec![ZERO; n * n];
    for r in 0..n {
        for c in 0..n {
            let i = r * n + c;
            let w = field.spectrum[i];
            wx[i] = Complex64::new(0.0, 2.0 * PI * wavenumber(r, n) as f64) * w;
            wy[i] = Complex64::new(0.0, 2.0 * PI * wavenumber(c, n) as f64) * w;
        }
    }
    let u1 = plans.to_grid(n, &u1s);
    let u2 = plans.to_grid(n, &u2s);
    let gx = plans.to_grid(n, &wx);
    let gy = plans.to_grid(n, &wy);
    let adv: Vec<Complex64> = (0..n * n)
        .map(|i| Complex64::new(-(u1[i].re * gx[i].re + u2[i].re * gy[i].re), 0.0))
        .collect();
    let mut out = plans.to_spectrum(n, &adv);
    for (o, &keep) in out.iter_mut().zip(mask) {
        if !keep {
            *o = ZERO;
        }
    }
    out
}

/// Classical RK4 on `ω_t + u·∇ω = 0` with 2/3-rule dealiasing.
pub fn periodic_euler_2d(w0: &PeriodicField2D, dt: f64, t_end: f64) -> Result<PeriodicField2D> {
    let n = w0.n;
    let plans = Plans::new(n);
    let mask = PeriodicField2D::dealias_mask(n);
    let mut state = w0.clone();
    for (s, &keep) in state.spectrum.iter_mut().zip(&mask) {
        if !keep {
            *s = ZERO;
        }
    }
    let steps = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
    let with = |base: &PeriodicField2D, k: &[Complex64], h: f64| -> PeriodicField2D {
        let mut s = base.clone();
        for (a, b) in s.spectrum.iter_mut().zip(k) {
            *a += b * h;
        }
        s
    };
    for step in 0..steps {
        let k1 = vorticity_rhs(&state, &plans, &mask);
        let k2 = vorticity_rhs(&with(&state, &k1, dt / 2.0), &plans, &mask);
        let k3 = vorticity_rhs(&with(&state, &k2, dt / 2.0), &plans, &mask);
        let k4 = vorticity_rhs(&with(&state, &k3, dt), &plans, &mask);
        for i in 0..n * n {
            state.spectrum[i] += (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (dt / 6.0);
        }
        if state.spectrum.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(QpError::NonFinite {
                t: (step + 1) as f64 * dt,
            });
        }
    }
    Ok(state)
}

/// Convolution by enumeration of output modes: for every box mode `m` and
/// every supported `a` in ascending order, adds `f̂_a ĝ_{m−a}`.
pub fn brute_force_convolution(f: &QPScalar, g: &QPScalar) -> Result<QPScalar> {
    if !f.same_modes(g) {
        return Err(QpError::MismatchedModeSet);
    }
    let ms = f.modes();
    let mut raw = Vec::new();
    for m in 0..ms.len() {
        let mut acc = ZERO;
        let mut hit = false;
        for &(a, ca) in f.slot_coefficients() {
            let Some(b) = ms.sub_slots(m, a) else {
                continue;
            };
            let cb = g.coefficient_at(b);
            if g.slot_coefficients().binary_search_by_key(&b, |&(s, _)| s).is_ok() {
                acc += ca * cb;
                hit = true;
            }
        }
        if hit {
            raw.push((m, acc));
        }
    }
    Ok(QPScalar::from_raw_coefficients(
        ms,
        raw,
        f.is_complex() || g.is_complex(),
    ))
}

/// `|(f(x+h e_j) − f(x−h e_j))/(2h) − ∂_j f(x)|`, relative to
/// `Σ_m |Λ_{m,j} f̂_m|` (absolute when that bound vanishes).
pub fn finite_difference_check(f: &QPScalar, j: usize, x: &[f64], h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[j] += h;
    xm[j] -= h;
    let approx = (f.evaluate(&xp) - f.evaluate(&xm)) / (2.0 * h);
    let d = f.derivative(j);
    let err = (approx - d.evaluate(x)).abs();
    let scale = d.wiener_norm();
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{FrequencyMatrix, ModeIndex, ModeSet};

    fn taylor_green(n: usize) -> PeriodicField2D {
        // u = (sin 2πx cos 2πy, −cos 2πx sin 2πy)
        let q = Complex64::new(0.0, -0.5);
        PeriodicField2D::from_velocity_modes(
            n,
            &[
                ([1, 1], [q, -q]),
                ([1, -1], [q, q]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn taylor_green_recovers_velocity() {
        let f = taylor_green(16);
        let u = f.velocity_coefficient([1, 1]);
        assert!((u[0] - Complex64::new(0.0, -0.25)).norm() < 1e-15);
        assert!((u[1] - Complex64::new(0.0, 0.25)).norm() < 1e-15);
        assert!((f.energy() - 0.25).abs() < 1e-14);
    }

    #[test]
    fn taylor_green_is_steady() {
        let f0 = taylor_green(16);
        let f1 = periodic_euler_2d(&f0, 1e-2, 0.5).unwrap();
        let d = f0
            .spectrum
            .iter()
            .zip(&f1.spectrum)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(d <= 1e-12, "{d}");
    }

    #[test]
    fn zero_stays_zero() {
        let f0 = PeriodicField2D::from_velocity_modes(8, &[]).unwrap();
        let f1 = periodic_euler_2d(&f0, 0.1, 1.0).unwrap();
        assert!(f1.spectrum.iter().all(|c| *c == ZERO));
    }

    #[test]
    fn brute_force_is_bitwise_equal() {
        let ms = ModeSet::new(FrequencyMatrix::identity(2).unwrap(), 3).unwrap();
        let f = QPScalar::from_modes(
            &ms,
            [
                (ModeIndex::new(vec![1, 2]), Complex64::new(0.3, -0.1)),
                (ModeIndex::new(vec![-2, 0]), Complex64::new(0.7, 0.2)),
                (ModeIndex::new(vec![0, 1]), Complex64::new(-0.4, 0.9)),
            ],
        )
        .unwrap();
        let g = f.derivative(0).add(&QPScalar::constant(&ms, 1.5)).unwrap();
        let a = f.multiply(&g).unwrap();
        let b = brute_force_convolution(&f, &g).unwrap();
        assert_eq!(a.slot_coefficients(), b.slot_coefficients());
    }

    #[test]
    fn central_differences() {
        let ms = ModeSet::new(FrequencyMatrix::identity(2).unwrap(), 2).unwrap();
        let f = QPScalar::cosine(&ms, &ModeIndex::new(vec![1, 0]), 1.0).unwrap();
        assert!(finite_difference_check(&f, 0, &[0.1, 0.3], 1e-4) <= 1e-7);
        let c = QPScalar::constant(&ms, 2.0);
        assert_eq!(finite_difference_check(&c, 1, &[0.1, 0.3], 1e-4), 0.0);
    }
}
