//! Quasi-periodic functions and vector fields as sparse Fourier series over
//! the mode box, with their algebra, calculus, norms and averages.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{QpError, Result};
use crate::lattice::{ModeIndex, ModeSet};

/// Coefficients below this modulus are dropped after every operation.
pub const PRUNE_TOL: f64 = 1e-15;

/// Largest Hermitian defect tolerated by [`QPScalar::check_reality`].
pub const REALITY_TOL: f64 = 1e-14;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const DENSE_ACCUMULATOR_LIMIT: usize = 1 << 21;

/// `f(x) = Σ_m f̂_m e^{i(Λ_m, x)}`, stored as a sorted list of `(slot, f̂_m)`.
///
/// Real functions keep `f̂_{−m} = conj(f̂_m)`; this is restored by
/// symmetrization whenever a real value is built. Fields flagged complex
/// carry no such constraint and are used for intermediates.
#[derive(Clone, Debug)]
pub struct QPScalar {
    modes: Arc<ModeSet>,
    coeffs: Vec<(usize, Complex64)>,
    complex: bool,
}

impl QPScalar {
    pub fn zero(modes: &Arc<ModeSet>) -> Self {
        Self {
            modes: Arc::clone(modes),
            coeffs: Vec::new(),
            complex: false,
        }
    }

    pub fn constant(modes: &Arc<ModeSet>, value: f64) -> Self {
        let raw = vec![(modes.zero_slot(), Complex64::new(value, 0.0))];
        Self::from_raw_coefficients(modes, raw, false)
    }

    /// Real function from `(m, f̂_m)` pairs; the input is symmetrized to
    /// `(f̂_m + conj f̂_{−m}) / 2`. Repeated modes are summed.
    pub fn from_modes<I>(modes: &Arc<ModeSet>, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (ModeIndex, Complex64)>,
    {
        let raw = Self::collect_slots(modes, entries)?;
        Ok(Self::from_raw_coefficients(modes, raw, false))
    }

    /// Complex-valued function from `(m, f̂_m)` pairs, no symmetrization.
    pub fn complex_from_modes<I>(modes: &Arc<ModeSet>, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (ModeIndex, Complex64)>,
    {
        let raw = Self::collect_slots(modes, entries)?;
        Ok(Self::from_raw_coefficients(modes, raw, true))
    }

    /// `c · e^{i(Λ_m, x)}` as a complex-valued function.
    pub fn exponential(modes: &Arc<ModeSet>, m: &ModeIndex, c: Complex64) -> Result<Self> {
        Self::complex_from_modes(modes, [(m.clone(), c)])
    }

    /// `amplitude · cos((Λ_m, x))`.
    pub fn cosine(modes: &Arc<ModeSet>, m: &ModeIndex, amplitude: f64) -> Result<Self> {
        let half = Complex64::new(amplitude / 2.0, 0.0);
        Self::from_modes(modes, [(m.clone(), half), (m.neg(), half)])
    }

    /// `amplitude · sin((Λ_m, x))`.
    pub fn sine(modes: &Arc<ModeSet>, m: &ModeIndex, amplitude: f64) -> Result<Self> {
        let c = Complex64::new(0.0, -amplitude / 2.0);
        Self::from_modes(modes, [(m.clone(), c), (m.neg(), c.conj())])
    }

    /// Final assembly of a coefficient list: sorts, merges duplicate slots,
    /// symmetrizes unless `complex`, and prunes.
    pub fn from_raw_coefficients(
        modes: &Arc<ModeSet>,
        mut raw: Vec<(usize, Complex64)>,
        complex: bool,
    ) -> Self {
        raw.sort_by_key(|&(s, _)| s);
        let mut merged: Vec<(usize, Complex64)> = Vec::with_capacity(raw.len());
        for (s, c) in raw {
            match merged.last_mut() {
                Some((ls, lc)) if *ls == s => *lc += c,
                _ => merged.push((s, c)),
            }
        }
        let coeffs = if complex {
            merged
        } else {
            symmetrize(modes, &merged)
        };
        let mut out = Self {
            modes: Arc::clone(modes),
            coeffs,
            complex,
        };
        out.prune();
        out
    }

    /// Assembly from an ascending, duplicate-free list that already has the
    /// required symmetry; only pruning is applied.
    pub(crate) fn from_sorted(
        modes: &Arc<ModeSet>,
        coeffs: Vec<(usize, Complex64)>,
        complex: bool,
    ) -> Self {
        debug_assert!(coeffs.windows(2).all(|w| w[0].0 < w[1].0));
        let mut out = Self {
            modes: Arc::clone(modes),
            coeffs,
            complex,
        };
        out.prune();
        out
    }

    fn collect_slots<I>(modes: &Arc<ModeSet>, entries: I) -> Result<Vec<(usize, Complex64)>>
    where
        I: IntoIterator<Item = (ModeIndex, Complex64)>,
    {
        entries
            .into_iter()
            .map(|(m, c)| {
                modes
                    .slot(&m)
                    .map(|s| (s, c))
                    .ok_or_else(|| QpError::ModeOutOfBox(m.0.clone()))
            })
            .collect()
    }

    fn with_coeffs(&self, coeffs: Vec<(usize, Complex64)>, complex: bool) -> Self {
        let mut out = Self {
            modes: Arc::clone(&self.modes),
            coeffs,
            complex,
        };
        out.prune();
        out
    }

    fn prune(&mut self) {
        self.coeffs.retain(|(_, c)| c.norm() >= PRUNE_TOL);
    }

    pub fn modes(&self) -> &Arc<ModeSet> {
        &self.modes
    }

    pub fn is_complex(&self) -> bool {
        self.complex
    }

    pub fn support_len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `(slot, f̂)` pairs in lexicographic mode order.
    pub fn slot_coefficients(&self) -> &[(usize, Complex64)] {
        &self.coeffs
    }

    pub fn iter(&self) -> impl Iterator<Item = (ModeIndex, Complex64)> + '_ {
        self.coeffs.iter().map(|&(s, c)| (self.modes.mode(s), c))
    }

    pub fn coefficient(&self, m: &ModeIndex) -> Complex64 {
        self.modes.slot(m).map_or(ZERO, |s| self.coefficient_at(s))
    }

    pub fn coefficient_at(&self, slot: usize) -> Complex64 {
        match self.coeffs.binary_search_by_key(&slot, |&(s, _)| s) {
            Ok(i) => self.coeffs[i].1,
            Err(_) => ZERO,
        }
    }

    /// Mean value `f̂_0`.
    pub fn mean(&self) -> Complex64 {
        self.coefficient_at(self.modes.zero_slot())
    }

    pub fn same_modes(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.modes, &other.modes)
    }

    fn ensure_same(&self, other: &Self) -> Result<()> {
        if self.same_modes(other) {
            Ok(())
        } else {
            Err(QpError::MismatchedModeSet)
        }
    }

    /// Largest Hermitian defect `|f̂_{−m} − conj f̂_m|` over the support.
    pub fn reality_defect(&self) -> f64 {
        self.coeffs
            .iter()
            .map(|&(s, c)| (self.coefficient_at(self.modes.neg_slot(s)) - c.conj()).norm())
            .fold(0.0, f64::max)
    }

    pub fn check_reality(&self) -> bool {
        self.reality_defect() <= REALITY_TOL
    }

    /// Drops the complex flag after re-symmetrizing.
    pub fn into_real(self) -> Self {
        let coeffs = symmetrize(&self.modes, &self.coeffs);
        self.with_coeffs(coeffs, false)
    }

    /// Same coefficients, flagged complex.
    pub fn into_complex(mut self) -> Self {
        self.complex = true;
        self
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.add_scaled(other, 1.0)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add_scaled(other, -1.0)
    }

    /// `self + a · other`.
    pub fn add_scaled(&self, other: &Self, a: f64) -> Result<Self> {
        self.ensure_same(other)?;
        let (x, y) = (&self.coeffs, &other.coeffs);
        let mut out = Vec::with_capacity(x.len() + y.len());
        let (mut i, mut j) = (0, 0);
        while i < x.len() || j < y.len() {
            if j == y.len() || (i < x.len() && x[i].0 < y[j].0) {
                out.push(x[i]);
                i += 1;
            } else if i == x.len() || y[j].0 < x[i].0 {
                out.push((y[j].0, y[j].1 * a));
                j += 1;
            } else {
                out.push((x[i].0, x[i].1 + y[j].1 * a));
                i += 1;
                j += 1;
            }
        }
        Ok(self.with_coeffs(out, self.complex || other.complex))
    }

    /// Linear combination `Σ a_k f_k` over fields sharing one mode set.
    pub fn linear_combination(terms: &[(f64, &Self)]) -> Result<Self> {
        let (_, first) = terms
            .first()
            .ok_or_else(|| QpError::InvalidArgument("empty linear combination".into()))?;
        let mut acc = first.scale(0.0);
        for (a, f) in terms {
            acc = acc.add_scaled(f, *a)?;
        }
        Ok(acc)
    }

    pub fn scale(&self, a: f64) -> Self {
        let coeffs = self.coeffs.iter().map(|&(s, c)| (s, c * a)).collect();
        self.with_coeffs(coeffs, self.complex)
    }

    /// Multiplication by a complex constant; the result is flagged complex.
    pub fn scale_complex(&self, a: Complex64) -> Self {
        let coeffs = self.coeffs.iter().map(|&(s, c)| (s, c * a)).collect();
        self.with_coeffs(coeffs, true)
    }

    pub fn neg(&self) -> Self {
        self.scale(-1.0)
    }

    /// Coefficient-wise multiplier `f̂_m ↦ μ(m) f̂_m`. For a real input the
    /// multiplier must satisfy `μ(−m) = conj μ(m)`.
    pub fn apply_multiplier<F>(&self, mut mu: F) -> Self
    where
        F: FnMut(usize) -> Complex64,
    {
        let coeffs = self.coeffs.iter().map(|&(s, c)| (s, mu(s) * c)).collect();
        self.with_coeffs(coeffs, self.complex)
    }

    /// Keeps only the coefficients whose slot passes `keep`.
    pub fn restrict<F>(&self, mut keep: F) -> Self
    where
        F: FnMut(usize) -> bool,
    {
        let coeffs = self.coeffs.iter().copied().filter(|&(s, _)| keep(s)).collect();
        self.with_coeffs(coeffs, self.complex)
    }

    /// Galerkin product: exact convolution over the supports, restricted to
    /// the box. Pairs summing outside the box are dropped.
    pub fn multiply(&self, other: &Self) -> Result<Self> {
        self.ensure_same(other)?;
        let ms = &self.modes;
        let complex = self.complex || other.complex;
        if self.coeffs.is_empty() || other.coeffs.is_empty() {
            return Ok(Self {
                modes: Arc::clone(ms),
                coeffs: Vec::new(),
                complex,
            });
        }
        let raw = if ms.len() <= DENSE_ACCUMULATOR_LIMIT {
            let mut acc = vec![ZERO; ms.len()];
            let mut touched = vec![false; ms.len()];
            for &(sa, ca) in &self.coeffs {
                for &(sb, cb) in &other.coeffs {
                    if let Some(s) = ms.add_slots(sa, sb) {
                        acc[s] += ca * cb;
                        touched[s] = true;
                    }
                }
            }
            acc.into_iter()
                .zip(touched)
                .enumerate()
                .filter_map(|(s, (c, t))| t.then_some((s, c)))
                .collect()
        } else {
            let mut acc = std::collections::BTreeMap::new();
            for &(sa, ca) in &self.coeffs {
                for &(sb, cb) in &other.coeffs {
                    if let Some(s) = ms.add_slots(sa, sb) {
                        *acc.entry(s).or_insert(ZERO) += ca * cb;
                    }
                }
            }
            acc.into_iter().collect()
        };
        Ok(Self::from_raw_coefficients(ms, raw, complex))
    }

    /// `∂^β f` with `(∂^β f)^_m = (iΛ_m)^β f̂_m`.
    pub fn partial_derivative(&self, beta: &[u32]) -> Self {
        let ms = Arc::clone(&self.modes);
        debug_assert_eq!(beta.len(), ms.space_dim());
        self.apply_multiplier(|s| derivative_symbol(ms.lambda(s), beta))
    }

    /// `∂_{x_j} f`.
    pub fn derivative(&self, j: usize) -> Self {
        let ms = Arc::clone(&self.modes);
        self.apply_multiplier(|s| Complex64::new(0.0, ms.lambda(s)[j]))
    }

    /// `Δ f` with symbol `−|Λ_m|²`.
    pub fn laplacian(&self) -> Self {
        let ms = Arc::clone(&self.modes);
        self.apply_multiplier(|s| Complex64::new(-ms.lambda_sq(s), 0.0))
    }

    pub fn gradient(&self) -> QPVectorField {
        let n = self.modes.space_dim();
        QPVectorField {
            components: (0..n).map(|j| self.derivative(j)).collect(),
        }
    }

    /// Direct summation at `x ∈ R^n`, complex result.
    pub fn evaluate_complex(&self, x: &[f64]) -> Complex64 {
        let ms = &self.modes;
        let mut acc = ZERO;
        for &(s, c) in &self.coeffs {
            let phase: f64 = ms.lambda(s).iter().zip(x).map(|(l, xi)| l * xi).sum();
            acc += c * Complex64::from_polar(1.0, phase);
        }
        acc
    }

    /// Direct summation at `x ∈ R^n`; the imaginary residue of a real field
    /// is discarded.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let v = self.evaluate_complex(x);
        debug_assert!(
            self.complex || v.im.abs() <= 1e-12 * self.wiener_norm().max(1.0),
            "imaginary residue {} on a real field",
            v.im
        );
        v.re
    }

    /// `(f, g)_0 = Σ f̂_m conj(ĝ_m)`.
    pub fn besicovitch_inner_complex(&self, other: &Self) -> Result<Complex64> {
        self.ensure_same(other)?;
        let (x, y) = (&self.coeffs, &other.coeffs);
        let (mut i, mut j) = (0, 0);
        let mut acc = ZERO;
        while i < x.len() && j < y.len() {
            match x[i].0.cmp(&y[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += x[i].1 * y[j].1.conj();
                    i += 1;
                    j += 1;
                }
            }
        }
        Ok(acc)
    }

    /// Real part of the Besicovitch pairing; exact for real fields.
    pub fn besicovitch_inner(&self, other: &Self) -> Result<f64> {
        Ok(self.besicovitch_inner_complex(other)?.re)
    }

    /// Bilinear pairing `⟨g, h⟩_0 = Σ ĝ_m ĥ_{−m}`, the mean of `g h`.
    pub fn bilinear_pairing(&self, other: &Self) -> Result<Complex64> {
        self.ensure_same(other)?;
        let ms = &self.modes;
        Ok(self
            .coeffs
            .iter()
            .map(|&(s, c)| c * other.coefficient_at(ms.neg_slot(s)))
            .sum())
    }

    /// `‖f‖_0 = (Σ |f̂_m|²)^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|(_, c)| c.norm_sqr()).fold(0.0, |a, b| a + b).sqrt()
    }

    /// `Σ |f̂_m|`, an upper bound for `sup |f|`.
    pub fn wiener_norm(&self) -> f64 {
        self.coeffs.iter().map(|(_, c)| c.norm()).fold(0.0, |a, b| a + b)
    }

    pub fn max_coefficient(&self) -> f64 {
        self.coeffs.iter().map(|(_, c)| c.norm()).fold(0.0, f64::max)
    }

    /// `max_m |f̂_m − ĝ_m|` over the union of supports, without pruning.
    /// Fields on different mode sets compare as infinitely far apart.
    pub fn max_coefficient_difference(&self, other: &Self) -> f64 {
        if !self.same_modes(other) {
            return f64::INFINITY;
        }
        let (x, y) = (&self.coeffs, &other.coeffs);
        let (mut i, mut j) = (0, 0);
        let mut d = 0.0_f64;
        while i < x.len() || j < y.len() {
            if j == y.len() || (i < x.len() && x[i].0 < y[j].0) {
                d = d.max(x[i].1.norm());
                i += 1;
            } else if i == x.len() || y[j].0 < x[i].0 {
                d = d.max(y[j].1.norm());
                j += 1;
            } else {
                d = d.max((x[i].1 - y[j].1).norm());
                i += 1;
                j += 1;
            }
        }
        d
    }

    /// `‖f‖_{l,s} = (Σ |f̂_m|² ⟨Λ_m⟩^{2l} ⟨m⟩^{2s})^{1/2}`.
    pub fn norm(&self, p: &NormParams) -> f64 {
        let ms = &self.modes;
        self.coeffs
            .iter()
            .map(|&(s, c)| c.norm_sqr() * p.weight_sq(ms.lambda_sq(s), ms.index_norm_sq(s)))
            .fold(0.0, |a, b| a + b)
            .sqrt()
    }

    /// `|f|_{l,s} = (Σ_{|β| ≤ l} ‖∂^β f‖_s²)^{1/2}`, the derivative-sum form
    /// equivalent to [`QPScalar::norm`].
    pub fn derivative_sum_norm(&self, p: &NormParams) -> f64 {
        let n = self.modes.space_dim();
        let base = NormParams { l: 0, s: p.s };
        multi_indices(n, p.l)
            .iter()
            .map(|beta| self.partial_derivative(beta).norm(&base).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|(_, c)| c.re.is_finite() && c.im.is_finite())
    }

    /// Complex conjugate function `conj f`, i.e. `ĝ_m = conj f̂_{−m}`.
    pub fn conj(&self) -> Self {
        let ms = &self.modes;
        let coeffs = self
            .coeffs
            .iter()
            .rev()
            .map(|&(s, c)| (ms.neg_slot(s), c.conj()))
            .collect();
        self.with_coeffs(coeffs, self.complex)
    }
}

/// `(iΛ)^β`.
pub fn derivative_symbol(lambda: &[f64], beta: &[u32]) -> Complex64 {
    let mut acc = Complex64::new(1.0, 0.0);
    for (&l, &b) in lambda.iter().zip(beta) {
        let f = Complex64::new(0.0, l);
        for _ in 0..b {
            acc *= f;
        }
    }
    acc
}

/// All multi-indices `β ∈ Z_{≥0}^n` with `|β| ≤ order`.
pub fn multi_indices(n: usize, order: u32) -> Vec<Vec<u32>> {
    fn rec(n: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for b in 0..=left {
            cur.push(b);
            rec(n, left - b, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, order, &mut Vec::with_capacity(n), &mut out);
    out
}

/// Restores `f̂_{−m} = conj f̂_m` by averaging each mode with its mirror.
fn symmetrize(ms: &ModeSet, coeffs: &[(usize, Complex64)]) -> Vec<(usize, Complex64)> {
    // The mirrored list, in ascending slot order, is the reversed input.
    let mirrored: Vec<(usize, Complex64)> = coeffs
        .iter()
        .rev()
        .map(|&(s, c)| (ms.neg_slot(s), c.conj()))
        .collect();
    let mut out = Vec::with_capacity(coeffs.len() + mirrored.len());
    let (mut i, mut j) = (0, 0);
    while i < coeffs.len() || j < mirrored.len() {
        if j == mirrored.len() || (i < coeffs.len() && coeffs[i].0 < mirrored[j].0) {
            out.push((coeffs[i].0, coeffs[i].1 * 0.5));
            i += 1;
        } else if i == coeffs.len() || mirrored[j].0 < coeffs[i].0 {
            out.push((mirrored[j].0, mirrored[j].1 * 0.5));
            j += 1;
        } else {
            out.push((coeffs[i].0, (coeffs[i].1 + mirrored[j].1) * 0.5));
            i += 1;
            j += 1;
        }
    }
    out
}

/// Weights `(l, s)` of the norm `‖·‖_{l,s}`; `s > M/2` is enforced.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormParams {
    pub l: u32,
    pub s: f64,
}

impl NormParams {
    pub fn new(l: u32, s: f64, torus_dim: usize) -> Result<Self> {
        if !(s > torus_dim as f64 / 2.0) {
            return Err(QpError::InvalidNormParams(format!(
                "s = {s} must exceed M/2 = {}",
                torus_dim as f64 / 2.0
            )));
        }
        Ok(Self { l, s })
    }

    /// `⟨Λ⟩^{2l} ⟨m⟩^{2s}` given `|Λ|²` and `|m|²`.
    pub fn weight_sq(&self, lambda_sq: f64, index_sq: f64) -> f64 {
        (1.0 + lambda_sq).powi(self.l as i32) * (1.0 + index_sq).powf(self.s)
    }
}

/// A vector field `u : R^n → R^n` whose components share one mode set.
#[derive(Clone, Debug)]
pub struct QPVectorField {
    components: Vec<QPScalar>,
}

impl QPVectorField {
    pub fn new(components: Vec<QPScalar>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| QpError::InvalidDimensions("vector field needs components".into()))?;
        if components.iter().any(|c| !c.same_modes(first)) {
            return Err(QpError::MismatchedModeSet);
        }
        Ok(Self { components })
    }

    /// Zero field with `n` components.
    pub fn zero(modes: &Arc<ModeSet>) -> Self {
        Self {
            components: (0..modes.space_dim()).map(|_| QPScalar::zero(modes)).collect(),
        }
    }

    /// The constant field `c`.
    pub fn constant(modes: &Arc<ModeSet>, c: &[f64]) -> Result<Self> {
        if c.len() != modes.space_dim() {
            return Err(QpError::InvalidDimensions(format!(
                "constant has {} components, expected {}",
                c.len(),
                modes.space_dim()
            )));
        }
        Ok(Self {
            components: c.iter().map(|&v| QPScalar::constant(modes, v)).collect(),
        })
    }

    /// Real field from `(m, û_m)` entries, symmetrized per component.
    pub fn from_modes<I>(modes: &Arc<ModeSet>, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (ModeIndex, Vec<Complex64>)>,
    {
        let n = modes.space_dim();
        let mut per: Vec<Vec<(ModeIndex, Complex64)>> = vec![Vec::new(); n];
        for (m, v) in entries {
            if v.len() != n {
                return Err(QpError::InvalidDimensions(format!(
                    "coefficient at {m} has {} components, expected {n}",
                    v.len()
                )));
            }
            for (j, c) in v.into_iter().enumerate() {
                per[j].push((m.clone(), c));
            }
        }
        let components = per
            .into_iter()
            .map(|e| QPScalar::from_modes(modes, e))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { components })
    }

    pub fn modes(&self) -> &Arc<ModeSet> {
        self.components[0].modes()
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[QPScalar] {
        &self.components
    }

    pub fn component(&self, j: usize) -> &QPScalar {
        &self.components[j]
    }

    pub fn into_components(self) -> Vec<QPScalar> {
        self.components
    }

    pub fn same_modes(&self, other: &Self) -> bool {
        self.components[0].same_modes(&other.components[0])
    }

    pub fn map<F>(&self, f: F) -> Self
    where
        F: FnMut(&QPScalar) -> QPScalar,
    {
        Self {
            components: self.components.iter().map(f).collect(),
        }
    }

    pub fn try_map<F>(&self, f: F) -> Result<Self>
    where
        F: FnMut(&QPScalar) -> Result<QPScalar>,
    {
        Ok(Self {
            components: self.components.iter().map(f).collect::<Result<_>>()?,
        })
    }

    fn zip_with<F>(&self, other: &Self, mut f: F) -> Result<Self>
    where
        F: FnMut(&QPScalar, &QPScalar) -> Result<QPScalar>,
    {
        if self.dim() != other.dim() {
            return Err(QpError::InvalidDimensions(format!(
                "vector fields of dimension {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(Self {
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| f(a, b))
                .collect::<Result<_>>()?,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, QPScalar::add)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, QPScalar::sub)
    }

    pub fn add_scaled(&self, other: &Self, a: f64) -> Result<Self> {
        self.zip_with(other, |x, y| x.add_scaled(y, a))
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|c| c.scale(a))
    }

    /// Sum of `Σ_k ∂_k u_k`.
    pub fn divergence(&self) -> QPScalar {
        let mut acc = QPScalar::zero(self.modes());
        for (k, c) in self.components.iter().enumerate() {
            acc = acc
                .add(&c.derivative(k))
                .expect("components share one mode set");
        }
        if self.components.iter().any(QPScalar::is_complex) {
            acc.into_complex()
        } else {
            acc
        }
    }

    /// Jacobian `[du]` with entry `(j, k) = ∂_k u_j`.
    pub fn jacobian(&self) -> Vec<Vec<QPScalar>> {
        let n = self.modes().space_dim();
        self.components
            .iter()
            .map(|c| (0..n).map(|k| c.derivative(k)).collect())
            .collect()
    }

    pub fn evaluate(&self, x: &[f64]) -> Vec<f64> {
        self.components.iter().map(|c| c.evaluate(x)).collect()
    }

    pub fn evaluate_complex(&self, x: &[f64]) -> Vec<Complex64> {
        self.components.iter().map(|c| c.evaluate_complex(x)).collect()
    }

    pub fn coefficient(&self, m: &ModeIndex) -> Vec<Complex64> {
        self.components.iter().map(|c| c.coefficient(m)).collect()
    }

    pub fn mean(&self) -> Vec<Complex64> {
        self.components.iter().map(QPScalar::mean).collect()
    }

    /// `(u, v)_0 = Σ_m (û_m, conj v̂_m)`.
    pub fn besicovitch_inner(&self, other: &Self) -> Result<f64> {
        if !self.same_modes(other) {
            return Err(QpError::MismatchedModeSet);
        }
        self.components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.besicovitch_inner(b))
            .sum()
    }

    /// Averaged energy `E(u) = ½ (u, u)_0`.
    pub fn energy(&self) -> f64 {
        0.5 * self
            .components
            .iter()
            .map(|c| c.l2_norm().powi(2))
            .sum::<f64>()
    }

    pub fn l2_norm(&self) -> f64 {
        (2.0 * self.energy()).sqrt()
    }

    pub fn norm(&self, p: &NormParams) -> f64 {
        self.components
            .iter()
            .map(|c| c.norm(p).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Largest `Σ_m |û_{j,m}|` over the components.
    pub fn wiener_norm(&self) -> f64 {
        self.components.iter().map(QPScalar::wiener_norm).fold(0.0, f64::max)
    }

    pub fn max_coefficient(&self) -> f64 {
        self.components.iter().map(QPScalar::max_coefficient).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().all(QPScalar::is_finite)
    }

    pub fn support_slots(&self) -> Vec<usize> {
        let mut slots: Vec<usize> = self
            .components
            .iter()
            .flat_map(|c| c.slot_coefficients().iter().map(|&(s, _)| s))
            .collect();
        slots.sort_unstable();
        slots.dedup();
        slots
    }

    /// Largest coefficient difference `max_m |û_m − v̂_m|` over components,
    /// without pruning.
    pub fn max_coefficient_difference(&self, other: &Self) -> Result<f64> {
        if !self.same_modes(other) {
            return Err(QpError::MismatchedModeSet);
        }
        Ok(self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.max_coefficient_difference(b))
            .fold(0.0, f64::max))
    }
}

/// `averaged_energy(u) = ½ Σ_m |û_m|²`.
pub fn averaged_energy(u: &QPVectorField) -> f64 {
    u.energy()
}

/// Box average of the Fourier coefficient at `m`.
#[derive(Clone, Debug)]
pub struct BoxAverage {
    pub value: Complex64,
    /// Quadrature points per shortest period of the integrand.
    pub points_per_period: f64,
    /// False when fewer than 8 points resolve the fastest oscillation.
    pub resolved: bool,
}

/// `(2T)^{-n} ∫_{[−T,T]^n} f(x) e^{−i(Λ_m,x)} dx` by tensor-product
/// composite Gauss–Legendre quadrature with `quad_points` nodes per axis.
///
/// The rule is applied term by term: for a trigonometric polynomial the
/// tensor rule factorizes over axes, so each exponential costs `n · quad_points`
/// evaluations instead of `quad_points^n`. The numbers are those of the full
/// tensor rule.
pub fn box_average_coefficient(
    f: &QPScalar,
    m: &ModeIndex,
    half_width: f64,
    quad_points: usize,
) -> Result<BoxAverage> {
    if !(half_width > 0.0) {
        return Err(QpError::InvalidArgument("box half-width must be positive".into()));
    }
    let ms = f.modes();
    let target = ms
        .lambda_of(m)
        .ok_or_else(|| QpError::ModeOutOfBox(m.0.clone()))?
        .to_vec();
    const PANEL: usize = 8;
    let panels = quad_points.div_ceil(PANEL).max(1);
    let (gl_nodes, gl_weights) = gauss_legendre(PANEL);
    let h = 2.0 * half_width / panels as f64;
    let mut nodes = Vec::with_capacity(panels * PANEL);
    let mut weights = Vec::with_capacity(panels * PANEL);
    for p in 0..panels {
        let a = -half_width + p as f64 * h;
        for (x, w) in gl_nodes.iter().zip(&gl_weights) {
            nodes.push(a + 0.5 * h * (x + 1.0));
            // normalized by the box length 2T
            weights.push(0.5 * h * w / (2.0 * half_width));
        }
    }

    let mut value = ZERO;
    let mut fastest = 0.0_f64;
    for (mode, c) in f.iter() {
        let lam = ms.lambda_of(&mode).expect("support lies in the box");
        let mut term = c;
        for (lj, tj) in lam.iter().zip(&target) {
            let xi = lj - tj;
            fastest = fastest.max(xi.abs());
            if xi == 0.0 {
                continue;
            }
            let s: Complex64 = nodes
                .iter()
                .zip(&weights)
                .map(|(x, w)| Complex64::from_polar(*w, xi * x))
                .sum();
            term *= s;
        }
        value += term;
    }
    let points_per_period = if fastest > 0.0 {
        let periods = 2.0 * half_width * fastest / (2.0 * PI);
        (panels * PANEL) as f64 / periods
    } else {
        f64::INFINITY
    };
    Ok(BoxAverage {
        value,
        points_per_period,
        resolved: points_per_period >= 8.0,
    })
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[−1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{canonical_omega, FrequencyMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn id2(k: u32) -> Arc<ModeSet> {
        ModeSet::new(FrequencyMatrix::identity(2).unwrap(), k).unwrap()
    }

    fn random_scalar(ms: &Arc<ModeSet>, count: usize, radius: i32, rng: &mut ChaCha8Rng) -> QPScalar {
        let m = ms.torus_dim();
        let entries: Vec<(ModeIndex, Complex64)> = (0..count)
            .map(|_| {
                let idx: Vec<i32> = (0..m).map(|_| rng.gen_range(-radius..=radius)).collect();
                let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                (ModeIndex(idx), c)
            })
            .collect();
        QPScalar::from_modes(ms, entries).unwrap()
    }

    #[test]
    fn cosine_at_origin_and_constant() {
        let ms = id2(2);
        let f = QPScalar::cosine(&ms, &ModeIndex::new(vec![1, 0]), 1.0).unwrap();
        assert!((f.evaluate(&[0.0, 0.0]) - 1.0).abs() < 1e-15);
        let c = QPScalar::constant(&ms, 3.5);
        assert_eq!(c.evaluate(&[0.3, 12.0]), 3.5);
    }

    #[test]
    fn evaluate_matches_reordered_summation() {
        let ms = ModeSet::new(canonical_omega(2, &[0.6, 0.8]).unwrap(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_scalar(&ms, 5, 3, &mut rng);
        let x = [0.3, -1.7];
        let mut acc = ZERO;
        for (m, c) in f.iter().collect::<Vec<_>>().into_iter().rev() {
            let lam = ms.lambda_of(&m).unwrap();
            let ph = lam[0] * x[0] + lam[1] * x[1];
            acc += c * Complex64::new(ph.cos(), ph.sin());
        }
        assert!((f.evaluate(&x) - acc.re).abs() < 1e-13);
    }

    #[test]
    fn symmetrization_enforces_reality() {
        let ms = id2(2);
        let f = QPScalar::from_modes(&ms, [(ModeIndex::new(vec![1, 1]), Complex64::new(1.0, 2.0))])
            .unwrap();
        assert_eq!(f.coefficient(&ModeIndex::new(vec![1, 1])), Complex64::new(0.5, 1.0));
        assert_eq!(f.coefficient(&ModeIndex::new(vec![-1, -1])), Complex64::new(0.5, -1.0));
        assert!(f.check_reality());
    }

    #[test]
    fn out_of_box_mode_rejected() {
        let ms = id2(1);
        let err = QPScalar::from_modes(&ms, [(ModeIndex::new(vec![2, 0]), Complex64::new(1.0, 0.0))]);
        assert!(matches!(err, Err(QpError::ModeOutOfBox(_))));
    }

    #[test]
    fn exponentials_multiply_by_adding_indices() {
        let ms = id2(3);
        let a = ModeIndex::new(vec![1, -2]);
        let b = ModeIndex::new(vec![1, 1]);
        let ea = QPScalar::exponential(&ms, &a, Complex64::new(1.0, 0.0)).unwrap();
        let eb = QPScalar::exponential(&ms, &b, Complex64::new(1.0, 0.0)).unwrap();
        let p = ea.multiply(&eb).unwrap();
        assert_eq!(p.support_len(), 1);
        assert_eq!(p.coefficient(&ModeIndex::new(vec![2, -1])), Complex64::new(1.0, 0.0));
        // pairs leaving the box vanish
        let far = QPScalar::exponential(&ms, &ModeIndex::new(vec![3, 0]), Complex64::new(1.0, 0.0))
            .unwrap();
        assert!(far.multiply(&ea).unwrap().is_zero());
    }

    #[test]
    fn unit_is_multiplicative_identity() {
        let ms = id2(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_scalar(&ms, 6, 3, &mut rng);
        let one = QPScalar::constant(&ms, 1.0);
        let g = f.multiply(&one).unwrap();
        assert_eq!(g.slot_coefficients(), f.slot_coefficients());
    }

    #[test]
    fn product_matches_pointwise_product() {
        let ms = ModeSet::new(canonical_omega(2, &[0.6, 0.8]).unwrap(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = random_scalar(&ms, 2, 2, &mut rng);
        let g = random_scalar(&ms, 2, 2, &mut rng);
        let fg = f.multiply(&g).unwrap();
        for _ in 0..20 {
            let x = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let direct = f.evaluate(&x) * g.evaluate(&x);
            assert!((fg.evaluate(&x) - direct).abs() < 1e-11);
        }
    }

    #[test]
    fn multiply_mismatched_modes_fails() {
        let a = QPScalar::constant(&id2(1), 1.0);
        let b = QPScalar::constant(&id2(1), 1.0);
        assert_eq!(a.multiply(&b).unwrap_err(), QpError::MismatchedModeSet);
    }

    #[test]
    fn derivative_symbols() {
        let ms = id2(2);
        let m = ModeIndex::new(vec![1, 2]);
        let e = QPScalar::exponential(&ms, &m, Complex64::new(1.0, 0.0)).unwrap();
        let d = e.partial_derivative(&[1, 0]);
        let lam = ms.lambda_of(&m).unwrap();
        assert_eq!(d.coefficient(&m), Complex64::new(0.0, lam[0]));
        let same = e.partial_derivative(&[0, 0]);
        assert_eq!(same.slot_coefficients(), e.slot_coefficients());

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = random_scalar(&ms, 8, 2, &mut rng);
        let mixed = f.partial_derivative(&[1, 1]);
        let nested = f.derivative(1).derivative(0);
        for ((s1, c1), (s2, c2)) in mixed.slot_coefficients().iter().zip(nested.slot_coefficients()) {
            assert_eq!(s1, s2);
            assert!((c1 - c2).norm() <= 1e-14 * c1.norm().max(1.0));
        }
    }

    #[test]
    fn derivatives_have_zero_mean_and_stay_real() {
        let ms = ModeSet::new(canonical_omega(2, &[0.6, 0.8]).unwrap(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_scalar(&ms, 10, 2, &mut rng).add(&QPScalar::constant(&ms, 2.0)).unwrap();
        for beta in multi_indices(2, 3).into_iter().filter(|b| b.iter().sum::<u32>() > 0) {
            let d = f.partial_derivative(&beta);
            assert_eq!(d.mean(), ZERO);
            assert!(d.check_reality());
        }
    }

    #[test]
    fn div_grad_is_laplacian() {
        let ms = ModeSet::new(canonical_omega(2, &[0.6, 0.8]).unwrap(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_scalar(&ms, 10, 2, &mut rng);
        let lhs = f.gradient().divergence();
        let rhs = f.laplacian();
        let diff = lhs.sub(&rhs).unwrap();
        assert!(diff.max_coefficient() <= 1e-13 * rhs.max_coefficient());

        let c = QPVectorField::constant(&ms, &[1.0, -2.0]).unwrap();
        assert!(c.divergence().is_zero());
    }

    #[test]
    fn norms() {
        let ms = ModeSet::new(canonical_omega(2, &[0.6, 0.8]).unwrap(), 3).unwrap();
        let p = NormParams::new(2, 2.0, 3).unwrap();
        assert!((QPScalar::constant(&ms, 1.0).norm(&p) - 1.0).abs() < 1e-15);

        let m = ModeIndex::new(vec![1, -2, 1]);
        let c = Complex64::new(0.3, 0.4);
        let single = QPScalar::complex_from_modes(&ms, [(m.clone(), c)]).unwrap();
        let p0 = NormParams::new(0, 1.7, 3).unwrap();
        let expected = 0.5 * (1.0 + 6.0_f64).powf(1.7 / 2.0);
        assert!((single.norm(&p0) - expected).abs() < 1e-14);

        assert!(NormParams::new(0, 1.5, 3).is_err());
        assert!(NormParams::new(0, 1.5000001, 3).is_ok());
    }

    #[test]
    fn triangle_inequality_fuzzed() {
        let ms = ModeSet::new(canonical_omega(2, &[0.6, 0.8]).unwrap(), 3).unwrap();
        let p = NormParams::new(1, 2.0, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let f = random_scalar(&ms, 4, 3, &mut rng);
            let g = random_scalar(&ms, 4, 3, &mut rng);
            let sum = f.add(&g).unwrap();
            assert!(sum.norm(&p) <= f.norm(&p) + g.norm(&p) + 1e-12);
        }
    }

    #[test]
    fn energy_examples() {
        let ms = id2(2);
        let u = QPVectorField::constant(&ms, &[1.0, 0.0]).unwrap();
        assert!((averaged_energy(&u) - 0.5).abs() < 1e-15);

        let cos = QPScalar::cosine(&ms, &ModeIndex::new(vec![1, 0]), 1.0).unwrap();
        let u = QPVectorField::new(vec![cos, QPScalar::zero(&ms)]).unwrap();
        assert!((u.energy() - 0.25).abs() < 1e-15);
        assert_eq!(QPVectorField::zero(&ms).energy(), 0.0);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
        let int14: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((int14 - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn box_average_of_constant() {
        let ms = id2(2);
        let f = QPScalar::constant(&ms, 2.5);
        let avg = box_average_coefficient(&f, &ModeIndex::zero(2), 7.3, 64).unwrap();
        assert!((avg.value - Complex64::new(2.5, 0.0)).norm() < 1e-12);
        assert!(avg.resolved);
    }

    #[test]
    fn box_average_flags_underresolution() {
        let ms = id2(3);
        let f = QPScalar::cosine(&ms, &ModeIndex::new(vec![3, 0]), 1.0).unwrap();
        let avg = box_average_coefficient(&f, &ModeIndex::zero(2), 50.0, 64).unwrap();
        assert!(!avg.resolved);
    }
}
