//! Frequency maps `Ω : R^n → R^M`, the truncated mode box in `Z^M` and the
//! Fourier exponents `Λ_m = 2π Ωᵀ m` carried by every mode.
//!
//! Modes are addressed internally by a *slot*: the lexicographic rank of `m`
//! inside the symmetric box `|m|_∞ ≤ K`. With the first component most
//! significant, slot order coincides with lexicographic order of the integer
//! vectors, and `slot(−m) = len − 1 − slot(m)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{QpError, Result};
use crate::operators::MultiplierTable;

/// Default cap on `(2K+1)^M`.
pub const DEFAULT_MODE_BUDGET: u128 = 10_000_000;

/// Modes with `|Λ_m|` at or below this value belong to the bullet block `I_•`.
pub const BULLET_RADIUS: f64 = 1.0;

/// The linear map `Ω : R^n → R^M` stored as a row-major `M × n` matrix.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrequencyMatrix {
    torus_dim: usize,
    space_dim: usize,
    entries: Vec<f64>,
}

impl FrequencyMatrix {
    /// Builds `Ω` from `M × n` row-major entries. Rank must be exactly `n`.
    pub fn new(torus_dim: usize, space_dim: usize, entries: Vec<f64>) -> Result<Self> {
        if space_dim == 0 || torus_dim < space_dim {
            return Err(QpError::InvalidDimensions(format!(
                "need M >= n >= 1, got M = {torus_dim}, n = {space_dim}"
            )));
        }
        if entries.len() != torus_dim * space_dim {
            return Err(QpError::InvalidDimensions(format!(
                "expected {} entries for a {torus_dim}x{space_dim} matrix, got {}",
                torus_dim * space_dim,
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(QpError::InvalidArgument(
                "frequency matrix has non-finite entries".into(),
            ));
        }
        let mat = DMatrix::from_row_slice(torus_dim, space_dim, &entries);
        let sv = mat.singular_values();
        let largest = sv.iter().cloned().fold(0.0_f64, f64::max);
        let smallest = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(largest > 0.0) || smallest <= 1e-12 * largest {
            return Err(QpError::RankDeficient { smallest, largest });
        }
        Ok(Self {
            torus_dim,
            space_dim,
            entries,
        })
    }

    /// Builds `Ω` from its rows (each row has `n` entries, one row per torus axis).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let torus_dim = rows.len();
        let space_dim = rows.first().map_or(0, Vec::len);
        if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != space_dim) {
            return Err(QpError::InvalidDimensions(format!(
                "row {i} has {} entries, expected {space_dim}",
                row.len()
            )));
        }
        Self::new(torus_dim, space_dim, rows.concat())
    }

    /// `Ω = I_n`, the periodic case.
    pub fn identity(n: usize) -> Result<Self> {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        Self::new(n, n, entries)
    }

    /// Torus dimension `M`.
    pub fn torus_dim(&self) -> usize {
        self.torus_dim
    }

    /// Spatial dimension `n`.
    pub fn space_dim(&self) -> usize {
        self.space_dim
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.space_dim + col]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries
            .chunks(self.space_dim)
            .map(<[f64]>::to_vec)
            .collect()
    }

    /// `Ω x ∈ R^M` for `x ∈ R^n`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.space_dim);
        self.entries
            .chunks(self.space_dim)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `Ωᵀ y ∈ R^n` for `y ∈ R^M`.
    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.torus_dim);
        let mut out = vec![0.0; self.space_dim];
        for (row, &yi) in self.entries.chunks(self.space_dim).zip(y) {
            for (o, &a) in out.iter_mut().zip(row) {
                *o += a * yi;
            }
        }
        out
    }

    /// Whether `γ` lies in `Γ_Ω = {γ : Ωγ ∈ Z^M}` up to `tol`.
    pub fn is_lattice_translation(&self, gamma: &[f64], tol: f64) -> bool {
        self.apply(gamma)
            .iter()
            .all(|v| (v - v.round()).abs() <= tol)
    }
}

/// The stacked `(n+1) × n` matrix `[I_n ; ωᵀ]` with `|ω| = 1`.
///
/// For `ω` with `ω₁, …, ω_n, 1` independent over `Z` this map is
/// non-resonant and its lattice of periods is trivial. Independence is the
/// caller's claim; it cannot be decided on floats.
pub fn canonical_omega(n: usize, omega_vec: &[f64]) -> Result<FrequencyMatrix> {
    if n == 0 || omega_vec.len() != n {
        return Err(QpError::InvalidDimensions(format!(
            "canonical omega for n = {n} needs {n} entries, got {}",
            omega_vec.len()
        )));
    }
    let norm = omega_vec.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(QpError::NonUnitOmega(norm));
    }
    let mut entries = vec![0.0; (n + 1) * n];
    for i in 0..n {
        entries[i * n + i] = 1.0;
    }
    entries[n * n..].copy_from_slice(omega_vec);
    FrequencyMatrix::new(n + 1, n, entries)
}

/// As [`canonical_omega`], after rescaling `raw` to unit length.
pub fn canonical_omega_normalized(n: usize, raw: &[f64]) -> Result<FrequencyMatrix> {
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(QpError::NonUnitOmega(norm));
    }
    let unit: Vec<f64> = raw.iter().map(|v| v / norm).collect();
    canonical_omega(n, &unit)
}

/// An integer vector `m ∈ Z^M`. Ordering is lexicographic.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ModeIndex(pub Vec<i32>);

impl ModeIndex {
    pub fn new(components: impl Into<Vec<i32>>) -> Self {
        Self(components.into())
    }

    pub fn zero(torus_dim: usize) -> Self {
        Self(vec![0; torus_dim])
    }

    /// The lattice basis vector `e_axis`.
    pub fn unit(torus_dim: usize, axis: usize) -> Self {
        let mut v = vec![0; torus_dim];
        v[axis] = 1;
        Self(v)
    }

    pub fn components(&self) -> &[i32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn neg(&self) -> Self {
        Self(self.0.iter().map(|v| -v).collect())
    }

    pub fn max_norm(&self) -> u32 {
        self.0.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0)
    }

    pub fn scaled(&self, k: i32) -> Self {
        Self(self.0.iter().map(|v| v * k).collect())
    }
}

impl fmt::Display for ModeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

impl From<Vec<i32>> for ModeIndex {
    fn from(v: Vec<i32>) -> Self {
        Self(v)
    }
}

impl From<&[i32]> for ModeIndex {
    fn from(v: &[i32]) -> Self {
        Self(v.to_vec())
    }
}

/// The full symmetric box `{m : |m|_∞ ≤ K}` with cached exponents.
#[derive(Debug)]
pub struct ModeSet {
    omega: FrequencyMatrix,
    radius: u32,
    side: usize,
    len: usize,
    strides: Vec<usize>,
    digits: Vec<i32>,
    lambdas: Vec<f64>,
    lambda_sq: Vec<f64>,
    bullet: Vec<bool>,
    multipliers: OnceLock<MultiplierTable>,
}

impl ModeSet {
    /// [`build_mode_set`] with the default budget.
    pub fn new(omega: FrequencyMatrix, radius: u32) -> Result<Arc<Self>> {
        Self::with_budget(omega, radius, DEFAULT_MODE_BUDGET)
    }

    pub fn with_budget(omega: FrequencyMatrix, radius: u32, budget: u128) -> Result<Arc<Self>> {
        if radius == 0 {
            return Err(QpError::InvalidArgument(
                "truncation radius K must be positive".into(),
            ));
        }
        let torus_dim = omega.torus_dim();
        let space_dim = omega.space_dim();
        let side = 2 * radius as usize + 1;
        let requested = (side as u128).checked_pow(torus_dim as u32).unwrap_or(u128::MAX);
        if requested > budget {
            return Err(QpError::BudgetExceeded { requested, budget });
        }
        let len = requested as usize;
        let mut strides = vec![1usize; torus_dim];
        for d in (0..torus_dim.saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * side;
        }

        let k = radius as i32;
        let mut digits = Vec::with_capacity(len * torus_dim);
        let mut lambdas = Vec::with_capacity(len * space_dim);
        let mut lambda_sq = Vec::with_capacity(len);
        let mut bullet = Vec::with_capacity(len);
        let mut m = vec![-k; torus_dim];
        let mut mf = vec![0.0; torus_dim];
        for _ in 0..len {
            digits.extend_from_slice(&m);
            for (dst, &src) in mf.iter_mut().zip(&m) {
                *dst = src as f64;
            }
            let lam: Vec<f64> = omega.apply_transpose(&mf).iter().map(|v| 2.0 * PI * v).collect();
            let sq: f64 = lam.iter().map(|v| v * v).sum();
            lambdas.extend_from_slice(&lam);
            lambda_sq.push(sq);
            bullet.push(sq.sqrt() <= BULLET_RADIUS);
            // odometer increment, last component fastest
            for d in (0..torus_dim).rev() {
                if m[d] < k {
                    m[d] += 1;
                    break;
                }
                m[d] = -k;
            }
        }

        Ok(Arc::new(Self {
            omega,
            radius,
            side,
            len,
            strides,
            digits,
            lambdas,
            lambda_sq,
            bullet,
            multipliers: OnceLock::new(),
        }))
    }

    pub fn omega(&self) -> &FrequencyMatrix {
        &self.omega
    }

    /// Truncation radius `K`.
    pub fn radius(&self) -> u32 {
        self.radius
    }

    /// Box side `2K + 1`.
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn torus_dim(&self) -> usize {
        self.omega.torus_dim()
    }

    pub fn space_dim(&self) -> usize {
        self.omega.space_dim()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn zero_slot(&self) -> usize {
        (self.len - 1) / 2
    }

    /// Slot of `m`, or `None` when `m` is outside the box.
    pub fn slot(&self, m: &ModeIndex) -> Option<usize> {
        self.slot_of_components(m.components())
    }

    pub fn slot_of_components(&self, m: &[i32]) -> Option<usize> {
        if m.len() != self.torus_dim() {
            return None;
        }
        let k = self.radius as i32;
        let mut s = 0;
        for (&c, &stride) in m.iter().zip(&self.strides) {
            if c < -k || c > k {
                return None;
            }
            s += (c + k) as usize * stride;
        }
        Some(s)
    }

    pub fn mode(&self, slot: usize) -> ModeIndex {
        ModeIndex(self.digits(slot).to_vec())
    }

    /// Components of the mode stored at `slot`.
    pub fn digits(&self, slot: usize) -> &[i32] {
        let m = self.torus_dim();
        &self.digits[slot * m..(slot + 1) * m]
    }

    pub fn neg_slot(&self, slot: usize) -> usize {
        self.len - 1 - slot
    }

    /// Slot of `m_a + m_b` when the sum stays in the box.
    #[inline]
    pub fn add_slots(&self, a: usize, b: usize) -> Option<usize> {
        let k = self.radius as i32;
        let da = self.digits(a);
        let db = self.digits(b);
        let mut s = 0;
        for d in 0..da.len() {
            let c = da[d] + db[d];
            if c < -k || c > k {
                return None;
            }
            s += (c + k) as usize * self.strides[d];
        }
        Some(s)
    }

    /// Slot of `m_a − m_b` when the difference stays in the box.
    #[inline]
    pub fn sub_slots(&self, a: usize, b: usize) -> Option<usize> {
        self.add_slots(a, self.neg_slot(b))
    }

    /// `Λ_m` for the mode at `slot`.
    pub fn lambda(&self, slot: usize) -> &[f64] {
        let n = self.space_dim();
        &self.lambdas[slot * n..(slot + 1) * n]
    }

    pub fn lambda_of(&self, m: &ModeIndex) -> Option<&[f64]> {
        self.slot(m).map(|s| self.lambda(s))
    }

    /// `|Λ_m|²`.
    pub fn lambda_sq(&self, slot: usize) -> f64 {
        self.lambda_sq[slot]
    }

    /// `m ∈ I_•`, i.e. `|Λ_m| ≤ 1`.
    pub fn is_bullet(&self, slot: usize) -> bool {
        self.bullet[slot]
    }

    pub fn bullet_count(&self) -> usize {
        self.bullet.iter().filter(|b| **b).count()
    }

    /// Largest `|Λ_m|` over the box.
    pub fn max_lambda(&self) -> f64 {
        self.lambda_sq.iter().cloned().fold(0.0, f64::max).sqrt()
    }

    /// `|m|²` over the integer vector.
    pub fn index_norm_sq(&self, slot: usize) -> f64 {
        self.digits(slot).iter().map(|&c| (c as f64) * (c as f64)).sum()
    }

    pub fn modes(&self) -> impl Iterator<Item = ModeIndex> + '_ {
        (0..self.len).map(|s| self.mode(s))
    }

    pub(crate) fn multipliers(&self) -> &MultiplierTable {
        self.multipliers.get_or_init(|| MultiplierTable::build(self))
    }

    pub fn summary(&self) -> ModeSetSummary {
        ModeSetSummary {
            torus_dim: self.torus_dim(),
            space_dim: self.space_dim(),
            radius: self.radius,
            modes: self.len,
            bullet_modes: self.bullet_count(),
            max_lambda: self.max_lambda(),
            omega_rows: self.omega.rows(),
        }
    }
}

/// Build the full symmetric mode box `|m|_∞ ≤ K`.
pub fn build_mode_set(omega: FrequencyMatrix, radius: u32) -> Result<Arc<ModeSet>> {
    ModeSet::new(omega, radius)
}

#[derive(Clone, Debug, Serialize)]
pub struct ModeSetSummary {
    pub torus_dim: usize,
    pub space_dim: usize,
    pub radius: u32,
    pub modes: usize,
    pub bullet_modes: usize,
    pub max_lambda: f64,
    pub omega_rows: Vec<Vec<f64>>,
}

/// Outcome of the truncated non-resonance check.
#[derive(Clone, Debug, Serialize)]
pub struct NonresonanceReport {
    pub ok: bool,
    pub tol: f64,
    /// Closest pair of distinct modes and their exponent separation.
    pub worst_pair: Option<(ModeIndex, ModeIndex, f64)>,
}

/// Checks that `m ↦ Λ_m` separates all modes of the box by at least `tol`.
///
/// Only a necessary condition for non-resonance: a resonance with indices
/// outside the box goes unseen. The closest pair is always reported; among
/// pairs with equal separation the one with the lexicographically largest
/// `(larger, smaller)` members wins, so the report is deterministic.
pub fn check_nonresonance(ms: &ModeSet, tol: f64) -> NonresonanceReport {
    let n = ms.space_dim();
    let mut order: Vec<usize> = (0..ms.len()).collect();
    order.sort_by(|&a, &b| {
        ms.lambda(a)[0]
            .partial_cmp(&ms.lambda(b)[0])
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut best = f64::INFINITY;
    let mut best_key: Option<(usize, usize)> = None;
    for (i, &a) in order.iter().enumerate() {
        let la = ms.lambda(a);
        for &b in &order[i + 1..] {
            let lb = ms.lambda(b);
            if lb[0] - la[0] > best {
                break;
            }
            let mut dist_sq = 0.0;
            for j in 0..n {
                let d = lb[j] - la[j];
                dist_sq += d * d;
            }
            let dist = dist_sq.sqrt();
            let key = (a.max(b), a.min(b));
            let better = dist < best || (dist == best && best_key.is_some_and(|k| key > k));
            if better {
                best = dist;
                best_key = Some(key);
            }
        }
    }

    NonresonanceReport {
        ok: best >= tol,
        tol,
        worst_pair: best_key.map(|(hi, lo)| (ms.mode(hi), ms.mode(lo), best)),
    }
}
