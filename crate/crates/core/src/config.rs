//! Run configuration read from TOML.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::diffeo::{DEFAULT_ALIASING_THRESHOLD, DEFAULT_NEWTON_MAX_ITER, DEFAULT_NEWTON_TOL};
use crate::field::{NormParams, QPScalar, QPVectorField};
use crate::lattice::{canonical_omega, canonical_omega_normalized, FrequencyMatrix, ModeIndex, ModeSet};
use crate::solver::{BackendKind, DEFAULT_DIV_TOL};

/// A configuration problem, naming the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.field.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmegaSpec {
    /// Row-major `M × n` matrix.
    pub matrix: Option<Vec<Vec<f64>>>,
    /// `"canonical"`: the `(n+1) × n` matrix `[I_n ; ωᵀ]`.
    pub preset: Option<String>,
    pub n: Option<usize>,
    pub omega: Option<Vec<f64>>,
    /// Rescale `omega` to unit length instead of rejecting it.
    #[serde(default)]
    pub normalize: bool,
}

impl OmegaSpec {
    pub fn build(&self) -> Result<FrequencyMatrix, ConfigError> {
        match (&self.matrix, &self.preset) {
            (Some(_), Some(_)) => Err(err("omega", "give either matrix or preset, not both")),
            (None, None) => Err(err("omega", "missing matrix or preset")),
            (Some(rows), None) => {
                let n = rows.first().map_or(0, Vec::len);
                if n == 0 {
                    return Err(err("omega.matrix", "needs at least one nonempty row"));
                }
                if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
                    return Err(err(
                        "omega.matrix",
                        format!("row {} has {} entries, expected {n}", i + 1, r.len()),
                    ));
                }
                if rows.len() < n {
                    return Err(err(
                        "omega.matrix",
                        format!("{} rows for {n} columns; need at least {n} rows", rows.len()),
                    ));
                }
                FrequencyMatrix::from_rows(rows).map_err(|e| err("omega.matrix", e.to_string()))
            }
            (None, Some(p)) if p == "canonical" => {
                let v = self
                    .omega
                    .as_ref()
                    .ok_or_else(|| err("omega.omega", "required by the canonical preset"))?;
                let n = self.n.unwrap_or(v.len());
                if n != v.len() {
                    return Err(err(
                        "omega.omega",
                        format!("has {} entries but omega.n = {n}", v.len()),
                    ));
                }
                let built = if self.normalize {
                    canonical_omega_normalized(n, v)
                } else {
                    canonical_omega(n, v)
                };
                built.map_err(|e| err("omega.omega", e.to_string()))
            }
            (None, Some(p)) => Err(err("omega.preset", format!("unknown preset {p:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormSpec {
    pub l: Option<u32>,
    pub s: Option<f64>,
}

/// One coefficient `(m, û_m)`; `im` defaults to zeros.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeEntry {
    pub m: Vec<i32>,
    pub re: Vec<f64>,
    pub im: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    /// `shear`, `taylor_green`, `random_divfree` or `quasipattern`.
    pub preset: Option<String>,
    pub modes: Option<Vec<ModeEntry>>,
    #[serde(default)]
    pub seed: u64,
    pub sub_radius: Option<u32>,
    pub amplitude: Option<f64>,
    #[serde(default = "yes")]
    pub leray: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    #[default]
    Eulerian,
    Lagrangian,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default)]
    pub mode: Formulation,
    pub dt: f64,
    pub t_end: f64,
    /// Torus grid size per dimension for the diffeomorphism machinery.
    pub grid: Option<usize>,
    #[serde(default = "yes")]
    pub strict: bool,
    #[serde(default)]
    pub backend: BackendKind,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<String>,
    pub record_every: Option<usize>,
    /// Snapshot cadence in steps; the initial and final states are always
    /// written.
    pub snapshot_every: Option<usize>,
    #[serde(default)]
    pub trajectories: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSpec {
    pub div_tol: Option<f64>,
    pub newton_tol: Option<f64>,
    pub newton_max_iter: Option<usize>,
    pub aliasing: Option<f64>,
    pub nonresonance: Option<f64>,
    pub round_trip: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffeoSpec {
    /// Displacement coefficients.
    pub modes: Option<Vec<ModeEntry>>,
    /// Random displacement on a sub-box instead of `modes`.
    pub seed: Option<u64>,
    pub sub_radius: Option<u32>,
    /// Target `max_m |Λ_m| · Σ_m |f̂_m|` of the random displacement.
    pub amplitude: Option<f64>,
    pub grid: Option<usize>,
    /// Write the sampled torus lift to this file.
    pub lift_dump: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub omega: OmegaSpec,
    /// Truncation radius `K`.
    pub k: u32,
    #[serde(default)]
    pub norm: NormSpec,
    pub initial: Option<InitialSpec>,
    pub solver: Option<SolverSpec>,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub tolerances: ToleranceSpec,
    pub diffeo: Option<DiffeoSpec>,
    #[serde(default)]
    pub allow_resonant: bool,
}

/// Tolerances after defaults are applied.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Tolerances {
    pub div_tol: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub aliasing: f64,
    pub nonresonance: f64,
    pub round_trip: f64,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| err("", e.to_string()))
    }

    pub fn mode_set(&self) -> Result<Arc<ModeSet>, ConfigError> {
        if self.k == 0 {
            return Err(err("k", "truncation radius must be positive"));
        }
        ModeSet::new(self.omega.build()?, self.k).map_err(|e| err("k", e.to_string()))
    }

    pub fn norm_params(&self, ms: &ModeSet) -> Result<NormParams, ConfigError> {
        let m = ms.torus_dim();
        let s = self.norm.s.unwrap_or((m / 2) as f64 + 1.0);
        NormParams::new(self.norm.l.unwrap_or(1), s, m).map_err(|e| err("norm.s", e.to_string()))
    }

    pub fn tolerances(&self) -> Tolerances {
        let t = &self.tolerances;
        Tolerances {
            div_tol: t.div_tol.unwrap_or(DEFAULT_DIV_TOL),
            newton_tol: t.newton_tol.unwrap_or(DEFAULT_NEWTON_TOL),
            newton_max_iter: t.newton_max_iter.unwrap_or(DEFAULT_NEWTON_MAX_ITER),
            aliasing: t.aliasing.unwrap_or(DEFAULT_ALIASING_THRESHOLD),
            nonresonance: t.nonresonance.unwrap_or(1e-9),
            round_trip: t.round_trip.unwrap_or(1e-8),
        }
    }
}

/// Builds a real field from `(m, û_m)` entries: each entry is completed by
/// its Hermitian partner `conj û_m` at `−m` unless `−m` is listed too, then
/// the whole set is symmetrized.
pub fn field_from_entries(
    ms: &Arc<ModeSet>,
    entries: &[ModeEntry],
    field: &str,
) -> Result<QPVectorField, ConfigError> {
    let n = ms.space_dim();
    let mut listed = std::collections::BTreeSet::new();
    let mut parsed = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        let here = format!("{field}[{i}]");
        if e.m.len() != ms.torus_dim() {
            return Err(err(
                &format!("{here}.m"),
                format!("has {} entries, expected M = {}", e.m.len(), ms.torus_dim()),
            ));
        }
        let m = ModeIndex(e.m.clone());
        if ms.slot(&m).is_none() {
            return Err(err(&format!("{here}.m"), format!("mode {m} lies outside |m| <= {}", ms.radius())));
        }
        if e.re.len() != n {
            return Err(err(&format!("{here}.re"), format!("has {} entries, expected n = {n}", e.re.len())));
        }
        let im = e.im.clone().unwrap_or_else(|| vec![0.0; n]);
        if im.len() != n {
            return Err(err(&format!("{here}.im"), format!("has {} entries, expected n = {n}", im.len())));
        }
        let v: Vec<Complex64> = e.re.iter().zip(&im).map(|(&r, &i)| Complex64::new(r, i)).collect();
        listed.insert(m.clone());
        parsed.push((m, v));
    }
    let mut all = parsed.clone();
    for (m, v) in &parsed {
        let neg = m.neg();
        if !listed.contains(&neg) {
            all.push((neg, v.iter().map(|c| c.conj()).collect()));
        }
    }
    QPVectorField::from_modes(ms, all).map_err(|e| err(field, e.to_string()))
}

/// Scalar companion of [`field_from_entries`] used for single components.
pub fn scalar_from_entries(
    ms: &Arc<ModeSet>,
    entries: &[(ModeIndex, Complex64)],
) -> crate::Result<QPScalar> {
    let listed: std::collections::BTreeSet<_> = entries.iter().map(|(m, _)| m.clone()).collect();
    let mut all = entries.to_vec();
    for (m, c) in entries {
        if !listed.contains(&m.neg()) {
            all.push((m.neg(), c.conj()));
        }
    }
    QPScalar::from_modes(ms, all)
}
