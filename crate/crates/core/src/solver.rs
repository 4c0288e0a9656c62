//! Time integration of the Euler equation: Eulerian and Lagrangian RK4,
//! flow maps, particle trajectories and Lagrangian Fourier coefficients.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::diffeo::{
    compose_vector_field, invert, Inversion, QPDiffeo, TorusGrid, DEFAULT_NEWTON_MAX_ITER,
    DEFAULT_NEWTON_TOL,
};
use crate::error::{QpError, Result};
use crate::field::{NormParams, QPScalar, QPVectorField};
use crate::lattice::{ModeIndex, ModeSet};
use crate::operators::{nonlinear_terms, pressure_from_terms, pressure_gradient_with, ProductBackend};

pub const DEFAULT_DIV_TOL: f64 = 1e-10;
pub const DEFAULT_SERIES_ORDER: usize = 12;
pub const DEFAULT_SERIES_TOL: f64 = 1e-10;

/// Product evaluation used by the solver.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Auto,
    Direct,
    Spectral,
}

impl BackendKind {
    pub fn build(self, ms: &ModeSet) -> Result<ProductBackend> {
        match self {
            Self::Auto => ProductBackend::auto(ms),
            Self::Direct => Ok(ProductBackend::Direct),
            Self::Spectral => ProductBackend::spectral(ms),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    pub div_tol: f64,
    /// Diagnostics are recorded every this many steps (and at the end).
    pub record_every: usize,
    pub norm: NormParams,
    pub backend: BackendKind,
    /// Lagrangian mode: invert `φ` at every stage instead of every step.
    pub strict: bool,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl SolverConfig {
    pub fn new(dt: f64, t_end: f64, norm: NormParams) -> Self {
        Self {
            dt,
            t_end,
            div_tol: DEFAULT_DIV_TOL,
            record_every: 1,
            norm,
            backend: BackendKind::Auto,
            strict: true,
            newton_tol: DEFAULT_NEWTON_TOL,
            newton_max_iter: DEFAULT_NEWTON_MAX_ITER,
        }
    }

    /// Number of fixed steps covering `[0, t_end]`.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil().max(0.0) as usize
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(QpError::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0) {
            return Err(QpError::InvalidArgument(format!("t_end must be nonnegative, got {}", self.t_end)));
        }
        Ok(())
    }
}

/// `dt ≤ 0.5 / (max_m |Λ_m| · Σ_m |û_m|)`.
pub fn cfl_guideline(u: &QPVectorField) -> f64 {
    let speed = u.modes().max_lambda() * u.wiener_norm();
    if speed > 0.0 {
        0.5 / speed
    } else {
        f64::INFINITY
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Flags {
    pub cfl_warning: bool,
    pub aliasing_warning: bool,
}

impl Flags {
    fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.cfl_warning {
            parts.push("cfl");
        }
        if self.aliasing_warning {
            parts.push("aliasing");
        }
        parts.join("|")
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DiagnosticRow {
    pub t: f64,
    pub energy: f64,
    pub div_norm: f64,
    pub norm_ls: f64,
    pub momentum: Vec<Complex64>,
    pub flags: Flags,
}

impl DiagnosticRow {
    pub fn of(t: f64, u: &QPVectorField, norm: &NormParams, flags: Flags) -> Self {
        Self {
            t,
            energy: u.energy(),
            div_norm: u.divergence().l2_norm(),
            norm_ls: u.norm(norm),
            momentum: u.mean(),
            flags,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Diagnostics {
    pub rows: Vec<DiagnosticRow>,
}

impl Diagnostics {
    pub fn first(&self) -> Option<&DiagnosticRow> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&DiagnosticRow> {
        self.rows.last()
    }

    pub fn max_div_norm(&self) -> f64 {
        self.rows.iter().map(|r| r.div_norm).fold(0.0, f64::max)
    }

    /// `max_t |E(t) − E(0)| / E(0)`.
    pub fn max_relative_energy_drift(&self) -> f64 {
        let Some(e0) = self.first().map(|r| r.energy) else {
            return 0.0;
        };
        self.rows
            .iter()
            .map(|r| (r.energy - e0).abs() / e0.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }

    /// `max_t |û_0(t) − û_0(0)|` over components.
    pub fn max_momentum_drift(&self) -> f64 {
        let Some(m0) = self.first().map(|r| r.momentum.clone()) else {
            return 0.0;
        };
        self.rows
            .iter()
            .flat_map(|r| r.momentum.iter().zip(&m0).map(|(a, b)| (a - b).norm()))
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.rows.first().map_or(0, |r| r.momentum.len());
        let mut header = vec!["t".to_string(), "E".into(), "div_norm".into(), "norm_ls".into()];
        for j in 1..=n {
            header.push(format!("momentum_{j}_re"));
            header.push(format!("momentum_{j}_im"));
        }
        header.push("flags".into());
        writeln!(w, "{}", header.join(","))?;
        for r in &self.rows {
            let mut cols = vec![
                format!("{:.16e}", r.t),
                format!("{:.16e}", r.energy),
                format!("{:.16e}", r.div_norm),
                format!("{:.16e}", r.norm_ls),
            ];
            for c in &r.momentum {
                cols.push(format!("{:.16e}", c.re));
                cols.push(format!("{:.16e}", c.im));
            }
            cols.push(r.flags.label());
            writeln!(w, "{}", cols.join(","))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EulerianState {
    pub t: f64,
    pub u: QPVectorField,
}

/// Final state of a run; `abort` is set when the run stopped early, in
/// which case `state` is the last state reached.
#[derive(Clone, Debug)]
pub struct Outcome<S> {
    pub state: S,
    pub diagnostics: Diagnostics,
    pub abort: Option<QpError>,
}

impl<S> Outcome<S> {
    pub fn into_result(self) -> Result<(S, Diagnostics)> {
        match self.abort {
            Some(e) => Err(e),
            None => Ok((self.state, self.diagnostics)),
        }
    }
}

/// `u_t = −D(u) + 𝒫(u)`.
pub fn rhs_eulerian(u: &QPVectorField, backend: &ProductBackend) -> Result<QPVectorField> {
    let (d, q) = nonlinear_terms(u, backend)?;
    pressure_from_terms(&d, &q)?.sub(&d)
}

fn rk4_combine(
    y: &QPVectorField,
    k: [&QPVectorField; 4],
    dt: f64,
) -> Result<QPVectorField> {
    let incr = k[0]
        .add_scaled(k[1], 2.0)?
        .add_scaled(k[2], 2.0)?
        .add(k[3])?;
    y.add_scaled(&incr, dt / 6.0)
}

/// One classical RK4 step of the Eulerian system.
pub fn step_rk4(
    state: &EulerianState,
    dt: f64,
    backend: &ProductBackend,
) -> Result<EulerianState> {
    let u = &state.u;
    let k1 = rhs_eulerian(u, backend)?;
    let k2 = rhs_eulerian(&u.add_scaled(&k1, dt / 2.0)?, backend)?;
    let k3 = rhs_eulerian(&u.add_scaled(&k2, dt / 2.0)?, backend)?;
    let k4 = rhs_eulerian(&u.add_scaled(&k3, dt)?, backend)?;
    Ok(EulerianState {
        t: state.t + dt,
        u: rk4_combine(u, [&k1, &k2, &k3, &k4], dt)?,
    })
}

pub fn integrate(state: EulerianState, config: &SolverConfig) -> Result<Outcome<EulerianState>> {
    integrate_with(state, config, |_, _| {})
}

/// Eulerian integration over `[t, t + t_end]`. `observer` sees the initial
/// state and every accepted step with its step index.
pub fn integrate_with<F>(
    state: EulerianState,
    config: &SolverConfig,
    mut observer: F,
) -> Result<Outcome<EulerianState>>
where
    F: FnMut(usize, &EulerianState),
{
    config.validate()?;
    let backend = config.backend.build(state.u.modes())?;
    let steps = config.steps();
    let t0 = state.t;
    let mut diagnostics = Diagnostics::default();
    let flags = |u: &QPVectorField| Flags {
        cfl_warning: config.dt > cfl_guideline(u),
        aliasing_warning: false,
    };
    let record = |diag: &mut Diagnostics, s: &EulerianState| {
        diag.rows.push(DiagnosticRow::of(s.t, &s.u, &config.norm, flags(&s.u)));
    };

    let div0 = state.u.divergence().l2_norm();
    if div0 > config.div_tol {
        return Ok(Outcome {
            state,
            diagnostics,
            abort: Some(QpError::DivergenceBreach {
                t: t0,
                norm: div0,
                tol: config.div_tol,
            }),
        });
    }
    record(&mut diagnostics, &state);
    observer(0, &state);

    let mut current = state;
    for step in 1..=steps {
        let t = t0 + step as f64 * config.dt;
        let next = match step_rk4(&current, config.dt, &backend) {
            Ok(mut s) => {
                s.t = t;
                s
            }
            Err(e) => {
                return Ok(Outcome {
                    state: current,
                    diagnostics,
                    abort: Some(e),
                })
            }
        };
        let abort = if !next.u.is_finite() {
            Some(QpError::NonFinite { t })
        } else {
            let div = next.u.divergence().l2_norm();
            (div > config.div_tol).then_some(QpError::DivergenceBreach {
                t,
                norm: div,
                tol: config.div_tol,
            })
        };
        if let Some(e) = abort {
            record(&mut diagnostics, &next);
            return Ok(Outcome {
                state: next,
                diagnostics,
                abort: Some(e),
            });
        }
        current = next;
        if step % config.record_every.max(1) == 0 || step == steps {
            record(&mut diagnostics, &current);
        }
        observer(step, &current);
    }
    Ok(Outcome {
        state: current,
        diagnostics,
        abort: None,
    })
}

/// `(t, v, φ)` with `v = u ∘ φ`.
#[derive(Clone, Debug)]
pub struct LagrangianState {
    pub t: f64,
    pub v: QPVectorField,
    pub phi: QPDiffeo,
}

impl LagrangianState {
    pub fn initial(u0: QPVectorField) -> Self {
        let phi = QPDiffeo::identity(u0.modes());
        Self { t: 0.0, v: u0, phi }
    }
}

/// Inputs shared by every Lagrangian stage.
pub struct LagrangianContext<'a> {
    pub grid: &'a TorusGrid,
    pub backend: &'a ProductBackend,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl LagrangianContext<'_> {
    fn invert(&self, phi: &QPDiffeo) -> Result<Inversion> {
        invert(phi, self.grid, self.newton_tol, self.newton_max_iter)
    }
}

/// Eulerian velocity `u = v ∘ φ^{-1}` with its composition residual.
pub fn eulerian_velocity(
    v: &QPVectorField,
    inverse: &QPDiffeo,
    grid: &TorusGrid,
) -> Result<(QPVectorField, f64)> {
    let c = compose_vector_field(v, inverse, grid)?;
    Ok((c.value, c.aliasing_residual))
}

/// `F(v, φ) = (R_φ ∘ 𝒫 ∘ R_{φ^{-1}})(v)` given the inverse of `φ`; also
/// returns the largest aliasing residual of the two compositions.
pub fn rhs_lagrangian_with_inverse(
    v: &QPVectorField,
    phi: &QPDiffeo,
    inverse: &QPDiffeo,
    ctx: &LagrangianContext<'_>,
) -> Result<(QPVectorField, f64)> {
    let (u, r1) = eulerian_velocity(v, inverse, ctx.grid)?;
    let p = pressure_gradient_with(&u, ctx.backend)?;
    let back = compose_vector_field(&p, phi, ctx.grid)?;
    Ok((back.value, r1.max(back.aliasing_residual)))
}

pub fn rhs_lagrangian(
    v: &QPVectorField,
    phi: &QPDiffeo,
    ctx: &LagrangianContext<'_>,
) -> Result<QPVectorField> {
    let inv = ctx.invert(phi)?;
    Ok(rhs_lagrangian_with_inverse(v, phi, &inv.inverse, ctx)?.0)
}

/// One RK4 step of `φ̇ = v`, `v̇ = F(v, φ)`. Returns the new state and the
/// largest aliasing residual met along the step.
pub fn step_lagrangian(
    state: &LagrangianState,
    dt: f64,
    strict: bool,
    ctx: &LagrangianContext<'_>,
) -> Result<(LagrangianState, f64)> {
    let step_inverse = if strict {
        None
    } else {
        Some(ctx.invert(&state.phi)?.inverse)
    };
    let mut residual = 0.0_f64;
    let mut stage = |f: &QPVectorField, v: &QPVectorField| -> Result<QPVectorField> {
        let phi = if f.max_coefficient() == 0.0 {
            QPDiffeo::identity(f.modes())
        } else {
            QPDiffeo::new(f.clone(), ctx.grid)?
        };
        let inverse = match &step_inverse {
            Some(i) => i.clone(),
            None => ctx.invert(&phi)?.inverse,
        };
        let (a, r) = rhs_lagrangian_with_inverse(v, &phi, &inverse, ctx)?;
        residual = residual.max(r);
        Ok(a)
    };
    let f = state.phi.displacement();
    let v = &state.v;
    let a1 = stage(f, v)?;
    let f2 = f.add_scaled(v, dt / 2.0)?;
    let v2 = v.add_scaled(&a1, dt / 2.0)?;
    let a2 = stage(&f2, &v2)?;
    let f3 = f.add_scaled(&v2, dt / 2.0)?;
    let v3 = v.add_scaled(&a2, dt / 2.0)?;
    let a3 = stage(&f3, &v3)?;
    let f4 = f.add_scaled(&v3, dt)?;
    let v4 = v.add_scaled(&a3, dt)?;
    let a4 = stage(&f4, &v4)?;
    let f_next = rk4_combine(f, [v, &v2, &v3, &v4], dt)?;
    let v_next = rk4_combine(v, [&a1, &a2, &a3, &a4], dt)?;
    Ok((
        LagrangianState {
            t: state.t + dt,
            v: v_next,
            phi: QPDiffeo::new(f_next, ctx.grid)?,
        },
        residual,
    ))
}

/// Lagrangian integration; diagnostics are those of `u = v ∘ φ^{-1}`.
pub fn integrate_lagrangian_with<F>(
    state: LagrangianState,
    config: &SolverConfig,
    grid: &TorusGrid,
    mut observer: F,
) -> Result<Outcome<LagrangianState>>
where
    F: FnMut(usize, &LagrangianState, &QPVectorField),
{
    config.validate()?;
    let backend = config.backend.build(state.v.modes())?;
    let ctx = LagrangianContext {
        grid,
        backend: &backend,
        newton_tol: config.newton_tol,
        newton_max_iter: config.newton_max_iter,
    };
    let steps = config.steps();
    let t0 = state.t;
    let mut diagnostics = Diagnostics::default();
    let mut record = |diag: &mut Diagnostics, s: &LagrangianState, aliasing: f64, step: usize| -> Result<()> {
        let inv = ctx.invert(&s.phi)?;
        let (u, r) = eulerian_velocity(&s.v, &inv.inverse, grid)?;
        let flags = Flags {
            cfl_warning: config.dt > cfl_guideline(&u),
            aliasing_warning: aliasing.max(r) > grid.aliasing_threshold(),
        };
        diag.rows.push(DiagnosticRow::of(s.t, &u, &config.norm, flags));
        observer(step, s, &u);
        Ok(())
    };
    record(&mut diagnostics, &state, 0.0, 0)?;
    let mut current = state;
    for step in 1..=steps {
        let t = t0 + step as f64 * config.dt;
        match step_lagrangian(&current, config.dt, config.strict, &ctx) {
            Ok((mut next, aliasing)) => {
                next.t = t;
                if !next.v.is_finite() || !next.phi.displacement().is_finite() {
                    return Ok(Outcome {
                        state: next,
                        diagnostics,
                        abort: Some(QpError::NonFinite { t }),
                    });
                }
                current = next;
                if step % config.record_every.max(1) == 0 || step == steps {
                    if let Err(e) = record(&mut diagnostics, &current, aliasing, step) {
                        return Ok(Outcome {
                            state: current,
                            diagnostics,
                            abort: Some(e),
                        });
                    }
                }
            }
            Err(e) => {
                return Ok(Outcome {
                    state: current,
                    diagnostics,
                    abort: Some(e),
                })
            }
        }
    }
    Ok(Outcome {
        state: current,
        diagnostics,
        abort: None,
    })
}

/// A time-dependent velocity field.
pub trait VelocityProvider: Sync {
    fn modes(&self) -> &Arc<ModeSet>;
    fn velocity(&self, t: f64) -> Result<QPVectorField>;
}

/// `u(t) = u` for all `t`.
pub struct SteadyVelocity(pub QPVectorField);

impl VelocityProvider for SteadyVelocity {
    fn modes(&self) -> &Arc<ModeSet> {
        self.0.modes()
    }

    fn velocity(&self, _t: f64) -> Result<QPVectorField> {
        Ok(self.0.clone())
    }
}

/// States of an Eulerian run at uniform times, interpolated by cubic
/// Hermite polynomials using the stored time derivatives.
pub struct RecordedVelocity {
    t0: f64,
    dt: f64,
    states: Vec<QPVectorField>,
    rates: Vec<QPVectorField>,
}

impl RecordedVelocity {
    /// Records every step of an Eulerian run over `[0, t_end]`.
    pub fn record(u0: QPVectorField, config: &SolverConfig) -> Result<Self> {
        let backend = config.backend.build(u0.modes())?;
        let mut states = Vec::new();
        let outcome = integrate_with(
            EulerianState { t: 0.0, u: u0 },
            &SolverConfig {
                record_every: 1,
                ..config.clone()
            },
            |_, s| states.push(s.u.clone()),
        )?;
        if let Some(e) = outcome.abort {
            return Err(e);
        }
        let rates = states
            .iter()
            .map(|u| rhs_eulerian(u, &backend))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            t0: 0.0,
            dt: config.dt,
            states,
            rates,
        })
    }

    /// States `u(t0 + i dt)` with their time derivatives.
    pub fn from_samples(
        t0: f64,
        dt: f64,
        states: Vec<QPVectorField>,
        rates: Vec<QPVectorField>,
    ) -> Result<Self> {
        if states.is_empty() || states.len() != rates.len() || !(dt > 0.0) {
            return Err(QpError::InvalidArgument(
                "recorded velocity needs matching, nonempty states and rates".into(),
            ));
        }
        Ok(Self {
            t0,
            dt,
            states,
            rates,
        })
    }

    pub fn end_time(&self) -> f64 {
        self.t0 + self.dt * (self.states.len().saturating_sub(1)) as f64
    }
}

impl VelocityProvider for RecordedVelocity {
    fn modes(&self) -> &Arc<ModeSet> {
        self.states[0].modes()
    }

    fn velocity(&self, t: f64) -> Result<QPVectorField> {
        let last = self.states.len() - 1;
        let x = (t - self.t0) / self.dt;
        if x < -1e-9 || x > last as f64 + 1e-9 {
            return Err(QpError::InvalidArgument(format!(
                "time {t} outside the recorded interval [{}, {}]",
                self.t0,
                self.end_time()
            )));
        }
        let i = (x.floor().max(0.0) as usize).min(last.saturating_sub(1));
        if last == 0 {
            return Ok(self.states[0].clone());
        }
        let s = x - i as f64;
        let h00 = 2.0 * s * s * s - 3.0 * s * s + 1.0;
        let h10 = s * s * s - 2.0 * s * s + s;
        let h01 = -2.0 * s * s * s + 3.0 * s * s;
        let h11 = s * s * s - s * s;
        self.states[i]
            .scale(h00)
            .add_scaled(&self.rates[i], h10 * self.dt)?
            .add_scaled(&self.states[i + 1], h01)?
            .add_scaled(&self.rates[i + 1], h11 * self.dt)
    }
}

/// Flow map `φ̇ = u(t) ∘ φ`, `φ(0) = id`, by RK4 on the displacement.
/// Returns `(t, φ(t))` after every step, starting with the identity.
pub fn flow_map(
    provider: &dyn VelocityProvider,
    dt: f64,
    t_end: f64,
    grid: &TorusGrid,
) -> Result<Vec<(f64, QPDiffeo)>> {
    let ms = provider.modes();
    let steps = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
    let mut out = vec![(0.0, QPDiffeo::identity(ms))];
    let rate = |t: f64, f: &QPVectorField| -> Result<QPVectorField> {
        let phi = QPDiffeo::new(f.clone(), grid)?;
        Ok(compose_vector_field(&provider.velocity(t)?, &phi, grid)?.value)
    };
    let mut f = QPVectorField::zero(ms);
    for step in 0..steps {
        let t = step as f64 * dt;
        let k1 = rate(t, &f)?;
        let k2 = rate(t + dt / 2.0, &f.add_scaled(&k1, dt / 2.0)?)?;
        let k3 = rate(t + dt / 2.0, &f.add_scaled(&k2, dt / 2.0)?)?;
        let k4 = rate(t + dt, &f.add_scaled(&k3, dt)?)?;
        f = rk4_combine(&f, [&k1, &k2, &k3, &k4], dt)?;
        out.push(((step + 1) as f64 * dt, QPDiffeo::new(f.clone(), grid)?));
    }
    Ok(out)
}

/// Particle paths `ẋ = u(t, x)` on `[t_start, t_end]` by pointwise RK4,
/// one polyline per seed.
pub fn trajectories(
    provider: &dyn VelocityProvider,
    seeds: &[Vec<f64>],
    t_start: f64,
    dt: f64,
    t_end: f64,
) -> Result<Vec<Vec<(f64, Vec<f64>)>>> {
    let steps = ((t_end - t_start) / dt - 1e-9).ceil().max(0.0) as usize;
    let mut paths: Vec<Vec<(f64, Vec<f64>)>> =
        seeds.iter().map(|s| vec![(t_start, s.clone())]).collect();
    let mut current: Vec<Vec<f64>> = seeds.to_vec();
    let axpy = |x: &[f64], k: &[f64], h: f64| -> Vec<f64> {
        x.iter().zip(k).map(|(a, b)| a + h * b).collect()
    };
    for step in 0..steps {
        let t = t_start + step as f64 * dt;
        let u1 = provider.velocity(t)?;
        let um = provider.velocity(t + dt / 2.0)?;
        let u4 = provider.velocity(t + dt)?;
        for (x, path) in current.iter_mut().zip(paths.iter_mut()) {
            let k1 = u1.evaluate(x);
            let k2 = um.evaluate(&axpy(x, &k1, dt / 2.0));
            let k3 = um.evaluate(&axpy(x, &k2, dt / 2.0));
            let k4 = u4.evaluate(&axpy(x, &k3, dt));
            let next: Vec<f64> = (0..x.len())
                .map(|j| x[j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
                .collect();
            if next.iter().any(|v| !v.is_finite()) {
                return Err(QpError::NonFinite { t: t + dt });
            }
            *x = next;
            path.push((t_start + (step + 1) as f64 * dt, x.clone()));
        }
    }
    Ok(paths)
}

/// `det(I + [df])` as a quasi-periodic function, by permutation expansion.
pub fn jacobian_determinant(f: &QPVectorField, backend: &ProductBackend) -> Result<QPScalar> {
    let ms = f.modes();
    let n = f.dim();
    let jac = f.jacobian();
    let entry = |j: usize, k: usize| -> QPScalar {
        if j == k {
            jac[j][k].add(&QPScalar::constant(ms, 1.0)).expect("shared modes")
        } else {
            jac[j][k].clone()
        }
    };
    let mut perm: Vec<usize> = (0..n).collect();
    let mut total = QPScalar::zero(ms);
    permutations(&mut perm, 0, &mut |p, sign| {
        let mut term = entry(0, p[0]);
        for (j, &k) in p.iter().enumerate().skip(1) {
            term = backend.multiply(&term, &entry(j, k))?;
        }
        total = total.add_scaled(&term, sign)?;
        Ok(())
    })?;
    Ok(total)
}

fn permutations<F>(p: &mut Vec<usize>, start: usize, visit: &mut F) -> Result<()>
where
    F: FnMut(&[usize], f64) -> Result<()>,
{
    fn rec<F>(p: &mut Vec<usize>, start: usize, sign: f64, visit: &mut F) -> Result<()>
    where
        F: FnMut(&[usize], f64) -> Result<()>,
    {
        if start == p.len() {
            return visit(p, sign);
        }
        for i in start..p.len() {
            p.swap(start, i);
            let s = if i == start { sign } else { -sign };
            rec(p, start + 1, s, visit)?;
            p.swap(start, i);
        }
        Ok(())
    }
    rec(p, start, 1.0, visit)
}

/// `û_m` of `u = v ∘ φ^{-1}` read off without inverting `φ`.
#[derive(Clone, Debug)]
pub struct LagrangianCoefficient {
    pub value: Vec<Complex64>,
    /// `‖a‖^{N+1}/(N+1)! · e^{‖a‖}` for `a = −i(Λ_m, f)` in the Wiener norm.
    pub tail_bound: f64,
}

/// `û_m = ⟨v det(I + [df]) e^{−i(Λ_m, f)}, e^{−i(Λ_m, ·)}⟩_0`, the
/// exponential taken as a truncated series of order `order`.
pub fn fourier_coeff_lagrangian(
    v: &QPVectorField,
    phi: &QPDiffeo,
    m: &ModeIndex,
    order: usize,
    tail_tol: f64,
    backend: &ProductBackend,
) -> Result<LagrangianCoefficient> {
    let ms = v.modes();
    let f = phi.displacement();
    let lam = ms
        .lambda_of(m)
        .ok_or_else(|| QpError::ModeOutOfBox(m.0.clone()))?
        .to_vec();
    let mut a = QPScalar::zero(ms).into_complex();
    for (j, comp) in f.components().iter().enumerate() {
        a = a.add(&comp.scale_complex(Complex64::new(0.0, -lam[j])))?;
    }
    let an = a.wiener_norm();
    let factorial: f64 = (1..=order + 1).map(|k| k as f64).product();
    let tail_bound = an.powi(order as i32 + 1) / factorial * an.exp();
    if tail_bound > tail_tol {
        return Err(QpError::SeriesTail {
            bound: tail_bound,
            tol: tail_tol,
        });
    }
    let one = QPScalar::constant(ms, 1.0).into_complex();
    let mut series = one.clone();
    let mut term = one;
    for k in 1..=order {
        term = backend.multiply(&term, &a)?.scale(1.0 / k as f64);
        series = series.add(&term)?;
    }
    let weight = backend.multiply(&jacobian_determinant(f, backend)?, &series)?;
    let value = v
        .components()
        .iter()
        .map(|vj| Ok(backend.multiply(vj, &weight)?.coefficient(m)))
        .collect::<Result<Vec<_>>>()?;
    Ok(LagrangianCoefficient { value, tail_bound })
}
