//! Quasi-periodic diffeomorphisms `φ = id + f`, their torus lifts
//! `Φ(θ) = θ + Ω F(θ)`, composition and inversion on a torus grid.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{QpError, Result};
use crate::field::{QPScalar, QPVectorField};
use crate::lattice::{FrequencyMatrix, ModeSet};
use crate::torus_fft::TorusTransform;

pub const DEFAULT_NEWTON_TOL: f64 = 1e-12;
pub const DEFAULT_NEWTON_MAX_ITER: usize = 50;
pub const DEFAULT_ALIASING_THRESHOLD: f64 = 1e-6;
const MAX_HALVINGS: usize = 8;
const ROUND_TRIP_SAMPLES: usize = 100;
const SYLVESTER_NODES: usize = 8;

/// Uniform grid on `T^M` with `G ≥ 2(2K + 1)` points per axis.
#[derive(Clone, Debug)]
pub struct TorusGrid {
    transform: Arc<TorusTransform>,
    aliasing_threshold: f64,
}

impl TorusGrid {
    pub fn new(ms: &ModeSet, points: usize) -> Result<Self> {
        let required = 2 * ms.side();
        if points < required {
            return Err(QpError::GridTooCoarse {
                points,
                radius: ms.radius(),
                required,
            });
        }
        Ok(Self {
            transform: Arc::new(TorusTransform::new(ms.torus_dim(), points)?),
            aliasing_threshold: DEFAULT_ALIASING_THRESHOLD,
        })
    }

    /// `2(2K + 1)` rounded up to a power of two.
    pub fn default_points(ms: &ModeSet) -> usize {
        (2 * ms.side()).next_power_of_two()
    }

    pub fn default_for(ms: &ModeSet) -> Result<Self> {
        Self::new(ms, Self::default_points(ms))
    }

    pub fn with_aliasing_threshold(mut self, threshold: f64) -> Self {
        self.aliasing_threshold = threshold;
        self
    }

    pub fn aliasing_threshold(&self) -> f64 {
        self.aliasing_threshold
    }

    pub fn points(&self) -> usize {
        self.transform.points()
    }

    pub fn dim(&self) -> usize {
        self.transform.dim()
    }

    pub fn len(&self) -> usize {
        self.transform.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transform.is_empty()
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        self.transform.node(idx)
    }

    pub fn transform(&self) -> &TorusTransform {
        &self.transform
    }

    fn check(&self, ms: &ModeSet) -> Result<()> {
        if ms.torus_dim() != self.dim() {
            return Err(QpError::InvalidDimensions(format!(
                "grid dimension {} does not match torus dimension {}",
                self.dim(),
                ms.torus_dim()
            )));
        }
        let required = 2 * ms.side();
        if self.points() < required {
            return Err(QpError::GridTooCoarse {
                points: self.points(),
                radius: ms.radius(),
                required,
            });
        }
        Ok(())
    }
}

/// Direct evaluation of torus functions `F(σ) = Σ f̂_m e^{2πi (m, σ)}` at
/// arbitrary `σ ∈ R^M`, with optional torus gradients.
struct TorusEvaluator<'a> {
    ms: &'a ModeSet,
    comps: Vec<&'a [(usize, Complex64)]>,
}

impl<'a> TorusEvaluator<'a> {
    fn new(fields: &'a [QPScalar]) -> Self {
        Self {
            ms: fields[0].modes(),
            comps: fields.iter().map(QPScalar::slot_coefficients).collect(),
        }
    }

    fn phase_tables(&self, sigma: &[f64]) -> Vec<Vec<Complex64>> {
        let k = self.ms.radius() as i32;
        sigma
            .iter()
            .map(|&s| {
                (-k..=k)
                    .map(|j| Complex64::from_polar(1.0, 2.0 * PI * j as f64 * s))
                    .collect()
            })
            .collect()
    }

    fn values(&self, sigma: &[f64]) -> Vec<Complex64> {
        let tables = self.phase_tables(sigma);
        let k = self.ms.radius() as i32;
        self.comps
            .iter()
            .map(|cs| {
                cs.iter()
                    .map(|&(s, c)| {
                        let mut e = c;
                        for (a, &d) in self.ms.digits(s).iter().enumerate() {
                            e *= tables[a][(d + k) as usize];
                        }
                        e
                    })
                    .sum()
            })
            .collect()
    }

    /// Values and `grad[j][a] = ∂F_j/∂θ_a`, real parts only.
    fn values_and_gradients(&self, sigma: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let tables = self.phase_tables(sigma);
        let k = self.ms.radius() as i32;
        let dim = sigma.len();
        let mut vals = Vec::with_capacity(self.comps.len());
        let mut grads = Vec::with_capacity(self.comps.len());
        for cs in &self.comps {
            let mut v = Complex64::new(0.0, 0.0);
            let mut g = vec![Complex64::new(0.0, 0.0); dim];
            for &(s, c) in cs.iter() {
                let digits = self.ms.digits(s);
                let mut e = c;
                for (a, &d) in digits.iter().enumerate() {
                    e *= tables[a][(d + k) as usize];
                }
                v += e;
                for (a, &d) in digits.iter().enumerate() {
                    g[a] += e * Complex64::new(0.0, 2.0 * PI * d as f64);
                }
            }
            vals.push(v.re);
            grads.push(g.into_iter().map(|z| z.re).collect());
        }
        (vals, grads)
    }
}

/// `det(I_n + A Ω)` for the `n×M` matrix `A`.
fn det_small_side(a: &[Vec<f64>], omega: &FrequencyMatrix) -> f64 {
    let n = omega.space_dim();
    let mm = omega.torus_dim();
    let mat = DMatrix::from_fn(n, n, |i, j| {
        let s: f64 = (0..mm).map(|k| a[i][k] * omega.entry(k, j)).sum();
        if i == j {
            1.0 + s
        } else {
            s
        }
    });
    mat.determinant()
}

/// `det(I_M + Ω A)` for the `n×M` matrix `A`.
fn det_large_side(a: &[Vec<f64>], omega: &FrequencyMatrix) -> f64 {
    let n = omega.space_dim();
    let mm = omega.torus_dim();
    let mat = DMatrix::from_fn(mm, mm, |i, j| {
        let s: f64 = (0..n).map(|k| omega.entry(i, k) * a[k][j]).sum();
        if i == j {
            1.0 + s
        } else {
            s
        }
    });
    mat.determinant()
}

/// Largest `|det(I_M + ΩA) − det(I_n + AΩ)|` over the given `n×M` matrices.
pub fn sylvester_defect(omega: &FrequencyMatrix, matrices: &[Vec<Vec<f64>>]) -> f64 {
    matrices
        .iter()
        .map(|a| (det_large_side(a, omega) - det_small_side(a, omega)).abs())
        .fold(0.0, f64::max)
}

/// Grid minimum of the Jacobian determinant.
#[derive(Clone, Debug)]
pub struct MarginReport {
    pub margin: f64,
    /// Sylvester identity defect at a few sampled nodes.
    pub sylvester_defect: f64,
}

fn torus_jacobian_samples(f: &QPVectorField, grid: &TorusGrid) -> Result<Vec<Vec<Vec<f64>>>> {
    let ms = f.modes();
    let mm = ms.torus_dim();
    let n = f.dim();
    let t = grid.transform();
    // dF[j][a] sampled on the grid
    let mut samples = Vec::with_capacity(n);
    for comp in f.components() {
        let mut row = Vec::with_capacity(mm);
        for a in 0..mm {
            let d = comp.apply_multiplier(|s| {
                Complex64::new(0.0, 2.0 * PI * ms.digits(s)[a] as f64)
            });
            row.push(t.synthesize(&d)?);
        }
        samples.push(row);
    }
    Ok((0..t.len())
        .map(|idx| {
            (0..n)
                .map(|j| (0..mm).map(|a| samples[j][a][idx].re).collect())
                .collect()
        })
        .collect())
}

/// `min_θ det(I_n + [dF](θ) Ω)` over the grid nodes, with a Sylvester check.
pub fn jacobian_margin_report(f: &QPVectorField, grid: &TorusGrid) -> Result<MarginReport> {
    let ms = f.modes();
    grid.check(ms)?;
    let omega = ms.omega();
    let jac = torus_jacobian_samples(f, grid)?;
    let margin = jac
        .par_iter()
        .map(|a| det_small_side(a, omega))
        .reduce(|| f64::INFINITY, f64::min);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5157);
    let picks: Vec<Vec<Vec<f64>>> = (0..SYLVESTER_NODES)
        .map(|_| jac[rng.gen_range(0..jac.len())].clone())
        .collect();
    Ok(MarginReport {
        margin,
        sylvester_defect: sylvester_defect(omega, &picks),
    })
}

pub fn jacobian_margin(f: &QPVectorField, grid: &TorusGrid) -> Result<f64> {
    Ok(jacobian_margin_report(f, grid)?.margin)
}

/// `φ = id + f` with a positive sampled Jacobian margin.
#[derive(Clone, Debug)]
pub struct QPDiffeo {
    displacement: QPVectorField,
    margin: f64,
}

impl QPDiffeo {
    pub fn new(displacement: QPVectorField, grid: &TorusGrid) -> Result<Self> {
        let margin = jacobian_margin(&displacement, grid)?;
        if !(margin > 0.0) {
            return Err(QpError::NonPositiveMargin(margin));
        }
        Ok(Self {
            displacement,
            margin,
        })
    }

    pub fn identity(ms: &Arc<ModeSet>) -> Self {
        Self {
            displacement: QPVectorField::zero(ms),
            margin: 1.0,
        }
    }

    /// `x ↦ x + c`.
    pub fn translation(ms: &Arc<ModeSet>, c: &[f64]) -> Result<Self> {
        Ok(Self {
            displacement: QPVectorField::constant(ms, c)?,
            margin: 1.0,
        })
    }

    pub fn displacement(&self) -> &QPVectorField {
        &self.displacement
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn modes(&self) -> &Arc<ModeSet> {
        self.displacement.modes()
    }

    /// `φ(x) = x + f(x)`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.displacement.evaluate(x))
            .map(|(a, b)| a + b)
            .collect()
    }

    /// `[dφ](x) = I + [df](x)`, row `j` holding `∂_k φ_j`.
    pub fn jacobian_at(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.displacement.dim();
        let jac = self.displacement.jacobian();
        DMatrix::from_fn(n, n, |j, k| {
            jac[j][k].evaluate(x) + if j == k { 1.0 } else { 0.0 }
        })
    }
}

/// Result of a composition together with its aliasing residual.
#[derive(Clone, Debug)]
pub struct Composed<T> {
    pub value: T,
    /// Largest difference between the sampled composition and the
    /// resynthesized box coefficients over the grid nodes.
    pub aliasing_residual: f64,
    /// Set when the residual exceeds the grid's aliasing threshold.
    pub aliasing_warning: bool,
}

/// Shifted nodes `θ_j + Ω F(θ_j)` for the displacement `F` of `phi`.
fn displaced_nodes(phi: &QPDiffeo, grid: &TorusGrid) -> Result<Vec<Vec<f64>>> {
    let ms = phi.modes();
    let omega = ms.omega();
    let t = grid.transform();
    let f = phi
        .displacement
        .components()
        .iter()
        .map(|c| t.synthesize(c))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..t.len())
        .map(|idx| {
            let fx: Vec<f64> = f.iter().map(|s| s[idx].re).collect();
            let shift = omega.apply(&fx);
            t.node(idx).iter().zip(shift).map(|(a, b)| a + b).collect()
        })
        .collect())
}

fn compose_components(
    g: &[QPScalar],
    nodes: &[Vec<f64>],
    grid: &TorusGrid,
) -> Result<(Vec<QPScalar>, f64)> {
    let ms = g[0].modes();
    let t = grid.transform();
    let eval = TorusEvaluator::new(g);
    let values: Vec<Vec<Complex64>> = nodes.par_iter().map(|s| eval.values(s)).collect();
    let mut out = Vec::with_capacity(g.len());
    let mut residual = 0.0_f64;
    for (j, comp) in g.iter().enumerate() {
        let samples: Vec<Complex64> = values.iter().map(|v| v[j]).collect();
        let c = t.analyze(samples.clone(), ms, comp.is_complex())?;
        let back = t.synthesize(&c)?;
        for (a, b) in samples.iter().zip(&back) {
            residual = residual.max((a - b).norm());
        }
        out.push(c);
    }
    Ok((out, residual))
}

fn ensure_positive(phi: &QPDiffeo) -> Result<()> {
    if phi.margin > 0.0 {
        Ok(())
    } else {
        Err(QpError::NonPositiveMargin(phi.margin))
    }
}

/// `g ∘ φ`, sampled as `G(Φ(θ_j))` and transformed back to box coefficients.
pub fn compose_field(g: &QPScalar, phi: &QPDiffeo, grid: &TorusGrid) -> Result<Composed<QPScalar>> {
    let r = compose_vector_field(&QPVectorField::new(vec![g.clone()])?, phi, grid)?;
    Ok(Composed {
        value: r.value.into_components().remove(0),
        aliasing_residual: r.aliasing_residual,
        aliasing_warning: r.aliasing_warning,
    })
}

/// Component-wise `u ∘ φ`.
pub fn compose_vector_field(
    u: &QPVectorField,
    phi: &QPDiffeo,
    grid: &TorusGrid,
) -> Result<Composed<QPVectorField>> {
    ensure_positive(phi)?;
    if !u.same_modes(&phi.displacement) {
        return Err(QpError::MismatchedModeSet);
    }
    grid.check(u.modes())?;
    let nodes = displaced_nodes(phi, grid)?;
    let (comps, residual) = compose_components(u.components(), &nodes, grid)?;
    Ok(Composed {
        value: QPVectorField::new(comps)?,
        aliasing_residual: residual,
        aliasing_warning: residual > grid.aliasing_threshold(),
    })
}

/// `ψ ∘ φ = id + (f_φ + f_ψ ∘ φ)`.
pub fn compose_diffeo(psi: &QPDiffeo, phi: &QPDiffeo, grid: &TorusGrid) -> Result<Composed<QPDiffeo>> {
    ensure_positive(psi)?;
    let pulled = compose_vector_field(&psi.displacement, phi, grid)?;
    let displacement = phi.displacement.add(&pulled.value)?;
    Ok(Composed {
        value: QPDiffeo::new(displacement, grid)?,
        aliasing_residual: pulled.aliasing_residual,
        aliasing_warning: pulled.aliasing_warning,
    })
}

/// An inverse diffeomorphism with its certification data.
#[derive(Clone, Debug)]
pub struct Inversion {
    pub inverse: QPDiffeo,
    /// `max |φ(φ^{-1}(x)) − x|` over seeded random points.
    pub round_trip_residual: f64,
    /// Largest final Newton residual over the nodes.
    pub newton_residual: f64,
    pub max_newton_iterations: usize,
    pub aliasing_residual: f64,
}

fn newton_node(
    eval: &TorusEvaluator<'_>,
    omega: &FrequencyMatrix,
    theta: &[f64],
    node: usize,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, f64, usize)> {
    let n = omega.space_dim();
    let residual_at = |g: &[f64]| -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
        let shift = omega.apply(g);
        let sigma: Vec<f64> = theta.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let (vals, grads) = eval.values_and_gradients(&sigma);
        let r: Vec<f64> = g.iter().zip(&vals).map(|(a, b)| a + b).collect();
        (r, grads, vals)
    };
    let norm = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>().sqrt();

    let (f0, _) = eval.values_and_gradients(theta);
    let mut g: Vec<f64> = f0.iter().map(|v| -v).collect();
    let (mut r, mut grads, _) = residual_at(&g);
    let mut rn = norm(&r);
    let mut iter = 0;
    while rn > tol {
        if iter == max_iter {
            return Err(QpError::NewtonNonConvergence {
                node,
                residual: rn,
                iterations: iter,
            });
        }
        iter += 1;
        let jac = DMatrix::from_fn(n, n, |i, j| {
            let s: f64 = (0..omega.torus_dim())
                .map(|a| grads[i][a] * omega.entry(a, j))
                .sum();
            if i == j {
                1.0 + s
            } else {
                s
            }
        });
        let rhs = nalgebra::DVector::from_column_slice(&r);
        let step = jac.lu().solve(&rhs).ok_or(QpError::NewtonNonConvergence {
            node,
            residual: rn,
            iterations: iter,
        })?;
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = g.iter().zip(step.iter()).map(|(a, d)| a - lambda * d).collect();
            let (tr, tg, _) = residual_at(&trial);
            let tn = norm(&tr);
            if tn < rn {
                accepted = Some((trial, tr, tg, tn));
                break;
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((ng, nr, ngr, nn)) => {
                g = ng;
                r = nr;
                grads = ngr;
                rn = nn;
            }
            None => {
                // no decrease at rounding level: accept if already tiny
                if rn <= 10.0 * tol {
                    break;
                }
                return Err(QpError::NewtonNonConvergence {
                    node,
                    residual: rn,
                    iterations: iter,
                });
            }
        }
    }
    Ok((g, rn, iter))
}

/// `φ^{-1} = id + G(Ω ·)` with `G(θ) = −F(σ)` where `σ + Ω F(σ) = θ`,
/// solved per node by damped Newton in the displacement `σ − θ = Ω g`.
pub fn invert(
    phi: &QPDiffeo,
    grid: &TorusGrid,
    newton_tol: f64,
    max_iter: usize,
) -> Result<Inversion> {
    ensure_positive(phi)?;
    let ms = phi.modes();
    grid.check(ms)?;
    let omega = ms.omega();
    let t = grid.transform();
    let eval = TorusEvaluator::new(phi.displacement.components());
    let solved: Vec<(Vec<f64>, f64, usize)> = (0..t.len())
        .into_par_iter()
        .map(|idx| newton_node(&eval, omega, &t.node(idx), idx, newton_tol, max_iter))
        .collect::<Result<_>>()?;
    let n = ms.space_dim();
    let mut comps = Vec::with_capacity(n);
    let mut aliasing = 0.0_f64;
    for j in 0..n {
        let samples: Vec<Complex64> = solved
            .iter()
            .map(|(g, _, _)| Complex64::new(g[j], 0.0))
            .collect();
        let c = t.analyze(samples.clone(), ms, false)?;
        let back = t.synthesize(&c)?;
        for (a, b) in samples.iter().zip(&back) {
            aliasing = aliasing.max((a - b).norm());
        }
        comps.push(c);
    }
    let inverse = QPDiffeo::new(QPVectorField::new(comps)?, grid)?;
    let round_trip_residual = round_trip(phi, &inverse);
    Ok(Inversion {
        inverse,
        round_trip_residual,
        newton_residual: solved.iter().map(|s| s.1).fold(0.0, f64::max),
        max_newton_iterations: solved.iter().map(|s| s.2).max().unwrap_or(0),
        aliasing_residual: aliasing,
    })
}

/// `max |φ(ψ(x)) − x|` over seeded random points of `[−10, 10]^n`.
pub fn round_trip(phi: &QPDiffeo, psi: &QPDiffeo) -> f64 {
    let n = phi.modes().space_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0x1d3e);
    (0..ROUND_TRIP_SAMPLES)
        .map(|_| {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let y = phi.apply(&psi.apply(&x));
            y.iter()
                .zip(&x)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// `invert` with the default Newton settings.
pub fn invert_default(phi: &QPDiffeo, grid: &TorusGrid) -> Result<Inversion> {
    invert(phi, grid, DEFAULT_NEWTON_TOL, DEFAULT_NEWTON_MAX_ITER)
}

fn wrap_half(x: f64) -> f64 {
    x - (x + 0.5).floor()
}

/// Samples of the torus lift, stored as displacements `Ω F(θ_j)` wrapped to
/// `[−½, ½)`.
#[derive(Clone, Debug)]
pub struct TorusDiffeo {
    points: usize,
    dim: usize,
    samples: Vec<f64>,
}

impl TorusDiffeo {
    pub fn points(&self) -> usize {
        self.points
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major `G^M × M` displacement samples.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn displacement_at(&self, node: usize) -> &[f64] {
        &self.samples[node * self.dim..(node + 1) * self.dim]
    }

    /// Largest wrapped displacement; zero exactly on the kernel of the lift.
    pub fn max_displacement(&self) -> f64 {
        self.samples.iter().map(|x| x.abs()).fold(0.0, f64::max)
    }

    /// Dense dump: a header line `M G`, then one line of `M` reals per node.
    pub fn write_samples<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.dim, self.points)?;
        for row in self.samples.chunks(self.dim) {
            let line: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

/// The lift `h(φ) = Φ` sampled on the grid.
pub fn lift(phi: &QPDiffeo, grid: &TorusGrid) -> Result<TorusDiffeo> {
    ensure_positive(phi)?;
    let ms = phi.modes();
    grid.check(ms)?;
    let t = grid.transform();
    let nodes = displaced_nodes(phi, grid)?;
    let mut samples = Vec::with_capacity(t.len() * t.dim());
    for (idx, sigma) in nodes.iter().enumerate() {
        for (s, th) in sigma.iter().zip(t.node(idx)) {
            samples.push(wrap_half(s - th));
        }
    }
    Ok(TorusDiffeo {
        points: t.points(),
        dim: t.dim(),
        samples,
    })
}

/// Largest torus distance between `h(ψ∘φ)(θ)` and `h(ψ)(h(φ)(θ))` over the
/// grid nodes.
pub fn homomorphism_check(psi: &QPDiffeo, phi: &QPDiffeo, grid: &TorusGrid) -> Result<f64> {
    let composed = compose_diffeo(psi, phi, grid)?.value;
    let omega = phi.modes().omega();
    let lhs = displaced_nodes(&composed, grid)?;
    let inner = displaced_nodes(phi, grid)?;
    let eval = TorusEvaluator::new(psi.displacement.components());
    let dev = lhs
        .par_iter()
        .zip(inner.par_iter())
        .map(|(l, s)| {
            let fv: Vec<f64> = eval.values(s).iter().map(|z| z.re).collect();
            let shift = omega.apply(&fv);
            l.iter()
                .zip(s.iter().zip(&shift))
                .map(|(a, (b, c))| wrap_half(a - (b + c)).abs())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Ok(dev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{canonical_omega, ModeIndex};

    fn id2(k: u32) -> Arc<ModeSet> {
        ModeSet::new(FrequencyMatrix::identity(2).unwrap(), k).unwrap()
    }

    fn small_diffeo(ms: &Arc<ModeSet>, amp: f64, grid: &TorusGrid) -> QPDiffeo {
        let f1 = QPScalar::sine(ms, &ModeIndex::new(vec![0, 1]), amp).unwrap();
        let f2 = QPScalar::cosine(ms, &ModeIndex::new(vec![1, 1]), amp).unwrap();
        QPDiffeo::new(QPVectorField::new(vec![f1, f2]).unwrap(), grid).unwrap()
    }

    #[test]
    fn grid_defaults() {
        let ms = id2(3);
        assert_eq!(TorusGrid::default_points(&ms), 16);
        assert!(matches!(TorusGrid::new(&ms, 13), Err(QpError::GridTooCoarse { required: 14, .. })));
    }

    #[test]
    fn identity_margin_is_one() {
        let ms = id2(2);
        let grid = TorusGrid::default_for(&ms).unwrap();
        let r = jacobian_margin_report(&QPVectorField::zero(&ms), &grid).unwrap();
        assert_eq!(r.margin, 1.0);
        assert_eq!(r.sylvester_defect, 0.0);
    }

    #[test]
    fn fold_has_negative_margin() {
        let ms = id2(2);
        let grid = TorusGrid::default_for(&ms).unwrap();
        // d/dx of a sin(2πx) reaches −2πa; a > 1/(2π) folds
        let f = QPScalar::sine(&ms, &ModeIndex::new(vec![1, 0]), 0.3).unwrap();
        let u = QPVectorField::new(vec![f, QPScalar::zero(&ms)]).unwrap();
        assert!(jacobian_margin(&u, &grid).unwrap() < 0.0);
        assert!(matches!(QPDiffeo::new(u, &grid), Err(QpError::NonPositiveMargin(_))));
    }

    #[test]
    fn translation_rotates_coefficient() {
        let ms = ModeSet::new(canonical_omega(2, &[0.6, 0.8]).unwrap(), 2).unwrap();
        let grid = TorusGrid::default_for(&ms).unwrap();
        let m = ModeIndex::new(vec![1, 0, 1]);
        let g = QPScalar::exponential(&ms, &m, Complex64::new(1.0, 0.0)).unwrap();
        let c = [0.3, -0.2];
        let phi = QPDiffeo::translation(&ms, &c).unwrap();
        let r = compose_field(&g, &phi, &grid).unwrap();
        let lam = ms.lambda_of(&m).unwrap();
        let expected = Complex64::from_polar(1.0, lam[0] * c[0] + lam[1] * c[1]);
        assert!((r.value.coefficient(&m) - expected).norm() < 1e-13);
        assert!(r.aliasing_residual < 1e-13);
    }

    #[test]
    fn compose_with_identity_is_exact() {
        let ms = id2(3);
        let grid = TorusGrid::default_for(&ms).unwrap();
        let g = QPScalar::cosine(&ms, &ModeIndex::new(vec![2, -3]), 0.4).unwrap();
        let r = compose_field(&g, &QPDiffeo::identity(&ms), &grid).unwrap();
        assert!(r.value.sub(&g).unwrap().max_coefficient() < 1e-15);
    }

    #[test]
    fn compose_matches_pointwise() {
        let ms = id2(6);
        let grid = TorusGrid::new(&ms, 64).unwrap();
        let phi = small_diffeo(&ms, 0.01, &grid);
        let g = QPScalar::cosine(&ms, &ModeIndex::new(vec![1, 2]), 1.0).unwrap();
        let r = compose_field(&g, &phi, &grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let direct = g.evaluate(&phi.apply(&x));
            assert!((r.value.evaluate(&x) - direct).abs() <= 1e-9 + 10.0 * r.aliasing_residual);
        }
    }

    #[test]
    fn translations_compose_and_invert() {
        let ms = id2(2);
        let grid = TorusGrid::default_for(&ms).unwrap();
        let a = QPDiffeo::translation(&ms, &[0.1, 0.2]).unwrap();
        let b = QPDiffeo::translation(&ms, &[-0.4, 0.05]).unwrap();
        let ab = compose_diffeo(&a, &b, &grid).unwrap().value;
        let mean = ab.displacement().mean();
        assert!((mean[0].re + 0.3).abs() < 1e-15 && (mean[1].re - 0.25).abs() < 1e-15);
        let inv = invert_default(&a, &grid).unwrap();
        let im = inv.inverse.displacement().mean();
        assert!((im[0].re + 0.1).abs() < 1e-15 && (im[1].re + 0.2).abs() < 1e-15);
        assert_eq!(inv.inverse.displacement().support_slots(), vec![ms.zero_slot()]);
    }

    #[test]
    fn inversion_round_trip() {
        let ms = id2(10);
        let grid = TorusGrid::new(&ms, 64).unwrap();
        let phi = small_diffeo(&ms, 0.005, &grid);
        let inv = invert_default(&phi, &grid).unwrap();
        assert!(inv.round_trip_residual < 1e-8, "{}", inv.round_trip_residual);
    }

    #[test]
    fn lattice_translation_lifts_to_identity() {
        let ms = id2(2);
        let grid = TorusGrid::default_for(&ms).unwrap();
        let phi = QPDiffeo::translation(&ms, &[1.0, -3.0]).unwrap();
        assert!(lift(&phi, &grid).unwrap().max_displacement() < 1e-12);
        let x = [0.3, 0.7];
        let y = phi.apply(&x);
        assert_eq!(y, vec![1.3, -2.3]);
    }

    #[test]
    fn sample_dump_header() {
        let ms = id2(1);
        let grid = TorusGrid::default_for(&ms).unwrap();
        let l = lift(&QPDiffeo::identity(&ms), &grid).unwrap();
        let mut buf = Vec::new();
        l.write_samples(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("2 8\n"));
        assert_eq!(text.lines().count(), 65);
    }
}
