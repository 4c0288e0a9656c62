//! Uniform grids on the torus `T^M` and the M-dimensional discrete Fourier
//! transform between box coefficients and grid samples.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{QpError, Result};
use crate::field::QPScalar;
use crate::lattice::ModeSet;

/// Nodes `θ_j = (j_1/G, …, j_M/G)`, stored row-major with the first torus
/// coordinate most significant.
#[derive(Clone)]
pub struct TorusTransform {
    points: usize,
    dim: usize,
    total: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for TorusTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TorusTransform")
            .field("points", &self.points)
            .field("dim", &self.dim)
            .finish()
    }
}

impl TorusTransform {
    pub fn new(dim: usize, points: usize) -> Result<Self> {
        if dim == 0 || points == 0 {
            return Err(QpError::InvalidDimensions(format!(
                "torus grid needs positive dimension and size, got M = {dim}, G = {points}"
            )));
        }
        let total = points
            .checked_pow(dim as u32)
            .filter(|&t| t <= 1 << 28)
            .ok_or_else(|| {
                QpError::InvalidArgument(format!("torus grid {points}^{dim} is too large"))
            })?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            points,
            dim,
            total,
            forward: planner.plan_fft_forward(points),
            inverse: planner.plan_fft_inverse(points),
        })
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of nodes, `G^M`.
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Integer coordinates of node `idx`.
    pub fn node_digits(&self, mut idx: usize) -> Vec<usize> {
        let mut d = vec![0; self.dim];
        for k in (0..self.dim).rev() {
            d[k] = idx % self.points;
            idx /= self.points;
        }
        d
    }

    /// `θ` of node `idx` in `[0, 1)^M`.
    pub fn node(&self, idx: usize) -> Vec<f64> {
        let g = self.points as f64;
        self.node_digits(idx).into_iter().map(|j| j as f64 / g).collect()
    }

    fn grid_index(&self, digits: &[i32]) -> usize {
        let g = self.points as i64;
        digits
            .iter()
            .fold(0usize, |acc, &m| acc * self.points + (m as i64).rem_euclid(g) as usize)
    }

    fn check_resolves(&self, ms: &ModeSet) -> Result<()> {
        if ms.torus_dim() != self.dim {
            return Err(QpError::InvalidDimensions(format!(
                "grid dimension {} does not match torus dimension {}",
                self.dim,
                ms.torus_dim()
            )));
        }
        let required = ms.side();
        if self.points < required {
            return Err(QpError::GridTooCoarse {
                points: self.points,
                radius: ms.radius(),
                required,
            });
        }
        Ok(())
    }

    /// Samples `F(θ_j) = Σ_m f̂_m e^{2πi (m, θ_j)}` at every node.
    pub fn synthesize(&self, f: &QPScalar) -> Result<Vec<Complex64>> {
        let ms = f.modes();
        self.check_resolves(ms)?;
        let mut data = vec![Complex64::new(0.0, 0.0); self.total];
        for &(s, c) in f.slot_coefficients() {
            data[self.grid_index(ms.digits(s))] += c;
        }
        self.transform(&mut data, true);
        Ok(data)
    }

    /// Box coefficients `c_m = G^{−M} Σ_j F(θ_j) e^{−2πi (m, θ_j)}`; the
    /// result is symmetrized unless `complex`.
    pub fn analyze(
        &self,
        mut samples: Vec<Complex64>,
        ms: &Arc<ModeSet>,
        complex: bool,
    ) -> Result<QPScalar> {
        self.check_resolves(ms)?;
        if samples.len() != self.total {
            return Err(QpError::InvalidDimensions(format!(
                "{} samples for a grid of {} nodes",
                samples.len(),
                self.total
            )));
        }
        self.transform(&mut samples, false);
        let scale = 1.0 / self.total as f64;
        let raw = (0..ms.len())
            .map(|s| (s, samples[self.grid_index(ms.digits(s))] * scale))
            .collect();
        Ok(QPScalar::from_raw_coefficients(ms, raw, complex))
    }

    /// In-place unnormalized M-dimensional transform, axis by axis.
    pub fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let fft = if inverse { &self.inverse } else { &self.forward };
        let g = self.points;
        let mut buf = Vec::new();
        for axis in 0..self.dim {
            let stride = g.pow((self.dim - 1 - axis) as u32);
            if stride == 1 {
                fft.process(data);
                continue;
            }
            let block = g * stride;
            buf.resize(block, Complex64::new(0.0, 0.0));
            for chunk in data.chunks_mut(block) {
                // line i occupies buf[i*g .. (i+1)*g]
                for k in 0..g {
                    for i in 0..stride {
                        buf[i * g + k] = chunk[k * stride + i];
                    }
                }
                fft.process(&mut buf);
                for k in 0..g {
                    for i in 0..stride {
                        chunk[k * stride + i] = buf[i * g + k];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{canonical_omega, FrequencyMatrix, ModeIndex};

    #[test]
    fn synthesize_matches_direct_summation() {
        let ms = ModeSet::new(canonical_omega(2, &[0.6, 0.8]).unwrap(), 2).unwrap();
        let f = QPScalar::from_modes(
            &ms,
            [
                (ModeIndex::new(vec![1, -2, 0]), Complex64::new(0.3, 0.1)),
                (ModeIndex::new(vec![0, 1, 2]), Complex64::new(-0.2, 0.5)),
            ],
        )
        .unwrap();
        let t = TorusTransform::new(3, 6).unwrap();
        let samples = t.synthesize(&f).unwrap();
        for idx in [0, 17, 101, 215] {
            let th = t.node(idx);
            let direct: Complex64 = f
                .iter()
                .map(|(m, c)| {
                    let ph: f64 = m.0.iter().zip(&th).map(|(&mi, t)| mi as f64 * t).sum();
                    c * Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * ph)
                })
                .sum();
            assert!((samples[idx] - direct).norm() < 1e-14);
        }
    }

    #[test]
    fn analyze_inverts_synthesize() {
        let ms = ModeSet::new(FrequencyMatrix::identity(2).unwrap(), 3).unwrap();
        let f = QPScalar::from_modes(
            &ms,
            [
                (ModeIndex::new(vec![3, -3]), Complex64::new(1.0, -0.5)),
                (ModeIndex::new(vec![0, 2]), Complex64::new(0.25, 0.0)),
            ],
        )
        .unwrap();
        let t = TorusTransform::new(2, 7).unwrap();
        let g = t.analyze(t.synthesize(&f).unwrap(), &ms, false).unwrap();
        assert!(f.sub(&g).unwrap().max_coefficient() < 1e-15);
    }

    #[test]
    fn coarse_grid_rejected() {
        let ms = ModeSet::new(FrequencyMatrix::identity(2).unwrap(), 3).unwrap();
        let t = TorusTransform::new(2, 6).unwrap();
        assert!(matches!(
            t.synthesize(&QPScalar::zero(&ms)),
            Err(QpError::GridTooCoarse { required: 7, .. })
        ));
    }
}
