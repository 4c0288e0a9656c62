//! Text formats: coefficient dumps with a snapshot header, and dense
//! evaluation grids.

use std::io::{BufRead, Write};
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{QpError, Result};
use crate::field::{NormParams, QPScalar, QPVectorField};
use crate::lattice::{FrequencyMatrix, ModeIndex, ModeSet};

/// Writes one line per mode in the union support, in lexicographic order:
/// `m₁ … m_M Λ₁ … Λ_n` then `re im` per component.
pub fn write_coefficients<W: Write>(mut w: W, comps: &[QPScalar]) -> std::io::Result<()> {
    let Some(first) = comps.first() else {
        return Ok(());
    };
    let ms = first.modes();
    let mut slots: Vec<usize> = comps
        .iter()
        .flat_map(|c| c.slot_coefficients().iter().map(|&(s, _)| s))
        .collect();
    slots.sort_unstable();
    slots.dedup();
    for s in slots {
        let mut cols: Vec<String> = ms.digits(s).iter().map(|d| d.to_string()).collect();
        cols.extend(ms.lambda(s).iter().map(|l| format!("{l:.16e}")));
        for c in comps {
            let z = c.coefficient_at(s);
            cols.push(format!("{:.16e}", z.re));
            cols.push(format!("{:.16e}", z.im));
        }
        writeln!(w, "{}", cols.join(" "))?;
    }
    Ok(())
}

/// A field state with the metadata needed to rebuild its mode set.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub t: f64,
    pub field: QPVectorField,
    pub norm: NormParams,
}

impl Snapshot {
    /// Header lines `# key = value` (t, omega, K, l, s, components), then the
    /// coefficient records.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let ms = self.field.modes();
        writeln!(w, "# t = {:.16e}", self.t)?;
        let rows = serde_json::to_string(&ms.omega().rows()).expect("finite matrix");
        writeln!(w, "# omega = {rows}")?;
        writeln!(w, "# K = {}", ms.radius())?;
        writeln!(w, "# l = {}", self.norm.l)?;
        writeln!(w, "# s = {}", self.norm.s)?;
        writeln!(w, "# components = {}", self.field.dim())?;
        write_coefficients(&mut w, self.field.components())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let bad = |msg: String| QpError::InvalidArgument(format!("snapshot: {msg}"));
        let mut t = None;
        let mut omega: Option<Vec<Vec<f64>>> = None;
        let mut radius = None;
        let mut l = None;
        let mut s = None;
        let mut components = None;
        let mut records: Vec<(Vec<i32>, Vec<Complex64>)> = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(|e| bad(e.to_string()))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                let (key, value) = h
                    .split_once('=')
                    .ok_or_else(|| bad(format!("line {}: malformed header", lineno + 1)))?;
                let value = value.trim();
                let num = |v: &str| -> Result<f64> {
                    v.parse::<f64>()
                        .map_err(|_| bad(format!("line {}: bad number {v:?}", lineno + 1)))
                };
                match key.trim() {
                    "t" => t = Some(num(value)?),
                    "omega" => {
                        omega = Some(serde_json::from_str(value).map_err(|e| {
                            bad(format!("line {}: omega: {e}", lineno + 1))
                        })?)
                    }
                    "K" => radius = Some(num(value)? as u32),
                    "l" => l = Some(num(value)? as u32),
                    "s" => s = Some(num(value)?),
                    "components" => components = Some(num(value)? as usize),
                    _ => {}
                }
                continue;
            }
            let (Some(rows), Some(nc)) = (&omega, components) else {
                return Err(bad("coefficients before the header".into()));
            };
            let mm = rows.len();
            let n = rows.first().map_or(0, Vec::len);
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != mm + n + 2 * nc {
                return Err(bad(format!(
                    "line {}: expected {} columns, found {}",
                    lineno + 1,
                    mm + n + 2 * nc,
                    cols.len()
                )));
            }
            let m = cols[..mm]
                .iter()
                .map(|c| c.parse::<i32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(format!("line {}: bad mode index", lineno + 1)))?;
            let vals = cols[mm + n..]
                .iter()
                .map(|c| c.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(format!("line {}: bad coefficient", lineno + 1)))?;
            let coeffs = vals.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect();
            records.push((m, coeffs));
        }
        let missing = |k: &str| bad(format!("missing header field {k}"));
        let rows = omega.ok_or_else(|| missing("omega"))?;
        let ms = ModeSet::new(
            FrequencyMatrix::from_rows(&rows)?,
            radius.ok_or_else(|| missing("K"))?,
        )?;
        let nc = components.ok_or_else(|| missing("components"))?;
        let mut per: Vec<Vec<(ModeIndex, Complex64)>> = vec![Vec::new(); nc];
        for (m, cs) in records {
            for (j, c) in cs.into_iter().enumerate() {
                per[j].push((ModeIndex(m.clone()), c));
            }
        }
        let comps = per
            .into_iter()
            .map(|e| QPScalar::from_modes(&ms, e))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            t: t.ok_or_else(|| missing("t"))?,
            field: QPVectorField::new(comps)?,
            norm: NormParams {
                l: l.ok_or_else(|| missing("l"))?,
                s: s.ok_or_else(|| missing("s"))?,
            },
        })
    }

    pub fn modes(&self) -> &Arc<ModeSet> {
        self.field.modes()
    }
}

/// Largest number of points accepted by [`export_grid`].
pub const GRID_POINT_BUDGET: usize = 10_000_000;

/// Evaluates every component on the rectangular grid spanned by `lo`, `hi`
/// with `resolution[i]` points along axis `i` (endpoints included). Writes a
/// header then one row per point, first coordinate most significant:
/// `x₁ … x_n u₁ … u_c`.
pub fn export_grid<W: Write>(
    mut w: W,
    field: &QPVectorField,
    lo: &[f64],
    hi: &[f64],
    resolution: &[usize],
) -> Result<usize> {
    let n = field.modes().space_dim();
    if lo.len() != n || hi.len() != n || resolution.len() != n {
        return Err(QpError::InvalidDimensions(format!(
            "window and resolution need {n} entries each"
        )));
    }
    if resolution.contains(&0) {
        return Err(QpError::InvalidArgument("resolution must be positive".into()));
    }
    let total = resolution
        .iter()
        .try_fold(1usize, |acc, &r| acc.checked_mul(r))
        .filter(|&t| t <= GRID_POINT_BUDGET)
        .ok_or_else(|| {
            QpError::InvalidArgument(format!(
                "grid of {resolution:?} points exceeds the budget of {GRID_POINT_BUDGET}"
            ))
        })?;
    let io = |e: std::io::Error| QpError::InvalidArgument(format!("write failed: {e}"));
    let join = |v: &[f64]| v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(" ");
    writeln!(w, "# lo = {}", join(lo)).map_err(io)?;
    writeln!(w, "# hi = {}", join(hi)).map_err(io)?;
    let res: Vec<String> = resolution.iter().map(|r| r.to_string()).collect();
    writeln!(w, "# resolution = {}", res.join(" ")).map_err(io)?;
    writeln!(w, "# components = {}", field.dim()).map_err(io)?;
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        let x: Vec<f64> = (0..n)
            .map(|i| {
                if resolution[i] == 1 {
                    lo[i]
                } else {
                    lo[i] + (hi[i] - lo[i]) * idx[i] as f64 / (resolution[i] - 1) as f64
                }
            })
            .collect();
        let v = field.evaluate(&x);
        writeln!(w, "{} {}", join(&x), join(&v)).map_err(io)?;
        for i in (0..n).rev() {
            idx[i] += 1;
            if idx[i] < resolution[i] {
                break;
            }
            idx[i] = 0;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::canonical_omega;

    #[test]
    fn snapshot_round_trip() {
        let ms = ModeSet::new(canonical_omega(2, &[0.6, 0.8]).unwrap(), 2).unwrap();
        let u = crate::presets::random_divfree(&ms, 3, 1, 0.5, 2.0).unwrap();
        let snap = Snapshot {
            t: 0.125,
            field: u.clone(),
            norm: NormParams { l: 1, s: 2.0 },
        };
        let mut buf = Vec::new();
        snap.write(&mut buf).unwrap();
        let back = Snapshot::read(buf.as_slice()).unwrap();
        assert_eq!(back.t, 0.125);
        assert_eq!(back.norm, snap.norm);
        let d = back.field.components()[0]
            .slot_coefficients()
            .iter()
            .zip(u.components()[0].slot_coefficients())
            .all(|(a, b)| a == b);
        assert!(d);
    }

    #[test]
    fn grid_of_constant() {
        let ms = ModeSet::new(FrequencyMatrix::identity(2).unwrap(), 1).unwrap();
        let u = QPVectorField::constant(&ms, &[2.0, -1.0]).unwrap();
        let mut buf = Vec::new();
        let count = export_grid(&mut buf, &u, &[0.0, 0.0], &[1.0, 2.0], &[3, 4]).unwrap();
        assert_eq!(count, 12);
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows.len(), 12);
        assert!(rows.iter().all(|r| r.ends_with("2.0000000000000000e0 -1.0000000000000000e0")));
        assert!(export_grid(Vec::new(), &u, &[0.0, 0.0], &[1.0, 1.0], &[10_000, 10_000]).is_err());
    }
}
