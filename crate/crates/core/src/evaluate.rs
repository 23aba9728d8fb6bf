//! Density grids, Monte Carlo integrated squared error, energy-adjusted
//! densities and residual diagnostics.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latent::RecallDataset;
use crate::quadrature::{integrate, QuadratureError};
use crate::sampler::{PosteriorDensity, PosteriorDraws, SamplerError};

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("truth density is {value} at evaluation point {index}")]
    ZeroTruth { index: usize, value: f64 },
    #[error("no evaluation points")]
    NoPoints,
    #[error("grid axis {0} is not strictly increasing")]
    Axis(usize),
    #[error("grid has {got} values, expected {expected}")]
    Shape { got: usize, expected: usize },
    #[error("negative density {value} at grid index {index}")]
    Negative { index: usize, value: f64 },
    #[error("need at least two occasions per subject for residual pairs")]
    TooFewOccasions,
    #[error("malformed grid file at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What a grid holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    /// Marginal intake density.
    Marginal,
    /// Bivariate intake density.
    Joint,
    /// Density of the scaled errors.
    Error,
    /// Variance function `s²`.
    Variance,
    /// Consumption probability `P`.
    Probability,
    /// Density of an intake ratio to the energy component.
    EnergyAdjusted,
}

impl GridKind {
    fn label(self) -> &'static str {
        match self {
            Self::Marginal => "marginal",
            Self::Joint => "joint",
            Self::Error => "error",
            Self::Variance => "variance",
            Self::Probability => "probability",
            Self::EnergyAdjusted => "energy-adjusted",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            Self::Marginal,
            Self::Joint,
            Self::Error,
            Self::Variance,
            Self::Probability,
            Self::EnergyAdjusted,
        ]
        .into_iter()
        .find(|k| k.label() == s)
    }

    pub fn is_density(self) -> bool {
        matches!(self, Self::Marginal | Self::Joint | Self::Error | Self::EnergyAdjusted)
    }
}

/// Values on a one- or two-dimensional rectilinear grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub kind: GridKind,
    pub components: Vec<String>,
    pub axes: Vec<Vec<f64>>,
    /// Row-major over the axes (first axis slowest).
    pub values: Vec<f64>,
    pub draws: usize,
    pub scenario: Option<String>,
    /// Multipliers that map raw units to the fitted scale, one per component.
    pub scale_factors: Vec<f64>,
    /// Whether axes and values are in raw (unscaled) units.
    pub raw: bool,
}

impl DensityGrid {
    pub fn new(
        kind: GridKind,
        components: Vec<String>,
        axes: Vec<Vec<f64>>,
        values: Vec<f64>,
        draws: usize,
        scale_factors: Vec<f64>,
    ) -> Result<Self, EvaluateError> {
        let g = Self {
            kind,
            components,
            axes,
            values,
            draws,
            scenario: None,
            scale_factors,
            raw: false,
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<(), EvaluateError> {
        for (a, axis) in self.axes.iter().enumerate() {
            if axis.is_empty() || axis.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(EvaluateError::Axis(a));
            }
        }
        let expected: usize = self.axes.iter().map(Vec::len).product();
        if self.values.len() != expected || self.axes.is_empty() || self.axes.len() > 2 {
            return Err(EvaluateError::Shape {
                got: self.values.len(),
                expected,
            });
        }
        if self.kind.is_density() {
            if let Some((index, &value)) = self.values.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
                return Err(EvaluateError::Negative { index, value });
            }
        }
        Ok(())
    }

    /// Trapezoid integral over the grid (iterated in two dimensions).
    pub fn integral(&self) -> f64 {
        match self.axes.len() {
            1 => trapezoid(&self.axes[0], &self.values),
            _ => {
                let ny = self.axes[1].len();
                let rows: Vec<f64> = self
                    .values
                    .chunks(ny)
                    .map(|row| trapezoid(&self.axes[1], row))
                    .collect();
                trapezoid(&self.axes[0], &rows)
            }
        }
    }

    /// Rescales the values to unit trapezoid integral.
    pub fn renormalize(&mut self) {
        let total = self.integral();
        if total > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= total);
        }
    }

    /// Undoes the per-component scaling: axes are divided by the factors and
    /// values pick up the change-of-variables Jacobian.
    pub fn to_raw(&self) -> Self {
        if self.raw {
            return self.clone();
        }
        let mut out = self.clone();
        out.raw = true;
        let c = &self.scale_factors;
        match self.kind {
            GridKind::Marginal | GridKind::Joint => {
                for (axis, f) in out.axes.iter_mut().zip(c) {
                    axis.iter_mut().for_each(|v| *v /= f);
                }
                let jac: f64 = c.iter().product();
                out.values.iter_mut().for_each(|v| *v *= jac);
            }
            GridKind::Error => {}
            GridKind::Variance => {
                out.axes[0].iter_mut().for_each(|v| *v /= c[0]);
                out.values.iter_mut().for_each(|v| *v /= c[0] * c[0]);
            }
            GridKind::Probability => {
                out.axes[0].iter_mut().for_each(|v| *v /= c[0]);
            }
            GridKind::EnergyAdjusted => {
                // scaled ratio = (c_l / c_J) · raw ratio
                let r = c[0] / c[1];
                out.axes[0].iter_mut().for_each(|v| *v /= r);
                out.values.iter_mut().for_each(|v| *v *= r);
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), EvaluateError> {
        writeln!(w, "# kind={}", self.kind.label())?;
        writeln!(w, "# components={}", self.components.join(";"))?;
        writeln!(w, "# draws={}", self.draws)?;
        let factors: Vec<String> = self.scale_factors.iter().map(|v| v.to_string()).collect();
        writeln!(w, "# scale_factors={}", factors.join(";"))?;
        writeln!(w, "# units={}", if self.raw { "raw" } else { "scaled" })?;
        if let Some(s) = &self.scenario {
            writeln!(w, "# scenario={s}")?;
        }
        if self.axes.len() == 1 {
            writeln!(w, "x,value")?;
            for (x, v) in self.axes[0].iter().zip(&self.values) {
                writeln!(w, "{x},{v}")?;
            }
        } else {
            writeln!(w, "x1,x2,value")?;
            let ny = self.axes[1].len();
            for (a, x1) in self.axes[0].iter().enumerate() {
                for (b, x2) in self.axes[1].iter().enumerate() {
                    writeln!(w, "{x1},{x2},{}", self.values[a * ny + b])?;
                }
            }
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, EvaluateError> {
        let mut kind = None;
        let mut components = Vec::new();
        let mut draws = 0;
        let mut scale_factors = Vec::new();
        let mut raw = false;
        let mut scenario = None;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (n, line) in BufReader::new(r).lines().enumerate() {
            let line = line?;
            let bad = |message: String| EvaluateError::Format { line: n + 1, message };
            if let Some(meta) = line.strip_prefix("# ") {
                let (key, value) = meta.split_once('=').ok_or_else(|| bad("expected key=value".into()))?;
                match key {
                    "kind" => {
                        kind = Some(GridKind::parse(value).ok_or_else(|| bad(format!("unknown kind `{value}`")))?)
                    }
                    "components" => components = value.split(';').map(String::from).collect(),
                    "draws" => draws = value.parse().map_err(|_| bad("bad draw count".into()))?,
                    "scale_factors" => {
                        scale_factors = value
                            .split(';')
                            .map(|s| s.parse::<f64>().map_err(|_| bad("bad scale factor".into())))
                            .collect::<Result<_, _>>()?
                    }
                    "units" => raw = value == "raw",
                    "scenario" => scenario = Some(value.to_string()),
                    _ => {}
                }
                continue;
            }
            if line.starts_with('x') || line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|s| s.parse::<f64>().map_err(|_| bad(format!("bad number in `{line}`"))))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        let kind = kind.ok_or(EvaluateError::Format {
            line: 1,
            message: "missing kind".into(),
        })?;
        let width = rows.first().map(Vec::len).unwrap_or(2);
        let (axes, values) = if width == 2 {
            (
                vec![rows.iter().map(|r| r[0]).collect()],
                rows.iter().map(|r| r[1]).collect(),
            )
        } else {
            let mut a1: Vec<f64> = Vec::new();
            let mut a2: Vec<f64> = Vec::new();
            for r in &rows {
                if a1.last() != Some(&r[0]) {
                    a1.push(r[0]);
                }
                if a1.len() == 1 {
                    a2.push(r[1]);
                }
            }
            (vec![a1, a2], rows.iter().map(|r| r[2]).collect())
        };
        let g = Self {
            kind,
            components,
            axes,
            values,
            draws,
            scenario,
            scale_factors,
            raw,
        };
        g.validate()?;
        Ok(g)
    }
}

/// Trapezoid rule on a nonuniform axis.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(a, b)| 0.5 * (a[1] - a[0]) * (b[0] + b[1]))
        .sum()
}

/// Evenly spaced grid with both ends included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Monte Carlo integrated squared error `(1/M) Σ (f - f̂)² / f` over points
/// drawn from the truth `f`.
pub fn ise_estimate<F, G>(truth: F, estimate: G, points: &[Vec<f64>]) -> Result<f64, EvaluateError>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> f64,
{
    if points.is_empty() {
        return Err(EvaluateError::NoPoints);
    }
    let mut total = 0.0;
    for (index, x) in points.iter().enumerate() {
        let f = truth(x);
        if !(f > 0.0) {
            return Err(EvaluateError::ZeroTruth { index, value: f });
        }
        let g = estimate(x);
        total += (f - g).powi(2) / f;
    }
    Ok(total / points.len() as f64)
}

/// ISE values of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IseReport {
    pub scenario: String,
    pub method: String,
    pub points: usize,
    /// `(target, ise)`; the joint first, then each marginal.
    pub targets: Vec<(String, f64)>,
}

impl IseReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), EvaluateError> {
        writeln!(w, "scenario,method,target,points,ise")?;
        for (t, v) in &self.targets {
            writeln!(w, "{},{},{t},{},{v}", self.scenario, self.method, self.points)?;
        }
        Ok(())
    }

    pub fn get(&self, target: &str) -> Option<f64> {
        self.targets.iter().find(|(t, _)| t == target).map(|(_, v)| *v)
    }
}

/// Density of `Z = X_l / X_J` from the joint density of `(X_l, X_J)`:
/// `f_Z(z) = ∫ x f(z x, x) dx`. `supports` bounds `(X_l, X_J)` so that each
/// integral runs only where both are in range; `None` integrates over the
/// positive half-line.
pub fn energy_adjusted_marginal<F>(
    joint: F,
    z_grid: &[f64],
    supports: Option<[(f64, f64); 2]>,
    components: [&str; 2],
    scale_factors: [f64; 2],
) -> Result<DensityGrid, EvaluateError>
where
    F: Fn(f64, f64) -> f64,
{
    let values = z_grid
        .iter()
        .map(|&z| ratio_density(&joint, z, supports, (1e-10, 1e-9)))
        .collect::<Result<Vec<_>, EvaluateError>>()?;
    DensityGrid::new(
        GridKind::EnergyAdjusted,
        components.iter().map(|s| s.to_string()).collect(),
        vec![z_grid.to_vec()],
        values,
        0,
        scale_factors.to_vec(),
    )
}

fn ratio_density<F>(joint: &F, z: f64, supports: Option<[(f64, f64); 2]>, tol: (f64, f64)) -> Result<f64, EvaluateError>
where
    F: Fn(f64, f64) -> f64,
{
    let (abs_tol, rel_tol) = tol;
    let v = match supports {
        Some([(la, ha), (lj, hj)]) => {
            let (mut lo, mut hi) = (lj, hj);
            if z > 0.0 {
                lo = lo.max(la / z);
                hi = hi.min(ha / z);
            }
            if hi > lo {
                integrate(|x| x * joint(z * x, x), lo, hi, abs_tol, rel_tol)?
            } else {
                0.0
            }
        }
        None => integrate(
            |t| {
                if t >= 1.0 {
                    return 0.0;
                }
                let x = t / (1.0 - t);
                let jac = 1.0 / ((1.0 - t) * (1.0 - t));
                let v = x * joint(z * x, x) * jac;
                if v.is_finite() {
                    v
                } else {
                    0.0
                }
            },
            0.0,
            1.0,
            abs_tol,
            rel_tol,
        )?,
    };
    Ok(v.max(0.0))
}

/// Energy-adjusted density of component `l` against `j` from a fit, on the
/// fitted scale. The ratio grid is log-spaced; its ends are pushed out until
/// `z f_Z(z)` falls below `1e-4` on both sides, which bounds each tail mass
/// for densities decaying like `1/z²` or faster. Returns the renormalized
/// grid and its trapezoid mass before renormalization.
pub fn energy_adjusted_posterior(
    post: &PosteriorDensity,
    l: usize,
    j: usize,
    points: usize,
) -> Result<(DensityGrid, f64), EvaluateError> {
    if points < 2 {
        return Err(EvaluateError::Shape {
            got: points,
            expected: 2,
        });
    }
    let support = post.dims().support;
    let supports = Some([support, support]);
    let table = post.bivariate_table(l, j, 4001);
    let joint = |a: f64, b: f64| table.pdf(a, b);
    // the interpolated joint is only piecewise smooth
    let f = |z: f64| ratio_density(&joint, z, supports, (1e-8, 1e-6));
    let probe: Vec<f64> = (0..=24).map(|k| 10f64.powf(-3.0 + 0.25 * k as f64)).collect();
    let mut mode = (probe[0], -1.0);
    for &z in &probe {
        let v = f(z)?;
        if v > mode.1 {
            mode = (z, v);
        }
    }
    let tail = 1e-4;
    let mut hi = mode.0;
    while hi * f(hi)? > tail && hi < 1e8 {
        hi *= 2.0;
    }
    let mut lo = mode.0;
    while lo * f(lo)? > tail && lo > 1e-10 {
        lo /= 2.0;
    }
    let ratio = (hi / lo).ln() / (points - 1) as f64;
    let z: Vec<f64> = (0..points).map(|k| lo * (ratio * k as f64).exp()).collect();
    let values = z.iter().map(|&v| f(v)).collect::<Result<Vec<_>, _>>()?;
    let names = post.names();
    let c = post.scale_factors();
    let mut g = DensityGrid::new(
        GridKind::EnergyAdjusted,
        vec![names[l].clone(), names[j].clone()],
        vec![z],
        values,
        post.len(),
        vec![c[l], c[j]],
    )?;
    let mass = g.integral();
    g.renormalize();
    Ok((g, mass))
}

/// Correlation of estimated scaled errors on adjacent occasions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub component: String,
    /// 1-based occasion pair `(j, j + 1)`.
    pub occasions: (usize, usize),
    pub pairs: usize,
    pub correlation: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Pearson correlation with a Fisher-z 95% interval.
pub fn pearson_with_interval(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    let r = if saa > 0.0 && sbb > 0.0 {
        (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
    } else {
        f64::NAN
    };
    if n <= 3.0 || !r.is_finite() || r.abs() == 1.0 {
        return (r, r, r);
    }
    let z = r.atanh();
    let half = 1.959_963_984_540_054 / (n - 3.0).sqrt();
    (r, (z - half).tanh(), (z + half).tanh())
}

/// Adjacent-occasion correlations of `ε̂ = (W - X̃̂) / ŝ(X̃̂)` per amount
/// component, using posterior mean intakes. `data` must be on the fitted
/// scale. Episodic amounts enter only where both recalls are positive.
pub fn residual_diagnostics(draws: &PosteriorDraws, data: &RecallDataset) -> Result<Vec<ResidualRow>, EvaluateError> {
    let post = PosteriorDensity::from_draws(draws)?;
    let layout = draws.layout();
    let q = layout.dims.q;
    let d = layout.dims.components();
    let max_occ = (0..data.num_subjects())
        .map(|i| data.subject(i).len())
        .max()
        .unwrap_or(0);
    if max_occ < 2 {
        return Err(EvaluateError::TooFewOccasions);
    }
    // per subject: estimated X̃ and s for each amount coordinate
    let mut resid: Vec<Vec<Vec<Option<f64>>>> = Vec::with_capacity(data.num_subjects());
    for i in 0..data.num_subjects() {
        let x = &layout.posterior_mean_x[i];
        let xt = post.x_tilde(x);
        let sd: Vec<f64> = (0..d).map(|k| post.variance(k, xt[q + k]).sqrt()).collect();
        let rows = data
            .subject(i)
            .iter()
            .map(|y| {
                (0..d)
                    .map(|k| {
                        if k < q && y[k] <= 0.0 {
                            None
                        } else {
                            Some((y[k] - xt[q + k]) / sd[k])
                        }
                    })
                    .collect()
            })
            .collect();
        resid.push(rows);
    }
    let mut out = Vec::new();
    for k in 0..d {
        for j in 0..max_occ - 1 {
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for r in &resid {
                if r.len() > j + 1 {
                    if let (Some(u), Some(v)) = (r[j][k], r[j + 1][k]) {
                        a.push(u);
                        b.push(v);
                    }
                }
            }
            if a.len() < 2 {
                continue;
            }
            let (r, lo, hi) = pearson_with_interval(&a, &b);
            out.push(ResidualRow {
                component: layout.names[k].clone(),
                occasions: (j + 1, j + 2),
                pairs: a.len(),
                correlation: r,
                ci_low: lo,
                ci_high: hi,
            });
        }
    }
    Ok(out)
}

pub fn write_residual_csv<W: Write>(rows: &[ResidualRow], mut w: W) -> Result<(), EvaluateError> {
    writeln!(w, "component,occasion_a,occasion_b,pairs,correlation,ci_low,ci_high")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.component, r.occasions.0, r.occasions.1, r.pairs, r.correlation, r.ci_low, r.ci_high
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ise_zero_for_identical() {
        let pts = vec![vec![0.1], vec![0.5]];
        let f = |x: &[f64]| 1.0 + x[0];
        assert_eq!(ise_estimate(f, f, &pts).unwrap(), 0.0);
        assert!(matches!(
            ise_estimate(|_| 0.0, f, &pts),
            Err(EvaluateError::ZeroTruth { index: 0, .. })
        ));
    }

    #[test]
    fn grid_round_trip_and_raw_transform() {
        let axis = linspace(0.0, 10.0, 11);
        let values = vec![0.1; 11];
        let g = DensityGrid::new(GridKind::Marginal, vec!["a".into()], vec![axis], values, 3, vec![2.0]).unwrap();
        assert!((g.integral() - 1.0).abs() < 1e-12);
        let raw = g.to_raw();
        assert_eq!(raw.axes[0][10], 5.0);
        assert!((raw.integral() - 1.0).abs() < 1e-12);
        let mut buf = Vec::new();
        raw.write_csv(&mut buf).unwrap();
        let back = DensityGrid::read_csv(&buf[..]).unwrap();
        assert_eq!(back, raw);
    }

    #[test]
    fn bivariate_grid_round_trip() {
        let g = DensityGrid::new(
            GridKind::Joint,
            vec!["a".into(), "b".into()],
            vec![vec![0.0, 1.0], vec![0.0, 0.5, 1.0]],
            vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
            1,
            vec![1.0, 1.0],
        )
        .unwrap();
        assert!((g.integral() - 1.0).abs() < 1e-14);
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        assert_eq!(DensityGrid::read_csv(&buf[..]).unwrap(), g);
    }

    #[test]
    fn invalid_grids_rejected() {
        assert!(matches!(
            DensityGrid::new(
                GridKind::Marginal,
                vec![],
                vec![vec![0.0, 0.0]],
                vec![1.0, 1.0],
                0,
                vec![1.0]
            ),
            Err(EvaluateError::Axis(0))
        ));
        assert!(matches!(
            DensityGrid::new(
                GridKind::Marginal,
                vec![],
                vec![vec![0.0, 1.0]],
                vec![1.0, -1.0],
                0,
                vec![1.0]
            ),
            Err(EvaluateError::Negative { index: 1, .. })
        ));
        // non-density kinds may be negative
        assert!(DensityGrid::new(
            GridKind::Variance,
            vec![],
            vec![vec![0.0, 1.0]],
            vec![1.0, -1.0],
            0,
            vec![1.0]
        )
        .is_ok());
    }

    #[test]
    fn pearson_degenerate_and_perfect() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let (r, lo, hi) = pearson_with_interval(&a, &a);
        assert_eq!((r, lo, hi), (1.0, 1.0, 1.0));
        let b = [2.0, 1.0, 4.0, 3.0, 6.0];
        let (r, lo, hi) = pearson_with_interval(&a, &b);
        assert!((r - 10.0 / 148f64.sqrt()).abs() < 1e-12, "{r}");
        assert!(lo < r && r < hi);
    }
}
