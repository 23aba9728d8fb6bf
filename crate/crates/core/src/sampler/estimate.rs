//! Posterior mean densities from stored draws.

use serde::{Deserialize, Serialize};

use crate::evaluate::{linspace, DensityGrid, GridKind};

use super::{Dims, FittedModel, PosteriorDraws, SamplerError};

/// Evaluation grids for [`estimate_densities`], on the fitted (scaled) axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Points per axis for univariate intake grids, variances and probabilities.
    pub points: usize,
    /// Points per axis for bivariate grids; zero skips them.
    pub bivariate_points: usize,
    /// Intake range; `None` uses the full support.
    pub range: Option<(f64, f64)>,
    pub error_range: (f64, f64),
    pub error_points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points: 201,
            bivariate_points: 61,
            range: None,
            error_range: (-5.0, 5.0),
            error_points: 201,
        }
    }
}

/// Posterior average over the retained draws of every density the model
/// defines.
#[derive(Debug, Clone)]
pub struct PosteriorDensity {
    models: Vec<FittedModel>,
    dims: Dims,
    names: Vec<String>,
    scale_factors: Vec<f64>,
}

impl PosteriorDensity {
    pub fn from_draws(draws: &PosteriorDraws) -> Result<Self, SamplerError> {
        if draws.is_empty() {
            return Err(SamplerError::EmptyDraws);
        }
        let layout = draws.layout();
        let models = (0..draws.len())
            .map(|s| FittedModel::new(&layout.dims, &draws.parameters(s)?))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            models,
            dims: layout.dims.clone(),
            names: layout.names.clone(),
            scale_factors: layout.scale_factors.clone(),
        })
    }

    fn mean(&self, f: impl Fn(&FittedModel) -> f64) -> f64 {
        self.models.iter().map(f).sum::<f64>() / self.models.len() as f64
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }
    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
    pub fn dims(&self) -> &Dims {
        &self.dims
    }
    pub fn names(&self) -> &[String] {
        &self.names
    }
    pub fn scale_factors(&self) -> &[f64] {
        &self.scale_factors
    }
    pub fn models(&self) -> &[FittedModel] {
        &self.models
    }

    pub fn marginal(&self, l: usize, x: f64) -> f64 {
        self.mean(|m| m.marginal_pdf(l, x))
    }
    pub fn joint(&self, x: &[f64]) -> f64 {
        self.mean(|m| m.joint_pdf(x))
    }
    pub fn bivariate(&self, a: usize, b: usize, xa: f64, xb: f64) -> f64 {
        self.mean(|m| m.bivariate_pdf(a, b, xa, xb))
    }
    pub fn error(&self, k: usize, e: f64) -> f64 {
        self.mean(|m| m.error_pdf(k, e))
    }
    pub fn variance(&self, k: usize, x_tilde: f64) -> f64 {
        self.mean(|m| m.variance(k, x_tilde))
    }
    pub fn probability(&self, l: usize, x: f64) -> f64 {
        self.mean(|m| m.probability(l, x))
    }
    /// Posterior mean of `X̃(x)`.
    pub fn x_tilde(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dims.surrogates()];
        for m in &self.models {
            acc.iter_mut().zip(m.x_tilde(x)).for_each(|(a, v)| *a += v);
        }
        acc.iter_mut().for_each(|a| *a /= self.models.len() as f64);
        acc
    }

    /// Marginal density at a raw-unit intake.
    pub fn marginal_raw(&self, l: usize, x: f64) -> f64 {
        let c = self.scale_factors[l];
        c * self.marginal(l, c * x)
    }
    pub fn joint_raw(&self, x: &[f64]) -> f64 {
        let scaled: Vec<f64> = x.iter().zip(&self.scale_factors).map(|(v, c)| v * c).collect();
        self.scale_factors.iter().product::<f64>() * self.joint(&scaled)
    }
    pub fn bivariate_raw(&self, a: usize, b: usize, xa: f64, xb: f64) -> f64 {
        let (ca, cb) = (self.scale_factors[a], self.scale_factors[b]);
        ca * cb * self.bivariate(a, b, ca * xa, cb * xb)
    }
    pub fn probability_raw(&self, l: usize, x: f64) -> f64 {
        self.probability(l, self.scale_factors[l] * x)
    }

    /// Posterior mean bivariate density of `(a, b)` with each draw's
    /// marginal log densities and normal scores tabulated across the support
    /// and linearly interpolated. Scores diverge logarithmically at the
    /// support ends, so the nodes there are graded geometrically.
    pub fn bivariate_table(&self, a: usize, b: usize, nodes: usize) -> BivariateTable {
        let (lo, hi) = self.dims.support;
        let nodes = nodes.max(2 * GRADED_CELLS + 1);
        let h = (hi - lo) / (nodes - 1) as f64;
        let graded: Vec<f64> = (1..=GRADED_NODES)
            .map(|k| GRADED_CELLS as f64 * h * GRADE.powi(k as i32))
            .rev()
            .collect();
        let mut xs: Vec<f64> = Vec::with_capacity(nodes + 2 * GRADED_NODES);
        xs.extend(graded.iter().map(|d| lo + d));
        xs.extend((GRADED_CELLS..nodes - GRADED_CELLS).map(|i| lo + h * i as f64));
        xs.extend(graded.iter().rev().map(|d| hi - d));
        let tab = |m: &FittedModel, l: usize| -> (Vec<f64>, Vec<f64>) {
            xs.iter()
                .map(|&x| {
                    let y = m.x_marg[l].score(x).clamp(-SCORE_LIMIT, SCORE_LIMIT);
                    (m.x_marg[l].ln_pdf(x).max(-LN_FLOOR), y)
                })
                .unzip()
        };
        let draws = self
            .models
            .iter()
            .map(|m| {
                let rho = m.rx.get(a, b);
                let (la, ya) = tab(m, a);
                let (lb, yb) = tab(m, b);
                TableDraw { rho, la, ya, lb, yb }
            })
            .collect();
        BivariateTable { lo, hi, xs, draws }
    }
}

const SCORE_LIMIT: f64 = 8.5;
const LN_FLOOR: f64 = 700.0;
const GRADE: f64 = 0.8;
// the outer cells are replaced by nodes reaching about 1e-10 of a cell from either end
const GRADED_CELLS: usize = 8;
const GRADED_NODES: usize = 113;

#[derive(Debug, Clone)]
struct TableDraw {
    rho: f64,
    la: Vec<f64>,
    ya: Vec<f64>,
    lb: Vec<f64>,
    yb: Vec<f64>,
}

/// Interpolated posterior mean bivariate intake density; see
/// [`PosteriorDensity::bivariate_table`].
#[derive(Debug, Clone)]
pub struct BivariateTable {
    lo: f64,
    hi: f64,
    xs: Vec<f64>,
    draws: Vec<TableDraw>,
}

impl BivariateTable {
    fn locate(&self, x: f64) -> (usize, f64) {
        let i = self.xs.partition_point(|&v| v <= x).clamp(1, self.xs.len() - 1) - 1;
        let t = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        (i, t.clamp(0.0, 1.0))
    }

    pub fn pdf(&self, xa: f64, xb: f64) -> f64 {
        if !(xa > self.lo && xa < self.hi && xb > self.lo && xb < self.hi) {
            return 0.0;
        }
        let (ia, ta) = self.locate(xa);
        let (ib, tb) = self.locate(xb);
        let lerp = |v: &[f64], i: usize, t: f64| v[i] + t * (v[i + 1] - v[i]);
        let total: f64 = self
            .draws
            .iter()
            .map(|d| {
                let (ya, yb) = (lerp(&d.ya, ia, ta), lerp(&d.yb, ib, tb));
                let r = d.rho;
                let one = 1.0 - r * r;
                let ln_c = -0.5 * one.ln() - (r * r * (ya * ya + yb * yb) - 2.0 * r * ya * yb) / (2.0 * one);
                (ln_c + lerp(&d.la, ia, ta) + lerp(&d.lb, ib, tb)).exp()
            })
            .sum();
        total / self.draws.len() as f64
    }
}

fn check_range(range: (f64, f64), support: (f64, f64)) -> Result<(), SamplerError> {
    for v in [range.0, range.1] {
        if !(v >= support.0 && v <= support.1) {
            return Err(SamplerError::GridOutOfRange {
                value: v,
                lower: support.0,
                upper: support.1,
            });
        }
    }
    if !(range.1 > range.0) {
        return Err(SamplerError::Config(format!("empty grid range {range:?}")));
    }
    Ok(())
}

/// Posterior mean grids on the fitted scale: one marginal per component
/// (renormalized), every bivariate pair, the error density, `s²` per amount
/// coordinate and `P` per episodic component.
pub fn estimate_densities(draws: &PosteriorDraws, spec: &GridSpec) -> Result<Vec<DensityGrid>, SamplerError> {
    let post = PosteriorDensity::from_draws(draws)?;
    let dims = post.dims.clone();
    let (q, d) = (dims.q, dims.components());
    let range = spec.range.unwrap_or(dims.support);
    check_range(range, dims.support)?;
    if spec.points < 2 || spec.error_points < 2 || spec.bivariate_points == 1 {
        return Err(SamplerError::Config("grids need at least two points".into()));
    }
    let bad = |e: crate::evaluate::EvaluateError| SamplerError::Format(e.to_string());
    let n = draws.len();
    let c = &post.scale_factors;
    let axis = linspace(range.0, range.1, spec.points);
    let mut out = Vec::new();

    for l in 0..d {
        let values = axis.iter().map(|&x| post.marginal(l, x)).collect();
        let mut g = DensityGrid::new(
            GridKind::Marginal,
            vec![post.names[l].clone()],
            vec![axis.clone()],
            values,
            n,
            vec![c[l]],
        )
        .map_err(bad)?;
        g.renormalize();
        out.push(g);
    }
    if spec.bivariate_points > 0 {
        let bx = linspace(range.0, range.1, spec.bivariate_points);
        for a in 0..d {
            for b in a + 1..d {
                let mut values = Vec::with_capacity(bx.len() * bx.len());
                for &xa in &bx {
                    for &xb in &bx {
                        values.push(post.bivariate(a, b, xa, xb));
                    }
                }
                out.push(
                    DensityGrid::new(
                        GridKind::Joint,
                        vec![post.names[a].clone(), post.names[b].clone()],
                        vec![bx.clone(), bx.clone()],
                        values,
                        n,
                        vec![c[a], c[b]],
                    )
                    .map_err(bad)?,
                );
            }
        }
    }
    let eaxis = linspace(spec.error_range.0, spec.error_range.1, spec.error_points);
    for k in 0..d {
        let values = eaxis.iter().map(|&e| post.error(k, e)).collect();
        let mut g = DensityGrid::new(
            GridKind::Error,
            vec![post.names[k].clone()],
            vec![eaxis.clone()],
            values,
            n,
            vec![1.0],
        )
        .map_err(bad)?;
        g.renormalize();
        out.push(g);
    }
    let vaxis = linspace(0.0, dims.variance_upper, spec.points);
    for k in 0..d {
        let values = vaxis.iter().map(|&v| post.variance(k, v)).collect();
        out.push(
            DensityGrid::new(
                GridKind::Variance,
                vec![post.names[k].clone()],
                vec![vaxis.clone()],
                values,
                n,
                vec![c[k]],
            )
            .map_err(bad)?,
        );
    }
    for l in 0..q {
        let values = axis.iter().map(|&x| post.probability(l, x)).collect();
        out.push(
            DensityGrid::new(
                GridKind::Probability,
                vec![post.names[l].clone()],
                vec![axis.clone()],
                values,
                n,
                vec![c[l]],
            )
            .map_err(bad)?,
        );
    }
    Ok(out)
}
