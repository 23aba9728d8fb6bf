//! The seven update blocks of one sweep.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::copula::SphericalCorrelation;
use crate::densities::{normal_ln_pdf, pick_index, sample_trunc_normal, trunc_normal_ln_pdf, RestrictedErrorKernel};
use crate::linalg::{backward_solve_transposed, cholesky, forward_solve};
use crate::special::norm_cdf;

use super::init::recentre;
use super::model::FastKernel;
use super::{grid_value, subject_rng, Counter, SamplerError, SamplerState, B_EDGE, THETA_EDGE};

/// Grid positions of the `b` and `θ` coordinates.
type GridIndex = (Vec<usize>, Vec<usize>);

/// Draws `Dir(alpha)`.
pub fn dirichlet<R: Rng + ?Sized>(rng: &mut R, alpha: &[f64]) -> Vec<f64> {
    let mut g: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
        .collect();
    let total: f64 = g.iter().sum();
    if total > 0.0 {
        g.iter_mut().for_each(|v| *v /= total);
    } else {
        let top = alpha
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap_or(0);
        g.iter_mut().enumerate().for_each(|(k, v)| *v = (k == top) as u8 as f64);
    }
    g
}

/// Draws from the inverse gamma with the given shape and rate.
pub fn inverse_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    rate / Gamma::new(shape, 1.0).expect("positive shape").sample(rng)
}

/// Draws an index from unnormalized log weights (overwritten).
pub fn sample_log_weights<R: Rng + ?Sized>(rng: &mut R, logw: &mut [f64]) -> usize {
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return rng.random_range(0..logw.len());
    }
    logw.iter_mut().for_each(|v| *v = (*v - m).exp());
    pick_index(rng, logw)
}

/// Draws `N(Q⁻¹ b, Q⁻¹)` for precision `Q` and linear term `b`; `None` when
/// `Q` is not positive definite.
pub fn gaussian_from_precision<R: Rng + ?Sized>(rng: &mut R, prec: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let j = rhs.len();
    let chol = cholesky(prec, j)?;
    let mut mean = rhs.to_vec();
    forward_solve(&chol, j, &mut mean);
    backward_solve_transposed(&chol, j, &mut mean);
    let mut z: Vec<f64> = (0..j).map(|_| rng.sample(StandardNormal)).collect();
    backward_solve_transposed(&chol, j, &mut z);
    Some(mean.iter().zip(&z).map(|(m, z)| m + z).collect())
}

/// One move on a grid of `size` points: propose the current point or one of
/// its two neighbours with probability 1/3 each (off-grid proposals are
/// rejected) and accept with `min(1, a(new)/a(old))`. Returns the new
/// position, its log target and whether the proposal was accepted.
pub fn grid_move<R, E, F>(
    rng: &mut R,
    pos: usize,
    size: usize,
    current_ln: f64,
    mut ln_target: F,
) -> Result<(usize, f64, bool), E>
where
    R: Rng + ?Sized,
    F: FnMut(usize) -> Result<f64, E>,
{
    let mv = rng.random_range(0..3usize);
    if (mv == 0 && pos == 0) || (mv == 2 && pos + 1 == size) {
        return Ok((pos, current_ln, false));
    }
    let new_pos = pos + mv - 1;
    if new_pos == pos {
        return Ok((pos, current_ln, true));
    }
    let ln = ln_target(new_pos)?;
    if accept(rng, ln - current_ln) {
        Ok((new_pos, ln, true))
    } else {
        Ok((pos, current_ln, false))
    }
}

/// Metropolis–Hastings acceptance for a log ratio; NaN rejects.
pub fn accept<R: Rng + ?Sized>(rng: &mut R, log_ratio: f64) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

/// Log mass of `N(x, sd²)` on `[a, b]`.
fn ln_tn_mass(x: f64, sd: f64, a: f64, b: f64) -> f64 {
    let hi = norm_cdf((b - x) / sd);
    let lo = norm_cdf((a - x) / sd);
    (hi - lo).max(f64::MIN_POSITIVE).ln()
}

/// Random-walk draw for a positive variance on `[max(0, v-1), v+1]` and the
/// log Hastings correction `ln q(v'→v) - ln q(v→v')`.
fn propose_variance<R: Rng + ?Sized>(rng: &mut R, v: f64, step: f64) -> (f64, f64) {
    let lower = |c: f64| (c - 1.0).max(0.0);
    let vn = sample_trunc_normal(rng, v, step, lower(v), v + 1.0);
    let fwd = trunc_normal_ln_pdf(vn, v, step * step, lower(v), v + 1.0);
    let back = trunc_normal_ln_pdf(v, vn, step * step, lower(vn), vn + 1.0);
    (vn, back - fwd)
}

fn ln_inv_gamma(v: f64, a: f64, b: f64) -> f64 {
    -(a + 1.0) * v.ln() - b / v
}

const SCORE_CAP: f64 = 37.5;

impl SamplerState {
    /// One full scan of the seven blocks.
    pub fn sweep(&mut self) -> Result<(), SamplerError> {
        self.iteration += 1;
        let keep = self.iteration > self.hp.burn_in;
        self.update_xi(keep);
        self.update_x_mixture(keep);
        let errors = self.scaled_errors()?;
        self.update_error_mixture(&errors, keep);
        self.update_vartheta(keep)?;
        self.update_latent_surrogates()?;
        self.update_beta()?;
        self.update_intakes(keep)?;
        self.update_copulas(keep)?;
        if self.iteration <= self.hp.burn_in && self.iteration.is_multiple_of(self.hp.adapt_interval) {
            self.adapt();
        }
        Ok(())
    }

    fn numerical(&self, message: impl Into<String>) -> SamplerError {
        SamplerError::Numerical {
            iteration: self.iteration,
            message: message.into(),
        }
    }

    /// Step 1a: B-spline coefficients of the episodic densities and their
    /// smoothing variances.
    pub(crate) fn update_xi(&mut self, keep: bool) {
        let j = self.dims.num_bases;
        for l in 0..self.dims.q {
            let xs: Vec<f64> = self.subjects.iter().map(|s| s.x[l]).collect();
            let target =
                |xi: &[f64], penalty: &crate::splines::PenaltyMatrix, var: f64, basis: &crate::splines::SplineBasis| {
                    let top = xi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = xi.iter().map(|c| (c - top).exp()).collect();
                    let norm: f64 = e.iter().zip(basis.areas()).map(|(a, b)| a * b).sum();
                    let ll: f64 = xs.iter().map(|&x| (basis.combine_clamped(x, &e) / norm).ln()).sum();
                    ll - penalty.quad_form(xi) / (2.0 * var)
                };
            let cur = &self.params.xi[l];
            let step = self.scale_xi[l];
            let prop: Vec<f64> = cur
                .iter()
                .map(|c| c + step * self.rng.sample::<f64, _>(StandardNormal))
                .collect();
            let var = self.var_xi[l];
            let ratio = target(&prop, &self.penalty, var, &self.basis) - target(cur, &self.penalty, var, &self.basis);
            let ok = accept(&mut self.rng, ratio);
            if ok {
                self.params.xi[l] = recentre(prop);
            }
            self.acceptance.xi[l].record(ok, keep);
            let xi = &self.params.xi[l];
            self.var_xi[l] = inverse_gamma(
                &mut self.rng,
                self.hp.a_xi + (j as f64 + 2.0) / 2.0,
                self.hp.b_xi + self.penalty.quad_form(xi) / 2.0,
            );
        }
    }

    /// Step 1b: weights, labels and shared atoms of the regular densities.
    pub(crate) fn update_x_mixture(&mut self, keep: bool) {
        let (q, p, kx) = (self.dims.q, self.dims.p, self.dims.x_atoms);
        if p == 0 {
            return;
        }
        let (lo, hi) = self.dims.support;
        for r in 0..p {
            let mut alpha = vec![self.hp.alpha_x; kx];
            self.subjects.iter().for_each(|s| alpha[s.x_labels[r]] += 1.0);
            self.params.x_weights[r] = dirichlet(&mut self.rng, &alpha);
        }
        let mut logw = vec![0.0; kx];
        for i in 0..self.subjects.len() {
            for r in 0..p {
                let x = self.subjects[i].x[q + r];
                for k in 0..kx {
                    let w = self.params.x_weights[r][k];
                    logw[k] = if w > 0.0 {
                        w.ln() + trunc_normal_ln_pdf(x, self.params.x_mu[k], self.params.x_var[k], lo, hi)
                    } else {
                        f64::NEG_INFINITY
                    };
                }
                self.subjects[i].x_labels[r] = sample_log_weights(&mut self.rng, &mut logw);
            }
        }
        let mut members: Vec<Vec<f64>> = vec![Vec::new(); kx];
        for s in &self.subjects {
            for r in 0..p {
                members[s.x_labels[r]].push(s.x[q + r]);
            }
        }
        let (mu0, var0) = (self.hp.mu_x0, self.hp.var_x0);
        for k in 0..kx {
            let ll = |m: f64, v: f64| -> f64 { members[k].iter().map(|&x| trunc_normal_ln_pdf(x, m, v, lo, hi)).sum() };
            let (mu, var) = (self.params.x_mu[k], self.params.x_var[k]);
            let mu_new = mu + self.hp.atom_mu_step * self.rng.sample::<f64, _>(StandardNormal);
            let ratio = ll(mu_new, var) - ll(mu, var) + normal_ln_pdf(mu_new, mu0, var0) - normal_ln_pdf(mu, mu0, var0);
            let ok = accept(&mut self.rng, ratio);
            if ok {
                self.params.x_mu[k] = mu_new;
            }
            self.acceptance.x_atom_mu.record(ok, keep);

            let mu = self.params.x_mu[k];
            let (var_new, hastings) = propose_variance(&mut self.rng, var, self.hp.atom_var_step);
            let ok = var_new > 0.0 && {
                let ratio = ll(mu, var_new) - ll(mu, var) + ln_inv_gamma(var_new, self.hp.a_var_x0, self.hp.b_var_x0)
                    - ln_inv_gamma(var, self.hp.a_var_x0, self.hp.b_var_x0)
                    + hastings;
                accept(&mut self.rng, ratio)
            };
            if ok {
                self.params.x_var[k] = var_new;
            }
            self.acceptance.x_atom_var.record(ok, keep);
        }
    }

    /// Scaled errors `(W - X̃) / s(X̃)` of every amount coordinate, indexed
    /// subject → occasion → coordinate.
    pub(crate) fn scaled_errors(&self) -> Result<Vec<Vec<Vec<f64>>>, SamplerError> {
        let model = self.model()?;
        let (q, d) = (self.dims.q, self.dims.components());
        let out: Vec<Vec<Vec<f64>>> = self
            .subjects
            .iter()
            .map(|s| {
                let xt = model.x_tilde(&s.x);
                s.w.iter()
                    .map(|w| {
                        (0..d)
                            .map(|k| (w[q + k] - xt[q + k]) / model.variance(k, xt[q + k]).sqrt())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        if out.iter().flatten().flatten().any(|e: &f64| !e.is_finite()) {
            return Err(self.numerical("non-finite scaled error"));
        }
        Ok(out)
    }

    /// Step 2: weights, labels and shared atoms of the error densities.
    pub(crate) fn update_error_mixture(&mut self, errors: &[Vec<Vec<f64>>], keep: bool) {
        let (d, ke) = (self.dims.components(), self.dims.eps_atoms);
        for k in 0..d {
            let mut alpha = vec![self.hp.alpha_eps; ke];
            self.subjects
                .iter()
                .flat_map(|s| s.eps_labels.iter())
                .for_each(|lab| alpha[lab[k]] += 1.0);
            self.params.eps_weights[k] = dirichlet(&mut self.rng, &alpha);
        }
        let kernels: Vec<FastKernel> = self.params.eps_atoms.iter().map(FastKernel::new).collect();
        let mut logw = vec![0.0; ke];
        for (i, subject_err) in errors.iter().enumerate() {
            for (j, e) in subject_err.iter().enumerate() {
                for k in 0..d {
                    for (a, lw) in logw.iter_mut().enumerate() {
                        let w = self.params.eps_weights[k][a];
                        *lw = if w > 0.0 {
                            w.ln() + kernels[a].ln_pdf(e[k])
                        } else {
                            f64::NEG_INFINITY
                        };
                    }
                    self.subjects[i].eps_labels[j][k] = sample_log_weights(&mut self.rng, &mut logw);
                }
            }
        }
        let mut members: Vec<Vec<f64>> = vec![Vec::new(); ke];
        for (s, subject_err) in self.subjects.iter().zip(errors) {
            for (lab, e) in s.eps_labels.iter().zip(subject_err) {
                for k in 0..d {
                    members[lab[k]].push(e[k]);
                }
            }
        }
        let hp = &self.hp;
        for (a, pts) in members.iter().enumerate() {
            let cur = self.params.eps_atoms[a];
            let rng = &mut self.rng;
            let p_new = sample_trunc_normal(rng, cur.p, hp.eps_p_step, 0.0, 1.0);
            let mu_new = cur.mu_tilde + hp.eps_mu_step * rng.sample::<f64, _>(StandardNormal);
            let (v1_new, h1) = propose_variance(rng, cur.var1, hp.eps_var_step);
            let (v2_new, h2) = propose_variance(rng, cur.var2, hp.eps_var_step);
            let hp_p = ln_tn_mass(cur.p, hp.eps_p_step, 0.0, 1.0) - ln_tn_mass(p_new, hp.eps_p_step, 0.0, 1.0);
            let ok = match RestrictedErrorKernel::new(p_new, mu_new, v1_new, v2_new) {
                Ok(prop) => {
                    let (fk_new, fk_cur) = (FastKernel::new(&prop), FastKernel::new(&cur));
                    let ll: f64 = pts.iter().map(|&e| fk_new.ln_pdf(e) - fk_cur.ln_pdf(e)).sum();
                    let prior = normal_ln_pdf(mu_new, 0.0, hp.var_mu_tilde)
                        - normal_ln_pdf(cur.mu_tilde, 0.0, hp.var_mu_tilde)
                        + ln_inv_gamma(v1_new, hp.a_eps, hp.b_eps)
                        - ln_inv_gamma(cur.var1, hp.a_eps, hp.b_eps)
                        + ln_inv_gamma(v2_new, hp.a_eps, hp.b_eps)
                        - ln_inv_gamma(cur.var2, hp.a_eps, hp.b_eps);
                    let ok = accept(rng, ll + prior + hp_p + h1 + h2);
                    if ok {
                        self.params.eps_atoms[a] = prop;
                    }
                    ok
                }
                Err(_) => false,
            };
            self.acceptance.eps_atom.record(ok, keep);
        }
    }

    /// Step 3: variance-function coefficients and their smoothing variances.
    pub(crate) fn update_vartheta(&mut self, keep: bool) -> Result<(), SamplerError> {
        let model = self.model()?;
        let (q, d, j) = (self.dims.q, self.dims.components(), self.dims.num_bases);
        let x_tildes: Vec<Vec<f64>> = self.subjects.iter().map(|s| model.x_tilde(&s.x)).collect();
        for k in 0..d {
            let mix = &model.err[k];
            let pseudo = |t: &[f64], var: f64| -> f64 {
                let coefs: Vec<f64> = t.iter().map(|c| c.exp()).collect();
                let mut total = -self.penalty.quad_form(t) / (2.0 * var);
                for (s, xt) in self.subjects.iter().zip(&x_tildes) {
                    let x = xt[q + k];
                    let sd = self.var_basis.combine_clamped(x, &coefs).sqrt();
                    for w in &s.w {
                        total += mix.ln_pdf((w[q + k] - x) / sd) - sd.ln();
                    }
                }
                total
            };
            let cur = self.params.vartheta[k].clone();
            let step = self.scale_vartheta[k];
            let prop: Vec<f64> = cur
                .iter()
                .map(|c| c + step * self.rng.sample::<f64, _>(StandardNormal))
                .collect();
            let var = self.var_vartheta[k];
            let ratio = pseudo(&prop, var) - pseudo(&cur, var);
            let ok = accept(&mut self.rng, ratio);
            if ok {
                self.params.vartheta[k] = prop;
            }
            self.acceptance.vartheta[k].record(ok, keep);
            self.var_vartheta[k] = inverse_gamma(
                &mut self.rng,
                self.hp.a_vartheta + (j as f64 + 2.0) / 2.0,
                self.hp.b_vartheta + self.penalty.quad_form(&self.params.vartheta[k]) / 2.0,
            );
        }
        Ok(())
    }

    /// Step 4: probit surrogates of the indicators and the unobserved
    /// episodic amounts.
    pub(crate) fn update_latent_surrogates(&mut self) -> Result<(), SamplerError> {
        let model = self.model()?;
        let q = self.dims.q;
        if q == 0 {
            return Ok(());
        }
        let key: u64 = self.rng.random();
        self.subjects.par_iter_mut().enumerate().for_each(|(i, s)| {
            let mut rng = subject_rng(key, i);
            let xt = model.x_tilde(&s.x);
            for j in 0..s.w.len() {
                for l in 0..q {
                    let (a, b) = if s.consumed[j][l] {
                        (0.0, f64::INFINITY)
                    } else {
                        (f64::NEG_INFINITY, 0.0)
                    };
                    s.w[j][l] = sample_trunc_normal(&mut rng, xt[l], 1.0, a, b);
                }
                for l in 0..q {
                    if s.consumed[j][l] {
                        continue;
                    }
                    let kernel = &model.kernels[s.eps_labels[j][l]];
                    let t = if rng.random::<f64>() < kernel.weight_first() {
                        0
                    } else {
                        1
                    };
                    s.eps_branch[j][l] = t;
                    let (m, sd) = kernel.branch(t);
                    let scale = model.variance(l, xt[q + l]).sqrt();
                    let z: f64 = rng.sample(StandardNormal);
                    s.w[j][q + l] = xt[q + l] + scale * (m + sd * z);
                }
            }
        });
        Ok(())
    }

    /// Step 5: probit coefficients from their Gaussian full conditional, then
    /// their smoothing variances.
    pub(crate) fn update_beta(&mut self) -> Result<(), SamplerError> {
        let (q, j) = (self.dims.q, self.dims.num_bases);
        for l in 0..q {
            let (prec, rhs) = self.beta_conditional(l);
            self.params.beta[l] = gaussian_from_precision(&mut self.rng, &prec, &rhs)
                .ok_or_else(|| self.numerical("probit precision is not positive definite"))?;
            self.var_beta[l] = inverse_gamma(
                &mut self.rng,
                self.hp.a_beta + (j as f64 + 2.0) / 2.0,
                self.hp.b_beta + self.penalty.quad_form(&self.params.beta[l]) / 2.0,
            );
        }
        Ok(())
    }

    /// Precision matrix and linear term of the probit coefficients of
    /// episodic component `l`.
    pub fn beta_conditional(&self, l: usize) -> (Vec<f64>, Vec<f64>) {
        let j = self.dims.num_bases;
        let mut prec = vec![0.0; j * j];
        let mut rhs = vec![self.hp.beta_prior_mean / self.hp.beta_prior_var; j];
        let inv_smooth = 1.0 / self.var_beta[l];
        for a in 0..j {
            for b in 0..j {
                prec[a * j + b] = self.penalty.get(a, b) * inv_smooth;
            }
            prec[a * j + a] += 1.0 / self.hp.beta_prior_var;
        }
        for s in &self.subjects {
            let (first, vals) = self.basis.eval_local(s.x[l]);
            let m = s.w.len() as f64;
            let wsum: f64 = s.w.iter().map(|w| w[l]).sum();
            for a in 0..3 {
                rhs[first + a] += wsum * vals[a];
                for b in 0..3 {
                    prec[(first + a) * j + first + b] += m * vals[a] * vals[b];
                }
            }
        }
        (prec, rhs)
    }

    /// Step 6: componentwise Metropolis–Hastings for the intakes.
    pub(crate) fn update_intakes(&mut self, keep: bool) -> Result<(), SamplerError> {
        let model = self.model()?;
        let d = self.dims.components();
        let (lo, hi) = self.dims.support;
        let scales = self.scale_x.clone();
        let key: u64 = self.rng.random();
        let counts: Vec<Vec<Counter>> = self
            .subjects
            .par_iter_mut()
            .enumerate()
            .map(|(i, s)| {
                let mut rng = subject_rng(key, i);
                let mut scores = Vec::with_capacity(d);
                let mut counts = vec![Counter::default(); d];
                let mut cur = model.subject_ln_lik(&s.x, &s.w, &mut scores);
                for l in 0..d {
                    let sd = scales[l];
                    let old = s.x[l];
                    let new = sample_trunc_normal(&mut rng, old, sd, lo, hi);
                    let ok = new > lo && new < hi && {
                        s.x[l] = new;
                        let prop = model.subject_ln_lik(&s.x, &s.w, &mut scores);
                        let ratio = prop - cur + ln_tn_mass(old, sd, lo, hi) - ln_tn_mass(new, sd, lo, hi);
                        let ok = prop > f64::NEG_INFINITY && accept(&mut rng, ratio);
                        if ok {
                            cur = prop;
                        }
                        ok
                    };
                    if !ok {
                        s.x[l] = old;
                    }
                    counts[l].record(ok, keep);
                }
                counts
            })
            .collect();
        for c in counts {
            for (acc, v) in self.acceptance.x.iter_mut().zip(&c) {
                acc.merge(v);
            }
        }
        Ok(())
    }

    /// Step 7: grid Metropolis–Hastings for both copula correlation matrices.
    pub(crate) fn update_copulas(&mut self, keep: bool) -> Result<(), SamplerError> {
        let d = self.dims.components();
        if d < 2 {
            return Ok(());
        }
        let model = self.model()?;
        let cap = |y: f64| y.clamp(-SCORE_CAP, SCORE_CAP);
        let mut sx = vec![0.0; d * d];
        let mut nx = 0;
        for s in &self.subjects {
            let y: Vec<f64> = (0..d).map(|l| cap(model.x_marg[l].score(s.x[l]))).collect();
            add_outer(&mut sx, &y);
            nx += 1;
        }
        let q = self.dims.q;
        let mut se = vec![0.0; d * d];
        let mut ne = 0;
        for s in &self.subjects {
            let xt = model.x_tilde(&s.x);
            for w in &s.w {
                let y: Vec<f64> = (0..d)
                    .map(|k| {
                        let e = (w[q + k] - xt[q + k]) / model.variance(k, xt[q + k]).sqrt();
                        cap(model.err[k].score(e))
                    })
                    .collect();
                add_outer(&mut se, &y);
                ne += 1;
            }
        }
        let (rx, idx, c) = self.grid_step(&self.params.rx.clone(), self.rx_idx.clone(), &sx, nx, keep)?;
        self.params.rx = rx;
        self.rx_idx = idx;
        self.acceptance.rx.merge(&c);
        let (re, idx, c) = self.grid_step(&self.params.re.clone(), self.re_idx.clone(), &se, ne, keep)?;
        self.params.re = re;
        self.re_idx = idx;
        self.acceptance.re.merge(&c);
        Ok(())
    }

    fn grid_step(
        &mut self,
        current: &SphericalCorrelation,
        mut idx: GridIndex,
        scatter: &[f64],
        n: usize,
        keep: bool,
    ) -> Result<(SphericalCorrelation, GridIndex, Counter), SamplerError> {
        let m = self.hp.grid_size;
        let mut counter = Counter::default();
        let mut r = current.clone();
        let mut cur_ll = r.scatter_ln_likelihood(scatter, n);
        let nb = idx.0.len();
        let nt = idx.1.len();
        for slot in 0..nb + nt {
            let (pos, edge) = if slot < nb {
                (idx.0[slot], B_EDGE)
            } else {
                (idx.1[slot - nb], THETA_EDGE)
            };
            let build = |new_pos: usize| {
                let mut b = r.b().to_vec();
                let mut t = r.theta().to_vec();
                if slot < nb {
                    b[slot] = grid_value(edge, new_pos, m);
                } else {
                    t[slot - nb] = grid_value(edge, new_pos, m);
                }
                SphericalCorrelation::new(b, t)
            };
            let (new_pos, ll, ok) = grid_move(&mut self.rng, pos, m, cur_ll, |k| {
                build(k).map(|c| c.scatter_ln_likelihood(scatter, n))
            })
            .map_err(|e| self.numerical(e.to_string()))?;
            if ok && new_pos != pos {
                r = build(new_pos).map_err(|e| self.numerical(e.to_string()))?;
                cur_ll = ll;
                if slot < nb {
                    idx.0[slot] = new_pos;
                } else {
                    idx.1[slot - nb] = new_pos;
                }
            }
            counter.record(ok, keep);
        }
        Ok((r, idx, counter))
    }

    /// Multiplicative tuning of the random-walk scales from the last window.
    fn adapt(&mut self) {
        let (lo, hi) = (self.hp.adapt_low, self.hp.adapt_high);
        let tune = |scale: &mut f64, c: &mut Counter| {
            if c.window_proposed > 0 {
                let rate = c.window_accepted as f64 / c.window_proposed as f64;
                if rate < lo {
                    *scale *= 0.7;
                } else if rate > hi {
                    *scale *= 1.4;
                }
            }
            c.window_accepted = 0;
            c.window_proposed = 0;
        };
        let a = &mut self.acceptance;
        for (s, c) in self.scale_xi.iter_mut().zip(a.xi.iter_mut()) {
            tune(s, c);
        }
        for (s, c) in self.scale_vartheta.iter_mut().zip(a.vartheta.iter_mut()) {
            tune(s, c);
        }
        for (s, c) in self.scale_x.iter_mut().zip(a.x.iter_mut()) {
            tune(s, c);
            *s = s.min(self.dims.support.1 - self.dims.support.0);
        }
    }
}

fn add_outer(s: &mut [f64], y: &[f64]) {
    let d = y.len();
    for a in 0..d {
        for b in 0..d {
            s[a * d + b] += y[a] * y[b];
        }
    }
}
