//! Starting values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::copula::{theta_len, SphericalCorrelation};
use crate::densities::{sample_trunc_normal, BsplineDensity, RestrictedErrorKernel, Univariate};
use crate::latent::RecallDataset;
use crate::optim::{kmeans_1d, minimize};
use crate::special::{norm_cdf, norm_quantile};
use crate::splines::{PenaltyMatrix, SplineBasis};

use super::{Acceptance, Counter, Dims, Hyperparameters, Parameters, SamplerError, SamplerState, SubjectState};

const X_MARGIN: f64 = 0.05;

/// Gaussian kernel density estimate with Silverman's bandwidth.
pub(crate) fn kernel_density(data: &[f64], at: f64) -> f64 {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let sd = (data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    let quart = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    let iqr = quart(0.75) - quart(0.25);
    let mut spread = sd.min(iqr / 1.34);
    if !(spread > 0.0) {
        spread = if sd > 0.0 { sd } else { 1.0 };
    }
    let h = 0.9 * spread * n.powf(-0.2);
    data.iter().map(|&v| (-0.5 * ((at - v) / h).powi(2)).exp()).sum::<f64>()
        / (n * h * (2.0 * std::f64::consts::PI).sqrt())
}

fn penalized_fit_beta(
    basis: &SplineBasis,
    penalty: &PenaltyMatrix,
    smooth: f64,
    at: &[f64],
    target: &[f64],
) -> Vec<f64> {
    let mean = target.iter().sum::<f64>() / target.len() as f64;
    let start = vec![norm_quantile(mean.clamp(0.02, 0.98)); basis.num_bases()];
    minimize(
        |b| {
            penalty.quad_form(b) / (2.0 * smooth)
                + at.iter()
                    .zip(target)
                    .map(|(&x, &t)| (t - norm_cdf(basis.combine_clamped(x, b))).powi(2))
                    .sum::<f64>()
        },
        &start,
        300,
    )
}

fn penalized_fit_xi(basis: &SplineBasis, penalty: &PenaltyMatrix, smooth: f64, at: &[f64]) -> Vec<f64> {
    let target: Vec<f64> = at.iter().map(|&x| kernel_density(at, x)).collect();
    let xi = minimize(
        |xi| match BsplineDensity::new(basis.clone(), xi.to_vec()) {
            Ok(f) => {
                penalty.quad_form(xi) / (2.0 * smooth)
                    + at.iter()
                        .zip(&target)
                        .map(|(&x, &t)| (t - f.pdf(x)).powi(2))
                        .sum::<f64>()
            }
            Err(_) => f64::INFINITY,
        },
        &vec![0.0; basis.num_bases()],
        300,
    );
    recentre(xi)
}

pub(crate) fn recentre(mut v: Vec<f64>) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|c| *c -= m);
    v
}

/// Variance-matching objective on subjects with at least two amounts.
fn penalized_fit_vartheta(
    var_basis: &SplineBasis,
    penalty: &PenaltyMatrix,
    smooth: f64,
    groups: &[(f64, f64, usize)],
) -> Vec<f64> {
    let (ss, dof) = groups.iter().fold((0.0, 0usize), |(s, d), g| (s + g.1, d + g.2 - 1));
    let pooled = if dof > 0 && ss > 0.0 { ss / dof as f64 } else { 1.0 };
    let start = vec![pooled.ln(); var_basis.num_bases()];
    minimize(
        |t| {
            let coefs: Vec<f64> = t.iter().map(|c| c.exp()).collect();
            let mut total = penalty.quad_form(t) / (2.0 * smooth);
            for &(mean, ss, m) in groups {
                let v = var_basis.combine_clamped(mean, &coefs);
                total += ss / (2.0 * v) + 0.5 * (m as f64 - 1.0) * v.ln();
            }
            total
        },
        &start,
        300,
    )
}

impl SamplerState {
    /// Starting state from scaled data.
    pub fn initialize(data: &RecallDataset, hp: &Hyperparameters, seed: u64) -> Result<Self, SamplerError> {
        hp.validate()?;
        data.check_replicates(3)?;
        let q = data.num_episodic();
        let p = data.num_regular();
        let d = q + p;
        let n = data.num_subjects();
        let (kx, ke) = hp.atoms(d);
        let dims = Dims {
            q,
            p,
            num_bases: hp.num_bases,
            x_atoms: kx,
            eps_atoms: ke,
            support: (hp.support_lower, hp.support_upper),
            variance_upper: hp.variance_upper,
        };
        let basis = dims.basis();
        let var_basis = dims.variance_basis();
        let penalty = PenaltyMatrix::new(hp.num_bases).map_err(|e| SamplerError::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let smooth = hp.initial_smoothing_var;
        let (lo, hi) = dims.support;
        let margin = X_MARGIN * (hi - lo) / 10.0;

        // subject means
        let xbar: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let occ = data.subject(i);
                (0..d)
                    .map(|l| {
                        let m = occ.iter().map(|y| y[l]).sum::<f64>() / occ.len() as f64;
                        m.clamp(lo + margin, hi - margin)
                    })
                    .collect()
            })
            .collect();
        let column = |l: usize| -> Vec<f64> { xbar.iter().map(|x| x[l]).collect() };

        let mut beta = Vec::with_capacity(q);
        let mut xi = Vec::with_capacity(q);
        for l in 0..q {
            let at = column(l);
            let share: Vec<f64> = (0..n)
                .map(|i| {
                    let occ = data.subject(i);
                    occ.iter().filter(|y| y[l] > 0.0).count() as f64 / occ.len() as f64
                })
                .collect();
            beta.push(penalized_fit_beta(&basis, &penalty, smooth, &at, &share));
            xi.push(penalized_fit_xi(&basis, &penalty, smooth, &at));
        }

        let mut vartheta = Vec::with_capacity(d);
        for l in 0..d {
            let groups: Vec<(f64, f64, usize)> = (0..n)
                .filter_map(|i| {
                    let vals: Vec<f64> = data.subject(i).iter().map(|y| y[l]).filter(|&v| v > 0.0).collect();
                    if vals.len() < 2 {
                        return None;
                    }
                    let m = vals.iter().sum::<f64>() / vals.len() as f64;
                    let ss = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>();
                    Some((m, ss, vals.len()))
                })
                .collect();
            vartheta.push(penalized_fit_vartheta(&var_basis, &penalty, smooth, &groups));
        }

        // regular atoms from k-means on pooled subject means
        let pooled: Vec<f64> = (q..d).flat_map(column).collect();
        let mut x_mu = vec![hp.mu_x0.clamp(lo, hi); kx];
        let mut x_var = vec![1.0; kx];
        let mut x_weights = vec![vec![1.0 / kx as f64; kx]; p];
        let mut labels_flat = vec![0usize; pooled.len()];
        if p > 0 {
            let (centres, labels) = kmeans_1d(&pooled, kx.min(pooled.len()), &mut rng, 100);
            for (k, c) in centres.iter().enumerate() {
                let members: Vec<f64> = pooled
                    .iter()
                    .zip(&labels)
                    .filter(|(_, &g)| g == k)
                    .map(|(v, _)| *v)
                    .collect();
                x_mu[k] = *c;
                if members.len() > 1 {
                    let v = members.iter().map(|m| (m - c).powi(2)).sum::<f64>() / (members.len() - 1) as f64;
                    x_var[k] = v.max(0.1);
                }
            }
            labels_flat = labels;
            for (r, w) in x_weights.iter_mut().enumerate() {
                let mut counts = vec![hp.alpha_x; kx];
                labels_flat[r * n..(r + 1) * n].iter().for_each(|&g| counts[g] += 1.0);
                let total: f64 = counts.iter().sum();
                w.iter_mut().zip(&counts).for_each(|(w, c)| *w = c / total);
            }
        }

        let params = Parameters {
            xi,
            x_weights,
            x_mu,
            x_var,
            eps_weights: vec![vec![1.0 / ke as f64; ke]; d],
            eps_atoms: vec![RestrictedErrorKernel::standard(); ke],
            vartheta,
            beta,
            rx: SphericalCorrelation::identity(d),
            re: SphericalCorrelation::identity(d),
        };
        let model = super::FittedModel::new(&dims, &params)?;

        let mut subjects = Vec::with_capacity(n);
        for i in 0..n {
            let x = xbar[i].clone();
            let xt = model.x_tilde(&x);
            let occ = data.subject(i);
            let mut w = Vec::with_capacity(occ.len());
            let mut consumed = Vec::with_capacity(occ.len());
            for y in occ {
                let c: Vec<bool> = y[..q].iter().map(|&v| v > 0.0).collect();
                let mut row = Vec::with_capacity(q + d);
                for l in 0..q {
                    let (a, b) = if c[l] {
                        (0.0, f64::INFINITY)
                    } else {
                        (f64::NEG_INFINITY, 0.0)
                    };
                    row.push(sample_trunc_normal(&mut rng, xt[l], 1.0, a, b));
                }
                for l in 0..d {
                    let latent = l < q && !c[l];
                    row.push(if latent { xt[q + l] } else { y[l] });
                }
                w.push(row);
                consumed.push(c);
            }
            let m = occ.len();
            subjects.push(SubjectState {
                x,
                w,
                consumed,
                x_labels: (0..p).map(|r| labels_flat[r * n + i]).collect(),
                eps_labels: vec![vec![0; d]; m],
                eps_branch: vec![vec![0; d]; m],
            });
        }

        let grid_mid = (hp.grid_size - 1) / 2;
        let mut state = Self {
            dims,
            hp: hp.clone(),
            names: data.names().to_vec(),
            subjects,
            params,
            var_xi: vec![smooth; q],
            var_vartheta: vec![smooth; d],
            var_beta: vec![smooth; q],
            rx_idx: (vec![grid_mid; d - 1], vec![grid_mid; theta_len(d)]),
            re_idx: (vec![grid_mid; d - 1], vec![grid_mid; theta_len(d)]),
            scale_xi: vec![hp.xi_step; q],
            scale_vartheta: vec![hp.vartheta_step; d],
            scale_x: vec![hp.x_step; d],
            acceptance: Acceptance {
                xi: vec![Counter::default(); q],
                vartheta: vec![Counter::default(); d],
                x: vec![Counter::default(); d],
                x_atom_mu: Counter::default(),
                x_atom_var: Counter::default(),
                eps_atom: Counter::default(),
                rx: Counter::default(),
                re: Counter::default(),
            },
            iteration: 0,
            rng,
            penalty,
            basis,
            var_basis,
        };

        for _ in 0..hp.warm_sweeps {
            state.update_x_mixture(false);
        }
        let errors = state.scaled_errors()?;
        for _ in 0..hp.warm_sweeps {
            state.update_error_mixture(&errors, false);
        }
        state.reset_counters();
        Ok(state)
    }

    fn reset_counters(&mut self) {
        let a = &mut self.acceptance;
        for c in a.xi.iter_mut().chain(a.vartheta.iter_mut()).chain(a.x.iter_mut()) {
            *c = Counter::default();
        }
        for c in [
            &mut a.x_atom_mu,
            &mut a.x_atom_var,
            &mut a.eps_atom,
            &mut a.rx,
            &mut a.re,
        ] {
            *c = Counter::default();
        }
    }
}
