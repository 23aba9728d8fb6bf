//! Unconstrained minimization (BFGS with backtracking) and 1-D k-means, used
//! to produce starting values.

use rand::Rng;

/// Central-difference gradient.
fn gradient<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], fx: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-6 * (1.0 + x[i].abs());
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        g[i] = if up.is_finite() && down.is_finite() {
            (up - down) / (2.0 * h)
        } else if up.is_finite() {
            (up - fx) / h
        } else {
            (fx - down) / h
        };
    }
    g
}

/// Minimizes `f` from `x0`; returns the best point found.
pub fn minimize<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], max_iter: usize) -> Vec<f64> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    if !fx.is_finite() {
        return x;
    }
    let mut g = gradient(&mut f, &x, fx);
    // inverse Hessian approximation, row-major
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    for _ in 0..max_iter {
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < 1e-8 * (1.0 + fx.abs()) {
            break;
        }
        let mut dir: Vec<f64> = (0..n)
            .map(|i| -(0..n).map(|j| h[i * n + j] * g[j]).sum::<f64>())
            .collect();
        let mut slope: f64 = dir.iter().zip(&g).map(|(d, g)| d * g).sum();
        if slope >= 0.0 {
            for (i, row) in h.chunks_mut(n).enumerate() {
                row.iter_mut()
                    .enumerate()
                    .for_each(|(j, v)| *v = if i == j { 1.0 } else { 0.0 });
            }
            dir = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let ft = f(&trial);
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fxn)) = accepted else { break };
        let gn = gradient(&mut f, &xn, fxn);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let converged = (fx - fxn).abs() <= 1e-12 * (1.0 + fx.abs());
        x = xn;
        fx = fxn;
        g = gn;
        if converged {
            break;
        }
        if sy > 1e-12 {
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }
    }
    x
}

/// Lloyd's algorithm with k-means++ seeding on scalar data. Returns
/// `(centres, labels)`; clusters that end up empty keep their seed centre.
pub fn kmeans_1d<R: Rng + ?Sized>(data: &[f64], k: usize, rng: &mut R, max_iter: usize) -> (Vec<f64>, Vec<usize>) {
    assert!(k >= 1 && !data.is_empty());
    let mut centres = Vec::with_capacity(k);
    centres.push(data[rng.random_range(0..data.len())]);
    let mut dist: Vec<f64> = data.iter().map(|&v| (v - centres[0]).powi(2)).collect();
    while centres.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = data.len() - 1;
            for (i, &d) in dist.iter().enumerate() {
                u -= d;
                if u < 0.0 {
                    idx = i;
                    break;
                }
            }
            data[idx]
        } else {
            data[rng.random_range(0..data.len())]
        };
        centres.push(pick);
        for (d, &v) in dist.iter_mut().zip(data) {
            *d = d.min((v - pick).powi(2));
        }
    }
    let mut labels = vec![0usize; data.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        for (lab, &v) in labels.iter_mut().zip(data) {
            let best = (0..k)
                .min_by(|&a, &b| (v - centres[a]).abs().total_cmp(&(v - centres[b]).abs()))
                .expect("k >= 1");
            if best != *lab {
                *lab = best;
                changed = true;
            }
        }
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&lab, &v) in labels.iter().zip(data) {
            sums[lab] += v;
            counts[lab] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centres[c] = sums[c] / counts[c] as f64;
            }
        }
        if !changed {
            break;
        }
    }
    (centres, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn rosenbrock() {
        let x = minimize(
            |v| (1.0 - v[0]).powi(2) + 100.0 * (v[1] - v[0] * v[0]).powi(2),
            &[-1.2, 1.0],
            500,
        );
        assert!((x[0] - 1.0).abs() < 1e-4 && (x[1] - 1.0).abs() < 1e-4, "{x:?}");
    }

    #[test]
    fn kmeans_separates_clusters() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..30)
            .map(|i| {
                if i < 15 {
                    1.0 + 0.01 * i as f64
                } else {
                    8.0 + 0.01 * i as f64
                }
            })
            .collect();
        let (c, l) = kmeans_1d(&data, 2, &mut rng, 50);
        assert_ne!(l[0], l[29]);
        assert!(l[..15].iter().all(|&v| v == l[0]));
        let mut c = c;
        c.sort_by(f64::total_cmp);
        assert!((c[0] - 1.07).abs() < 1e-9 && (c[1] - 8.22).abs() < 1e-9);
    }
}
