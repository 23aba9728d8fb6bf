//! Metropolis–Hastings moves: exact acceptance probabilities and detailed
//! balance of the copula grid move.

use copula_deconv::sampler::{accept, grid_move};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TRIALS: usize = 200_000;

fn frequency(log_ratio: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..TRIALS).filter(|_| accept(&mut rng, log_ratio)).count() as f64 / TRIALS as f64
}

#[test]
fn acceptance_matches_hand_computed_ratio() {
    // two-point state: target 0.2 vs 0.6 under a symmetric proposal
    let (a, b) = (0.2f64, 0.6f64);
    let se = (0.25 / TRIALS as f64).sqrt();
    assert!((frequency((a / b).ln(), 1) - 1.0 / 3.0).abs() < 5.0 * se);
    assert_eq!(frequency((b / a).ln(), 2), 1.0);
    assert_eq!(frequency(0.0, 3), 1.0);
    assert_eq!(frequency(f64::NAN, 4), 0.0);
    assert_eq!(frequency(f64::NEG_INFINITY, 5), 0.0);
}

/// Exact kernel of the grid move: each of {left, stay, right} with
/// probability 1/3, off-grid proposals rejected.
fn kernel(target: &[f64]) -> Vec<Vec<f64>> {
    let m = target.len();
    let mut k = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in [i.wrapping_sub(1), i + 1] {
            if j < m {
                k[i][j] = (target[j] / target[i]).min(1.0) / 3.0;
            }
        }
        k[i][i] = 1.0 - k[i].iter().sum::<f64>();
    }
    k
}

#[test]
fn grid_move_is_reversible_on_three_points() {
    let target = [0.5, 2.0, 1.0];
    let z: f64 = target.iter().sum();
    let pi: Vec<f64> = target.iter().map(|t| t / z).collect();
    let k = kernel(&target);
    for i in 0..3 {
        for j in 0..3 {
            assert!((pi[i] * k[i][j] - pi[j] * k[j][i]).abs() < 1e-15);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..3 {
        let mut counts = [0usize; 3];
        for _ in 0..TRIALS {
            let (j, ln, _) = grid_move::<_, (), _>(&mut rng, i, 3, target[i].ln(), |j| Ok(target[j].ln())).unwrap();
            assert_eq!(ln, target[j].ln());
            counts[j] += 1;
        }
        for j in 0..3 {
            let f = counts[j] as f64 / TRIALS as f64;
            let se = (k[i][j] * (1.0 - k[i][j]) / TRIALS as f64).sqrt().max(1e-9);
            assert!((f - k[i][j]).abs() < 5.0 * se, "K[{i}][{j}] = {} observed {f}", k[i][j]);
        }
    }
}

#[test]
fn grid_chain_settles_on_target() {
    let target = [0.5, 2.0, 1.0, 0.25, 3.0];
    let z: f64 = target.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut pos = 0;
    let mut ln = target[0].ln();
    let mut counts = [0usize; 5];
    let n = 400_000;
    for _ in 0..n {
        let (p, l, _) = grid_move::<_, (), _>(&mut rng, pos, 5, ln, |j| Ok(target[j].ln())).unwrap();
        pos = p;
        ln = l;
        counts[pos] += 1;
    }
    for (c, t) in counts.iter().zip(target) {
        assert!((*c as f64 / n as f64 - t / z).abs() < 0.01);
    }
}

#[test]
fn edge_proposals_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut rejected = 0;
    for _ in 0..30_000 {
        let (j, _, ok) = grid_move::<_, (), _>(&mut rng, 0, 4, 0.0, |_| Ok(0.0)).unwrap();
        assert!(j <= 1);
        rejected += !ok as usize;
    }
    let f = rejected as f64 / 30_000.0;
    assert!((f - 1.0 / 3.0).abs() < 0.015);
}
