//! Chain schedule, reproducibility, draw files and posterior mean grids.

use copula_deconv::evaluate::GridKind;
use copula_deconv::sampler::{
    estimate_densities, run_chain, DrawFormat, FittedModel, GridSpec, Hyperparameters, PosteriorDensity,
    PosteriorDraws, SamplerError,
};
use copula_deconv::simulate::{generate_main, MainScenario};
use copula_deconv::RecallDataset;

fn data(n: usize) -> RecallDataset {
    let s = MainScenario {
        n,
        ..MainScenario::default()
    };
    generate_main(&s, 21).unwrap().data.scaled()
}

fn short(iterations: usize, burn_in: usize, thin: usize) -> Hyperparameters {
    Hyperparameters {
        iterations,
        burn_in,
        thin,
        adapt_interval: 5,
        warm_sweeps: 2,
        ..Hyperparameters::default()
    }
}

fn chain(n: usize, hp: &Hyperparameters, seed: u64) -> PosteriorDraws {
    run_chain(&data(n), hp, seed).unwrap()
}

#[test]
fn schedule_bookkeeping() {
    let draws = chain(40, &short(10, 0, 1), 1);
    assert_eq!(draws.len(), 10);
    assert_eq!(draws.iterations(), (1..=10).collect::<Vec<_>>());
    let draws = chain(40, &short(20, 10, 3), 1);
    assert_eq!(draws.len(), 3);
    assert_eq!(draws.iterations(), &[13, 16, 19]);
    for r in draws.layout().acceptance.rates.values() {
        assert!((0.0..=1.0).contains(r));
    }
    assert_eq!(draws.layout().fields.len(), draws.rows()[0].len());
}

#[test]
fn same_seed_same_draws() {
    let hp = short(12, 4, 2);
    let a = chain(40, &hp, 77);
    let b = chain(40, &hp, 77);
    let (mut fa, mut fb) = (Vec::new(), Vec::new());
    a.write(&mut fa, DrawFormat::Csv).unwrap();
    b.write(&mut fb, DrawFormat::Csv).unwrap();
    assert_eq!(fa, fb);
    let c = chain(40, &hp, 78);
    assert_ne!(a.rows(), c.rows());
}

#[test]
fn draw_files_round_trip() {
    let draws = chain(30, &short(8, 2, 2), 5);
    for format in [DrawFormat::Csv, DrawFormat::Binary] {
        let mut buf = Vec::new();
        draws.write(&mut buf, format).unwrap();
        let back = PosteriorDraws::read(buf.as_slice()).unwrap();
        assert_eq!(back, draws);
    }
    assert!(PosteriorDraws::read(&b"# deconv-draws v1\nnot a layout\n"[..]).is_err());
}

#[test]
fn single_draw_estimate_is_that_draw() {
    let draws = chain(30, &short(6, 5, 1), 8);
    assert_eq!(draws.len(), 1);
    let post = PosteriorDensity::from_draws(&draws).unwrap();
    let model = FittedModel::new(&draws.layout().dims, &draws.parameters(0).unwrap()).unwrap();
    for l in 0..3 {
        for x in [0.3, 2.0, 4.4, 7.9] {
            assert_eq!(post.marginal(l, x), model.marginal_pdf(l, x));
            assert_eq!(post.variance(l, x), model.variance(l, x));
        }
    }
    assert_eq!(post.joint(&[1.0, 2.0, 3.0]), model.joint_pdf(&[1.0, 2.0, 3.0]));
    assert_eq!(post.probability(1, 2.5), model.probability(1, 2.5));
}

#[test]
fn constant_variance_coefficients_give_flat_variance() {
    let draws = chain(30, &short(6, 4, 1), 9);
    let layout = draws.layout().clone();
    let rows: Vec<Vec<f64>> = draws
        .rows()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            for (v, f) in r.iter_mut().zip(&layout.fields) {
                if f.starts_with("vartheta.") {
                    *v = 0.3;
                }
            }
            r
        })
        .collect();
    let flat = PosteriorDraws::new(layout, draws.iterations().to_vec(), rows).unwrap();
    let grids = estimate_densities(&flat, &GridSpec::default()).unwrap();
    let mut seen = 0;
    for g in grids.iter().filter(|g| g.kind == GridKind::Variance) {
        for v in &g.values {
            assert!((v / 0.3f64.exp() - 1.0).abs() < 1e-12);
        }
        seen += 1;
    }
    assert_eq!(seen, 3);
}

#[test]
fn grid_set_contents_and_errors() {
    let draws = chain(30, &short(8, 4, 2), 10);
    let spec = GridSpec {
        points: 101,
        bivariate_points: 21,
        ..GridSpec::default()
    };
    let grids = estimate_densities(&draws, &spec).unwrap();
    let count = |k: GridKind| grids.iter().filter(|g| g.kind == k).count();
    assert_eq!(count(GridKind::Marginal), 3);
    assert_eq!(count(GridKind::Joint), 3);
    assert_eq!(count(GridKind::Error), 3);
    assert_eq!(count(GridKind::Variance), 3);
    assert_eq!(count(GridKind::Probability), 2);
    for g in grids.iter().filter(|g| g.kind.is_density() && g.axes.len() == 1) {
        assert!((g.integral() - 1.0).abs() < 1e-6, "{:?}", g.components);
    }
    for g in grids.iter().filter(|g| g.kind == GridKind::Marginal) {
        let raw = g.to_raw();
        assert!((raw.integral() - 1.0).abs() < 1e-3);
    }

    let bad = GridSpec {
        range: Some((-1.0, 5.0)),
        ..GridSpec::default()
    };
    assert!(matches!(
        estimate_densities(&draws, &bad),
        Err(SamplerError::GridOutOfRange { .. })
    ));
    let empty = PosteriorDraws::new(draws.layout().clone(), vec![], vec![]).unwrap();
    assert!(matches!(
        estimate_densities(&empty, &spec),
        Err(SamplerError::EmptyDraws)
    ));
}

#[test]
fn bivariate_table_tracks_the_exact_joint_up_to_the_support_ends() {
    let draws = chain(60, &short(30, 20, 2), 12);
    let post = PosteriorDensity::from_draws(&draws).unwrap();
    let table = post.bivariate_table(0, 2, 4001);
    for x in [1e-9, 3.3e-7, 1e-4, 2.7e-3, 0.05, 1.0, 4.2, 9.99, 10.0 - 1e-7] {
        for y in [1e-6, 0.7, 5.5, 10.0 - 1e-5] {
            let (t, e) = (table.pdf(x, y), post.bivariate(0, 2, x, y));
            assert!((t / e - 1.0).abs() < 0.01, "({x}, {y}): table {t} exact {e}");
        }
    }
    assert_eq!(table.pdf(0.0, 1.0), 0.0);
    assert_eq!(table.pdf(1.0, 10.0), 0.0);
}
