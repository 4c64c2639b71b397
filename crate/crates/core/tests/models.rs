use cdpo_core::eval::empirical_w2;
use cdpo_core::genmodels::{Family, GenerativeModel, ModelConfig};
use cdpo_core::nn::Standardizer;
use cdpo_core::rng;

fn model(family: Family, d_y: usize, seed: u64) -> GenerativeModel {
    GenerativeModel::new(ModelConfig::new(family, 2, d_y), Standardizer::identity(d_y), seed).unwrap()
}

/// A 1-D CNF with visibly non-trivial spline parameters.
fn bent_cnf(seed: u64) -> GenerativeModel {
    let mut m = model(Family::Cnf, 1, seed);
    let mut r = rng::stream(seed, 1);
    let p: Vec<f64> = m.params().iter().map(|v| v + 0.4 * rng::normal(&mut r)).collect();
    m.set_params(&p).unwrap();
    m
}

fn zeroed(family: Family, d_y: usize) -> GenerativeModel {
    let mut m = model(family, d_y, 0);
    let n = m.n_params();
    m.set_params(&vec![0.0; n]).unwrap();
    m
}

const V: [f64; 2] = [0.3, -0.7];

/// Density on a uniform grid over `[lo, hi]`.
fn density_grid(m: &GenerativeModel, lo: f64, hi: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (hi - lo) / n as f64;
    let ys: Vec<f64> = (0..=n).map(|i| lo + i as f64 * h).collect();
    let ps = ys.iter().map(|&y| m.log_density(&[y], &V, 1).unwrap().exp()).collect();
    (ys, ps)
}

#[test]
fn cnf_density_integrates_to_one() {
    for seed in 0..3 {
        let m = bent_cnf(seed);
        let (ys, ps) = density_grid(&m, -40.0, 40.0, 160_000);
        let h = ys[1] - ys[0];
        let mass: f64 = h * (ps.iter().sum::<f64>() - 0.5 * (ps[0] + ps[ps.len() - 1]));
        assert!((mass - 1.0).abs() < 1e-3, "seed {seed}: mass {mass}");
    }
}

#[test]
fn cnf_samples_match_inverse_cdf_draws() {
    let m = bent_cnf(7);
    let (ys, ps) = density_grid(&m, -40.0, 40.0, 160_000);
    let h = ys[1] - ys[0];
    let mut cdf = vec![0.0];
    for w in ps.windows(2) {
        cdf.push(cdf.last().unwrap() + 0.5 * h * (w[0] + w[1]));
    }
    let total = *cdf.last().unwrap();
    let n = 10_000;
    let mut r = rng::stream(8, 0);
    let exact: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let u = rand::Rng::random::<f64>(&mut r) * total;
            let k = cdf.partition_point(|&c| c < u).clamp(1, cdf.len() - 1);
            let t = (u - cdf[k - 1]) / (cdf[k] - cdf[k - 1]).max(f64::MIN_POSITIVE);
            vec![ys[k - 1] + t * h]
        })
        .collect();
    let drawn = m.sample(&V, 1, n, &mut rng::stream(9, 0)).unwrap();
    let w = empirical_w2(&exact, &drawn).unwrap();
    assert!(w < 0.05, "w2 {w}");
}

#[test]
fn identity_cnf_samples_are_standard_normal() {
    let m = zeroed(Family::Cnf, 1);
    let half_log_two_pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    assert!((m.log_density(&[0.0], &V, 0).unwrap() + half_log_two_pi).abs() < 1e-12);
    let n = 100_000;
    let draws = m.sample(&V, 0, n, &mut rng::stream(3, 0)).unwrap();
    let mean = draws.iter().map(|d| d[0]).sum::<f64>() / n as f64;
    assert!(mean.abs() <= 4.0 / (n as f64).sqrt(), "mean {mean}");
}

#[test]
fn constant_discriminator_gives_two_log_half() {
    let m = zeroed(Family::Cgan, 2);
    let mut r = rng::stream(1, 0);
    for y in [[0.0, 0.0], [1.5, -2.0]] {
        assert_eq!(m.discriminator(&y, &V, 1).unwrap(), 0.5);
        let t = m.log_gen_term(&y, &V, 1, 3, &mut r).unwrap();
        assert!(!t.exact);
        assert!((t.value - 2.0 * 0.5f64.ln()).abs() < 1e-12);
    }
}

#[test]
fn frozen_model_samples_reproducibly() {
    for family in Family::ALL {
        let mut m = model(family, 2, 4);
        m.freeze();
        let a = m.sample(&V, 1, 5, &mut rng::stream(2, 0)).unwrap();
        let b = m.sample(&V, 1, 5, &mut rng::stream(2, 0)).unwrap();
        assert_eq!(a, b, "{family}");
    }
}
