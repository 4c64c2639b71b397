//! Acceptance criteria, one test per criterion. Each test prints a single
//! `criterion N: PASS|FAIL` line to stderr before asserting.

use std::io::Write;
use std::time::{Duration, Instant};

use cdpo_core::data::{generate_moons_dataset, MoonsConfig, ObservationalSample, PODataset};
use cdpo_core::eval::{assignment, avg_log_prob, empirical_w2, evaluate_w2, Conditioning};
use cdpo_core::exec::Exec;
use cdpo_core::genmodels::{Family, GenerativeModel, ModelConfig, Term};
use cdpo_core::losses::{gdr_loss, iptw_equivalence_check, iptw_loss, plugin_loss, ra_loss, LossContext, LossKind};
use cdpo_core::nn::{Restriction, Standardizer};
use cdpo_core::nuisance::{clip_propensity, NuisanceEstimates, Propensity};
use cdpo_core::orthocheck::{run_suite, scaling_studies, SuiteConfig};
use cdpo_core::rng::{self, Rng};
use cdpo_core::train::{fit_nuisance, train_two_stage, EmaState, TrainConfig, TrainedLearner};
use rand::Rng as _;

fn report(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n}: {verdict} {detail}");
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let k = v.len() as f64;
    let m = v.iter().sum::<f64>() / k;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (k - 1.0);
    (m, (var / k).sqrt())
}

#[test]
fn criterion_1_theory_suite() {
    let start = Instant::now();
    let cfg = SuiteConfig::default();
    let rep = run_suite(&cfg, Exec::default());
    let elapsed = start.elapsed();
    let kinds = [
        "risk_identification",
        "eif_mean_zero",
        "gdr_cross_derivative",
        "ra_outcome_cross_derivative",
        "double_robust_propensity_only",
        "double_robust_outcome_only",
    ];
    let per_kind: Vec<usize> = kinds
        .iter()
        .map(|k| rep.records.iter().filter(|r| r.name.ends_with(k)).count())
        .collect();
    let covered = cfg.n_dgps >= 5 && per_kind.iter().all(|&c| c == cfg.n_dgps);
    let fails: Vec<&str> = rep.failures().map(|r| r.name.as_str()).collect();
    let pass = covered && rep.all_passed() && elapsed < Duration::from_secs(120);
    report(
        1,
        pass,
        &format!("{} dgps, {} records, failures {fails:?}, {elapsed:.1?}", cfg.n_dgps, rep.records.len()),
    );
    assert!(pass);
}

#[test]
fn criterion_2_remainder_scaling() {
    let start = Instant::now();
    let mut slopes = Vec::new();
    let mut pass = true;
    for seed in 0..5 {
        let cfg = SuiteConfig {
            seed,
            ..Default::default()
        };
        let reps = scaling_studies(&cfg).expect("scaling study");
        let gdr = reps[0].slope.unwrap_or(f64::NAN);
        let ra = reps[1].slope.unwrap_or(f64::NAN);
        assert_eq!((reps[0].loss, reps[1].loss), (LossKind::Gdr, LossKind::Ra));
        pass &= (3.5..=4.5).contains(&gdr) && (1.5..=2.5).contains(&ra);
        slopes.push((gdr, ra));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(300);
    let shown: Vec<String> = slopes.iter().map(|(g, r)| format!("gdr {g:.2}/ra {r:.2}")).collect();
    report(2, pass, &format!("[{}] {elapsed:.1?}", shown.join(", ")));
    assert!(pass);
}

/// Tuned settings shared by the moons benchmark runs (chosen on seeds
/// 1 to 3, which the acceptance seeds do not reuse).
fn tuned(learner: LossKind, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::for_family(Family::Cnf, learner);
    cfg.nuisance_noise_y = 0.01;
    cfg.target.optimizer.lr = 0.003;
    cfg.target_noise_y = 0.05;
    cfg.seed = seed;
    cfg
}

fn conditioning(t: &TrainedLearner) -> Conditioning {
    if t.conditions_on_full_x() {
        Conditioning::FullX
    } else {
        Conditioning::Masked
    }
}

const BENCH_SEEDS: std::ops::Range<u64> = 100..110;

#[test]
fn criterion_3_moons_benchmark() {
    let start = Instant::now();
    let sizes = [500usize, 2000, 4000];
    // w2[learner][size] = per-seed arm-averaged W2
    let mut w2 = vec![vec![Vec::new(); sizes.len()]; LossKind::ALL.len()];
    for seed in BENCH_SEEDS {
        for (si, &n) in sizes.iter().enumerate() {
            let mc = MoonsConfig {
                n_train: n,
                n_test: 100,
                propensity_coef: [0.75, -1.0],
                seed,
                ..Default::default()
            };
            let data = generate_moons_dataset(&mc).unwrap();
            for (li, &learner) in LossKind::ALL.iter().enumerate() {
                let t = train_two_stage(&data.train, &tuned(learner, seed)).unwrap();
                let m = t.eval_model();
                let v: f64 = (0..2)
                    .map(|a| {
                        evaluate_w2(&m, &data.test, a, 200, 100, conditioning(&t), 9, Exec::default())
                            .unwrap()
                            .aggregate
                            .center
                    })
                    .sum::<f64>()
                    / 2.0;
                w2[li][si].push(v);
            }
        }
    }
    let elapsed = start.elapsed();
    let mut lines = Vec::new();
    let mut consistent = true;
    for (li, learner) in LossKind::ALL.iter().enumerate() {
        let small = mean_se(&w2[li][0]).0;
        let large = mean_se(&w2[li][2]).0;
        consistent &= large <= small;
        lines.push(format!("{learner} {small:.4}->{large:.4}"));
    }
    let idx = |k: LossKind| LossKind::ALL.iter().position(|&l| l == k).unwrap();
    let (gdr, gdr_se) = mean_se(&w2[idx(LossKind::Gdr)][2]);
    let (plug, plug_se) = mean_se(&w2[idx(LossKind::PlugIn)][2]);
    let pooled = (gdr_se * gdr_se + plug_se * plug_se).sqrt();
    let ordered = gdr <= plug + pooled;
    let pass = consistent && ordered && elapsed < Duration::from_secs(7200);
    report(
        3,
        pass,
        &format!(
            "(a) {} [{}]; (b) {} gdr {gdr:.4} vs plug-in {plug:.4} + se {pooled:.4}; {elapsed:.0?}",
            if consistent { "ok" } else { "violated" },
            lines.join(", "),
            if ordered { "ok" } else { "violated" },
        ),
    );
    assert!(pass);
}

/// Disjoint from the seeds used to pick the linear-target settings.
const LINEAR_SEEDS: std::ops::Range<u64> = 200..210;

#[test]
fn criterion_4_linear_target_log_prob() {
    let start = Instant::now();
    let mut scores = Vec::new();
    for seed in LINEAR_SEEDS {
        let mc = MoonsConfig {
            n_train: 2000,
            n_test: 1000,
            seed,
            ..Default::default()
        };
        let data = generate_moons_dataset(&mc).unwrap();
        let score = |learner: LossKind| -> f64 {
            let mut cfg = tuned(learner, seed);
            cfg.target_restriction = Restriction::Linear;
            cfg.target.optimizer.lr = 0.01;
            let t = train_two_stage(&data.train, &cfg).unwrap();
            let m = t.eval_model();
            (0..2)
                .map(|a| avg_log_prob(&m, &data.test, a, conditioning(&t)).unwrap().aggregate.center)
                .sum::<f64>()
                / 2.0
        };
        scores.push((score(LossKind::Gdr), score(LossKind::Iptw), score(LossKind::PlugIn)));
    }
    let elapsed = start.elapsed();
    let n = scores.len() as f64;
    let vs_iptw = scores.iter().filter(|s| s.0 > s.1).count() as f64 / n;
    let vs_plug = scores.iter().filter(|s| s.0 > s.2).count() as f64 / n;
    let pass = scores.len() >= 10 && vs_iptw > 0.5 && vs_plug > 0.5 && elapsed < Duration::from_secs(3600);
    report(
        4,
        pass,
        &format!(
            "gdr beats iptw in {:.0}% and plug-in in {:.0}% of {} runs; {elapsed:.0?}",
            100.0 * vs_iptw,
            100.0 * vs_plug,
            scores.len()
        ),
    );
    assert!(pass);
}

fn confounded_1d(n: usize, seed: u64) -> PODataset {
    let mut r = rng::stream(seed, 0);
    let samples = (0..n)
        .map(|_| {
            let x = vec![rng::normal(&mut r), rng::normal(&mut r)];
            let p = 1.0 / (1.0 + (-x[0]).exp());
            let a = u8::from(r.random::<f64>() < p);
            let y = vec![0.8 * x[0] - 0.3 * x[1] + f64::from(a) + 0.5 * rng::normal(&mut r)];
            ObservationalSample { x, a, y }
        })
        .collect();
    PODataset::new(samples, None).unwrap()
}

#[test]
fn criterion_5_iptw_equivalence() {
    let ds = confounded_1d(400, 5);
    let mut cfg = TrainConfig::for_family(Family::Cnf, LossKind::Gdr).with_epochs(3);
    cfg.seed = 5;
    let (nuis, _) = fit_nuisance(&ds, &cfg).unwrap();
    let target = nuis.outcome().unwrap().clone();
    let mut r = rng::stream(6, 0);
    let mut worst: f64 = 0.0;
    let mut all = true;
    for _ in 0..100 {
        let rows: Vec<usize> = (0..32).map(|_| r.random_range(0..ds.len())).collect();
        let a = r.random_range(0..2u8);
        let rep = iptw_equivalence_check(&target, &nuis, &ds, &rows, a, 1e-6).unwrap();
        worst = worst.max(rep.relative_difference);
        all &= rep.holds;
    }
    report(5, all, &format!("max relative difference {worst:.2e} over 100 batches"));
    assert!(all);
}

fn brute_force(cost: &[f64], n: usize) -> f64 {
    fn go(cost: &[f64], n: usize, row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if row == n {
            *best = best.min(acc);
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                go(cost, n, row + 1, used, acc + cost[row * n + j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, n, 0, &mut vec![false; n], 0.0, &mut best);
    best
}

fn points(r: &mut Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| rng::normals(r, d)).collect()
}

#[test]
fn criterion_6_metric_oracle() {
    let mut r = rng::stream(60, 0);
    let n = 10_000;
    let a: Vec<Vec<f64>> = (0..n).map(|_| vec![rng::normal(&mut r)]).collect();
    let b: Vec<Vec<f64>> = (0..n).map(|_| vec![2.0 + 2.0 * rng::normal(&mut r)]).collect();
    let w = empirical_w2(&a, &b).unwrap();
    // W2(N(m1, s1²), N(m2, s2²))² = (m1 - m2)² + (s1 - s2)²
    let gauss_ok = (w - 5f64.sqrt()).abs() <= 0.05;

    let mut assign_ok = true;
    for p in 1..=7 {
        for _ in 0..20 {
            let cost: Vec<f64> = (0..p * p).map(|_| f64::from(r.random_range(0..50u32))).collect();
            let sol = assignment(&cost, p);
            let mut seen = vec![false; p];
            sol.iter().for_each(|&j| seen[j] = true);
            let total: f64 = sol.iter().enumerate().map(|(i, &j)| cost[i * p + j]).sum();
            assign_ok &= seen.iter().all(|&s| s) && total == brute_force(&cost, p);
        }
    }

    let mut axioms_ok = true;
    for t in 0..100 {
        let (m, d) = (1 + t % 8, 1 + t % 3);
        let x = points(&mut r, m, d);
        let y = points(&mut r, m, d);
        let z = points(&mut r, m, d);
        let dxy = empirical_w2(&x, &y).unwrap();
        let dyx = empirical_w2(&y, &x).unwrap();
        let dyz = empirical_w2(&y, &z).unwrap();
        let dxz = empirical_w2(&x, &z).unwrap();
        axioms_ok &= empirical_w2(&x, &x).unwrap() == 0.0
            && dxy >= 0.0
            && (dxy - dyx).abs() <= 1e-12
            && dxz <= dxy + dyz + 1e-12;
    }
    let pass = gauss_ok && assign_ok && axioms_ok;
    report(
        6,
        pass,
        &format!("gaussian w2 {w:.4} vs {:.4}; assignment {assign_ok}; axioms {axioms_ok}", 5f64.sqrt()),
    );
    assert!(pass);
}

fn loss_identities_hold() -> bool {
    let mut r = rng::stream(70, 0);
    let arms = [0u8, 1, 1, 0, 1];
    let samples = arms
        .iter()
        .map(|&a| ObservationalSample {
            x: rng::normals(&mut r, 2),
            a,
            y: rng::normals(&mut r, 1),
        })
        .collect();
    let ds = PODataset::new(samples, None).unwrap();
    let cnf = |s| GenerativeModel::new(ModelConfig::new(Family::Cnf, 2, 1), Standardizer::identity(1), s).unwrap();
    let m = cnf(1);
    let nuis = |pi1| NuisanceEstimates::new(Some(cnf(2)), Propensity::Constant(pi1), 0.1);
    let rows = [0, 1, 2, 3, 4];
    let mut ok = true;
    for pi1 in [0.2, 0.5, 0.9] {
        let n = nuis(pi1);
        for kind in LossKind::ALL {
            let ctx = LossContext::new(kind, &ds, Some(&n));
            for a in 0..2u8 {
                let pi = clip_propensity(if a == 1 { pi1 } else { 1.0 - pi1 }, 0.1);
                for row in 0..ds.len() {
                    let ind = f64::from(ds.samples[row].a == a);
                    let expected = match kind {
                        LossKind::PlugIn => (ind, 0.0),
                        LossKind::Ra => (ind, 1.0 - ind),
                        LossKind::Iptw => (ind / pi, 0.0),
                        LossKind::Gdr => (ind / pi, 1.0 - ind / pi),
                    };
                    ok &= ctx.weights(row, a) == expected;
                }
            }
        }
    }
    let only_treated = [1, 2, 4];
    let unit = nuis(1.0);
    let plug = plugin_loss(&m, &ds, &only_treated, 1, 3).unwrap().value;
    ok &= iptw_loss(&m, &unit, &ds, &only_treated, 1, 3).unwrap().value == plug;
    ok &= gdr_loss(&m, &unit, &ds, &only_treated, 1, 1, 3).unwrap().value == plug;
    ok &= plugin_loss(&m, &ds, &only_treated, 0, 3).unwrap().value == 0.0;
    let half = nuis(0.5);
    let plug = plugin_loss(&m, &ds, &rows, 1, 3).unwrap().value;
    ok &= iptw_loss(&m, &half, &ds, &rows, 1, 3).unwrap().value == 2.0 * plug;
    ok &= gdr_loss(&m, &half, &ds, &only_treated, 0, 1, 3).unwrap().value
        == ra_loss(&m, &half, &ds, &only_treated, 0, 1, 3).unwrap().value;
    ok
}

#[test]
fn criterion_7_unit_identities() {
    let mut ema = EmaState::new(0.5, &[0.0, 0.0]).unwrap();
    let mut ema_err: f64 = 0.0;
    for k in 1..=30 {
        ema.update(&[1.0, 1.0]).unwrap();
        let expected = 1.0 - 0.5f64.powi(k);
        ema_err = ema.shadow.iter().fold(ema_err, |e, s| e.max((s - expected).abs()));
    }
    let ema_ok = ema_err <= 1e-12;
    let table = [
        (0.0, 0.1),
        (0.05, 0.1),
        (0.1, 0.1),
        (0.25, 0.25),
        (0.9, 0.9),
        (1.0, 1.0),
        (1.5, 1.0),
    ];
    let clip_ok = table.iter().all(|&(p, want)| clip_propensity(p, 0.1) == want);
    let loss_ok = loss_identities_hold();
    let pass = ema_ok && clip_ok && loss_ok;
    report(
        7,
        pass,
        &format!("ema max error {ema_err:.1e}; clipping table {clip_ok}; loss identities {loss_ok}"),
    );
    assert!(pass);
}

#[test]
fn criterion_8_gradient_checks() {
    let mut worst = Vec::new();
    let mut pass = true;
    for family in Family::ALL {
        let mut fam_worst: f64 = 0.0;
        for i in 0..20u64 {
            let mut r = rng::stream(80 + i, family as u64);
            let d_y = 1 + (i as usize % 2);
            let m = GenerativeModel::new(ModelConfig::new(family, 2, d_y), Standardizer::identity(d_y), i).unwrap();
            let v = rng::normals(&mut r, 2);
            let y = rng::normals(&mut r, d_y);
            let a = (i % 2) as u8;
            let terms = [Term { coef: 1.0, y: &y }];
            let seed = r.random::<u64>();
            let value = |p: &[f64]| {
                m.row_grad_with(p, &v, a, &terms, 1, false, &mut rng::stream(seed, 0))
                    .unwrap()
            };
            let p0 = m.params().to_vec();
            let analytic = value(&p0).grad;
            let h = 1e-5;
            let fd: Vec<f64> = (0..p0.len())
                .map(|k| {
                    let mut pp = p0.clone();
                    pp[k] += h;
                    let mut pm = p0.clone();
                    pm[k] -= h;
                    (value(&pp).value - value(&pm).value) / (2.0 * h)
                })
                .collect();
            let diff = analytic.iter().zip(&fd).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            let norm = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
            let rel = diff / norm.max(1e-12);
            fam_worst = fam_worst.max(rel);
        }
        pass &= fam_worst <= 1e-3;
        worst.push(format!("{family} {fam_worst:.1e}"));
    }
    report(8, pass, &format!("worst relative error [{}]", worst.join(", ")));
    assert!(pass);
}
