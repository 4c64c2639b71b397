use cdpo_core::data::{generate_moons_dataset, MoonsConfig, ObservationalSample, PODataset};
use cdpo_core::eval::{avg_log_prob, Conditioning};
use cdpo_core::exec::Exec;
use cdpo_core::genmodels::{Family, ModelError};
use cdpo_core::losses::LossKind;
use cdpo_core::nn::Restriction;
use cdpo_core::optim::Optimizer;
use cdpo_core::train::{fit_nuisance, train_two_stage, train_two_stage_with, TrainConfig, TrainError};

fn moons(n: usize, seed: u64) -> PODataset {
    let cfg = MoonsConfig {
        n_train: n,
        n_test: 0,
        seed,
        ..Default::default()
    };
    generate_moons_dataset(&cfg).unwrap().train
}

fn quick(family: Family, learner: LossKind) -> TrainConfig {
    let mut cfg = TrainConfig::for_family(family, learner).with_epochs(2);
    cfg.seed = 11;
    cfg.exec = Exec::Sequential;
    cfg
}

#[test]
fn same_seed_gives_identical_parameters() {
    let ds = moons(150, 1);
    for family in [Family::Cnf, Family::Cvae] {
        let cfg = quick(family, LossKind::Gdr);
        let a = train_two_stage(&ds, &cfg).unwrap();
        let b = train_two_stage(&ds, &cfg).unwrap();
        assert_eq!(a.target.params(), b.target.params(), "{family}");
        assert_eq!(a.ema.shadow, b.ema.shadow);
    }
}

#[test]
fn parallel_and_sequential_training_agree() {
    let ds = moons(120, 2);
    let mut cfg = quick(Family::Cnf, LossKind::Gdr);
    let seq = train_two_stage(&ds, &cfg).unwrap();
    cfg.exec = Exec::Parallel;
    let par = train_two_stage(&ds, &cfg).unwrap();
    assert_eq!(seq.target.params(), par.target.params());
}

#[test]
fn stage_two_leaves_the_nuisance_untouched() {
    let ds = moons(150, 3);
    for learner in [LossKind::Ra, LossKind::Gdr] {
        let cfg = quick(Family::Cnf, learner);
        let (alone, _) = fit_nuisance(&ds, &cfg).unwrap();
        let t = train_two_stage(&ds, &cfg).unwrap();
        let n = t.nuisance.as_ref().unwrap();
        assert_eq!(n.outcome_hash(), alone.outcome_hash());
        assert!(n.outcome().unwrap().is_frozen());
    }
}

#[test]
fn optimizer_step_on_frozen_model_is_rejected() {
    let ds = moons(100, 4);
    let (nuis, _) = fit_nuisance(&ds, &quick(Family::Cnf, LossKind::Gdr)).unwrap();
    let mut m = nuis.outcome().unwrap().clone();
    let mut opt = Optimizer::new(TrainConfig::default().target.optimizer, m.n_params());
    let grad = vec![0.0; m.n_params()];
    let err = m.params_mut().map(|p| opt.step(p, &grad)).unwrap_err();
    assert_eq!(err, ModelError::Frozen);
}

#[test]
fn linear_restriction_applies_to_the_target_only() {
    let ds = moons(100, 5);
    let mut cfg = quick(Family::Cnf, LossKind::Gdr);
    cfg.target_restriction = Restriction::Linear;
    let t = train_two_stage(&ds, &cfg).unwrap();
    assert!(t.target.conditioner_layer_counts().iter().all(|&l| l == 1));
    let nuis = t.nuisance.as_ref().unwrap().outcome().unwrap();
    assert!(nuis.conditioner_layer_counts().iter().all(|&l| l > 1));
    let lin: usize = t.target.conditioner_param_counts().iter().sum();
    let full: usize = nuis.conditioner_param_counts().iter().sum();
    assert!(lin < full);
}

#[test]
fn plugin_held_out_log_density_improves() {
    let cfg = MoonsConfig {
        n_train: 500,
        n_test: 300,
        seed: 6,
        ..Default::default()
    };
    let data = generate_moons_dataset(&cfg).unwrap();
    let mut tc = TrainConfig::for_family(Family::Cnf, LossKind::PlugIn).with_epochs(8);
    tc.seed = 6;
    let mut curve = Vec::new();
    train_two_stage_with(&data.train, &tc, |_, m, _| {
        let lp: f64 = (0..2)
            .map(|a| avg_log_prob(m, &data.test, a, Conditioning::FullX).unwrap().aggregate.center)
            .sum();
        curve.push(lp / 2.0);
    })
    .unwrap();
    let best = curve.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!(best > curve[0], "{curve:?}");
}

#[test]
fn single_arm_data_is_rejected() {
    let samples = (0..10)
        .map(|i| ObservationalSample {
            x: vec![i as f64, 0.0],
            a: 1,
            y: vec![0.0, 1.0],
        })
        .collect();
    let ds = PODataset::new(samples, None).unwrap();
    assert!(train_two_stage(&ds, &quick(Family::Cnf, LossKind::PlugIn)).is_err());
}

#[test]
fn divergence_reports_the_epoch() {
    let ds = moons(100, 7);
    let mut cfg = quick(Family::Cvae, LossKind::PlugIn);
    cfg.nuisance.optimizer.lr = 1e200;
    match train_two_stage(&ds, &cfg) {
        Err(TrainError::Diverged { epoch, .. }) => assert_eq!(epoch, 1),
        other => panic!("expected divergence, got {other:?}"),
    }
}
