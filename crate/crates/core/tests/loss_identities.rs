use cdpo_core::data::{ObservationalSample, PODataset};
use cdpo_core::genmodels::{Family, GenerativeModel, ModelConfig};
use cdpo_core::losses::{evaluate_loss, gdr_loss, iptw_loss, plugin_loss, ra_loss, LossContext, LossKind};
use cdpo_core::nn::Standardizer;
use cdpo_core::nuisance::{NuisanceEstimates, Propensity};
use cdpo_core::rng;

fn dataset(arms: &[u8]) -> PODataset {
    let mut r = rng::stream(11, 0);
    let samples = arms
        .iter()
        .map(|&a| ObservationalSample {
            x: vec![rng::normal(&mut r), rng::normal(&mut r)],
            a,
            y: vec![rng::normal(&mut r)],
        })
        .collect();
    PODataset::new(samples, None).unwrap()
}

fn cnf(seed: u64) -> GenerativeModel {
    GenerativeModel::new(ModelConfig::new(Family::Cnf, 2, 1), Standardizer::identity(1), seed).unwrap()
}

fn nuisance(pi1: f64) -> NuisanceEstimates {
    NuisanceEstimates::new(Some(cnf(99)), Propensity::Constant(pi1), 0.1)
}

fn log_term(m: &GenerativeModel, ds: &PODataset, row: usize) -> f64 {
    let s = &ds.samples[row];
    m.log_density(&s.y, &s.x, s.a).unwrap()
}

#[test]
fn plugin_is_zero_without_matching_rows() {
    let ds = dataset(&[0, 0, 0]);
    assert_eq!(plugin_loss(&cnf(1), &ds, &[0, 1, 2], 1, 0).unwrap().value, 0.0);
}

#[test]
fn plugin_single_row_equals_its_log_term() {
    let ds = dataset(&[1]);
    let m = cnf(2);
    assert_eq!(plugin_loss(&m, &ds, &[0], 1, 0).unwrap().value, log_term(&m, &ds, 0));
}

#[test]
fn unit_propensity_reduces_iptw_and_gdr_to_plugin() {
    let ds = dataset(&[1, 1, 1, 1]);
    let rows = [0, 1, 2, 3];
    let m = cnf(3);
    let nuis = nuisance(1.0);
    let plug = plugin_loss(&m, &ds, &rows, 1, 5).unwrap().value;
    assert_eq!(iptw_loss(&m, &nuis, &ds, &rows, 1, 5).unwrap().value, plug);
    let gdr = gdr_loss(&m, &nuis, &ds, &rows, 1, 5, 1).unwrap();
    assert_eq!(gdr.value, plug);
    assert!(gdr.complements.iter().all(|c| *c == 0.0));
}

#[test]
fn half_propensity_doubles_the_log_term() {
    let ds = dataset(&[1]);
    let m = cnf(4);
    let v = iptw_loss(&m, &nuisance(0.5), &ds, &[0], 1, 0).unwrap().value;
    assert_eq!(v, 2.0 * log_term(&m, &ds, 0));
}

#[test]
fn ra_with_all_rows_treated_is_factual_only() {
    let ds = dataset(&[0, 0, 0]);
    let rows = [0, 1, 2];
    let m = cnf(5);
    let ra = ra_loss(&m, &nuisance(0.3), &ds, &rows, 0, 7, 1).unwrap();
    assert_eq!(ra.value, plugin_loss(&m, &ds, &rows, 0, 7).unwrap().value);
    assert!(ra.pseudo_outcomes.iter().all(|p| p.is_empty()));
}

#[test]
fn ra_untreated_row_scores_its_pseudo_outcome() {
    let ds = dataset(&[1]);
    let m = cnf(6);
    let ra = ra_loss(&m, &nuisance(0.3), &ds, &[0], 0, 1, 3).unwrap();
    let y0 = &ra.pseudo_outcomes[0][0];
    let expected = m.log_density(y0, &ds.samples[0].x, 0).unwrap();
    assert_eq!(ra.value, expected);
}

#[test]
fn gdr_without_matching_rows_equals_ra() {
    let ds = dataset(&[1, 1, 1]);
    let rows = [0, 1, 2];
    let m = cnf(7);
    let nuis = nuisance(0.4);
    let g = gdr_loss(&m, &nuis, &ds, &rows, 0, 9, 1).unwrap();
    let r = ra_loss(&m, &nuis, &ds, &rows, 0, 9, 1).unwrap();
    assert_eq!(g.value, r.value);
    assert!(g.weights.iter().all(|w| *w == 0.0));
}

#[test]
fn weights_follow_the_indicator_algebra() {
    let ds = dataset(&[0, 1]);
    let nuis = nuisance(0.25);
    for kind in LossKind::ALL {
        let ctx = LossContext::new(kind, &ds, Some(&nuis));
        for a in 0..2u8 {
            for row in 0..2 {
                let (w, comp) = ctx.weights(row, a);
                let ind = f64::from(ds.samples[row].a == a);
                let pi = if a == 1 { 0.25 } else { 0.75 };
                let (ew, ec) = match kind {
                    LossKind::PlugIn => (ind, 0.0),
                    LossKind::Ra => (ind, 1.0 - ind),
                    LossKind::Iptw => (ind / pi, 0.0),
                    LossKind::Gdr => (ind / pi, 1.0 - ind / pi),
                };
                assert_eq!((w, comp), (ew, ec), "{kind} a={a} row={row}");
            }
        }
    }
}

#[test]
fn missing_nuisance_is_an_error() {
    let ds = dataset(&[0, 1]);
    let ctx = LossContext::new(LossKind::Gdr, &ds, None);
    assert!(evaluate_loss(&cnf(1), &ctx, &[0, 1], 0, 0).is_err());
}
