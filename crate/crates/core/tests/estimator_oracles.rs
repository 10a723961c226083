use approx::assert_abs_diff_eq;
use exposure_core::estimators::{
    bias_closed_form, check_bias_conditions, check_variance_ordering, empirical_rademacher, pair_bias_term,
    pair_variance_term, propensity_lower_bound, psi, risk, risk_ap, risk_naive, risk_pu, risk_w, tau, true_risk,
    variance_closed_form, Comparison,
};
use exposure_core::synthesis::{exact_pair_moments, monte_carlo_risk_distribution, sample_outcomes};
use exposure_core::{rng_from_seed, Estimator, GroundTruth, LossSpec, PairEstimates};
use proptest::prelude::*;
use rand::Rng;

const OBSERVED: [Estimator; 4] = [Estimator::Naive, Estimator::W, Estimator::Pu, Estimator::Ap];

fn zo() -> LossSpec {
    LossSpec::zero_one(1.0)
}

// Reference terms written directly from the estimator definitions with the
// zero-one loss, independent of the library's per-pair code.
fn reference_term(which: Estimator, o: bool, y_hat: f64, pi_hat: f64) -> f64 {
    let o_hat = y_hat >= 0.5;
    let d = |u: bool| if u != o_hat { 1.0 } else { 0.0 };
    let (o, den) = (if o { 1.0 } else { 0.0 }, 1.0 - pi_hat * y_hat);
    let (psi, tau) = ((1.0 - y_hat) / den, y_hat * (1.0 - pi_hat) / den);
    let d_o = if o == 1.0 { d(true) } else { d(false) };
    match which {
        Estimator::Naive => d_o,
        Estimator::W => (o / pi_hat + (1.0 - o) * psi) * d_o,
        Estimator::Pu => (o / pi_hat + (1.0 - o)) * d_o + o * (1.0 - 1.0 / pi_hat) * d(false),
        Estimator::Ap => (o + (1.0 - o) * psi) * d_o + (1.0 - o) * tau * d(true),
        Estimator::True => unreachable!(),
    }
}

// Mean and variance over the four (o', a) outcomes, plus the true per-pair risk.
fn enumerate(which: Estimator, y: f64, pi: f64, y_hat: f64, pi_hat: f64) -> (f64, f64, f64) {
    let mut mean = 0.0;
    let mut second = 0.0;
    for (o_prime, a) in [(true, true), (true, false), (false, true), (false, false)] {
        let p = (if o_prime { y } else { 1.0 - y }) * (if a { pi } else { 1.0 - pi });
        let t = reference_term(which, o_prime && a, y_hat, pi_hat);
        mean += p * t;
        second += p * t * t;
    }
    let o_hat = y_hat >= 0.5;
    let truth = if o_hat { 1.0 - y } else { y };
    (truth, mean, second - mean * mean)
}

fn random_config(rng: &mut exposure_core::Rng, n: usize) -> (GroundTruth, PairEstimates) {
    let mut draw = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    let (mut y, mut pi, mut yh, mut ph) = (vec![], vec![], vec![], vec![]);
    for _ in 0..n {
        y.push(draw(0.0, 1.0));
        pi.push(draw(0.01, 1.0));
        yh.push(draw(0.001, 0.999));
        ph.push(draw(0.01, 1.0));
    }
    (GroundTruth::new(y, pi).unwrap(), PairEstimates::new(yh, ph).unwrap())
}

#[test]
fn pair_terms_match_enumeration_oracle() {
    let mut rng = rng_from_seed(11);
    for _ in 0..2000 {
        let y = rng.random::<f64>();
        let pi = 0.01 + 0.99 * rng.random::<f64>();
        let y_hat = 0.001 + 0.998 * rng.random::<f64>();
        let pi_hat = 0.01 + 0.99 * rng.random::<f64>();
        for which in OBSERVED {
            let (truth, mean, var) = enumerate(which, y, pi, y_hat, pi_hat);
            assert_abs_diff_eq!(pair_bias_term(which, y, pi, y_hat, pi_hat), truth - mean, epsilon = 1e-12);
            assert_abs_diff_eq!(pair_variance_term(which, y, pi, y_hat, pi_hat), var, epsilon = 1e-12);
        }
    }
}

#[test]
fn closed_forms_match_enumeration_over_a_universe() {
    let mut rng = rng_from_seed(5);
    for _ in 0..50 {
        let (truth, est) = random_config(&mut rng, 30);
        let delta = 2.5;
        let loss = LossSpec::zero_one(delta);
        for which in OBSERVED {
            let (mut gap, mut var) = (0.0, 0.0);
            for k in 0..truth.len() {
                let (t, m, v) = enumerate(which, truth.y[k], truth.pi[k], est.y_hat[k], est.pi_hat[k]);
                gap += t - m;
                var += v;
            }
            let u = truth.len() as f64;
            let bias = bias_closed_form(which, &truth, &est, &loss).unwrap();
            let variance = variance_closed_form(which, &truth, &est, &loss).unwrap();
            assert_abs_diff_eq!(bias, delta * gap.abs() / u, epsilon = 1e-12);
            assert_abs_diff_eq!(variance, delta * delta * var / (u * u), epsilon = 1e-12);
        }
    }
}

#[test]
fn library_terms_match_reference_terms() {
    let mut rng = rng_from_seed(8);
    let (_, est) = random_config(&mut rng, 200);
    let o: Vec<bool> = (0..200).map(|_| rng.random::<bool>()).collect();
    for which in OBSERVED {
        let report = risk(which, &o, &est, &zo(), true).unwrap();
        let terms = report.per_pair_terms.unwrap();
        for k in 0..o.len() {
            assert_abs_diff_eq!(terms[k], reference_term(which, o[k], est.y_hat[k], est.pi_hat[k]), epsilon = 1e-12);
        }
    }
}

#[test]
fn single_pair_examples() {
    let one = |yh: f64, ph: f64| PairEstimates::new(vec![yh], vec![ph]).unwrap();
    let t = |y: f64| GroundTruth::new(vec![y], vec![1.0]).unwrap();
    assert_abs_diff_eq!(true_risk(&t(0.8), &one(0.2, 1.0), &zo()).unwrap().value, 0.8, epsilon = 1e-15);
    assert_abs_diff_eq!(true_risk(&t(0.8), &one(0.7, 1.0), &zo()).unwrap().value, 0.2, epsilon = 1e-15);

    let two = PairEstimates::new(vec![0.1, 0.1], vec![1.0, 1.0]).unwrap();
    assert_abs_diff_eq!(risk_naive(&[true, false], &two, &zo()).unwrap().value, 0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(risk_w(&[true], &one(0.1, 0.8), &zo()).unwrap().value, 1.25, epsilon = 1e-12);
    assert_eq!(risk_w(&[false], &one(0.1, 0.8), &zo()).unwrap().value, 0.0);
    assert_abs_diff_eq!(risk_pu(&[true], &one(0.9, 0.5), &zo()).unwrap().value, -1.0, epsilon = 1e-12);
    assert_eq!(risk_pu(&[false], &one(0.1, 0.5), &zo()).unwrap().value, 0.0);
    assert_abs_diff_eq!(psi(0.5, 0.5), 2.0 / 3.0, epsilon = 1e-15);
    assert_abs_diff_eq!(tau(0.5, 0.5), 1.0 / 3.0, epsilon = 1e-15);
    // ŷ = 0.49 keeps ô = 0 with ψ, τ close to the ŷ = 0.5 values.
    let ap = risk_ap(&[false], &one(0.49, 0.5), &zo()).unwrap().value;
    assert_abs_diff_eq!(ap, tau(0.49, 0.5), epsilon = 1e-15);
    assert_eq!(risk_ap(&[true], &one(0.9, 0.5), &zo()).unwrap().value, 0.0);
}

#[test]
fn ap_reduces_to_naive_at_full_propensity() {
    let mut rng = rng_from_seed(3);
    let (_, est) = random_config(&mut rng, 100);
    let est = PairEstimates::new(est.y_hat, vec![1.0; 100]).unwrap();
    let o: Vec<bool> = (0..100).map(|_| rng.random::<bool>()).collect();
    let naive = risk_naive(&o, &est, &zo()).unwrap().value;
    assert_abs_diff_eq!(risk_ap(&o, &est, &zo()).unwrap().value, naive, epsilon = 1e-12);
    assert_abs_diff_eq!(risk_w(&o, &est, &zo()).unwrap().value, naive, epsilon = 1e-12);
}

#[test]
fn all_positive_predictions_are_a_trivial_solution() {
    let o = vec![true, false, false, true, false];
    let ones = PairEstimates::new(vec![1.0; 5], vec![0.3; 5]).unwrap();
    assert_eq!(risk_w(&o, &ones, &zo()).unwrap().value, 0.0);
    // The log loss clamps ŷ away from 1, leaving only a rounding-sized residue.
    assert!(risk_w(&o, &ones, &LossSpec::log()).unwrap().value < 1e-6);
    let full = PairEstimates::new(vec![0.9; 5], vec![1.0; 5]).unwrap();
    assert_eq!(risk_pu(&[true; 5], &full, &zo()).unwrap().value, 0.0);
    assert_abs_diff_eq!(
        risk_pu(&o, &full, &zo()).unwrap().value,
        risk_naive(&o, &full, &zo()).unwrap().value,
        epsilon = 1e-15
    );
}

#[test]
fn bias_and_variance_examples() {
    let loss = zo();
    let est = PairEstimates::new(vec![0.2], vec![0.6]).unwrap();
    let truth = GroundTruth::new(vec![0.8], vec![0.6]).unwrap();
    assert_abs_diff_eq!(bias_closed_form(Estimator::Naive, &truth, &est, &loss).unwrap(), 0.32, epsilon = 1e-12);

    let full = GroundTruth::new(vec![0.8, 0.1], vec![1.0, 1.0]).unwrap();
    let any = PairEstimates::new(vec![0.3, 0.9], vec![0.5, 0.5]).unwrap();
    assert_eq!(bias_closed_form(Estimator::Naive, &full, &any, &loss).unwrap(), 0.0);

    let mut rng = rng_from_seed(21);
    let (truth, _) = random_config(&mut rng, 40);
    let exact = PairEstimates::new(truth.y.clone(), truth.pi.clone()).unwrap();
    assert!(bias_closed_form(Estimator::W, &truth, &exact, &loss).unwrap() < 1e-12);

    let t = GroundTruth::new(vec![0.8], vec![0.5]).unwrap();
    let naive_var = variance_closed_form(Estimator::Naive, &t, &PairEstimates::new(vec![0.9], vec![0.5]).unwrap(), &loss).unwrap();
    assert_abs_diff_eq!(naive_var, 0.24, epsilon = 1e-12);
    let pu_var = variance_closed_form(Estimator::Pu, &t, &PairEstimates::new(vec![0.9], vec![0.5]).unwrap(), &loss).unwrap();
    assert_abs_diff_eq!(pu_var, naive_var / 0.25, epsilon = 1e-12);

    let zero = GroundTruth::new(vec![0.0], vec![0.4]).unwrap();
    for which in OBSERVED {
        assert_eq!(variance_closed_form(which, &zero, &est, &loss).unwrap(), 0.0);
    }
    let ordering = check_variance_ordering(&zero, &est, 1.0).unwrap();
    assert!(ordering.degenerate && !ordering.violated());

    let (m, v) = exact_pair_moments(0.8, 0.6, |o| if o { 1.0 } else { 0.0 });
    assert_abs_diff_eq!(m, 0.48, epsilon = 1e-15);
    assert_abs_diff_eq!(v, 0.2496, epsilon = 1e-15);
}

#[test]
fn variance_ordering_on_random_configurations() {
    let mut rng = rng_from_seed(1000);
    for _ in 0..1000 {
        let (truth, est) = random_config(&mut rng, 20);
        let r = check_variance_ordering(&truth, &est, 1.0).unwrap();
        assert!(!r.violated(), "{r:?}");
    }
}

#[test]
fn variance_ordering_ties_as_propensities_reach_one() {
    let truth = GroundTruth::new(vec![0.4, 0.7], vec![0.5, 0.9]).unwrap();
    let est = PairEstimates::new(vec![0.2, 0.3], vec![1.0, 1.0]).unwrap();
    let r = check_variance_ordering(&truth, &est, 1.0).unwrap();
    assert!(!r.violated());
    assert_eq!(r.ap_lt_naive, Comparison::Tied);
    assert_eq!(r.w_lt_pu, Comparison::Tied);
}

#[test]
fn bias_condition_examples() {
    assert_abs_diff_eq!(propensity_lower_bound(0.6), 0.6 / 1.4, epsilon = 1e-15);
    assert!((propensity_lower_bound(0.6) - 0.4286).abs() < 1e-4);
    let truth = GroundTruth::new(vec![0.5], vec![0.6]).unwrap();
    for (pi_hat, ok) in [(0.5, true), (0.6, true), (0.3, false)] {
        let est = PairEstimates::new(vec![0.2], vec![pi_hat]).unwrap();
        let r = check_bias_conditions(&truth, &est, &[false], 1.0).unwrap();
        assert_eq!(r.propensity_condition, ok, "π̂ = {pi_hat}");
        assert_eq!(r.flagged_propensity.is_empty(), ok);
        if ok {
            assert_eq!(r.w_pu_below_naive, Some(true));
        }
    }
}

#[test]
fn monte_carlo_agrees_with_true_risk() {
    // n = 10 nodes: 90 ordered pairs.
    let mut rng = rng_from_seed(77);
    let (truth, _) = random_config(&mut rng, 90);
    let loss = zo();

    let unexposed = GroundTruth::new(truth.y.clone(), vec![1.0; 90]).unwrap();
    let est = PairEstimates::new(truth.y.clone(), vec![1.0; 90]).unwrap();
    let mc = monte_carlo_risk_distribution(&unexposed, &est, Estimator::Naive, &loss, 20_000, 1).unwrap();
    let r = true_risk(&unexposed, &est, &loss).unwrap().value;
    assert!((mc.mean - r).abs() < 4.0 * mc.std_error(), "{} vs {r}", mc.mean);

    let exact = PairEstimates::new(truth.y.clone(), truth.pi.clone()).unwrap();
    let r = true_risk(&truth, &exact, &loss).unwrap().value;
    for which in [Estimator::W, Estimator::Ap] {
        let mc = monte_carlo_risk_distribution(&truth, &exact, which, &loss, 20_000, 2).unwrap();
        assert!((mc.mean - r).abs() < 4.0 * mc.std_error(), "{which:?}: {} vs {r}", mc.mean);
        let var = variance_closed_form(which, &truth, &exact, &loss).unwrap();
        assert!((mc.std * mc.std / var - 1.0).abs() < 0.05);
    }
}

#[test]
fn independent_sampler_agrees_with_closed_form_bias() {
    let mut rng = rng_from_seed(4);
    let (truth, est) = random_config(&mut rng, 90);
    let loss = zo();
    let r = true_risk(&truth, &est, &loss).unwrap().value;
    let trials = 20_000;
    for which in OBSERVED {
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..trials {
            let o: Vec<bool> = truth
                .y
                .iter()
                .zip(&truth.pi)
                .map(|(&y, &pi)| (rng.random::<f64>() < y) & (rng.random::<f64>() < pi))
                .collect();
            let v = risk(which, &o, &est, &loss, false).unwrap().value;
            sum += v;
            sq += v * v;
        }
        let mean = sum / trials as f64;
        let se = ((sq / trials as f64 - mean * mean) / trials as f64).sqrt();
        let gap: f64 = (0..90)
            .map(|k| pair_bias_term(which, truth.y[k], truth.pi[k], est.y_hat[k], est.pi_hat[k]))
            .sum::<f64>()
            / 90.0;
        assert!(((r - mean) - gap).abs() < 4.0 * se, "{which:?}");
    }
}

#[test]
fn rademacher_examples() {
    let o = vec![false; 12];
    let loss = zo();
    let quiet = PairEstimates::new(vec![0.1; 12], vec![1.0; 12]).unwrap();
    for which in OBSERVED {
        assert_eq!(empirical_rademacher(&o, std::slice::from_ref(&quiet), which, &loss, 50, 1).unwrap(), 0.0);
    }

    let mut rng = rng_from_seed(9);
    let o: Vec<bool> = (0..30).map(|_| rng.random::<bool>()).collect();
    let family: Vec<PairEstimates> = (0..4).map(|_| random_config(&mut rng, 30).1).collect();
    let base = empirical_rademacher(&o, &family, Estimator::W, &loss, 500, 3).unwrap();
    let mut doubled = family.clone();
    doubled.extend(family.iter().cloned());
    doubled.push(family[0].clone());
    assert_eq!(empirical_rademacher(&o, &doubled, Estimator::W, &loss, 500, 3).unwrap(), base);

    // Independent Monte Carlo estimate of E_σ[sup_f (1/|U|) Σ σ r_f].
    let terms: Vec<Vec<f64>> = family
        .iter()
        .map(|f| risk(Estimator::W, &o, f, &loss, true).unwrap().per_pair_terms.unwrap())
        .collect();
    let draws = 40_000;
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..draws {
        let sigma: Vec<f64> = (0..30).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let best = terms
            .iter()
            .map(|t| t.iter().zip(&sigma).map(|(r, s)| r * s).sum::<f64>() / 30.0)
            .fold(f64::NEG_INFINITY, f64::max);
        sum += best;
        sq += best * best;
    }
    let mean = sum / draws as f64;
    let se = ((sq / draws as f64 - mean * mean) / draws as f64).sqrt();
    let lib = empirical_rademacher(&o, &family, Estimator::W, &loss, draws, 17).unwrap();
    // Both estimates carry Monte Carlo error of the same size.
    assert!((lib - mean).abs() < 3.0 * std::f64::consts::SQRT_2 * se, "{lib} vs {mean} ± {se}");
}

#[test]
fn sampled_outcomes_have_the_observation_marginal() {
    let truth = GroundTruth::new(vec![0.8; 20_000], vec![0.6; 20_000]).unwrap();
    let o = sample_outcomes(&truth, &mut rng_from_seed(2));
    let rate = o.iter().filter(|&&x| x).count() as f64 / o.len() as f64;
    let se = (0.48f64 * 0.52 / 20_000.0).sqrt();
    assert!((rate - 0.48).abs() < 4.0 * se);
}

proptest! {
    #[test]
    fn weights_stay_in_range(y_hat in 0.0f64..1.0, pi_hat in 1e-3f64..=1.0) {
        let (p, t) = (psi(y_hat, pi_hat), tau(y_hat, pi_hat));
        prop_assert!(p > 0.0 && p <= 1.0 + 1e-15);
        prop_assert!((0.0..1.0).contains(&t));
    }

    #[test]
    fn estimators_ignore_pair_order(
        pairs in prop::collection::vec((any::<bool>(), 0.001f64..0.999, 0.01f64..=1.0), 1..60),
        rot in 0usize..60,
    ) {
        let build = |ps: &[(bool, f64, f64)]| {
            let o: Vec<bool> = ps.iter().map(|p| p.0).collect();
            let est = PairEstimates::new(ps.iter().map(|p| p.1).collect(), ps.iter().map(|p| p.2).collect()).unwrap();
            (o, est)
        };
        let mut shuffled = pairs.clone();
        shuffled.rotate_left(rot % pairs.len());
        shuffled.reverse();
        let (o1, e1) = build(&pairs);
        let (o2, e2) = build(&shuffled);
        for which in OBSERVED {
            for loss in [zo(), LossSpec::log()] {
                let a = risk(which, &o1, &e1, &loss, false).unwrap().value;
                let b = risk(which, &o2, &e2, &loss, false).unwrap().value;
                prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn variance_ordering_never_violated(
        pairs in prop::collection::vec((0.0f64..=1.0, 0.01f64..=1.0, 0.001f64..0.999, 0.01f64..=1.0), 1..40),
    ) {
        let truth = GroundTruth::new(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect()).unwrap();
        let est = PairEstimates::new(pairs.iter().map(|p| p.2).collect(), pairs.iter().map(|p| p.3).collect()).unwrap();
        let r = check_variance_ordering(&truth, &est, 1.0).unwrap();
        prop_assert!(!r.violated(), "{:?}", r);
    }

    #[test]
    fn naive_risk_is_a_mean_of_zero_one_errors(
        pairs in prop::collection::vec((any::<bool>(), 0.0f64..=1.0), 1..80),
    ) {
        let o: Vec<bool> = pairs.iter().map(|p| p.0).collect();
        let est = PairEstimates::new(pairs.iter().map(|p| p.1).collect(), vec![1.0; pairs.len()]).unwrap();
        let r = risk_naive(&o, &est, &zo()).unwrap().value;
        let wrong = pairs.iter().filter(|(o, y)| *o != (*y >= 0.5)).count();
        prop_assert!((r - wrong as f64 / pairs.len() as f64).abs() < 1e-12);
    }
}
