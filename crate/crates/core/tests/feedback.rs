//! Properties of empirical scores, preference models and the hyper collapse.

use std::sync::Arc;

use proptest::prelude::*;
use prolab_core::feedback::*;
use prolab_core::hyper::*;
use prolab_core::space::{Distribution, ResponseSpace, Support};

fn space(n: usize) -> Arc<ResponseSpace> {
    Arc::new(ResponseSpace::indexed(n).unwrap())
}

fn pair_records(n: usize) -> impl Strategy<Value = Vec<PairRecord>> {
    prop::collection::vec((0..n, 1..n, 1u64..5), 1..12).prop_map(move |v| {
        v.into_iter()
            .map(|(w, off, count)| PairRecord { winner: w, loser: (w + off) % n, count })
            .collect()
    })
}

/// Every labeled pair compared `m` times with arbitrary outcomes.
fn round_robin(k: usize) -> impl Strategy<Value = (u64, Vec<u64>)> {
    (1u64..4).prop_flat_map(move |m| (Just(m), prop::collection::vec(0..=m, k * (k - 1) / 2)))
}

proptest! {
    #[test]
    fn pairwise_score_has_zero_mean(recs in pair_records(5)) {
        let fb = FeedbackDataset::Pairwise(PairwiseDataset::new(space(5), recs).unwrap());
        let s = fb.empirical_score().unwrap();
        prop_assert!(s.weighted_mean(&fb.empirical_response_dist().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn scalar_and_binary_scores_have_zero_mean(
        scores in prop::collection::vec((0..6usize, -3.0f64..3.0, 1u64..4), 4..=4),
        flags in prop::collection::vec((0..6usize, any::<bool>(), 1u64..4), 1..10),
    ) {
        let sp = space(6);
        let recs = scores.into_iter().map(|(response, score, count)| ScalarRecord { response, score, count }).collect();
        let fb = FeedbackDataset::Scalar(ScalarDataset::new(sp.clone(), recs, 4).unwrap());
        prop_assert!(fb.empirical_score().unwrap().weighted_mean(&fb.empirical_response_dist().unwrap()).abs() < 1e-12);
        let recs = flags.into_iter().map(|(response, desired, count)| BinaryRecord { response, desired, count }).collect();
        let fb = FeedbackDataset::Binary(BinaryDataset::new(sp, recs).unwrap());
        prop_assert!(fb.empirical_score().unwrap().weighted_mean(&fb.empirical_response_dist().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn true_score_is_monotone_in_latent_reward(rewards in prop::collection::vec(-4.0f64..4.0, 2..8)) {
        let sp = space(rewards.len());
        let pref = PreferenceMatrix::bradley_terry(sp.clone(), &rewards).unwrap();
        let s = true_score(&pref, &Distribution::uniform(sp)).unwrap();
        for i in 0..rewards.len() {
            for j in 0..rewards.len() {
                if rewards[i] > rewards[j] {
                    prop_assert!(s.value(i) >= s.value(j));
                }
            }
        }
        prop_assert!(s.values().iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn binarized_scores_agree_in_sign_on_balanced_designs((m, wins) in round_robin(4)) {
        let mut recs = Vec::new();
        let mut idx = 0;
        for a in 0..4 {
            for b in a + 1..4 {
                let w = wins[idx];
                idx += 1;
                if w > 0 { recs.push(PairRecord { winner: a, loser: b, count: w }); }
                if m - w > 0 { recs.push(PairRecord { winner: b, loser: a, count: m - w }); }
            }
        }
        let pw = PairwiseDataset::new(space(5), recs).unwrap();
        let a = FeedbackDataset::Pairwise(pw.clone()).empirical_score().unwrap();
        let b = FeedbackDataset::Binary(pw.binarize()).empirical_score().unwrap();
        for y in 0..4 {
            prop_assert!(a.value(y).signum() == b.value(y).signum() || (a.value(y).abs() < 1e-15 && b.value(y).abs() < 1e-15));
        }
    }

    #[test]
    fn dataset_text_round_trips(recs in pair_records(4)) {
        let sp = space(4);
        let fb = FeedbackDataset::Pairwise(PairwiseDataset::new(sp.clone(), recs).unwrap());
        let text = fb.to_text("space.txt");
        prop_assert_eq!(FeedbackDataset::space_path(&text).unwrap(), "space.txt");
        prop_assert_eq!(FeedbackDataset::parse(&text, sp).unwrap(), fb);
    }

    #[test]
    fn hyper_mass_is_conserved_and_modes_agree(
        logw in prop::collection::vec(-5.0f64..5.0, 6),
        k in 1usize..5,
    ) {
        let sp = space(6);
        let d = Distribution::from_log_weights(sp.clone(), &logw).unwrap();
        let members: Vec<usize> = (6 - k..6).collect();
        let hs = HyperSpace::new_unchecked_labels(sp, &members).unwrap();
        let m = hyper_mass(&d, &hs).unwrap();
        prop_assert!((m.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let lp = d.log_probs();
        let a = hs.collapse_log_probs_with(&lp, MassMode::Members).unwrap();
        let b = hs.collapse_log_probs_with(&lp, MassMode::Complement).unwrap();
        let h = hs.h_index();
        prop_assert!((a[h].exp() - b[h].exp()).abs() < 1e-10);
    }

    #[test]
    fn mu_bar_scales_the_empirical_support(
        counts in prop::collection::vec(0.0f64..5.0, 4),
        eta in 0.05f64..1.0,
    ) {
        prop_assume!(counts.iter().sum::<f64>() > 0.0);
        let mut counts = counts;
        counts.push(0.0);
        let sp = space(5);
        let mu_hat = Distribution::from_weights(sp.clone(), &counts, Support::Empirical).unwrap();
        let outside: Vec<f64> = counts.iter().map(|&c| if c == 0.0 { 1.0 } else { 0.0 }).collect();
        let rho = Distribution::from_weights(sp, &outside, Support::Empirical).unwrap();
        let bar = mu_bar(&mu_hat, &HyperConfig::new(eta, rho).unwrap()).unwrap();
        for y in 0..5 {
            if mu_hat.prob(y) > 0.0 {
                prop_assert_eq!(bar.prob(y), eta * mu_hat.prob(y));
            }
        }
    }

    #[test]
    fn alpha_threshold_monotonicity(neg in 0.01f64..0.5, bump in 0.0f64..0.3, floor in 0.05f64..0.3) {
        let sp = space(3);
        let mu_hat = Distribution::from_weights(sp.clone(), &[1.0, 1.0, 0.0], Support::Empirical).unwrap();
        let score = |x: f64| ScoreMap::new(sp.clone(), vec![x, -x, 0.0], vec![true, true, false]).unwrap();
        let mu = Distribution::uniform(sp.clone());
        let a = alpha_threshold(&mu_hat, &score(neg), &mu).unwrap();
        let b = alpha_threshold(&mu_hat, &score(neg + bump), &mu).unwrap();
        prop_assert!(b >= a);
        // Raising the smallest μ entry lowers the threshold.
        let skew = |m: f64| Distribution::new(sp.clone(), vec![m, (1.0 - m) / 2.0, (1.0 - m) / 2.0]).unwrap();
        let lo = alpha_threshold(&mu_hat, &score(neg), &skew(floor)).unwrap();
        let hi = alpha_threshold(&mu_hat, &score(neg), &skew(floor + 0.01)).unwrap();
        prop_assert!(hi <= lo);
    }
}

#[test]
fn binarized_signs_can_disagree_on_unbalanced_data() {
    // y0 beats the frequent y1 once and loses to the rare y2 twice.
    let pw = PairwiseDataset::new(
        space(4),
        vec![
            PairRecord { winner: 0, loser: 1, count: 1 },
            PairRecord { winner: 2, loser: 0, count: 2 },
            PairRecord { winner: 3, loser: 1, count: 10 },
        ],
    )
    .unwrap();
    let a = FeedbackDataset::Pairwise(pw.clone()).empirical_score().unwrap();
    let b = FeedbackDataset::Binary(pw.binarize()).empirical_score().unwrap();
    assert!(a.value(0) > 0.0 && b.value(0) < 0.0);
}

#[test]
fn bradley_terry_gap_of_log_four() {
    let p = PreferenceMatrix::bradley_terry(space(2), &[4f64.ln(), 0.0]).unwrap();
    assert!((p.get(0, 1) - 0.8).abs() < 1e-15);
    assert_eq!(p.get(0, 1) + p.get(1, 0), 1.0);
}
