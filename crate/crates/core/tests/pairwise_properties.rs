use nalgebra::{DMatrix, DVector};
use pairlme_core::design::pair_index;
use pairlme_core::fit::{one_sided_differences, FitOptions};
use pairlme_core::inference::score_total;
use pairlme_core::lmm::ThetaParam;
use pairlme_core::pairs::PairSet;
use pairlme_core::pairwise::{fit_pairs, pairwise_start, profile_eval};
use pairlme_core::sample::{GroupData, SurveySample};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random intercept-and-slope data with unequal stage-1 and stage-2 probabilities.
fn sample(seed: u64, groups: usize) -> SurveySample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gs = Vec::new();
    for g in 0..groups {
        let m = rng.random_range(2..6);
        let (b0, b1) = (rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5));
        let x = DMatrix::from_fn(m, 3, |_, c| if c == 0 { 1.0 } else { rng.random_range(-2.0..2.0) });
        let z = DMatrix::from_fn(m, 2, |r, c| x[(r, c)]);
        let y =
            DVector::from_fn(m, |r, _| 0.5 + x[(r, 1)] - x[(r, 2)] + b0 + b1 * x[(r, 1)] + rng.random_range(-1.0..1.0));
        let pi_cond: Vec<f64> = (0..m).map(|_| rng.random_range(0.3..1.0)).collect();
        let mut pair_cond = vec![0.0; m * (m - 1) / 2];
        for j in 0..m {
            for k in j + 1..m {
                pair_cond[pair_index(m, j, k)] = pi_cond[j] * pi_cond[k];
            }
        }
        gs.push(GroupData {
            key: g as u32,
            psu: g as u32,
            stratum: (g % 3) as u32,
            y,
            x,
            z,
            pi: rng.random_range(0.2..1.0),
            pi_cond,
            pair_cond,
            pop_size: None,
        });
    }
    let fixed = vec!["(Intercept)".into(), "x1".into(), "x2".into()];
    let random = vec!["(Intercept)".into(), "x1".into()];
    SurveySample::from_groups(gs, fixed, random, vec![2]).unwrap()
}

fn map_y(s: &SurveySample, f: impl Fn(&GroupData, usize) -> f64) -> SurveySample {
    let mut out = s.clone();
    for g in &mut out.groups {
        let y = DVector::from_fn(g.m(), |r, _| f(g, r));
        g.y = y;
    }
    out
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn theta_close(a: &ThetaParam, b: &ThetaParam) -> bool {
    // θ̂ is only located to the optimizer's final radius.
    a.values().iter().zip(b.values()).all(|(u, v)| (u - v).abs() < 1e-4 * u.abs().max(1.0))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn location_equivariance(seed in 0u64..1000, g0 in -3.0f64..3.0, g1 in -3.0f64..3.0, g2 in -3.0f64..3.0) {
        let s = sample(seed, 25);
        let shifted = map_y(&s, |g, r| g.y[r] + g0 * g.x[(r, 0)] + g1 * g.x[(r, 1)] + g2 * g.x[(r, 2)]);
        let opts = FitOptions::default();
        let (p, ps) = (PairSet::enumerate(&s).unwrap(), PairSet::enumerate(&shifted).unwrap());
        let a = fit_pairs(&p, &s, &pairwise_start(&s, &opts), &opts).unwrap();
        let theta = a.theta.clone();
        // At a fixed θ the shift is exact.
        let e0 = profile_eval(&p, &theta).unwrap();
        let e1 = profile_eval(&ps, &theta).unwrap();
        for (k, gamma) in [g0, g1, g2].into_iter().enumerate() {
            prop_assert!(close(e1.beta[k], e0.beta[k] + gamma, 1e-9));
        }
        prop_assert!(close(e1.sigma2, e0.sigma2, 1e-9));
        let b = fit_pairs(&ps, &shifted, theta.values(), &opts).unwrap();
        prop_assert!(theta_close(&a.theta, &b.theta));
    }

    #[test]
    fn scale_equivariance(seed in 0u64..1000, c in 0.1f64..10.0) {
        let s = sample(seed, 25);
        let scaled = map_y(&s, |g, r| c * g.y[r]);
        let (p, ps) = (PairSet::enumerate(&s).unwrap(), PairSet::enumerate(&scaled).unwrap());
        let opts = FitOptions::default();
        let a = fit_pairs(&p, &s, &pairwise_start(&s, &opts), &opts).unwrap();
        let e0 = profile_eval(&p, &a.theta).unwrap();
        let e1 = profile_eval(&ps, &a.theta).unwrap();
        for k in 0..3 {
            prop_assert!(close(e1.beta[k], c * e0.beta[k], 1e-9));
        }
        prop_assert!(close(e1.sigma2, c * c * e0.sigma2, 1e-9));
        let b = fit_pairs(&ps, &scaled, a.theta.values(), &opts).unwrap();
        prop_assert!(theta_close(&a.theta, &b.theta));
    }

    #[test]
    fn optimum_is_a_score_root_and_local_minimum(seed in 0u64..1000) {
        let s = sample(seed, 30);
        let pairs = PairSet::enumerate(&s).unwrap();
        let opts = FitOptions::default();
        let fit = fit_pairs(&pairs, &s, &pairwise_start(&s, &opts), &opts).unwrap();
        prop_assume!(fit.converged);
        let (total, scale) = score_total(&fit, &pairs).unwrap();
        prop_assert!(total.amax() <= 1e-8 * scale.max(1.0));
        let diffs = one_sided_differences(&fit.theta, 1e-4, |t| profile_eval(&pairs, t).map(|e| e.deviance)).unwrap();
        prop_assert!(diffs.iter().all(|d| *d >= -1e-4), "{diffs:?}");
        prop_assert_eq!(profile_eval(&pairs, &fit.theta).unwrap().pairs_touched, pairs.len());
    }

    #[test]
    fn weight_scale_leaves_fit_fixed(seed in 0u64..1000, c in prop_oneof![Just(0.1f64), Just(7.0f64), 0.01f64..100.0]) {
        let s = sample(seed, 25);
        let pairs = PairSet::enumerate(&s).unwrap();
        let scaled = pairs.scale_weights(c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5 {
            let t = ThetaParam::diagonal(vec![2], 0.0)
                .with_values(&[rng.random_range(0.0..2.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..2.0)])
                .unwrap();
            let (a, b) = (profile_eval(&pairs, &t).unwrap(), profile_eval(&scaled, &t).unwrap());
            prop_assert!(close(b.deviance, c * a.deviance, 1e-10));
            prop_assert!((&a.beta - &b.beta).amax() <= 1e-10 * a.beta.amax().max(1.0));
            prop_assert!(close(a.sigma2, b.sigma2, 1e-10));
        }
    }
}
