mod oracle;

use landmark_core::seed;
use landmark_core::verify::{inlier_score, match_features, ransac_verify, RansacParams};
use oracle::{mutual_nn_bruteforce, planted_affine_pair, random_feature_pair};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn planted_inliers_recovered() {
    let mut rng = seed::rng(10);
    let mut exact = 0;
    for trial in 0..100u64 {
        let outliers = rng.gen_range(0..=10);
        let (a, b) = planted_affine_pair(&mut rng, 10, outliers);
        let params = RansacParams {
            seed: trial,
            ..RansacParams::default()
        };
        if inlier_score(&a, &b, &params).unwrap() == 10 {
            exact += 1;
        }
    }
    assert!(exact >= 95, "{exact}/100");
}

#[test]
fn unrelated_pairs_score_low() {
    let mut rng = seed::rng(11);
    let mut low = 0;
    for trial in 0..100u64 {
        let (a, b) = random_feature_pair(&mut rng, 50, 32);
        let params = RansacParams {
            seed: trial,
            ..RansacParams::default()
        };
        if inlier_score(&a, &b, &params).unwrap() <= 5 {
            low += 1;
        }
    }
    assert!(low >= 95, "{low}/100");
}

#[test]
fn mutual_matching_equals_bruteforce() {
    let mut rng = seed::rng(12);
    for _ in 0..50 {
        let (a, b) = random_feature_pair(&mut rng, 20, 8);
        let got: Vec<(usize, usize)> = match_features(&a, &b)
            .unwrap()
            .iter()
            .map(|c| (c.a_index, c.b_index))
            .collect();
        assert_eq!(got, mutual_nn_bruteforce(&a, &b));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inliers_bounded_and_monotone_in_residual(seed_value in any::<u64>(), outliers in 0usize..15, r in 0.5f64..20.0, dr in 0.0f64..20.0) {
        let mut rng = seed::rng(seed_value);
        let (a, b) = planted_affine_pair(&mut rng, 8, outliers);
        let corr = match_features(&a, &b).unwrap();
        let tight = RansacParams { residual_px: r, iterations: 200, seed: seed_value, ..RansacParams::default() };
        let loose = RansacParams { residual_px: r + dr, ..tight };
        let lo = ransac_verify(&corr, &a, &b, &tight).unwrap();
        let hi = ransac_verify(&corr, &a, &b, &loose).unwrap();
        prop_assert!(lo <= corr.len() && hi <= corr.len());
        prop_assert!(lo <= hi);
    }

    #[test]
    fn deterministic_per_seed(seed_value in any::<u64>()) {
        let mut rng = seed::rng(seed_value);
        let (a, b) = random_feature_pair(&mut rng, 30, 8);
        let params = RansacParams { iterations: 100, seed: seed_value, ..RansacParams::default() };
        prop_assert_eq!(inlier_score(&a, &b, &params).unwrap(), inlier_score(&a, &b, &params).unwrap());
    }
}
