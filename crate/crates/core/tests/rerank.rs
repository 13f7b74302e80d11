mod oracle;

use std::collections::BTreeMap;

use landmark_core::model::{ClassLabel, ImageId, Prediction, Submission};
use landmark_core::rerank::{merge_alternating, modify_confidences, rerank_inliers, RerankParams};
use landmark_core::seed;
use landmark_core::store::DescriptorStore;
use landmark_core::svm::{svm_reweight, LinearModel};
use oracle::{id, random_unit, rerank_fixture, RERANK_FEATURES};
use proptest::prelude::*;
use rand::Rng;

fn pairs(sub: &Submission) -> BTreeMap<ImageId, Option<ClassLabel>> {
    sub.rows
        .iter()
        .map(|r| (r.image.clone(), r.label()))
        .collect()
}

fn ranked_ids(sub: &Submission) -> Vec<ImageId> {
    sub.ranked().iter().map(|r| r.image.clone()).collect()
}

#[test]
fn rerank_contract_on_random_submissions() {
    let mut rng = seed::rng(21);
    let mut reordered = 0;
    for trial in 0..50u64 {
        let n = rng.gen_range(2..40);
        let (sub, features) = rerank_fixture(&mut rng, n);
        let mut params = RerankParams::new(rng.gen_range(1..10));
        params.pool_size = rng.gen_range(params.anchors..n + 5);
        params.inlier_threshold = rng.gen_range(5..30);
        params.ransac.iterations = 50;
        params.ransac.seed = trial;
        let out = rerank_inliers(&sub, &features, &params).unwrap().submission;

        assert_eq!(pairs(&out), pairs(&sub), "trial {trial}");
        if ranked_ids(&out) != ranked_ids(&sub) {
            reordered += 1;
        }
        let before = sub.ranked();
        let after = out.ranked();
        let head = before
            .iter()
            .take(params.pool_size)
            .take_while(|r| r.guess.is_some())
            .count();
        assert_eq!(
            &before[head..],
            &after[head..],
            "tail changed in trial {trial}"
        );
        let head_conf: Vec<f64> = after[..head]
            .iter()
            .map(|r| r.confidence().unwrap())
            .collect();
        assert!(head_conf.windows(2).all(|w| w[0] > w[1]), "trial {trial}");
        if let Some(tail_max) = after[head..]
            .iter()
            .filter_map(|r| r.confidence())
            .reduce(f64::max)
        {
            assert!(head_conf.last().is_none_or(|&m| m > tail_max));
        }

        let mut never = params;
        never.inlier_threshold = RERANK_FEATURES + 1;
        let fixed = rerank_inliers(&sub, &features, &never).unwrap().submission;
        assert_eq!(ranked_ids(&fixed), ranked_ids(&sub), "trial {trial}");
    }
    assert!(reordered >= 10, "only {reordered} trials moved anything");
}

#[test]
fn rerank_deterministic_across_thread_counts() {
    let mut rng = seed::rng(31);
    let (sub, features) = rerank_fixture(&mut rng, 40);
    let mut params = RerankParams::new(8);
    params.inlier_threshold = 10;
    params.ransac.iterations = 100;
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| rerank_inliers(&sub, &features, &params).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(4));
    assert_eq!(one, run(8));
}

fn random_sub(seed_value: u64, n: usize) -> Submission {
    let mut rng = seed::rng(seed_value);
    let rows = (0..n)
        .map(|i| {
            let image = id(format!("m{i:03}"));
            if rng.gen_bool(0.15) {
                Prediction::empty(image)
            } else {
                Prediction::new(
                    image,
                    ClassLabel(rng.gen_range(0..4)),
                    rng.gen_range(-5.0..5.0),
                )
            }
        })
        .collect();
    Submission::new(rows).unwrap()
}

proptest! {
    #[test]
    fn merge_keeps_every_id_once(a in any::<u64>(), b in any::<u64>(), n in 1usize..60, head in 0usize..80) {
        let x = random_sub(a, n);
        let y = random_sub(b, n);
        let m = merge_alternating(&x, &y, head).unwrap();
        prop_assert_eq!(m.len(), n);
        prop_assert!(m.check_same_ids(&x).is_ok());
        let non_empty: Vec<f64> = m.ranked().iter().filter_map(|r| r.confidence()).collect();
        prop_assert!(non_empty.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn modify_keeps_labels_and_ids(a in any::<u64>(), b in any::<u64>(), n in 1usize..60) {
        let main = random_sub(a, n);
        let reference = random_sub(b, n);
        let out = modify_confidences(&main, &reference, 1000.0).unwrap();
        prop_assert_eq!(pairs(&out), pairs(&main));
        for ((o, m), r) in out.rows.iter().zip(&main.rows).zip(&reference.rows) {
            if let (Some(c), Some(rc)) = (m.confidence(), r.confidence()) {
                prop_assert_eq!(o.confidence().unwrap(), c + rc / 1000.0);
            } else {
                prop_assert_eq!(o.confidence(), m.confidence());
            }
        }
    }

    #[test]
    fn svm_reweight_never_raises(a in any::<u64>(), n in 1usize..40, w in prop::collection::vec(-3.0f64..3.0, 4), bias in -2.0f64..2.0) {
        let sub = random_sub(a, n);
        let mut rng = seed::rng(a ^ 0x5eed);
        let store = DescriptorStore::from_rows(4, sub.rows.iter().map(|r| (r.image.clone(), random_unit(&mut rng, 4)))).unwrap();
        let model = LinearModel { weights: w, bias };
        let out = svm_reweight(&sub, &model, &store, 0.55).unwrap();
        let mut kept = Vec::new();
        for (o, s) in out.rows.iter().zip(&sub.rows) {
            match (o.confidence(), s.confidence()) {
                (Some(x), Some(y)) => {
                    prop_assert!(x <= y);
                    if x == y {
                        kept.push((s.image.clone(), y));
                    }
                }
                (None, None) => {}
                _ => prop_assert!(false, "emptiness changed"),
            }
        }
        // Rows the classifier accepts keep their relative order.
        let order = |s: &Submission| -> Vec<ImageId> {
            s.ranked().iter().filter(|r| kept.iter().any(|k| k.0 == r.image)).map(|r| r.image.clone()).collect()
        };
        let (before, after) = (order(&sub), order(&out));
        prop_assert_eq!(before, after);
    }
}
