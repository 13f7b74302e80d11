mod oracle;

use std::collections::{BTreeMap, BTreeSet};

use landmark_core::cleaning::{clean_dataset, CleanParams};
use landmark_core::model::{ClassLabel, LabelTable};
use landmark_core::seed;
use landmark_core::store::DescriptorStore;
use oracle::{clean_bfs, clean_fixture, id, random_unit};
use rand::Rng;

#[test]
fn matches_bfs_reference() {
    let mut rng = seed::rng(77);
    for trial in 0..20 {
        let images = rng.gen_range(20..1000);
        let (labels, store) = clean_fixture(&mut rng, images, 16);
        let params = CleanParams {
            threshold: 0.5,
            min_size: 4,
            max_pairs: rng.gen_range(1..150),
            seed: trial,
        };
        let got = clean_dataset(&labels, &store, &params).unwrap();
        let want = clean_bfs(
            &labels,
            &store,
            params.threshold,
            params.min_size,
            params.max_pairs,
        );
        let kept: BTreeMap<ClassLabel, BTreeSet<_>> = got
            .kept
            .iter()
            .map(|(c, ids)| (*c, ids.iter().cloned().collect()))
            .collect();
        assert_eq!(kept, want.kept, "trial {trial}");
        assert_eq!(got.stats.classes_removed_small, want.removed_small);
        assert_eq!(got.stats.classes_removed_no_pairs, want.removed_no_pairs);
        assert_eq!(got.stats.images_kept, want.images_kept);
        assert_eq!(got.stats.classes_kept, want.kept.len());
        assert_eq!(got.stats.pairs_sampled, want.pairs_sampled);
        assert_eq!(got.pairs.len(), want.pairs_sampled);
        for (a, b) in &got.pairs {
            assert_eq!(labels[a], labels[b]);
            assert!(kept[&labels[a]].contains(a) && kept[&labels[a]].contains(b));
        }
    }
}

#[test]
fn kept_counts_shrink_as_threshold_rises() {
    let mut rng = seed::rng(3);
    for _ in 0..5 {
        let (labels, store) = clean_fixture(&mut rng, 600, 16);
        let mut previous: Option<BTreeMap<ClassLabel, usize>> = None;
        for step in 0..=8 {
            let threshold = 0.3 + 0.05 * step as f64;
            let params = CleanParams {
                threshold,
                ..CleanParams::default()
            };
            let out = clean_dataset(&labels, &store, &params).unwrap();
            let counts: BTreeMap<ClassLabel, usize> =
                out.kept.iter().map(|(c, v)| (*c, v.len())).collect();
            if let Some(prev) = &previous {
                for (c, n) in &counts {
                    assert!(
                        prev.get(c).is_some_and(|p| n <= p),
                        "class {c:?} grew at {threshold}"
                    );
                }
            }
            previous = Some(counts);
        }
    }
}

#[test]
fn deterministic_for_a_seed() {
    let mut rng = seed::rng(12);
    let (labels, store) = clean_fixture(&mut rng, 400, 16);
    let params = CleanParams {
        max_pairs: 5,
        seed: 99,
        ..CleanParams::default()
    };
    let a = clean_dataset(&labels, &store, &params).unwrap();
    let b = clean_dataset(&labels, &store, &params).unwrap();
    assert_eq!(a, b);
    let other = clean_dataset(
        &labels,
        &store,
        &CleanParams {
            seed: 100,
            ..params
        },
    )
    .unwrap();
    assert_eq!(a.kept, other.kept);
}

#[test]
fn noisy_classes_counted_as_no_pairs() {
    let mut rng = seed::rng(4);
    let dim = 32;
    let mut labels = LabelTable::new();
    let mut rows = Vec::new();
    for c in 0..10u64 {
        let center = random_unit(&mut rng, dim);
        for i in 0..6 {
            let image = id(format!("c{c}_{i}"));
            // Classes 8 and 9 are mutually orthogonal one-hot vectors.
            let v = if c >= 8 {
                oracle::one_hot(dim, (c as usize - 8) * 6 + i)
            } else {
                center.clone()
            };
            labels.insert(image.clone(), ClassLabel(c));
            rows.push((image, v));
        }
    }
    let store = DescriptorStore::from_rows(dim, rows).unwrap();
    let out = clean_dataset(&labels, &store, &CleanParams::default()).unwrap();
    assert_eq!(out.stats.classes_removed_no_pairs, 2);
    assert_eq!(out.stats.classes_kept, 8);
}
