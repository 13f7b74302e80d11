//! Synthetic retrieval benchmark with planted global and local structure.
//!
//! Each class has a prototype global descriptor and a planar point layout with
//! per-point local descriptors. Train and test images observe the layout
//! through a random similarity transform. Three kinds of difficulty are
//! planted so that each pipeline step has something to fix:
//!
//! * hard test views carry heavy global noise, so the global vote often picks
//!   the wrong class while the right one is still among the neighbors;
//! * confuser distractors look like a landmark globally and share part of its
//!   layout, but not enough to pass the re-ranking threshold against test views;
//! * weak test views see only a few of the layout points seen in training,
//!   but share a test-only point set with the other test views of their class.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::csvio::save_label_table;
use crate::error::{Error, Result};
use crate::eval::{save_truth, GroundTruth};
use crate::features::{save_local_features, InMemoryFeatures, LocalFeature, LocalFeatureSet};
use crate::model::{ClassLabel, ImageId, LabelTable};
use crate::seed;
use crate::store::{save_descriptor_store, DescriptorStore};

const FRAME: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub images_per_class: (usize, usize),
    pub num_test_landmarks: usize,
    pub num_distractors: usize,
    pub descriptor_dim: usize,
    /// Global noise scale σ for train and regular test views.
    pub noise: f64,
    pub features_per_image: usize,
    pub seed: u64,
    /// Classes are drawn in families sharing a center, so siblings look alike globally.
    pub family_size: usize,
    /// Noise scale of a prototype around its family center.
    pub family_spread: f64,
    pub hard_fraction: f64,
    pub hard_noise: f64,
    pub confuser_fraction: f64,
    pub confuser_noise: f64,
    /// Shared layout points seen by a confuser, inclusive range.
    pub confuser_points: (usize, usize),
    pub weak_fraction: f64,
    /// Layout points seen by a weak test view, inclusive range.
    pub weak_points: (usize, usize),
    pub layout_points: usize,
    pub test_view_points: usize,
    pub local_dim: usize,
    pub local_noise: f64,
    pub position_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 50,
            images_per_class: (5, 20),
            num_test_landmarks: 200,
            num_distractors: 200,
            descriptor_dim: 64,
            noise: 0.6,
            features_per_image: 80,
            seed: 0,
            family_size: 4,
            family_spread: 0.35,
            hard_fraction: 0.55,
            hard_noise: 1.5,
            confuser_fraction: 0.3,
            confuser_noise: 2.0,
            confuser_points: (12, 18),
            weak_fraction: 0.3,
            weak_points: (6, 10),
            layout_points: 30,
            test_view_points: 24,
            local_dim: 32,
            local_noise: 0.15,
            position_noise: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.images_per_class;
        let fractions = [
            self.hard_fraction,
            self.confuser_fraction,
            self.weak_fraction,
        ];
        let noises = [
            self.noise,
            self.family_spread,
            self.hard_noise,
            self.confuser_noise,
            self.local_noise,
            self.position_noise,
        ];
        let ok = self.num_classes > 0
            && self.family_size > 0
            && lo > 0
            && lo <= hi
            && self.descriptor_dim > 0
            && self.local_dim > 0
            && self.layout_points >= 3
            && self.weak_points.0 <= self.weak_points.1
            && self.weak_points.1 <= self.layout_points
            && self.confuser_points.0 <= self.confuser_points.1
            && self.confuser_points.1 <= self.layout_points
            && self.layout_points + self.test_view_points <= self.features_per_image
            && fractions.iter().all(|f| (0.0..=1.0).contains(f))
            && noises.iter().all(|s| s.is_finite() && *s >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!(
                "invalid synthetic config: {self:?}"
            )))
        }
    }
}

/// What a test image depicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestKind {
    Landmark { hard: bool, weak: bool },
    Confuser,
    Distractor,
}

#[derive(Debug)]
pub struct SynthBenchmark {
    pub train: DescriptorStore,
    pub labels: LabelTable,
    pub test: DescriptorStore,
    pub truth: GroundTruth,
    pub kinds: BTreeMap<ImageId, TestKind>,
    /// Local features of every train and test image.
    pub features: InMemoryFeatures,
}

impl SynthBenchmark {
    /// Writes `train.glds`, `train_labels.csv`, `test.glds`, `truth.csv` and
    /// `features/<id>.lf`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let feature_dir = dir.join("features");
        std::fs::create_dir_all(&feature_dir).map_err(|e| Error::io(&feature_dir, e))?;
        save_descriptor_store(&self.train, dir.join("train.glds"))?;
        save_label_table(&self.labels, dir.join("train_labels.csv"))?;
        save_descriptor_store(&self.test, dir.join("test.glds"))?;
        save_truth(&self.truth, dir.join("truth.csv"))?;
        for set in self.features.iter() {
            save_local_features(set, &feature_dir)?;
        }
        Ok(())
    }
}

struct Layout {
    points: Vec<(f64, f64)>,
    descriptors: Vec<Vec<f64>>,
}

struct Class {
    prototype: Vec<f64>,
    layout: Layout,
    test_view: Layout,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    normalized(gaussian(rng, dim))
}

/// `normalize(center + sigma * g / sqrt(dim))`, so the noise norm is about `sigma`.
fn perturbed(rng: &mut ChaCha8Rng, center: &[f64], sigma: f64) -> Vec<f64> {
    let scale = sigma / (center.len() as f64).sqrt();
    let g = gaussian(rng, center.len());
    normalized(center.iter().zip(g).map(|(c, n)| c + scale * n).collect())
}

fn layout(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Layout {
    Layout {
        points: (0..n)
            .map(|_| (rng.gen_range(0.0..FRAME), rng.gen_range(0.0..FRAME)))
            .collect(),
        descriptors: (0..n).map(|_| unit(rng, dim)).collect(),
    }
}

/// Rotation up to 15 degrees and scale in [0.9, 1.1] about the frame
/// center, then a shift of up to 50 px per axis.
struct Jitter {
    a: [[f64; 2]; 2],
    t: (f64, f64),
}

impl Jitter {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let angle = rng.gen_range(-15.0f64..=15.0).to_radians();
        let s = rng.gen_range(0.9..=1.1);
        Jitter {
            a: [
                [s * angle.cos(), -s * angle.sin()],
                [s * angle.sin(), s * angle.cos()],
            ],
            t: (rng.gen_range(-50.0..=50.0), rng.gen_range(-50.0..=50.0)),
        }
    }

    fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let c = FRAME / 2.0;
        let (dx, dy) = (x - c, y - c);
        (
            self.a[0][0] * dx + self.a[0][1] * dy + c + self.t.0,
            self.a[1][0] * dx + self.a[1][1] * dy + c + self.t.1,
        )
    }
}

struct ImageBuilder<'a> {
    rng: &'a mut ChaCha8Rng,
    cfg: &'a SynthConfig,
    jitter: Jitter,
    features: Vec<LocalFeature>,
}

impl<'a> ImageBuilder<'a> {
    fn new(rng: &'a mut ChaCha8Rng, cfg: &'a SynthConfig) -> Self {
        let jitter = Jitter::random(rng);
        ImageBuilder {
            rng,
            cfg,
            jitter,
            features: Vec::new(),
        }
    }

    fn observe(&mut self, layout: &Layout, indices: &[usize]) {
        for &i in indices {
            let (x, y) = self.jitter.apply(layout.points[i]);
            let sd = self.cfg.position_noise;
            let x = x + sd * self.rng.sample::<f64, _>(StandardNormal);
            let y = y + sd * self.rng.sample::<f64, _>(StandardNormal);
            let descriptor = perturbed(self.rng, &layout.descriptors[i], self.cfg.local_noise);
            self.push(x, y, descriptor);
        }
    }

    fn push(&mut self, x: f64, y: f64, descriptor: Vec<f64>) {
        let scale = self.rng.gen_range(1.0f32..4.0);
        self.features.push(LocalFeature {
            x: x as f32,
            y: y as f32,
            scale,
            descriptor: descriptor.into_iter().map(|v| v as f32).collect(),
        });
    }

    /// Fills up to `features_per_image` with unrelated clutter and shuffles.
    fn finish(mut self, image: ImageId) -> Result<LocalFeatureSet> {
        while self.features.len() < self.cfg.features_per_image {
            let x = self.rng.gen_range(0.0..FRAME);
            let y = self.rng.gen_range(0.0..FRAME);
            let d = unit(self.rng, self.cfg.local_dim);
            self.push(x, y, d);
        }
        self.features.shuffle(self.rng);
        LocalFeatureSet::new(image, self.cfg.local_dim, self.features)
    }
}

fn subset(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<usize> {
    let mut idx = rand::seq::index::sample(rng, n, count.min(n)).into_vec();
    idx.sort_unstable();
    idx
}

fn fraction_subset(rng: &mut ChaCha8Rng, n: usize, lo: f64) -> Vec<usize> {
    let count = (rng.gen_range(lo..=1.0) * n as f64).round() as usize;
    subset(rng, n, count)
}

struct Pending {
    global: Vec<f64>,
    label: Option<ClassLabel>,
    kind: Option<TestKind>,
    features: Vec<LocalFeature>,
}

/// Deterministic for a given config, including its seed.
pub fn generate_synthetic_benchmark(cfg: &SynthConfig) -> Result<SynthBenchmark> {
    cfg.validate()?;
    let mut rng = seed::rng(seed::derive(cfg.seed, &["synth"]));
    let placeholder = ImageId::new("pending")?;

    let mut center = Vec::new();
    let classes: Vec<Class> = (0..cfg.num_classes)
        .map(|c| {
            if c % cfg.family_size == 0 {
                center = unit(&mut rng, cfg.descriptor_dim);
            }
            Class {
                prototype: perturbed(&mut rng, &center, cfg.family_spread),
                layout: layout(&mut rng, cfg.layout_points, cfg.local_dim),
                test_view: layout(&mut rng, cfg.test_view_points, cfg.local_dim),
            }
        })
        .collect();

    let mut train = Vec::new();
    for (c, class) in classes.iter().enumerate() {
        let n = rng.gen_range(cfg.images_per_class.0..=cfg.images_per_class.1);
        for _ in 0..n {
            let global = perturbed(&mut rng, &class.prototype, cfg.noise);
            let seen = fraction_subset(&mut rng, cfg.layout_points, 0.7);
            let mut img = ImageBuilder::new(&mut rng, cfg);
            img.observe(&class.layout, &seen);
            let set = img.finish(placeholder.clone())?;
            train.push(Pending {
                global,
                label: Some(ClassLabel(c as u64)),
                kind: None,
                features: set.features,
            });
        }
    }

    let mut test = Vec::new();
    for _ in 0..cfg.num_test_landmarks {
        let c = rng.gen_range(0..cfg.num_classes);
        let class = &classes[c];
        let hard = rng.gen_bool(cfg.hard_fraction);
        let weak = rng.gen_bool(cfg.weak_fraction);
        let sigma = if hard { cfg.hard_noise } else { cfg.noise };
        let global = perturbed(&mut rng, &class.prototype, sigma);
        let seen = if weak {
            let count = rng.gen_range(cfg.weak_points.0..=cfg.weak_points.1);
            subset(&mut rng, cfg.layout_points, count)
        } else {
            fraction_subset(&mut rng, cfg.layout_points, 0.8)
        };
        let all_view: Vec<usize> = (0..cfg.test_view_points).collect();
        let mut img = ImageBuilder::new(&mut rng, cfg);
        img.observe(&class.layout, &seen);
        img.observe(&class.test_view, &all_view);
        let set = img.finish(placeholder.clone())?;
        test.push(Pending {
            global,
            label: Some(ClassLabel(c as u64)),
            kind: Some(TestKind::Landmark { hard, weak }),
            features: set.features,
        });
    }
    for _ in 0..cfg.num_distractors {
        let pending = if rng.gen_bool(cfg.confuser_fraction) {
            let class = &classes[rng.gen_range(0..cfg.num_classes)];
            let global = perturbed(&mut rng, &class.prototype, cfg.confuser_noise);
            let count = rng.gen_range(cfg.confuser_points.0..=cfg.confuser_points.1);
            let seen = subset(&mut rng, cfg.layout_points, count);
            let mut img = ImageBuilder::new(&mut rng, cfg);
            img.observe(&class.layout, &seen);
            Pending {
                global,
                label: None,
                kind: Some(TestKind::Confuser),
                features: img.finish(placeholder.clone())?.features,
            }
        } else {
            let global = unit(&mut rng, cfg.descriptor_dim);
            Pending {
                global,
                label: None,
                kind: Some(TestKind::Distractor),
                features: ImageBuilder::new(&mut rng, cfg)
                    .finish(placeholder.clone())?
                    .features,
            }
        };
        test.push(pending);
    }

    train.shuffle(&mut rng);
    test.shuffle(&mut rng);

    let mut features = InMemoryFeatures::new();
    let mut train_store = DescriptorStore::new(cfg.descriptor_dim);
    let mut labels = LabelTable::new();
    for (i, p) in train.into_iter().enumerate() {
        let id = ImageId::new(format!("train_{i:05}"))?;
        train_store.push(
            id.clone(),
            &p.global.iter().map(|&v| v as f32).collect::<Vec<_>>(),
        )?;
        labels.insert(id.clone(), p.label.unwrap());
        features.insert(LocalFeatureSet::new(id, cfg.local_dim, p.features)?);
    }
    let mut test_store = DescriptorStore::new(cfg.descriptor_dim);
    let mut truth = BTreeMap::new();
    let mut kinds = BTreeMap::new();
    for (i, p) in test.into_iter().enumerate() {
        let id = ImageId::new(format!("test_{i:05}"))?;
        test_store.push(
            id.clone(),
            &p.global.iter().map(|&v| v as f32).collect::<Vec<_>>(),
        )?;
        truth.insert(id.clone(), p.label);
        kinds.insert(id.clone(), p.kind.unwrap());
        features.insert(LocalFeatureSet::new(id, cfg.local_dim, p.features)?);
    }

    Ok(SynthBenchmark {
        train: train_store,
        labels,
        test: test_store,
        truth: GroundTruth::new(truth),
        kinds,
        features,
    })
}
