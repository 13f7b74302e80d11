//! Pipeline configuration file.
//!
//! TOML with one table per stage. Unknown keys are rejected and relative
//! paths resolve against the directory holding the file.

use std::path::{Path, PathBuf};

use landmark_core::cleaning::{
    CleanParams, DEFAULT_MATCH_THRESHOLD, DEFAULT_MAX_PAIRS, DEFAULT_MIN_CLASS_SIZE,
};
use landmark_core::features::FeatureDir;
use landmark_core::rerank::{
    RerankParams, DEFAULT_INLIER_THRESHOLD, DEFAULT_MODIFY_DIVISOR, DEFAULT_POOL_SIZE,
    DEFAULT_ROUNDS,
};
use landmark_core::search::{TileShape, DEFAULT_K_AGG, DEFAULT_K_STORE};
use landmark_core::seed;
use landmark_core::svm::{
    DEFAULT_EPOCHS, DEFAULT_LAMBDA, DEFAULT_NEGATIVES, DEFAULT_POSITIVES, DEFAULT_SVM_THRESHOLD,
};
use landmark_core::verify::{
    CandidateOrder, RansacParams, DEFAULT_MAX_FEATURES, DEFAULT_RANSAC_ITERATIONS,
    DEFAULT_RESIDUAL_PX,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub clean: CleanConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    pub rerank: RerankConfig,
    #[serde(default)]
    pub svm: SvmConfig,
    #[serde(default)]
    pub modify: ModifyConfig,
    #[serde(default)]
    pub merge: MergeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub train: PathBuf,
    pub test: PathBuf,
    pub labels: PathBuf,
    pub features: PathBuf,
    pub work: PathBuf,
    /// When set, `run` also writes report.txt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub k_store: usize,
    pub k_agg: usize,
    pub tile_queries: usize,
    pub tile_train: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        let tiles = TileShape::default();
        SearchConfig {
            k_store: DEFAULT_K_STORE,
            k_agg: DEFAULT_K_AGG,
            tile_queries: tiles.queries,
            tile_train: tiles.train,
        }
    }
}

impl SearchConfig {
    pub fn tiles(&self) -> TileShape {
        TileShape {
            queries: self.tile_queries,
            train: self.tile_train,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanConfig {
    pub threshold: f64,
    pub min_size: usize,
    pub max_pairs: usize,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            threshold: DEFAULT_MATCH_THRESHOLD,
            min_size: DEFAULT_MIN_CLASS_SIZE,
            max_pairs: DEFAULT_MAX_PAIRS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Order {
    /// Re-sort candidates by inlier count before voting.
    Inliers,
    /// Keep the global similarity order.
    Similarity,
}

impl From<Order> for CandidateOrder {
    fn from(o: Order) -> Self {
        match o {
            Order::Inliers => CandidateOrder::InlierScore,
            Order::Similarity => CandidateOrder::GlobalSimilarity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub iterations: usize,
    pub residual_px: f64,
    pub max_features: usize,
    pub order: Order,
    /// Feature sets held in memory.
    pub cache: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            iterations: DEFAULT_RANSAC_ITERATIONS,
            residual_px: DEFAULT_RESIDUAL_PX,
            max_features: DEFAULT_MAX_FEATURES,
            order: Order::Inliers,
            cache: FeatureDir::DEFAULT_CACHE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RerankConfig {
    #[serde(rename = "K", default = "default_pool")]
    pub pool_size: usize,
    #[serde(rename = "theta", default = "default_theta")]
    pub inlier_threshold: usize,
    /// Anchors per round; no default.
    #[serde(rename = "N")]
    pub anchors: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
}

fn default_pool() -> usize {
    DEFAULT_POOL_SIZE
}

fn default_theta() -> usize {
    DEFAULT_INLIER_THRESHOLD
}

fn default_rounds() -> usize {
    DEFAULT_ROUNDS
}

impl RerankConfig {
    pub fn new(anchors: usize) -> Self {
        RerankConfig {
            pool_size: DEFAULT_POOL_SIZE,
            inlier_threshold: DEFAULT_INLIER_THRESHOLD,
            anchors,
            rounds: DEFAULT_ROUNDS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    pub threshold: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub positives: usize,
    pub negatives: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            threshold: DEFAULT_SVM_THRESHOLD,
            lambda: DEFAULT_LAMBDA,
            epochs: DEFAULT_EPOCHS,
            positives: DEFAULT_POSITIVES,
            negatives: DEFAULT_NEGATIVES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModifyConfig {
    pub divisor: f64,
}

impl Default for ModifyConfig {
    fn default() -> Self {
        ModifyConfig {
            divisor: DEFAULT_MODIFY_DIVISOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeConfig {
    pub head_size: usize,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig {
            head_size: DEFAULT_POOL_SIZE,
        }
    }
}

impl PipelineConfig {
    /// Defaults everywhere except the required paths and anchor count.
    pub fn new(paths: Paths, anchors: usize) -> Self {
        PipelineConfig {
            seed: 0,
            paths,
            search: SearchConfig::default(),
            clean: CleanConfig::default(),
            verify: VerifyConfig::default(),
            rerank: RerankConfig::new(anchors),
            svm: SvmConfig::default(),
            modify: ModifyConfig::default(),
            merge: MergeConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_toml_str(&text, base).map_err(|e| match e {
            CliError::Config { message, .. } => CliError::Config {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    /// Parses and validates; relative paths are joined onto `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| CliError::Config {
            path: PathBuf::new(),
            message: e.to_string(),
        })?;
        cfg.paths.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |message: String| CliError::Config {
            path: PathBuf::new(),
            message,
        };
        if self.search.k_store == 0
            || self.search.k_agg == 0
            || self.search.k_agg > self.search.k_store
        {
            return Err(bad("search needs 1 <= k_agg <= k_store".into()));
        }
        if self.search.tile_queries == 0 || self.search.tile_train == 0 {
            return Err(bad("search tiles must be non-empty".into()));
        }
        if !(self.svm.lambda > 0.0)
            || self.svm.epochs == 0
            || self.svm.positives == 0
            || self.svm.negatives == 0
        {
            return Err(bad(
                "svm needs lambda > 0 and epochs, positives, negatives >= 1".into(),
            ));
        }
        if !(self.modify.divisor.is_finite() && self.modify.divisor != 0.0) {
            return Err(bad("modify.divisor must be finite and non-zero".into()));
        }
        if self.verify.cache == 0 {
            return Err(bad("verify.cache must be at least 1".into()));
        }
        if self.clean.min_size == 0
            || self.clean.max_pairs == 0
            || !self.clean.threshold.is_finite()
        {
            return Err(bad(
                "clean needs a finite threshold and min_size, max_pairs >= 1".into(),
            ));
        }
        self.rerank_params()
            .validate()
            .map_err(|e| bad(e.to_string()))?;
        Ok(())
    }

    pub fn ransac(&self) -> RansacParams {
        RansacParams {
            iterations: self.verify.iterations,
            residual_px: self.verify.residual_px,
            max_features: self.verify.max_features,
            seed: seed::derive(self.seed, &["ransac"]),
        }
    }

    pub fn rerank_params(&self) -> RerankParams {
        RerankParams {
            pool_size: self.rerank.pool_size,
            inlier_threshold: self.rerank.inlier_threshold,
            anchors: self.rerank.anchors,
            rounds: self.rerank.rounds,
            ransac: self.ransac(),
        }
    }

    pub fn clean_params(&self) -> CleanParams {
        CleanParams {
            threshold: self.clean.threshold,
            min_size: self.clean.min_size,
            max_pairs: self.clean.max_pairs,
            seed: seed::derive(self.seed, &["clean"]),
        }
    }

    pub fn svm_seed(&self, stream: &str) -> u64 {
        seed::derive(self.seed, &["svm", stream])
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.train);
        join(&mut self.test);
        join(&mut self.labels);
        join(&mut self.features);
        join(&mut self.work);
        if let Some(t) = self.truth.as_mut() {
            join(t);
        }
    }
}
