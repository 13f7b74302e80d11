//! Recipes wiring the stages together, one per row of the step-by-step table.
//!
//! Every stage writes its submission into the work directory and the next
//! stage reads it back from there, so each intermediate file is exactly what
//! a later `evaluate` sees.

use std::fs;
use std::path::{Path, PathBuf};

use landmark_core::csvio::{load_label_table, load_submission, save_submission};
use landmark_core::eval::{load_truth, report};
use landmark_core::features::FeatureDir;
use landmark_core::model::{LabelTable, Submission};
use landmark_core::rerank::{merge_alternating, modify_confidences, rerank_inliers, save_audit};
use landmark_core::search::{aggregate_topk, knn_search_tiled, load_neighbors, save_neighbors};
use landmark_core::store::{load_descriptor_store, DescriptorStore};
use landmark_core::svm::{svm_reweight, svm_train, training_sets};
use landmark_core::verify::{rescore_candidates, save_pair_scores};

use crate::config::PipelineConfig;
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Recipe {
    Step1,
    Step1Svm,
    Step1SvmStep3,
    Step1Step2,
    Step1Step2Step3,
    /// Combine step2_step3.csv with step1.csv already in the work dir.
    Modify,
    /// Combine modify.csv with step1_svm_step3.csv already in the work dir.
    Merge,
    Full,
}

pub const STEP1: &str = "step1.csv";
pub const STEP1_SVM: &str = "step1_svm.csv";
pub const STEP1_SVM_STEP3: &str = "step1_svm_step3.csv";
pub const STEP2: &str = "step2.csv";
pub const STEP2_STEP3: &str = "step2_step3.csv";
pub const MODIFY: &str = "modify.csv";
pub const FINAL: &str = "final.csv";
pub const NEIGHBORS: &str = "neighbors.csv";
pub const PAIR_SCORES: &str = "pair_scores.csv";
pub const SVM_MODEL: &str = "svm_model.json";
pub const REPORT: &str = "report.txt";

/// Files written by one run, in table order, and the report text if truth
/// was configured.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub submissions: Vec<(String, PathBuf)>,
    pub report: Option<String>,
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    work: PathBuf,
    written: Vec<(String, PathBuf)>,
    labels: Option<LabelTable>,
    train: Option<DescriptorStore>,
    test: Option<DescriptorStore>,
    features: Option<FeatureDir>,
}

pub fn run_pipeline(cfg: &PipelineConfig, recipe: Recipe) -> Result<RunSummary, CliError> {
    let work = cfg.paths.work.clone();
    fs::create_dir_all(&work).map_err(|e| landmark_core::Error::Io {
        path: work.clone(),
        source: e,
    })?;
    let mut run = Run {
        cfg,
        work,
        written: Vec::new(),
        labels: None,
        train: None,
        test: None,
        features: None,
    };
    match recipe {
        Recipe::Step1 => {
            run.step1()?;
        }
        Recipe::Step1Svm => {
            let s1 = run.step1()?;
            run.svm(&s1)?;
        }
        Recipe::Step1SvmStep3 => {
            let s1 = run.step1()?;
            let svm = run.svm(&s1)?;
            run.step3(&svm, STEP1_SVM_STEP3, "step1-svm-step3")?;
        }
        Recipe::Step1Step2 => {
            run.step1()?;
            run.step2()?;
        }
        Recipe::Step1Step2Step3 => {
            run.step1()?;
            let s2 = run.step2()?;
            run.step3(&s2, STEP2_STEP3, "step1-step2-step3")?;
        }
        Recipe::Modify => {
            let main = run.existing(STEP2_STEP3, "step1-step2-step3")?;
            let reference = run.existing(STEP1, "step1")?;
            run.modify(&main, &reference)?;
        }
        Recipe::Merge => {
            let first = run.existing(MODIFY, "modify")?;
            let second = run.existing(STEP1_SVM_STEP3, "step1-svm-step3")?;
            run.merge(&first, &second)?;
        }
        Recipe::Full => {
            let s1 = run.step1()?;
            let svm = run.svm(&s1)?;
            let svm3 = run.step3(&svm, STEP1_SVM_STEP3, "step1-svm-step3")?;
            let s2 = run.step2()?;
            let s23 = run.step3(&s2, STEP2_STEP3, "step1-step2-step3")?;
            let modified = run.modify(&s23, &s1)?;
            run.merge(&modified, &svm3)?;
        }
    }
    let report = match &cfg.paths.truth {
        Some(path) => Some(run.report(path)?),
        None => None,
    };
    Ok(RunSummary {
        submissions: run.written,
        report,
    })
}

fn require(path: &Path, hint: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingInput {
            path: path.to_path_buf(),
            hint: hint.to_string(),
        })
    }
}

impl Run<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.work.join(name)
    }

    fn labels(&mut self) -> Result<&LabelTable, CliError> {
        if self.labels.is_none() {
            require(&self.cfg.paths.labels, "paths.labels")?;
            self.labels = Some(load_label_table(&self.cfg.paths.labels)?);
        }
        Ok(self.labels.as_ref().unwrap())
    }

    fn train(&mut self) -> Result<&DescriptorStore, CliError> {
        if self.train.is_none() {
            require(&self.cfg.paths.train, "paths.train")?;
            self.train = Some(load_descriptor_store(&self.cfg.paths.train)?);
        }
        Ok(self.train.as_ref().unwrap())
    }

    fn test(&mut self) -> Result<&DescriptorStore, CliError> {
        if self.test.is_none() {
            require(&self.cfg.paths.test, "paths.test")?;
            self.test = Some(load_descriptor_store(&self.cfg.paths.test)?);
        }
        Ok(self.test.as_ref().unwrap())
    }

    fn features(&mut self) -> Result<&FeatureDir, CliError> {
        if self.features.is_none() {
            require(&self.cfg.paths.features, "paths.features")?;
            self.features = Some(FeatureDir::new(
                &self.cfg.paths.features,
                self.cfg.verify.cache,
            ));
        }
        Ok(self.features.as_ref().unwrap())
    }

    /// Writes `sub` and hands back what was written.
    fn emit(&mut self, sub: &Submission, file: &str, name: &str) -> Result<Submission, CliError> {
        let path = self.path(file);
        save_submission(sub, &path)?;
        self.written.push((name.to_string(), path.clone()));
        Ok(load_submission(&path)?)
    }

    fn existing(&self, file: &str, recipe: &str) -> Result<Submission, CliError> {
        let path = self.path(file);
        require(&path, &format!("run recipe {recipe} first"))?;
        Ok(load_submission(&path)?)
    }

    fn step1(&mut self) -> Result<Submission, CliError> {
        let search = self.cfg.search.clone();
        self.test()?;
        self.train()?;
        let neighbors = knn_search_tiled(
            self.test.as_ref().unwrap(),
            self.train.as_ref().unwrap(),
            search.k_store,
            search.tiles(),
        )?;
        save_neighbors(&neighbors, self.path(NEIGHBORS))?;
        let sub = aggregate_topk(&neighbors, self.labels()?, search.k_agg)?;
        self.emit(&sub, STEP1, "step1")
    }

    fn svm(&mut self, step1: &Submission) -> Result<Submission, CliError> {
        let svm = self.cfg.svm.clone();
        let (sample_seed, train_seed) =
            (self.cfg.svm_seed("positives"), self.cfg.svm_seed("train"));
        self.train()?;
        self.test()?;
        let (train, test) = (self.train.as_ref().unwrap(), self.test.as_ref().unwrap());
        let (pos, neg) = training_sets(
            train,
            step1,
            test,
            svm.positives,
            svm.negatives,
            sample_seed,
        )?;
        let model = svm_train(&pos, &neg, svm.lambda, svm.epochs, train_seed)?;
        let model_path = self.path(SVM_MODEL);
        let json = serde_json::to_string_pretty(&model).expect("model serializes");
        fs::write(&model_path, json + "\n").map_err(|e| landmark_core::Error::Io {
            path: model_path,
            source: e,
        })?;
        let sub = svm_reweight(step1, &model, test, svm.threshold)?;
        self.emit(&sub, STEP1_SVM, "step1-svm")
    }

    fn step2(&mut self) -> Result<Submission, CliError> {
        let neighbors = load_neighbors(self.path(NEIGHBORS))?;
        let (k_agg, order, ransac) = (
            self.cfg.search.k_agg,
            self.cfg.verify.order,
            self.cfg.ransac(),
        );
        self.labels()?;
        self.features()?;
        let out = rescore_candidates(
            &neighbors,
            self.labels.as_ref().unwrap(),
            self.features.as_ref().unwrap(),
            k_agg,
            order.into(),
            &ransac,
        )?;
        save_pair_scores(&out.pair_scores, self.path(PAIR_SCORES))?;
        self.emit(&out.submission, STEP2, "step1-step2")
    }

    fn step3(
        &mut self,
        input: &Submission,
        file: &str,
        name: &str,
    ) -> Result<Submission, CliError> {
        let params = self.cfg.rerank_params();
        let out = rerank_inliers(input, self.features()?, &params)?;
        let audit = file.replace(".csv", "_audit.csv");
        save_audit(&out.audit, self.path(&audit))?;
        self.emit(&out.submission, file, name)
    }

    fn modify(
        &mut self,
        main: &Submission,
        reference: &Submission,
    ) -> Result<Submission, CliError> {
        let sub = modify_confidences(main, reference, self.cfg.modify.divisor)?;
        self.emit(&sub, MODIFY, "modify")
    }

    fn merge(&mut self, first: &Submission, second: &Submission) -> Result<Submission, CliError> {
        let sub = merge_alternating(first, second, self.cfg.merge.head_size)?;
        self.emit(&sub, FINAL, "merge")
    }

    fn report(&self, truth_path: &Path) -> Result<String, CliError> {
        require(truth_path, "paths.truth")?;
        let truth = load_truth(truth_path)?;
        let steps = self
            .written
            .iter()
            .map(|(name, path)| Ok((name.clone(), load_submission(path)?)))
            .collect::<Result<Vec<_>, CliError>>()?;
        let text = report(&steps, &truth)?;
        let path = self.path(REPORT);
        fs::write(&path, &text).map_err(|e| landmark_core::Error::Io { path, source: e })?;
        Ok(text)
    }
}
