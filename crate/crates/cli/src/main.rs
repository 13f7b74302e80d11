use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use landmark_core::cleaning::{clean_dataset, CleanParams};
use landmark_core::csvio::{load_label_table, load_submission, save_submission};
use landmark_core::eval::{gap, load_truth, report};
use landmark_core::features::FeatureDir;
use landmark_core::rerank::{
    merge_alternating, modify_confidences, rerank_inliers, save_audit, RerankParams,
};
use landmark_core::search::{
    ensemble_aggregate, knn_search_tiled, load_neighbors, save_neighbors, TileShape,
};
use landmark_core::seed;
use landmark_core::store::load_descriptor_store;
use landmark_core::svm::{svm_reweight, svm_train, training_sets, LinearModel};
use landmark_core::synth::{generate_synthetic_benchmark, SynthConfig};
use landmark_core::verify::{rescore_candidates, save_pair_scores, RansacParams};
use landmark_rerank::config::{
    CleanConfig, MergeConfig, ModifyConfig, Order, Paths, RerankConfig, SearchConfig, SvmConfig,
    VerifyConfig,
};
use landmark_rerank::{run_pipeline, CliError, PipelineConfig, Recipe};

/// Retrieval-based landmark recognition pipeline.
#[derive(Parser)]
#[command(name = "landmark-rerank", version)]
struct Cli {
    /// Pipeline config (TOML); for `synth`, the generator config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter a noisy training set down to consistent classes.
    Clean {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        min_size: Option<usize>,
        #[arg(long)]
        max_pairs: Option<usize>,
    },
    /// Exact k-nearest-neighbor search of test against train descriptors.
    Search {
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Class vote over neighbor lists; several lists are summed per class.
    Aggregate {
        #[arg(long, required = true, num_args = 1..)]
        neighbors: Vec<PathBuf>,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k_agg: Option<usize>,
    },
    /// Local verification of the global candidates.
    Verify {
        #[arg(long)]
        neighbors: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        pair_scores: Option<PathBuf>,
        #[arg(long)]
        k_agg: Option<usize>,
        #[arg(long, value_enum)]
        order: Option<Order>,
    },
    /// Inlier-driven re-ranking of a submission's head.
    Rerank {
        #[command(flatten)]
        io: InOut,
        #[arg(long)]
        features: PathBuf,
        /// Anchors per round.
        #[arg(long = "anchors", short = 'N')]
        anchors: Option<usize>,
        #[arg(long = "pool", short = 'K')]
        pool: Option<usize>,
        #[arg(long)]
        theta: Option<usize>,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        audit: Option<PathBuf>,
    },
    /// Train the linear distractor filter.
    SvmTrain {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Submission whose lowest-ranked rows are the negatives.
        #[arg(long)]
        ranking: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        positives: Option<usize>,
        #[arg(long)]
        negatives: Option<usize>,
    },
    /// Lower the confidence of likely distractors.
    SvmReweight {
        #[command(flatten)]
        io: InOut,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Add a reference submission's confidence, scaled down, where both predict.
    Modify {
        #[command(flatten)]
        io: InOut,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        divisor: Option<f64>,
    },
    /// Interleave the heads of two submissions.
    Merge {
        #[arg(long)]
        first: PathBuf,
        #[arg(long)]
        second: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        head_size: Option<usize>,
    },
    /// GAP of a submission against ground truth.
    Evaluate {
        #[arg(long)]
        submission: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Generate a synthetic benchmark and a pipeline config for it.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// GAP table over several submissions.
    Report {
        #[arg(long)]
        truth: PathBuf,
        /// NAME=PATH, in table order.
        #[arg(long = "step", required = true, num_args = 1..)]
        steps: Vec<String>,
    },
    /// Run a recipe end to end from the config.
    Run {
        #[arg(long, value_enum)]
        recipe: Recipe,
    },
}

#[derive(Args)]
struct InOut {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Stage parameters from the config file when one is given, otherwise the
/// library defaults. Flags override either.
struct Defaults {
    seed: u64,
    search: SearchConfig,
    clean: CleanConfig,
    verify: VerifyConfig,
    rerank: Option<RerankConfig>,
    svm: SvmConfig,
    modify: ModifyConfig,
    merge: MergeConfig,
}

impl Defaults {
    fn from(cfg: Option<&PipelineConfig>) -> Self {
        match cfg {
            Some(c) => Defaults {
                seed: c.seed,
                search: c.search.clone(),
                clean: c.clean.clone(),
                verify: c.verify.clone(),
                rerank: Some(c.rerank.clone()),
                svm: c.svm.clone(),
                modify: c.modify.clone(),
                merge: c.merge.clone(),
            },
            None => Defaults {
                seed: 0,
                search: SearchConfig::default(),
                clean: CleanConfig::default(),
                verify: VerifyConfig::default(),
                rerank: None,
                svm: SvmConfig::default(),
                modify: ModifyConfig::default(),
                merge: MergeConfig::default(),
            },
        }
    }

    fn ransac(&self) -> RansacParams {
        RansacParams {
            iterations: self.verify.iterations,
            residual_px: self.verify.residual_px,
            max_features: self.verify.max_features,
            seed: seed::derive(self.seed, &["ransac"]),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            return fail(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("global thread pool is configured once");
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    landmark_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
    .into()
}

fn execute(cli: Cli) -> Result<(), CliError> {
    if let Command::Synth { out, seed } = &cli.command {
        return synth(cli.config.as_deref(), out, *seed);
    }
    let cfg = cli
        .config
        .as_deref()
        .map(PipelineConfig::load)
        .transpose()?;
    let d = Defaults::from(cfg.as_ref());
    match cli.command {
        Command::Clean {
            labels,
            store,
            out_dir,
            threshold,
            min_size,
            max_pairs,
        } => {
            let params = CleanParams {
                threshold: threshold.unwrap_or(d.clean.threshold),
                min_size: min_size.unwrap_or(d.clean.min_size),
                max_pairs: max_pairs.unwrap_or(d.clean.max_pairs),
                seed: seed::derive(d.seed, &["clean"]),
            };
            let out = clean_dataset(
                &load_label_table(&labels)?,
                &load_descriptor_store(&store)?,
                &params,
            )?;
            out.save(&out_dir)?;
            print!("{}", out.stats_text());
        }
        Command::Search {
            test,
            train,
            out,
            k,
        } => {
            let tiles = TileShape {
                queries: d.search.tile_queries,
                train: d.search.tile_train,
            };
            let lists = knn_search_tiled(
                &load_descriptor_store(&test)?,
                &load_descriptor_store(&train)?,
                k.unwrap_or(d.search.k_store),
                tiles,
            )?;
            save_neighbors(&lists, &out)?;
        }
        Command::Aggregate {
            neighbors,
            labels,
            out,
            k_agg,
        } => {
            let lists = neighbors
                .iter()
                .map(load_neighbors)
                .collect::<Result<Vec<_>, _>>()?;
            let sub = ensemble_aggregate(
                &lists,
                &load_label_table(&labels)?,
                k_agg.unwrap_or(d.search.k_agg),
            )?;
            save_submission(&sub, &out)?;
        }
        Command::Verify {
            neighbors,
            labels,
            features,
            out,
            pair_scores,
            k_agg,
            order,
        } => {
            let source = FeatureDir::new(features, d.verify.cache);
            let result = rescore_candidates(
                &load_neighbors(&neighbors)?,
                &load_label_table(&labels)?,
                &source,
                k_agg.unwrap_or(d.search.k_agg),
                order.unwrap_or(d.verify.order).into(),
                &d.ransac(),
            )?;
            save_submission(&result.submission, &out)?;
            if let Some(path) = pair_scores {
                save_pair_scores(&result.pair_scores, &path)?;
            }
        }
        Command::Rerank {
            io,
            features,
            anchors,
            pool,
            theta,
            rounds,
            audit,
        } => {
            let anchors = anchors
                .or(d.rerank.as_ref().map(|r| r.anchors))
                .ok_or_else(|| {
                    CliError::Usage("rerank needs --anchors N (or rerank.N in --config)".into())
                })?;
            let base = d
                .rerank
                .clone()
                .unwrap_or_else(|| RerankConfig::new(anchors));
            let params = RerankParams {
                pool_size: pool.unwrap_or(base.pool_size),
                inlier_threshold: theta.unwrap_or(base.inlier_threshold),
                anchors,
                rounds: rounds.unwrap_or(base.rounds),
                ransac: d.ransac(),
            };
            params
                .validate()
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let source = FeatureDir::new(features, d.verify.cache);
            let out = rerank_inliers(&load_submission(&io.input)?, &source, &params)?;
            save_submission(&out.submission, &io.out)?;
            if let Some(path) = audit {
                save_audit(&out.audit, &path)?;
            }
        }
        Command::SvmTrain {
            train,
            test,
            ranking,
            out,
            positives,
            negatives,
        } => {
            let (pos, neg) = training_sets(
                &load_descriptor_store(&train)?,
                &load_submission(&ranking)?,
                &load_descriptor_store(&test)?,
                positives.unwrap_or(d.svm.positives),
                negatives.unwrap_or(d.svm.negatives),
                seed::derive(d.seed, &["svm", "positives"]),
            )?;
            let model = svm_train(
                &pos,
                &neg,
                d.svm.lambda,
                d.svm.epochs,
                seed::derive(d.seed, &["svm", "train"]),
            )?;
            let json = serde_json::to_string_pretty(&model).expect("model serializes");
            fs::write(&out, json + "\n").map_err(|e| io_err(&out, e))?;
        }
        Command::SvmReweight {
            io,
            model,
            test,
            threshold,
        } => {
            let text = fs::read_to_string(&model).map_err(|e| io_err(&model, e))?;
            let parsed: LinearModel =
                serde_json::from_str(&text).map_err(|e| landmark_core::Error::Parse {
                    path: model.clone(),
                    line: e.line() as u64,
                    message: e.to_string(),
                })?;
            let sub = svm_reweight(
                &load_submission(&io.input)?,
                &parsed,
                &load_descriptor_store(&test)?,
                threshold.unwrap_or(d.svm.threshold),
            )?;
            save_submission(&sub, &io.out)?;
        }
        Command::Modify {
            io,
            reference,
            divisor,
        } => {
            let sub = modify_confidences(
                &load_submission(&io.input)?,
                &load_submission(&reference)?,
                divisor.unwrap_or(d.modify.divisor),
            )?;
            save_submission(&sub, &io.out)?;
        }
        Command::Merge {
            first,
            second,
            out,
            head_size,
        } => {
            let sub = merge_alternating(
                &load_submission(&first)?,
                &load_submission(&second)?,
                head_size.unwrap_or(d.merge.head_size),
            )?;
            save_submission(&sub, &out)?;
        }
        Command::Evaluate { submission, truth } => {
            let value = gap(&load_submission(&submission)?, &load_truth(&truth)?)?;
            println!("{value:.5}");
        }
        Command::Report { truth, steps } => {
            let truth = load_truth(&truth)?;
            let subs = steps
                .iter()
                .map(|s| {
                    let (name, path) = s.split_once('=').ok_or_else(|| {
                        CliError::Usage(format!("--step expects NAME=PATH, got {s:?}"))
                    })?;
                    Ok((name.to_string(), load_submission(path)?))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            print!("{}", report(&subs, &truth)?);
        }
        Command::Run { recipe } => {
            let cfg = cfg.ok_or_else(|| CliError::Usage("run needs --config".into()))?;
            let summary = run_pipeline(&cfg, recipe)?;
            for (name, path) in &summary.submissions {
                println!("{name}\t{}", path.display());
            }
            if let Some(text) = summary.report {
                print!("{text}");
            }
        }
        Command::Synth { .. } => unreachable!(),
    }
    Ok(())
}

/// Anchor count and SVM example counts written into the generated config;
/// the published values assume a far larger test set.
const SYNTH_ANCHORS: usize = 100;
const SYNTH_NEGATIVES: usize = 100;

fn synth(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg = match config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Config {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            toml::from_str::<SynthConfig>(&text).map_err(|e| CliError::Config {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let bench = generate_synthetic_benchmark(&cfg)?;
    bench.write(out)?;
    let mut pipeline = PipelineConfig::new(
        Paths {
            train: "train.glds".into(),
            test: "test.glds".into(),
            labels: "train_labels.csv".into(),
            features: "features".into(),
            work: "work".into(),
            truth: Some("truth.csv".into()),
        },
        SYNTH_ANCHORS,
    );
    pipeline.seed = cfg.seed;
    pipeline.svm.negatives = SYNTH_NEGATIVES;
    let path = out.join("pipeline.toml");
    fs::write(&path, pipeline.to_toml_string()).map_err(|e| io_err(&path, e))?;
    println!("{}", path.display());
    Ok(())
}
