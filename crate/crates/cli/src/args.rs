use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands;
use crate::config::PipelineConfig;
use crate::CliError;

/// Multiscale 3D sparse features and voxel-wise vessel classification.
///
/// Every flag can also be set through an environment variable named
/// `VESSEL3D_<FLAG>` (e.g. `VESSEL3D_THREADS=4`). Flags override values
/// from `--config`. Log verbosity follows `VESSEL3D_LOG` (default `info`).
#[derive(Debug, Parser)]
#[command(name = "vessel3d", version)]
pub struct Cli {
    /// Seed for every stage, replacing the seeds in the config.
    #[arg(long, global = true, env = "VESSEL3D_SEED")]
    pub seed: Option<u64>,
    /// Worker threads; 0 picks one per core.
    #[arg(long, global = true, env = "VESSEL3D_THREADS", default_value_t = 0)]
    pub threads: usize,
    /// Pipeline config (JSON); any omitted section takes its defaults.
    #[arg(long, global = true, env = "VESSEL3D_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic volume with tubes and spheres plus annotations.
    Phantom {
        /// Phantom spec (JSON); the config's phantom section when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ann: PathBuf,
        /// Also write the tube ground truth as a uint8 volume.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Learn a patch dictionary from one or more volumes.
    TrainDict {
        #[arg(required = true)]
        volumes: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        atoms: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        patch_edge: Option<usize>,
        #[arg(long)]
        patches: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Pyramid levels patches are drawn from.
        #[arg(long)]
        scales: Option<usize>,
    },
    /// Compute feature rows for a volume.
    Featurize {
        volume: PathBuf,
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scales: Option<usize>,
        /// Only featurize the voxels annotated in this CSV.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Volume id used in annotations; the file stem by default.
        #[arg(long)]
        volume_id: Option<String>,
        #[arg(long)]
        max_row_len: Option<usize>,
    },
    /// Fit the logistic classifier, choosing l2 by cross validation.
    TrainClf {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cv_folds: Option<usize>,
        /// Fixed l2 strength; skips cross validation.
        #[arg(long)]
        l2: Option<f64>,
    },
    /// Write probability and segmentation volumes.
    Predict {
        volume: PathBuf,
        #[arg(long)]
        dict: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out_prob: PathBuf,
        #[arg(long)]
        out_seg: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Repeated random train/test splits.
    Evaluate {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        /// Take l2 from this model instead of cross validation.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        l2: Option<f64>,
    },
    /// Run every stage on a phantom from one config.
    Pipeline {
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn set<T>(target: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *target = v;
    }
}

/// Runs a parsed command inside a pool of `--threads` workers.
pub fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = load_config(&cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Phantom { spec, out, ann, truth } => {
            let mut spec = match spec {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| vessel3d::Error::io(&path, e))?;
                    serde_json::from_str(&text)
                        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
                }
                None => cfg.phantom,
            };
            set(&mut spec.seed, cli.seed);
            commands::phantom(&spec, &out, &ann, truth.as_deref())
        }
        Command::TrainDict { volumes, out, atoms, lambda, patch_edge, patches, batch_size, epochs, scales } => {
            let d = &mut cfg.dictionary;
            set(&mut d.atoms, atoms);
            set(&mut d.lambda, lambda);
            set(&mut d.patch_edge, patch_edge);
            set(&mut d.num_patches, patches);
            set(&mut d.batch_size, batch_size);
            set(&mut d.epochs, epochs);
            set(&mut cfg.pyramid.scales, scales);
            commands::train_dict(&volumes, &cfg.pyramid, &cfg.dictionary, &out).map(drop)
        }
        Command::Featurize { volume, dict, out, scales, labels, volume_id, max_row_len } => {
            set(&mut cfg.features.max_row_len, max_row_len);
            let scales = scales.or(cfg.features.scales);
            commands::featurize(
                &dict,
                &volume,
                scales,
                labels.as_deref(),
                volume_id.as_deref(),
                cfg.features.max_row_len,
                &out,
            )
            .map(drop)
        }
        Command::TrainClf { features, labels, out, cv_folds, l2 } => {
            set(&mut cfg.classifier.cv.folds, cv_folds);
            if l2.is_some() {
                cfg.classifier.l2 = l2;
            }
            commands::train_clf(&features, &labels, &cfg.classifier, &out).map(drop)
        }
        Command::Predict { volume, dict, model, out_prob, out_seg, threshold } => {
            set(&mut cfg.predict.threshold, threshold);
            commands::predict(&volume, &dict, &model, cfg.predict.threshold, &out_prob, &out_seg).map(drop)
        }
        Command::Evaluate { features, labels, report, train, test, trials, model, l2 } => {
            let e = &mut cfg.evaluation;
            set(&mut e.train_count, train);
            set(&mut e.test_count, test);
            set(&mut e.trials, trials);
            if l2.is_some() {
                cfg.classifier.l2 = l2;
            }
            commands::evaluate(&features, &labels, &cfg.evaluation, &cfg.classifier, model.as_deref(), &report)
                .map(drop)
        }
        Command::Pipeline { out_dir } => commands::pipeline(&cfg, &out_dir).map(drop),
    })
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
