//! Command-line experiment runner.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use crate::checkpoint;
use crate::config::{DataSource, ExperimentConfig};
use crate::data::{load_dir, save_dir, split, synth_blobs, Dataset};
use crate::ensemble::{evaluate_models, load_members, member_reports, save_ensemble, train_ensemble};
use crate::gradsuite::run_suite;
use crate::metrics::MetricReport;
use crate::model::{ActivationAssignment, Model};
use crate::train::train_model;

#[derive(Debug, Parser)]
#[command(name = "microseg", version, about = "Activation-pool segmentation ensembles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (`key = value` lines); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; outputs do not depend on this.
    #[arg(long, global = true)]
    pub parallel: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset as PNM files under <out>/images and <out>/masks.
    Synth,
    /// Train one model and evaluate it on the held-out split.
    Train,
    /// Evaluate a checkpoint (or a saved ensemble directory) on a test set.
    Eval {
        /// Checkpoint file, or a directory holding an ensemble manifest.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Test images directory; requires --masks.
        #[arg(long, requires = "masks")]
        images: Option<PathBuf>,
        /// Test masks directory; requires --images.
        #[arg(long, requires = "images")]
        masks: Option<PathBuf>,
    },
    /// Train and evaluate an ensemble.
    Ensemble,
    /// Run the full gradient-check suite.
    Gradcheck,
}

/// Parse `args` (including the program name) and run.
pub fn main_with_args<I, T>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run(Cli::try_parse_from(args)?)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    let pool = match cli.parallel {
        Some(0) => bail!("--parallel must be >= 1"),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?,
        None => rayon::ThreadPoolBuilder::new().build()?,
    };
    pool.install(|| match cli.command {
        Command::Synth => synth(&cfg),
        Command::Train => train(&cfg),
        Command::Eval {
            checkpoint,
            images,
            masks,
        } => {
            if let Some(c) = checkpoint {
                cfg.checkpoint = Some(c);
            }
            let test_dirs = images.zip(masks);
            eval(&cfg, test_dirs)
        }
        Command::Ensemble => ensemble(&cfg),
        Command::Gradcheck => gradcheck(&cfg),
    })
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Create the output directory and record the resolved config in it.
fn prepare_out(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    write_file(&cfg.out.join("config.resolved"), &cfg.resolved())
}

fn results_csv(rows: &[(String, MetricReport)]) -> String {
    let mut s = format!("name,{}\n", MetricReport::CSV_HEADER);
    for (name, r) in rows {
        let _ = writeln!(s, "{name},{}", r.csv_row());
    }
    s
}

fn load_dataset(cfg: &ExperimentConfig) -> anyhow::Result<Dataset> {
    Ok(match &cfg.source {
        DataSource::Synth { count, size } => synth_blobs(*count, *size, cfg.synth_seed())?,
        DataSource::Dir { images, masks } => load_dir(images, masks)?,
    })
}

fn train_test(cfg: &ExperimentConfig) -> anyhow::Result<(Dataset, Dataset)> {
    let ds = load_dataset(cfg)?;
    let (tr, te) = cfg.split_for(ds.len());
    let (train, test) = split(&ds, tr, te, cfg.split_seed())?;
    if train.is_empty() || test.is_empty() {
        bail!("split {tr}/{te} leaves an empty training or test set");
    }
    Ok((train, test))
}

fn synth(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let DataSource::Synth { count, size } = cfg.source else {
        bail!("synth needs data.source = synth");
    };
    prepare_out(cfg)?;
    let ds = synth_blobs(count, size, cfg.synth_seed())?;
    save_dir(&ds, &cfg.out)?;
    println!("wrote {count} samples to {}", cfg.out.display());
    Ok(())
}

fn train(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let (train_set, test_set) = train_test(cfg)?;
    prepare_out(cfg)?;
    let asg = ActivationAssignment::uniform(cfg.activation, cfg.network.site_count());
    let mut model = Model::<f32>::build(&cfg.network, &asg, cfg.init_seed())?;
    let history = train_model(&mut model, &train_set, &cfg.train_config())?;
    checkpoint::save(&model, &cfg.out.join("model.ckpt"))?;

    let mut loss_csv = String::from("epoch,mean_loss\n");
    for (e, l) in history.iter().enumerate() {
        let _ = writeln!(loss_csv, "{},{l:.8}", e + 1);
    }
    write_file(&cfg.out.join("loss_history.csv"), &loss_csv)?;

    let report = evaluate_models(std::slice::from_ref(&model), &test_set)?;
    let csv = results_csv(&[(format!("microseg_{}", cfg.activation), report)]);
    write_file(&cfg.out.join("results.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

/// Row name for a set of loaded models: the manifest mode for an ensemble
/// directory, the activation for a uniform single model.
fn eval_name(path: &Path, models: &[Model<f32>]) -> String {
    if let Ok(text) = std::fs::read_to_string(path.join("manifest.txt")) {
        if let Some(mode) = text.lines().find_map(|l| l.strip_prefix("mode ")) {
            return format!("microseg_{}", mode.trim());
        }
    }
    let kinds = models[0].assignment().kinds();
    if models.len() == 1 && kinds.iter().all(|&k| k == kinds[0]) {
        format!("microseg_{}", kinds[0])
    } else {
        "microseg_mixed".to_string()
    }
}

fn eval(cfg: &ExperimentConfig, test_dirs: Option<(PathBuf, PathBuf)>) -> anyhow::Result<()> {
    let Some(ckpt) = &cfg.checkpoint else {
        bail!("eval needs --checkpoint or eval.checkpoint");
    };
    let models = if ckpt.is_dir() {
        load_members(ckpt)?
    } else {
        vec![checkpoint::load(ckpt)?]
    };
    if models.is_empty() {
        bail!("no models listed in {}", ckpt.display());
    }
    let test = match (test_dirs, &cfg.source) {
        (Some((images, masks)), _) => load_dir(&images, &masks)?,
        (None, DataSource::Dir { images, masks }) => load_dir(images, masks)?,
        (None, DataSource::Synth { .. }) => train_test(cfg)?.1,
    };
    prepare_out(cfg)?;
    let report = evaluate_models(&models, &test)?;
    let csv = results_csv(&[(eval_name(ckpt, &models), report)]);
    write_file(&cfg.out.join("results.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn ensemble(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let (train_set, test_set) = train_test(cfg)?;
    prepare_out(cfg)?;
    let spec = cfg.ensemble_spec();
    let ens = train_ensemble(&spec, &train_set)?;
    save_ensemble(&ens, &cfg.out.join("members"))?;

    let mut loss_csv = String::from("member,epoch,mean_loss\n");
    for (m, history) in ens.histories.iter().enumerate() {
        for (e, l) in history.iter().enumerate() {
            let _ = writeln!(loss_csv, "{m},{},{l:.8}", e + 1);
        }
    }
    write_file(&cfg.out.join("loss_history.csv"), &loss_csv)?;

    let members: Vec<(String, MetricReport)> = member_reports(&ens, &test_set)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| (format!("member_{i:02}"), r))
        .collect();
    write_file(&cfg.out.join("members.csv"), &results_csv(&members))?;

    let fused = evaluate_models(&ens.members, &test_set)?;
    let csv = results_csv(&[(format!("microseg_{}", spec.mode), fused)]);
    write_file(&cfg.out.join("results.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn gradcheck(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    prepare_out(cfg)?;
    let entries = run_suite(cfg.gradcheck_seeds);
    let mut report = String::new();
    for e in &entries {
        let _ = writeln!(report, "{e}");
    }
    let failed = entries.iter().filter(|e| !e.passed()).count();
    let _ = writeln!(report, "{}", if failed == 0 { "PASS" } else { "FAIL" });
    write_file(&cfg.out.join("gradcheck.txt"), &report)?;
    print!("{report}");
    if failed > 0 {
        bail!("gradient check failed for {failed} of {} entries", entries.len());
    }
    Ok(())
}
