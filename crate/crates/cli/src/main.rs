use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use idv_core::config::RunConfig;
use idv_core::data::{encode_pgm, generate_toy_dataset, load_manifest, Split, ToyConfig};
use idv_core::diagnostics::{gradient_suite, SuiteOptions};
use idv_core::eval::{
    evaluate, export_embeddings, extract_descriptors, import_embeddings, l2_normalize, EvalOptions, Protocol,
};
use idv_core::fsutil::write_atomic;
use idv_core::trainer::{load_checkpoint, train, TrainData, TrainOptions, TrainState};
use idv_core::{Error, Result};

#[derive(Parser)]
#[command(name = "idv", version, about = "Siamese identification+verification re-id toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic multi-camera dataset and its manifest.
    MakeToy {
        #[arg(long)]
        out: PathBuf,
        /// Training identities (the same number of disjoint test identities is generated).
        #[arg(long, default_value_t = 8)]
        ids: usize,
        /// Test identities; defaults to `--ids`.
        #[arg(long)]
        test_ids: Option<usize>,
        #[arg(long, default_value_t = 6)]
        per_cam: usize,
        #[arg(long, default_value_t = 2)]
        cams: usize,
        #[arg(long, default_value_t = 2.0)]
        sigma: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        distractors: usize,
        /// Side length of the rendered images in pixels.
        #[arg(long, default_value_t = 36)]
        size: usize,
    },
    /// Train from a `key = value` config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint written by a run with the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Extract L2-normalised descriptors for one manifest split.
    Extract {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_parser = ["query", "gallery"])]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score query descriptors against gallery descriptors.
    Evaluate {
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        gallery: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "single-query", value_parser = [
            "single-query", "single-shot", "multi-shot", "camera-matrix", "distractor-sweep",
        ])]
        protocol: String,
        /// Single-shot repetitions.
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Single-shot sampling seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Total gallery sizes for the distractor sweep.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        sizes: Vec<usize>,
        /// CMC length (default: full gallery).
        #[arg(long)]
        max_rank: Option<usize>,
        /// Directory for `report.txt` and `per_query_ap.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every op and the full objective.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
    /// Channel-summed activation of a backbone stage as a PGM image.
    ActivationMap {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Backbone stage, counted from 1.
        #[arg(long)]
        stage: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn state_from(path: &Path) -> Result<TrainState> {
    TrainState::from_checkpoint(&load_checkpoint(path)?)
}

/// Returns `Ok(false)` when the command ran but its check failed.
fn run(command: Command) -> Result<bool> {
    match command {
        Command::MakeToy { out, ids, test_ids, per_cam, cams, sigma, seed, distractors, size } => {
            let cfg = ToyConfig {
                num_ids: ids,
                num_test_ids: test_ids.unwrap_or(ids),
                images_per_cam: per_cam,
                num_cams: cams,
                noise_sigma: sigma,
                image_size: size,
                num_distractors: distractors,
                seed,
            };
            let manifest = generate_toy_dataset(&cfg, &out)?;
            println!("seed = {seed}");
            println!("{}", manifest.display());
        }
        Command::Train { config, resume } => {
            let text = std::fs::read_to_string(&config).map_err(|e| Error::io(&config, e))?;
            let run = RunConfig::parse(&text)?;
            let manifest_path = run
                .manifest
                .clone()
                .ok_or_else(|| Error::Config("`manifest` must be set to train".into()))?;
            let manifest = load_manifest(&manifest_path)?;
            let mut state = match &resume {
                None => TrainState::new(&run, &manifest)?,
                Some(ckpt) => {
                    let state = state_from(ckpt)?;
                    let mut expected = run.clone();
                    expected.model.num_identities = manifest.num_identities();
                    if state.run.to_text() != expected.to_text() {
                        return Err(Error::Checkpoint(format!(
                            "{} was written with a different config",
                            ckpt.display()
                        )));
                    }
                    log::info!("resuming at epoch {}", state.epoch);
                    state
                }
            };
            print!("{}", state.run.to_text());
            let data = TrainData::load(&manifest, &state.pre)?;
            let opts = TrainOptions { out_dir: state.run.out_dir.clone() };
            train(&mut state, &data, &opts)?;
            if let Some(last) = state.history.last() {
                println!("final: {}", last.csv_row());
            }
        }
        Command::Extract { ckpt, manifest, split, out } => {
            let state = state_from(&ckpt)?;
            let manifest = load_manifest(&manifest)?;
            let split: Split = split.parse().map_err(Error::InvalidArgument)?;
            let samples = manifest.split(split);
            if samples.is_empty() {
                return Err(Error::InvalidArgument(format!("manifest has no {split} samples")));
            }
            let set = extract_descriptors(&state.model, &manifest, &samples, &state.pre)?;
            export_embeddings(&l2_normalize(&set)?, &out)?;
            println!("{} descriptors of dim {} -> {}", set.len(), set.dim, out.display());
        }
        Command::Evaluate { query, gallery, manifest, protocol, trials, seed, sizes, max_rank, out } => {
            let manifest = load_manifest(&manifest)?;
            let q = import_embeddings(&query, &manifest.split(Split::Query))?;
            let g = import_embeddings(&gallery, &manifest.split(Split::Gallery))?;
            let opts = EvalOptions { max_rank, trials, seed, sizes, ..Default::default() };
            let protocol: Protocol = protocol.parse()?;
            let report = evaluate(&q, &g, protocol, &opts)?;
            let text = report.to_text();
            print!("{text}");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                write_atomic(&dir.join("report.txt"), text.as_bytes())?;
                write_atomic(&dir.join("per_query_ap.csv"), report.per_query_csv(&q).as_bytes())?;
            }
        }
        Command::GradCheck { seed, instances } => {
            println!("seed = {seed}");
            let report = gradient_suite(&SuiteOptions { seed, instances, ..Default::default() })?;
            print!("{report}");
            return Ok(report.passed());
        }
        Command::ActivationMap { ckpt, image, stage, out } => {
            if stage == 0 {
                return Err(Error::InvalidArgument("stages are counted from 1".into()));
            }
            let state = state_from(&ckpt)?;
            let x = state.pre.eval_input(&image)?;
            let map = state.model.activation_sum(&x, stage - 1)?;
            write_atomic(&out, &encode_pgm(&map)?)?;
            println!("{}x{} map -> {}", map.shape()[0], map.shape()[1], out.display());
        }
    }
    Ok(true)
}
