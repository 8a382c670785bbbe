//! Command-line front end: dataset generation, training, evaluation,
//! inference, label-free adaptation and a gradient self-check.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Write a line to stdout, exiting quietly when the consumer closed the
/// pipe early (e.g. `hypercrowd eval | head`).
fn emit(line: &str) {
    use std::io::Write;
    if let Err(e) = writeln!(std::io::stdout(), "{line}") {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error writing to stdout: {e}");
        std::process::exit(1);
    }
}

use hypercrowd::body_model::Skeleton;
use hypercrowd::config::RunConfig;
use hypercrowd::numerics::gradcheck::grad_check;
use hypercrowd::synth::{self, Dataset};
use hypercrowd::trainer::{self, Model};
use hypercrowd::{losses, Error, Result};

#[derive(Parser)]
#[command(
    name = "hypercrowd",
    about = "Multi-person 3D pose and absolute position from crowded scenes"
)]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration value, e.g. --set train.steps=500.
    /// Repeatable; applied after the file in order.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic crowd dataset.
    Gen {
        /// Output dataset path (JSON lines).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a labeled dataset.
    Train {
        /// Labeled dataset to train on.
        #[arg(long)]
        data: PathBuf,
        /// Where to write the final checkpoint.
        #[arg(long)]
        out: PathBuf,
        /// Step log, one JSON record per optimizer step.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Loss curve CSV (no wall-clock columns).
        #[arg(long)]
        curve: Option<PathBuf>,
        /// Continue from an existing checkpoint instead of a fresh model.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint against a labeled dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Score the stored ground truth against itself (sanity check).
        #[arg(long)]
        gt_passthrough: bool,
    },
    /// Write model predictions into a dataset as pseudo ground truth.
    Infer {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adapt a trained model to a detections-only dataset.
    Adapt {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Adapted checkpoint destination.
        #[arg(long)]
        out: PathBuf,
        /// Optional pseudo-labeled dataset destination.
        #[arg(long)]
        pseudo: Option<PathBuf>,
        /// Optional JSON summary destination; printed to stdout otherwise.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare analytic gradients against finite differences on a small
    /// generated scene.
    Gradcheck {
        #[arg(long, default_value_t = 17)]
        seed: u64,
        /// Coordinates sampled per parameter tensor.
        #[arg(long, default_value_t = 3)]
        coords: usize,
        /// Largest acceptable relative error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn load_or_init_model(cfg: &RunConfig, resume: Option<&PathBuf>) -> Result<Model> {
    match resume {
        Some(path) => {
            let (model, meta) = Model::from_checkpoint(&fs::read_to_string(path)?)?;
            log::info!(
                "resumed from {} ({} prior steps)",
                path.display(),
                meta.get("trained_steps").and_then(|v| v.as_u64()).unwrap_or(0)
            );
            Ok(model)
        }
        None => Model::new(cfg.model.clone(), cfg.train.seed),
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.set)?;
    let skel = Skeleton::default_body();
    match cli.cmd {
        Cmd::Gen { out } => {
            let cam = cfg.camera.intrinsics();
            let mut data = synth::generate_dataset(
                &cfg.scene,
                &cam,
                cfg.model.feature_dim,
                cfg.generate.encoder_seed,
                &skel,
                cfg.generate.count,
                cfg.generate.seed,
            )?;
            if cfg.generate.strip_gt {
                data.strip_gt();
            }
            data.save(&out)?;
            emit(&format!(
                "wrote {} scenes ({} persons) to {}",
                data.scenes.len(),
                data.scenes.iter().map(|s| s.persons.len()).sum::<usize>(),
                out.display()
            ));
        }
        Cmd::Train {
            data,
            out,
            log,
            curve,
            resume,
        } => {
            let dataset = Dataset::load(&data)?;
            let mut model = load_or_init_model(&cfg, resume.as_ref())?;
            let arts = trainer::train(&mut model, &dataset, &cfg.train)?;
            fs::write(&out, &arts.checkpoint_json)?;
            if let Some(p) = log {
                fs::write(p, &arts.log_jsonl)?;
            }
            if let Some(p) = curve {
                fs::write(p, &arts.curve_csv)?;
            }
            if let Some(reason) = arts.aborted {
                eprintln!(
                    "training aborted after {} steps: {reason}; last good checkpoint kept",
                    arts.steps_run
                );
                return Err(Error::Numerics(reason));
            }
            emit(&format!(
                "trained {} steps, final loss {:.6}, checkpoint {}",
                arts.steps_run,
                arts.final_loss,
                out.display()
            ));
        }
        Cmd::Eval {
            data,
            checkpoint,
            out,
            gt_passthrough,
        } => {
            let dataset = Dataset::load(&data)?;
            let report = if gt_passthrough {
                let preds = dataset
                    .scenes
                    .iter()
                    .map(|s| {
                        s.persons
                            .iter()
                            .map(|p| {
                                p.gt.as_ref()
                                    .map(|gt| gt.joints3d.clone())
                                    .ok_or_else(|| {
                                        Error::Data(
                                            "gt passthrough needs labeled scenes".to_string(),
                                        )
                                    })
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                trainer::evaluate_predictions(&preds, &dataset, &skel, &cfg.metrics)?
            } else {
                let path = checkpoint.ok_or_else(|| {
                    Error::Config("eval needs --checkpoint unless --gt-passthrough".to_string())
                })?;
                let (model, _) = Model::from_checkpoint(&fs::read_to_string(path)?)?;
                trainer::evaluate(&model, &dataset, &cfg.metrics)?
            };
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => fs::write(p, json)?,
                None => emit(&json),
            }
        }
        Cmd::Infer {
            data,
            checkpoint,
            out,
        } => {
            let dataset = Dataset::load(&data)?;
            let (model, _) = Model::from_checkpoint(&fs::read_to_string(checkpoint)?)?;
            let labeled = trainer::predict_dataset(&model, &dataset)?;
            labeled.save(&out)?;
            emit(&format!(
                "labeled {} scenes with predictions at {}",
                labeled.scenes.len(),
                out.display()
            ));
        }
        Cmd::Adapt {
            data,
            checkpoint,
            out,
            pseudo,
            report,
        } => {
            let dataset = Dataset::load(&data)?;
            let (model, _) = Model::from_checkpoint(&fs::read_to_string(checkpoint)?)?;
            let outcome = trainer::adapt_to_2d(&model, &dataset, &cfg.adapt, &cfg.train.weights)?;
            fs::write(&out, outcome.model.to_checkpoint(serde_json::json!({
                "adapted_iters": outcome.iters_run,
            })))?;
            if let Some(p) = pseudo {
                outcome.pseudo_labeled.save(&p)?;
            }
            let summary = serde_json::json!({
                "before_px": outcome.before_px,
                "after_px": outcome.after_px,
                "iters_run": outcome.iters_run,
                "diverged": outcome.diverged,
            });
            let json = serde_json::to_string_pretty(&summary)?;
            match report {
                Some(p) => fs::write(p, json)?,
                None => emit(&json),
            }
        }
        Cmd::Gradcheck {
            seed,
            coords,
            tolerance,
        } => {
            let cam = cfg.camera.intrinsics();
            let scene_cfg = hypercrowd::synth::SceneConfig {
                persons: 3,
                groups: 1,
                occlusion_rate: 0.0,
                ..cfg.scene.clone()
            };
            let data = synth::generate_dataset(
                &scene_cfg,
                &cam,
                cfg.model.feature_dim,
                cfg.generate.encoder_seed,
                &skel,
                1,
                seed,
            )?;
            let scene = &data.scenes[0];
            let mut model = Model::new(cfg.model.clone(), seed)?;
            let weights = cfg.train.weights;
            let joints2d: Vec<Vec<[f64; 2]>> =
                scene.persons.iter().map(|p| p.joints2d.clone()).collect();
            let vis: Vec<Vec<bool>> = scene.persons.iter().map(|p| p.vis.clone()).collect();
            let persons = scene.persons.clone();
            let net = model.net.clone();
            let skel2 = skel.clone();
            let report = grad_check(
                &mut model.store,
                |tape, bound| {
                    let model_view = Model {
                        store: hypercrowd::numerics::params::ParamStore::new(),
                        net: net.clone(),
                        skel: skel2.clone(),
                    };
                    let vars =
                        trainer::forward_scene(&model_view, tape, bound, &persons, &cam)?;
                    let inputs = losses::LossInputs {
                        joints2d: &joints2d,
                        vis: &vis,
                        cam: &cam,
                        gt_params: None,
                        gt_joints_rel: None,
                        use_crowd: true,
                    };
                    let (total, _) =
                        losses::total_loss(tape, &vars, &inputs, &weights, &skel2)?;
                    Ok(total)
                },
                1e-5,
                coords,
                seed,
            )?;
            emit(&format!(
                "max relative error {:.3e} over {} coordinates (worst: {})",
                report.max_rel_error, report.checked_coords, report.worst
            ));
            if report.max_rel_error > tolerance {
                return Err(Error::Numerics(format!(
                    "gradient check failed: {:.3e} > {tolerance:.3e}",
                    report.max_rel_error
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
