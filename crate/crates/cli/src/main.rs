use clap::{Parser, Subcommand};
use rgmp::checkpoint::{load_gmm, load_model, save_gmm, save_model};
use rgmp::gmm::{em_fit, refine, EmOptions, RefineMode};
use rgmp::gss::{
    simulate, ClientKind, Instruction, MockClient, Observation, RemoteClient, RuleSet,
    SceneManifest, SessionConfig, VlmClient,
};
use rgmp::harness::{evaluate_policy, generate_dataset, read_png, Dataset, SceneSpec};
use rgmp::model::{predict, ModelConfig, OptimizerKind, TrainConfig};
use rgmp::verification::{network_grad_check, wkv_check};
use rgmp::{Error, ErrorKind, Skill};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "rgmp",
    version,
    about = "Train, refine and evaluate the visuomotor policy"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic demonstration dataset.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Square image size in pixels.
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value = "SideGrasp")]
        skill: Skill,
    },
    /// Train a policy on a dataset and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 40)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        patch: usize,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        /// adam or sgd.
        #[arg(long, default_value = "adam", value_parser = parse_optimizer)]
        optimizer: OptimizerKind,
    },
    /// Fit the joint-space mixture to a dataset's labels.
    FitGmm {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 6)]
        k: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        ridge: f64,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
    },
    /// Evaluate a checkpoint and mixture on a dataset; prints metrics as JSON.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        gmm: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "nearest")]
        mode: RefineMode,
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
    },
    /// Predict and refine the joints for one PNG image.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        gmm: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value = "nearest")]
        mode: RefineMode,
    },
    /// Compare the recursive scan with the unrolled sums.
    WkvCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        patches: usize,
    },
    /// Select a skill for an instruction in a scene manifest.
    GssSim {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        instruction: String,
        #[arg(long, default_value = "mock")]
        client: ClientKind,
        /// Attempts per client query.
        #[arg(long, default_value_t = 3)]
        rounds: usize,
    },
    /// Finite-difference check of the whole-network gradient.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "adam" => Ok(OptimizerKind::Adam),
        "sgd" | "gd" => Ok(OptimizerKind::Sgd),
        _ => Err(format!("unknown optimizer {s:?}, expected adam or sgd")),
    }
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Validation => 1,
            ErrorKind::Io => 2,
            ErrorKind::Numerical => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Error::from(e).into()
    }
}

fn numerical(message: String) -> Failure {
    Failure { code: 3, message }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::GenData {
            n,
            seed,
            out,
            size,
            skill,
        } => {
            let spec = SceneSpec {
                width: size,
                height: size,
                seed,
                ..SceneSpec::default()
            };
            let ds = generate_dataset(n, &spec, skill)?;
            ds.save(&out)?;
            log::info!("wrote {n} demonstrations to {}", out.display());
        }
        Command::Train {
            data,
            epochs,
            lr,
            seed,
            out,
            patch,
            batch_size,
            optimizer,
        } => {
            let ds = Dataset::load(&data)?;
            let cfg = TrainConfig {
                epochs,
                learning_rate: lr,
                batch_size,
                seed,
                optimizer,
                model: ModelConfig {
                    image_height: ds.height,
                    image_width: ds.width,
                    patch,
                    ..ModelConfig::default()
                },
                ..TrainConfig::default()
            };
            let outcome = rgmp::train_policy(&ds, &cfg)?;
            save_model(&outcome.model, &out)?;
            let summary = serde_json::json!({
                "initial_loss": outcome.initial_loss,
                "final_loss": outcome.loss_trace.last(),
                "epochs": outcome.loss_trace.len(),
                "updates": outcome.updates,
            });
            println!("{}", serde_json::to_string(&summary)?);
        }
        Command::FitGmm {
            data,
            k,
            tol,
            seed,
            out,
            ridge,
            max_iter,
        } => {
            let ds = Dataset::load(&data)?;
            let fit = em_fit(
                &ds.labels(),
                k,
                &EmOptions {
                    seed,
                    ridge,
                    tol,
                    max_iter,
                },
            )?;
            save_gmm(&fit.params, &out)?;
            let summary = serde_json::json!({
                "iterations": fit.iterations,
                "converged": fit.converged,
                "log_likelihood": fit.trace.last(),
                "reseeds": fit.reseeds.len(),
            });
            println!("{}", serde_json::to_string(&summary)?);
        }
        Command::Eval {
            model,
            gmm,
            data,
            mode,
            tol,
        } => {
            let m = load_model(&model)?;
            let theta = load_gmm(&gmm)?;
            let ds = Dataset::load(&data)?;
            let metrics = evaluate_policy(&m, &theta, &ds, mode, tol)?;
            println!("{}", serde_json::to_string(&metrics)?);
        }
        Command::Infer {
            model,
            gmm,
            image,
            mode,
        } => {
            let m = load_model(&model)?;
            let theta = load_gmm(&gmm)?;
            let img = read_png(&image)?;
            let a = refine(&predict(&m, &img)?, &theta, mode)?;
            let text: Vec<String> = a.iter().map(|v| v.to_string()).collect();
            println!("{}", text.join(" "));
        }
        Command::WkvCheck { seed, patches } => {
            let r = wkv_check(seed, patches)?;
            println!("{}", serde_json::to_string(&r)?);
            if !r.passed {
                return Err(numerical(format!(
                    "scan differs from the unrolled sums by {:e} (tolerance {:e})",
                    r.max_relative_error, r.tolerance
                )));
            }
        }
        Command::GssSim {
            scene,
            instruction,
            client,
            rounds,
        } => {
            let manifest = SceneManifest::load(&scene)?;
            let mut obs = Observation {
                width: manifest.width,
                height: manifest.height,
                image: None,
                shape_label: None,
            };
            if let Some(rel) = &manifest.image {
                let path = scene
                    .parent()
                    .unwrap_or(std::path::Path::new("."))
                    .join(rel);
                obs = Observation::from_image(read_png(&path)?)?;
            }
            let session = SessionConfig { rounds, client };
            let client: Box<dyn VlmClient> = match client {
                ClientKind::Mock => Box::new(MockClient::new(manifest.clone())?),
                ClientKind::Remote => Box::new(RemoteClient::from_env()?),
            };
            let decision = simulate(
                &manifest,
                &obs,
                &Instruction::new(instruction)?,
                client.as_ref(),
                &session,
                &RuleSet::shipped(),
            )?;
            println!("{}", serde_json::to_string(&decision)?);
        }
        Command::GradCheck { seed } => {
            let r = network_grad_check(seed)?;
            for p in &r.report.parameters {
                println!(
                    "{:<48} {:>3} entries  max rel err {:.3e}",
                    p.name, p.entries_checked, p.max_relative_error
                );
            }
            for (group, err) in &r.groups {
                println!("group {group:<14} {err:.3e}");
            }
            if !r.passed {
                return Err(numerical(format!(
                    "gradient check failed: max relative error {:e} (tolerance {:e})",
                    r.report.max_relative_error(),
                    r.tolerance
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
