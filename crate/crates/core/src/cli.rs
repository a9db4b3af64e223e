//! The `ulu-kit` command line.
//!
//! Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::activations::{ActivationKind, ActivationSpec};
use crate::analysis::{self, LandscapeNet, LandscapeSpec, SweepSpec};
use crate::data::{self, Dataset};
use crate::harness::{self, fmt_sig, TrainConfig};
use crate::models::{Arch, ModelConfig};
use crate::verify::{self, Tolerance};

#[derive(Debug, Parser, Serialize)]
#[command(name = "ulu-kit", version, about = "ULU/AULU activations: checks, training and analysis runs")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
pub struct GlobalArgs {
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Directory holding the four MNIST IDX files.
    #[arg(long, global = true, env = "ULU_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    /// Use synthetic blobs instead of MNIST.
    #[arg(long, global = true)]
    pub synthetic: bool,
    #[arg(long, global = true, default_value_t = 2000)]
    pub train_n: usize,
    #[arg(long, global = true, default_value_t = 1000)]
    pub test_n: usize,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Compare analytic derivatives with central differences.
    CheckGradients {
        #[arg(long, default_value_t = 2001)]
        grid_points: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Relative tolerance for the full-model checks.
        #[arg(long, default_value_t = 1e-5)]
        model_tol: f64,
    },
    /// Train one model and write run.json, curves.csv, betas.csv.
    Train(TrainArgs),
    /// ULU accuracy over an (alpha1, alpha2) grid.
    Sweep {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Output landscapes of one random deep network under several activations.
    Landscape {
        #[arg(long = "activation")]
        activations: Vec<ActivationSpec>,
        #[arg(long, default_value_t = 6)]
        layers: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 256)]
        resolution: usize,
        #[arg(long, default_value_t = -5.0, allow_negative_numbers = true)]
        lo: f64,
        #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
        hi: f64,
    },
    /// Mean and spread of test accuracy over repeated runs per activation.
    Compare {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Train AULU on the CNN and the attention model and report learned LIB.
    LibReport(TrainArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, default_value = "cnn")]
    pub model: Arch,
    /// Canonical text form, e.g. `ulu(0.3,0.8)`, `aulu`, `relu`. Only
    /// `compare` accepts more than one.
    #[arg(long = "activation")]
    pub activations: Vec<ActivationSpec>,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 5e-5)]
    pub weight_decay: f64,
    /// MLP hidden widths.
    #[arg(long, value_delimiter = ',', default_value = "32")]
    pub hidden: Vec<usize>,
    /// One beta pair for the whole model.
    #[arg(long)]
    pub share_betas: bool,
    #[arg(long)]
    pub freeze_betas: bool,
}

impl TrainArgs {
    fn config(&self, seed: u64, default_act: ActivationSpec, ds: &Dataset) -> Result<TrainConfig> {
        let activation = match self.activations.as_slice() {
            [] => default_act,
            [one] => one.clone(),
            _ => bail!("this command takes a single --activation"),
        };
        let (h, w) = ds.image_shape();
        let mut model = ModelConfig::new(self.model, activation).with_input(h, w, ds.num_classes());
        model.hidden_sizes = self.hidden.clone();
        model.share_betas = self.share_betas;
        model.freeze_betas = self.freeze_betas;
        Ok(TrainConfig {
            model,
            epochs: self.epochs,
            batch_size: self.batch_size,
            base_lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            seed,
        })
    }
}

fn default_activation() -> ActivationSpec {
    ActivationSpec::ulu(0.3, 0.8).expect("valid alphas")
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn load_data(g: &GlobalArgs) -> Result<(Dataset, Dataset)> {
    if g.synthetic {
        return Ok(data::synthetic_subset(g.train_n, g.test_n, g.seed)?);
    }
    let Some(dir) = &g.data_dir else {
        bail!("no dataset: pass --data-dir (or set ULU_DATA_DIR) or use --synthetic");
    };
    if !data::has_mnist(dir) {
        bail!("{} does not contain the MNIST IDX files", dir.display());
    }
    Ok(data::load_mnist_subset(dir, g.train_n, g.test_n, g.seed)?)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    std::fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn file_stem(spec: &ActivationSpec) -> String {
    let s: String = spec
        .to_string()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
        .collect();
    s.trim_end_matches('_').to_string()
}

/// `Ok(false)` means the command ran but a check failed.
fn execute(cli: &Cli) -> Result<bool> {
    let g = &cli.global;
    let out = &g.out_dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("config.json"), cli)?;

    match &cli.command {
        Command::CheckGradients {
            grid_points,
            tol,
            model_tol,
        } => {
            let mut rows = verify::check_activation_gradients(*grid_points, Tolerance::relative(*tol));
            rows.extend(verify::check_model_gradients(Tolerance::relative(*model_tol), g.seed));
            println!("{:<34} {:>6} {:>5} {:>5} {:>12}  status", "check", "points", "skip", "fail", "max_abs_err");
            for r in &rows {
                println!(
                    "{:<34} {:>6} {:>5} {:>5} {:>12.3e}  {}",
                    r.name,
                    r.points,
                    r.skipped,
                    r.failures,
                    r.max_abs_err,
                    if r.passed() { "pass" } else { "FAIL" }
                );
            }
            write_json(&out.join("gradient_check.json"), &rows)?;
            let ok = rows.iter().all(|r| r.passed());
            if !ok {
                eprintln!("gradient check failed");
            }
            Ok(ok)
        }
        Command::Train(args) => {
            let (train, test) = load_data(g)?;
            let cfg = args.config(g.seed, default_activation(), &train)?;
            let (record, store) = harness::train(&cfg, &train, &test)?;
            record.write_to_dir(out)?;
            eprintln!("trained in {:.1} s", record.wall_seconds);
            let params = out.join("params.bin");
            let f = File::create(&params).with_context(|| format!("writing {}", params.display()))?;
            store.write_to(BufWriter::new(f))?;
            println!(
                "{} {}: final test accuracy {}{}",
                cfg.model.arch,
                cfg.model.activation,
                fmt_sig(record.final_test_acc),
                if record.diverged { " (diverged)" } else { "" }
            );
            Ok(true)
        }
        Command::Sweep { train: args, alphas, jobs } => {
            let (train, test) = load_data(g)?;
            if !args.activations.is_empty() {
                bail!("sweep sets the activation per cell; drop --activation");
            }
            let base = args.config(g.seed, default_activation(), &train)?;
            let spec = SweepSpec {
                alpha_values: alphas.clone().unwrap_or_else(|| analysis::DEFAULT_ALPHAS.to_vec()),
                base,
                parallelism: *jobs,
            };
            let result = analysis::run_sweep(&spec, &train, &test)?;
            let csv = result.to_csv();
            write_text(&out.join("sweep.csv"), &csv)?;
            print!("{csv}");
            Ok(true)
        }
        Command::Landscape {
            activations,
            layers,
            width,
            resolution,
            lo,
            hi,
        } => {
            let acts = if activations.is_empty() {
                vec![ActivationSpec::plain(ActivationKind::Relu), default_activation()]
            } else {
                activations.clone()
            };
            let net = LandscapeNet::random((*layers).max(1), (*width).max(1), g.seed);
            let mut scores = String::from("activation,smoothness,weight_hash\n");
            for act in acts {
                let spec = LandscapeSpec {
                    layers: *layers,
                    width: *width,
                    activation: act.clone(),
                    grid_lo: *lo,
                    grid_hi: *hi,
                    resolution: *resolution,
                    seed: g.seed,
                };
                let m = analysis::landscape_with(&spec, &net)?;
                analysis::write_landscape(out, &file_stem(&act), &m)?;
                let score = if m.rows >= 3 {
                    fmt_sig(analysis::smoothness_score(&m)?)
                } else {
                    String::new()
                };
                scores.push_str(&format!("\"{act}\",{score},{:016x}\n", net.weight_hash()));
            }
            write_text(&out.join("landscape_scores.csv"), &scores)?;
            print!("{scores}");
            Ok(true)
        }
        Command::Compare {
            train: args,
            repeats,
            jobs,
        } => {
            let (train, test) = load_data(g)?;
            let acts = if args.activations.is_empty() {
                vec![default_activation(), ActivationSpec::plain(ActivationKind::Relu)]
            } else {
                args.activations.clone()
            };
            let single = TrainArgs {
                activations: Vec::new(),
                ..args.clone()
            };
            let cfg = single.config(g.seed, default_activation(), &train)?;
            let rows = analysis::compare_table(&acts, &cfg, *repeats, *jobs, &train, &test)?;
            let csv = analysis::compare_csv(&rows);
            write_text(&out.join("compare.csv"), &csv)?;
            print!("{csv}");
            Ok(true)
        }
        Command::LibReport(args) => {
            let (train, test) = load_data(g)?;
            let cfg = args.config(g.seed, ActivationSpec::plain(ActivationKind::Aulu), &train)?;
            let report = analysis::lib_report(&cfg, &train, &test)?;
            write_json(&out.join("lib_report.json"), &report)?;
            println!("{}", report.observation);
            Ok(true)
        }
    }
}
