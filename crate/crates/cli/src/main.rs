use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use uwmmse::experiment::{
    configure_threads_from_env, evaluate, reproduce_figure, write_figure_csv, BudgetSchedule, ExperimentRow,
    ExperimentSpec, Method, MethodKind, StepSizeArtifact,
};
use uwmmse::model::SystemConfig;
use uwmmse::train::{extend_pgd_progressive, train, write_loss_csv, TrainConfig};
use uwmmse::unfolded::UnfoldConfig;

/// Unfolded WMMSE beamforming: train step sizes, evaluate, reproduce figures.
#[derive(Parser)]
#[command(name = "uwmmse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the step sizes of an unfolded network.
    Train {
        #[arg(long)]
        snr: f64,
        #[arg(long, default_value_t = 1)]
        layers: usize,
        #[arg(long, default_value_t = 4)]
        pgd_steps: usize,
        /// Share one step size across the PGD steps of each layer.
        #[arg(long)]
        tied: bool,
        /// Training channels (rounded up to whole batches).
        #[arg(long, default_value_t = 2_000_000)]
        budget: u64,
        #[arg(long, default_value_t = 100)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long)]
        grad_clip: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the per-batch loss as CSV.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Grow a trained network one PGD step at a time, retraining after each.
    Extend {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        target_pgd_steps: usize,
        /// Training channels per added step.
        #[arg(long, default_value_t = 2_000_000)]
        budget: u64,
        #[arg(long, default_value_t = 100)]
        batch_size: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Monte Carlo WSR of one method.
    Eval {
        #[arg(long)]
        method: String,
        #[arg(long)]
        snr: f64,
        /// Iterations for `wmmse_truncated`; checked against the file for unfolded methods.
        #[arg(long)]
        layers: Option<usize>,
        /// Trained step sizes, required for the unfolded methods.
        #[arg(long)]
        steps: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 1234)]
        seed: u64,
    },
    /// Regenerate the data of figure 2, 3, 4 or 5 as CSV.
    Reproduce {
        #[arg(long)]
        figure: u32,
        /// Fraction of the full training and evaluation budget.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 1234)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment described by a `key = value` file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the file's `output` key.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the numerical oracle suites.
    Selftest,
}

fn batches(budget: u64, batch_size: usize) -> anyhow::Result<usize> {
    if batch_size == 0 {
        bail!(uwmmse::Error::InvalidConfig("batch_size must be positive".into()));
    }
    Ok(budget.div_ceil(batch_size as u64) as usize)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_history(path: Option<&Path>, history: &[f64]) -> anyhow::Result<()> {
    if let Some(p) = path {
        let mut w = create(p)?;
        write_loss_csv(&mut w, history)?;
        w.flush()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads_from_env()?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Train {
            snr,
            layers,
            pgd_steps,
            tied,
            budget,
            batch_size,
            lr,
            grad_clip,
            seed,
            out: path,
            loss_csv,
        } => {
            let cfg = TrainConfig {
                snr_db: snr,
                unfold: UnfoldConfig::new(layers, pgd_steps)?.tied(tied),
                batch_size,
                num_batches: batches(budget, batch_size)?,
                learning_rate: lr,
                grad_clip,
                seed,
                ..TrainConfig::default()
            };
            let result = train(&cfg)?;
            let art = StepSizeArtifact {
                steps: result.steps,
                snr_db: snr,
                seed,
                training_samples: (cfg.num_batches * batch_size) as u64,
                tied,
            };
            art.save(&path)?;
            write_history(loss_csv.as_deref(), &result.loss_history)?;
            let last = result.loss_history.last().copied().unwrap_or(f64::NAN);
            writeln!(out, "trained L={layers} K={pgd_steps} batches={} final_loss={last:.6}", cfg.num_batches)?;
        }
        Command::Extend {
            input,
            target_pgd_steps,
            budget,
            batch_size,
            out: path,
            loss_csv,
        } => {
            let base = StepSizeArtifact::load(&input)?;
            let cfg = TrainConfig {
                snr_db: base.snr_db,
                unfold: base.unfold_config(),
                batch_size,
                num_batches: batches(budget, batch_size)?,
                seed: base.seed,
                ..TrainConfig::default()
            };
            let result = extend_pgd_progressive(&base.steps, target_pgd_steps, &cfg)?;
            let added = (target_pgd_steps - base.steps.steps()) as u64;
            let art = StepSizeArtifact {
                steps: result.steps,
                training_samples: base.training_samples + added * (cfg.num_batches * batch_size) as u64,
                ..base
            };
            art.save(&path)?;
            write_history(loss_csv.as_deref(), &result.loss_history)?;
            writeln!(out, "extended to K={target_pgd_steps}")?;
        }
        Command::Eval {
            method,
            snr,
            layers,
            steps,
            samples,
            seed,
        } => {
            let kind: MethodKind = method.parse()?;
            let method = match kind {
                MethodKind::WmmseConvergence => Method::WmmseConvergence,
                MethodKind::WmmseTruncated => Method::WmmseTruncated {
                    iterations: layers.unwrap_or(1),
                },
                MethodKind::Unfolded | MethodKind::UnfoldedTied => {
                    let Some(path) = steps else {
                        bail!(uwmmse::Error::InvalidConfig(format!("method {kind} needs --steps")));
                    };
                    let art = StepSizeArtifact::load(&path)?;
                    let mut unfold = art.unfold_config();
                    if let Some(l) = layers {
                        art.steps.check_shape(&UnfoldConfig::new(l, unfold.pgd_steps)?)?;
                    }
                    unfold.tie_within_layer = kind == MethodKind::UnfoldedTied;
                    Method::Unfolded { steps: art.steps, unfold }
                }
            };
            let sys = SystemConfig::from_snr_db(4, 4, snr)?;
            let est = evaluate(&method, &sys, samples, seed)?;
            writeln!(out, "method,snr_db,mean,stderr,samples")?;
            writeln!(out, "{kind},{snr},{:.9e},{:.9e},{}", est.mean, est.stderr, est.samples)?;
        }
        Command::Reproduce {
            figure,
            scale,
            seed,
            out: path,
        } => {
            let schedule = BudgetSchedule::new(scale)?;
            let rows = reproduce_figure(figure, schedule, seed, &mut |msg| eprintln!("{msg}"))?;
            let mut w = create(&path)?;
            write_figure_csv(&mut w, &rows)?;
            w.flush()?;
            writeln!(out, "wrote {} rows to {}", rows.len(), path.display())?;
        }
        Command::Run { config, out: path } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("cannot read {}", config.display()))?;
            let spec = ExperimentSpec::parse(&text)?;
            let rows = spec.run()?;
            match path.or(spec.output) {
                Some(p) => {
                    let mut w = create(&p)?;
                    ExperimentRow::write_csv(&mut w, &rows)?;
                    w.flush()?;
                }
                None => ExperimentRow::write_csv(&mut out, &rows)?,
            }
        }
        Command::Selftest => {
            let reports = uwmmse::selftest::run_all()?;
            for r in &reports {
                writeln!(out, "{r}")?;
            }
            let failed = reports.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                bail!(SelftestFailed(failed));
            }
        }
    }
    Ok(())
}

#[derive(Debug)]
struct SelftestFailed(usize);

impl std::fmt::Display for SelftestFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} oracle suite(s) failed", self.0)
    }
}

impl std::error::Error for SelftestFailed {}

/// `error kind=<tag> msg=<text>` on a single line.
fn report(kind: &str, msg: &str) {
    let flat: Vec<&str> = msg.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    eprintln!("error kind={kind} msg={}", flat.join("; "));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("usage", &e.to_string());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = if let Some(lib) = e.downcast_ref::<uwmmse::Error>() {
                lib.kind()
            } else if e.downcast_ref::<SelftestFailed>().is_some() {
                "selftest"
            } else if e.downcast_ref::<io::Error>().is_some() {
                "io"
            } else {
                "other"
            };
            report(kind, &format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}
