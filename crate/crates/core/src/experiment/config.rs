//! Flat `key = value` experiment files.
//!
//! ```text
//! # unfolded network at two SNRs
//! method = unfolded
//! snr_db = 10, 20
//! layers = 1, 2, 3
//! pgd_steps = 4
//! eval_samples = 10000
//! seed = 7
//! num_batches = 20000
//! output = results.csv
//! ```
//!
//! Training keys: `learning_rate`, `batch_size`, `num_batches`, `adam_beta1`,
//! `adam_beta2`, `adam_eps`, `step_init`, `grad_clip`. System keys:
//! `num_tx_antennas`, `num_users`.

use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use super::{evaluate, evaluate_curve, Estimate, Method, MethodKind};
use crate::error::{Error, Result};
use crate::train::{train, TrainConfig};
use crate::unfolded::UnfoldConfig;

/// Splits a config text into `(line number, key, value)` triples, skipping
/// blank lines and `#` comments.
pub fn parse_key_values(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config {
                line: idx + 1,
                reason: format!("expected `key = value`, got {line:?}"),
            });
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config {
                line: idx + 1,
                reason: "empty key".into(),
            });
        }
        out.push((idx + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub method: MethodKind,
    pub snr_db: Vec<f64>,
    pub layers: Vec<usize>,
    pub pgd_steps: usize,
    pub eval_samples: usize,
    /// Budget and optimiser settings for the unfolded methods. Its SNR,
    /// network shape and seed are overwritten per run.
    pub train: TrainConfig,
    pub seed: u64,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            method: MethodKind::WmmseTruncated,
            snr_db: vec![10.0],
            layers: vec![1],
            pgd_steps: 4,
            eval_samples: 10_000,
            train: TrainConfig::default(),
            seed: 0,
            output: None,
        }
    }
}

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::Config {
        line,
        reason: format!("bad value for `{key}`: {raw:?}"),
    })
}

fn list<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<Vec<T>> {
    raw.split(',').map(|t| value(line, key, t.trim())).collect()
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (line, key, raw) in parse_key_values(text)? {
            if !seen.insert(key.clone()) {
                return Err(Error::Config {
                    line,
                    reason: format!("duplicate key `{key}`"),
                });
            }
            let (k, r) = (key.as_str(), raw.as_str());
            let t = &mut spec.train;
            match k {
                "method" => {
                    spec.method = r.parse().map_err(|_| Error::Config {
                        line,
                        reason: format!("unknown method {r:?}"),
                    })?
                }
                "snr_db" => spec.snr_db = list(line, k, r)?,
                "layers" => spec.layers = list(line, k, r)?,
                "pgd_steps" => spec.pgd_steps = value(line, k, r)?,
                "eval_samples" => spec.eval_samples = value(line, k, r)?,
                "seed" => spec.seed = value(line, k, r)?,
                "output" => spec.output = Some(PathBuf::from(r)),
                "num_tx_antennas" => t.num_tx_antennas = value(line, k, r)?,
                "num_users" => t.num_users = value(line, k, r)?,
                "learning_rate" => t.learning_rate = value(line, k, r)?,
                "batch_size" => t.batch_size = value(line, k, r)?,
                "num_batches" => t.num_batches = value(line, k, r)?,
                "adam_beta1" => t.beta1 = value(line, k, r)?,
                "adam_beta2" => t.beta2 = value(line, k, r)?,
                "adam_eps" => t.eps = value(line, k, r)?,
                "step_init" => t.step_init = value(line, k, r)?,
                "grad_clip" => t.grad_clip = Some(value(line, k, r)?),
                _ => {
                    return Err(Error::Config {
                        line,
                        reason: format!("unknown key `{k}`"),
                    })
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_empty() || self.layers.is_empty() {
            return Err(Error::InvalidConfig("snr_db and layers must be nonempty".into()));
        }
        if self.eval_samples == 0 {
            return Err(Error::InvalidConfig("eval_samples must be at least 1".into()));
        }
        for &snr in &self.snr_db {
            for &l in &self.layers {
                self.train_config(snr, l)?.validate()?;
            }
        }
        Ok(())
    }

    fn train_config(&self, snr_db: f64, layers: usize) -> Result<TrainConfig> {
        Ok(TrainConfig {
            snr_db,
            unfold: UnfoldConfig::new(layers, self.pgd_steps)?.tied(self.method == MethodKind::UnfoldedTied),
            seed: self.seed,
            ..self.train.clone()
        })
    }

    /// Runs every (SNR, L) cell. Unfolded methods train one network per cell.
    pub fn run(&self) -> Result<Vec<ExperimentRow>> {
        self.validate()?;
        let mut rows = Vec::new();
        for &snr in &self.snr_db {
            let sys = self.train_config(snr, 1)?.system()?;
            let mut push = |layers: usize, est: Estimate| {
                rows.push(ExperimentRow {
                    method: self.method,
                    snr_db: snr,
                    layers,
                    pgd_steps: self.pgd_steps,
                    estimate: est,
                })
            };
            match self.method {
                MethodKind::WmmseConvergence => {
                    let est = evaluate(&Method::WmmseConvergence, &sys, self.eval_samples, self.seed)?;
                    self.layers.iter().for_each(|&l| push(l, est));
                }
                MethodKind::WmmseTruncated => {
                    let longest = *self.layers.iter().max().expect("nonempty");
                    let curve = evaluate_curve(
                        &Method::WmmseTruncated { iterations: longest },
                        &sys,
                        self.eval_samples,
                        self.seed,
                    )?;
                    self.layers.iter().for_each(|&l| push(l, curve[l - 1]));
                }
                MethodKind::Unfolded | MethodKind::UnfoldedTied => {
                    for &l in &self.layers {
                        let cfg = self.train_config(snr, l)?;
                        let trained = train(&cfg)?;
                        let m = Method::Unfolded {
                            steps: trained.steps,
                            unfold: cfg.unfold,
                        };
                        push(l, evaluate(&m, &sys, self.eval_samples, self.seed)?);
                    }
                }
            }
        }
        Ok(rows)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRow {
    pub method: MethodKind,
    pub snr_db: f64,
    pub layers: usize,
    pub pgd_steps: usize,
    pub estimate: Estimate,
}

impl ExperimentRow {
    pub const CSV_HEADER: &'static str = "method,snr_db,layers,pgd_steps,mean,stderr,samples";

    pub fn write_csv(mut out: impl Write, rows: &[ExperimentRow]) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in rows {
            writeln!(
                out,
                "{},{},{},{},{:.9e},{:.9e},{}",
                r.method, r.snr_db, r.layers, r.pgd_steps, r.estimate.mean, r.estimate.stderr, r.estimate.samples
            )?;
        }
        Ok(())
    }
}
