//! Monte Carlo evaluation, persisted step sizes, config files and figure data.

mod artifact;
mod config;
mod figures;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

pub use artifact::{StepSizeArtifact, ARTIFACT_VERSION};
pub use config::{parse_key_values, ExperimentRow, ExperimentSpec};
pub use figures::{reproduce_figure, write_figure_csv, BudgetSchedule, FigureRow, FIGURE_CSV_HEADER};

use crate::error::{Error, Result};
use crate::model::{sample_channel, wsr, RngStream, SystemConfig};
use crate::unfolded::{forward, StepSizes, UnfoldConfig};
use crate::wmmse::{run_wmmse, StopRule};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "UNFOLD_WMMSE_THREADS";

/// Sizes the global worker pool from [`THREADS_ENV`] if it is set. Must run
/// before any parallel work; returns the cap that was applied.
pub fn configure_threads_from_env() -> Result<Option<usize>> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidConfig(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidConfig(format!("cannot size worker pool: {e}")))?;
    Ok(Some(n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MethodKind {
    WmmseConvergence,
    WmmseTruncated,
    Unfolded,
    UnfoldedTied,
}

impl MethodKind {
    pub const ALL: [MethodKind; 4] = [
        MethodKind::WmmseConvergence,
        MethodKind::WmmseTruncated,
        MethodKind::Unfolded,
        MethodKind::UnfoldedTied,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::WmmseConvergence => "wmmse_convergence",
            MethodKind::WmmseTruncated => "wmmse_truncated",
            MethodKind::Unfolded => "unfolded",
            MethodKind::UnfoldedTied => "unfolded_tied",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

/// A fully specified beamforming method.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    WmmseConvergence,
    WmmseTruncated { iterations: usize },
    /// Tied or not according to `unfold.tie_within_layer`.
    Unfolded { steps: StepSizes, unfold: UnfoldConfig },
}

impl Method {
    pub fn kind(&self) -> MethodKind {
        match self {
            Method::WmmseConvergence => MethodKind::WmmseConvergence,
            Method::WmmseTruncated { .. } => MethodKind::WmmseTruncated,
            Method::Unfolded { unfold, .. } if unfold.tie_within_layer => MethodKind::UnfoldedTied,
            Method::Unfolded { .. } => MethodKind::Unfolded,
        }
    }

    /// Number of points in [`Method::wsr_per_stage`].
    fn stages(&self) -> usize {
        match self {
            Method::WmmseConvergence => 1,
            Method::WmmseTruncated { iterations } => *iterations,
            Method::Unfolded { unfold, .. } => unfold.layers,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Method::WmmseConvergence => Ok(()),
            Method::WmmseTruncated { iterations: 0 } => {
                Err(Error::InvalidConfig("truncated WMMSE needs at least one iteration".into()))
            }
            Method::WmmseTruncated { .. } => Ok(()),
            Method::Unfolded { steps, unfold } => {
                unfold.validate()?;
                steps.check_shape(unfold)
            }
        }
    }

    /// WSR after every iteration or layer (a single converged value for
    /// [`Method::WmmseConvergence`]).
    fn wsr_per_stage(&self, h: &crate::model::Channel, cfg: &SystemConfig) -> Result<Vec<f64>> {
        match self {
            Method::WmmseConvergence => Ok(vec![run_wmmse(h, cfg, StopRule::converged())?.final_wsr()]),
            Method::WmmseTruncated { iterations } => {
                let traj = run_wmmse(h, cfg, StopRule::truncated(*iterations))?;
                Ok(traj.iterates.iter().map(|it| it.wsr).collect())
            }
            Method::Unfolded { steps, unfold } => {
                Ok(forward(h, steps, cfg, unfold)?.iter().map(|v| wsr(h, v, cfg)).collect())
            }
        }
    }
}

/// Sample mean of the per-channel WSR and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    /// `s / √n` with `s` the unbiased sample deviation; zero for one sample.
    pub stderr: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn from_samples(x: &[f64]) -> Self {
        let n = x.len();
        let mean = x.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, samples: n }
    }

    /// Whether the two ±`z`·stderr intervals intersect.
    pub fn overlaps(&self, other: &Estimate, z: f64) -> bool {
        (self.mean - other.mean).abs() <= z * (self.stderr + other.stderr)
    }
}

/// Mean final WSR over `samples` test channels drawn from `RngStream(seed, i)`.
pub fn evaluate(method: &Method, cfg: &SystemConfig, samples: usize, seed: u64) -> Result<Estimate> {
    Ok(*evaluate_curve(method, cfg, samples, seed)?.last().expect("at least one stage"))
}

/// Like [`evaluate`] but reports every iteration / layer: entry `l` is the
/// estimate after `l + 1` iterations or layers.
pub fn evaluate_curve(method: &Method, cfg: &SystemConfig, samples: usize, seed: u64) -> Result<Vec<Estimate>> {
    if samples == 0 {
        return Err(Error::InvalidConfig("eval_samples must be at least 1".into()));
    }
    cfg.validate()?;
    method.validate()?;
    let stages = method.stages();
    let per_sample: Vec<Vec<f64>> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let h = sample_channel(cfg, RngStream::new(seed, i));
            let mut curve = method.wsr_per_stage(&h, cfg)?;
            // a truncated run that converges early holds its last value
            let last = *curve.last().expect("nonempty curve");
            curve.resize(stages, last);
            Ok(curve)
        })
        .collect::<Result<_>>()?;
    let mut column = vec![0.0; samples];
    Ok((0..stages)
        .map(|l| {
            for (c, s) in column.iter_mut().zip(&per_sample) {
                *c = s[l];
            }
            Estimate::from_samples(&column)
        })
        .collect())
}
