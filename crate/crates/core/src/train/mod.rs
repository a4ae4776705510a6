//! Learning the PGD step sizes by minimising the negative WSR summed over layers.

mod adam;
mod backprop;

use std::io::Write;

use rand::RngCore;
use rayon::prelude::*;

pub use adam::AdamState;

use crate::error::{Error, Result};
use crate::model::{sample_channel, wsr, Channel, RngStream, SystemConfig};
use crate::unfolded::{forward, StepSizes, UnfoldConfig};
use backprop::Tape;

/// Mixed into the user seed so training channels never coincide with the
/// evaluation channels drawn from the same seed.
const TRAIN_SEED_TAG: u64 = 0x7472_6169_6e5f_7374;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub num_tx_antennas: usize,
    pub num_users: usize,
    pub snr_db: f64,
    pub unfold: UnfoldConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub num_batches: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Initial value of every step size, including ones appended when extending.
    pub step_init: f64,
    /// Clip the gradient to this global L2 norm. Off by default.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_tx_antennas: 4,
            num_users: 4,
            snr_db: 10.0,
            unfold: UnfoldConfig {
                layers: 1,
                pgd_steps: 4,
                tie_within_layer: false,
            },
            learning_rate: 1e-3,
            batch_size: 100,
            num_batches: 20_000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_init: 1.0,
            grad_clip: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn system(&self) -> Result<SystemConfig> {
        SystemConfig::from_snr_db(self.num_tx_antennas, self.num_users, self.snr_db)
    }

    pub fn validate(&self) -> Result<()> {
        self.system()?;
        self.unfold.validate()?;
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad("Adam eps must be positive");
        }
        if !self.step_init.is_finite() {
            return bad("step_init must be finite");
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return bad("grad_clip must be positive");
            }
        }
        Ok(())
    }

    /// Seed of the training channel generator for a network with `pgd_steps`
    /// inner steps. Each progressive-extension stage therefore sees fresh data.
    fn data_seed(&self, pgd_steps: usize) -> u64 {
        RngStream::new(self.seed ^ TRAIN_SEED_TAG, pgd_steps as u64)
            .rng()
            .next_u64()
    }
}

/// Loss and its gradient over the step-size grid.
///
/// With tied step sizes every entry of a row holds that row's total gradient,
/// so an optimiser that treats entries independently keeps the rows constant.
#[derive(Debug, Clone, PartialEq)]
pub struct GradRecord {
    pub loss: f64,
    pub grad: StepSizes,
}

/// `−(1/B) Σ_n Σ_l WSR(H_n, V_l(H_n))`.
pub fn loss(batch: &[Channel], steps: &StepSizes, cfg: &SystemConfig, ucfg: &UnfoldConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let per_sample: Vec<f64> = batch
        .par_iter()
        .map(|h| Ok(forward(h, steps, cfg, ucfg)?.iter().map(|v| wsr(h, v, cfg)).sum()))
        .collect::<Result<_>>()?;
    Ok(-per_sample.iter().sum::<f64>() / batch.len() as f64)
}

/// [`loss`] together with its exact gradient with respect to the step sizes.
pub fn loss_and_grad(
    batch: &[Channel],
    steps: &StepSizes,
    cfg: &SystemConfig,
    ucfg: &UnfoldConfig,
) -> Result<GradRecord> {
    ucfg.validate()?;
    steps.check_shape(ucfg)?;
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let weight = 1.0 / batch.len() as f64;
    let per_sample: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|h| {
            let tape = Tape::record(h, steps, cfg, ucfg)?;
            let g = tape.backward(h, cfg, weight, ucfg.pgd_steps)?;
            Ok((tape.wsr_sum, g))
        })
        .collect::<Result<_>>()?;

    // summed in sample order so the result does not depend on thread count
    let mut total = 0.0;
    let mut grad = vec![0.0; steps.values().len()];
    for (w, g) in &per_sample {
        total += w;
        for (acc, x) in grad.iter_mut().zip(g) {
            *acc += x;
        }
    }
    if ucfg.tie_within_layer {
        for row in grad.chunks_mut(ucfg.pgd_steps) {
            let s: f64 = row.iter().sum();
            row.fill(s);
        }
    }
    Ok(GradRecord {
        loss: -total * weight,
        grad: StepSizes::from_values(ucfg.layers, ucfg.pgd_steps, grad)?,
    })
}

/// Channels of training batch `batch_index`.
pub fn training_batch(cfg: &TrainConfig, sys: &SystemConfig, pgd_steps: usize, batch_index: usize) -> Vec<Channel> {
    let seed = cfg.data_seed(pgd_steps);
    let base = (batch_index * cfg.batch_size) as u64;
    (0..cfg.batch_size as u64)
        .map(|i| sample_channel(sys, RngStream::new(seed, base + i)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub steps: StepSizes,
    /// Batch loss before each update.
    pub loss_history: Vec<f64>,
}

/// Trains from a grid filled with `step_init`.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let init = StepSizes::filled(cfg.unfold.layers, cfg.unfold.pgd_steps, cfg.step_init);
    train_from(init, cfg)
}

/// Trains starting from `initial`, with fresh optimiser state.
pub fn train_from(initial: StepSizes, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    initial.check_shape(&cfg.unfold)?;
    let sys = cfg.system()?;
    let mut steps = initial;
    if cfg.unfold.tie_within_layer {
        // only column 0 is read; keep the stored grid consistent with it
        for l in 0..steps.layers() {
            let v = steps.get(l, 0);
            for k in 0..steps.steps() {
                steps.set(l, k, v);
            }
        }
    }
    let mut adam = AdamState::new(steps.values().len(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);
    let mut history = Vec::with_capacity(cfg.num_batches);
    for b in 0..cfg.num_batches {
        let batch = training_batch(cfg, &sys, cfg.unfold.pgd_steps, b);
        let rec = loss_and_grad(&batch, &steps, &sys, &cfg.unfold)?;
        let mut g = rec.grad.values().to_vec();
        if let Some(limit) = cfg.grad_clip {
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > limit {
                g.iter_mut().for_each(|x| *x *= limit / norm);
            }
        }
        adam.step(steps.values_mut(), &g);
        if steps.values().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { layer: 0, step: 0 });
        }
        history.push(rec.loss);
    }
    Ok(TrainOutcome {
        steps,
        loss_history: history,
    })
}

/// Grows the inner step count one step at a time up to `target_steps`. Each
/// stage appends a step initialised to `step_init` and retrains the whole grid
/// for `num_batches` batches. `cfg.unfold.pgd_steps` is ignored; the shape of
/// `base` sets the starting point. The loss history concatenates all stages.
pub fn extend_pgd_progressive(base: &StepSizes, target_steps: usize, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if target_steps <= base.steps() {
        return Err(Error::InvalidConfig(format!(
            "target step count {target_steps} must exceed current {}",
            base.steps()
        )));
    }
    let mut steps = base.clone();
    let mut history = Vec::new();
    for k in base.steps() + 1..=target_steps {
        let mut stage = cfg.clone();
        stage.unfold.layers = base.layers();
        stage.unfold.pgd_steps = k;
        let out = train_from(steps.with_appended_steps(1, cfg.step_init), &stage)?;
        steps = out.steps;
        history.extend(out.loss_history);
    }
    Ok(TrainOutcome {
        steps,
        loss_history: history,
    })
}

/// `batch_index,loss` rows with a header.
pub fn write_loss_csv(mut out: impl Write, history: &[f64]) -> std::io::Result<()> {
    writeln!(out, "batch_index,loss")?;
    for (i, l) in history.iter().enumerate() {
        writeln!(out, "{i},{l:.17e}")?;
    }
    Ok(())
}
