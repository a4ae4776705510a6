//! Regenerates the data behind the published WSR figures.

use std::io::Write;

use super::{evaluate, evaluate_curve, Estimate, Method};
use crate::error::{Error, Result};
use crate::model::SystemConfig;
use crate::train::{extend_pgd_progressive, train, TrainConfig};
use crate::unfolded::UnfoldConfig;

pub const FIGURE_CSV_HEADER: &str = "figure,series,x,value,stderr,paper_value";

const LAYERS: [f64; 6] = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
const FIG5_SNR: [f64; 7] = [5.0, 7.5, 10.0, 12.5, 15.0, 17.5, 20.0];

const FIG2_UNFOLDED: [f64; 6] = [8.5524, 9.3179, 9.5474, 9.6531, 9.7114, 9.7460];
const FIG2_WMMSE: [f64; 6] = [7.9456, 9.1079, 9.4840, 9.6305, 9.7050, 9.7496];
const FIG2_TIED: [f64; 6] = [7.5881, 8.6927, 9.1500, 9.3724, 9.4988, 9.5727];
const FIG2_CONVERGED: f64 = 9.86428;

const FIG3_UNFOLDED: [f64; 6] = [12.4709, 15.5750, 16.7087, 17.0016, 17.2190, 17.2315];
const FIG3_WMMSE: [f64; 6] = [10.9922, 15.3399, 17.3626, 18.1086, 18.4176, 18.5730];
const FIG3_TIED: [f64; 6] = [9.8410, 12.4879, 13.7420, 14.5671, 15.1311, 15.5676];
const FIG3_CONVERGED: f64 = 19.2377;

const FIG4_8PGD: [f64; 6] = [12.8716, 16.5092, 17.6763, 17.9306, 18.1530, 18.2749];

const FIG5_UNFOLDED: [f64; 7] = [5.7221, 7.1389, 8.5524, 9.8318, 10.9055, 11.8119, 12.4709];
const FIG5_WMMSE: [f64; 7] = [5.5292, 6.7723, 7.9456, 8.9764, 9.8272, 10.4931, 10.9922];
const FIG5_TIED: [f64; 7] = [5.4465, 6.5829, 7.5881, 8.4084, 9.0409, 9.5083, 9.8410];

/// Training and evaluation budgets, all multiplied by `scale`.
///
/// Full scale trains every network (and every progressive-extension stage) on
/// 20 000 batches below 15 dB and 60 000 batches from 15 dB up, and evaluates on
/// 10⁴ channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetSchedule {
    pub scale: f64,
}

impl BudgetSchedule {
    pub fn new(scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::InvalidConfig(format!("scale must lie in (0, 1], got {scale}")));
        }
        Ok(Self { scale })
    }

    pub fn train_batches(&self, snr_db: f64) -> usize {
        let base = if snr_db >= 15.0 { 60_000.0 } else { 20_000.0 };
        ((base * self.scale).round() as usize).max(1)
    }

    pub fn eval_samples(&self) -> usize {
        ((10_000.0 * self.scale).round() as usize).max(2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FigureRow {
    pub figure: u32,
    pub series: &'static str,
    pub x: f64,
    pub estimate: Estimate,
    pub paper_value: Option<f64>,
}

struct Runner<'a> {
    schedule: BudgetSchedule,
    seed: u64,
    progress: &'a mut dyn FnMut(&str),
}

impl Runner<'_> {
    fn train_cfg(&self, snr_db: f64, layers: usize, pgd_steps: usize, tied: bool) -> Result<TrainConfig> {
        Ok(TrainConfig {
            snr_db,
            unfold: UnfoldConfig::new(layers, pgd_steps)?.tied(tied),
            num_batches: self.schedule.train_batches(snr_db),
            seed: self.seed,
            ..TrainConfig::default()
        })
    }

    fn eval(&self, m: &Method, sys: &SystemConfig) -> Result<Estimate> {
        evaluate(m, sys, self.schedule.eval_samples(), self.seed)
    }

    /// Trains an `L`-layer network and scores it.
    fn unfolded(&mut self, snr_db: f64, layers: usize, tied: bool) -> Result<Estimate> {
        (self.progress)(&format!("training snr={snr_db} L={layers} tied={tied}"));
        let cfg = self.train_cfg(snr_db, layers, 4, tied)?;
        let out = train(&cfg)?;
        self.eval(
            &Method::Unfolded {
                steps: out.steps,
                unfold: cfg.unfold,
            },
            &cfg.system()?,
        )
    }

    fn layer_sweep(&mut self, figure: u32, snr_db: f64, paper: [&[f64; 6]; 3], converged: f64) -> Result<Vec<FigureRow>> {
        let sys = SystemConfig::from_snr_db(4, 4, snr_db)?;
        let mut rows = Vec::new();
        for tied in [false, true] {
            let (series, ref_vals) = if tied {
                ("unfolded_tied", paper[2])
            } else {
                ("unfolded", paper[0])
            };
            for (l, &x) in LAYERS.iter().enumerate() {
                let est = self.unfolded(snr_db, l + 1, tied)?;
                rows.push(row(figure, series, x, est, Some(ref_vals[l])));
            }
        }
        rows.extend(self.wmmse_rows(figure, &sys, paper[1], converged)?);
        Ok(rows)
    }

    fn wmmse_rows(&mut self, figure: u32, sys: &SystemConfig, paper: &[f64; 6], converged: f64) -> Result<Vec<FigureRow>> {
        (self.progress)("evaluating WMMSE");
        let curve = evaluate_curve(
            &Method::WmmseTruncated { iterations: 6 },
            sys,
            self.schedule.eval_samples(),
            self.seed,
        )?;
        let conv = self.eval(&Method::WmmseConvergence, sys)?;
        let mut rows: Vec<_> = LAYERS
            .iter()
            .zip(curve)
            .zip(paper)
            .map(|((&x, est), &p)| row(figure, "wmmse", x, est, Some(p)))
            .collect();
        rows.extend(LAYERS.iter().map(|&x| row(figure, "wmmse_convergence", x, conv, Some(converged))));
        Ok(rows)
    }

    fn figure4(&mut self) -> Result<Vec<FigureRow>> {
        let snr = 20.0;
        let sys = SystemConfig::from_snr_db(4, 4, snr)?;
        let mut four = Vec::new();
        let mut eight = Vec::new();
        for (l, &x) in LAYERS.iter().enumerate() {
            (self.progress)(&format!("training snr={snr} L={} K=4 then extending to K=8", l + 1));
            let cfg = self.train_cfg(snr, l + 1, 4, false)?;
            let base = train(&cfg)?;
            let ext = extend_pgd_progressive(&base.steps, 8, &cfg)?;
            let m4 = Method::Unfolded {
                steps: base.steps,
                unfold: cfg.unfold,
            };
            let m8 = Method::Unfolded {
                steps: ext.steps,
                unfold: UnfoldConfig::new(l + 1, 8)?,
            };
            four.push(row(4, "unfolded_4pgd", x, self.eval(&m4, &sys)?, Some(FIG3_UNFOLDED[l])));
            eight.push(row(4, "unfolded_8pgd", x, self.eval(&m8, &sys)?, Some(FIG4_8PGD[l])));
        }
        four.extend(eight);
        four.extend(self.wmmse_rows(4, &sys, &FIG3_WMMSE, FIG3_CONVERGED)?);
        Ok(four)
    }

    fn figure5(&mut self) -> Result<Vec<FigureRow>> {
        let mut unfolded = Vec::new();
        let mut wmmse = Vec::new();
        let mut tied = Vec::new();
        for (i, &snr) in FIG5_SNR.iter().enumerate() {
            let sys = SystemConfig::from_snr_db(4, 4, snr)?;
            unfolded.push(row(5, "unfolded", snr, self.unfolded(snr, 1, false)?, Some(FIG5_UNFOLDED[i])));
            let w = self.eval(&Method::WmmseTruncated { iterations: 1 }, &sys)?;
            wmmse.push(row(5, "wmmse", snr, w, Some(FIG5_WMMSE[i])));
            tied.push(row(5, "unfolded_tied", snr, self.unfolded(snr, 1, true)?, Some(FIG5_TIED[i])));
        }
        unfolded.extend(wmmse);
        unfolded.extend(tied);
        Ok(unfolded)
    }
}

fn row(figure: u32, series: &'static str, x: f64, estimate: Estimate, paper_value: Option<f64>) -> FigureRow {
    FigureRow {
        figure,
        series,
        x,
        estimate,
        paper_value,
    }
}

/// Recomputes every series of figure 2, 3, 4 or 5. Each unfolded point is a
/// separately trained network; `progress` receives a line per training run.
pub fn reproduce_figure(
    figure: u32,
    schedule: BudgetSchedule,
    seed: u64,
    progress: &mut dyn FnMut(&str),
) -> Result<Vec<FigureRow>> {
    let mut r = Runner {
        schedule,
        seed,
        progress,
    };
    match figure {
        2 => r.layer_sweep(2, 10.0, [&FIG2_UNFOLDED, &FIG2_WMMSE, &FIG2_TIED], FIG2_CONVERGED),
        3 => r.layer_sweep(3, 20.0, [&FIG3_UNFOLDED, &FIG3_WMMSE, &FIG3_TIED], FIG3_CONVERGED),
        4 => r.figure4(),
        5 => r.figure5(),
        other => Err(Error::UnknownFigure(other)),
    }
}

pub fn write_figure_csv(mut out: impl Write, rows: &[FigureRow]) -> std::io::Result<()> {
    writeln!(out, "{FIGURE_CSV_HEADER}")?;
    for r in rows {
        let paper = r.paper_value.map(|p| format!("{p:.9e}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{:.9e},{:.9e},{}",
            r.figure, r.series, r.x, r.estimate.mean, r.estimate.stderr, paper
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BudgetSchedule {
        BudgetSchedule::new(1e-4).unwrap()
    }

    #[test]
    fn schedule_bounds() {
        assert!(BudgetSchedule::new(0.0).is_err());
        assert!(BudgetSchedule::new(1.5).is_err());
        let full = BudgetSchedule::new(1.0).unwrap();
        assert_eq!(full.train_batches(10.0), 20_000);
        assert_eq!(full.train_batches(20.0), 60_000);
        assert_eq!(full.eval_samples(), 10_000);
        assert_eq!(tiny().train_batches(10.0), 2);
        assert_eq!(tiny().eval_samples(), 2);
    }

    #[test]
    fn unknown_figure() {
        assert!(matches!(
            reproduce_figure(7, tiny(), 0, &mut |_| {}),
            Err(Error::UnknownFigure(7))
        ));
    }

    #[test]
    fn figure2_schema_at_tiny_scale() {
        let rows = reproduce_figure(2, tiny(), 1, &mut |_| {}).unwrap();
        assert_eq!(rows.len(), 24);
        for series in ["unfolded", "wmmse", "unfolded_tied", "wmmse_convergence"] {
            let xs: Vec<f64> = rows.iter().filter(|r| r.series == series).map(|r| r.x).collect();
            assert_eq!(xs, LAYERS.to_vec(), "{series}");
        }
        let mut buf = Vec::new();
        write_figure_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some(FIGURE_CSV_HEADER));
        assert!(text.lines().skip(1).all(|l| l.split(',').count() == 6));
        assert!(text.contains("2,wmmse,1,"));
    }

    #[test]
    fn figure5_schema_at_tiny_scale() {
        let rows = reproduce_figure(5, tiny(), 1, &mut |_| {}).unwrap();
        assert_eq!(rows.len(), 21);
        let first = &rows[0];
        assert_eq!((first.series, first.x, first.paper_value), ("unfolded", 5.0, Some(5.7221)));
    }
}
