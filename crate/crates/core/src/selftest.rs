//! Oracle suites that exercise every numerical kernel against an independent
//! reference. Runs in a few seconds; used by the `selftest` subcommand.

use std::fmt;

use crate::error::Result;
use crate::model::{sample_channel, sinr, Beamformer, Channel, RngStream, SystemConfig};
use crate::numkit::{dot_conj, frob_norm, herm_eig, norm_sqr, CMatrix, C64};
use crate::train::{loss, loss_and_grad};
use crate::unfolded::{lipschitz_bound, pgd_gradient, pgd_inner, StepSizes, UnfoldConfig};
use crate::wmmse::{
    build_a, build_b, inner_cost, power_at_mu, run_wmmse, solve_mu, update_v_exact, update_w, ReceiverState,
    StopRule,
};

const SEED: u64 = 0x5e1f_7e57;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub id: char,
    pub name: &'static str,
    pub cases: usize,
    /// Largest observed error, in the suite's own units.
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl SuiteReport {
    fn new(id: char, name: &'static str, cases: usize, worst: f64, tolerance: f64) -> Self {
        Self {
            id,
            name,
            cases,
            worst,
            tolerance,
            passed: worst <= tolerance && worst.is_finite(),
        }
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({}) {}: cases={} worst={:.3e} tol={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.cases,
            self.worst,
            self.tolerance
        )
    }
}

fn sys(users: usize, snr_db: f64) -> SystemConfig {
    SystemConfig::from_snr_db(4, users, snr_db).expect("valid dimensions")
}

fn random_matrix(rows: usize, cols: usize, stream: RngStream, scale: f64) -> CMatrix {
    let cfg = SystemConfig::from_snr_db(cols, rows, 0.0).expect("valid dimensions");
    sample_channel(&cfg, stream).matrix().scaled(scale)
}

/// Conjugate gradient of the inner cost against central differences.
pub fn inner_gradient() -> Result<SuiteReport> {
    let h_step = 1e-6;
    let mut worst: f64 = 0.0;
    let cases = 100;
    for s in 0..cases as u64 {
        let cfg = sys(4, [5.0, 10.0, 20.0][s as usize % 3]);
        let h = sample_channel(&cfg, RngStream::new(SEED, s));
        let rx = ReceiverState::compute(&h, &Beamformer::new(random_matrix(4, 4, RngStream::new(SEED + 1, s), 1.0)), &cfg);
        let v = Beamformer::new(random_matrix(4, 4, RngStream::new(SEED + 2, s), 0.8));
        let g = pgd_gradient(&h, &rx.w, &rx.u, &v, &cfg);
        let f = |m: CMatrix| inner_cost(&h, &rx.w, &rx.u, &Beamformer::new(m), &cfg);
        let mut fd = CMatrix::zeros(4, 4);
        for idx in 0..16 {
            let mut parts = [0.0; 2];
            for (slot, dir) in [C64::new(1.0, 0.0), C64::new(0.0, 1.0)].into_iter().enumerate() {
                let mut up = v.matrix().clone();
                let mut dn = v.matrix().clone();
                up.as_mut_slice()[idx] += dir * h_step;
                dn.as_mut_slice()[idx] -= dir * h_step;
                parts[slot] = (f(up) - f(dn)) / (2.0 * h_step);
            }
            fd.as_mut_slice()[idx] = C64::new(parts[0], parts[1]);
        }
        worst = worst.max(frob_norm(&fd.sub(&g)) / frob_norm(&g).max(1.0));
    }
    Ok(SuiteReport::new('a', "inner-cost gradient vs finite differences", cases, worst, 1e-6))
}

/// Reverse-mode step-size gradient against central differences.
pub fn step_size_gradient() -> Result<SuiteReport> {
    let h_step = 1e-6;
    let mut worst: f64 = 0.0;
    let mut probes = 0;
    let mut rng = RngStream::new(SEED, 99).rng();
    for (case, snr) in [5.0, 10.0, 20.0].into_iter().enumerate() {
        let cfg = sys(4, snr);
        let ucfg = UnfoldConfig::new(2, 3)?;
        let batch: Vec<Channel> = (0..10)
            .map(|i| sample_channel(&cfg, RngStream::new(SEED + 10 + case as u64, i)))
            .collect();
        for centre in [0.05, 1.0] {
            let vals = (0..6)
                .map(|_| centre * (0.5 + rand::Rng::random::<f64>(&mut rng)))
                .collect();
            let steps = StepSizes::from_values(2, 3, vals)?;
            let rec = loss_and_grad(&batch, &steps, &cfg, &ucfg)?;
            for idx in 0..6 {
                let mut up = steps.clone();
                let mut dn = steps.clone();
                up.values_mut()[idx] += h_step;
                dn.values_mut()[idx] -= h_step;
                let fd = (loss(&batch, &up, &cfg, &ucfg)? - loss(&batch, &dn, &cfg, &ucfg)?) / (2.0 * h_step);
                let an = rec.grad.values()[idx];
                worst = worst.max((fd - an).abs() / an.abs().max(1e-3));
                probes += 1;
            }
        }
    }
    Ok(SuiteReport::new('b', "step-size gradient vs finite differences", probes, worst, 1e-5))
}

/// Reconstruction and unitarity of the Hermitian eigensolver.
pub fn eigensolver() -> Result<SuiteReport> {
    let mut worst: f64 = 0.0;
    let cases = 300;
    for s in 0..cases as u64 {
        let n = [2, 4, 8][s as usize % 3];
        let x = random_matrix(n, n, RngStream::new(SEED + 20, s), 1.0);
        let a = x.add(&x.adjoint()).scaled(0.5);
        let eig = herm_eig(&a)?;
        let scale = frob_norm(&a).max(1.0);
        let recon = frob_norm(&eig.reconstruct().sub(&a)) / scale;
        let gram = eig.eigvecs.adjoint().matmul(&eig.eigvecs)?;
        let unitarity = frob_norm(&gram.sub(&CMatrix::identity(n)));
        worst = worst.max(recon).max(unitarity);
    }
    Ok(SuiteReport::new('c', "eigendecomposition reconstruction and unitarity", cases, worst, 1e-10))
}

/// Power residual of the multiplier search whenever the constraint is active.
pub fn bisection() -> Result<SuiteReport> {
    let mut worst: f64 = 0.0;
    let mut active = 0;
    for s in 0..1000u64 {
        let cfg = sys(4, [0.0, 10.0, 20.0, 30.0][s as usize % 4]);
        let h = sample_channel(&cfg, RngStream::new(SEED + 30, s));
        let v = Beamformer::new(random_matrix(4, 4, RngStream::new(SEED + 31, s), 1.0));
        let rx = ReceiverState::compute(&h, &v, &cfg);
        let a = build_a(&h, &rx.w, &rx.u, &cfg);
        let b = build_b(&h, &rx.w, &rx.u, &cfg);
        let mu = solve_mu(&a, &b, cfg.max_power)?;
        if mu > 0.0 {
            active += 1;
            worst = worst.max((power_at_mu(&a, &b, mu)? - cfg.max_power).abs());
        }
    }
    Ok(SuiteReport::new('d', "power residual at the multiplier", active, worst, 1e-4))
}

/// `w_i = 1 + SINR_i`.
pub fn weight_identity() -> Result<SuiteReport> {
    let mut worst: f64 = 0.0;
    let cases = 1000;
    for s in 0..cases as u64 {
        let cfg = sys(4, [5.0, 10.0, 20.0][s as usize % 3]);
        let h = sample_channel(&cfg, RngStream::new(SEED + 40, s));
        let v = Beamformer::new(random_matrix(4, 4, RngStream::new(SEED + 41, s), 1.0));
        let w = update_w(&h, &v, &cfg);
        for (i, wi) in w.iter().enumerate() {
            let expected = 1.0 + sinr(&h, &v, &cfg, i)?;
            worst = worst.max((wi - expected).abs() / expected);
        }
    }
    Ok(SuiteReport::new('e', "MMSE weight equals 1 + SINR", cases, worst, 1e-10))
}

/// Largest WSR decrease between consecutive classic iterations.
pub fn wsr_monotone() -> Result<SuiteReport> {
    let mut worst: f64 = 0.0;
    let cases = 1000;
    for s in 0..cases as u64 {
        let cfg = sys(4, [5.0, 10.0, 20.0][s as usize % 3]);
        let h = sample_channel(&cfg, RngStream::new(SEED + 50, s));
        let tr = run_wmmse(&h, &cfg, StopRule::truncated(30))?;
        let curve = tr.wsr_curve();
        for pair in curve.windows(2) {
            worst = worst.max(pair[0] - pair[1]);
        }
    }
    Ok(SuiteReport::new('f', "WSR non-decreasing over WMMSE iterations", cases, worst, 1e-8))
}

/// 200 PGD steps of safe size against the exact inner minimiser.
pub fn long_pgd() -> Result<SuiteReport> {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for snr in [5.0, 10.0, 20.0] {
        let cfg = sys(4, snr);
        for s in 0..20 {
            let h = sample_channel(&cfg, RngStream::new(SEED + 60, s));
            let v0 = crate::model::matched_filter_init(&h, &cfg)?;
            let rx = ReceiverState::compute(&h, &v0, &cfg);
            let gamma = 0.9 / (2.0 * lipschitz_bound(&h, &rx.w, &rx.u, &cfg)?);
            let pgd = pgd_inner(&h, &rx.w, &rx.u, &v0, &[gamma; 200], &cfg);
            let exact = update_v_exact(&h, &rx.w, &rx.u, &cfg)?;
            let gap = inner_cost(&h, &rx.w, &rx.u, &pgd, &cfg) - inner_cost(&h, &rx.w, &rx.u, &exact, &cfg);
            worst = worst.max(gap.abs());
            cases += 1;
        }
    }
    Ok(SuiteReport::new('g', "long PGD matches the exact inner solve", cases, worst, 1e-6))
}

/// One user: WMMSE must reach `log2(1 + P‖h‖²/σ²)`.
pub fn single_user() -> Result<SuiteReport> {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for snr in [0.0, 10.0, 20.0] {
        let cfg = sys(1, snr);
        for s in 0..20 {
            let h = sample_channel(&cfg, RngStream::new(SEED + 70, s));
            let tr = run_wmmse(&h, &cfg, StopRule::converged())?;
            let expected = (1.0 + cfg.max_power * norm_sqr(h.user(0)) / cfg.noise_power).log2();
            worst = worst.max((tr.final_wsr() - expected).abs());
            // the beam should be matched to the channel
            let b = tr.final_beamformer().beam(0);
            let cos = dot_conj(h.user(0), b).norm() / (norm_sqr(h.user(0)) * norm_sqr(b)).sqrt();
            worst = worst.max(1.0 - cos);
            cases += 1;
        }
    }
    Ok(SuiteReport::new('h', "single-user closed form", cases, worst, 1e-6))
}

pub fn run_all() -> Result<Vec<SuiteReport>> {
    Ok(vec![
        inner_gradient()?,
        step_size_gradient()?,
        eigensolver()?,
        bisection()?,
        weight_identity()?,
        wsr_monotone()?,
        long_pgd()?,
        single_user()?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes() {
        for r in run_all().unwrap() {
            assert!(r.passed, "{r}");
            assert!(r.cases > 0);
        }
    }

    #[test]
    fn report_line_format() {
        let r = SuiteReport::new('x', "demo", 3, 2e-7, 1e-6);
        assert_eq!(r.to_string(), "PASS (x) demo: cases=3 worst=2.000e-7 tol=1.0e-6");
        assert!(!SuiteReport::new('x', "demo", 3, f64::NAN, 1.0).passed);
    }
}
