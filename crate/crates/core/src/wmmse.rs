//! The classic WMMSE block coordinate descent.
//!
//! Receiver model: user `i` estimates its symbol as `x̂_i = conj(u_i) y_i`, so
//! the MMSE receiver gain is `u_i = h_iᴴ v_i / (Σ_j |h_iᴴ v_j|² + σ²)` and the
//! mean-square error is
//!
//! ```text
//! e_i = Σ_j |u_i|² |h_iᴴ v_j|² − 2 Re(conj(u_i) h_iᴴ v_i) + σ² |u_i|² + 1
//! ```
//!
//! With that convention the exact transmit update is
//! `v_i = α_i w_i u_i (A + μ I)⁻¹ h_i` with `A = Σ_i α_i w_i |u_i|² h_i h_iᴴ`.

use crate::error::{Error, Result};
use crate::model::{cross_gains, matched_filter_init, signal_and_total, wsr, Beamformer, Channel, SystemConfig};
use crate::numkit::{dot_conj, herm_eig, CMatrix, EigResult, C64, ZERO};

/// Largest residual `|Tr(V Vᴴ) − P|` the multiplier search may leave.
pub const POWER_TOL: f64 = 1e-4;
/// Default WSR increment below which the outer iteration stops.
pub const WSR_TOL: f64 = 1e-4;
/// Relative residual the bisection actually aims for; well inside [`POWER_TOL`].
const BISECTION_REL_TOL: f64 = 1e-12;

const BISECTION_MAX_ITERS: usize = 500;
const BISECTION_REL_WIDTH: f64 = 1e-14;
const EIG_NEG_TOL: f64 = 1e-10;
/// Eigenvalues below this fraction of the largest one are treated as null directions.
const NULL_REL: f64 = 1e-10;
const PIVOT_FLOOR: f64 = 1e-12;
const CONVERGENCE_CAP: usize = 10_000;

/// MMSE weights and receiver gains for one iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverState {
    pub w: Vec<f64>,
    pub u: Vec<C64>,
}

impl ReceiverState {
    pub fn compute(h: &Channel, v: &Beamformer, cfg: &SystemConfig) -> Self {
        let n = h.num_users();
        let gains = cross_gains(h, v);
        let mut w = Vec::with_capacity(n);
        let mut u = Vec::with_capacity(n);
        for i in 0..n {
            let (signal, total) = signal_and_total(&gains, n, i, cfg.noise_power);
            w.push(total / (total - signal));
            u.push(gains[i * n + i] / total);
        }
        Self { w, u }
    }
}

/// `w_i = (Σ_j |h_iᴴ v_j|² + σ²) / (Σ_{j≠i} |h_iᴴ v_j|² + σ²)`.
pub fn update_w(h: &Channel, v: &Beamformer, cfg: &SystemConfig) -> Vec<f64> {
    ReceiverState::compute(h, v, cfg).w
}

/// `u_i = h_iᴴ v_i / (Σ_j |h_iᴴ v_j|² + σ²)`.
pub fn update_u(h: &Channel, v: &Beamformer, cfg: &SystemConfig) -> Vec<C64> {
    ReceiverState::compute(h, v, cfg).u
}

fn weighted_outer_sum(h: &Channel, coeff: impl Fn(usize) -> f64) -> CMatrix {
    let m = h.num_antennas();
    let mut a = CMatrix::zeros(m, m);
    for i in 0..h.num_users() {
        let c = coeff(i);
        if c == 0.0 {
            continue;
        }
        let hi = h.user(i);
        for r in 0..m {
            let hr = hi[r] * c;
            for col in r..m {
                a[(r, col)] += hr * hi[col].conj();
            }
        }
    }
    for r in 0..m {
        a[(r, r)].im = 0.0;
        for col in r + 1..m {
            a[(col, r)] = a[(r, col)].conj();
        }
    }
    a
}

/// `A = Σ_i α_i w_i |u_i|² h_i h_iᴴ`, exactly Hermitian.
pub fn build_a(h: &Channel, w: &[f64], u: &[C64], cfg: &SystemConfig) -> CMatrix {
    weighted_outer_sum(h, |i| cfg.priorities[i] * w[i] * u[i].norm_sqr())
}

/// `B = Σ_i α_i² w_i² |u_i|² h_i h_iᴴ`, so that `Φ = Uᴴ B U`.
pub fn build_b(h: &Channel, w: &[f64], u: &[C64], cfg: &SystemConfig) -> CMatrix {
    weighted_outer_sum(h, |i| {
        let aw = cfg.priorities[i] * w[i];
        aw * aw * u[i].norm_sqr()
    })
}

/// Spectrum of `A` prepared for the power equation.
#[derive(Debug, Clone)]
struct PowerEquation {
    eig: EigResult,
    /// Eigenvalues with roundoff negatives clamped to zero.
    lambda: Vec<f64>,
    /// `diag(Uᴴ B U)`.
    phi: Vec<f64>,
    /// Directions with (numerically) zero eigenvalue and zero `Φ` mass; they
    /// carry nothing and are skipped, which amounts to a pseudo-inverse.
    empty: Vec<bool>,
}

impl PowerEquation {
    fn new(a: &CMatrix, b: &CMatrix) -> Result<Self> {
        let eig = herm_eig(a)?;
        let lmax = eig.eigvals.last().copied().unwrap_or(0.0).max(0.0);
        let mut lambda = Vec::with_capacity(eig.eigvals.len());
        for &l in &eig.eigvals {
            if l < -EIG_NEG_TOL * lmax.max(1.0) {
                return Err(Error::NotPsd(l));
            }
            lambda.push(l.max(0.0));
        }
        let m = a.rows();
        let phi: Vec<f64> = (0..m)
            .map(|j| {
                let col: Vec<C64> = (0..m).map(|r| eig.eigvecs[(r, j)]).collect();
                let bc = b.mul_vec(&col);
                dot_conj(&col, &bc).re.max(0.0)
            })
            .collect();
        let total: f64 = phi.iter().sum();
        let empty = lambda
            .iter()
            .zip(&phi)
            .map(|(&l, &f)| l <= NULL_REL * lmax && f <= NULL_REL * total)
            .collect();
        Ok(Self {
            eig,
            lambda,
            phi,
            empty,
        })
    }

    /// `1 / (λ_j + μ)` with the pivot floored at `1e-12`; zero for empty directions.
    fn inv(&self, j: usize, mu: f64) -> f64 {
        if self.empty[j] {
            0.0
        } else {
            1.0 / (self.lambda[j] + mu).max(PIVOT_FLOOR)
        }
    }

    /// `Σ_j Φ_jj / (Λ_jj + μ)²`, the transmit power produced by multiplier `μ`.
    fn lhs(&self, mu: f64) -> f64 {
        (0..self.lambda.len())
            .map(|j| {
                let r = self.inv(j, mu);
                self.phi[j] * r * r
            })
            .sum()
    }

    fn solve(&self, p: f64) -> f64 {
        let total_phi: f64 = self.phi.iter().sum();
        if total_phi == 0.0 || self.lhs(0.0) <= p {
            return 0.0;
        }
        // The textbook names swap these: LHS(0) > P and LHS(mu_low) <= P.
        let mut lo = 0.0;
        let mut hi = (total_phi / p).sqrt();
        let width_floor = BISECTION_REL_WIDTH * hi;
        let tol = (BISECTION_REL_TOL * p).min(POWER_TOL);
        for _ in 0..BISECTION_MAX_ITERS {
            let mid = 0.5 * (lo + hi);
            let f = self.lhs(mid) - p;
            // only accept the feasible side so iterates never exceed the budget
            if f <= 0.0 {
                if f >= -tol {
                    return mid;
                }
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= width_floor {
                break;
            }
        }
        hi
    }
}

/// Lagrange multiplier of the power constraint for the exact transmit update.
///
/// Returns 0 when the unconstrained minimiser already meets the budget;
/// otherwise a `μ > 0` with `P − 1e-4 ≤ Σ_j Φ_jj / (Λ_jj + μ)² ≤ P`. The search
/// itself runs to a relative residual of `1e-12` (or until the bracket collapses).
pub fn solve_mu(a: &CMatrix, b: &CMatrix, max_power: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "A is {:?} but B is {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let b_defect = b.hermitian_defect();
    if b_defect > 1e-12 * crate::numkit::frob_norm(b).max(1.0) {
        return Err(Error::NotHermitian(b_defect));
    }
    Ok(PowerEquation::new(a, b)?.solve(max_power))
}

/// Transmit power as a function of `μ` for given `A`, `B`.
pub fn power_at_mu(a: &CMatrix, b: &CMatrix, mu: f64) -> Result<f64> {
    Ok(PowerEquation::new(a, b)?.lhs(mu))
}

/// Exact minimiser of the inner problem over `V`; also returns the multiplier.
pub fn update_v_exact_with_mu(
    h: &Channel,
    w: &[f64],
    u: &[C64],
    cfg: &SystemConfig,
) -> Result<(Beamformer, f64)> {
    let a = build_a(h, w, u, cfg);
    let b = build_b(h, w, u, cfg);
    let eq = PowerEquation::new(&a, &b)?;
    let mu = eq.solve(cfg.max_power);

    let m = h.num_antennas();
    let n = h.num_users();
    let vecs = &eq.eig.eigvecs;
    let mut v = CMatrix::zeros(n, m);
    for i in 0..n {
        let coeff = u[i] * (cfg.priorities[i] * w[i]);
        if coeff == ZERO {
            continue;
        }
        let hi = h.user(i);
        // (A + μI)⁻¹ h_i = U diag(1/(λ+μ)) Uᴴ h_i
        for j in 0..m {
            let proj: C64 = (0..m).map(|r| vecs[(r, j)].conj() * hi[r]).sum();
            let scaled = proj * eq.inv(j, mu) * coeff;
            for r in 0..m {
                v[(i, r)] += vecs[(r, j)] * scaled;
            }
        }
    }
    Ok((Beamformer::new(v), mu))
}

/// `v_i = α_i w_i u_i (A + μI)⁻¹ h_i` with `μ` from [`solve_mu`].
pub fn update_v_exact(h: &Channel, w: &[f64], u: &[C64], cfg: &SystemConfig) -> Result<Beamformer> {
    update_v_exact_with_mu(h, w, u, cfg).map(|(v, _)| v)
}

/// Mean-square error `e_i` of user `i`.
pub fn mse(h: &Channel, u: &[C64], v: &Beamformer, cfg: &SystemConfig, i: usize) -> f64 {
    let hi = h.user(i);
    let ui = u[i];
    let received: f64 = (0..h.num_users())
        .map(|j| dot_conj(hi, v.beam(j)).norm_sqr())
        .sum();
    let cross = (ui.conj() * dot_conj(hi, v.beam(i))).re;
    ui.norm_sqr() * (received + cfg.noise_power) - 2.0 * cross + 1.0
}

/// `f(V) = Σ_i α_i (w_i e_i − log2 w_i)`, convex in `V`.
pub fn inner_cost(h: &Channel, w: &[f64], u: &[C64], v: &Beamformer, cfg: &SystemConfig) -> f64 {
    (0..h.num_users())
        .map(|i| cfg.priorities[i] * (w[i] * mse(h, u, v, cfg, i) - w[i].log2()))
        .sum()
}

/// Weighted sum-MSE objective with the natural-log weight penalty.
///
/// This is the form whose exact `w` block minimiser is `1 / e_i = 1 + SINR_i`,
/// so every block update of [`run_wmmse`] is non-increasing in it.
pub fn wmmse_objective(h: &Channel, w: &[f64], u: &[C64], v: &Beamformer, cfg: &SystemConfig) -> f64 {
    (0..h.num_users())
        .map(|i| cfg.priorities[i] * (w[i] * mse(h, u, v, cfg, i) - w[i].ln()))
        .sum()
}

/// When to stop the outer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub max_iterations: Option<usize>,
    pub wsr_tol: Option<f64>,
}

impl StopRule {
    /// Exactly `iterations` outer iterations.
    pub fn truncated(iterations: usize) -> Self {
        Self {
            max_iterations: Some(iterations),
            wsr_tol: None,
        }
    }

    /// Stop once the WSR gain of an iteration is at most `1e-4`.
    pub fn converged() -> Self {
        Self {
            max_iterations: None,
            wsr_tol: Some(WSR_TOL),
        }
    }

    pub fn both(iterations: usize, tol: f64) -> Self {
        Self {
            max_iterations: Some(iterations),
            wsr_tol: Some(tol),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    WsrIncrementBelowTol,
}

#[derive(Debug, Clone)]
pub struct Iterate {
    pub receiver: ReceiverState,
    pub beamformer: Beamformer,
    pub wsr: f64,
}

/// Record of a WMMSE run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub initial: Beamformer,
    pub initial_wsr: f64,
    pub iterates: Vec<Iterate>,
    pub stop: StopReason,
}

impl Trajectory {
    pub fn iterations(&self) -> usize {
        self.iterates.len()
    }

    pub fn final_beamformer(&self) -> &Beamformer {
        self.iterates.last().map_or(&self.initial, |it| &it.beamformer)
    }

    pub fn final_wsr(&self) -> f64 {
        self.iterates.last().map_or(self.initial_wsr, |it| it.wsr)
    }

    /// WSR after each iteration, starting with the initialisation.
    pub fn wsr_curve(&self) -> Vec<f64> {
        std::iter::once(self.initial_wsr)
            .chain(self.iterates.iter().map(|it| it.wsr))
            .collect()
    }
}

/// Matched-filter initialisation followed by `w`, `u`, `V` block updates.
pub fn run_wmmse(h: &Channel, cfg: &SystemConfig, stop: StopRule) -> Result<Trajectory> {
    let initial = matched_filter_init(h, cfg)?;
    let initial_wsr = wsr(h, &initial, cfg);
    let cap = stop.max_iterations.unwrap_or(CONVERGENCE_CAP);
    let mut iterates: Vec<Iterate> = Vec::new();
    let mut v = initial.clone();
    let mut last = initial_wsr;
    let mut reason = StopReason::MaxIterations;
    while iterates.len() < cap {
        let receiver = ReceiverState::compute(h, &v, cfg);
        v = update_v_exact(h, &receiver.w, &receiver.u, cfg)?;
        let rate = wsr(h, &v, cfg);
        iterates.push(Iterate {
            receiver,
            beamformer: v.clone(),
            wsr: rate,
        });
        if let Some(tol) = stop.wsr_tol {
            if rate - last <= tol {
                reason = StopReason::WsrIncrementBelowTol;
                break;
            }
        }
        last = rate;
    }
    Ok(Trajectory {
        initial,
        initial_wsr,
        iterates,
        stop: reason,
    })
}
