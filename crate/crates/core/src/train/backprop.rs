//! Reverse-mode differentiation of the per-layer WSR loss through the unrolled
//! network.
//!
//! Adjoints of complex quantities follow the convention `z̄ = ∂ℓ/∂Re z + i ∂ℓ/∂Im z`,
//! so for a real loss `dℓ = Re(conj(z̄) dz)`. Under it a product `y = a b` sends
//! `ȳ conj(b)` to `a`, and `|z|²` sends `2 r̄ z` to `z`.

use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::model::{matched_filter_init, signal_and_total, Channel, SystemConfig};
use crate::numkit::{dot_conj, frob_norm, CMatrix, C64, ZERO};
use crate::unfolded::{gradient_with_a, projection_active, StepSizes, UnfoldConfig};
use crate::wmmse::build_a;

/// Per-user received-power summary of a beamformer.
struct Received {
    gains: Vec<C64>,
    total: Vec<f64>,
    signal: Vec<f64>,
}

impl Received {
    fn new(h: &Channel, v: &CMatrix, cfg: &SystemConfig) -> Self {
        let n = h.num_users();
        let mut gains = Vec::with_capacity(n * n);
        for i in 0..n {
            gains.extend((0..n).map(|j| dot_conj(h.user(i), v.row(j))));
        }
        let mut total = Vec::with_capacity(n);
        let mut signal = Vec::with_capacity(n);
        for i in 0..n {
            let (s, t) = signal_and_total(&gains, n, i, cfg.noise_power);
            signal.push(s);
            total.push(t);
        }
        Self {
            gains,
            total,
            signal,
        }
    }

    fn wsr(&self, cfg: &SystemConfig) -> f64 {
        self.total
            .iter()
            .zip(&self.signal)
            .zip(&cfg.priorities)
            .map(|((t, s), a)| a * (t / (t - s)).log2())
            .sum()
    }
}

struct StepRecord {
    /// Iterate entering the step.
    x_prev: CMatrix,
    grad: CMatrix,
    /// `x_prev − γ grad`, before projection.
    stepped: CMatrix,
    stepped_norm: f64,
    gamma: f64,
}

struct LayerRecord {
    input: Received,
    w: Vec<f64>,
    u: Vec<C64>,
    a: CMatrix,
    steps: Vec<StepRecord>,
    output: Received,
}

/// Forward pass that keeps every intermediate needed by [`Tape::backward`].
pub(crate) struct Tape {
    layers: Vec<LayerRecord>,
    /// `Σ_l WSR(V_l)`.
    pub wsr_sum: f64,
}

impl Tape {
    pub(crate) fn record(
        h: &Channel,
        steps: &StepSizes,
        cfg: &SystemConfig,
        ucfg: &UnfoldConfig,
    ) -> Result<Self> {
        let n = h.num_users();
        let mut v = matched_filter_init(h, cfg)?.into_matrix();
        let mut input = Received::new(h, &v, cfg);
        let mut layers = Vec::with_capacity(ucfg.layers);
        let mut wsr_sum = 0.0;
        for l in 0..ucfg.layers {
            let mut w = Vec::with_capacity(n);
            let mut u = Vec::with_capacity(n);
            for i in 0..n {
                let t = input.total[i];
                w.push(t / (t - input.signal[i]));
                u.push(input.gains[i * n + i] / t);
            }
            let a = build_a(h, &w, &u, cfg);
            let mut records = Vec::with_capacity(ucfg.pgd_steps);
            for k in 0..ucfg.pgd_steps {
                let gamma = steps.effective(l, k, ucfg);
                let grad = gradient_with_a(h, &w, &u, &v, &a, cfg);
                let stepped = v.sub(&grad.scaled(gamma));
                if !stepped.is_finite() {
                    return Err(Error::NonFinite { layer: l, step: k });
                }
                let stepped_norm = frob_norm(&stepped);
                let next = if projection_active(stepped_norm, cfg.max_power) {
                    stepped.scaled(cfg.max_power.sqrt() / stepped_norm)
                } else {
                    stepped.clone()
                };
                records.push(StepRecord {
                    x_prev: std::mem::replace(&mut v, next),
                    grad,
                    stepped,
                    stepped_norm,
                    gamma,
                });
            }
            let output = Received::new(h, &v, cfg);
            wsr_sum += output.wsr(cfg);
            let next_input = Received {
                gains: output.gains.clone(),
                total: output.total.clone(),
                signal: output.signal.clone(),
            };
            layers.push(LayerRecord {
                input,
                w,
                u,
                a,
                steps: records,
                output,
            });
            input = next_input;
        }
        Ok(Self { layers, wsr_sum })
    }

    /// Gradient of `−weight · Σ_l WSR(V_l)` with respect to the step size used
    /// at every (layer, step), as an `L x K` row-major grid.
    pub(crate) fn backward(
        &self,
        h: &Channel,
        cfg: &SystemConfig,
        weight: f64,
        pgd_steps: usize,
    ) -> Result<Vec<f64>> {
        let n = h.num_users();
        let m = h.num_antennas();
        let radius = cfg.max_power.sqrt();
        let mut grads = vec![0.0; self.layers.len() * pgd_steps];
        // adjoint of the layer output coming from all later layers
        let mut adj = CMatrix::zeros(n, m);

        for (l, layer) in self.layers.iter().enumerate().rev() {
            // this layer's own WSR readout
            let mut total_bar = vec![0.0; n];
            let mut signal_bar = vec![0.0; n];
            for i in 0..n {
                let t = layer.output.total[i];
                let interference = t - layer.output.signal[i];
                let c = -weight * cfg.priorities[i] / LN_2;
                total_bar[i] = c * (1.0 / t - 1.0 / interference);
                signal_bar[i] = c / interference;
            }
            let mut gains_bar = vec![ZERO; n * n];
            accumulate_power_adjoints(&layer.output.gains, &total_bar, &signal_bar, n, &mut gains_bar);
            add_gains_adjoint(h, &gains_bar, &mut adj);

            // PGD chain, last step first
            let mut a_bar = CMatrix::zeros(m, m);
            let mut b_bar = CMatrix::zeros(n, m);
            for (k, st) in layer.steps.iter().enumerate().rev() {
                let stepped_bar = if projection_active(st.stepped_norm, cfg.max_power) {
                    let s = radius / st.stepped_norm;
                    let s_bar = dot_conj(adj.as_slice(), st.stepped.as_slice()).re;
                    let radial = -s_bar * radius / (st.stepped_norm * st.stepped_norm * st.stepped_norm);
                    adj.scaled(s).add(&st.stepped.scaled(radial))
                } else {
                    adj.clone()
                };
                grads[l * pgd_steps + k] = -dot_conj(stepped_bar.as_slice(), st.grad.as_slice()).re;
                if !grads[l * pgd_steps + k].is_finite() {
                    return Err(Error::NonFinite { layer: l, step: k });
                }

                // grad_i = −2 b_i + 2 A x_i, and stepped = x − γ grad
                let grad_bar = stepped_bar.scaled(-st.gamma);
                let mut x_bar = stepped_bar;
                for i in 0..n {
                    let gb = grad_bar.row(i);
                    let agb = layer.a.mul_vec(gb);
                    let xi = st.x_prev.row(i);
                    for r in 0..m {
                        x_bar[(i, r)] += agb[r] * 2.0;
                        b_bar[(i, r)] -= gb[r] * 2.0;
                        let g2 = gb[r] * 2.0;
                        for c in 0..m {
                            a_bar[(r, c)] += g2 * xi[c].conj();
                        }
                    }
                }
                adj = x_bar;
            }

            // A = Σ c_i h_i h_iᴴ with c_i = α w |u|²;  b_i = z_i h_i with z_i = α w u
            let mut w_bar = vec![0.0; n];
            let mut u_bar = vec![ZERO; n];
            for i in 0..n {
                let hi = h.user(i);
                let ah = a_bar.mul_vec(hi);
                let c_bar = dot_conj(hi, &ah).re;
                let z_bar: C64 = b_bar.row(i).iter().zip(hi).map(|(b, hz)| b * hz.conj()).sum();
                let alpha = cfg.priorities[i];
                let (wi, ui) = (layer.w[i], layer.u[i]);
                w_bar[i] = alpha * ui.norm_sqr() * c_bar + alpha * (z_bar.conj() * ui).re;
                u_bar[i] = ui * (2.0 * alpha * wi * c_bar) + z_bar * (alpha * wi);
            }

            // w = T / (T − q), u = g_ii / T
            let mut total_bar = vec![0.0; n];
            let mut signal_bar = vec![0.0; n];
            let mut gains_bar = vec![ZERO; n * n];
            for i in 0..n {
                let t = layer.input.total[i];
                let q = layer.input.signal[i];
                let interference = t - q;
                let gii = layer.input.gains[i * n + i];
                gains_bar[i * n + i] += u_bar[i] / t;
                total_bar[i] += -(u_bar[i].conj() * gii).re / (t * t);
                total_bar[i] += -w_bar[i] * q / (interference * interference);
                signal_bar[i] += w_bar[i] * t / (interference * interference);
            }
            accumulate_power_adjoints(&layer.input.gains, &total_bar, &signal_bar, n, &mut gains_bar);
            add_gains_adjoint(h, &gains_bar, &mut adj);
            // adj now refers to this layer's input, i.e. the previous layer's output
        }
        Ok(grads)
    }
}

/// Pushes adjoints of `T_i = Σ_j |g_ij|² + σ²` and `q_i = |g_ii|²` onto the gains.
fn accumulate_power_adjoints(gains: &[C64], total_bar: &[f64], signal_bar: &[f64], n: usize, out: &mut [C64]) {
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] += gains[i * n + j] * (2.0 * total_bar[i]);
        }
        out[i * n + i] += gains[i * n + i] * (2.0 * signal_bar[i]);
    }
}

/// `g_ij = Σ_m conj(H_im) V_jm`  ⇒  `V̄_jm += ḡ_ij H_im`.
fn add_gains_adjoint(h: &Channel, gains_bar: &[C64], v_bar: &mut CMatrix) {
    let n = h.num_users();
    for i in 0..n {
        let hi = h.user(i);
        for j in 0..n {
            let gb = gains_bar[i * n + j];
            if gb == ZERO {
                continue;
            }
            for (out, hz) in v_bar.row_mut(j).iter_mut().zip(hi) {
                *out += gb * hz;
            }
        }
    }
}
