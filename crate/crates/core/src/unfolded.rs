//! Unfolded WMMSE: `L` layers, each doing the closed-form `w`, `u` updates and
//! then `K` projected gradient steps on `V` with per-step step sizes.

use crate::error::{Error, Result};
use crate::model::{matched_filter_init, Beamformer, Channel, SystemConfig};
use crate::numkit::{frob_norm, CMatrix, C64};
use crate::wmmse::{build_a, ReceiverState};

/// Shape of the unfolded network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnfoldConfig {
    pub layers: usize,
    pub pgd_steps: usize,
    /// One shared step size per layer (column 0 of the grid is used).
    pub tie_within_layer: bool,
}

impl UnfoldConfig {
    pub fn new(layers: usize, pgd_steps: usize) -> Result<Self> {
        let cfg = Self {
            layers,
            pgd_steps,
            tie_within_layer: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn tied(self, tie: bool) -> Self {
        Self {
            tie_within_layer: tie,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.pgd_steps == 0 {
            return Err(Error::InvalidConfig(format!(
                "need at least one layer and one PGD step, got L={} K={}",
                self.layers, self.pgd_steps
            )));
        }
        Ok(())
    }
}

/// The `L x K` grid of trainable step sizes, row `l` holding layer `l`'s steps.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSizes {
    layers: usize,
    steps: usize,
    values: Vec<f64>,
}

impl StepSizes {
    pub fn filled(layers: usize, steps: usize, value: f64) -> Self {
        Self {
            layers,
            steps,
            values: vec![value; layers * steps],
        }
    }

    pub fn from_values(layers: usize, steps: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != layers * steps {
            return Err(Error::Dimension(format!(
                "{} step sizes for a {layers}x{steps} grid",
                values.len()
            )));
        }
        Ok(Self {
            layers,
            steps,
            values,
        })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.layers, self.steps)
    }

    pub fn get(&self, layer: usize, step: usize) -> f64 {
        self.values[layer * self.steps + step]
    }

    pub fn set(&mut self, layer: usize, step: usize, value: f64) {
        self.values[layer * self.steps + step] = value;
    }

    pub fn row(&self, layer: usize) -> &[f64] {
        &self.values[layer * self.steps..(layer + 1) * self.steps]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Step size applied at (`layer`, `step`) under `ucfg`.
    #[inline]
    pub fn effective(&self, layer: usize, step: usize, ucfg: &UnfoldConfig) -> f64 {
        if ucfg.tie_within_layer {
            self.get(layer, 0)
        } else {
            self.get(layer, step)
        }
    }

    /// Copy with `extra` columns appended to every row, filled with `value`.
    pub fn with_appended_steps(&self, extra: usize, value: f64) -> Self {
        let steps = self.steps + extra;
        let mut values = Vec::with_capacity(self.layers * steps);
        for l in 0..self.layers {
            values.extend_from_slice(self.row(l));
            values.extend(std::iter::repeat_n(value, extra));
        }
        Self {
            layers: self.layers,
            steps,
            values,
        }
    }

    pub fn check_shape(&self, ucfg: &UnfoldConfig) -> Result<()> {
        if self.shape() != (ucfg.layers, ucfg.pgd_steps) {
            return Err(Error::ShapeMismatch {
                found: self.shape(),
                expected: (ucfg.layers, ucfg.pgd_steps),
            });
        }
        Ok(())
    }
}

/// Row `i`: `−2 α_i w_i u_i h_i + 2 A v_i`, twice the conjugate (Wirtinger)
/// gradient `∂f/∂v_i*` of [`crate::wmmse::inner_cost`].
pub fn pgd_gradient(h: &Channel, w: &[f64], u: &[C64], v: &Beamformer, cfg: &SystemConfig) -> CMatrix {
    let a = build_a(h, w, u, cfg);
    gradient_with_a(h, w, u, v.matrix(), &a, cfg)
}

pub(crate) fn gradient_with_a(
    h: &Channel,
    w: &[f64],
    u: &[C64],
    v: &CMatrix,
    a: &CMatrix,
    cfg: &SystemConfig,
) -> CMatrix {
    let (n, m) = v.shape();
    let mut g = CMatrix::zeros(n, m);
    for i in 0..n {
        let av = a.mul_vec(v.row(i));
        let coeff = u[i] * (2.0 * cfg.priorities[i] * w[i]);
        let hi = h.user(i);
        for (r, out) in g.row_mut(i).iter_mut().enumerate() {
            *out = av[r] * 2.0 - coeff * hi[r];
        }
    }
    g
}

/// Relative slack before the projection engages. Points just projected onto
/// the sphere have recomputed norms within ~3 ulps of `√P`; they must come out
/// of a second projection bit-for-bit unchanged.
const RADIUS_SLACK: f64 = 8.0 * f64::EPSILON;

/// Scale factor of the power-ball projection: `√P / (φ(‖V‖ − √P) + √P)` with
/// `φ` the ReLU, i.e. `1` inside the ball and `√P / ‖V‖` outside.
#[inline]
pub fn projection_scale(norm: f64, max_power: f64) -> f64 {
    let radius = max_power.sqrt();
    if projection_active(norm, max_power) {
        radius / norm
    } else {
        1.0
    }
}

/// Whether [`projection_scale`] is on its shrinking branch at this norm.
#[inline]
pub(crate) fn projection_active(norm: f64, max_power: f64) -> bool {
    norm > max_power.sqrt() * (1.0 + RADIUS_SLACK)
}

/// Euclidean projection onto `{V : Tr(V Vᴴ) ≤ P}` in branch-free form.
pub fn project_power(v: &Beamformer, max_power: f64) -> Beamformer {
    let s = projection_scale(frob_norm(v.matrix()), max_power);
    Beamformer::new(v.matrix().scaled(s))
}

/// `K` steps of `V ← Π(V − γ_k ∇f(V))` with `w`, `u` (hence `A`) held fixed.
pub fn pgd_inner(
    h: &Channel,
    w: &[f64],
    u: &[C64],
    v_in: &Beamformer,
    gammas: &[f64],
    cfg: &SystemConfig,
) -> Beamformer {
    let a = build_a(h, w, u, cfg);
    let mut v = v_in.matrix().clone();
    for &gamma in gammas {
        let g = gradient_with_a(h, w, u, &v, &a, cfg);
        let stepped = v.sub(&g.scaled(gamma));
        let s = projection_scale(frob_norm(&stepped), cfg.max_power);
        v = stepped.scaled(s);
    }
    Beamformer::new(v)
}

/// Runs the network and returns the beamformer produced by every layer.
pub fn forward(
    h: &Channel,
    steps: &StepSizes,
    cfg: &SystemConfig,
    ucfg: &UnfoldConfig,
) -> Result<Vec<Beamformer>> {
    ucfg.validate()?;
    steps.check_shape(ucfg)?;
    let mut v = matched_filter_init(h, cfg)?;
    let mut outputs = Vec::with_capacity(ucfg.layers);
    let mut gammas = vec![0.0; ucfg.pgd_steps];
    for l in 0..ucfg.layers {
        let rx = ReceiverState::compute(h, &v, cfg);
        for (k, g) in gammas.iter_mut().enumerate() {
            *g = steps.effective(l, k, ucfg);
        }
        v = pgd_inner(h, &rx.w, &rx.u, &v, &gammas, cfg);
        if !v.matrix().is_finite() {
            return Err(Error::NonFinite {
                layer: l,
                step: ucfg.pgd_steps - 1,
            });
        }
        outputs.push(v.clone());
    }
    Ok(outputs)
}

/// Largest eigenvalue of `A`, handy for picking a provably descending step.
pub fn lipschitz_bound(h: &Channel, w: &[f64], u: &[C64], cfg: &SystemConfig) -> Result<f64> {
    let a = build_a(h, w, u, cfg);
    let eig = crate::numkit::herm_eig(&a)?;
    Ok(eig.eigvals.last().copied().unwrap_or(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_channel, wsr, RngStream};
    use crate::numkit::trace_gram;
    use crate::wmmse::{inner_cost, update_v_exact, update_v_exact_with_mu};

    fn cfg4(snr_db: f64) -> SystemConfig {
        SystemConfig::from_snr_db(4, 4, snr_db).unwrap()
    }

    fn random_v(cfg: &SystemConfig, seed: u64, s: u64, scale: f64) -> Beamformer {
        Beamformer::new(sample_channel(cfg, RngStream::new(seed, s)).matrix().scaled(scale))
    }

    /// The textbook two-case projection, kept only as a reference.
    fn project_two_case(v: &Beamformer, p: f64) -> Beamformer {
        if v.power() <= p {
            v.clone()
        } else {
            Beamformer::new(v.matrix().scaled(p.sqrt() / frob_norm(v.matrix())))
        }
    }

    #[test]
    fn gradient_zero_when_receiver_and_beams_vanish() {
        let cfg = cfg4(10.0);
        let h = sample_channel(&cfg, RngStream::new(1, 0));
        let g = pgd_gradient(&h, &[1.5; 4], &[C64::new(0.0, 0.0); 4], &Beamformer::zeros(&cfg), &cfg);
        assert_eq!(g, CMatrix::zeros(4, 4));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = cfg4(10.0).with_priorities(vec![1.0, 0.5, 2.0, 1.3]).unwrap();
        let step = 1e-6;
        for s in 0..100 {
            let h = sample_channel(&cfg, RngStream::new(2, s));
            let v = random_v(&cfg, 3, s, 0.8);
            let rx = ReceiverState::compute(&h, &random_v(&cfg, 4, s, 1.0), &cfg);
            let g = pgd_gradient(&h, &rx.w, &rx.u, &v, &cfg);
            let f = |m: &CMatrix| inner_cost(&h, &rx.w, &rx.u, &Beamformer::new(m.clone()), &cfg);
            let mut fd = CMatrix::zeros(4, 4);
            for idx in 0..16 {
                let mut partial = [0.0; 2];
                for (slot, dir) in [C64::new(1.0, 0.0), C64::new(0.0, 1.0)].into_iter().enumerate() {
                    let mut up = v.matrix().clone();
                    let mut dn = v.matrix().clone();
                    up.as_mut_slice()[idx] += dir * step;
                    dn.as_mut_slice()[idx] -= dir * step;
                    partial[slot] = (f(&up) - f(&dn)) / (2.0 * step);
                }
                fd.as_mut_slice()[idx] = C64::new(partial[0], partial[1]);
            }
            let err = frob_norm(&fd.sub(&g));
            assert!(err <= 1e-6 * frob_norm(&g).max(1.0), "instance {s}: {err}");
        }
    }

    #[test]
    fn kkt_stationarity_at_exact_solution() {
        let cfg = cfg4(10.0);
        let mut checked = 0;
        for s in 0..100 {
            let h = sample_channel(&cfg, RngStream::new(5, s));
            let rx = ReceiverState::compute(&h, &random_v(&cfg, 6, s, 1.0), &cfg);
            let (v, mu) = update_v_exact_with_mu(&h, &rx.w, &rx.u, &cfg).unwrap();
            if mu == 0.0 {
                continue;
            }
            checked += 1;
            let g = pgd_gradient(&h, &rx.w, &rx.u, &v, &cfg);
            let expected = v.matrix().scaled(-2.0 * mu);
            assert!(frob_norm(&g.sub(&expected)) <= 1e-6 * frob_norm(&expected).max(1.0));
        }
        assert!(checked > 50);
    }

    #[test]
    fn projection_cases() {
        let p = 3.0;
        let cfg = SystemConfig::new(4, 4, p, 1.0).unwrap();
        let raw = random_v(&cfg, 7, 0, 1.0);
        let inside = Beamformer::new(raw.matrix().scaled((p / 2.0 / raw.power()).sqrt()));
        assert_eq!(project_power(&inside, p), inside);
        let outside = Beamformer::new(raw.matrix().scaled(2.0 * p.sqrt() / frob_norm(raw.matrix())));
        let projected = project_power(&outside, p);
        assert!((projected.power() - p).abs() <= 1e-12 * p);
        let twice = project_power(&projected, p);
        assert!(frob_norm(&twice.matrix().sub(projected.matrix())) <= 1e-15 * p.sqrt() * 4.0);
    }

    proptest::proptest! {
        #[test]
        fn branch_free_projection_agrees_with_two_case(
            entries in proptest::collection::vec(-5.0f64..5.0, 32),
            p in 0.1f64..50.0,
        ) {
            let data = entries.chunks(2).map(|c| C64::new(c[0], c[1])).collect();
            let v = Beamformer::new(CMatrix::from_vec(4, 4, data).unwrap());
            let a = project_power(&v, p);
            let b = project_two_case(&v, p);
            let err = frob_norm(&a.matrix().sub(b.matrix()));
            proptest::prop_assert!(err <= 1e-14 * frob_norm(v.matrix()).max(1.0));
            proptest::prop_assert!(a.power() <= p * (1.0 + 1e-12));
        }
    }

    #[test]
    fn zero_steps_leave_feasible_point() {
        let cfg = cfg4(10.0);
        let h = sample_channel(&cfg, RngStream::new(8, 0));
        let v = matched_filter_init(&h, &cfg).unwrap();
        let rx = ReceiverState::compute(&h, &v, &cfg);
        let out = pgd_inner(&h, &rx.w, &rx.u, &v, &[0.0; 4], &cfg);
        assert_eq!(out, v);
    }

    #[test]
    fn single_step_from_zero() {
        let cfg = cfg4(10.0);
        let h = sample_channel(&cfg, RngStream::new(9, 0));
        let rx = ReceiverState::compute(&h, &random_v(&cfg, 10, 0, 1.0), &cfg);
        let gamma = 0.37;
        let out = pgd_inner(&h, &rx.w, &rx.u, &Beamformer::zeros(&cfg), &[gamma], &cfg);
        let expected = CMatrix::from_fn(4, 4, |i, m| rx.u[i] * h.user(i)[m] * (2.0 * gamma * rx.w[i]));
        let expected = project_power(&Beamformer::new(expected), cfg.max_power);
        assert!(frob_norm(&out.matrix().sub(expected.matrix())) <= 1e-12);
    }

    #[test]
    fn long_pgd_reaches_exact_inner_solution() {
        for snr in [5.0, 10.0, 20.0] {
            let cfg = cfg4(snr);
            for s in 0..20 {
                let h = sample_channel(&cfg, RngStream::new(11, s));
                let v0 = matched_filter_init(&h, &cfg).unwrap();
                let rx = ReceiverState::compute(&h, &v0, &cfg);
                let lmax = lipschitz_bound(&h, &rx.w, &rx.u, &cfg).unwrap();
                let gamma = 0.9 / (2.0 * lmax);
                let pgd = pgd_inner(&h, &rx.w, &rx.u, &v0, &vec![gamma; 200], &cfg);
                let exact = update_v_exact(&h, &rx.w, &rx.u, &cfg).unwrap();
                let gap = inner_cost(&h, &rx.w, &rx.u, &pgd, &cfg) - inner_cost(&h, &rx.w, &rx.u, &exact, &cfg);
                assert!(gap.abs() <= 1e-6, "snr {snr} instance {s}: gap {gap}");
            }
        }
    }

    #[test]
    fn small_steps_descend_and_stay_feasible() {
        let cfg = cfg4(10.0);
        for s in 0..100 {
            let h = sample_channel(&cfg, RngStream::new(12, s));
            let v0 = random_v(&cfg, 13, s, 2.0);
            let rx = ReceiverState::compute(&h, &v0, &cfg);
            let gamma = 1.0 / (2.0 * lipschitz_bound(&h, &rx.w, &rx.u, &cfg).unwrap());
            let mut v = project_power(&v0, cfg.max_power);
            let mut last = inner_cost(&h, &rx.w, &rx.u, &v, &cfg);
            for _ in 0..8 {
                v = pgd_inner(&h, &rx.w, &rx.u, &v, &[gamma], &cfg);
                assert!(trace_gram(v.matrix()) <= cfg.max_power + 1e-12);
                let now = inner_cost(&h, &rx.w, &rx.u, &v, &cfg);
                assert!(now <= last + 1e-10);
                last = now;
            }
        }
    }

    #[test]
    fn forward_with_zero_steps_repeats_initialisation() {
        let cfg = cfg4(10.0);
        let ucfg = UnfoldConfig::new(3, 4).unwrap();
        let h = sample_channel(&cfg, RngStream::new(14, 0));
        let outs = forward(&h, &StepSizes::filled(3, 4, 0.0), &cfg, &ucfg).unwrap();
        let init = matched_filter_init(&h, &cfg).unwrap();
        assert_eq!(outs.len(), 3);
        for v in outs {
            assert_eq!(v, init);
        }
    }

    #[test]
    fn forward_outputs_feasible() {
        let cfg = cfg4(20.0);
        let ucfg = UnfoldConfig::new(4, 5).unwrap();
        let steps = StepSizes::from_values(4, 5, (0..20).map(|i| 0.05 * i as f64 - 0.3).collect()).unwrap();
        for s in 0..50 {
            let h = sample_channel(&cfg, RngStream::new(15, s));
            for v in forward(&h, &steps, &cfg, &ucfg).unwrap() {
                assert!(v.power() <= cfg.max_power + 1e-12);
                assert!(wsr(&h, &v, &cfg).is_finite());
            }
        }
    }

    #[test]
    fn tied_mode_matches_constant_rows() {
        let cfg = cfg4(10.0);
        let ucfg = UnfoldConfig::new(3, 4).unwrap();
        let mut steps = StepSizes::filled(3, 4, 0.0);
        for l in 0..3 {
            for k in 0..4 {
                steps.set(l, k, 0.1 + 0.2 * l as f64);
            }
        }
        for s in 0..20 {
            let h = sample_channel(&cfg, RngStream::new(16, s));
            let a = forward(&h, &steps, &cfg, &ucfg).unwrap();
            let b = forward(&h, &steps, &cfg, &ucfg.tied(true)).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!(frob_norm(&x.matrix().sub(y.matrix())) <= 1e-15);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let cfg = cfg4(10.0);
        let h = sample_channel(&cfg, RngStream::new(17, 0));
        let ucfg = UnfoldConfig::new(2, 4).unwrap();
        assert!(matches!(
            forward(&h, &StepSizes::filled(3, 4, 1.0), &cfg, &ucfg),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(UnfoldConfig::new(0, 4).is_err());
    }

    #[test]
    fn appended_zero_steps_do_not_change_output() {
        let cfg = cfg4(20.0);
        let ucfg = UnfoldConfig::new(2, 4).unwrap();
        let steps = StepSizes::from_values(2, 4, vec![0.3, 0.1, 0.2, 0.05, 0.4, 0.2, 0.1, 0.3]).unwrap();
        let extended = steps.with_appended_steps(2, 0.0);
        let ucfg6 = UnfoldConfig::new(2, 6).unwrap();
        for s in 0..20 {
            let h = sample_channel(&cfg, RngStream::new(18, s));
            let a = forward(&h, &steps, &cfg, &ucfg).unwrap();
            let b = forward(&h, &extended, &cfg, &ucfg6).unwrap();
            assert_eq!(a, b);
        }
    }
}
