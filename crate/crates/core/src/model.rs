//! MISO downlink problem instances: configuration, channel sampling, SINR and
//! weighted sum rate, matched-filter initialisation.
//!
//! Channels and beamformers are stored as `N x M` matrices whose `i`-th row is
//! the user's vector itself (not its conjugate). The received amplitude of beam
//! `j` at user `i` is therefore `h_iᴴ v_j = Σ_m conj(H[i,m]) V[j,m]`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numkit::{dot_conj, trace_gram, CMatrix, C64};

/// Problem dimensions, power budget, noise power and user priorities.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub num_tx_antennas: usize,
    pub num_users: usize,
    pub max_power: f64,
    pub noise_power: f64,
    pub priorities: Vec<f64>,
}

impl SystemConfig {
    /// Unit priorities.
    pub fn new(num_tx_antennas: usize, num_users: usize, max_power: f64, noise_power: f64) -> Result<Self> {
        let cfg = Self {
            num_tx_antennas,
            num_users,
            max_power,
            noise_power,
            priorities: vec![1.0; num_users],
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `σ² = 1` and `P = 10^(snr_db / 10)`.
    pub fn from_snr_db(num_tx_antennas: usize, num_users: usize, snr_db: f64) -> Result<Self> {
        Self::new(num_tx_antennas, num_users, snr_db_to_power(snr_db), 1.0)
    }

    pub fn with_priorities(mut self, priorities: Vec<f64>) -> Result<Self> {
        self.priorities = priorities;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_tx_antennas == 0 || self.num_users == 0 {
            return bad("need at least one antenna and one user".into());
        }
        if !(self.max_power > 0.0 && self.max_power.is_finite()) {
            return bad(format!("max power must be positive, got {}", self.max_power));
        }
        if !(self.noise_power > 0.0 && self.noise_power.is_finite()) {
            return bad(format!("noise power must be positive, got {}", self.noise_power));
        }
        if self.priorities.len() != self.num_users {
            return bad(format!(
                "{} priorities for {} users",
                self.priorities.len(),
                self.num_users
            ));
        }
        if self.priorities.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return bad("priorities must be positive".into());
        }
        Ok(())
    }
}

pub fn snr_db_to_power(snr_db: f64) -> f64 {
    10f64.powf(snr_db / 10.0)
}

/// Per-user channel vectors, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel(CMatrix);

impl Channel {
    pub fn new(h: CMatrix) -> Self {
        Self(h)
    }

    pub fn checked(h: CMatrix, cfg: &SystemConfig) -> Result<Self> {
        if h.shape() != (cfg.num_users, cfg.num_tx_antennas) {
            return Err(Error::Dimension(format!(
                "channel is {:?}, config expects {}x{}",
                h.shape(),
                cfg.num_users,
                cfg.num_tx_antennas
            )));
        }
        Ok(Self(h))
    }

    #[inline]
    pub fn user(&self, i: usize) -> &[C64] {
        self.0.row(i)
    }

    pub fn num_users(&self) -> usize {
        self.0.rows()
    }

    pub fn num_antennas(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }
}

/// Per-user transmit vectors, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Beamformer(CMatrix);

impl Beamformer {
    pub fn new(v: CMatrix) -> Self {
        Self(v)
    }

    pub fn zeros(cfg: &SystemConfig) -> Self {
        Self(CMatrix::zeros(cfg.num_users, cfg.num_tx_antennas))
    }

    #[inline]
    pub fn beam(&self, i: usize) -> &[C64] {
        self.0.row(i)
    }

    #[inline]
    pub fn beam_mut(&mut self, i: usize) -> &mut [C64] {
        self.0.row_mut(i)
    }

    /// `Tr(V Vᴴ)`.
    pub fn power(&self) -> f64 {
        trace_gram(&self.0)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn matrix_mut(&mut self) -> &mut CMatrix {
        &mut self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }
}

/// Seed plus stream id for a ChaCha8 generator.
///
/// ChaCha is counter based, so each `(seed, stream)` pair is an independent
/// sequence and workers never share generator state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// I.i.d. `CN(0, 1)` entries: real and imaginary parts are `N(0, 1/2)`.
pub fn sample_channel(cfg: &SystemConfig, stream: RngStream) -> Channel {
    let mut rng = stream.rng();
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let h = CMatrix::from_fn(cfg.num_users, cfg.num_tx_antennas, |_, _| {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        C64::new(re * scale, im * scale)
    });
    Channel(h)
}

/// `g[i][j] = h_iᴴ v_j`, flattened row-major as an `N x N` table.
pub fn cross_gains(h: &Channel, v: &Beamformer) -> Vec<C64> {
    let n = h.num_users();
    let mut g = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            g.push(dot_conj(h.user(i), v.beam(j)));
        }
    }
    g
}

/// Received power terms for user `i`: (`|h_iᴴ v_i|²`, total received power plus noise).
#[inline]
pub(crate) fn signal_and_total(gains: &[C64], n: usize, i: usize, noise: f64) -> (f64, f64) {
    let row = &gains[i * n..(i + 1) * n];
    let total: f64 = row.iter().map(|g| g.norm_sqr()).sum::<f64>() + noise;
    (row[i].norm_sqr(), total)
}

pub fn sinr(h: &Channel, v: &Beamformer, cfg: &SystemConfig, i: usize) -> Result<f64> {
    let n = h.num_users();
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i, len: n });
    }
    let signal = dot_conj(h.user(i), v.beam(i)).norm_sqr();
    let interference: f64 = (0..n)
        .filter(|&j| j != i)
        .map(|j| dot_conj(h.user(i), v.beam(j)).norm_sqr())
        .sum();
    Ok(signal / (interference + cfg.noise_power))
}

/// Weighted sum rate `Σ α_i log2(1 + SINR_i)`.
pub fn wsr(h: &Channel, v: &Beamformer, cfg: &SystemConfig) -> f64 {
    let n = h.num_users();
    let gains = cross_gains(h, v);
    (0..n)
        .map(|i| {
            let (signal, total) = signal_and_total(&gains, n, i, cfg.noise_power);
            let interference = total - signal;
            cfg.priorities[i] * (total / interference).log2()
        })
        .sum()
}

/// `V = a H` with `a` chosen so that the power budget is met with equality.
pub fn matched_filter_init(h: &Channel, cfg: &SystemConfig) -> Result<Beamformer> {
    let energy = trace_gram(h.matrix());
    if energy == 0.0 || !energy.is_finite() {
        return Err(Error::Degenerate("matched filter needs a nonzero channel"));
    }
    let a = (cfg.max_power / energy).sqrt();
    Ok(Beamformer(h.matrix().scaled(a)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::CMatrix;
    use rand::Rng;

    fn cfg(m: usize, n: usize, p: f64) -> SystemConfig {
        SystemConfig::new(m, n, p, 1.0).unwrap()
    }

    #[test]
    fn channel_statistics() {
        let c = cfg(10, 10, 1.0);
        let draws = 1000; // 10^5 entries
        let mut sum = C64::new(0.0, 0.0);
        let mut power = 0.0;
        let mut re2 = 0.0;
        for s in 0..draws {
            let h = sample_channel(&c, RngStream::new(5, s));
            for z in h.matrix().as_slice() {
                sum += z;
                power += z.norm_sqr();
                re2 += z.re * z.re;
            }
        }
        let count = (draws * 100) as f64;
        assert!((power / count - 1.0).abs() < 0.02, "{}", power / count);
        assert!((re2 / count - 0.5).abs() < 0.01);
        assert!(sum.re.abs() / count < 0.02 && sum.im.abs() / count < 0.02);
    }

    #[test]
    fn sampling_is_reproducible_and_stream_dependent() {
        let c = cfg(4, 4, 1.0);
        let a = sample_channel(&c, RngStream::new(1, 2));
        let b = sample_channel(&c, RngStream::new(1, 2));
        let other = sample_channel(&c, RngStream::new(1, 3));
        assert_eq!(a, b);
        assert_ne!(a, other);
    }

    #[test]
    fn sinr_examples() {
        let c = cfg(4, 2, 4.0);
        let h = sample_channel(&c, RngStream::new(0, 0));
        assert_eq!(sinr(&h, &Beamformer::zeros(&c), &c, 0).unwrap(), 0.0);
        assert!(matches!(
            sinr(&h, &Beamformer::zeros(&c), &c, 2),
            Err(Error::IndexOutOfRange { .. })
        ));

        // single user, aligned beam at full power
        let c1 = cfg(4, 1, 2.5);
        let h1 = sample_channel(&c1, RngStream::new(9, 1));
        let energy = trace_gram(h1.matrix());
        let v = Beamformer::new(h1.matrix().scaled((2.5 / energy).sqrt()));
        let s = sinr(&h1, &v, &c1, 0).unwrap();
        assert!((s - 2.5 * energy).abs() < 1e-12 * s);

        // orthogonal interferer: h1 = e1, v1 = sqrt(2) e1, v2 = e2
        let c2 = cfg(2, 2, 10.0);
        let h2 = Channel::new(CMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let v2 = Beamformer::new(CMatrix::from_real_rows(&[&[2f64.sqrt(), 0.0], &[0.0, 1.0]]));
        assert!((sinr(&h2, &v2, &c2, 0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn wsr_examples() {
        let c = cfg(4, 4, 1.0);
        let h = sample_channel(&c, RngStream::new(0, 0));
        assert_eq!(wsr(&h, &Beamformer::zeros(&c), &c), 0.0);

        // SINR 3 for a single user gives log2(4)
        let c1 = cfg(1, 1, 10.0);
        let h1 = Channel::new(CMatrix::from_real_rows(&[&[1.0]]));
        let v1 = Beamformer::new(CMatrix::from_real_rows(&[&[3f64.sqrt()]]));
        assert!((wsr(&h1, &v1, &c1) - 2.0).abs() < 1e-12);

        // four decoupled users at SINR 1
        let eye = CMatrix::identity(4);
        let h4 = Channel::new(eye.clone());
        let v4 = Beamformer::new(eye);
        assert!((wsr(&h4, &v4, &c) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn wsr_phase_invariance() {
        let c = cfg(4, 4, 10.0);
        let mut rng = rand::rng();
        for s in 0..200 {
            let h = sample_channel(&c, RngStream::new(21, s));
            let v = Beamformer::new(sample_channel(&c, RngStream::new(22, s)).matrix().clone());
            let base = wsr(&h, &v, &c);
            let mut rotated = v.clone();
            let i = (s as usize) % 4;
            let phase = C64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU));
            for z in rotated.beam_mut(i) {
                *z *= phase;
            }
            assert!((wsr(&h, &rotated, &c) - base).abs() <= 1e-10);
        }
    }

    #[test]
    fn sinr_increases_with_signal_power() {
        let c = cfg(4, 3, 10.0);
        for s in 0..50 {
            let h = sample_channel(&c, RngStream::new(31, s));
            let mut v = Beamformer::new(sample_channel(&c, RngStream::new(32, s)).matrix().clone());
            // v_0 = t h_0 + r with r ⟂ h_0; interference at user 0 does not involve v_0
            let h0: Vec<C64> = h.user(0).to_vec();
            let along = dot_conj(&h0, v.beam(0)) / crate::numkit::norm_sqr(&h0);
            let residual: Vec<C64> = v.beam(0).iter().zip(&h0).map(|(z, hz)| z - hz * along).collect();
            let mut last = -1.0;
            for t in [0.0, 0.1, 0.5, 1.0, 2.0, 5.0] {
                for ((z, r), hz) in v.beam_mut(0).iter_mut().zip(&residual).zip(&h0) {
                    *z = r + hz * t;
                }
                let now = sinr(&h, &v, &c, 0).unwrap();
                assert!(now > last);
                last = now;
            }
        }
    }

    #[test]
    fn matched_filter() {
        let c = cfg(4, 4, 4.0);
        for s in 0..100 {
            let h = sample_channel(&c, RngStream::new(2, s));
            let v = matched_filter_init(&h, &c).unwrap();
            assert!((v.power() - 4.0).abs() <= 1e-12 * 4.0);
            let scaled = Channel::new(h.matrix().scaled(10.0));
            let v10 = matched_filter_init(&scaled, &c).unwrap();
            let diff = crate::numkit::frob_norm(&v10.matrix().sub(v.matrix()));
            assert!(diff < 1e-12);
        }
        let eye = Channel::new(CMatrix::identity(4));
        assert_eq!(matched_filter_init(&eye, &c).unwrap().matrix(), &CMatrix::identity(4));
        let zero = Channel::new(CMatrix::zeros(4, 4));
        assert!(matches!(matched_filter_init(&zero, &c), Err(Error::Degenerate(_))));
    }

    #[test]
    fn config_validation() {
        assert!(SystemConfig::new(0, 4, 1.0, 1.0).is_err());
        assert!(SystemConfig::new(4, 4, -1.0, 1.0).is_err());
        assert!(SystemConfig::new(4, 4, 1.0, 0.0).is_err());
        assert!(cfg(4, 2, 1.0).with_priorities(vec![1.0]).is_err());
        assert!(cfg(4, 2, 1.0).with_priorities(vec![1.0, 0.0]).is_err());
        let c = SystemConfig::from_snr_db(4, 4, 10.0).unwrap();
        assert!((c.max_power - 10.0).abs() < 1e-12);
    }
}
