//! Array geometry, near-field channel model, DFT and polar codebooks, and the
//! noisy measurement model.
//!
//! Conventions: angles are carried as spatial angles `theta = sin(phi)` in
//! `[-1, 1]`; powers are carried in linear milliwatts internally, with dBm
//! conversions only at the configuration and reporting boundaries.

use num_complex::Complex64;

use crate::rng::TrialRng;
use crate::{Error, Result};

/// Propagation speed used for wavelength math (m/s).
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

pub type Cvec = Vec<Complex64>;

/// dBm to linear milliwatts.
#[inline]
pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Linear milliwatts to dBm.
#[inline]
pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Uniform linear array geometry and radio constants.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayConfig {
    /// Number of antennas N (>= 2).
    pub n_antennas: usize,
    /// Carrier frequency in Hz.
    pub carrier_hz: f64,
    /// System bandwidth in Hz (sets the noise power).
    pub bandwidth_hz: f64,
    /// Noise power spectral density in dBm/Hz.
    pub noise_psd_dbm_per_hz: f64,
    /// Minimum served range in meters.
    pub r_min_m: f64,
    /// Maximum served range in meters.
    pub r_max_m: f64,
}

impl ArrayConfig {
    pub fn new(
        n_antennas: usize,
        carrier_hz: f64,
        bandwidth_hz: f64,
        noise_psd_dbm_per_hz: f64,
        r_min_m: f64,
        r_max_m: f64,
    ) -> Result<Self> {
        if n_antennas < 2 {
            return Err(Error::Domain(format!("need at least 2 antennas, got {n_antennas}")));
        }
        if !(carrier_hz > 0.0) || !(bandwidth_hz > 0.0) {
            return Err(Error::Domain("carrier and bandwidth must be positive".into()));
        }
        if !(r_min_m > 0.0) || !(r_min_m < r_max_m) {
            return Err(Error::Domain(format!(
                "range bounds must satisfy 0 < r_min < r_max, got [{r_min_m}, {r_max_m}]"
            )));
        }
        Ok(ArrayConfig {
            n_antennas,
            carrier_hz,
            bandwidth_hz,
            noise_psd_dbm_per_hz,
            r_min_m,
            r_max_m,
        })
    }

    /// Defaults used throughout the evaluation: 256 antennas at 28 GHz,
    /// 850 MHz bandwidth, -174 dBm/Hz noise density, ranges 4..80 m.
    pub fn default_256() -> Self {
        ArrayConfig::new(256, 28.0e9, 850.0e6, -174.0, 4.0, 80.0).unwrap()
    }

    /// Carrier wavelength in meters.
    #[inline]
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    /// Half-wavelength element spacing in meters.
    #[inline]
    pub fn spacing(&self) -> f64 {
        self.wavelength() / 2.0
    }

    /// Aperture size D = (N-1) d in meters.
    #[inline]
    pub fn aperture(&self) -> f64 {
        (self.n_antennas as f64 - 1.0) * self.spacing()
    }

    /// Rayleigh distance 2 D^2 / lambda in meters.
    #[inline]
    pub fn rayleigh_distance(&self) -> f64 {
        let d = self.aperture();
        2.0 * d * d / self.wavelength()
    }

    /// Noise power in linear milliwatts over the configured bandwidth.
    #[inline]
    pub fn noise_power_mw(&self) -> f64 {
        dbm_to_mw(self.noise_power_dbm())
    }

    /// Noise power in dBm: PSD + 10 log10(bandwidth).
    #[inline]
    pub fn noise_power_dbm(&self) -> f64 {
        self.noise_psd_dbm_per_hz + 10.0 * self.bandwidth_hz.log10()
    }

    /// Signed element offset index for antenna `n` (1-based):
    /// `delta_n = (2n - N - 1) / 2`, so elements sit at `delta_n * d`.
    #[inline]
    pub fn delta_n(&self, n: usize) -> f64 {
        (2.0 * n as f64 - self.n_antennas as f64 - 1.0) / 2.0
    }
}

/// User position: physical angle, its spatial sine, and range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UePosition {
    /// Physical angle in radians, in [-pi/2, pi/2].
    pub phi: f64,
    /// Spatial angle theta = sin(phi), in [-1, 1].
    pub theta: f64,
    /// Range from the array reference point in meters.
    pub r: f64,
}

impl UePosition {
    pub fn from_phi(phi: f64, r: f64) -> Result<Self> {
        if !(phi.abs() <= std::f64::consts::FRAC_PI_2) {
            return Err(Error::Domain(format!("phi {phi} outside [-pi/2, pi/2]")));
        }
        if !(r > 0.0) {
            return Err(Error::Domain(format!("range {r} must be positive")));
        }
        Ok(UePosition { phi, theta: phi.sin(), r })
    }

    pub fn from_theta(theta: f64, r: f64) -> Result<Self> {
        if !(theta.abs() <= 1.0) {
            return Err(Error::Domain(format!("theta {theta} outside [-1, 1]")));
        }
        if !(r > 0.0) {
            return Err(Error::Domain(format!("range {r} must be positive")));
        }
        Ok(UePosition { phi: theta.asin(), theta, r })
    }
}

/// Exact distance from antenna `n` (1-based) to a source at `(theta, r)`:
/// `sqrt(r^2 + delta_n^2 d^2 - 2 r delta_n d theta)`.
#[inline]
pub fn element_distance(theta: f64, r: f64, n: usize, cfg: &ArrayConfig) -> f64 {
    let dn = cfg.delta_n(n) * cfg.spacing();
    (r * r + dn * dn - 2.0 * r * dn * theta).sqrt()
}

/// Near-field steering vector with entries
/// `(1/sqrt(N)) exp(+j (2 pi / lambda) (r_n - r))`.
pub fn steering_vector(theta: f64, r: f64, cfg: &ArrayConfig) -> Result<Cvec> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("steering range {r} must be positive")));
    }
    if !(theta.abs() <= 1.0) {
        return Err(Error::Domain(format!("spatial angle {theta} outside [-1, 1]")));
    }
    let n = cfg.n_antennas;
    let k = 2.0 * std::f64::consts::PI / cfg.wavelength();
    let norm = 1.0 / (n as f64).sqrt();
    Ok((1..=n)
        .map(|i| {
            let phase = k * (element_distance(theta, r, i, cfg) - r);
            Complex64::from_polar(norm, phase)
        })
        .collect())
}

/// Line-of-sight channel `h = sqrt(N) h0 exp(-j 2 pi r / lambda) a(theta, r)`
/// with free-space path loss `h0 = lambda / (4 pi r)`.
pub fn channel(ue: &UePosition, cfg: &ArrayConfig) -> Cvec {
    let lambda = cfg.wavelength();
    let h0 = lambda / (4.0 * std::f64::consts::PI * ue.r);
    let amp = (cfg.n_antennas as f64).sqrt() * h0;
    let global = Complex64::from_polar(amp, -2.0 * std::f64::consts::PI * ue.r / lambda);
    steering_vector(ue.theta, ue.r, cfg)
        .expect("UePosition invariants guarantee a valid steering vector")
        .into_iter()
        .map(|e| e * global)
        .collect()
}

/// Spatial angle of DFT beam `m` (1-based): `theta_m = (2m - N - 1) / N`.
#[inline]
pub fn grid_angle(m: usize, cfg: &ArrayConfig) -> f64 {
    (2.0 * m as f64 - cfg.n_antennas as f64 - 1.0) / cfg.n_antennas as f64
}

/// Column `m` (1-based) of the angular codebook, entries
/// `(1/sqrt(N)) exp(-j (2 pi / lambda) delta_n d theta_m)`.
pub fn dft_column(m: usize, cfg: &ArrayConfig) -> Result<Cvec> {
    let n = cfg.n_antennas;
    if m < 1 || m > n {
        return Err(Error::Domain(format!("beam index {m} outside 1..={n}")));
    }
    let theta_m = grid_angle(m, cfg);
    let k = 2.0 * std::f64::consts::PI / cfg.wavelength();
    let d = cfg.spacing();
    let norm = 1.0 / (n as f64).sqrt();
    Ok((1..=n)
        .map(|i| Complex64::from_polar(norm, -k * cfg.delta_n(i) * d * theta_m))
        .collect())
}

/// Index of the beam whose grid angle is closest to `theta`;
/// ties break toward the smaller index.
pub fn nearest_grid_index(theta: f64, cfg: &ArrayConfig) -> usize {
    let n = cfg.n_antennas as f64;
    // Invert theta_m = (2m - N - 1)/N, then resolve among the two neighbors.
    let m_real = (n * theta + n + 1.0) / 2.0;
    let lo = (m_real.floor() as i64).clamp(1, cfg.n_antennas as i64) as usize;
    let hi = (lo + 1).min(cfg.n_antennas);
    let d_lo = (theta - grid_angle(lo, cfg)).abs();
    let d_hi = (theta - grid_angle(hi, cfg)).abs();
    if d_hi < d_lo {
        hi
    } else {
        lo
    }
}

/// Circular index mapping: offset `l` (may be negative) from a 1-based
/// `center`, wrapped to 1..=N.
#[inline]
pub fn wrap_index(center: usize, l: i64, n: usize) -> usize {
    (((center as i64 - 1 + l).rem_euclid(n as i64)) + 1) as usize
}

/// Precomputed angular codebook, stored column-wise.
#[derive(Debug, Clone)]
pub struct DftMatrix {
    cols: Vec<Cvec>,
}

impl DftMatrix {
    pub fn new(cfg: &ArrayConfig) -> Self {
        let cols = (1..=cfg.n_antennas)
            .map(|m| dft_column(m, cfg).expect("index in range"))
            .collect();
        DftMatrix { cols }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.cols.len()
    }

    /// Column for beam `m` (1-based).
    #[inline]
    pub fn column(&self, m: usize) -> &Cvec {
        &self.cols[m - 1]
    }

    /// Analysis transform `F^H x`: entry `m` is `f_m^H x`.
    pub fn combine(&self, x: &[Complex64]) -> Cvec {
        self.cols
            .iter()
            .map(|col| col.iter().zip(x).map(|(f, h)| f.conj() * h).sum())
            .collect()
    }

    /// Synthesis transform `F y` (the inverse of [`combine`](Self::combine)
    /// because the codebook is unitary).
    pub fn synthesize(&self, y: &[Complex64]) -> Cvec {
        let n = self.n();
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for (col, ym) in self.cols.iter().zip(y) {
            for (o, f) in out.iter_mut().zip(col) {
                *o += f * ym;
            }
        }
        out
    }
}

/// Full measurement sweep `y = sqrt(P_t) F^H h + z` with
/// `z ~ CN(0, sigma2 I)`. With `sigma2_mw == 0` the result is exactly the
/// noiseless combination.
pub fn measure(
    dft: &DftMatrix,
    h: &[Complex64],
    p_t_mw: f64,
    sigma2_mw: f64,
    rng: &mut TrialRng,
) -> Result<Cvec> {
    if !(p_t_mw > 0.0) || !(sigma2_mw >= 0.0) {
        return Err(Error::Domain("powers must be positive (noise may be zero)".into()));
    }
    let amp = p_t_mw.sqrt();
    let mut y = dft.combine(h);
    for ym in y.iter_mut() {
        let z = if sigma2_mw > 0.0 {
            rng.complex_gaussian(sigma2_mw)
        } else {
            Complex64::new(0.0, 0.0)
        };
        *ym = *ym * amp + z;
    }
    Ok(y)
}

/// One polar-codebook entry: angle index (1-based), ring index (0-based,
/// ring 0 is the far-field column), the ring range (None for far field),
/// and the unit-norm codeword.
#[derive(Debug, Clone)]
pub struct PolarCodeword {
    pub angle_index: usize,
    pub ring_index: usize,
    pub range_m: Option<f64>,
    pub vector: Cvec,
}

/// Ring sampling rule mapping `(theta_m, ring q >= 1)` to a range in meters.
pub type RingRule = fn(theta_m: f64, q: usize, beta: f64, cfg: &ArrayConfig) -> f64;

/// Default ring rule: ranges sampled uniformly in inverse distance,
/// `r_{m,q} = N^2 d^2 (1 - theta_m^2) / (2 beta^2 lambda q)`, which places
/// ring 1 near the far-field boundary and ring Q-1 near the minimum range.
pub fn inverse_range_rings(theta_m: f64, q: usize, beta: f64, cfg: &ArrayConfig) -> f64 {
    let n = cfg.n_antennas as f64;
    let d = cfg.spacing();
    n * n * d * d * (1.0 - theta_m * theta_m)
        / (2.0 * beta * beta * cfg.wavelength() * q as f64)
}

/// Build the polar-domain codebook: `N` angles times `q_levels` rings per
/// angle, angle-major order. Ring 0 of every angle is the plain DFT column.
pub fn polar_codebook(cfg: &ArrayConfig, beta: f64, q_levels: usize) -> Result<Vec<PolarCodeword>> {
    polar_codebook_with_rule(cfg, beta, q_levels, inverse_range_rings)
}

pub fn polar_codebook_with_rule(
    cfg: &ArrayConfig,
    beta: f64,
    q_levels: usize,
    rule: RingRule,
) -> Result<Vec<PolarCodeword>> {
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("beta {beta} must be positive")));
    }
    if q_levels < 1 {
        return Err(Error::Domain("need at least one ring".into()));
    }
    let mut book = Vec::with_capacity(cfg.n_antennas * q_levels);
    for m in 1..=cfg.n_antennas {
        let theta_m = grid_angle(m, cfg);
        for q in 0..q_levels {
            if q == 0 {
                book.push(PolarCodeword {
                    angle_index: m,
                    ring_index: 0,
                    range_m: None,
                    vector: dft_column(m, cfg)?,
                });
            } else {
                let r = rule(theta_m, q, beta, cfg);
                book.push(PolarCodeword {
                    angle_index: m,
                    ring_index: q,
                    range_m: Some(r),
                    vector: steering_vector(theta_m, r, cfg)?,
                });
            }
        }
    }
    Ok(book)
}

/// `x^H y` for complex slices.
#[inline]
pub fn inner(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

/// Measured amplitude of a single pilot combined with a candidate beam:
/// `|sqrt(P_t) a(theta, r)^H h + z|` with one fresh noise draw.
pub fn codeword_probe(
    theta: f64,
    r: f64,
    h: &[Complex64],
    p_t_mw: f64,
    sigma2_mw: f64,
    cfg: &ArrayConfig,
    rng: &mut TrialRng,
) -> f64 {
    let beam = steering_vector(theta, r, cfg).expect("candidate beam parameters are valid");
    let z = if sigma2_mw > 0.0 {
        rng.complex_gaussian(sigma2_mw)
    } else {
        Complex64::new(0.0, 0.0)
    };
    (inner(&beam, h) * p_t_mw.sqrt() + z).norm()
}

/// Euclidean norm of a complex slice.
#[inline]
pub fn norm(x: &[Complex64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}
