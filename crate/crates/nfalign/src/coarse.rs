//! Stage one of the alignment: estimate the source range from total received
//! energy via maximum likelihood, then locate the energy-spread window with a
//! penalized sliding-window search over the per-beam powers.

use num_complex::Complex64;

use crate::channel::{grid_angle, ArrayConfig};
use crate::numerics::{epsilon_subspace, spread_half_width};
use crate::{Error, Result};

/// Floor applied to the estimated channel gain so the range inversion stays
/// total when the measured energy is at or below the noise floor.
const GAIN_FLOOR: f64 = 1e-30;

/// Outcome of the coarse stage.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseResult {
    /// Window center beam index, 1-based.
    pub center_index: usize,
    /// Window half-width g at the center.
    pub half_width: usize,
    /// Range estimate in meters, clamped to the served interval.
    pub range_est: f64,
    /// Grid angle of the center beam.
    pub angle_est: f64,
    /// Circularly contiguous beam indices of the detected window,
    /// length `2 * half_width + 1`.
    pub subspace: Vec<usize>,
    /// Objective value attained by the winning window.
    pub objective: f64,
}

/// Default asymmetry penalty: `gamma = P_t / 10^exponent` in linear mW.
#[inline]
pub fn default_gamma(p_t_mw: f64, exponent: f64) -> f64 {
    p_t_mw / 10f64.powf(exponent)
}

/// Maximum-likelihood estimate of the channel gain `||h||^2` from the total
/// received energy: `E_y = (||y||^2 - N sigma^2) / P_t`, then
/// `E_h = -1/SNR + sqrt((1/SNR)^2 + E_y^2)` with `SNR = P_t / sigma^2`.
/// Positive by construction (floored at 1e-30 when `E_y <= 0` degenerates).
pub fn estimate_channel_gain(y: &[Complex64], p_t_mw: f64, sigma2_mw: f64) -> Result<f64> {
    if !(p_t_mw > 0.0) || !(sigma2_mw >= 0.0) {
        return Err(Error::Domain("powers must be positive (noise may be zero)".into()));
    }
    let total: f64 = y.iter().map(|v| v.norm_sqr()).sum();
    let mut ops = 0u64;
    Ok(gain_from_total(total, y.len(), p_t_mw, sigma2_mw, &mut ops))
}

fn gain_from_total(total: f64, n: usize, p_t_mw: f64, sigma2_mw: f64, ops: &mut u64) -> f64 {
    let e_y = (total - n as f64 * sigma2_mw) / p_t_mw;
    let inv_snr = sigma2_mw / p_t_mw;
    let e_h = -inv_snr + (inv_snr * inv_snr + e_y * e_y).sqrt();
    *ops += 10; // mul, sub, div; div; 2 mul, add, sqrt, add; max
    e_h.max(GAIN_FLOOR)
}

/// Invert the free-space path loss for the range and clamp to the served
/// interval: `r = clamp(lambda/(4 pi) * sqrt(N / E_h), r_min, r_max)`.
pub fn estimate_range(e_h_hat: f64, cfg: &ArrayConfig) -> Result<f64> {
    if !(e_h_hat > 0.0) {
        return Err(Error::Domain(format!("channel gain {e_h_hat} must be positive")));
    }
    let mut ops = 0u64;
    Ok(range_from_gain(e_h_hat, cfg, &mut ops))
}

fn range_from_gain(e_h_hat: f64, cfg: &ArrayConfig, ops: &mut u64) -> f64 {
    let scale = cfg.wavelength() / (4.0 * std::f64::consts::PI);
    let raw = scale * (cfg.n_antennas as f64 / e_h_hat).sqrt();
    *ops += 7; // scale const (2); div, sqrt, mul; min, max
    raw.clamp(cfg.r_min_m, cfg.r_max_m)
}

/// Energy-spread half-width of a window centered on beam `i` under range
/// hypothesis `r_hat`, capped so the window never exceeds the grid.
pub fn window_half_width(i: usize, r_hat: f64, epsilon: f64, cfg: &ArrayConfig) -> Result<usize> {
    let n = cfg.n_antennas;
    if i < 1 || i > n {
        return Err(Error::Domain(format!("beam index {i} outside 1..={n}")));
    }
    if !(r_hat > 0.0) {
        return Err(Error::Domain(format!("range hypothesis {r_hat} must be positive")));
    }
    let theta = grid_angle(i, cfg);
    let nf = n as f64;
    let delta2 =
        nf * nf * std::f64::consts::PI * cfg.spacing() * (1.0 - theta * theta) / (2.0 * r_hat);
    if delta2 <= 0.0 {
        return Ok(0);
    }
    Ok(spread_half_width(delta2.sqrt(), epsilon)?.min((n - 1) / 2))
}

/// Per-beam window half-widths for every center hypothesis. The grid angles
/// are mirror-symmetric, so only half the entries need the square root.
fn half_widths(n: usize, r_hat: f64, epsilon: f64, cfg: &ArrayConfig, ops: &mut u64) -> Vec<usize> {
    let nf = n as f64;
    // Width is floor(sqrt(a(a + b))) with a = K (1 - theta_i^2),
    // K = N^2 d / (4 r_hat), b = 2 / (pi epsilon).
    let k_const = nf * nf * cfg.spacing() / (4.0 * r_hat);
    let b_const = 2.0 / (std::f64::consts::PI * epsilon);
    *ops += 6;
    let cap = (n - 1) / 2;
    let mut g = vec![0usize; n];
    for i in 0..n.div_ceil(2) {
        let theta = grid_angle(i + 1, cfg);
        let a = k_const * (1.0 - theta * theta);
        let l = (a * (a + b_const)).sqrt();
        *ops += 6; // mul, sub, mul; add, mul, sqrt
        let l = (l.floor() as usize).min(cap);
        g[i] = l;
        g[n - 1 - i] = l;
    }
    g
}

/// Circular sum of `len` consecutive powers starting at (possibly negative)
/// 0-based position `start`, via the prefix-sum array.
#[inline]
fn circ_sum(prefix: &[f64], n: usize, start: i64, len: usize, ops: &mut u64) -> f64 {
    if len == 0 {
        return 0.0;
    }
    let s = start.rem_euclid(n as i64) as usize;
    if s + len <= n {
        *ops += 1;
        prefix[s + len] - prefix[s]
    } else {
        let tail = len - (n - s);
        *ops += 2;
        (prefix[n] - prefix[s]) + prefix[tail]
    }
}

fn power_prefix(y: &[Complex64], ops: &mut u64) -> (Vec<f64>, Vec<f64>) {
    let n = y.len();
    let mut power = Vec::with_capacity(n);
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut run = 0.0;
    for v in y {
        let p = v.re * v.re + v.im * v.im;
        power.push(p);
        run += p;
        prefix.push(run);
    }
    *ops += 4 * n as u64; // 2 mul + 1 add per power, 1 add per prefix entry
    (power, prefix)
}

fn p2_core(
    power: &[f64],
    prefix: &[f64],
    r_hat: f64,
    epsilon: f64,
    gamma: f64,
    cfg: &ArrayConfig,
    ops: &mut u64,
) -> (usize, f64) {
    let n = power.len();
    let g = half_widths(n, r_hat, epsilon, cfg, ops);
    let mut best_i = 0usize;
    let mut best_obj = f64::NEG_INFINITY;
    for i in 0..n {
        let gi = g[i];
        let left = circ_sum(prefix, n, i as i64 - gi as i64, gi, ops);
        let right = circ_sum(prefix, n, i as i64 + 1, gi, ops);
        let window = left + right + power[i];
        let asym = (left - right).abs();
        let obj = window - gamma * asym;
        *ops += 7; // add, add; sub, abs; mul, sub; argmax compare
        if obj > best_obj {
            best_obj = obj;
            best_i = i;
        }
    }
    (best_i + 1, best_obj)
}

/// Penalized sliding-window detection over the per-beam powers. Returns the
/// 1-based index maximizing
/// `||y_win||^2 - gamma |  ||y_left||^2 - ||y_right||^2 |`
/// (ties break to the smaller index) and the attained objective. Windows are
/// circular; the prefix-sum pass makes the whole search O(N).
pub fn solve_p2(
    y: &[Complex64],
    r_hat: f64,
    epsilon: f64,
    gamma: f64,
    cfg: &ArrayConfig,
) -> Result<(usize, f64)> {
    if y.len() != cfg.n_antennas {
        return Err(Error::Domain(format!(
            "measurement length {} does not match array size {}",
            y.len(),
            cfg.n_antennas
        )));
    }
    if !(gamma >= 0.0) {
        return Err(Error::Domain(format!("penalty weight {gamma} must be nonnegative")));
    }
    if !(r_hat > 0.0) {
        return Err(Error::Domain(format!("range hypothesis {r_hat} must be positive")));
    }
    let mut ops = 0u64;
    let (power, prefix) = power_prefix(y, &mut ops);
    Ok(p2_core(&power, &prefix, r_hat, epsilon, gamma, cfg, &mut ops))
}

/// Full coarse stage: gain estimate, range inversion, window detection, and
/// the detected window's beam indices.
pub fn coarse_align(
    y: &[Complex64],
    p_t_mw: f64,
    cfg: &ArrayConfig,
    epsilon: f64,
    gamma: f64,
) -> Result<CoarseResult> {
    coarse_align_counted(y, p_t_mw, cfg, epsilon, gamma).map(|(res, _)| res)
}

/// [`coarse_align`] with an instrumented count of elementary floating-point
/// operations (each add/mul/div/sqrt/min/max/abs counts once). Counts are
/// accumulated at each computation site, so branch-dependent work (window
/// wrap-around, mirrored width table) is tracked as executed.
pub fn coarse_align_counted(
    y: &[Complex64],
    p_t_mw: f64,
    cfg: &ArrayConfig,
    epsilon: f64,
    gamma: f64,
) -> Result<(CoarseResult, u64)> {
    if y.len() != cfg.n_antennas {
        return Err(Error::Domain(format!(
            "measurement length {} does not match array size {}",
            y.len(),
            cfg.n_antennas
        )));
    }
    if !(p_t_mw > 0.0) {
        return Err(Error::Domain("transmit power must be positive".into()));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!("epsilon {epsilon} must lie in (0, 1)")));
    }
    let sigma2 = cfg.noise_power_mw();
    let mut ops = 0u64;
    let (power, prefix) = power_prefix(y, &mut ops);
    let e_h = gain_from_total(prefix[cfg.n_antennas], y.len(), p_t_mw, sigma2, &mut ops);
    let r_hat = range_from_gain(e_h, cfg, &mut ops);
    let (center, objective) = p2_core(&power, &prefix, r_hat, epsilon, gamma, cfg, &mut ops);
    let subspace = epsilon_subspace(center, r_hat, epsilon, cfg)?;
    let result = CoarseResult {
        center_index: center,
        half_width: (subspace.len() - 1) / 2,
        range_est: r_hat,
        angle_est: grid_angle(center, cfg),
        subspace,
        objective,
    };
    Ok((result, ops))
}
