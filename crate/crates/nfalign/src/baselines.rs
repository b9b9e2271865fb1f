//! Reference alignment schemes and closed-form complexity models: least
//! squares over the angular sweep, exhaustive search of the polar codebook,
//! the genie-aided polar oracle, support-width joint angle/range estimation,
//! and per-scheme FLOP formulas.

use num_complex::Complex64;

use crate::channel::{
    grid_angle, inner, norm, steering_vector, ArrayConfig, Cvec, DftMatrix, PolarCodeword,
};
use crate::finenet::Architecture;
use crate::numerics::{rho_from_spread, SpreadParams};
use crate::rng::TrialRng;
use crate::{Error, Result};

/// A scheme's chosen downlink beam plus whatever estimates it produces.
#[derive(Debug, Clone)]
pub struct BeamDecision {
    /// Unit-norm combining/precoding vector.
    pub beam: Cvec,
    /// Spatial-angle estimate, when the scheme produces one.
    pub theta_est: Option<f64>,
    /// Range estimate in meters, when the scheme produces one.
    pub r_est: Option<f64>,
    pub scheme: &'static str,
    /// Pilot symbols the scheme spends before data transmission.
    pub pilot_symbols: u32,
}

/// Least squares: invert the unitary sweep, `h_hat = F y / sqrt(P_t)`, and
/// матch-filter it into a unit beam. A zero estimate falls back to the
/// broadside codebook column.
pub fn ls_baseline(y: &[Complex64], p_t_mw: f64, dft: &DftMatrix) -> Result<BeamDecision> {
    if !(p_t_mw > 0.0) {
        return Err(Error::Domain("transmit power must be positive".into()));
    }
    let n = dft.n();
    let scale = 1.0 / p_t_mw.sqrt();
    let mut h_hat = dft.synthesize(y);
    for v in h_hat.iter_mut() {
        *v *= scale;
    }
    let nrm = norm(&h_hat);
    let beam = if nrm > 0.0 {
        h_hat.iter().map(|v| v / nrm).collect()
    } else {
        dft.column(n / 2 + 1).clone()
    };
    Ok(BeamDecision {
        beam,
        theta_est: None,
        r_est: None,
        scheme: "ls",
        pilot_symbols: n as u32,
    })
}

/// Noiseless codeword correlations `a^H h` for every codebook entry, in
/// codebook order. Shared by the exhaustive search and the genie oracle so
/// one scan serves both.
pub fn codebook_dots(h: &[Complex64], codebook: &[PolarCodeword]) -> Vec<Complex64> {
    codebook.iter().map(|cw| inner(&cw.vector, h)).collect()
}

/// Best noiseless normalized gain over the whole codebook.
pub fn genie_polar_best(h: &[Complex64], codebook: &[PolarCodeword]) -> f64 {
    genie_from_dots(&codebook_dots(h, codebook), norm(h))
}

pub fn genie_from_dots(dots: &[Complex64], h_norm: f64) -> f64 {
    dots.iter().map(|d| d.norm()).fold(0.0, f64::max) / h_norm
}

/// Exhaustive polar search: probe every codeword once with fresh noise and
/// keep the loudest, ties to the earlier (angle, ring) pair.
pub fn polar_exhaustive(
    h: &[Complex64],
    p_t_mw: f64,
    sigma2_mw: f64,
    codebook: &[PolarCodeword],
    rng: &mut TrialRng,
) -> Result<BeamDecision> {
    let dots = codebook_dots(h, codebook);
    polar_exhaustive_from_dots(&dots, p_t_mw, sigma2_mw, codebook, rng)
}

/// Fast path when the noiseless correlations are already cached.
pub fn polar_exhaustive_from_dots(
    dots: &[Complex64],
    p_t_mw: f64,
    sigma2_mw: f64,
    codebook: &[PolarCodeword],
    rng: &mut TrialRng,
) -> Result<BeamDecision> {
    if !(p_t_mw > 0.0) || !(sigma2_mw >= 0.0) {
        return Err(Error::Domain("powers must be positive (noise may be zero)".into()));
    }
    if dots.len() != codebook.len() {
        return Err(Error::Domain("correlation cache does not match the codebook".into()));
    }
    let amp = p_t_mw.sqrt();
    let mut best = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    for (i, d) in dots.iter().enumerate() {
        let z = if sigma2_mw > 0.0 {
            rng.complex_gaussian(sigma2_mw)
        } else {
            Complex64::new(0.0, 0.0)
        };
        let meas = (d * amp + z).norm();
        if meas > best_val {
            best_val = meas;
            best = i;
        }
    }
    let chosen = &codebook[best];
    Ok(BeamDecision {
        beam: chosen.vector.clone(),
        theta_est: None,
        r_est: None,
        scheme: "polar-exh",
        pilot_symbols: codebook.len() as u32,
    })
}

/// Precomputed demapping table for the support-width estimator: predicted
/// beam-power ratios `sqrt(rho(l)/rho(0))` on a grid of the normalized range
/// parameter `varpi = sqrt(r / (d (1 - theta^2)))`, which fully determines
/// the spread shape.
#[derive(Debug, Clone)]
pub struct AswjeDemapper {
    varpi_min: f64,
    varpi_step: f64,
    /// `ratios[g][l]` for grid point `g` and beam offset `l`.
    ratios: Vec<Vec<f64>>,
    max_offset: usize,
}

impl AswjeDemapper {
    pub fn new(cfg: &ArrayConfig, max_offset: usize, varpi_step: f64) -> Result<Self> {
        let d = cfg.spacing();
        let n = cfg.n_antennas;
        let varpi_min = (cfg.r_min_m / d).sqrt();
        // The largest grid value any on-grid angle hypothesis can demand.
        let theta_edge = grid_angle(1, cfg);
        let varpi_max = (cfg.r_max_m / (d * (1.0 - theta_edge * theta_edge))).sqrt();
        let points = ((varpi_max - varpi_min) / varpi_step).floor() as usize + 1;
        let mut ratios = Vec::with_capacity(points);
        for g in 0..points {
            let varpi = varpi_min + g as f64 * varpi_step;
            // varpi^2 = r / (d (1 - theta^2)) inverts to s = 1 / (2 varpi^2).
            let s = 1.0 / (2.0 * varpi * varpi);
            let row = predicted_ratios(s, n, max_offset)?;
            ratios.push(row);
        }
        Ok(AswjeDemapper { varpi_min, varpi_step, ratios, max_offset })
    }

    #[inline]
    pub fn grid_len(&self) -> usize {
        self.ratios.len()
    }

    fn grid_value(&self, idx: usize) -> f64 {
        self.varpi_min + idx as f64 * self.varpi_step
    }

    /// Indices of the grid points inside `[lo, hi]`.
    fn range_indices(&self, lo: f64, hi: f64) -> (usize, usize) {
        let first = ((lo - self.varpi_min) / self.varpi_step).ceil().max(0.0) as usize;
        let last = (((hi - self.varpi_min) / self.varpi_step).floor() as usize)
            .min(self.ratios.len().saturating_sub(1));
        (first.min(last), last)
    }
}

fn spread_for_s(s: f64, l: f64, n: usize) -> SpreadParams {
    let nf = n as f64;
    let sqrt_pi_s = (std::f64::consts::PI * s).sqrt();
    SpreadParams {
        s_param: s,
        delta: nf * sqrt_pi_s,
        w: sqrt_pi_s * (l / (nf * s) - nf / 2.0),
    }
}

fn predicted_ratios(s: f64, n: usize, max_offset: usize) -> Result<Vec<f64>> {
    let center = rho_from_spread(&spread_for_s(s, 0.0, n))?;
    let mut row = Vec::with_capacity(max_offset + 1);
    for l in 0..=max_offset {
        let rho = rho_from_spread(&spread_for_s(s, l as f64, n))?;
        row.push((rho / center).max(0.0).sqrt());
    }
    Ok(row)
}

/// Support-width joint estimation over a DFT sweep: threshold the beam
/// amplitudes to find the spread support, take its median index as the angle,
/// then recover the range by matching the measured amplitude-ratio profile
/// against the demapping table with a line search. The improved variant
/// probes `k_a` candidate ranges with one extra pilot each (the `probe`
/// closure supplies the measured amplitude of a candidate beam).
#[allow(clippy::too_many_arguments)]
pub fn aswje(
    y: &[Complex64],
    cfg: &ArrayConfig,
    demapper: &AswjeDemapper,
    kappa2: f64,
    k_a: usize,
    mut probe: impl FnMut(f64, f64) -> f64,
) -> Result<BeamDecision> {
    let n = cfg.n_antennas;
    if y.len() != n {
        return Err(Error::Domain(format!(
            "measurement length {} does not match array size {n}",
            y.len()
        )));
    }
    if !(kappa2 > 0.0 && kappa2 < 1.0) {
        return Err(Error::Domain(format!("threshold {kappa2} must lie in (0, 1)")));
    }
    let amps: Vec<f64> = y.iter().map(|v| v.norm()).collect();
    let (peak_idx, peak) = amps
        .iter()
        .enumerate()
        .fold((0usize, 0.0f64), |acc, (i, &a)| if a > acc.1 { (i, a) } else { acc });

    // Support: beams whose amplitude clears the relative threshold.
    let support: Vec<usize> = if peak > 0.0 {
        (0..n).filter(|&i| amps[i] > kappa2 * peak).collect()
    } else {
        vec![peak_idx]
    };
    let median_pos = support[(support.len() - 1) / 2];
    let theta_hat = grid_angle(median_pos + 1, cfg);

    let d = cfg.spacing();
    let geom = d * (1.0 - theta_hat * theta_hat);
    let r_hat = if support.len() < 2 {
        // No measurable spread: treat the source as effectively far field.
        cfg.r_max_m
    } else {
        // Measured amplitude ratios relative to the median beam.
        let denom = amps[median_pos];
        let profile: Vec<(usize, f64)> = support
            .iter()
            .filter_map(|&i| {
                let off = (i as i64 - median_pos as i64).unsigned_abs() as usize;
                (off > 0 && off <= demapper.max_offset).then(|| (off, amps[i] / denom))
            })
            .collect();
        if profile.is_empty() {
            cfg.r_max_m
        } else {
            let lo = (cfg.r_min_m / geom).sqrt();
            let hi = (cfg.r_max_m / geom).sqrt();
            let (first, last) = demapper.range_indices(lo, hi);
            let mut scored: Vec<(usize, f64)> = (first..=last)
                .map(|g| {
                    let row = &demapper.ratios[g];
                    let err: f64 = profile
                        .iter()
                        .map(|&(off, meas)| {
                            let p = row[off];
                            (meas - p) * (meas - p)
                        })
                        .sum();
                    (g, err)
                })
                .collect();
            scored.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));

            let to_range =
                |g: usize| (demapper.grid_value(g).powi(2) * geom).clamp(cfg.r_min_m, cfg.r_max_m);
            if k_a > 1 && scored.len() > 1 {
                // Probe the best candidates with one extra pilot each.
                let mut best_r = to_range(scored[0].0);
                let mut best_meas = f64::NEG_INFINITY;
                for (g, _) in scored.iter().take(k_a) {
                    let r = to_range(*g);
                    let meas = probe(theta_hat, r);
                    if meas > best_meas {
                        best_meas = meas;
                        best_r = r;
                    }
                }
                best_r
            } else {
                to_range(scored[0].0)
            }
        }
    };

    Ok(BeamDecision {
        beam: steering_vector(theta_hat, r_hat, cfg)?,
        theta_est: Some(theta_hat),
        r_est: Some(r_hat),
        scheme: "aswje",
        pilot_symbols: (n + k_a) as u32,
    })
}

/// Closed-form operation counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlopScheme {
    /// Model-based stage: `17N + 7`.
    CoarseStage,
    /// Learned stage, exact per-layer count for input length `u`.
    FineStage { u: usize },
    /// Both stages, exact.
    ProposedTotal { u: usize },
    /// Both stages, the collapsed linear-in-`u` approximation.
    ProposedApprox { u: usize },
    /// `8N^2 - 2N`.
    Ls,
    /// `4NQ - 1`.
    PolarExh { q: usize },
    /// `6N - 1 + K_a (5N + 694 (varpi_points) + 7)`.
    AswJe { k_a: usize, varpi_points: usize },
    /// `52576N + 13862144 + 2047(N + Q) + (4 K_b - 1)`.
    DftDnn { q: usize, k_b: usize },
    /// `16 N^2 Q^2 + 6499 N Q + (4 (floor(N/chi) Q + K_b) - 1)`.
    Dnbt { q: usize, chi: usize, k_b: usize },
}

/// Exact per-layer operation count of the learned stage: convolutions cost
/// `(2 C_in K - 1)` per output element, channel pooling and global pooling
/// cost one op per pooled element, affine layers cost `(2 F_in - 1) F_out`.
pub fn fine_flops_exact(u: usize) -> u64 {
    let arch = Architecture::standard(u);
    let (_, l1, l2, l3) = arch.lens();
    let lens = [l1 as u64, l2 as u64, l3 as u64];
    let mut total = 0u64;
    for (block, len) in lens.into_iter().enumerate() {
        let (c_in, c_each, _) = arch.conv_plan(block);
        let per_el = (2 * c_in as u64 * 3 - 1) + (2 * c_in as u64 * 5 - 1);
        total += per_el * len * c_each as u64;
    }
    let f = arch.feature_dim() as u64;
    let l3u = l3 as u64;
    total += f * l3u; // channel pooling for the attention input
    total += (2 * 2 * 7 - 1) * l3u; // attention convolution
    total += f * l3u; // global average pooling
    total += (2 * f - 1) * f; // fc1
    total += (2 * f - 1) * f; // fc2
    total += (2 * f - 1) * u as u64; // output head
    total
}

/// Evaluate a scheme's operation-count formula.
pub fn flop_model(scheme: FlopScheme, cfg: &ArrayConfig) -> u64 {
    let n = cfg.n_antennas as u64;
    match scheme {
        FlopScheme::CoarseStage => 17 * n + 7,
        FlopScheme::FineStage { u } => fine_flops_exact(u),
        FlopScheme::ProposedTotal { u } => 17 * n + 7 + fine_flops_exact(u),
        FlopScheme::ProposedApprox { u } => 17 * n + 7 + 12_658 * u as u64 + 65_280,
        FlopScheme::Ls => 8 * n * n - 2 * n,
        FlopScheme::PolarExh { q } => 4 * n * q as u64 - 1,
        FlopScheme::AswJe { k_a, varpi_points } => {
            6 * n - 1 + k_a as u64 * (5 * n + 694 * varpi_points as u64 + 7)
        }
        FlopScheme::DftDnn { q, k_b } => {
            52_576 * n + 13_862_144 + 2_047 * (n + q as u64) + (4 * k_b as u64 - 1)
        }
        FlopScheme::Dnbt { q, chi, k_b } => {
            let qq = q as u64;
            16 * n * n * qq * qq
                + 6_499 * n * qq
                + (4 * ((n / chi as u64) * qq + k_b as u64) - 1)
        }
    }
}

/// Pilot symbols per scheme at the standard accounting.
pub fn pilot_symbols(scheme: &str, cfg: &ArrayConfig, q: usize, k_a: usize, k_b: usize) -> u32 {
    let n = cfg.n_antennas as u32;
    match scheme {
        "proposed" | "coarse" | "ls" => n,
        "polar-exh" => n * q as u32,
        "aswje" => n + k_a as u32,
        "dft-dnn" => n / 4 + k_b as u32,
        "dnbt" => (cfg.n_antennas / 16) as u32 * q as u32 + k_b as u32,
        other => panic!("unknown scheme {other}"),
    }
}
