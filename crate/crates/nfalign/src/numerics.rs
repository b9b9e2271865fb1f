//! Fresnel integrals, Cornu-spiral differential geometry, the angular-domain
//! correlation of a near-field source against the DFT grid, and the width of
//! the window that captures its energy spread.
//!
//! The Fresnel convention throughout is the unnormalized one,
//! `C(x) = integral_0^x cos(t^2) dt` and `S(x) = integral_0^x sin(t^2) dt`,
//! with limit `C(inf) = S(inf) = sqrt(pi/8)`.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::channel::{grid_angle, wrap_index, ArrayConfig};
use crate::{Error, Result};

/// `C(inf) = S(inf) = sqrt(pi/8)`.
pub const FRESNEL_LIMIT: f64 = 0.6266570686577501; // 0.5 * sqrt(pi/2)

/// Series/continued-fraction crossover. The Maclaurin series is accurate to
/// ~1e-15 well past this point; the continued fraction needs the argument to
/// be at least this large to converge quickly.
const FRESNEL_CROSSOVER: f64 = 1.8;
const CF_MAX_ITER: usize = 2000;
const CF_EPS: f64 = 1e-15;

/// A point `(C(t), S(t))` on the Cornu spiral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornuPoint {
    pub c: f64,
    pub s: f64,
}

/// Fresnel integrals `(C(x), S(x))`. Odd in `x` by construction.
pub fn fresnel(x: f64) -> Result<CornuPoint> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("fresnel argument {x} is not finite")));
    }
    let ax = x.abs();
    let p = if ax <= FRESNEL_CROSSOVER {
        fresnel_series(ax)
    } else {
        fresnel_continued_fraction(ax)
    };
    if x < 0.0 {
        Ok(CornuPoint { c: -p.c, s: -p.s })
    } else {
        Ok(p)
    }
}

/// Maclaurin series:
/// `C(x) = sum (-1)^k x^{4k+1} / ((2k)! (4k+1))`,
/// `S(x) = sum (-1)^k x^{4k+3} / ((2k+1)! (4k+3))`.
fn fresnel_series(x: f64) -> CornuPoint {
    let x4 = x.powi(4);
    let mut term_c = x; // x^{4k+1} / (2k)!
    let mut term_s = x * x * x; // x^{4k+3} / (2k+1)!
    let mut c = 0.0;
    let mut s = 0.0;
    let mut sign = 1.0;
    for k in 0..64u32 {
        c += sign * term_c / (4 * k + 1) as f64;
        s += sign * term_s / (4 * k + 3) as f64;
        let k2 = 2.0 * k as f64;
        term_c *= x4 / ((k2 + 1.0) * (k2 + 2.0));
        term_s *= x4 / ((k2 + 2.0) * (k2 + 3.0));
        sign = -sign;
        if term_c < 1e-18 && term_s < 1e-18 {
            break;
        }
    }
    CornuPoint { c, s }
}

/// Large-argument branch: evaluates the auxiliary complex function with a
/// modified-Lentz continued fraction (the divergent asymptotic series cannot
/// reach the accuracy target this close to the origin). Expects `x > 0`.
fn fresnel_continued_fraction(x: f64) -> CornuPoint {
    // Work in the pi/2-normalized convention u = x sqrt(2/pi), where the
    // phase pi*u^2/2 equals x^2 exactly.
    let u = x * (2.0 / PI).sqrt();
    let pix2 = 2.0 * x * x;
    let one = Complex64::new(1.0, 0.0);
    let tiny = Complex64::new(1e-300, 0.0);

    let mut b = Complex64::new(1.0, -pix2);
    let mut cc = Complex64::new(1e300, 0.0);
    let mut d = one / b;
    let mut h = d;
    let mut n = -1.0f64;
    for _ in 2..=CF_MAX_ITER {
        n += 2.0;
        let a = Complex64::new(-n * (n + 1.0), 0.0);
        b += Complex64::new(4.0, 0.0);
        d = one / (a * d + b);
        cc = b + a / cc;
        if cc.norm_sqr() == 0.0 {
            cc = tiny;
        }
        let del = cc * d;
        h *= del;
        if (del.re - 1.0).abs() + del.im.abs() < CF_EPS {
            break;
        }
    }
    h *= Complex64::new(u, -u);
    let osc = Complex64::new((0.5 * pix2).cos(), (0.5 * pix2).sin());
    let cs = Complex64::new(0.5, 0.5) * (one - osc * h);
    // Scale the normalized result back to the unnormalized convention.
    let scale = (PI / 2.0).sqrt();
    CornuPoint { c: scale * cs.re, s: scale * cs.im }
}

/// Local frame of the Cornu spiral at parameter `t`.
#[derive(Debug, Clone, Copy)]
pub struct CornuFrame {
    /// Unit tangent `(cos t^2, sin t^2)`.
    pub tangent: [f64; 2],
    /// Unit normal `(-sin t^2, cos t^2)`.
    pub normal: [f64; 2],
    /// Curvature `2t`.
    pub curvature: f64,
    /// Radius of curvature `1/(2t)`; `+inf` at `t = 0`.
    pub radius: f64,
}

/// Tangent, normal, curvature, and curvature radius at `t`.
pub fn cornu_frame(t: f64) -> CornuFrame {
    let t2 = t * t;
    let (sin, cos) = t2.sin_cos();
    let curvature = 2.0 * t;
    let radius = if t == 0.0 { f64::INFINITY } else { 1.0 / curvature };
    CornuFrame {
        tangent: [cos, sin],
        normal: [-sin, cos],
        curvature,
        radius,
    }
}

/// Center of the osculating circle at `t > 0`: `F(t) + R(t) N(t)`.
pub fn osculating_center(t: f64) -> Result<[f64; 2]> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("osculating center requires t > 0, got {t}")));
    }
    osculating_center_with_radius(t, cornu_frame(t).radius)
}

/// Osculating-circle construction with an explicit radius in place of the
/// curvature radius. Exists to reproduce an alternative circle construction;
/// all interior computations use [`osculating_center`].
pub fn osculating_center_with_radius(t: f64, radius: f64) -> Result<[f64; 2]> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("osculating center requires t > 0, got {t}")));
    }
    let p = fresnel(t)?;
    let frame = cornu_frame(t);
    Ok([
        p.c + radius * frame.normal[0],
        p.s + radius * frame.normal[1],
    ])
}

/// Dimensionless spread parameters of a source at spatial angle `theta` and
/// range `r`, observed at beam offset `l`: `s = d(1-theta^2)/(2r)`,
/// `delta = N sqrt(pi s)`, `w = sqrt(pi s) (l/(N s) - N/2)`.
#[derive(Debug, Clone, Copy)]
pub struct SpreadParams {
    pub s_param: f64,
    pub delta: f64,
    pub w: f64,
}

impl SpreadParams {
    pub fn new(theta: f64, r: f64, l: f64, cfg: &ArrayConfig) -> Result<Self> {
        if !(r > 0.0) {
            return Err(Error::Domain(format!("range {r} must be positive")));
        }
        if !(theta.abs() < 1.0) {
            return Err(Error::Domain(format!("spatial angle {theta} must satisfy |theta| < 1")));
        }
        let n = cfg.n_antennas as f64;
        let s = cfg.spacing() * (1.0 - theta * theta) / (2.0 * r);
        if n * s >= 1.0 {
            return Err(Error::Domain(format!(
                "N*s = {} >= 1: range {r} too small for the quadratic wavefront model",
                n * s
            )));
        }
        let sqrt_pi_s = (PI * s).sqrt();
        Ok(SpreadParams {
            s_param: s,
            delta: n * sqrt_pi_s,
            w: sqrt_pi_s * (l / (n * s) - n / 2.0),
        })
    }
}

/// Squared correlation between the unit near-field manifold at
/// `(theta, r)` and the beam steered `2l/N` away in spatial angle, evaluated
/// by direct summation over the exact per-element distances.
pub fn rho_exact(theta: f64, r: f64, l: i64, cfg: &ArrayConfig) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("range {r} must be positive")));
    }
    if !(theta.abs() <= 1.0) {
        return Err(Error::Domain(format!("spatial angle {theta} outside [-1, 1]")));
    }
    let n = cfg.n_antennas;
    let k = 2.0 * PI / cfg.wavelength();
    let d = cfg.spacing();
    let theta_l = theta + 2.0 * l as f64 / n as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 1..=n {
        let dn = cfg.delta_n(i);
        let rn = {
            let off = dn * d;
            (r * r + off * off - 2.0 * r * off * theta).sqrt()
        };
        let phase = k * (rn - r + dn * d * theta_l);
        acc += Complex64::from_polar(1.0, phase);
    }
    let nf = n as f64;
    Ok(acc.norm_sqr() / (nf * nf))
}

/// Same correlation from its quadratic-wavefront closed form:
/// `[(C(w+delta)-C(w))^2 + (S(w+delta)-S(w))^2] / delta^2`.
///
/// Evaluated at `|l|`; the correlation is even in the beam offset because the
/// integrals are odd, and computing the mirrored offset directly keeps the
/// symmetry exact in floating point.
pub fn rho_fresnel(theta: f64, r: f64, l: i64, cfg: &ArrayConfig) -> Result<f64> {
    let sp = SpreadParams::new(theta, r, l.unsigned_abs() as f64, cfg)?;
    rho_from_spread(&sp)
}

/// Correlation evaluated directly from dimensionless spread parameters.
pub fn rho_from_spread(sp: &SpreadParams) -> Result<f64> {
    let p0 = fresnel(sp.w)?;
    let p1 = fresnel(sp.w + sp.delta)?;
    let dc = p1.c - p0.c;
    let ds = p1.s - p0.s;
    Ok((dc * dc + ds * ds) / (sp.delta * sp.delta))
}

/// Closed-form upper bound `1 / (w^2 (w+delta)^2)`, valid for `w > 0`.
pub fn rho_upper_bound(theta: f64, r: f64, l: i64, cfg: &ArrayConfig) -> Result<f64> {
    let sp = SpreadParams::new(theta, r, l as f64, cfg)?;
    if !(sp.w > 0.0) {
        return Err(Error::Domain(format!(
            "upper bound requires w > 0 (beam offset outside the spread), got w = {}",
            sp.w
        )));
    }
    let wd = sp.w + sp.delta;
    Ok(1.0 / (sp.w * sp.w * wd * wd))
}

/// Half-width of the energy-spread window:
/// `L = floor( sqrt( (delta^2/2pi) (delta^2/2pi + 2/(pi eps)) ) )`.
pub fn spread_half_width(delta: f64, epsilon: f64) -> Result<usize> {
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("delta {delta} must be positive")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!("epsilon {epsilon} must lie in (0, 1)")));
    }
    let a = delta * delta / (2.0 * PI);
    Ok((a * (a + 2.0 / (PI * epsilon))).sqrt().floor() as usize)
}

/// Whether the window construction's validity condition holds:
/// `N s < 1` and the whole-grid floor `1/(w(w+delta))` at the farthest beam
/// stays below `epsilon`.
pub fn spread_validity_ok(s: f64, n: usize, epsilon: f64) -> bool {
    let nf = n as f64;
    let ns = nf * s;
    ns < 1.0 && 4.0 * s / (PI * (1.0 - ns * ns)) < epsilon
}

/// Ordered, circularly contiguous list of the `2L+1` DFT indices centered on
/// `center_index` that capture the energy spread of a source at range `r`.
pub fn epsilon_subspace(
    center_index: usize,
    r: f64,
    epsilon: f64,
    cfg: &ArrayConfig,
) -> Result<Vec<usize>> {
    let n = cfg.n_antennas;
    if center_index < 1 || center_index > n {
        return Err(Error::Domain(format!("center index {center_index} outside 1..={n}")));
    }
    let theta_c = grid_angle(center_index, cfg);
    let sp = SpreadParams::new(theta_c, r, 0.0, cfg)?;
    let mut half = spread_half_width(sp.delta, epsilon)?;
    // A window can never cover more than the whole grid.
    half = half.min((n - 1) / 2);
    Ok((-(half as i64)..=half as i64)
        .map(|l| wrap_index(center_index, l, n))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{dft_column, inner, nearest_grid_index, steering_vector};
    use crate::rng::TrialRng;

    // ---- independent oracles -------------------------------------------------

    /// Adaptive Simpson quadrature of f over [a, b].
    fn simpson<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, tol: f64) -> f64 {
        #[allow(clippy::too_many_arguments)]
        fn rec<F: Fn(f64) -> f64 + Copy>(
            f: F,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth > 40 || (left + right - whole).abs() < 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth + 1)
                    + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth + 1)
            }
        }
        let fa = f(a);
        let fb = f(b);
        let fm = f(0.5 * (a + b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 0)
    }

    /// Tail expansion oracle for x >= 4.5: C + iS = (1+i) FRESNEL_LIMIT - e^{i x^2} sum c_m.
    fn fresnel_asymptotic_oracle(x: f64) -> CornuPoint {
        let x2 = x * x;
        let mut c_m = Complex64::new(0.0, 1.0 / (2.0 * x));
        let mut sum = Complex64::new(0.0, 0.0);
        let mut prev = f64::INFINITY;
        for m in 0..200u32 {
            let mag = c_m.norm();
            if mag >= prev || mag < 1e-18 {
                break;
            }
            prev = mag;
            sum += c_m;
            c_m *= Complex64::new(0.0, -(2.0 * m as f64 + 1.0) / (2.0 * x2));
        }
        let tail = Complex64::from_polar(1.0, x2) * sum;
        CornuPoint {
            c: FRESNEL_LIMIT - tail.re,
            s: FRESNEL_LIMIT - tail.im,
        }
    }

    /// Composite oracle, independent of both implementation branches:
    /// adaptive quadrature up to 6 (beyond which the optimally truncated tail
    /// expansion is itself accurate to better than 1e-12), tail expansion
    /// further out.
    fn fresnel_oracle(x: f64) -> CornuPoint {
        let ax = x.abs();
        let p = if ax <= 6.0 {
            CornuPoint {
                c: simpson(|t| (t * t).cos(), 0.0, ax, 1e-13),
                s: simpson(|t| (t * t).sin(), 0.0, ax, 1e-13),
            }
        } else {
            fresnel_asymptotic_oracle(ax)
        };
        if x < 0.0 {
            CornuPoint { c: -p.c, s: -p.s }
        } else {
            p
        }
    }

    // ---- fresnel -------------------------------------------------------------

    #[test]
    fn fresnel_at_zero_and_odd_symmetry() {
        let p = fresnel(0.0).unwrap();
        assert_eq!(p.c, 0.0);
        assert_eq!(p.s, 0.0);
        let a = fresnel(1.37).unwrap();
        let b = fresnel(-1.37).unwrap();
        assert_eq!(a.c, -b.c);
        assert_eq!(a.s, -b.s);
    }

    #[test]
    fn fresnel_rejects_non_finite() {
        assert!(fresnel(f64::NAN).is_err());
        assert!(fresnel(f64::INFINITY).is_err());
    }

    #[test]
    fn fresnel_series_value_at_one() {
        let p = fresnel(1.0).unwrap();
        assert!((p.c - 0.904524).abs() < 1e-5);
        assert!((p.s - 0.310268).abs() < 1e-5);
    }

    #[test]
    fn fresnel_matches_oracle_to_1e10() {
        // Dense near the crossover, sparser out to 50.
        let mut worst = 0.0f64;
        let mut x = -50.0;
        while x <= 50.0 {
            let got = fresnel(x).unwrap();
            let want = fresnel_oracle(x);
            worst = worst.max((got.c - want.c).abs()).max((got.s - want.s).abs());
            x += if x.abs() < 5.0 { 0.037 } else { 0.61 };
        }
        assert!(worst < 1e-10, "worst abs error {worst}");
    }

    #[test]
    fn fresnel_branches_agree_at_crossover() {
        for &x in &[1.7, 1.75, 1.8, 1.85, 1.9, 2.0] {
            let series = fresnel_series(x);
            let cf = fresnel_continued_fraction(x);
            assert!(
                (series.c - cf.c).abs() < 1e-10 && (series.s - cf.s).abs() < 1e-10,
                "branch mismatch at {x}: series ({}, {}), cf ({}, {})",
                series.c,
                series.s,
                cf.c,
                cf.s
            );
        }
    }

    #[test]
    fn spiral_stays_in_the_first_quadrant() {
        // Both integrals are nonnegative for nonnegative arguments: the
        // oscillation amplitude 1/(2t) never reaches the limit value.
        let mut t = 0.0;
        while t <= 40.0 {
            let p = fresnel(t).unwrap();
            assert!(p.c >= 0.0 && p.s >= 0.0, "left the first quadrant at t={t}: {p:?}");
            t += 0.013;
        }
    }

    #[test]
    fn fresnel_limit_oscillation_averaged() {
        // Average two samples half an oscillation period apart in x^2 to
        // cancel the leading 1/(2x) ripple around the limit point.
        let x0: f64 = 1e4;
        let x1 = (x0 * x0 + PI).sqrt();
        let p0 = fresnel(x0).unwrap();
        let p1 = fresnel(x1).unwrap();
        let c_avg = 0.5 * (p0.c + p1.c);
        let s_avg = 0.5 * (p0.s + p1.s);
        assert!((c_avg - FRESNEL_LIMIT).abs() < 1e-6, "C avg {c_avg}");
        assert!((s_avg - FRESNEL_LIMIT).abs() < 1e-6, "S avg {s_avg}");
    }

    // ---- cornu frame and osculating circles ----------------------------------

    #[test]
    fn frame_values_at_unit_parameter() {
        let f = cornu_frame(1.0);
        assert!((f.tangent[0] - 0.540302).abs() < 1e-6);
        assert!((f.tangent[1] - 0.841471).abs() < 1e-6);
        assert!((f.curvature - 2.0).abs() < 1e-15);
        assert!((f.radius - 0.5).abs() < 1e-15);
    }

    #[test]
    fn frame_at_sqrt_pi_points_backward() {
        let f = cornu_frame(PI.sqrt());
        assert!((f.tangent[0] + 1.0).abs() < 1e-12);
        assert!(f.tangent[1].abs() < 1e-12);
    }

    #[test]
    fn frame_radius_matches_half_curvature() {
        let f = cornu_frame(0.6416);
        assert!((f.radius - 0.779302).abs() < 1e-6);
        assert_eq!(cornu_frame(0.0).radius, f64::INFINITY);
    }

    #[test]
    fn unit_frame_properties() {
        let mut rng = TrialRng::from_seed(41);
        for _ in 0..1000 {
            let t = rng.uniform_in(-8.0, 8.0);
            let f = cornu_frame(t);
            let nt = (f.tangent[0].powi(2) + f.tangent[1].powi(2)).sqrt();
            let nn = (f.normal[0].powi(2) + f.normal[1].powi(2)).sqrt();
            let dot = f.tangent[0] * f.normal[0] + f.tangent[1] * f.normal[1];
            assert!((nt - 1.0).abs() < 1e-12);
            assert!((nn - 1.0).abs() < 1e-12);
            assert!(dot.abs() < 1e-12);
        }
    }

    #[test]
    fn osculating_center_examples() {
        let m = osculating_center(0.6416).unwrap();
        assert!((m[0] - 0.31896).abs() < 1e-3, "got {m:?}");
        assert!((m[1] - 0.80114).abs() < 1e-3, "got {m:?}");

        // Alternative circle with radius 1/t instead of 1/(2t).
        let m2 = osculating_center_with_radius(0.6416, 1.0 / 0.6416).unwrap();
        assert!((m2[0] - 0.0072).abs() < 1e-3, "got {m2:?}");
        assert!((m2[1] - 1.5154).abs() < 1e-3, "got {m2:?}");

        assert!(osculating_center(0.0).is_err());
        assert!(osculating_center(-1.0).is_err());
    }

    #[test]
    fn osculating_center_distance_equals_radius() {
        let mut rng = TrialRng::from_seed(6);
        for _ in 0..200 {
            let t = rng.uniform_in(0.05, 6.0);
            let m = osculating_center(t).unwrap();
            let p = fresnel(t).unwrap();
            let dist = ((m[0] - p.c).powi(2) + (m[1] - p.s).powi(2)).sqrt();
            assert!((dist - cornu_frame(t).radius).abs() < 1e-9);
        }
    }

    #[test]
    fn osculating_center_converges_to_limit_point() {
        let t = 100.0;
        let m = osculating_center(t).unwrap();
        let dist = ((m[0] - FRESNEL_LIMIT).powi(2) + (m[1] - FRESNEL_LIMIT).powi(2)).sqrt();
        assert!(dist <= cornu_frame(t).radius + 1e-9, "dist {dist}");
    }

    #[test]
    fn osculating_circles_nest() {
        let mut rng = TrialRng::from_seed(99);
        for _ in 0..1000 {
            let t_outer = rng.uniform_in(0.05, 4.0);
            let t_inner = t_outer + rng.uniform_in(1e-3, 4.0);
            let m_outer = osculating_center(t_outer).unwrap();
            let m_inner = osculating_center(t_inner).unwrap();
            let dist = ((m_outer[0] - m_inner[0]).powi(2) + (m_outer[1] - m_inner[1]).powi(2))
                .sqrt();
            let r_outer = cornu_frame(t_outer).radius;
            let r_inner = cornu_frame(t_inner).radius;
            assert!(
                dist + r_inner <= r_outer + 1e-9,
                "inner circle escapes: t=({t_outer}, {t_inner}), slack {}",
                dist + r_inner - r_outer
            );
        }
    }

    // ---- correlation functions ------------------------------------------------

    fn cfg() -> ArrayConfig {
        ArrayConfig::default_256()
    }

    #[test]
    fn rho_exact_far_field_collapse() {
        let cfg = cfg();
        for m in [5usize, 128, 222] {
            let theta = grid_angle(m, &cfg);
            assert!((rho_exact(theta, 1e9, 0, &cfg).unwrap() - 1.0).abs() < 1e-9);
            for l in [1i64, 7, -13, 100] {
                assert!(rho_exact(theta, 1e9, l, &cfg).unwrap() < 1e-9);
            }
        }
    }

    #[test]
    fn rho_exact_equals_beam_inner_product() {
        let cfg = cfg();
        let theta = grid_angle(160, &cfg);
        let a = steering_vector(theta, 12.0, &cfg).unwrap();
        for l in [-5i64, 0, 3, 17] {
            let m = wrap_index(160, l, cfg.n_antennas);
            let f = dft_column(m, &cfg).unwrap();
            let via_inner = inner(&f, &a).norm_sqr();
            let via_sum = rho_exact(theta, 12.0, l, &cfg).unwrap();
            assert!(
                (via_inner - via_sum).abs() < 1e-12,
                "l={l}: {via_inner} vs {via_sum}"
            );
        }
    }

    #[test]
    fn rho_fresnel_center_beam_closed_form() {
        let cfg = cfg();
        let sp = SpreadParams::new(0.0, 10.0, 0.0, &cfg).unwrap();
        let p = fresnel(sp.delta / 2.0).unwrap();
        let expect = 4.0 * (p.c * p.c + p.s * p.s) / (sp.delta * sp.delta);
        let got = rho_fresnel(0.0, 10.0, 0, &cfg).unwrap();
        assert!((got - expect).abs() < 1e-14);
    }

    #[test]
    fn rho_fresnel_is_symmetric_in_beam_offset() {
        let cfg = cfg();
        for l in [1i64, 5, 23, 100] {
            let plus = rho_fresnel(0.13, 22.0, l, &cfg).unwrap();
            let minus = rho_fresnel(0.13, 22.0, -l, &cfg).unwrap();
            assert_eq!(plus, minus, "asymmetry at l={l}");
        }
    }

    #[test]
    fn rho_fresnel_tail_is_small() {
        let cfg = cfg();
        assert!(rho_fresnel(0.0, 10.0, 40, &cfg).unwrap() < 1.35e-5);
    }

    #[test]
    fn rho_two_routes_agree_on_spot() {
        let cfg = cfg();
        let e = rho_exact(0.0, 10.0, 3, &cfg).unwrap();
        let f = rho_fresnel(0.0, 10.0, 3, &cfg).unwrap();
        assert!((e - f).abs() < 1e-2, "exact {e} vs fresnel {f}");
    }

    #[test]
    fn rho_approximation_fidelity_on_envelope_grid() {
        // The quadratic-wavefront form tracks the exact correlation to 1e-2
        // wherever the dropped cubic phase term stays small; measured, that
        // holds for r >= 14 m at every envelope angle. Toward the minimum
        // range the cubic term reaches order one at wide angles and the gap
        // peaks at ~4.6e-2 near (theta ~ -0.81, r = 4 m, l = 4); that
        // ceiling is pinned so regressions surface.
        let cfg = cfg();
        let theta_max = (PI / 3.0).sin();
        let mut worst_valid = 0.0f64;
        let mut worst_full = 0.0f64;
        for ti in 0..64 {
            let theta = -theta_max + 2.0 * theta_max * ti as f64 / 63.0;
            for ri in 0..64 {
                let r = 4.0 + (80.0 - 4.0) * ri as f64 / 63.0;
                for l in 0..16i64 {
                    let e = rho_exact(theta, r, l, &cfg).unwrap();
                    let f = rho_fresnel(theta, r, l, &cfg).unwrap();
                    let gap = (e - f).abs();
                    worst_full = worst_full.max(gap);
                    if r >= 14.0 {
                        worst_valid = worst_valid.max(gap);
                    }
                }
            }
        }
        assert!(worst_valid <= 1e-2, "worst |exact - fresnel| beyond 14 m = {worst_valid}");
        assert!(worst_full <= 5e-2, "full-grid worst grew: {worst_full}");
    }

    #[test]
    fn spread_params_flag_invalid_geometry() {
        let cfg = cfg();
        // Absurdly small range breaks the quadratic wavefront assumption.
        assert!(SpreadParams::new(0.0, 0.05, 0.0, &cfg).is_err());
        let sp = SpreadParams::new(0.0, 10.0, 0.0, &cfg).unwrap();
        assert!(sp.s_param > 0.0);
        assert!((sp.delta - cfg.n_antennas as f64 * (PI * sp.s_param).sqrt()).abs() < 1e-15);
    }

    // ---- upper bound ----------------------------------------------------------

    #[test]
    fn bound_value_checks() {
        let cfg = cfg();
        let sp = SpreadParams::new(0.0, 10.0, 40.0, &cfg).unwrap();
        assert!((sp.w - 13.2).abs() < 0.1, "w = {}", sp.w);
        assert!((sp.delta - 7.43).abs() < 0.05, "delta = {}", sp.delta);
        let bound = rho_upper_bound(0.0, 10.0, 40, &cfg).unwrap();
        assert!((bound - 1.34e-5).abs() / 1.34e-5 < 0.05, "bound {bound}");

        // Direct substitution w = 1, delta = 1.
        assert!((1.0 / (1.0 * (1.0 + 1.0f64).powi(2)) - 0.25).abs() < 1e-15);

        // Hypothesis violation: beam inside the spread.
        assert!(rho_upper_bound(0.0, 10.0, 1, &cfg).is_err());
    }

    #[test]
    fn bound_dominates_fresnel_form() {
        let cfg = cfg();
        let mut rng = TrialRng::from_seed(2024);
        let theta_max = (PI / 3.0).sin();
        let mut checked = 0u32;
        while checked < 10_000 {
            let theta = rng.uniform_in(-theta_max, theta_max);
            let r = rng.uniform_in(4.0, 80.0);
            let l = 1 + rng.index(128) as i64;
            let sp = SpreadParams::new(theta, r, l as f64, &cfg).unwrap();
            if sp.w <= 0.0 {
                continue;
            }
            let rho = rho_from_spread(&sp).unwrap();
            let bound = 1.0 / (sp.w * sp.w * (sp.w + sp.delta) * (sp.w + sp.delta));
            assert!(
                rho < bound,
                "violation at theta={theta}, r={r}, l={l}: rho={rho}, bound={bound}"
            );
            checked += 1;
        }
    }

    #[test]
    fn beams_past_the_window_threshold_have_small_energy() {
        let cfg = cfg();
        let eps = 0.1;
        let mut rng = TrialRng::from_seed(31);
        for _ in 0..40 {
            let theta = rng.uniform_in(-0.8, 0.8);
            let r = rng.uniform_in(4.0, 80.0);
            let sp = SpreadParams::new(theta, r, 0.0, &cfg).unwrap();
            let half = spread_half_width(sp.delta, eps).unwrap();
            for l in (half as i64 + 1)..=(cfg.n_antennas as i64 / 2) {
                let rho = rho_fresnel(theta, r, l, &cfg).unwrap();
                assert!(
                    rho < eps * eps,
                    "rho {rho} >= eps^2 at theta={theta}, r={r}, l={l} (half {half})"
                );
            }
        }
    }

    // ---- spread half-width and subspace ----------------------------------------

    #[test]
    fn spread_half_width_operating_points() {
        let cfg = cfg();
        let sp4 = SpreadParams::new(0.0, 4.0, 0.0, &cfg).unwrap();
        assert_eq!(spread_half_width(sp4.delta, 0.1).unwrap(), 24);

        let sp80 = SpreadParams::new(0.0, 80.0, 0.0, &cfg).unwrap();
        // Hand-evaluated: delta^2 ~ 6.89, a = delta^2/2pi ~ 1.097,
        // floor(sqrt(1.097 * (1.097 + 6.366))) = floor(2.861) = 2.
        assert_eq!(spread_half_width(sp80.delta, 0.1).unwrap(), 2);

        assert_eq!(spread_half_width(1e-9, 0.1).unwrap(), 0);
        assert!(spread_half_width(0.0, 0.1).is_err());
        assert!(spread_half_width(1.0, 0.0).is_err());
    }

    #[test]
    fn spread_half_width_monotonicity() {
        let mut prev = 0;
        for i in 1..200 {
            let delta = 0.05 * i as f64;
            let l = spread_half_width(delta, 0.1).unwrap();
            assert!(l >= prev, "not nondecreasing in delta at {delta}");
            prev = l;
        }
        let coarse = spread_half_width(7.0, 0.2).unwrap();
        let fine = spread_half_width(7.0, 0.05).unwrap();
        assert!(fine >= coarse);
    }

    #[test]
    fn spread_validity_holds_on_the_envelope() {
        let cfg = cfg();
        let sp = SpreadParams::new(0.0, 4.0, 0.0, &cfg).unwrap();
        assert!(spread_validity_ok(sp.s_param, cfg.n_antennas, 0.1));
        assert!(!spread_validity_ok(0.3, 256, 0.1));
    }

    #[test]
    fn subspace_indices_interior_and_wrapped() {
        let cfg = cfg();
        // Interior window with a range that yields a half-width of 2.
        let list = epsilon_subspace(128, 80.0, 0.1, &cfg).unwrap();
        assert_eq!(list, vec![126, 127, 128, 129, 130]);
        // At the first grid angle the spread shrinks with (1 - theta^2); a
        // 1 m source still spreads across two beams each side and the window
        // wraps around the index ring.
        let theta_1 = grid_angle(1, &cfg);
        let sp = SpreadParams::new(theta_1, 1.0, 0.0, &cfg).unwrap();
        assert_eq!(spread_half_width(sp.delta, 0.1).unwrap(), 2);
        let wrapped = epsilon_subspace(1, 1.0, 0.1, &cfg).unwrap();
        assert_eq!(wrapped, vec![255, 256, 1, 2, 3]);
    }

    #[test]
    fn subspace_complement_is_weakly_correlated() {
        let cfg = cfg();
        let eps = 0.1;
        let mut rng = TrialRng::from_seed(8);
        for _ in 0..20 {
            let theta0 = rng.uniform_in(-0.85, 0.85);
            let r = rng.uniform_in(4.0, 80.0);
            let zeta = nearest_grid_index(theta0, &cfg);
            let theta_c = grid_angle(zeta, &cfg);
            let list = epsilon_subspace(zeta, r, eps, &cfg).unwrap();
            let inside: std::collections::HashSet<usize> = list.iter().copied().collect();
            for m in 1..=cfg.n_antennas {
                if inside.contains(&m) {
                    continue;
                }
                // Signed circular offset from the window center.
                let mut l = m as i64 - zeta as i64;
                let n = cfg.n_antennas as i64;
                if l > n / 2 {
                    l -= n;
                }
                if l < -n / 2 {
                    l += n;
                }
                let rho = rho_fresnel(theta_c, r, l.abs(), &cfg).unwrap();
                assert!(rho < eps, "index {m} outside window has rho {rho}");
            }
        }
    }
}
