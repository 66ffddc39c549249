//! Slow-but-trusted CDF evaluation, inversion, and table refitting.
//!
//! The base family of laws used by the direct-inversion tables — convolution
//! orders of the squared-bridge series and the fractional-weight level
//! series — share one Laplace transform, `(sqrt(2b)/sinh sqrt(2b))^P`. This
//! module evaluates the common CDF `F_P` by a convergent series whose terms
//! integrate a parabolic cylinder function against a gamma kernel:
//!
//! `F_P(x) = (2^{P+1} / (sqrt(2 pi) Gamma(P))) *
//!           sum_{n>=0} (Gamma(n+P)/Gamma(n+1)) (2n+P)^{-P} G((2n+P)/sqrt(x))`
//!
//! with `G(y) = int_y^inf z^{P-1} e^{-z^2/4} D_{P+1}(z) dz` split at a switch
//! point `y*` into a power-series part `G1` (incomplete-gamma differences of
//! the cylinder Taylor coefficients) and an asymptotic part `G2`
//! (incomplete-gamma terms of the cylinder asymptotic coefficients).
//!
//! On top of `F_P` the module provides quantile root-finding, closed-form
//! tail approximations used as initial guesses and as table scalings, and
//! Chebyshev refitting that regenerates shipped tables for audit.

use crate::specfun::{cylinder_taylor_coeffs, ln_gamma, reg_lower_gamma, upper_incomplete_gamma};
use crate::tables::{scale_u, InverseCdfTable, ScalingKind, U_MAX, U_MIN};
use crate::{Error, Result};

/// Budgets and tolerances of the series CDF and its inversion.
#[derive(Debug, Clone)]
pub struct OracleConfig {
    /// Maximum number of outer-series terms.
    pub outer_terms: usize,
    /// Switch constant: the split point is `y* = max(switch_const * (P + 3/2), y)`.
    /// `None` picks `y* ~ 6.5` automatically, which keeps the power-series
    /// block free of catastrophic cancellation in double precision.
    pub switch_const: Option<f64>,
    /// Term budget for the power-series block `G1`.
    pub g1_terms: usize,
    /// Term budget for the asymptotic block `G2` (inactive for integer `P`,
    /// where the expansion terminates exactly).
    pub g2_terms: usize,
    /// Absolute tolerance in CDF level for quantile inversion.
    pub root_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            outer_terms: 4000,
            switch_const: None,
            g1_terms: 400,
            g2_terms: 80,
            root_tol: 1e-11,
        }
    }
}

impl OracleConfig {
    fn validate(&self) -> Result<()> {
        if self.outer_terms < 1 || self.g1_terms < 1 || self.g2_terms < 1 {
            return Err(Error::invalid("oracle budgets must be >= 1".to_string()));
        }
        if !(self.root_tol > 0.0 && self.root_tol <= 1e-6) {
            return Err(Error::invalid(format!(
                "root_tol = {} outside (0, 1e-6]",
                self.root_tol
            )));
        }
        Ok(())
    }

    // The switch point y* for the given order.
    fn y_star(&self, p: f64) -> f64 {
        match self.switch_const {
            Some(delta) => delta * (p + 1.5),
            None => 6.5,
        }
    }
}

// Upper incomplete gamma Gamma(s, x) for any real s (x > 0), extending the
// positive-s routine by the downward recurrence
// Gamma(s, x) = (Gamma(s+1, x) - x^s e^{-x}) / s.
fn upper_gamma_any(s: f64, x: f64) -> Result<f64> {
    if s > 0.0 {
        return upper_incomplete_gamma(s, x);
    }
    let steps = (-s).floor() as i32 + 1;
    let mut g = upper_incomplete_gamma(s + steps as f64, x)?;
    for j in (0..steps).rev() {
        let sj = s + j as f64;
        if sj.abs() < 1e-12 {
            return Err(Error::invalid(format!(
                "upper_gamma_any: shape passes through 0 (s = {s})"
            )));
        }
        g = (g - (sj * x.ln() - x).exp()) / sj;
    }
    Ok(g)
}

// G1(y, y*): the power-series block. Each term couples a cylinder Taylor
// coefficient with an incomplete-gamma difference; the unnormalised gamma
// factor overflows far before the term does, so every term is assembled in
// log space from the regularised difference.
fn g1_series(p: f64, y: f64, y_star: f64, d_coeffs: &[f64]) -> Result<f64> {
    let (a, b) = (y * y / 4.0, y_star * y_star / 4.0);
    let mut sum = 0.0;
    let mut below = 0;
    for (k, &d) in d_coeffs.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let s = (p + k as f64) / 2.0;
        let dreg = (reg_lower_gamma(s, b)? - reg_lower_gamma(s, a)?).max(0.0);
        let term = if dreg == 0.0 {
            0.0
        } else {
            d.signum()
                * (d.abs().ln()
                    + (p + k as f64 - 1.0) * std::f64::consts::LN_2
                    + ln_gamma(s)
                    + dreg.ln())
                .exp()
        };
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) {
            below += 1;
            if below >= 4 && k > 8 {
                return Ok(sum);
            }
        } else {
            below = 0;
        }
    }
    Err(Error::NoConvergence(format!(
        "G1 power series not converged in {} terms (P = {p}, y = {y}, y* = {y_star})",
        d_coeffs.len()
    )))
}

// G2(y*): the asymptotic block. Terms carry the cylinder asymptotic
// coefficients; the expansion terminates exactly for integer P and is
// truncated at its smallest term otherwise.
fn g2_series(p: f64, y_star: f64, budget: usize) -> Result<f64> {
    let w = y_star * y_star / 2.0;
    if w > 700.0 {
        return Ok(0.0); // every term underflows with e^{-w}
    }
    // coef_k = (-1)^k (-(P+1))_{2k} / k!, updated multiplicatively.
    let mut coef = 1.0;
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    for k in 0..budget {
        let kf = k as f64;
        let term = coef * (p - 2.0 * kf - 0.5).exp2() * upper_gamma_any(p - kf + 0.5, w)?;
        if term.abs() > prev {
            return Ok(sum); // optimal truncation of the asymptotic series
        }
        sum += term;
        prev = term.abs();
        coef *= -(2.0 * kf - p - 1.0) * (2.0 * kf - p) / (kf + 1.0);
        if coef == 0.0 || term.abs() < 1e-17 * sum.abs().max(1e-300) {
            return Ok(sum);
        }
    }
    Err(Error::NoConvergence(format!(
        "G2 asymptotic series not converged in {budget} terms (P = {p}, y* = {y_star})"
    )))
}

// G(y) = G1(y, y*) + G2(y*), with y* = max(configured switch, y).
fn g_integral(
    p: f64,
    y: f64,
    y_star_min: f64,
    d_coeffs: &[f64],
    cfg: &OracleConfig,
) -> Result<f64> {
    let y_star = y_star_min.max(y);
    let g2 = g2_series(p, y_star, cfg.g2_terms)?;
    if y >= y_star {
        return Ok(g2);
    }
    Ok(g1_series(p, y, y_star, d_coeffs)? + g2)
}

/// The oracle CDF `F_P(x)` of the base law with Laplace transform
/// `(sqrt(2b)/sinh sqrt(2b))^P`.
///
/// Supported orders: `P` in `(0, 1]` (fractional table weights) and small
/// integers (convolution orders up to 50). The outer series is truncated
/// when a term falls below `1e-16` of the partial sum.
pub fn cdf_sp(p: f64, x: f64, cfg: &OracleConfig) -> Result<f64> {
    cfg.validate()?;
    if !(p > 0.0 && p <= 50.5) {
        return Err(Error::invalid(format!("cdf_sp: unsupported order P = {p}")));
    }
    if !(x >= 0.0) {
        return Err(Error::invalid(format!("cdf_sp: x = {x} must be >= 0")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let y_star_min = cfg.y_star(p);
    let d_coeffs = cylinder_taylor_coeffs(p + 1.0, cfg.g1_terms);
    let sqrt_x = x.sqrt();
    let mut sum = 0.0;
    // log of Gamma(n+P)/Gamma(n+1), updated incrementally.
    let mut log_ratio = ln_gamma(p);
    for n in 0..cfg.outer_terms {
        let nf = n as f64;
        let arg = 2.0 * nf + p;
        let g = g_integral(p, arg / sqrt_x, y_star_min, &d_coeffs, cfg)?;
        let term = (log_ratio - p * arg.ln()).exp() * g;
        sum += term;
        log_ratio += ((nf + p) / (nf + 1.0)).ln();
        if n >= 2 && term.abs() < 1e-16 * sum.abs().max(1e-300) {
            let pref = ((p + 1.0) * std::f64::consts::LN_2
                - 0.5 * (2.0 * std::f64::consts::PI).ln()
                - ln_gamma(p))
            .exp();
            return Ok((pref * sum).clamp(0.0, 1.0));
        }
    }
    Err(Error::NoConvergence(format!(
        "outer CDF series not converged in {} terms (P = {p}, x = {x})",
        cfg.outer_terms
    )))
}

/// Left-tail quantile ansatz: the reciprocal-log inversion of the small-`x`
/// asymptote of `F_P`; accurate for `u` near 0.
pub fn left_tail_quantile(p: f64, u: f64) -> f64 {
    let c = 2.0 / (p * p);
    let lead = c * (p - 0.5) * c.ln();
    let body = c
        * ((u * std::f64::consts::PI.sqrt()).ln()
            - (p + 0.5) * std::f64::consts::LN_2
            - (p - 1.0) * p.ln());
    1.0 / (lead - body)
}

/// Right-tail quantile ansatz: `x ~ -(2/15) log((1-u) Gamma(5P/2))`, the
/// inversion of the gamma-matched exponential tail with shape `5P/2` and
/// rate `15/2`; accurate for `u` near 1.
pub fn right_tail_quantile(p: f64, u: f64) -> f64 {
    (-2.0 / 15.0) * ((1.0 - u).ln() + ln_gamma(2.5 * p))
}

/// The tail ansatz used as root-finding initial guess: left form below the
/// median region, right form above.
pub fn leading_tail_forms(p: f64, u: f64) -> f64 {
    if u < 0.5 {
        left_tail_quantile(p, u)
    } else {
        right_tail_quantile(p, u)
    }
}

/// Inverts the oracle CDF: returns `x` with `|F_P(x) - u| <= cfg.root_tol`.
///
/// The tail ansatz seeds a geometric bracket search (up to 200 expansions),
/// bisection narrows the bracket to `1e-3` relative, and a Newton polish
/// with a centered-difference derivative reaches the tolerance.
pub fn invert_cdf(p: f64, u: f64, cfg: &OracleConfig) -> Result<f64> {
    cfg.validate()?;
    if !(U_MIN..=U_MAX).contains(&u) {
        return Err(Error::invalid(format!(
            "invert_cdf: u = {u} outside [{U_MIN}, {U_MAX}]"
        )));
    }
    let f = |x: f64| cdf_sp(p, x, cfg);

    // Initial guess: tail ansatz, falling back to the mean when the ansatz
    // leaves its regime of validity.
    let mut guess = leading_tail_forms(p, u);
    if !guess.is_finite() || guess <= 0.0 {
        guess = p / 3.0;
    }

    // Geometric bracketing around the guess.
    let (mut lo, mut hi) = (guess, guess);
    let mut f_lo = f(lo)?;
    let mut f_hi = f_lo;
    let mut found = false;
    for _ in 0..200 {
        if f_lo <= u && u <= f_hi {
            found = true;
            break;
        }
        if f_lo > u {
            hi = lo;
            f_hi = f_lo;
            lo /= 2.0;
            f_lo = f(lo)?;
        } else {
            lo = hi;
            f_lo = f_hi;
            hi *= 2.0;
            f_hi = f(hi)?;
        }
    }
    if !found && !(f_lo <= u && u <= f_hi) {
        return Err(Error::NoConvergence(format!(
            "invert_cdf: no bracket after 200 expansions (P = {p}, u = {u})"
        )));
    }

    // Bisection to 1e-3 relative width.
    let mut x = 0.5 * (lo + hi);
    while hi - lo > 1e-3 * x {
        x = 0.5 * (lo + hi);
        if f(x)? < u {
            lo = x;
        } else {
            hi = x;
        }
    }
    x = 0.5 * (lo + hi);

    // Newton polish with centered-difference derivative, guarded by the
    // bracket (a step leaving it falls back to bisection).
    for _ in 0..100 {
        let fx = f(x)?;
        if (fx - u).abs() <= cfg.root_tol {
            return Ok(x);
        }
        if fx < u {
            lo = x;
        } else {
            hi = x;
        }
        let step = (1e-6 * x).max(1e-300);
        let deriv = (f(x + step)? - f(x - step)?) / (2.0 * step);
        let next = x - (fx - u) / deriv;
        x = if deriv > 0.0 && next > lo && next < hi {
            next
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::NoConvergence(format!(
        "invert_cdf: Newton polish stalled (P = {p}, u = {u}, x = {x})"
    )))
}

/// Fits a Chebyshev series of the given degree to `target` on `[-1, 1]`
/// using the standard cosine-node coefficient formula. The returned
/// coefficients follow the evaluation convention of the shipped tables
/// (the constant term enters halved).
pub fn fit_chebyshev(
    target: &mut dyn FnMut(f64) -> Result<f64>,
    degree: usize,
) -> Result<Vec<f64>> {
    if degree > crate::tables::MAX_DEGREE {
        return Err(Error::invalid(format!(
            "fit degree {degree} exceeds the cap {}",
            crate::tables::MAX_DEGREE
        )));
    }
    let n = degree + 1;
    let mut values = Vec::with_capacity(n);
    for j in 0..n {
        let z = (std::f64::consts::PI * (j as f64 + 0.5) / n as f64).cos();
        values.push(target(z)?);
    }
    let mut coeffs = Vec::with_capacity(n);
    for k in 0..n {
        let mut c = 0.0;
        for (j, &v) in values.iter().enumerate() {
            c += v * (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / n as f64).cos();
        }
        coeffs.push(2.0 * c / n as f64);
    }
    Ok(coeffs)
}

// Inverts a regime rescaling: recovers the CDF level u from the scaled
// variable U. Exact algebraic inverses of the forms in `scale_u`.
fn unscale_u(
    kind: ScalingKind,
    big_u: f64,
    param: f64,
    anchor: Option<f64>,
    u_right: f64,
    mirrored: bool,
    c_log: Option<f64>,
) -> Result<f64> {
    let p = param;
    let u = match kind {
        ScalingKind::ReciprocalLogLeft => {
            let c = 2.0 / (p * p);
            let lead = c * (p - 0.5) * c.ln();
            let body = lead - 1.0 / big_u;
            (body / c + (p + 0.5) * std::f64::consts::LN_2 + (p - 1.0) * p.ln()
                - 0.5 * std::f64::consts::PI.ln())
            .exp()
        }
        ScalingKind::LinearCentral => u_right - big_u / (2.0 * p / 45.0).sqrt(),
        ScalingKind::GammaLogRight => {
            let cl = c_log.unwrap_or_else(|| ln_gamma(2.5 * p));
            1.0 - (-7.5 * big_u - cl).exp()
        }
        ScalingKind::LogLogTail => {
            let t = (-big_u.exp()).exp();
            if mirrored {
                t
            } else {
                1.0 - t
            }
        }
        ScalingKind::CentralProduct => {
            let a = anchor.ok_or_else(|| {
                Error::Table("CENTRAL_PRODUCT regime in a table without an anchor".into())
            })?;
            let d = big_u / (2.0 * std::f64::consts::PI).sqrt();
            if mirrored {
                a - d
            } else {
                a + d
            }
        }
    };
    if !u.is_finite() {
        return Err(Error::NoConvergence(format!(
            "unscale_u({kind:?}, U = {big_u}) produced {u}"
        )));
    }
    Ok(u.clamp(U_MIN, U_MAX))
}

/// Refits every regime of a shipped table against the oracle quantile
/// function, preserving the regime plan (boundaries, scalings, `k1`/`k2`,
/// degrees) and replacing only the Chebyshev coefficients. Used to audit
/// that the shipped coefficients are reproducible.
pub fn regenerate_table(source: &InverseCdfTable, cfg: &OracleConfig) -> Result<InverseCdfTable> {
    let p = source.param;
    let sd = (2.0 * p / 45.0).sqrt();
    let mut out = source.clone();
    for regime in &mut out.regimes {
        let mirrored = source.regime_mirrored(regime);
        let degree = regime.coeffs.len() - 1;
        let (kind, k1, k2, u_right, c_log) = (
            regime.kind,
            regime.k1,
            regime.k2,
            regime.u_right,
            regime.c_log,
        );
        let anchor = source.anchor;
        let standardized = source.standardized;
        let mut target = |z: f64| -> Result<f64> {
            let big_u = (z - k2) / k1;
            let u = unscale_u(kind, big_u, p, anchor, u_right, mirrored, c_log)?;
            let x = invert_cdf(p, u, cfg)?;
            let mut v = if standardized { (x - p / 3.0) / sd } else { x };
            if kind == ScalingKind::CentralProduct {
                // The stored polynomial carries the ratio v / U; the simple
                // zero at the centre keeps it finite.
                let rescaled = scale_u(kind, u, p, anchor, u_right, mirrored, c_log)?;
                v /= rescaled;
            }
            Ok(v)
        };
        regime.coeffs = fit_chebyshev(&mut target, degree)?;
    }
    Ok(out)
}
