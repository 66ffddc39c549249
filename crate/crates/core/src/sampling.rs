//! Deterministic, splittable random streams and the base samplers built on
//! them.
//!
//! A [`RngStream`] wraps a counter-based ChaCha generator seeded from a
//! 64-bit value. Child streams derived with [`RngStream::split`] are
//! statistically independent of the parent and of each other, and the whole
//! tree is reproducible from the root seed alone — per-path child streams
//! give simulations that are independent of scheduling order.
//!
//! The samplers cover what the engine needs: exponential and normal draws
//! (ziggurat, via `rand_distr`), gamma draws (Marsaglia-Tsang squeeze with a
//! power boost for shape < 1, via `rand_distr`), Poisson counts (sequential
//! inversion for small means, the PTRD transformed-rejection method for large
//! ones), Bessel-distributed counts by sequential inversion of the exact pmf,
//! and the exact transition of the square-root (CIR) variance process via its
//! noncentral chi-square representation.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::specfun::{ln_gamma, log_bessel_i};
use crate::{Error, Result};

// SplitMix64 finaliser: a bijective 64-bit mix used both to seed the root
// stream and to derive child seeds.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// A deterministic random stream supporting cheap, collision-free splitting.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha12Rng,
    lineage: u64,
}

impl RngStream {
    /// Creates the root stream of a reproducible tree from a 64-bit seed.
    pub fn from_seed(seed: u64) -> Self {
        Self::from_lineage(splitmix64(seed))
    }

    fn from_lineage(lineage: u64) -> Self {
        // Expand the 64-bit lineage into a full 256-bit ChaCha key by
        // iterating the mixer, so distinct lineages give unrelated states.
        let mut key = [0u8; 32];
        let mut s = lineage;
        for chunk in key.chunks_exact_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        RngStream {
            rng: ChaCha12Rng::from_seed(key),
            lineage,
        }
    }

    /// Derives the `child_index`-th child stream.
    ///
    /// Splitting reads no randomness from the parent, so the parent's future
    /// output is unaffected and children can be created in any order.
    pub fn split(&self, child_index: u64) -> Self {
        let mixed =
            splitmix64(self.lineage ^ splitmix64(child_index.wrapping_add(0x0165_667b_97f4_a7c5)));
        Self::from_lineage(mixed)
    }

    /// A uniform draw on the open interval (0, 1).
    pub fn next_uniform(&mut self) -> f64 {
        loop {
            let u = (self.rng.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0);
            if u > 0.0 {
                return u;
            }
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// A standard exponential draw (rate 1).
pub fn sample_exponential(stream: &mut RngStream) -> f64 {
    Exp1.sample(stream)
}

/// A normal draw with the given mean and standard deviation (`sd >= 0`).
pub fn sample_normal(stream: &mut RngStream, mean: f64, sd: f64) -> Result<f64> {
    if !(sd >= 0.0) || !mean.is_finite() || !sd.is_finite() {
        return Err(Error::invalid(format!(
            "sample_normal: mean = {mean}, sd = {sd}"
        )));
    }
    let z: f64 = StandardNormal.sample(stream);
    Ok(mean + sd * z)
}

/// A gamma draw with the given shape and *rate* (both > 0).
pub fn sample_gamma(stream: &mut RngStream, shape: f64, rate: f64) -> Result<f64> {
    if !(shape > 0.0) || !(rate > 0.0) {
        return Err(Error::invalid(format!(
            "sample_gamma: shape = {shape}, rate = {rate}"
        )));
    }
    let dist = rand_distr::Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::invalid(format!("sample_gamma: {e}")))?;
    Ok(dist.sample(stream))
}

/// Threshold mean below which Poisson sampling uses sequential inversion and
/// above which it uses the PTRD transformed-rejection method.
pub const POISSON_INVERSION_CUTOFF: f64 = 10.0;

/// A Poisson count with the given mean (`mean >= 0`).
pub fn sample_poisson(stream: &mut RngStream, mean: f64) -> Result<u64> {
    if !(mean >= 0.0) || !mean.is_finite() {
        return Err(Error::invalid(format!("sample_poisson: mean = {mean}")));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    if mean < POISSON_INVERSION_CUTOFF {
        poisson_inversion(stream, mean)
    } else {
        poisson_ptrd(stream, mean)
    }
}

fn poisson_inversion(stream: &mut RngStream, mean: f64) -> Result<u64> {
    let u = stream.next_uniform();
    let mut p = (-mean).exp();
    let mut cum = p;
    let mut k = 0u64;
    // With mean < 10 the cdf reaches 1 - 1e-16 far before this cap.
    while u > cum && k < 400 {
        k += 1;
        p *= mean / k as f64;
        cum += p;
    }
    Ok(k)
}

// PTRD: Hoermann's transformed rejection with decomposition for mean >= 10.
fn poisson_ptrd(stream: &mut RngStream, mean: f64) -> Result<u64> {
    const LOG_SQRT_2PI: f64 = 0.918_938_533_204_672_7;
    let smu = mean.sqrt();
    let b = 0.931 + 2.53 * smu;
    let a = -0.059 + 0.024_83 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);

    for _ in 0..10_000 {
        let mut v = stream.next_uniform();
        let u;
        if v <= 0.86 * vr {
            u = v / vr - 0.43;
            let k = ((2.0 * a / (0.5 - u.abs()) + b) * u + mean + 0.445).floor();
            return Ok(k as u64);
        }
        if v >= vr {
            u = stream.next_uniform() - 0.5;
        } else {
            let w = v / vr - 0.93;
            u = w.signum() * 0.5 - w;
            v = stream.next_uniform() * vr;
        }
        let us = 0.5 - u.abs();
        if us < 0.013 && v > us {
            continue;
        }
        let kf = ((2.0 * a / us + b) * u + mean + 0.445).floor();
        v = v * inv_alpha / (a / (us * us) + b);
        if kf < 0.0 {
            continue;
        }
        let k = kf;
        if k >= 10.0 {
            let lhs = (v * smu).ln();
            let rhs = (k + 0.5) * (mean / k).ln() - mean - LOG_SQRT_2PI + k
                - (1.0 / 12.0 - 1.0 / (360.0 * k * k)) / k;
            if lhs <= rhs {
                return Ok(k as u64);
            }
        } else if v.ln() <= k * mean.ln() - mean - ln_gamma(k + 1.0) {
            return Ok(k as u64);
        }
    }
    Err(Error::NoConvergence(format!(
        "poisson PTRD exceeded its rejection budget at mean = {mean}"
    )))
}

/// A draw from the Bessel count distribution with index `nu > -1` and
/// argument `z >= 0`:
/// `P(N = n) proportional to (z/2)^{2n + nu} / (n! Gamma(n + nu + 1))`.
///
/// Sequential inversion starting from the exact `P(N = 0)`; the pmf ratio
/// `p_{n+1}/p_n = (z/2)^2 / ((n+1)(n+1+nu))` makes the walk cheap.
pub fn sample_bessel_count(stream: &mut RngStream, nu: f64, z: f64) -> Result<u64> {
    if !(nu > -1.0) || !(z >= 0.0) || !z.is_finite() {
        return Err(Error::invalid(format!(
            "sample_bessel_count: nu = {nu}, z = {z}"
        )));
    }
    if z == 0.0 {
        return Ok(0);
    }
    let log_p0 = nu * (z / 2.0).ln() - ln_gamma(nu + 1.0) - log_bessel_i(nu, z)?;
    let u = stream.next_uniform();
    let mut p = log_p0.exp();
    let mut cum = p;
    let ratio_num = (z / 2.0) * (z / 2.0);
    let mut n = 0u64;
    while u > cum {
        let nf = n as f64;
        p *= ratio_num / ((nf + 1.0) * (nf + 1.0 + nu));
        cum += p;
        n += 1;
        if n > 10_000_000 {
            return Err(Error::NoConvergence(format!(
                "bessel count inversion: nu = {nu}, z = {z}"
            )));
        }
    }
    Ok(n)
}

/// Parameters of one exact step of the square-root variance process
/// `dV = kappa (theta - V) dt + sigma sqrt(V) dW`.
#[derive(Debug, Clone, Copy)]
pub struct CirTransitionParams {
    /// Mean-reversion speed (> 0).
    pub kappa: f64,
    /// Long-run variance level (> 0).
    pub theta: f64,
    /// Volatility of variance (> 0).
    pub sigma: f64,
    /// Degrees of freedom `4 kappa theta / sigma^2`.
    pub delta: f64,
    /// Step length (> 0).
    pub dt: f64,
}

impl CirTransitionParams {
    /// Validates the inputs and precomputes the degrees of freedom.
    pub fn new(kappa: f64, theta: f64, sigma: f64, dt: f64) -> Result<Self> {
        if !(kappa > 0.0) || !(theta > 0.0) || !(sigma > 0.0) || !(dt > 0.0) {
            return Err(Error::Params(format!(
                "CIR transition needs kappa, theta, sigma, dt > 0; got \
                 kappa = {kappa}, theta = {theta}, sigma = {sigma}, dt = {dt}"
            )));
        }
        Ok(CirTransitionParams {
            kappa,
            theta,
            sigma,
            delta: 4.0 * kappa * theta / (sigma * sigma),
            dt,
        })
    }
}

/// Samples the variance at the end of one step exactly, given its current
/// value `v0 >= 0`.
///
/// The transition law is a scaled noncentral chi-square, realised as a
/// Poisson mixture of central gamma draws:
/// `V_dt = c * Gamma(delta/2 + N, 1/2)` with `N ~ Poisson(lambda/2)`,
/// `c = sigma^2 (1 - e^{-kappa dt}) / (4 kappa)` and
/// `lambda = v0 e^{-kappa dt} / c`.
pub fn sample_cir_transition(
    stream: &mut RngStream,
    v0: f64,
    params: &CirTransitionParams,
) -> Result<f64> {
    if !(v0 >= 0.0) || !v0.is_finite() {
        return Err(Error::invalid(format!("sample_cir_transition: v0 = {v0}")));
    }
    let decay = (-params.kappa * params.dt).exp();
    let c = params.sigma * params.sigma * (1.0 - decay) / (4.0 * params.kappa);
    let lambda = v0 * decay / c;
    let n = sample_poisson(stream, lambda / 2.0)?;
    let g = sample_gamma(stream, params.delta / 2.0 + n as f64, 0.5)?;
    Ok(c * g)
}
