//! Monte Carlo engine for the Heston stochastic volatility model.
//!
//! The crate samples the asset price *exactly* over arbitrary time steps by
//! drawing the terminal variance from the exact CIR transition law and then
//! drawing the time-integrated variance conditional on both variance
//! endpoints. The conditional integral is decomposed into independent
//! components (a bridge-like double series, a squared-radius series, and a
//! count-weighted series tied to a Bessel-distributed index), each of which is
//! sampled either from precomputed Chebyshev inverse-CDF tables
//! ("direct inversion") or from truncated gamma expansions with moment-matched
//! tails (the baseline). A change of measure between the unconditional and
//! endpoint-conditioned laws is undone by an acceptance/rejection step with an
//! analytically known acceptance constant.
//!
//! Module layout:
//! - [`specfun`]: scalar special functions (Chebyshev evaluation, parabolic
//!   cylinder functions, incomplete gammas, log Bessel-I).
//! - [`sampling`]: deterministic splittable RNG streams and base samplers
//!   (exponential, gamma, normal, Poisson, Bessel counts, CIR transition).
//! - [`tables`]: inverse-CDF table model, text format parser, and evaluation.
//! - [`components`]: samplers for the three series components built on the
//!   tables, plus slow brute-force reference samplers.
//! - [`bridge`]: assembly of the conditional integrated-variance draw,
//!   including the measure-change rejection step and analytic transforms.
//! - [`oracle`]: high-accuracy CDF evaluation, inversion, and Chebyshev
//!   refitting used to validate and regenerate the shipped tables.
//! - [`engine`]: Heston parameter sets, path schemes, and option pricers.

pub mod bridge;
pub mod components;
pub mod engine;
pub mod error;
pub mod oracle;
pub mod sampling;
pub mod specfun;
pub mod tables;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
