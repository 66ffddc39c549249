//! Samplers for the three series components of the conditional integrated
//! variance, built on the inverse-CDF tables, plus slow brute-force
//! reference samplers used for distributional validation.
//!
//! The elementary building blocks are:
//! - `S`: the weighted exponential series `(2/pi^2) sum_l eps_l / l^2`
//!   (mean 1/3, variance 2/45). Sums of `n` independent copies, `S^n`, are
//!   what [`sample_s_p`] draws; `n` is decomposed greedily over the shipped
//!   table orders so one draw costs a handful of table lookups.
//! - `C^h`: the weighted gamma series `(2/pi^2) sum_l G_l / (l - 1/2)^2`
//!   with `G_l ~ Gamma(h, 1)` (mean `h`, variance `2h/3`).
//! - `Y2^h = sum_{n >= 1} 4^{-n} C_n^h` (mean `h/3`, variance `2h/45`), drawn
//!   by [`sample_y2`] after decomposing `h` (rounded to 3 decimals) into
//!   digits over the shipped weight tables.
//! - `Z' = sum_{n >= 1} 4^{-n} C_n^2` (mean 2/3, variance 4/45), the
//!   time-rescaled per-count contribution, drawn by [`sample_z_prime`].

use crate::sampling::{sample_exponential, sample_gamma, RngStream};
use crate::tables::{TableId, TableSet, H_DENOMS, S_ORDERS};
use crate::{Error, Result};

/// Greedy decomposition of a convolution order over the shipped `S` tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaseDecomposition {
    /// `(table order, multiplicity)` pairs, largest order first; multiplicities
    /// can be zero-free (only used orders appear).
    pub parts: Vec<(u64, u64)>,
}

/// Splits `n >= 1` greedily over the shipped table orders (largest first).
///
/// The orders include 1, so every positive `n` decomposes exactly and
/// `sum(order * multiplicity) == n`.
pub fn decompose_count(n: u64) -> Result<BaseDecomposition> {
    if n == 0 {
        return Err(Error::invalid("decompose_count: n must be >= 1"));
    }
    let mut rem = n;
    let mut parts = Vec::new();
    for base in S_ORDERS {
        let mult = rem / base;
        if mult > 0 {
            parts.push((base, mult));
            rem -= mult * base;
        }
    }
    debug_assert_eq!(rem, 0);
    Ok(BaseDecomposition { parts })
}

/// Undoes the standardization of a large-order table value.
fn destandardize(order: u64, v: f64) -> f64 {
    let p = order as f64;
    p / 3.0 + v * (2.0 * p / 45.0).sqrt()
}

/// Draws `S^n`, the sum of `n` independent copies of the elementary series
/// variable, by table inversion (`n == 0` yields 0).
pub fn sample_s_p(stream: &mut RngStream, n: u64, tables: &TableSet) -> Result<f64> {
    if n == 0 {
        return Ok(0.0);
    }
    let decomp = decompose_count(n)?;
    let mut total = 0.0;
    for (order, mult) in decomp.parts {
        let table = tables.get(TableId::S(order))?;
        for _ in 0..mult {
            let v = table.inverse_cdf(stream.next_uniform())?;
            total += if table.standardized {
                destandardize(order, v)
            } else {
                v
            };
        }
    }
    Ok(total)
}

/// Digit decomposition of a gamma-series weight over the shipped weight
/// tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HDigits {
    /// `(denominator k, digit)` pairs with digits in `{1, 2}`; the represented
    /// weight is `sum(digit / k)`.
    pub digits: Vec<(u32, u8)>,
    /// The rounded weight actually represented, in thousandths.
    pub millis: u32,
}

impl HDigits {
    /// The weight this decomposition represents.
    pub fn value(&self) -> f64 {
        self.millis as f64 / 1000.0
    }
}

/// Rounds `h` to 3 decimals and decomposes it greedily over the shipped
/// weight denominators with per-denominator digits capped at 2.
///
/// Representable values are exactly the multiples of 0.001 in
/// `[0.001, 0.777]`; anything else is an error.
pub fn decompose_h(h: f64) -> Result<HDigits> {
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::invalid(format!("decompose_h: h = {h}")));
    }
    let millis = (h * 1000.0).round() as i64;
    if millis < 1 {
        return Err(Error::invalid(format!(
            "decompose_h: h = {h} rounds to zero at 3 decimals"
        )));
    }
    let mut rem = millis as u32;
    let mut digits = Vec::new();
    for k in H_DENOMS {
        let weight = 1000 / k; // thousandths contributed by one digit
        if weight == 0 {
            continue;
        }
        let digit = (rem / weight).min(2) as u8;
        if digit > 0 {
            digits.push((k, digit));
            rem -= digit as u32 * weight;
        }
    }
    if rem != 0 {
        return Err(Error::invalid(format!(
            "decompose_h: h = {h} is not representable over the shipped weights"
        )));
    }
    Ok(HDigits {
        digits,
        millis: millis as u32,
    })
}

/// Draws `Y2^h` for the decomposed weight: a sum of independent table draws,
/// `digit` of them per denominator.
pub fn sample_y2(stream: &mut RngStream, h: &HDigits, tables: &TableSet) -> Result<f64> {
    let mut total = 0.0;
    for &(k, digit) in &h.digits {
        let table = tables.get(TableId::H(k))?;
        for _ in 0..digit {
            total += table.inverse_cdf(stream.next_uniform())?;
        }
    }
    Ok(total)
}

/// Draws `Z'`, the time-rescaled per-count series variable, by table
/// inversion.
pub fn sample_z_prime(stream: &mut RngStream, tables: &TableSet) -> Result<f64> {
    let table = tables.get(TableId::ZPrime)?;
    table.inverse_cdf(stream.next_uniform())
}

// Tail of sum_{l > n} l^{-2} via the asymptotic expansion of the trigamma
// function at n + 1; accurate to O(n^{-7}).
fn sq_reciprocal_tail(n: usize, offset: f64) -> f64 {
    let x = n as f64 + offset;
    let x2 = x * x;
    1.0 / x + 1.0 / (2.0 * x2) + 1.0 / (6.0 * x2 * x) - 1.0 / (30.0 * x2 * x2 * x)
}

/// Brute-force draw of the elementary series variable `S`: `inner` explicit
/// exponential terms plus the exact mean of the truncated tail.
pub fn brute_sample_s(stream: &mut RngStream, inner: usize) -> f64 {
    let w = 2.0 / (std::f64::consts::PI * std::f64::consts::PI);
    let mut sum = 0.0;
    for l in 1..=inner {
        let lf = l as f64;
        sum += sample_exponential(stream) / (lf * lf);
    }
    w * (sum + sq_reciprocal_tail(inner, 1.0))
}

/// Brute-force draw of the gamma series `C^h`: `inner` explicit gamma terms
/// plus the exact mean of the truncated tail.
pub fn brute_sample_c(stream: &mut RngStream, h: f64, inner: usize) -> Result<f64> {
    let w = 2.0 / (std::f64::consts::PI * std::f64::consts::PI);
    let mut sum = 0.0;
    for l in 1..=inner {
        let d = l as f64 - 0.5;
        sum += sample_gamma(stream, h, 1.0)? / (d * d);
    }
    Ok(w * (sum + h * sq_reciprocal_tail(inner, 0.5)))
}

/// Brute-force draw of `Z' = sum_{n=1}^{30} 4^{-n} C_n^2` with
/// mean-compensated truncation everywhere.
///
/// The level-1 gamma series keeps `inner` explicit terms; level `n` keeps
/// `max(100, inner / 4^{n-1})` terms, so the (already mean-compensated)
/// truncation noise stays far below the level weight `4^{-n}`. The level sum
/// itself is compensated by the exact mean `2/3 * 4^{-30} * ...` of the
/// dropped levels.
pub fn brute_sample_z_prime(stream: &mut RngStream, inner: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut weight = 1.0;
    for n in 1..=30u32 {
        weight /= 4.0;
        let budget = (inner >> (2 * (n - 1) as usize)).max(100);
        total += weight * brute_sample_c(stream, 2.0, budget)?;
    }
    // Levels beyond 30 contribute their mean: (2/3) * sum_{n>30} 4^{-n}.
    total += (2.0 / 3.0) * weight / 3.0;
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables::TableSet;

    #[test]
    fn count_decomposition_is_exact_and_greedy() {
        for n in [1, 9, 10, 61, 4999, 5083, 123_456_789] {
            let d = decompose_count(n).unwrap();
            let total: u64 = d.parts.iter().map(|(b, m)| b * m).sum();
            assert_eq!(total, n);
            // Greedy: multiplicities of smaller orders never reach the next
            // larger order.
            assert!(d.parts.windows(2).all(|w| w[0].0 > w[1].0));
        }
        assert_eq!(
            decompose_count(5083).unwrap().parts,
            vec![(5000, 1), (50, 1), (10, 3), (1, 3)]
        );
        assert!(decompose_count(0).is_err());
    }

    #[test]
    fn weight_decomposition_matches_hand_cases() {
        let d = decompose_h(0.634).unwrap();
        assert_eq!(d.millis, 634);
        assert_eq!(d.digits, vec![(5, 2), (10, 2), (50, 1), (100, 1), (500, 2)]);
        let total: u32 = d.digits.iter().map(|&(k, d)| d as u32 * (1000 / k)).sum();
        assert_eq!(total, 634);

        for &h in &[0.04, 0.02963, 0.18, 0.63418, 0.0295] {
            let d = decompose_h(h).unwrap();
            let total: u32 = d.digits.iter().map(|&(k, d)| d as u32 * (1000 / k)).sum();
            assert_eq!(total, d.millis);
            assert_eq!(d.millis, (h * 1000.0_f64).round() as u32);
            assert!(d.digits.iter().all(|&(_, digit)| (1..=2).contains(&digit)));
        }
        // 0.9 exceeds the digit-capped range.
        assert!(decompose_h(0.9).is_err());
        assert!(decompose_h(0.0).is_err());
    }

    fn mean_and_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn table_draws_match_analytic_moments() {
        let tables = TableSet::embedded().unwrap();
        let mut s = crate::sampling::RngStream::from_seed(11);
        let n = 100_000;

        // S^137: mean 137/3, variance 2*137/45.
        let xs: Vec<f64> = (0..n)
            .map(|_| sample_s_p(&mut s, 137, &tables).unwrap())
            .collect();
        let (m, v) = mean_and_var(&xs);
        assert!((m / (137.0 / 3.0) - 1.0).abs() < 0.005, "mean {m}");
        assert!((v / (2.0 * 137.0 / 45.0) - 1.0).abs() < 0.05, "var {v}");

        // Y2 at h = 0.634: mean h/3, variance 2h/45.
        let h = decompose_h(0.634).unwrap();
        let ys: Vec<f64> = (0..n)
            .map(|_| sample_y2(&mut s, &h, &tables).unwrap())
            .collect();
        let (m, v) = mean_and_var(&ys);
        assert!((m / (0.634 / 3.0) - 1.0).abs() < 0.01, "mean {m}");
        assert!((v / (2.0 * 0.634 / 45.0) - 1.0).abs() < 0.05, "var {v}");

        // Z': mean 2/3, variance 4/45.
        let zs: Vec<f64> = (0..n)
            .map(|_| sample_z_prime(&mut s, &tables).unwrap())
            .collect();
        let (m, v) = mean_and_var(&zs);
        assert!((m / (2.0 / 3.0) - 1.0).abs() < 0.01, "mean {m}");
        assert!((v / (4.0 / 45.0) - 1.0).abs() < 0.05, "var {v}");
    }

    #[test]
    fn brute_samplers_match_analytic_moments() {
        let mut s = crate::sampling::RngStream::from_seed(12);
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| brute_sample_s(&mut s, 400)).collect();
        let (m, v) = mean_and_var(&xs);
        assert!((m / (1.0 / 3.0) - 1.0).abs() < 0.02, "mean {m}");
        assert!((v / (2.0 / 45.0) - 1.0).abs() < 0.1, "var {v}");

        let zs: Vec<f64> = (0..n)
            .map(|_| brute_sample_z_prime(&mut s, 400).unwrap())
            .collect();
        let (m, v) = mean_and_var(&zs);
        assert!((m / (2.0 / 3.0) - 1.0).abs() < 0.02, "mean {m}");
        assert!((v / (4.0 / 45.0) - 1.0).abs() < 0.1, "var {v}");
    }
}
