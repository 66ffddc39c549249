//! Inverse-CDF tables: model, text format, evaluation, and validation.
//!
//! Each table stores a piecewise-Chebyshev approximation of the quantile
//! function of one base distribution. The unit interval is split into
//! regimes; inside a regime the quantile is a Chebyshev series in
//! `z = k1 * U(u) + k2`, where `U` is a regime-specific analytic rescaling of
//! the CDF level `u` that absorbs the leading tail behaviour of the
//! distribution, so low-degree polynomials reach ~1e-12 accuracy even at
//! `u = 1e-12` or `1 - 1e-12`.
//!
//! Tables for large convolution orders are *standardized*: they tabulate the
//! quantile of `(X - mean) / sd` and the caller undoes the standardization.
//! Those tables carry an `anchor`: the CDF level of the distribution's
//! centre. Regimes entirely to the left of the anchor evaluate mirrored
//! rescalings (`u` in place of `1 - u`, or `anchor - u` in place of
//! `u - anchor`).

use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::specfun::{clenshaw_eval, ln_gamma};
use crate::{Error, Result};

/// Lower end of the supported CDF-level domain; inputs below are clipped.
pub const U_MIN: f64 = 1e-12;
/// Upper end of the supported CDF-level domain; inputs above are clipped.
pub const U_MAX: f64 = 1.0 - 1e-12;

/// Maximum Chebyshev degree a stored regime may use.
pub const MAX_DEGREE: usize = 40;

/// Identifier of a base distribution with a shipped table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TableId {
    /// Sum of `n` independent copies of the elementary double-series variable.
    S(u64),
    /// Squared-radius series variable with weight `h = 1/k`; the value is the
    /// denominator `k`.
    H(u32),
    /// The count-weighted series variable (weight 2), stored pre-divided by
    /// its time-scaling factor.
    ZPrime,
}

impl fmt::Display for TableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TableId::S(n) => write!(f, "S{n}"),
            TableId::H(k) => write!(f, "H{k}"),
            TableId::ZPrime => write!(f, "ZPRIME"),
        }
    }
}

impl TableId {
    fn parse(s: &str) -> Result<Self> {
        if s == "ZPRIME" {
            Ok(TableId::ZPrime)
        } else if let Some(rest) = s.strip_prefix('S') {
            rest.parse()
                .map(TableId::S)
                .map_err(|_| Error::Table(format!("bad base id {s}")))
        } else if let Some(rest) = s.strip_prefix('H') {
            rest.parse()
                .map(TableId::H)
                .map_err(|_| Error::Table(format!("bad base id {s}")))
        } else {
            Err(Error::Table(format!("unknown base id {s}")))
        }
    }
}

/// The analytic rescaling `U(u)` a regime applies before its Chebyshev fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingKind {
    /// Left tail: reciprocal of the leading log-asymptote of `log u` as the
    /// quantile goes to zero.
    ReciprocalLogLeft,
    /// Central band of a small-order table: affine in `u`, scaled by the
    /// distribution's standard deviation.
    LinearCentral,
    /// Right tail: affine in `log(1 - u)`, matching the exponential-gamma
    /// tail; an optional per-regime constant overrides the default
    /// `ln Gamma(5p/2)` offset.
    GammaLogRight,
    /// Far tails of standardized tables: Chebyshev in `log(-log(1-u))`
    /// (or `log(-log u)` mirrored on the left).
    LogLogTail,
    /// Central band of standardized tables: the value is
    /// `U * cheb(z)` with `U = sqrt(2 pi) (u - anchor)` (sign mirrored on the
    /// left), which builds in the simple zero of the quantile at the centre.
    CentralProduct,
}

impl ScalingKind {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "RECIPROCAL_LOG_LEFT" => ScalingKind::ReciprocalLogLeft,
            "LINEAR_CENTRAL" => ScalingKind::LinearCentral,
            "GAMMA_LOG_RIGHT" => ScalingKind::GammaLogRight,
            "LOG_LOG_TAIL" => ScalingKind::LogLogTail,
            "CENTRAL_PRODUCT" => ScalingKind::CentralProduct,
            _ => return Err(Error::Table(format!("unknown scaling kind {s:?}"))),
        })
    }

    /// The token used in table files.
    pub fn as_str(&self) -> &'static str {
        match self {
            ScalingKind::ReciprocalLogLeft => "RECIPROCAL_LOG_LEFT",
            ScalingKind::LinearCentral => "LINEAR_CENTRAL",
            ScalingKind::GammaLogRight => "GAMMA_LOG_RIGHT",
            ScalingKind::LogLogTail => "LOG_LOG_TAIL",
            ScalingKind::CentralProduct => "CENTRAL_PRODUCT",
        }
    }
}

/// One regime of a table: a CDF-level interval plus the fitted Chebyshev
/// series in the rescaled variable.
#[derive(Debug, Clone)]
pub struct RegimeSpec {
    /// Left end of the regime's interval (the previous regime's `u_right`,
    /// or [`U_MIN`] for the first regime).
    pub u_left: f64,
    /// Right end of the regime's interval.
    pub u_right: f64,
    /// Which rescaling this regime applies.
    pub kind: ScalingKind,
    /// Affine map slope: `z = k1 * U + k2`.
    pub k1: f64,
    /// Affine map intercept.
    pub k2: f64,
    /// Optional override of the `GammaLogRight` log-offset constant.
    pub c_log: Option<f64>,
    /// Chebyshev coefficients, constant term first (degree = len - 1).
    pub coeffs: Vec<f64>,
}

/// A parsed inverse-CDF table for one base distribution.
#[derive(Debug)]
pub struct InverseCdfTable {
    /// Which base distribution this table inverts.
    pub id: TableId,
    /// The distribution parameter `p` the rescalings reference (the
    /// convolution order for `S` tables, the weight `h` for `H` tables,
    /// 2 for the count-weighted table).
    pub param: f64,
    /// Whether values are quantiles of the mean-sd standardized variable.
    pub standardized: bool,
    /// CDF level of the distribution centre, present on standardized tables.
    pub anchor: Option<f64>,
    /// Regimes in increasing `u` order, jointly covering `[U_MIN, U_MAX]`.
    pub regimes: Vec<RegimeSpec>,
    clip_count: AtomicU64,
}

impl Clone for InverseCdfTable {
    fn clone(&self) -> Self {
        InverseCdfTable {
            id: self.id,
            param: self.param,
            standardized: self.standardized,
            anchor: self.anchor,
            regimes: self.regimes.clone(),
            clip_count: AtomicU64::new(self.clip_count.load(Ordering::Relaxed)),
        }
    }
}

/// Applies the rescaling `U(u)` of a regime.
///
/// `param` is the table parameter, `anchor` the table anchor (required by
/// `CentralProduct`), `u_right` the regime's right boundary (required by
/// `LinearCentral`), `mirrored` whether the regime sits left of the anchor,
/// and `c_log` the optional `GammaLogRight` offset override.
pub fn scale_u(
    kind: ScalingKind,
    u: f64,
    param: f64,
    anchor: Option<f64>,
    u_right: f64,
    mirrored: bool,
    c_log: Option<f64>,
) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::invalid(format!("scale_u: u = {u} outside (0, 1)")));
    }
    let p = param;
    Ok(match kind {
        ScalingKind::ReciprocalLogLeft => {
            let c = 2.0 / (p * p);
            let lead = c * (p - 0.5) * c.ln();
            let body = c
                * ((u * std::f64::consts::PI.sqrt()).ln()
                    - (p + 0.5) * std::f64::consts::LN_2
                    - (p - 1.0) * p.ln());
            1.0 / (lead - body)
        }
        ScalingKind::LinearCentral => (u_right - u) * (2.0 * p / 45.0).sqrt(),
        ScalingKind::GammaLogRight => {
            let cl = c_log.unwrap_or_else(|| ln_gamma(2.5 * p));
            (-2.0 / 15.0) * ((1.0 - u).ln() + cl)
        }
        ScalingKind::LogLogTail => {
            let t = if mirrored { u } else { 1.0 - u };
            (-t.ln()).ln()
        }
        ScalingKind::CentralProduct => {
            let a = anchor.ok_or_else(|| {
                Error::Table("CENTRAL_PRODUCT regime in a table without an anchor".into())
            })?;
            let d = if mirrored { a - u } else { u - a };
            (2.0 * std::f64::consts::PI).sqrt() * d
        }
    })
}

impl InverseCdfTable {
    /// Whether a regime evaluates the mirrored form of its rescaling.
    pub fn regime_mirrored(&self, regime: &RegimeSpec) -> bool {
        match self.anchor {
            Some(a) => regime.u_right <= a + 1e-15,
            None => false,
        }
    }

    /// The regime containing CDF level `u`.
    pub fn regime_for(&self, u: f64) -> &RegimeSpec {
        self.regimes
            .iter()
            .find(|r| u <= r.u_right)
            .unwrap_or_else(|| self.regimes.last().expect("validated non-empty"))
    }

    /// Evaluates the stored quantile approximation at CDF level `u`.
    ///
    /// `u` outside `[U_MIN, U_MAX]` is clipped (counted in
    /// [`clip_count`](Self::clip_count)). For standardized tables the result
    /// is a quantile of the standardized variable; the caller undoes the
    /// standardization.
    pub fn inverse_cdf(&self, u: f64) -> Result<f64> {
        if !u.is_finite() {
            return Err(Error::invalid(format!("inverse_cdf: u = {u}")));
        }
        let u = if (U_MIN..=U_MAX).contains(&u) {
            u
        } else {
            self.clip_count.fetch_add(1, Ordering::Relaxed);
            u.clamp(U_MIN, U_MAX)
        };
        let regime = self.regime_for(u);
        let mirrored = self.regime_mirrored(regime);
        let big_u = scale_u(
            regime.kind,
            u,
            self.param,
            self.anchor,
            regime.u_right,
            mirrored,
            regime.c_log,
        )?;
        let z = (regime.k1 * big_u + regime.k2).clamp(-1.0, 1.0);
        let mut value = clenshaw_eval(&regime.coeffs, z)?;
        if regime.kind == ScalingKind::CentralProduct {
            value *= big_u;
        }
        Ok(value)
    }

    /// How many evaluations so far had `u` clipped into `[U_MIN, U_MAX]`.
    pub fn clip_count(&self) -> u64 {
        self.clip_count.load(Ordering::Relaxed)
    }

    /// Serializes the table in the shipped file format; `parse_table` on the
    /// result round-trips every field (floats use shortest round-trip
    /// formatting).
    pub fn to_file_string(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "base {}", self.id);
        let _ = writeln!(out, "param {}", self.param);
        let _ = writeln!(out, "standardized {}", self.standardized);
        if let Some(a) = self.anchor {
            let _ = writeln!(out, "anchor {a}");
        }
        let _ = writeln!(out, "regimes {}", self.regimes.len());
        for regime in &self.regimes {
            let _ = writeln!(out, "regime");
            let _ = writeln!(out, "u_right {}", regime.u_right);
            let _ = writeln!(out, "scaling {}", regime.kind.as_str());
            let _ = writeln!(out, "k1 {}", regime.k1);
            let _ = writeln!(out, "k2 {}", regime.k2);
            if let Some(cl) = regime.c_log {
                let _ = writeln!(out, "c_log {cl}");
            }
            let _ = writeln!(out, "degree {}", regime.coeffs.len() - 1);
            for c in &regime.coeffs {
                let _ = writeln!(out, "c {c}");
            }
        }
        out
    }

    /// Structural validation: regime coverage and ordering, degree caps,
    /// `z` staying inside `[-1, 1]` at regime endpoints, value continuity at
    /// regime seams, and monotonicity of the quantile on a 10_000-point grid.
    pub fn validate(&self) -> Result<()> {
        if self.regimes.is_empty() {
            return Err(Error::Table(format!("{}: no regimes", self.id)));
        }
        let mut prev = U_MIN;
        for (i, r) in self.regimes.iter().enumerate() {
            if r.coeffs.is_empty() || r.coeffs.len() > MAX_DEGREE + 1 {
                return Err(Error::Table(format!(
                    "{}: regime {i} has {} coefficients (max degree {MAX_DEGREE})",
                    self.id,
                    r.coeffs.len()
                )));
            }
            if !(r.u_right > prev) {
                return Err(Error::Table(format!(
                    "{}: regime {i} boundary {} not increasing",
                    self.id, r.u_right
                )));
            }
            if (r.u_left - prev).abs() > 1e-15 {
                return Err(Error::Table(format!(
                    "{}: regime {i} leaves a gap at u = {prev}",
                    self.id
                )));
            }
            // z must stay inside [-1, 1] (up to fit noise) across the regime.
            let mirrored = self.regime_mirrored(r);
            for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
                let u = (r.u_left + frac * (r.u_right - r.u_left)).clamp(U_MIN, U_MAX);
                let big_u = scale_u(
                    r.kind,
                    u,
                    self.param,
                    self.anchor,
                    r.u_right,
                    mirrored,
                    r.c_log,
                )?;
                let z = r.k1 * big_u + r.k2;
                if z.abs() > 1.0 + 1e-6 {
                    return Err(Error::Table(format!(
                        "{}: regime {i} maps u = {u} to z = {z} outside [-1, 1]",
                        self.id
                    )));
                }
            }
            prev = r.u_right;
        }
        if (prev - U_MAX).abs() > 1e-9 {
            return Err(Error::Table(format!(
                "{}: regimes end at {prev}, expected {U_MAX}",
                self.id
            )));
        }
        // Seam continuity. Tolerance is in the table's value units and covers
        // the fit error of both neighbouring regimes.
        for r in &self.regimes[..self.regimes.len() - 1] {
            let lo = self.inverse_cdf(r.u_right - 1e-13)?;
            let hi = self.inverse_cdf(r.u_right + 1e-13)?;
            if (hi - lo).abs() > 5e-9 * lo.abs().max(1.0) {
                return Err(Error::Table(format!(
                    "{}: seam jump {:.3e} at u = {}",
                    self.id,
                    hi - lo,
                    r.u_right
                )));
            }
        }
        // Monotonicity audit.
        let n = 10_000;
        let mut last = f64::NEG_INFINITY;
        for i in 0..n {
            let u = U_MIN + (U_MAX - U_MIN) * (i as f64 + 0.5) / n as f64;
            let v = self.inverse_cdf(u)?;
            if v < last - 5e-9 * last.abs().max(1.0) {
                return Err(Error::Table(format!(
                    "{}: quantile not monotone near u = {u} ({v} < {last})",
                    self.id
                )));
            }
            last = last.max(v);
        }
        Ok(())
    }
}

/// Parses a table from its text representation.
///
/// The format is line oriented: `base <id>`, `param <float>`,
/// `standardized <bool>`, optional `anchor <float>`, `regimes <count>`, then
/// per regime a `regime` marker followed by `u_right`, `scaling`, `k1`, `k2`,
/// optional `c_log`, `degree`, and `degree + 1` lines `c <coefficient>`.
/// Unknown keys and malformed values are errors.
pub fn parse_table(text: &str) -> Result<InverseCdfTable> {
    let mut id = None;
    let mut param = None;
    let mut standardized = None;
    let mut anchor = None;
    let mut declared_regimes = None;
    let mut regimes: Vec<RegimeSpec> = Vec::new();
    let mut cur: Option<(RegimeSpec, Option<usize>)> = None;

    let parse_f64 = |key: &str, v: &str| -> Result<f64> {
        v.trim()
            .parse::<f64>()
            .map_err(|_| Error::Table(format!("bad value for {key}: {v:?}")))
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = match line.split_once(' ') {
            Some((k, v)) => (k, v.trim()),
            None if line == "regime" => ("regime", ""),
            None => {
                return Err(Error::Table(format!(
                    "line {}: bad line {line:?}",
                    lineno + 1
                )));
            }
        };
        match key {
            "base" => id = Some(TableId::parse(value)?),
            "param" => param = Some(parse_f64(key, value)?),
            "standardized" => {
                standardized = Some(match value {
                    "true" => true,
                    "false" => false,
                    _ => return Err(Error::Table(format!("bad standardized flag {value:?}"))),
                })
            }
            "anchor" => anchor = Some(parse_f64(key, value)?),
            "regimes" => {
                declared_regimes = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| Error::Table(format!("bad regime count {value:?}")))?,
                )
            }
            "regime" => {
                if let Some((r, _)) = cur.take() {
                    regimes.push(r);
                }
                cur = Some((
                    RegimeSpec {
                        u_left: regimes.last().map_or(U_MIN, |r| r.u_right),
                        u_right: f64::NAN,
                        kind: ScalingKind::LinearCentral,
                        k1: f64::NAN,
                        k2: f64::NAN,
                        c_log: None,
                        coeffs: Vec::new(),
                    },
                    None,
                ));
            }
            "u_right" | "scaling" | "k1" | "k2" | "c_log" | "degree" | "c" => {
                let (r, degree) = cur.as_mut().ok_or_else(|| {
                    Error::Table(format!("line {}: {key} outside a regime", lineno + 1))
                })?;
                match key {
                    "u_right" => r.u_right = parse_f64(key, value)?,
                    "scaling" => r.kind = ScalingKind::parse(value)?,
                    "k1" => r.k1 = parse_f64(key, value)?,
                    "k2" => r.k2 = parse_f64(key, value)?,
                    "c_log" => r.c_log = Some(parse_f64(key, value)?),
                    "degree" => {
                        *degree = Some(
                            value
                                .parse::<usize>()
                                .map_err(|_| Error::Table(format!("bad degree {value:?}")))?,
                        )
                    }
                    "c" => r.coeffs.push(parse_f64(key, value)?),
                    _ => unreachable!(),
                }
            }
            _ => {
                return Err(Error::Table(format!(
                    "line {}: unknown key {key:?}",
                    lineno + 1
                )));
            }
        }
        // Check coefficient counts as regimes close.
        if let Some((r, Some(d))) = &cur {
            if r.coeffs.len() > d + 1 {
                return Err(Error::Table(format!(
                    "regime ending at {} has more than degree + 1 = {} coefficients",
                    r.u_right,
                    d + 1
                )));
            }
        }
    }
    if let Some((r, degree)) = cur.take() {
        if let Some(d) = degree {
            if r.coeffs.len() != d + 1 {
                return Err(Error::Table(format!(
                    "regime ending at {} declares degree {d} but has {} coefficients",
                    r.u_right,
                    r.coeffs.len()
                )));
            }
        }
        regimes.push(r);
    }

    let table = InverseCdfTable {
        id: id.ok_or_else(|| Error::Table("missing base id".into()))?,
        param: param.ok_or_else(|| Error::Table("missing param".into()))?,
        standardized: standardized
            .ok_or_else(|| Error::Table("missing standardized flag".into()))?,
        anchor,
        regimes,
        clip_count: AtomicU64::new(0),
    };
    if let Some(n) = declared_regimes {
        if table.regimes.len() != n {
            return Err(Error::Table(format!(
                "{}: declares {n} regimes, found {}",
                table.id,
                table.regimes.len()
            )));
        }
    }
    if table.standardized && table.anchor.is_none() {
        return Err(Error::Table(format!(
            "{}: standardized table without an anchor",
            table.id
        )));
    }
    table.validate()?;
    Ok(table)
}

/// Loads and validates a table from a file.
pub fn load_table(path: &Path) -> Result<InverseCdfTable> {
    let text = std::fs::read_to_string(path)?;
    parse_table(&text).map_err(|e| Error::Table(format!("{}: {e}", path.display())))
}

/// Convolution orders of the shipped `S` tables (descending, as used by the
/// greedy count decomposition).
pub const S_ORDERS: [u64; 7] = [1_000_000, 100_000, 10_000, 5_000, 50, 10, 1];

/// Denominators of the shipped `H` tables (weights `1/k`, coarsest first, as
/// used by the greedy weight decomposition).
pub const H_DENOMS: [u32; 9] = [5, 10, 20, 50, 100, 200, 500, 1000, 2000];

macro_rules! embedded {
    ($($name:literal),* $(,)?) => {
        [$(($name, include_str!(concat!("../data/", $name, ".tbl")))),*]
    };
}

/// The shipped table sources, embedded in the binary.
pub const EMBEDDED_TABLES: [(&str, &str); 17] = embedded![
    "s_1",
    "s_10",
    "s_50",
    "s_5000",
    "s_10000",
    "s_100000",
    "s_1000000",
    "h_5",
    "h_10",
    "h_20",
    "h_50",
    "h_100",
    "h_200",
    "h_500",
    "h_1000",
    "h_2000",
    "z_prime",
];

/// The full set of tables the samplers need, indexed by [`TableId`].
#[derive(Debug, Clone)]
pub struct TableSet {
    tables: Vec<InverseCdfTable>,
}

impl TableSet {
    /// Loads the tables embedded in the binary.
    pub fn embedded() -> Result<TableSet> {
        let mut tables = Vec::with_capacity(EMBEDDED_TABLES.len());
        for (name, text) in EMBEDDED_TABLES {
            let t = parse_table(text)
                .map_err(|e| Error::Table(format!("embedded table {name}: {e}")))?;
            tables.push(t);
        }
        Self::from_tables(tables)
    }

    /// Loads every `*.tbl` file in a directory; the set must contain exactly
    /// the tables the samplers need.
    pub fn load_dir(dir: &Path) -> Result<TableSet> {
        let mut tables = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "tbl") {
                tables.push(load_table(&path)?);
            }
        }
        Self::from_tables(tables)
    }

    fn from_tables(mut tables: Vec<InverseCdfTable>) -> Result<TableSet> {
        tables.sort_by(|a, b| a.id.cmp(&b.id));
        let set = TableSet { tables };
        for n in S_ORDERS {
            set.get(TableId::S(n))?;
        }
        for k in H_DENOMS {
            set.get(TableId::H(k))?;
        }
        set.get(TableId::ZPrime)?;
        Ok(set)
    }

    /// Looks up the table for one base distribution.
    pub fn get(&self, id: TableId) -> Result<&InverseCdfTable> {
        self.tables
            .binary_search_by(|t| t.id.cmp(&id))
            .map(|i| &self.tables[i])
            .map_err(|_| Error::Table(format!("missing table {id}")))
    }

    /// All tables in the set.
    pub fn iter(&self) -> impl Iterator<Item = &InverseCdfTable> {
        self.tables.iter()
    }
}
