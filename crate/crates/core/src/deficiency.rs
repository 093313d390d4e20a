//! Kolmogorov–Smirnov based deficiency tests on squared normalized residuals,
//! and the scalar deviation / discrepancy measures derived from them.
//!
//! For a calibrated model the squared normalized residuals `((y - f)/sigma)^2`
//! should follow a chi-square law with one degree of freedom. The two-sided
//! KS distance between that law and the empirical distribution of the squared
//! residuals is compared against the asymptotic Kolmogorov distribution.
//! The *deviation* `d` is the smallest allowed CDF offset at which the model
//! still passes at level `alpha`, and the *discrepancy* maps `d` onto a
//! residual-variance inflation scale: `((1 + d) / (1 - d))^2 - 1`.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default significance level of the deficiency tests.
pub const ALPHA: f64 = 0.05;

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// Error function.
///
/// Uses the everywhere-convergent series
/// `erf(x) = 2/sqrt(pi) * exp(-x^2) * sum_n 2^n x^(2n+1) / (1*3*...*(2n+1))`,
/// whose terms are all positive, so there is no cancellation. Beyond |x| = 6
/// the result is 1 to double precision.
pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let ax = x.abs();
    if ax >= 6.0 {
        return x.signum();
    }
    let x2 = ax * ax;
    let mut term = ax;
    let mut sum = ax;
    let mut k = 0.0;
    loop {
        k += 1.0;
        term *= 2.0 * x2 / (2.0 * k + 1.0);
        sum += term;
        if term <= sum * 1e-17 {
            break;
        }
    }
    let r = FRAC_2_SQRT_PI * (-x2).exp() * sum;
    r.min(1.0).copysign(x)
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// CDF of the chi-square distribution with one degree of freedom.
pub fn chi2_1_cdf(eta: f64) -> f64 {
    if eta <= 0.0 {
        0.0
    } else {
        erf((0.5 * eta).sqrt())
    }
}

/// CDF of the Kolmogorov distribution.
///
/// For `lambda >= 1` the alternating series `1 - 2 sum (-1)^(k-1) exp(-2k^2 lambda^2)`
/// converges in a handful of terms; below that the equivalent theta-function
/// form `sqrt(2 pi)/lambda * sum exp(-(2k-1)^2 pi^2 / (8 lambda^2))` is used.
/// Both are truncated once a term drops below 1e-16 (well under the 1e-12 bound).
pub fn kolmogorov_cdf(lambda: f64) -> f64 {
    if !(lambda > 0.0) {
        return 0.0;
    }
    if lambda >= 1.0 {
        let mut sum = 0.0;
        let mut sign = 1.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sum += sign * term;
            sign = -sign;
            if term < 1e-16 {
                break;
            }
        }
        (1.0 - 2.0 * sum).clamp(0.0, 1.0)
    } else {
        let c = std::f64::consts::PI * std::f64::consts::PI / (8.0 * lambda * lambda);
        let mut sum = 0.0;
        for k in 1..=100 {
            let m = (2 * k - 1) as f64;
            let term = (-m * m * c).exp();
            sum += term;
            if term < 1e-16 * sum.max(f64::MIN_POSITIVE) {
                break;
            }
        }
        ((2.0 * std::f64::consts::PI).sqrt() / lambda * sum).clamp(0.0, 1.0)
    }
}

/// Limit CDF of the scaled one-sided KS statistic, `1 - exp(-2 lambda^2)`.
pub fn one_sided_ks_limit_cdf(lambda: f64) -> f64 {
    if lambda > 0.0 {
        -(-2.0 * lambda * lambda).exp_m1()
    } else {
        0.0
    }
}

/// `q` with `kolmogorov_cdf(q) = p`, by bisection to 1e-10.
pub fn kolmogorov_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("quantile level must be in (0,1), got {p}")));
    }
    let (mut lo, mut hi) = (0.0, 10.0);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn sorted_squares(residuals: &[f64]) -> Result<Vec<f64>> {
    if residuals.is_empty() {
        return Err(Error::invalid("KS statistic needs at least one residual"));
    }
    if residuals.iter().any(|r| r.is_nan()) {
        return Err(Error::invalid("residuals contain NaN"));
    }
    let mut s: Vec<f64> = residuals.iter().map(|r| r * r).collect();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Two-sided KS distance between the chi-square(1) CDF and the empirical CDF
/// of the squared normalized residuals.
pub fn ks_statistic(residuals: &[f64]) -> Result<f64> {
    let s = sorted_squares(residuals)?;
    let n = s.len() as f64;
    Ok(s.iter().enumerate().fold(0.0, |acc, (i, &si)| {
        let f = chi2_1_cdf(si);
        let below = i as f64 / n;
        let above = (i + 1) as f64 / n;
        acc.max(f - below).max(above - f)
    }))
}

/// One-sided KS distance `sup (F_chi2 - F_hat)`, which only reacts to
/// residuals that are too large. Residuals should be normalized by upper
/// bounds on the noise scale.
pub fn one_sided_ks_statistic(residuals: &[f64]) -> Result<f64> {
    let s = sorted_squares(residuals)?;
    let n = s.len() as f64;
    Ok(s.iter().enumerate().fold(0.0, |acc, (i, &si)| {
        acc.max(chi2_1_cdf(si) - i as f64 / n)
    }))
}

/// One-sided statistic for residuals `y - f` normalized by noise upper
/// bounds `sigma_bar`.
pub fn one_sided_ks_statistic_bounded(raw_residuals: &[f64], sigma_bar: &[f64]) -> Result<f64> {
    if raw_residuals.len() != sigma_bar.len() {
        return Err(Error::DimensionMismatch {
            expected: raw_residuals.len(),
            got: sigma_bar.len(),
        });
    }
    if sigma_bar.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::invalid("noise upper bounds must be positive"));
    }
    let r: Vec<f64> = raw_residuals.iter().zip(sigma_bar).map(|(e, s)| e / s).collect();
    one_sided_ks_statistic(&r)
}

/// Critical value `q / sqrt(n)` of the two-sided test at level `alpha`.
pub fn critical_value(n: usize, alpha: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    Ok(kolmogorov_quantile(1.0 - alpha)? / (n as f64).sqrt())
}

/// Smallest deviation level at which a model with KS distance `d_stat` on
/// `n` readings passes at significance `alpha`.
pub fn deviation(d_stat: f64, n: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must be in (0,1), got {alpha}")));
    }
    if !(0.0..=1.0).contains(&d_stat) {
        return Err(Error::invalid(format!("KS statistic must be in [0,1], got {d_stat}")));
    }
    Ok((d_stat - critical_value(n, alpha)?).max(0.0))
}

/// `((1 + d) / (1 - d))^2 - 1`.
pub fn discrepancy(d: f64) -> Result<f64> {
    Ok(noise_inflation_factor(d)? - 1.0)
}

/// Residual-variance inflation factor `a` matching deviation `d`, the
/// inverse of `d = 1 - 2 / (1 + sqrt(a))`.
pub fn noise_inflation_factor(d: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&d) {
        return Err(Error::invalid(format!("deviation must be in [0,1), got {d}")));
    }
    let r = (1.0 + d) / (1.0 - d);
    Ok(r * r)
}

/// Asymptotic deviation `1 - 2 / (1 + sqrt(a))` of residuals whose variance is
/// inflated by `a >= 1`.
pub fn deviation_from_inflation(a: f64) -> Result<f64> {
    if !(a >= 1.0) {
        return Err(Error::invalid(format!("inflation factor must be >= 1, got {a}")));
    }
    Ok(1.0 - 2.0 / (1.0 + a.sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeficiencyReport {
    pub n: usize,
    pub ks_statistic: f64,
    pub deviation: f64,
    pub discrepancy: f64,
    pub two_sided_pass: bool,
    pub one_sided_statistic: Option<f64>,
}

impl DeficiencyReport {
    /// Runs both tests on normalized residuals at level `alpha`.
    pub fn from_residuals(residuals: &[f64], alpha: f64) -> Result<Self> {
        let ks = ks_statistic(residuals)?;
        let mut report = Self::from_statistic(ks, residuals.len(), alpha)?;
        report.one_sided_statistic = Some(one_sided_ks_statistic(residuals)?);
        Ok(report)
    }

    pub fn from_statistic(ks: f64, n: usize, alpha: f64) -> Result<Self> {
        let d = deviation(ks, n, alpha)?;
        Ok(Self {
            n,
            ks_statistic: ks,
            deviation: d,
            discrepancy: discrepancy(d)?,
            two_sided_pass: d == 0.0,
            one_sided_statistic: None,
        })
    }

    /// Whether the one-sided test (noise scales as upper bounds) passes.
    pub fn one_sided_pass(&self, alpha: f64) -> Option<bool> {
        self.one_sided_statistic
            .map(|s| one_sided_ks_limit_cdf((self.n as f64).sqrt() * s) <= 1.0 - alpha)
    }
}

impl fmt::Display for DeficiencyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={} D={:.4} d={:.4} discrepancy={:.2} {}",
            self.n,
            self.ks_statistic,
            self.deviation,
            self.discrepancy,
            if self.two_sided_pass { "pass" } else { "deficient" }
        )
    }
}

/// Writes rows `model,n,D,d,discrepancy,pass`.
pub fn write_report_csv<W: Write>(writer: W, rows: &[(String, DeficiencyReport)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model", "n", "D", "d", "discrepancy", "pass"])?;
    for (name, r) in rows {
        w.write_record([
            name.clone(),
            r.n.to_string(),
            r.ks_statistic.to_string(),
            r.deviation.to_string(),
            r.discrepancy.to_string(),
            r.two_sided_pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
