//! One-way ANOVA with F-distribution tail probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;
const MAX_ITER: usize = 10_000;

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// P(F > f) for an F(d1, d2) variable.
pub fn f_survival(f: f64, d1: f64, d2: f64) -> f64 {
    if f.is_nan() {
        return f64::NAN;
    }
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    /// May be +∞ when within-group variance vanishes.
    pub f: f64,
    pub p: f64,
    pub df_between: usize,
    pub df_within: usize,
}

/// Classical one-way ANOVA.
///
/// Degenerate conventions: zero within-group variance with nonzero
/// between-group variance gives F = ∞, p = 0; all values identical gives
/// F = 0, p = 1.
pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<AnovaResult> {
    if groups.len() < 2 {
        return Err(Error::invalid("ANOVA needs at least two groups"));
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(Error::invalid(format!("ANOVA group has {} value(s); need ≥ 2", g.len())));
    }
    if groups.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("ANOVA input contains non-finite values"));
    }
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let k = groups.len();
    let df_between = k - 1;
    let df_within = n - k;
    // Shift by the first value so the result does not depend on a common offset.
    let shift = groups[0][0];
    let means: Vec<f64> = groups
        .iter()
        .map(|g| g.iter().map(|v| v - shift).sum::<f64>() / g.len() as f64)
        .collect();
    let grand = groups.iter().flatten().map(|v| v - shift).sum::<f64>() / n as f64;
    let ss_between: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.len() as f64 * (m - grand).powi(2))
        .sum();
    let ss_within: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.iter().map(|v| (v - shift - m).powi(2)).sum::<f64>())
        .sum();
    let scale = groups.iter().flatten().map(|v| (v - shift).abs()).fold(0.0, f64::max);
    let negligible = |ss: f64| ss <= (scale * 1e-12).powi(2) * n as f64;
    let (f, p) = match (negligible(ss_between), negligible(ss_within)) {
        (true, true) => (0.0, 1.0),
        (false, true) => (f64::INFINITY, 0.0),
        _ => {
            let f = (ss_between / df_between as f64) / (ss_within / df_within as f64);
            (f, f_survival(f, df_between as f64, df_within as f64))
        }
    };
    Ok(AnovaResult {
        f,
        p,
        df_between,
        df_within,
    })
}
