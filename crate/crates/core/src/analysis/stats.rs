//! Regression statistics: OLS with a two-sided slope t-test, the Student t
//! CDF through the regularized incomplete beta function, Spearman's rho and
//! an exact sign test.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Two-sided p-value for `slope != 0`.
    pub p_value: f64,
    pub n: usize,
}

/// Least-squares line through `(x, y)`.
pub fn ols_regress(x: &[f64], y: &[f64]) -> Result<RegressionResult> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "regression on {} x values and {} y values",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::Degenerate(format!("need at least 3 points, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite regression input".into()));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    if sxx <= f64::EPSILON * mx.abs().max(1.0) * nf {
        return Err(Error::Degenerate("x is constant".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (intercept + slope * a);
            r * r
        })
        .sum();
    let dof = nf - 2.0;
    let (r_squared, p_value) = if syy == 0.0 {
        (0.0, 1.0)
    } else {
        let r2 = (1.0 - ss_res / syy).clamp(0.0, 1.0);
        let p = if ss_res <= syy * 1e-28 {
            // perfect fit: the t statistic is unbounded
            f64::MIN_POSITIVE
        } else {
            let se = (ss_res / dof / sxx).sqrt();
            two_sided_p(slope / se, dof)
        };
        (r2, p)
    };
    Ok(RegressionResult {
        slope,
        intercept,
        r_squared,
        p_value: p_value.clamp(f64::MIN_POSITIVE, 1.0),
        n,
    })
}

pub fn two_sided_p(t: f64, dof: f64) -> f64 {
    if t.is_nan() {
        return 1.0;
    }
    let tail = student_t_sf(t.abs(), dof);
    (2.0 * tail).min(1.0)
}

/// `P(T <= t)` for Student's t with `dof` degrees of freedom.
pub fn student_t_cdf(t: f64, dof: f64) -> f64 {
    if t >= 0.0 {
        1.0 - student_t_sf(t, dof)
    } else {
        student_t_sf(-t, dof)
    }
}

/// Upper tail `P(T > t)` for `t >= 0`.
fn student_t_sf(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = dof / (dof + t * t);
    0.5 * regularized_incomplete_beta(x, dof / 2.0, 0.5)
}

/// Natural log of the gamma function (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// `I_x(a, b)` by the continued fraction (modified Lentz), tolerance 1e-15.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    // the fraction converges fast for x < (a+1)/(a+b+2); use symmetry otherwise
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_fraction(x, a, b) / a
    } else {
        1.0 - ln_front.exp() * beta_fraction(1.0 - x, b, a) / b
    }
}

fn beta_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
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

/// Average ranks (1-based), ties share the mean rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::Degenerate("spearman needs >= 3 paired values".into()));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Degenerate("constant ranks".into()));
    }
    Ok(cov / (vx * vy).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignTest {
    pub positive: usize,
    pub negative: usize,
    /// Two-sided exact binomial p-value (ties dropped).
    pub p_value: f64,
}

/// Exact two-sided sign test on paired differences.
pub fn sign_test(differences: &[f64]) -> SignTest {
    let positive = differences.iter().filter(|d| **d > 0.0).count();
    let negative = differences.iter().filter(|d| **d < 0.0).count();
    let n = positive + negative;
    if n == 0 {
        return SignTest {
            positive,
            negative,
            p_value: 1.0,
        };
    }
    let k = positive.min(negative);
    let ln_half_n = n as f64 * 0.5f64.ln();
    let tail: f64 = (0..=k)
        .map(|i| (ln_choose(n, i) + ln_half_n).exp())
        .sum();
    SignTest {
        positive,
        negative,
        p_value: (2.0 * tail).min(1.0),
    }
}

fn ln_choose(n: usize, k: usize) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let r = ols_regress(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]).unwrap();
        assert!((r.slope - 1.0).abs() < 1e-15);
        assert!(r.intercept.abs() < 1e-15);
        assert_eq!(r.r_squared, 1.0);
        assert!(r.p_value > 0.0 && r.p_value < 1e-6);
    }

    #[test]
    fn flat_tent() {
        let r = ols_regress(&[0.0, 1.0, 2.0], &[0.0, 1.0, 0.0]).unwrap();
        assert!(r.slope.abs() < 1e-15);
        assert!(r.r_squared.abs() < 1e-15);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_y_gives_zero_r2() {
        let r = ols_regress(&[1.0, 2.0, 3.0, 4.0], &[5.0; 4]).unwrap();
        assert_eq!((r.slope, r.r_squared, r.p_value), (0.0, 0.0, 1.0));
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(ols_regress(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::Degenerate(_))));
        assert!(matches!(ols_regress(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::Degenerate(_))));
        assert!(ols_regress(&[1.0, 2.0, 3.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn cauchy_cdf() {
        assert!((student_t_cdf(1.0, 1.0) - 0.75).abs() < 1e-14);
        assert!((student_t_cdf(0.0, 7.0) - 0.5).abs() < 1e-15);
        assert!((student_t_cdf(-1.0, 1.0) - 0.25).abs() < 1e-14);
    }

    #[test]
    fn known_critical_value() {
        let p = two_sided_p(2.306, 8.0);
        assert!((p - 0.05).abs() < 5e-4, "{p}");
    }

    #[test]
    fn ln_gamma_values() {
        assert!(ln_gamma(1.0).abs() < 1e-13);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-12);
    }

    #[test]
    fn spearman_and_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        let rho = spearman_rho(&[1.0, 2.0, 3.0, 4.0], &[1.0, 4.0, 9.0, 16.0]).unwrap();
        assert!((rho - 1.0).abs() < 1e-15);
        let rho = spearman_rho(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert!((rho + 1.0).abs() < 1e-15);
    }

    #[test]
    fn sign_test_values() {
        let s = sign_test(&[1.0; 10]);
        assert!((s.p_value - 2.0 / 1024.0).abs() < 1e-15);
        let s = sign_test(&[1.0, -1.0, 0.0]);
        assert_eq!((s.positive, s.negative), (1, 1));
        assert!((s.p_value - 1.0).abs() < 1e-12);
    }
}
