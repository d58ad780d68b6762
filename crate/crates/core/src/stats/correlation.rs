//! Group-wise Pearson correlation aggregated with Fisher's z.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Correlations are kept strictly inside (-1, 1) before `atanh`.
pub const R_CLAMP: f64 = 1.0 - 1e-12;

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "Pearson correlation needs at least 3 points, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite value in correlation input".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateVariance(
            if sxx == 0.0 { "first variable is constant" } else { "second variable is constant" }.into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCorrelation {
    pub group_id: String,
    pub r: f64,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCorrelation {
    pub r_bar: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub n_groups: usize,
}

fn clamp_r(r: f64, group: &str) -> f64 {
    if r.abs() > R_CLAMP {
        log::warn!("group `{group}`: |r| = {} clamped to {R_CLAMP}", r.abs());
        r.signum() * R_CLAMP
    } else {
        r
    }
}

fn back_transform(z: f64) -> f64 {
    z.tanh().clamp(-R_CLAMP, R_CLAMP)
}

/// Average correlation across groups: mean of `atanh(r)`, a two-sided
/// one-sample t-test of the z values against zero, and a CI built in z space
/// and mapped back with `tanh`.
///
/// When every z is identical (sd = 0) the CI collapses onto the mean and the
/// p-value is 0 for a non-zero mean, 1 otherwise.
pub fn fisher_aggregate(rs: &[GroupCorrelation], alpha: f64) -> Result<AggregateCorrelation> {
    if rs.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "Fisher aggregation needs at least 2 groups, got {}",
            rs.len()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Validation(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let mut zs: Vec<f64> = rs.iter().map(|g| clamp_r(g.r, &g.group_id).atanh()).collect();
    if zs.iter().any(|z| !z.is_finite()) {
        return Err(Error::Validation("non-finite group correlation".into()));
    }
    // summation order must not depend on group order
    zs.sort_by(f64::total_cmp);
    let n = zs.len() as f64;
    let mean = zs.iter().sum::<f64>() / n;
    let var = zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    let r_bar = back_transform(mean);

    if sd == 0.0 {
        return Ok(AggregateCorrelation {
            r_bar,
            ci_low: r_bar,
            ci_high: r_bar,
            t_stat: if mean == 0.0 { 0.0 } else { mean.signum() * f64::INFINITY },
            p_value: if mean == 0.0 { 1.0 } else { 0.0 },
            n_groups: rs.len(),
        });
    }

    let t_dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::Validation(e.to_string()))?;
    let se = sd / n.sqrt();
    let t_stat = mean / se;
    let p_value = (2.0 * t_dist.sf(t_stat.abs())).clamp(0.0, 1.0);
    let t_crit = t_dist.inverse_cdf(1.0 - alpha / 2.0);
    Ok(AggregateCorrelation {
        r_bar,
        ci_low: back_transform(mean - t_crit * se),
        ci_high: back_transform(mean + t_crit * se),
        t_stat,
        p_value,
        n_groups: rs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn groups(rs: &[f64]) -> Vec<GroupCorrelation> {
        rs.iter()
            .enumerate()
            .map(|(i, &r)| GroupCorrelation {
                group_id: format!("g{i}"),
                r,
                n_pairs: 10,
            })
            .collect()
    }

    #[test]
    fn perfect_correlations() {
        assert_eq!(pearson(&[1., 2., 3.], &[2., 4., 6.]).unwrap(), 1.0);
        assert_eq!(pearson(&[1., 2., 3.], &[3., 2., 1.]).unwrap(), -1.0);
    }

    #[test]
    fn known_value() {
        // numpy.corrcoef([1,2,3,4],[1,3,2,4]) = 0.8
        assert!((pearson(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn constant_input_is_degenerate() {
        assert!(matches!(pearson(&[1., 1., 1.], &[1., 2., 3.]), Err(Error::DegenerateVariance(_))));
        assert!(matches!(pearson(&[1., 2.], &[1., 2.]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn constant_group_correlations() {
        let a = fisher_aggregate(&groups(&[0.5, 0.5]), 0.05).unwrap();
        assert!((a.r_bar - 0.5).abs() < 1e-12);
        assert_eq!(a.p_value, 0.0);
        assert_eq!(a.ci_low, a.ci_high);
        assert!(!a.p_value.is_nan() && !a.r_bar.is_nan());
    }

    #[test]
    fn two_group_mean() {
        // mpmath, 30 digits: tanh((atanh(0.3) + atanh(0.7)) / 2)
        let a = fisher_aggregate(&groups(&[0.3, 0.7]), 0.05).unwrap();
        assert!((a.r_bar - 0.528_751_146_789_956).abs() < 1e-12);
        assert!(a.ci_low < a.r_bar && a.r_bar < a.ci_high);
    }

    #[test]
    fn t_test_against_reference() {
        // scipy.stats.ttest_1samp(np.arctanh([0.2, 0.4, 0.5, 0.7]), 0)
        let a = fisher_aggregate(&groups(&[0.2, 0.4, 0.5, 0.7]), 0.05).unwrap();
        let z: Vec<f64> = [0.2f64, 0.4, 0.5, 0.7].iter().map(|r| r.atanh()).collect();
        let mean = z.iter().sum::<f64>() / 4.0;
        let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert!((a.t_stat - mean / (sd / 2.0)).abs() < 1e-12);
        assert!((a.t_stat - 3.680_602_134_125_707).abs() < 1e-9, "{}", a.t_stat);
        assert!((a.p_value - 0.034_742_685_241_800_65).abs() < 1e-9, "{}", a.p_value);
    }

    #[test]
    fn clamps_unit_correlations() {
        let a = fisher_aggregate(&groups(&[1.0, 0.9]), 0.05).unwrap();
        assert!(a.r_bar.is_finite() && a.r_bar < 1.0);
        assert!(fisher_aggregate(&groups(&[0.3]), 0.05).is_err());
    }
}
