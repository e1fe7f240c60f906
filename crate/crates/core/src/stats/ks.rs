use serde::{Deserialize, Serialize};

use super::{mean, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d: f64,
    pub p: f64,
    pub n: usize,
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// One-sample Kolmogorov-Smirnov test against a normal with the sample mean
/// and standard deviation. Plain asymptotic p-value, no Lilliefors correction.
pub fn ks_normality(diffs: &[f64]) -> Result<KsResult, StatsError> {
    let n = diffs.len();
    if n < 5 {
        return Err(StatsError::TooFew { needed: 5, got: n });
    }
    let m = mean(diffs);
    let var = diffs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
    if var <= 0.0 {
        return Err(StatsError::Degenerate("zero variance"));
    }
    let sd = var.sqrt();
    let mut z: Vec<f64> = diffs.iter().map(|x| (x - m) / sd).collect();
    z.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, x) in z.iter().enumerate() {
        let f = std_normal_cdf(*x);
        d = d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    Ok(KsResult {
        d,
        p: kolmogorov_sf(nf.sqrt() * d),
        n,
    })
}

/// P(K > x) for the Kolmogorov distribution.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.18 {
        // Small-argument series for the CDF converges fast here.
        let c = std::f64::consts::PI * std::f64::consts::PI / (8.0 * x * x);
        let s: f64 = (1..=20)
            .map(|k| {
                let j = (2 * k - 1) as f64;
                (-j * j * c).exp()
            })
            .sum();
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / x * s;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let mut s = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * x * x).exp();
            s += if k % 2 == 1 { term } else { -term };
            if term < 1e-300 {
                break;
            }
        }
        (2.0 * s).clamp(0.0, 1.0)
    }
}
