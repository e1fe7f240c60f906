//! Aggregation and the statistical battery used by the report tables.

mod aggregate;
mod correlation;
mod effect;
mod kappa;
mod ks;
pub mod lmm;
mod wilcoxon;

pub use aggregate::{binarize, CellKey, ObservationCell, YesRate};
pub use correlation::{anova_eta, point_biserial, CorrelationResult, Df};
pub use effect::{r_from_f, r_from_t, relative_increase};
pub use kappa::{fleiss_kappa, fleiss_kappa_table, per_item_kappa, KappaResult, LIKERT_LEVELS};
pub use ks::{kolmogorov_sf, ks_normality, KsResult};
pub use lmm::{fit_lmm, LmmData, LmmFit};
pub use wilcoxon::{paired_wilcoxon, WilcoxonMethod, WilcoxonResult, EXACT_MAX_PAIRS};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("no valid ratings in cell")]
    NoValidRatings,
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("degenerate sample: {0}")]
    Degenerate(&'static str),
    #[error("both groups need at least two observations")]
    SingleClass,
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("singular design: {0}")]
    SingularDesign(&'static str),
    #[error("relative increase undefined for a zero baseline")]
    ZeroBaseline,
}

/// Two-sided p-value of a standard normal statistic.
pub(crate) fn normal_two_sided(z: f64) -> f64 {
    statrs::function::erf::erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
pub(crate) fn normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p)
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Significance stars at the .05 / .01 / .001 thresholds.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}
