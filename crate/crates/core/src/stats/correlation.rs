use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

use super::{mean, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Df {
    Single(f64),
    Pair(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    /// Pearson r for binary factors, correlation ratio eta for multi-level ones.
    pub r: f64,
    /// t for point-biserial, F for ANOVA.
    pub statistic: f64,
    pub df: Df,
    pub p: f64,
    pub n: usize,
    /// The outcome has no variance, so r is reported as 0 and p as 1.
    pub degenerate: bool,
}

/// Pearson correlation between a 0/1 label and the outcome, with the
/// equivalent independent-samples t statistic on n - 2 degrees of freedom.
pub fn point_biserial(groups: &[(bool, f64)]) -> Result<CorrelationResult, StatsError> {
    let n1 = groups.iter().filter(|(l, _)| *l).count();
    let n0 = groups.len() - n1;
    if n1 < 2 || n0 < 2 {
        return Err(StatsError::SingleClass);
    }
    let n = groups.len();
    let df = (n - 2) as f64;
    let xs: Vec<f64> = groups.iter().map(|(l, _)| if *l { 1.0 } else { 0.0 }).collect();
    let ys: Vec<f64> = groups.iter().map(|(_, y)| *y).collect();
    let (mx, my) = (mean(&xs), mean(&ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if syy <= 0.0 {
        return Ok(CorrelationResult {
            r: 0.0,
            statistic: 0.0,
            df: Df::Single(df),
            p: 1.0,
            n,
            degenerate: true,
        });
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let (t, p) = if 1.0 - r * r <= 0.0 {
        (f64::INFINITY.copysign(r), 0.0)
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 2");
        (t, (2.0 * dist.sf(t.abs())).min(1.0))
    };
    Ok(CorrelationResult {
        r,
        statistic: t,
        df: Df::Single(df),
        p,
        n,
        degenerate: false,
    })
}

/// One-way ANOVA summarized by the correlation ratio sqrt(SS_between / SS_total).
pub fn anova_eta<K: Ord>(groups: &BTreeMap<K, Vec<f64>>) -> Result<CorrelationResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFew {
            needed: 2,
            got: groups.len(),
        });
    }
    if groups.values().any(|g| g.len() < 2) {
        return Err(StatsError::InvalidArgument("every level needs at least two observations"));
    }
    let all: Vec<f64> = groups.values().flatten().copied().collect();
    let n = all.len();
    let k = groups.len();
    let grand = mean(&all);
    let ss_total: f64 = all.iter().map(|y| (y - grand) * (y - grand)).sum();
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups.values() {
        let m = mean(g);
        ss_between += g.len() as f64 * (m - grand) * (m - grand);
        ss_within += g.iter().map(|y| (y - m) * (y - m)).sum::<f64>();
    }
    let df1 = (k - 1) as f64;
    let df2 = (n - k) as f64;
    if ss_total <= 0.0 {
        return Ok(CorrelationResult {
            r: 0.0,
            statistic: 0.0,
            df: Df::Pair(df1, df2),
            p: 1.0,
            n,
            degenerate: true,
        });
    }
    let eta = (ss_between / ss_total).clamp(0.0, 1.0).sqrt();
    let (f, p) = if ss_within <= 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let f = (ss_between / df1) / (ss_within / df2);
        let dist = FisherSnedecor::new(df1, df2).expect("positive degrees of freedom");
        (f, dist.sf(f))
    };
    Ok(CorrelationResult {
        r: eta,
        statistic: f,
        df: Df::Pair(df1, df2),
        p,
        n,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_separation() {
        let r = point_biserial(&[(false, 0.0), (false, 0.0), (true, 1.0), (true, 1.0)]).unwrap();
        assert_eq!(r.r, 1.0);
        assert_eq!(r.p, 0.0);
    }

    #[test]
    fn single_class_rejected() {
        assert_eq!(
            point_biserial(&[(true, 0.1), (true, 0.2), (false, 0.3)]),
            Err(StatsError::SingleClass)
        );
        let one: BTreeMap<u8, Vec<f64>> = [(0, vec![0.1, 0.2])].into();
        assert!(anova_eta(&one).is_err());
    }

    #[test]
    fn constant_outcome_is_flagged() {
        let g: BTreeMap<u8, Vec<f64>> = [(0, vec![0.5, 0.5]), (1, vec![0.5, 0.5])].into();
        let r = anova_eta(&g).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.r, 0.0);
    }

    #[test]
    fn separated_groups_have_eta_near_one() {
        let g: BTreeMap<u8, Vec<f64>> = [
            (0, vec![0.0, 0.001, -0.001]),
            (1, vec![0.5, 0.501, 0.499]),
            (2, vec![1.0, 1.001, 0.999]),
        ]
        .into();
        // Direct sums: SS_between = 3 * (0.25 + 0 + 0.25) = 1.5, SS_within = 6e-6.
        let r = anova_eta(&g).unwrap();
        let expected = (1.5f64 / (1.5 + 6e-6)).sqrt();
        assert!((r.r - expected).abs() < 1e-12);
        assert!(r.r > 0.99);
    }

    fn data() -> impl Strategy<Value = Vec<(bool, f64)>> {
        prop::collection::vec((any::<bool>(), 0.0f64..1.0), 6..40).prop_filter(
            "two of each label",
            |v| {
                let n1 = v.iter().filter(|(l, _)| *l).count();
                n1 >= 2 && v.len() - n1 >= 2
            },
        )
    }

    proptest! {
        #[test]
        fn label_flip_negates_r(d in data()) {
            let a = point_biserial(&d).unwrap();
            let flipped: Vec<_> = d.iter().map(|(l, y)| (!l, *y)).collect();
            let b = point_biserial(&flipped).unwrap();
            prop_assert!((a.r + b.r).abs() < 1e-12);
            prop_assert!((a.p - b.p).abs() < 1e-9);
        }

        #[test]
        fn two_level_eta_is_abs_point_biserial(d in data()) {
            let pb = point_biserial(&d).unwrap();
            let mut g: BTreeMap<bool, Vec<f64>> = BTreeMap::new();
            for (l, y) in &d {
                g.entry(*l).or_default().push(*y);
            }
            let eta = anova_eta(&g).unwrap();
            prop_assert!((eta.r - pb.r.abs()).abs() < 1e-12);
            prop_assert!((eta.p - pb.p).abs() < 1e-8);
        }
    }
}
