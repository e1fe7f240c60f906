use super::StatsError;

/// Effect size r from an F statistic: sqrt(df_hyp * F / (df_hyp * F + df_err)).
pub fn r_from_f(f: f64, df_hyp: u32, df_err: u32) -> Result<f64, StatsError> {
    if f < 0.0 || f.is_nan() {
        return Err(StatsError::InvalidArgument("F must be non-negative"));
    }
    if df_hyp == 0 || df_err == 0 {
        return Err(StatsError::InvalidArgument("degrees of freedom must be at least 1"));
    }
    let num = df_hyp as f64 * f;
    Ok((num / (num + df_err as f64)).sqrt())
}

/// Effect size r from a t statistic: t / sqrt(t^2 + df).
pub fn r_from_t(t: f64, df: u32) -> Result<f64, StatsError> {
    if df == 0 {
        return Err(StatsError::InvalidArgument("degrees of freedom must be at least 1"));
    }
    Ok(t / (t * t + df as f64).sqrt())
}

/// Percentage change from the text-only rate to the image rate.
pub fn relative_increase(rate_txt: f64, rate_img: f64) -> Result<f64, StatsError> {
    if rate_txt <= 0.0 {
        return Err(StatsError::ZeroBaseline);
    }
    Ok(100.0 * (rate_img - rate_txt) / rate_txt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn conversions() {
        let r = r_from_f(29.15, 1, 313).unwrap();
        assert!((r - 0.2919).abs() < 5e-5, "{r}");
        assert_eq!(r_from_f(0.0, 1, 100).unwrap(), 0.0);
        assert!((r_from_f(1e12, 1, 10).unwrap() - 1.0).abs() < 1e-9);
        assert!(r_from_f(-1.0, 1, 10).is_err());

        let r = r_from_t(4.5, 292).unwrap();
        assert!((r - 0.2547).abs() < 5e-5, "{r}");
        assert_eq!(r_from_t(0.0, 50).unwrap(), 0.0);
        assert_eq!(r_from_t(-4.5, 292).unwrap(), -r);
    }

    #[test]
    fn increases() {
        assert!((relative_increase(0.5, 0.575).unwrap() - 15.0).abs() < 1e-9);
        assert_eq!(relative_increase(0.4, 0.4).unwrap(), 0.0);
        assert!((relative_increase(0.5, 0.44).unwrap() + 12.0).abs() < 1e-9);
        assert_eq!(relative_increase(0.0, 0.3), Err(StatsError::ZeroBaseline));
    }

    proptest! {
        #[test]
        fn f_and_t_routes_agree(t in -50.0f64..50.0, df in 1u32..5000) {
            let via_f = r_from_f(t * t, 1, df).unwrap();
            let via_t = r_from_t(t, df).unwrap().abs();
            prop_assert!((via_f - via_t).abs() < 1e-12);
        }
    }
}
