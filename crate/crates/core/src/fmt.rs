//! Fixed numeric formatting for every emitted artifact.

/// Significant digits written for any floating-point value.
pub const SIG_DIGITS: usize = 9;

/// Formats `x` with [`SIG_DIGITS`] significant digits, trailing zeros removed.
///
/// Plain decimal notation is used for magnitudes in `[1e-5, 1e15)`,
/// scientific notation otherwise.
pub fn num(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-5..15).contains(&exp) {
        let s = format!("{:.*e}", SIG_DIGITS - 1, x);
        let (mant, e) = s.split_once('e').unwrap_or((&s, "0"));
        return format!("{}e{}", trim(mant), e);
    }
    let excess = exp - (SIG_DIGITS as i32 - 1);
    if excess > 0 {
        let unit = 10f64.powi(excess);
        return format!("{:.0}", (x / unit).round() * unit);
    }
    let decimals = (-excess) as usize;
    trim(&format!("{:.*}", decimals, x)).to_string()
}

fn trim(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Joins formatted values with `sep`.
pub fn join(values: &[f64], sep: &str) -> String {
    values.iter().map(|v| num(*v)).collect::<Vec<_>>().join(sep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(num(1.0 / 3.0), "0.333333333");
        assert_eq!(num(-2.0 / 3.0 * 1000.0), "-666.666667");
        assert_eq!(num(5.0), "5");
        assert_eq!(num(0.0), "0");
        assert_eq!(num(1.5e-9), "1.5e-9");
        assert_eq!(num(123456789012.0), "123456789000");
    }

    #[test]
    fn rounding_is_stable() {
        for x in [0.1 + 0.2, 1e-5, 99999.99999, -0.000123456789123] {
            assert_eq!(num(x), num(x));
            let back: f64 = num(x).parse().unwrap();
            assert!((back - x).abs() <= 1e-8 * x.abs());
        }
    }
}
