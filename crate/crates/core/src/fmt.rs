//! Number formatting shared by printed tables and emitted files, so both
//! always show the same digits.

/// Fixed-point rendering with `decimals` digits; `-0.00` prints as `0.00`.
pub fn fixed(value: f64, decimals: usize) -> String {
    let s = format!("{value:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// Relative cost as displayed in tables: two decimals.
pub fn percent(value: f64) -> String {
    fixed(value, 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_zero() {
        assert_eq!(fixed(-0.0001, 2), "0.00");
        assert_eq!(fixed(-0.5, 1), "-0.5");
        assert_eq!(percent(14.473_684), "14.47");
    }
}
