//! Shared formatting for CSV and JSON outputs.

/// Formats a real with 17 significant digits, enough to round-trip any `f64`.
pub fn real(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(real(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(real(1.0), "1.0000000000000000e0");
    }
}
