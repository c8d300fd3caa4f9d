//! Number formatting for CSV output.

/// Shortest decimal that parses back to the same `f64`.
///
/// Magnitudes in `[1e-3, 1e15)` use plain notation, everything else uses
/// scientific notation. Both forms round-trip exactly.
pub fn fmt_f64(x: f64) -> String {
    let m = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-3..1e15).contains(&m) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for x in [0.0, 1.0, -2.5, 3.9555e-5, 1e-300, 1.2345678901234567e20, 0.1 + 0.2] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(fmt_f64(1.5e-5), "1.5e-5");
        assert_eq!(fmt_f64(26.5), "26.5");
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
    }
}
