//! Plain-text output helpers shared by the export routines.

/// Formats one CSV row with 17 significant digits per value.
pub fn csv_row(values: &[f64]) -> String {
    let mut line = values
        .iter()
        .map(|v| format_number(*v))
        .collect::<Vec<_>>()
        .join(",");
    line.push('\n');
    line
}

/// Round-trippable decimal representation (17 significant digits).
pub fn format_number(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, std::f64::consts::PI] {
            let s = format_number(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
        assert_eq!(csv_row(&[1.0, 2.0]), "1.0000000000000000e0,2.0000000000000000e0\n");
    }
}
