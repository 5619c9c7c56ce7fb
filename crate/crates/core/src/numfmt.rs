//! Decimal float formatting shared by every text output.

/// Shortest round-trip representation of `v`, padded with trailing zeros to
/// at least nine significant digits. Parsing the result with `str::parse`
/// yields exactly `v`.
pub fn fmt_f64(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() {
            "NaN".to_string()
        } else if v > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        };
    }
    let mut s = format!("{v}");
    let digits: String = s.chars().filter(|c| c.is_ascii_digit()).collect();
    let significant = digits.trim_start_matches('0').len();
    if significant < 9 {
        if !s.contains('.') {
            s.push('.');
        }
        // for zero (and 0.00x) count the digits after the first non-zero
        let pad = if significant == 0 { 8 } else { 9 - significant };
        s.extend(std::iter::repeat_n('0', pad));
    }
    s
}
