//! Text encodings shared by checkpoint files, CSV datasets, and logs.

/// Format a float with 17 significant digits. Parsing the result back with
/// `str::parse::<f64>` recovers the exact original bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
