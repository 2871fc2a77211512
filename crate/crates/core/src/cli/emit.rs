//! Result emission: fixed significant-digit decimal formatting, atomic file
//! writes (temp + rename), and the CSV/JSON writers shared by the commands.
//! Identical inputs produce byte-identical files: field order is fixed,
//! floats are formatted at 12 significant digits, rationals serialize as
//! "num/den".

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::bellharness::RunRecord;
use crate::exactmath::Rational;
use num_traits::ToPrimitive;

/// Plain-decimal rendering at `sig` significant digits.
pub fn format_sig(x: f64, sig: u32) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = (sig as i32 - 1 - exp).clamp(0, 320) as usize;
    format!("{x:.decimals$}")
}

/// A rational rendered both ways: {"rational": "-50/101", "decimal": "-0.495..."}.
pub fn rational_json(r: &Rational) -> serde_json::Value {
    json!({
        "rational": r.to_string(),
        "decimal": format_sig(r.to_f64().unwrap_or(f64::NAN), 12),
    })
}

/// Write bytes to `path` atomically: write `<path>.tmp`, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = tmp_path(path);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Remove declared outputs after a failure so no partial artifacts remain.
pub fn remove_outputs(paths: &[&Option<PathBuf>]) {
    for p in paths.iter().filter_map(|p| p.as_ref()) {
        let _ = fs::remove_file(p);
        let _ = fs::remove_file(tmp_path(p));
    }
}

/// Run-log CSV: one row per run with the exact configuration and the
/// counterfactual definedness flags (empty when no certificate exists).
pub fn run_log_csv(records: &[RunRecord]) -> String {
    let mut out =
        String::from("run_id,x,y,m,cos_exact,outcome_a,outcome_b,def_xy,def_xy',def_x'y,def_x'y'\n");
    for r in records {
        let defs = match &r.definedness {
            Some(t) => t
                .iter()
                .map(|d| if *d { "1" } else { "0" })
                .collect::<Vec<_>>()
                .join(","),
            None => ",,,".to_string(),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.run_index,
            r.cell.0,
            r.cell.1,
            r.exact.grid_index,
            r.exact.cos_realized,
            r.outcome_a,
            r.outcome_b,
            defs
        ));
    }
    out
}

/// Bit strings as +-1 CSV rows (one string per row).
pub fn bits_csv(rows: &[&[i8]]) -> String {
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row.iter().map(|b| b.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Trajectory CSV with header t,x,y,z.
pub fn trajectory_csv(trajectory: &[[f64; 3]], dt: f64) -> String {
    let mut out = String::from("t,x,y,z\n");
    for (i, s) in trajectory.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            format_sig(i as f64 * dt, 12),
            format_sig(s[0], 12),
            format_sig(s[1], 12),
            format_sig(s[2], 12)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exactmath::ratio;

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_sig(-50.0 / 101.0, 12), "-0.495049504950");
        assert_eq!(format_sig(2.828420105925852, 12), "2.82842010593");
        assert_eq!(format_sig(0.0, 12), "0");
        assert_eq!(format_sig(28304.0, 6), "28304.0");
    }

    #[test]
    fn rational_json_pairs_text_and_decimal() {
        let v = rational_json(&ratio(-50, 101));
        assert_eq!(v["rational"], "-50/101");
        assert_eq!(v["decimal"], "-0.495049504950");
    }

    #[test]
    fn atomic_write_creates_file_without_tmp_leftover() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        atomic_write(&path, b"{}").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"{}");
        assert!(!tmp_path(&path).exists());
    }

    #[test]
    fn bits_csv_rows() {
        assert_eq!(bits_csv(&[&[1, -1, 1][..]]), "1,-1,1\n");
    }
}
