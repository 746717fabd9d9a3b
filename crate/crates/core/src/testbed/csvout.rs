//! CSV emission with deterministic row ordering.

use super::bench::BenchStats;
use super::runner::BreakdownRow;
use super::scalability::{SHARDED_ANCHORS, SINGLE_RELAY_ANCHORS};
use std::io::Write;
use std::path::Path;

pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{}", header.join(","))?;
    for row in rows {
        writeln!(f, "{}", row.join(","))?;
    }
    f.flush()
}

/// Latency breakdown table: the twelve additive-model columns plus row keys.
pub const BREAKDOWN_COLUMNS: [&str; 12] = [
    "voice_encode_ms",
    "encrypt_ms",
    "c_to_r_ms",
    "r_to_w_ms",
    "preprocess_ms",
    "pir_reply_ms",
    "w_to_c_ms",
    "pir_decode_ms",
    "decrypt_ms",
    "voice_decode_ms",
    "additional_ms",
    "total_ms",
];

pub fn breakdown_csv(path: &Path, rows: &[BreakdownRow]) -> std::io::Result<()> {
    let mut header = vec!["epoch", "round", "caller", "callee"];
    header.extend(BREAKDOWN_COLUMNS);
    let data = rows.iter().map(|r| {
        let b = &r.breakdown;
        let mut row = vec![
            r.epoch.to_string(),
            r.round.to_string(),
            r.caller.clone(),
            r.callee.clone(),
        ];
        for v in b.pipeline_parts() {
            row.push(format!("{v:.3}"));
        }
        row.push(format!("{:.3}", b.additional));
        row.push(format!("{:.3}", super::latency::mouth_to_ear(b)));
        row
    });
    write_csv(path, &header, data)
}

/// Worker sweep joined against the embedded reference anchors; delta
/// columns are empty for worker counts without an anchor.
pub fn scalability_csv(path: &Path, rows: &[(u32, f64, f64)]) -> std::io::Result<()> {
    let header = [
        "workers",
        "single_relay_s",
        "sharded_s",
        "anchor_single_relay_s",
        "anchor_sharded_s",
        "delta_single_relay",
        "delta_sharded",
    ];
    let data = rows.iter().map(|(w, single, sharded)| {
        let anchor_a = SINGLE_RELAY_ANCHORS.iter().find(|(aw, _)| aw == w);
        let anchor_p = SHARDED_ANCHORS.iter().find(|(aw, _)| aw == w);
        let fmt_anchor = |a: Option<&(u32, f64)>| a.map_or(String::new(), |(_, v)| format!("{v:.9}"));
        let fmt_delta = |a: Option<&(u32, f64)>, got: f64| {
            a.map_or(String::new(), |(_, v)| format!("{:.3e}", (got - v).abs() / v))
        };
        vec![
            w.to_string(),
            format!("{single:.9}"),
            format!("{sharded:.9}"),
            fmt_anchor(anchor_a),
            fmt_anchor(anchor_p),
            fmt_delta(anchor_a, *single),
            fmt_delta(anchor_p, *sharded),
        ]
    });
    write_csv(path, &header, data)
}

pub fn dialing_csv(path: &Path, rows: &[BenchStats]) -> std::io::Result<()> {
    let header = ["mode", "participants", "group_size", "reps", "mean_us", "stddev_us"];
    let data = rows.iter().map(|s| {
        vec![
            s.mode.as_str().to_string(),
            s.n_participants.to_string(),
            s.group_size.to_string(),
            s.reps.to_string(),
            format!("{:.3}", s.mean_us),
            format!("{:.3}", s.stddev_us),
        ]
    });
    write_csv(path, &header, data)
}

pub fn snippet_sweep_csv(
    path: &Path,
    tried: &[(u32, f64)],
    chosen: Option<u32>,
) -> std::io::Result<()> {
    let header = ["snippet_ms", "processing_ratio", "chosen"];
    let data = tried.iter().map(|(ms, ratio)| {
        vec![
            ms.to_string(),
            format!("{ratio:.4}"),
            (chosen == Some(*ms)).to_string(),
        ]
    });
    write_csv(path, &header, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn breakdown_csv_has_exactly_the_twelve_model_columns() {
        assert_eq!(BREAKDOWN_COLUMNS.len(), 12);
        let dir = std::env::temp_dir().join(format!("csvtest-{}", std::process::id()));
        let path = dir.join("breakdown.csv");
        breakdown_csv(&path, &[]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let header: Vec<&str> = text.trim().split(',').collect();
        assert_eq!(header.len(), 4 + 12);
        assert_eq!(header[4], "voice_encode_ms");
        assert_eq!(header[15], "total_ms");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn scalability_csv_joins_anchor_deltas() {
        let dir = std::env::temp_dir().join(format!("csvtest2-{}", std::process::id()));
        let path = dir.join("scalability.csv");
        let rows = super::super::scalability::sweep(20, 220, 40, 20);
        scalability_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.trim().lines().collect();
        assert_eq!(lines.len(), 1 + 6);
        for line in &lines[1..] {
            let fields: Vec<&str> = line.split(',').collect();
            assert!(!fields[5].is_empty(), "anchor delta present: {line}");
            let delta: f64 = fields[5].parse().unwrap();
            assert!(delta < 1e-6);
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
