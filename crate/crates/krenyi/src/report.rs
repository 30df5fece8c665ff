//! Report emission: bounds.csv (fixed column order), bounds.json, and a
//! static SVG chart with one polyline per report column on a log-scale
//! y axis. Emission is byte-deterministic for identical inputs, and the CSV
//! round-trips losslessly (shortest-round-trip float formatting).

use crate::bounds::{BoundReport, EpochRow};
use crate::error::{Error, Result};
use crate::experiment::{self, ExperimentConfig, ExperimentResult, MiSamples};
use crate::train;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    match s {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        _ => s
            .parse::<f64>()
            .map_err(|e| Error::InvalidInput(format!("bad float {s:?}: {e}"))),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f64(s).map(Some)
    }
}

/// Renders the per-epoch rows in the documented column order.
pub fn report_to_csv(report: &BoundReport) -> String {
    let mut out = String::new();
    out.push_str(&EpochRow::COLUMNS.join(","));
    out.push('\n');
    for r in &report.rows {
        let cells = [
            r.epoch.to_string(),
            fmt_f64(r.true_gap),
            fmt_f64(r.r_subgaussian),
            fmt_opt(r.iws),
            fmt_opt(r.iwbw),
            fmt_opt(r.thm1_from_iws),
            fmt_opt(r.thm1_from_iwbw),
            fmt_f64(r.theta_c_sum),
            fmt_f64(r.theta_c_part_sum),
            fmt_f64(r.theta_v_sum),
            fmt_f64(r.lemma2_sum),
            fmt_f64(r.lemma1_sum),
            fmt_f64(r.theta_c_shift_sum),
            fmt_f64(r.theta_c_psc_sum),
            fmt_f64(r.theta_c_part_psc_sum),
            fmt_f64(r.theta_v_psc_sum),
            fmt_f64(r.lemma2_psc_sum),
            fmt_f64(r.thm1_from_theta_c_psc),
            fmt_f64(r.thm1_from_theta_v_psc),
            fmt_opt(r.sgd_hessian_term),
        ];
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Parses rows back from [`report_to_csv`] output.
pub fn rows_from_csv(text: &str) -> Result<Vec<EpochRow>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidInput("empty csv".into()))?;
    if header != EpochRow::COLUMNS.join(",") {
        return Err(Error::InvalidInput("unexpected csv header".into()));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != EpochRow::COLUMNS.len() {
            return Err(Error::InvalidInput(format!(
                "row {} has {} cells, expected {}",
                lineno + 2,
                cells.len(),
                EpochRow::COLUMNS.len()
            )));
        }
        rows.push(EpochRow {
            epoch: cells[0]
                .parse()
                .map_err(|e| Error::InvalidInput(format!("bad epoch: {e}")))?,
            true_gap: parse_f64(cells[1])?,
            r_subgaussian: parse_f64(cells[2])?,
            iws: parse_opt(cells[3])?,
            iwbw: parse_opt(cells[4])?,
            thm1_from_iws: parse_opt(cells[5])?,
            thm1_from_iwbw: parse_opt(cells[6])?,
            theta_c_sum: parse_f64(cells[7])?,
            theta_c_part_sum: parse_f64(cells[8])?,
            theta_v_sum: parse_f64(cells[9])?,
            lemma2_sum: parse_f64(cells[10])?,
            lemma1_sum: parse_f64(cells[11])?,
            theta_c_shift_sum: parse_f64(cells[12])?,
            theta_c_psc_sum: parse_f64(cells[13])?,
            theta_c_part_psc_sum: parse_f64(cells[14])?,
            theta_v_psc_sum: parse_f64(cells[15])?,
            lemma2_psc_sum: parse_f64(cells[16])?,
            thm1_from_theta_c_psc: parse_f64(cells[17])?,
            thm1_from_theta_v_psc: parse_f64(cells[18])?,
            sgd_hessian_term: parse_opt(cells[19])?,
        });
    }
    Ok(rows)
}

pub fn report_to_json(report: &BoundReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn report_from_json(text: &str) -> Result<BoundReport> {
    serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("bad report json: {e}")))
}

const SVG_PALETTE: [&str; 19] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#393b79", "#637939", "#8c6d31", "#843c39", "#7b4173", "#3182bd",
    "#e6550d", "#31a354", "#756bb1",
];

/// One polyline per report column (everything but `epoch`) on a log-scale
/// y axis; nonpositive and absent values are skipped.
pub fn render_svg(report: &BoundReport) -> String {
    const W: f64 = 960.0;
    const H: f64 = 600.0;
    const ML: f64 = 70.0;
    const MR: f64 = 240.0;
    const MT: f64 = 30.0;
    const MB: f64 = 50.0;

    let columns: Vec<(&str, Vec<Option<f64>>)> = EpochRow::COLUMNS
        .iter()
        .skip(1)
        .map(|&name| {
            let vals = report
                .rows
                .iter()
                .map(|r| match name {
                    "true_gap" => Some(r.true_gap),
                    "r_subgaussian" => Some(r.r_subgaussian),
                    "iws" => r.iws,
                    "iwbw" => r.iwbw,
                    "thm1_from_iws" => r.thm1_from_iws,
                    "thm1_from_iwbw" => r.thm1_from_iwbw,
                    "theta_c_sum" => Some(r.theta_c_sum),
                    "theta_c_part_sum" => Some(r.theta_c_part_sum),
                    "theta_v_sum" => Some(r.theta_v_sum),
                    "lemma2_sum" => Some(r.lemma2_sum),
                    "lemma1_sum" => Some(r.lemma1_sum),
                    "theta_c_shift_sum" => Some(r.theta_c_shift_sum),
                    "theta_c_psc_sum" => Some(r.theta_c_psc_sum),
                    "theta_c_part_psc_sum" => Some(r.theta_c_part_psc_sum),
                    "theta_v_psc_sum" => Some(r.theta_v_psc_sum),
                    "lemma2_psc_sum" => Some(r.lemma2_psc_sum),
                    "thm1_from_theta_c_psc" => Some(r.thm1_from_theta_c_psc),
                    "thm1_from_theta_v_psc" => Some(r.thm1_from_theta_v_psc),
                    "sgd_hessian_term" => r.sgd_hessian_term,
                    _ => None,
                })
                .collect();
            (name, vals)
        })
        .collect();

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (_, vals) in &columns {
        for v in vals.iter().flatten() {
            if *v > 0.0 && v.is_finite() {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 1e-3;
        hi = 1.0;
    }
    if lo == hi {
        lo /= 10.0;
    }
    let (llo, lhi) = (lo.log10().floor(), hi.log10().ceil());
    let epochs: Vec<usize> = report.rows.iter().map(|r| r.epoch).collect();
    let emin = *epochs.first().unwrap_or(&0) as f64;
    let emax = *epochs.last().unwrap_or(&1) as f64;
    let espan = (emax - emin).max(1.0);

    let x_of = |e: f64| ML + (e - emin) / espan * (W - ML - MR);
    let y_of = |v: f64| {
        let t = (v.log10() - llo) / (lhi - llo).max(1e-12);
        H - MB - t * (H - MT - MB)
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(
        svg,
        "<rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"white\"/>"
    );
    // axes
    let _ = writeln!(
        svg,
        "<line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        H - MB,
        W - MR,
        H - MB
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>",
        H - MB
    );
    let mut dec = llo;
    while dec <= lhi {
        let y = y_of(10f64.powf(dec));
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"end\">1e{}</text>",
            ML - 6.0,
            y + 4.0,
            dec as i64
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{ML}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#dddddd\"/>",
            W - MR
        );
        dec += 1.0;
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">epoch</text>",
        (ML + W - MR) / 2.0,
        H - 14.0
    );

    for (k, (name, vals)) in columns.iter().enumerate() {
        let color = SVG_PALETTE[k % SVG_PALETTE.len()];
        let mut points = String::new();
        for (row, v) in report.rows.iter().zip(vals.iter()) {
            if let Some(v) = v {
                if *v > 0.0 && v.is_finite() {
                    let _ = write!(points, "{:.2},{:.2} ", x_of(row.epoch as f64), y_of(*v));
                }
            }
        }
        let _ = writeln!(
            svg,
            "<polyline id=\"{name}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            points.trim_end()
        );
        let ly = MT + 14.0 * k as f64;
        let _ = writeln!(
            svg,
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"3\"/>",
            W - MR + 10.0,
            W - MR + 30.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\">{name}</text>",
            W - MR + 36.0,
            ly + 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Summary of the MI sample views (dimensions only; the views themselves
/// live in the trajectories).
#[derive(Serialize)]
struct MiSummary {
    recorded_epochs: Vec<usize>,
    runs: usize,
    w_dim: usize,
    b_dim: usize,
    s_dim: usize,
}

/// Writes bounds.csv, bounds.json, bounds.svg and mi.json into `output_dir`.
pub fn emit_report(report: &BoundReport, mi: &MiSamples, output_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(output_dir)?;
    let mut written = Vec::new();
    let csv_path = output_dir.join("bounds.csv");
    std::fs::write(&csv_path, report_to_csv(report))?;
    written.push(csv_path);
    let json_path = output_dir.join("bounds.json");
    std::fs::write(&json_path, report_to_json(report))?;
    written.push(json_path);
    let svg_path = output_dir.join("bounds.svg");
    std::fs::write(&svg_path, render_svg(report))?;
    written.push(svg_path);
    let mi_path = output_dir.join("mi.json");
    let summary = MiSummary {
        recorded_epochs: mi.recorded_epochs.clone(),
        runs: mi.s_flat.len(),
        w_dim: mi.w_epoch_end.first().and_then(|e| e.first()).map_or(0, Vec::len),
        b_dim: mi.b_epoch_end.first().and_then(|e| e.first()).map_or(0, Vec::len),
        s_dim: mi.s_flat.first().map_or(0, Vec::len),
    };
    let mut s = serde_json::to_string_pretty(&summary).expect("serializable");
    s.push('\n');
    std::fs::write(&mi_path, s)?;
    written.push(mi_path);
    Ok(written)
}

#[derive(Serialize, Deserialize)]
struct SavedMeta {
    config: ExperimentConfig,
    requested_runs: usize,
    excluded_runs: Vec<usize>,
    effective_runs: usize,
}

/// Saves the report files plus every trajectory (binary + sidecar) and a
/// meta.json describing the experiment.
pub fn save_experiment(
    cfg: &ExperimentConfig,
    result: &ExperimentResult,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = emit_report(&result.report, &result.mi, dir)?;
    let traj_dir = dir.join("trajectories");
    std::fs::create_dir_all(&traj_dir)?;
    let mut effective_ids: Vec<usize> = (0..result.report.requested_runs)
        .filter(|r| !result.report.excluded_runs.contains(r))
        .collect();
    effective_ids.truncate(result.trajectories.len());
    for (traj, run_id) in result.trajectories.iter().zip(effective_ids.iter()) {
        let path = traj_dir.join(format!("run_{run_id:04}.traj"));
        train::save_trajectory(traj, &path)?;
        written.push(path);
    }
    let meta = SavedMeta {
        config: cfg.clone(),
        requested_runs: result.report.requested_runs,
        excluded_runs: result.report.excluded_runs.clone(),
        effective_runs: result.report.effective_runs,
    };
    let meta_path = dir.join("meta.json");
    let mut s = serde_json::to_string_pretty(&meta).expect("serializable");
    s.push('\n');
    std::fs::write(&meta_path, s)?;
    written.push(meta_path);
    Ok(written)
}

/// Re-renders a saved experiment directory: re-derives datasets from the
/// config seeds, replays gradients along the saved trajectories, and emits a
/// fresh report into `out_dir`.
pub fn rerender_experiment(dir: &Path, out_dir: &Path) -> Result<ExperimentResult> {
    let meta_text = std::fs::read_to_string(dir.join("meta.json"))?;
    let meta: SavedMeta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::InvalidInput(format!("bad meta.json: {e}")))?;
    let traj_dir = dir.join("trajectories");
    let mut entries: Vec<(usize, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(&traj_dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(idx) = name
            .strip_prefix("run_")
            .and_then(|s| s.strip_suffix(".traj"))
        {
            let run_id: usize = idx
                .parse()
                .map_err(|e| Error::InvalidInput(format!("bad trajectory name {name}: {e}")))?;
            entries.push((run_id, path));
        }
    }
    entries.sort_by_key(|(id, _)| *id);
    if entries.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no trajectories found under {}",
            traj_dir.display()
        )));
    }
    let mut outputs = Vec::with_capacity(entries.len());
    for (run_id, path) in entries {
        let traj = train::load_trajectory(&path)?;
        outputs.push(experiment::rebuild_run_output(
            &meta.config,
            &meta.config,
            traj,
            run_id,
        )?);
    }
    let result = experiment::process_runs(
        &meta.config,
        outputs,
        meta.excluded_runs.clone(),
        meta.requested_runs,
    )?;
    emit_report(&result.report, &result.mi, out_dir)?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> BoundReport {
        let row = |e: usize| EpochRow {
            epoch: e,
            true_gap: 0.1 * e as f64 - 0.05,
            r_subgaussian: 2.5 + e as f64,
            iws: Some(0.7 + 0.01 * e as f64),
            iwbw: Some(1.5 * (e + 1) as f64),
            thm1_from_iws: Some(0.3),
            thm1_from_iwbw: Some(0.9),
            theta_c_sum: 0.11 * (e + 1) as f64,
            theta_c_part_sum: 0.12 * (e + 1) as f64,
            theta_v_sum: 0.13 * (e + 1) as f64,
            lemma2_sum: 0.14 * (e + 1) as f64,
            lemma1_sum: 7.0 * (e + 1) as f64,
            theta_c_shift_sum: 0.2 * (e + 1) as f64,
            theta_c_psc_sum: 1.1 * (e + 1) as f64,
            theta_c_part_psc_sum: 1.2 * (e + 1) as f64,
            theta_v_psc_sum: 1.3 * (e + 1) as f64,
            lemma2_psc_sum: 1.4 * (e + 1) as f64,
            thm1_from_theta_c_psc: 0.95,
            thm1_from_theta_v_psc: 0.99,
            sgd_hessian_term: if e % 2 == 0 { Some(0.01 * e as f64) } else { None },
        };
        BoundReport {
            rows: (0..5).map(row).collect(),
            requested_runs: 10,
            effective_runs: 9,
            n_train: 100,
            excluded_runs: vec![3],
        }
    }

    #[test]
    fn csv_roundtrip_is_lossless() {
        let report = sample_report();
        let csv = report_to_csv(&report);
        let rows = rows_from_csv(&csv).unwrap();
        assert_eq!(rows, report.rows);
        // bitwise check on a representative awkward float
        let mut r2 = report.clone();
        r2.rows[0].true_gap = 0.1 + 0.2; // 0.30000000000000004
        r2.rows[0].iws = Some(f64::MIN_POSITIVE);
        let rows = rows_from_csv(&report_to_csv(&r2)).unwrap();
        assert_eq!(rows[0].true_gap.to_bits(), r2.rows[0].true_gap.to_bits());
        assert_eq!(
            rows[0].iws.unwrap().to_bits(),
            r2.rows[0].iws.unwrap().to_bits()
        );
    }

    #[test]
    fn csv_is_deterministic() {
        let report = sample_report();
        assert_eq!(report_to_csv(&report), report_to_csv(&report));
    }

    #[test]
    fn empty_report_is_header_only() {
        let mut report = sample_report();
        report.rows.clear();
        let csv = report_to_csv(&report);
        assert_eq!(csv.lines().count(), 1);
        assert!(rows_from_csv(&csv).unwrap().is_empty());
    }

    #[test]
    fn json_roundtrip() {
        let report = sample_report();
        let back = report_from_json(&report_to_json(&report)).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn svg_has_one_polyline_per_column() {
        let report = sample_report();
        let svg = render_svg(&report);
        let polylines = svg.matches("<polyline").count();
        assert_eq!(polylines, EpochRow::COLUMNS.len() - 1);
        for name in EpochRow::COLUMNS.iter().skip(1) {
            assert!(svg.contains(&format!("id=\"{name}\"")), "missing {name}");
        }
        assert_eq!(svg, render_svg(&report));
    }

    #[test]
    fn emit_writes_expected_files() {
        let dir = tempfile::tempdir().unwrap();
        let report = sample_report();
        let mi = MiSamples {
            recorded_epochs: vec![0, 1],
            s_flat: vec![vec![0.0; 4]; 3],
            w_epoch_end: vec![vec![vec![0.0; 2]; 3]; 2],
            w_epoch_prev: vec![vec![vec![0.0; 2]; 3]; 2],
            b_epoch_end: vec![vec![vec![0.0; 5]; 3]; 2],
        };
        let files = emit_report(&report, &mi, dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        for f in files {
            assert!(f.exists());
        }
        let text = std::fs::read_to_string(dir.path().join("bounds.csv")).unwrap();
        assert_eq!(rows_from_csv(&text).unwrap(), report.rows);
    }
}
