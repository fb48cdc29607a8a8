//! Markdown/CSV AUROC tables and SVG heatmaps built from a result tree.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use graph_ood::protocol::ExperimentResult;
use ndarray::Array2;

use crate::runner::{load_result, Manifest, MANIFEST};

pub const REPORT_DIR: &str = "report";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {msg}")]
    Read { path: PathBuf, msg: String },
    #[error("missing results for {} cell(s):\n{}", .0.len(), .0.iter().map(|c| format!("  {c}")).collect::<Vec<_>>().join("\n"))]
    Missing(Vec<String>),
    #[error("{path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

#[derive(Debug)]
pub struct ReportSummary {
    /// AUROC rows over all datasets.
    pub rows: usize,
    pub files: Vec<PathBuf>,
}

/// A square matrix with class names, as stored in the matrix CSVs.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedMatrix {
    pub names: Vec<String>,
    pub values: Array2<f64>,
}

pub fn parse_matrix_csv(text: &str) -> Result<NamedMatrix, String> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let names: Vec<String> = r.headers().map_err(|e| e.to_string())?.iter().skip(1).map(String::from).collect();
    let c = names.len();
    let mut values = Array2::zeros((c, c));
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        if i >= c || rec.len() != c + 1 {
            return Err(format!("row {} does not fit a {c}×{c} matrix", i + 1));
        }
        for j in 0..c {
            values[[i, j]] = rec[j + 1].parse().map_err(|e| format!("row {}, column {}: {e}", i + 1, j + 1))?;
        }
        rows += 1;
    }
    if rows != c {
        return Err(format!("{rows} rows for {c} columns"));
    }
    Ok(NamedMatrix { names, values })
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// White-to-blue colour for `t` in [0, 1].
fn colour(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0))
}

/// Heatmap with one labelled row and column per class. Masked diagonal
/// cells are drawn grey without a value.
pub fn render_heatmap(title: &str, m: &NamedMatrix, mask_diagonal: bool, row_axis: &str, col_axis: &str) -> String {
    const CELL: usize = 40;
    const CHAR: usize = 7;
    let c = m.names.len();
    let label = m.names.iter().map(|n| n.chars().count()).max().unwrap_or(0) * CHAR + 16;
    let left = label + 20;
    let top = label + 40;
    let width = left + c * CELL + 20;
    let height = top + c * CELL + 20;
    let max = m
        .values
        .indexed_iter()
        .filter(|((i, j), _)| !(mask_diagonal && i == j))
        .map(|(_, v)| *v)
        .fold(0.0f64, f64::max);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, "<title>{}</title>", xml_escape(title));
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="16" text-anchor="middle" font-size="13">{}</text>"#,
        width / 2,
        xml_escape(title)
    );
    let _ = writeln!(
        s,
        r##"<text x="{}" y="32" text-anchor="middle" fill="#555">{}</text>"##,
        left + c * CELL / 2,
        xml_escape(col_axis)
    );
    let _ = writeln!(
        s,
        r##"<text x="12" y="{y}" text-anchor="middle" fill="#555" transform="rotate(-90 12 {y})">{}</text>"##,
        xml_escape(row_axis),
        y = top + c * CELL / 2
    );
    for (j, name) in m.names.iter().enumerate() {
        let x = left + j * CELL + CELL / 2;
        let y = top - 6;
        let _ = writeln!(
            s,
            r#"<text class="col-label" x="{x}" y="{y}" transform="rotate(-60 {x} {y})">{}</text>"#,
            xml_escape(name)
        );
    }
    for (i, name) in m.names.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text class="row-label" x="{}" y="{}" text-anchor="end">{}</text>"#,
            left - 6,
            top + i * CELL + CELL / 2 + 4,
            xml_escape(name)
        );
        for j in 0..c {
            let (x, y) = (left + j * CELL, top + i * CELL);
            let v = m.values[[i, j]];
            if mask_diagonal && i == j {
                let _ = writeln!(
                    s,
                    r##"<rect class="cell" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="#cccccc" stroke="white"/>"##
                );
                continue;
            }
            let t = if max > 0.0 { v / max } else { 0.0 };
            let _ = writeln!(
                s,
                r#"<rect class="cell" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}" stroke="white"/>"#,
                colour(t)
            );
            let ink = if t > 0.55 { "white" } else { "black" };
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" font-size="10" fill="{ink}">{v:.2}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 4
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn bar(v: f64) -> String {
    let n = (v.clamp(0.0, 1.0) * 20.0).round() as usize;
    format!("{}{}", "█".repeat(n), "·".repeat(20 - n))
}

/// Per-dataset AUROC tables: one block per (method, uncertainty type) with a
/// row per held-out class.
fn dataset_tables(name: &str, class_names: &[String], results: &[&ExperimentResult]) -> (String, String) {
    let mut md = format!("## {name}\n\n| method | unc_type | ood_class | AUROC | ± std | |\n|---|---|---|---:|---:|---|\n");
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "unc_type", "ood_class", "class_name", "auroc_mean", "auroc_std", "n_splits"])
        .expect("in-memory write");
    for r in results {
        for (t, mean) in &r.auroc_mean {
            let std = r.auroc_std[t];
            let class = class_names.get(r.ood_class).cloned().unwrap_or_else(|| r.ood_class.to_string());
            let _ = writeln!(md, "| {} | {t} | {class} | {mean:.3} | {std:.3} | `{}` |", r.method, bar(*mean));
            w.write_record([
                r.method.to_string(),
                t.to_string(),
                r.ood_class.to_string(),
                class,
                mean.to_string(),
                std.to_string(),
                r.n_splits().to_string(),
            ])
            .expect("in-memory write");
        }
    }
    md.push('\n');
    (md, String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8"))
}

/// Renders `dir/report/` from `dir/manifest.json`, the per-cell results and
/// the matrix CSVs. Fails without writing anything when a cell listed in the
/// manifest has no result.
pub fn render_report(dir: &Path) -> Result<ReportSummary, ReportError> {
    let read = |path: PathBuf| {
        fs::read_to_string(&path).map_err(|e| ReportError::Read {
            path: path.clone(),
            msg: e.to_string(),
        })
    };
    let manifest_path = dir.join(MANIFEST);
    let manifest: Manifest = serde_json::from_str(&read(manifest_path.clone())?).map_err(|e| ReportError::Read {
        path: manifest_path,
        msg: e.to_string(),
    })?;
    let mut results = Vec::new();
    let mut missing = Vec::new();
    for c in &manifest.cells {
        match load_result(&c.dir(dir)) {
            Some(r) => results.push(r),
            None => missing.push(format!("{}/{}/ood_{}", c.dataset, c.method, c.ood_class)),
        }
    }
    if !missing.is_empty() {
        return Err(ReportError::Missing(missing));
    }

    let mut outputs: Vec<(PathBuf, String)> = Vec::new();
    let mut md = String::from("# AUROC summary\n\n");
    let mut rows = 0;
    for d in &manifest.datasets {
        let rs: Vec<&ExperimentResult> = results.iter().filter(|r| r.dataset == d.name).collect();
        rows += rs.iter().map(|r| r.auroc_mean.len()).sum::<usize>();
        let (section, csv) = dataset_tables(&d.name, &d.class_names, &rs);
        md.push_str(&section);
        outputs.push((PathBuf::from(format!("auroc_{}.csv", d.name)), csv));
    }

    let matrices = dir.join("matrices");
    let mut names: Vec<PathBuf> = match fs::read_dir(&matrices) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect(),
        Err(_) => Vec::new(),
    };
    names.sort();
    if !names.is_empty() {
        md.push_str("## Matrices\n\n");
    }
    for path in names {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let m = parse_matrix_csv(&read(path.clone())?).map_err(|msg| ReportError::Read { path, msg })?;
        let confusion = stem.ends_with("__confusion");
        let (title, rows_axis, cols_axis) = if confusion {
            (format!("OOD confusion: {}", stem.trim_end_matches("__confusion").replace("__", " / ")), "OOD class", "predicted class")
        } else {
            (format!("Centroid distances: {}", stem.trim_end_matches("__distance")), "class", "class")
        };
        let svg_name = format!("{stem}.svg");
        let _ = writeln!(md, "- [{title}]({svg_name})");
        outputs.push((PathBuf::from(svg_name), render_heatmap(&title, &m, confusion, rows_axis, cols_axis)));
    }
    outputs.push((PathBuf::from("summary.md"), md));

    let out_dir = dir.join(REPORT_DIR);
    fs::create_dir_all(&out_dir).map_err(|source| ReportError::Write {
        path: out_dir.clone(),
        source,
    })?;
    let mut files = Vec::new();
    for (name, body) in outputs {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|source| ReportError::Write {
            path: path.clone(),
            source,
        })?;
        files.push(path);
    }
    Ok(ReportSummary { rows, files })
}
