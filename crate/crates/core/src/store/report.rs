//! Text and CSV renderings of aggregated results.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::StoreError;
use crate::metrics::{c2c_ratio, metric_report, method_level_gap, SampleStats};

pub const UNDEFINED: &str = "—";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model_tag: String,
    pub setting: String,
    pub tasks: usize,
    /// Per k: (Corr@k, Comp@k, Δ@k, Comp/Corr@k). `None` where k exceeds
    /// some task's sample count or the ratio is undefined.
    pub cells: BTreeMap<usize, [Option<f64>; 4]>,
    pub c2c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub text: PathBuf,
    pub csv: PathBuf,
    pub gaps: PathBuf,
}

pub fn render_value(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.3}"),
        None => UNDEFINED.to_string(),
    }
}

/// One row per (model, setting), in sorted order.
pub fn report_rows(stats: &[SampleStats], k_values: &[usize]) -> Vec<ReportRow> {
    let mut groups: BTreeMap<(String, String), Vec<SampleStats>> = BTreeMap::new();
    for s in stats {
        groups.entry((s.model_tag.clone(), s.setting.clone())).or_default().push(s.clone());
    }
    groups
        .into_iter()
        .map(|((model_tag, setting), group)| {
            let m = metric_report(&group, k_values);
            let cells = k_values
                .iter()
                .map(|k| {
                    let rho = m.rho_at.get(k).copied().flatten();
                    (
                        *k,
                        [m.corr_at.get(k).copied(), m.comp_at.get(k).copied(), m.delta_at.get(k).copied(), rho],
                    )
                })
                .collect();
            ReportRow {
                model_tag,
                setting,
                tasks: group.len(),
                cells,
                c2c: c2c_ratio(&group),
            }
        })
        .collect()
}

fn csv_header(k_values: &[usize]) -> String {
    let mut cols = vec!["model".to_string(), "setting".to_string(), "tasks".to_string()];
    for k in k_values {
        for name in ["corr", "comp", "delta", "comp_corr"] {
            cols.push(format!("{name}@{k}"));
        }
    }
    cols.push("c2c".into());
    cols.join(",")
}

fn csv_text(rows: &[ReportRow], k_values: &[usize]) -> String {
    let mut out = csv_header(k_values);
    out.push('\n');
    for r in rows {
        let mut fields = vec![r.model_tag.clone(), r.setting.clone(), r.tasks.to_string()];
        for k in k_values {
            fields.extend(r.cells[k].iter().map(|v| render_value(*v)));
        }
        fields.push(render_value(r.c2c));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn text_table(rows: &[ReportRow], k_values: &[usize]) -> String {
    let mut header = format!("{:<20} {:<7} {:>5}", "model", "setting", "tasks");
    for k in k_values {
        header.push_str(&format!(
            " | {:>7} {:>7} {:>7} {:>7}",
            format!("Corr@{k}"),
            format!("Comp@{k}"),
            format!("Δ@{k}"),
            "C/C"
        ));
    }
    header.push_str(&format!(" | {:>6}", "C2C"));
    let mut out = header.clone();
    out.push('\n');
    out.push_str(&"-".repeat(header.chars().count()));
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{:<20} {:<7} {:>5}", r.model_tag, r.setting, r.tasks));
        for k in k_values {
            out.push_str(" |");
            for v in r.cells[k] {
                out.push_str(&format!(" {:>7}", render_value(v)));
            }
        }
        out.push_str(&format!(" | {:>6}\n", render_value(r.c2c)));
    }
    out
}

fn gaps_text(stats: &[SampleStats]) -> String {
    let mut sorted: Vec<&SampleStats> = stats.iter().collect();
    sorted.sort_by(|a, b| (&a.model_tag, &a.setting, &a.task_id).cmp(&(&b.model_tag, &b.setting, &b.task_id)));
    let mut out = String::from("model,setting,task_id,n,c_corr,c_comp,gap\n");
    for s in sorted {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.model_tag,
            s.setting,
            s.task_id,
            s.n,
            s.c_corr,
            s.c_comp,
            render_value(method_level_gap(s))
        ));
    }
    out
}

/// Writes `report.txt`, `report.csv` and `gaps.csv` into `dir`.
pub fn emit_report(stats: &[SampleStats], k_values: &[usize], dir: &Path) -> Result<ReportFiles, StoreError> {
    let rows = report_rows(stats, k_values);
    std::fs::create_dir_all(dir).map_err(|e| super::io(dir, e))?;
    let files = ReportFiles {
        text: dir.join("report.txt"),
        csv: dir.join("report.csv"),
        gaps: dir.join("gaps.csv"),
    };
    for (path, body) in [
        (&files.text, text_table(&rows, k_values)),
        (&files.csv, csv_text(&rows, k_values)),
        (&files.gaps, gaps_text(stats)),
    ] {
        std::fs::write(path, body).map_err(|e| super::io(path, e))?;
    }
    Ok(files)
}

fn parse_value(s: &str) -> Result<Option<f64>, String> {
    if s == UNDEFINED {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|e| format!("`{s}`: {e}"))
}

/// Reads a `report.csv` back into rows.
pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>, String> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty report")?.split(',').collect();
    let k_values: Vec<usize> = header
        .iter()
        .filter_map(|h| h.strip_prefix("corr@"))
        .map(|k| k.parse().map_err(|e| format!("header `{k}`: {e}")))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 + 4 * k_values.len() {
            return Err(format!("row has {} fields: {line}", f.len()));
        }
        let mut cells = BTreeMap::new();
        for (i, k) in k_values.iter().enumerate() {
            let base = 3 + 4 * i;
            let mut c = [None; 4];
            for (j, slot) in c.iter_mut().enumerate() {
                *slot = parse_value(f[base + j])?;
            }
            cells.insert(*k, c);
        }
        rows.push(ReportRow {
            model_tag: f[0].to_string(),
            setting: f[1].to_string(),
            tasks: f[2].parse().map_err(|e| format!("tasks: {e}"))?,
            cells,
            c2c: parse_value(f[f.len() - 1])?,
        });
    }
    Ok(rows)
}
