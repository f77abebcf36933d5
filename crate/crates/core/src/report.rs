//! Funnel, confusion-matrix and table rendering (SVG and Markdown).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::DictionarySummary;
use crate::metrics::{
    binned_confusion, metric_table, quantile_bins, regression_report, Bin, BinnedReport,
    MetricsError, PredictionRow, PredictionSet, RegressionReport,
};
use crate::pipeline::Funnel;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("funnel needs at least 2 stages, found {0}")]
    TooFewStages(usize),
    #[error("no reports to render")]
    Empty,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("i/o failure on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {}: {detail}", path.display())]
    Parse { path: PathBuf, detail: String },
}

fn write(path: &Path, text: &str) -> Result<(), ReportError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| ReportError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

const BAR_WIDTH: usize = 90;
const BAR_GAP: usize = 30;
const PLOT_HEIGHT: f64 = 240.0;
const MARGIN: usize = 40;

/// Vertical bar chart, one bar per stage in funnel order, counts on top.
pub fn funnel_svg(funnel: &Funnel) -> Result<String, ReportError> {
    let n = funnel.stages.len();
    if n < 2 {
        return Err(ReportError::TooFewStages(n));
    }
    let max = funnel.stages.iter().map(|s| s.after).max().unwrap_or(0).max(1) as f64;
    let width = 2 * MARGIN + n * BAR_WIDTH + (n - 1) * BAR_GAP;
    let height = PLOT_HEIGHT as usize + 2 * MARGIN + 20;
    let base = MARGIN as f64 + PLOT_HEIGHT;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"  <title>Images remaining after each filter stage</title>"#);
    let _ = writeln!(
        svg,
        r##"  <line x1="{MARGIN}" y1="{base}" x2="{}" y2="{base}" stroke="#333"/>"##,
        width - MARGIN
    );
    for (i, s) in funnel.stages.iter().enumerate() {
        let x = MARGIN + i * (BAR_WIDTH + BAR_GAP);
        let h = PLOT_HEIGHT * s.after as f64 / max;
        let y = base - h;
        let cx = x + BAR_WIDTH / 2;
        let name = escape(&s.name);
        let _ = writeln!(svg, r#"  <g class="stage" data-stage="{name}" data-count="{}">"#, s.after);
        let _ = writeln!(
            svg,
            r##"    <rect x="{x}" y="{y:.2}" width="{BAR_WIDTH}" height="{h:.2}" fill="#3b7dd8"/>"##
        );
        let _ = writeln!(
            svg,
            r#"    <text class="count" x="{cx}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y - 4.0,
            s.after
        );
        let _ = writeln!(
            svg,
            r#"    <text class="label" x="{cx}" y="{:.2}" text-anchor="middle">{name}</text>"#,
            base + 16.0
        );
        let _ = writeln!(svg, "  </g>");
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Markdown table with before, after and dropped counts per stage.
pub fn funnel_table(funnel: &Funnel) -> String {
    let mut out = String::from("| Stage | Before | After | Dropped |\n|---|---:|---:|---:|\n");
    for s in &funnel.stages {
        let before = s.before.map_or_else(|| "-".to_string(), |b| b.to_string());
        let _ = writeln!(out, "| {} | {before} | {} | {} |", s.name, s.after, s.dropped());
    }
    out
}

/// Read `funnel.json` and write `funnel.svg` and `funnel.md` into `out_dir`.
pub fn emit_funnel(funnel_json: &Path, out_dir: &Path) -> Result<(PathBuf, PathBuf), ReportError> {
    let funnel = Funnel::read(funnel_json).map_err(|e| ReportError::Parse {
        path: funnel_json.to_path_buf(),
        detail: e.to_string(),
    })?;
    let svg = out_dir.join("funnel.svg");
    let md = out_dir.join("funnel.md");
    write(&svg, &funnel_svg(&funnel)?)?;
    write(&md, &funnel_table(&funnel))?;
    Ok((svg, md))
}

const CELL: usize = 80;

fn shade(count: u64, max: u64) -> String {
    let t = if max == 0 { 0.0 } else { count as f64 / max as f64 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(247.0, 8.0), lerp(251.0, 69.0), lerp(255.0, 148.0))
}

/// 3×3 heatmap, actual bins as rows and predicted bins as columns.
pub fn confusion_svg(title: &str, report: &BinnedReport) -> String {
    let max = report.confusion.iter().flatten().copied().max().unwrap_or(0);
    let left = 90;
    let top = 60;
    let width = left + 3 * CELL + 20;
    let height = top + 3 * CELL + 50;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let title = escape(title);
    let _ = writeln!(svg, "  <title>{title}</title>");
    let _ = writeln!(
        svg,
        r#"  <text class="title" x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#,
        width / 2
    );
    let _ = writeln!(
        svg,
        r#"  <text class="axis" x="{}" y="{}" text-anchor="middle">Predicted</text>"#,
        left + 3 * CELL / 2,
        top - 24
    );
    let _ = writeln!(
        svg,
        r#"  <text class="axis" x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">Actual</text>"#,
        top + 3 * CELL / 2,
        top + 3 * CELL / 2
    );
    for (j, b) in Bin::ALL.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"  <text class="predicted-label" x="{}" y="{}" text-anchor="middle">{}</text>"#,
            left + j * CELL + CELL / 2,
            top - 6,
            b.label()
        );
        let _ = writeln!(
            svg,
            r#"  <text class="actual-label" x="{}" y="{}" text-anchor="end">{}</text>"#,
            left - 8,
            top + j * CELL + CELL / 2 + 4,
            b.label()
        );
    }
    for (i, a) in Bin::ALL.iter().enumerate() {
        for (j, p) in Bin::ALL.iter().enumerate() {
            let count = report.count(*a, *p);
            let (x, y) = (left + j * CELL, top + i * CELL);
            let ink = if max > 0 && count * 2 > max { "#ffffff" } else { "#111111" };
            let _ = writeln!(
                svg,
                r#"  <g class="cell" data-actual="{}" data-predicted="{}" data-count="{count}">"#,
                a.label(),
                p.label()
            );
            let _ = writeln!(
                svg,
                r##"    <rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}" stroke="#666"/>"##,
                shade(count, max)
            );
            let _ = writeln!(
                svg,
                r#"    <text x="{}" y="{}" text-anchor="middle" fill="{ink}">{count}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 4
            );
            let _ = writeln!(svg, "  </g>");
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn file_slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

/// One `confusion_<name>.svg` per entry.
pub fn emit_confusions(reports: &[(String, BinnedReport)], out_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    if reports.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut paths = Vec::with_capacity(reports.len());
    for (name, r) in reports {
        let path = out_dir.join(format!("confusion_{}.svg", file_slug(name)));
        write(&path, &confusion_svg(name, r))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Per-parameter dataset sizes with the chosen unit; all-null parameters
/// show `-`.
pub fn dictionary_table(summary: &DictionarySummary) -> String {
    let mut out = String::from("| Parameter | Unit | Rows |\n|---|---|---:|\n");
    for p in &summary.parameters {
        let unit = p.unit_label.as_deref().unwrap_or("-");
        let rows = if p.unit.is_some() { p.rows.to_string() } else { "-".into() };
        let _ = writeln!(out, "| {} | {unit} | {rows} |", p.parameter.display_name());
    }
    out
}

/// Metrics and binned confusion for one `(parameter, model)` group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub parameter: String,
    pub model_tag: String,
    pub report: RegressionReport,
    pub binned: BinnedReport,
}

/// Group prediction rows by parameter then model and score each group.
pub fn evaluate_rows(rows: &[PredictionRow]) -> Result<Vec<Evaluation>, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut groups: BTreeMap<(&str, &str), Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.parameter.as_str(), r.model_tag.as_str()))
            .or_default()
            .push((r.actual, r.predicted));
    }
    groups
        .into_iter()
        .map(|((parameter, model), pairs)| {
            let set = PredictionSet::new(pairs, None, model)?;
            let cuts = quantile_bins(set.actual())?;
            Ok(Evaluation {
                parameter: parameter.to_string(),
                model_tag: model.to_string(),
                report: regression_report(&set),
                binned: binned_confusion(&set, cuts),
            })
        })
        .collect()
}

/// One metric table per parameter, models as rows.
pub fn evaluation_tables(evals: &[Evaluation], decimals: usize) -> String {
    let mut by_param: BTreeMap<&str, Vec<(String, Option<RegressionReport>)>> = BTreeMap::new();
    for e in evals {
        by_param
            .entry(e.parameter.as_str())
            .or_default()
            .push((e.model_tag.clone(), Some(e.report)));
    }
    by_param
        .into_iter()
        .map(|(p, rows)| metric_table(p, &rows, decimals))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::BinCuts;
    use crate::pipeline::FunnelStage;

    fn funnel(stages: &[(&str, usize)]) -> Funnel {
        Funnel {
            stages: stages
                .iter()
                .enumerate()
                .map(|(i, (n, c))| FunnelStage {
                    name: n.to_string(),
                    before: (i > 0).then(|| stages[i - 1].1),
                    after: *c,
                })
                .collect(),
        }
    }

    fn attr<'a>(n: &roxmltree::Node<'a, 'a>, name: &str) -> &'a str {
        n.attribute(name).unwrap()
    }

    #[test]
    fn two_stage_funnel_has_two_labeled_bars() {
        let svg = funnel_svg(&funnel(&[("ingested", 100), ("daytime", 60)])).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let bars: Vec<_> = doc.descendants().filter(|n| n.attribute("class") == Some("stage")).collect();
        assert_eq!(bars.len(), 2);
        let counts: Vec<String> = doc
            .descendants()
            .filter(|n| n.attribute("class") == Some("count"))
            .map(|n| n.text().unwrap().to_string())
            .collect();
        assert_eq!(counts, ["100", "60"]);
        let heights: Vec<f64> = doc
            .descendants()
            .filter(|n| n.has_tag_name("rect"))
            .map(|n| attr(&n, "height").parse().unwrap())
            .collect();
        assert!((heights[1] / heights[0] - 0.6).abs() < 1e-3);
    }

    #[test]
    fn stage_order_is_preserved() {
        let names = ["ingested", "daytime", "segmentation_gate", "water_coverage", "matched"];
        let f = funnel(&[(names[0], 200), (names[1], 150), (names[2], 120), (names[3], 100), (names[4], 90)]);
        let svg = funnel_svg(&f).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let got: Vec<&str> = doc
            .descendants()
            .filter(|n| n.attribute("class") == Some("stage"))
            .map(|n| attr(&n, "data-stage"))
            .collect();
        assert_eq!(got, names);
        let table = funnel_table(&f);
        assert!(table.contains("| daytime | 200 | 150 | 50 |"));
        assert!(table.contains("| ingested | - | 200 | 0 |"));
    }

    #[test]
    fn single_stage_funnel_is_rejected() {
        assert!(matches!(funnel_svg(&funnel(&[("x", 1)])), Err(ReportError::TooFewStages(1))));
    }

    fn cells(svg: &str) -> BTreeMap<(String, String), u64> {
        let doc = roxmltree::Document::parse(svg).unwrap();
        doc.descendants()
            .filter(|n| n.attribute("class") == Some("cell"))
            .map(|n| {
                let text: u64 = n
                    .descendants()
                    .find(|c| c.has_tag_name("text"))
                    .and_then(|t| t.text())
                    .unwrap()
                    .parse()
                    .unwrap();
                assert_eq!(attr(&n, "data-count").parse::<u64>().unwrap(), text);
                ((attr(&n, "data-actual").to_string(), attr(&n, "data-predicted").to_string()), text)
            })
            .collect()
    }

    #[test]
    fn heatmap_cells_parse_back_to_report_counts() {
        let r = BinnedReport {
            cuts: BinCuts { q33: 1.0, q66: 2.0 },
            confusion: [[5, 1, 0], [2, 7, 3], [0, 4, 9]],
            degenerate: false,
        };
        let got = cells(&confusion_svg("turbidity <ResNet50>", &r));
        assert_eq!(got.len(), 9);
        for a in Bin::ALL {
            for p in Bin::ALL {
                assert_eq!(got[&(a.label().to_string(), p.label().to_string())], r.count(a, p));
            }
        }
    }

    #[test]
    fn diagonal_fixture_and_empty_medium_row() {
        let p = PredictionSet::from_slices(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = binned_confusion(&p, quantile_bins(p.actual()).unwrap());
        let got = cells(&confusion_svg("diag", &r));
        for ((a, pr), c) in &got {
            assert_eq!(*c > 0, a == pr, "{a}/{pr}");
        }
        let r = BinnedReport {
            cuts: BinCuts { q33: 1.0, q66: 1.0 },
            confusion: [[3, 0, 1], [0, 0, 0], [0, 0, 2]],
            degenerate: true,
        };
        let got = cells(&confusion_svg("flat", &r));
        for p in Bin::ALL {
            assert_eq!(got[&("Medium".to_string(), p.label().to_string())], 0);
        }
    }

    #[test]
    fn rows_group_by_parameter_then_model() {
        let row = |p: &str, m: &str, a: f64, y: f64| PredictionRow {
            image_path: "x.jpg".into(),
            actual: a,
            predicted: y,
            model_tag: m.into(),
            parameter: p.into(),
        };
        let rows = [
            row("turbidity", "VGG16", 1.0, 1.5),
            row("cdom", "ViT", 2.0, 2.0),
            row("turbidity", "VGG16", 3.0, 2.5),
            row("turbidity", "ResNet50", 1.0, 1.0),
        ];
        let evals = evaluate_rows(&rows).unwrap();
        let keys: Vec<_> = evals.iter().map(|e| (e.parameter.as_str(), e.model_tag.as_str(), e.report.n)).collect();
        assert_eq!(keys, [("cdom", "ViT", 1), ("turbidity", "ResNet50", 1), ("turbidity", "VGG16", 2)]);
        let md = evaluation_tables(&evals, 3);
        assert!(md.contains("### turbidity") && md.contains("| VGG16 | 0.250 |"));
    }
}
