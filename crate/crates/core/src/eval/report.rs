use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{ConfusionMatrix, EvalResult};
use crate::error::{contract, Error, Result};
use crate::model::Variant;

pub const SUMMARY_FILE: &str = "summary.csv";
const NA: &str = "NA";

/// `0.805` -> `"80.5%"`.
pub fn format_percent(fraction: f64) -> String {
    format!("{:.1}%", 100.0 * fraction)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub variant: Variant,
    pub pixel_accuracy: f64,
    pub recalls: Vec<Option<f64>>,
}

pub fn summary_row(r: &EvalResult) -> SummaryRow {
    SummaryRow {
        variant: r.variant,
        pixel_accuracy: r.accuracy,
        recalls: r.per_class.clone(),
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

fn parse_cell(s: &str, path: &Path) -> Result<Option<f64>> {
    if s == NA {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::format(path, format!("bad number {s:?}")))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn summary_csv(results: &[EvalResult], class_names: &[String]) -> String {
    let mut s = String::from("variant,pixel_accuracy");
    for n in class_names {
        let _ = write!(s, ",recall_{n}");
    }
    s.push('\n');
    for r in results {
        let _ = write!(s, "{},{}", r.variant, r.accuracy);
        for v in &r.per_class {
            let _ = write!(s, ",{}", cell(*v));
        }
        s.push('\n');
    }
    s
}

fn confusion_csv(cm: &ConfusionMatrix, class_names: &[String]) -> String {
    let mut s = String::from("truth");
    for n in class_names {
        let _ = write!(s, ",{n}");
    }
    s.push('\n');
    for (name, row) in class_names.iter().zip(cm.row_normalized()) {
        s.push_str(name);
        for j in 0..cm.num_classes() {
            let _ = write!(s, ",{}", cell(row.as_ref().map(|r| r[j])));
        }
        s.push('\n');
    }
    s
}

const CELL: f64 = 56.0;
const MARGIN: f64 = 120.0;

/// Heatmap group for one matrix with its top-left corner at `(x0, y0)`.
/// Every cell is a `rect` carrying its row, column and row-normalized value;
/// the fill opacity equals that value (undefined rows are hatched gray).
fn heatmap(cm: &ConfusionMatrix, class_names: &[String], title: &str, x0: f64, y0: f64) -> String {
    let k = cm.num_classes();
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<g transform="translate({x0},{y0})"><text x="{}" y="-40" font-size="16" text-anchor="middle">{title}</text>"#,
        MARGIN + CELL * k as f64 / 2.0
    );
    for (i, row) in cm.row_normalized().iter().enumerate() {
        let y = i as f64 * CELL;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{}</text>"#,
            MARGIN - 6.0,
            y + CELL / 2.0 + 4.0,
            class_names[i]
        );
        for j in 0..k {
            let x = MARGIN + j as f64 * CELL;
            match row {
                Some(r) => {
                    let v = r[j];
                    let _ = writeln!(
                        s,
                        r##"<rect class="cell" data-row="{i}" data-col="{j}" data-value="{v}" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="#1f4e99" fill-opacity="{v}" stroke="#999"/><text x="{}" y="{}" font-size="11" text-anchor="middle">{:.2}</text>"##,
                        x + CELL / 2.0,
                        y + CELL / 2.0 + 4.0,
                        v
                    );
                }
                None => {
                    let _ = writeln!(
                        s,
                        r##"<rect class="cell" data-row="{i}" data-col="{j}" data-value="{NA}" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="#dddddd" stroke="#999"/>"##
                    );
                }
            }
        }
    }
    for (j, n) in class_names.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="-8" font-size="11" text-anchor="middle">{n}</text>"#,
            MARGIN + j as f64 * CELL + CELL / 2.0
        );
    }
    s.push_str("</g>\n");
    s
}

fn svg(width: f64, height: f64, body: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

fn title(r: &EvalResult) -> String {
    format!("{} ({})", r.variant, format_percent(r.accuracy))
}

/// Writes `summary.csv`, `confusion_<variant>.csv` and
/// `confusion_<variant>.svg` per result, and `comparison.svg` when there is
/// more than one result. Returns the paths written.
pub fn emit_report(results: &[EvalResult], class_names: &[String], dir: &Path) -> Result<Vec<PathBuf>> {
    contract!(!results.is_empty(), "emit_report needs at least one result");
    for r in results {
        contract!(
            r.confusion.num_classes() == class_names.len(),
            "{} class names for a {}-class matrix",
            class_names.len(),
            r.confusion.num_classes()
        );
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let path = dir.join(SUMMARY_FILE);
    write(&path, &summary_csv(results, class_names))?;
    written.push(path);

    let k = class_names.len() as f64;
    let panel_w = MARGIN + CELL * k + 20.0;
    let panel_h = 60.0 + CELL * k + 20.0;
    for r in results {
        let slug = r.variant.slug();
        let path = dir.join(format!("confusion_{slug}.csv"));
        write(&path, &confusion_csv(&r.confusion, class_names))?;
        written.push(path);
        let path = dir.join(format!("confusion_{slug}.svg"));
        write(&path, &svg(panel_w, panel_h, &heatmap(&r.confusion, class_names, &title(r), 0.0, 60.0)))?;
        written.push(path);
    }
    if results.len() > 1 {
        let body: String = results
            .iter()
            .enumerate()
            .map(|(i, r)| heatmap(&r.confusion, class_names, &title(r), i as f64 * panel_w, 60.0))
            .collect();
        let path = dir.join("comparison.svg");
        write(&path, &svg(panel_w * results.len() as f64, panel_h, &body))?;
        written.push(path);
    }
    Ok(written)
}

fn lines(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect())
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let rows = lines(path)?;
    let Some((header, body)) = rows.split_first() else {
        return Err(Error::format(path, "empty summary"));
    };
    if header.len() < 2 || header[0] != "variant" || header[1] != "pixel_accuracy" {
        return Err(Error::format(path, "unexpected summary header"));
    }
    body.iter()
        .map(|r| {
            if r.len() != header.len() {
                return Err(Error::format(path, "ragged summary row"));
            }
            let variant = Variant::parse(&r[0])
                .ok_or_else(|| Error::format(path, format!("unknown variant {:?}", r[0])))?;
            let pixel_accuracy = parse_cell(&r[1], path)?
                .ok_or_else(|| Error::format(path, "missing accuracy"))?;
            let recalls = r[2..].iter().map(|c| parse_cell(c, path)).collect::<Result<_>>()?;
            Ok(SummaryRow {
                variant,
                pixel_accuracy,
                recalls,
            })
        })
        .collect()
}

/// Row-normalized matrix from a `confusion_<variant>.csv`.
pub fn read_confusion_csv(path: &Path) -> Result<Vec<Option<Vec<f64>>>> {
    let rows = lines(path)?;
    let Some((header, body)) = rows.split_first() else {
        return Err(Error::format(path, "empty matrix"));
    };
    let k = header.len() - 1;
    body.iter()
        .map(|r| {
            if r.len() != k + 1 {
                return Err(Error::format(path, "ragged matrix row"));
            }
            let cells: Vec<Option<f64>> = r[1..].iter().map(|c| parse_cell(c, path)).collect::<Result<_>>()?;
            Ok(if cells.iter().all(Option::is_none) {
                None
            } else {
                Some(cells.into_iter().map(|c| c.unwrap_or(f64::NAN)).collect())
            })
        })
        .collect()
}

/// `(row, col, value, fill-opacity)` of every heatmap cell in an SVG written
/// by [`emit_report`]. Undefined cells have `None` for both numbers.
pub fn svg_cells(text: &str) -> Vec<(usize, usize, Option<f64>, Option<f64>)> {
    let attr = |tag: &str, name: &str| -> Option<String> {
        let key = format!(" {name}=\"");
        let start = tag.find(&key)? + key.len();
        let end = tag[start..].find('"')? + start;
        Some(tag[start..end].to_string())
    };
    text.split("<rect")
        .skip(1)
        .filter_map(|t| {
            let tag = &t[..t.find("/>")?];
            if attr(tag, "class").as_deref() != Some("cell") {
                return None;
            }
            Some((
                attr(tag, "data-row")?.parse().ok()?,
                attr(tag, "data-col")?.parse().ok()?,
                attr(tag, "data-value")?.parse().ok(),
                attr(tag, "fill-opacity").and_then(|v| v.parse().ok()),
            ))
        })
        .collect()
}
