use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// A named CSV table; every cell is stored as written.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Input(format!("table {} has no column `{name}`", self.name)))
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| Ok(rec?.iter().map(str::to_string).collect()))
            .collect::<Result<_>>()?;
        Ok(Self { name, header, rows })
    }

    fn numbers(&self, col: usize) -> Result<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| {
                r[col]
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("`{}` in {} is not a number", r[col], self.name)))
            })
            .collect()
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

/// A static SVG chart drawn from the columns of one CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub name: String,
    /// File name of the backing CSV.
    pub source: String,
    pub svg: String,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn frame(svg: &mut String, title: &str, x_label: &str, y_label: &str, (y0, y1): (f64, f64)) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, (LEFT + W - RIGHT) / 2.0, escape(title));
    let (x_end, y_end) = (W - RIGHT, H - BOTTOM);
    let _ = writeln!(svg, r#"<line x1="{LEFT}" y1="{y_end}" x2="{x_end}" y2="{y_end}" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{y_end}" stroke="black"/>"#);
    for k in 0..=4 {
        let v = y0 + (y1 - y0) * f64::from(k) / 4.0;
        let py = y_end - (y_end - TOP) * f64::from(k) / 4.0;
        let _ = writeln!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.3}</text>"#, LEFT - 6.0, py + 4.0);
        let _ = writeln!(svg, r##"<line x1="{LEFT}" y1="{py:.1}" x2="{x_end}" y2="{py:.1}" stroke="#ddd"/>"##);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (LEFT + x_end) / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        (TOP + y_end) / 2.0,
        escape(y_label)
    );
}

fn legend(svg: &mut String, names: &[String]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 18.0 * i as f64;
        let x = W - RIGHT + 12.0;
        let _ = writeln!(svg, r#"<rect x="{x}" y="{y}" width="12" height="12" fill="{}"/>"#, PALETTE[i % PALETTE.len()]);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, x + 18.0, y + 10.0, escape(name));
    }
}

impl Chart {
    /// One polyline per distinct value of `series_col` (in order of first
    /// appearance), plotting `y_col` against `x_col`.
    pub fn line(name: &str, title: &str, table: &CsvTable, x_col: &str, y_col: &str, series_col: &str) -> Result<Self> {
        let (xc, yc, sc) = (table.column(x_col)?, table.column(y_col)?, table.column(series_col)?);
        let xs = table.numbers(xc)?;
        let ys = table.numbers(yc)?;
        let mut names: Vec<String> = Vec::new();
        for r in &table.rows {
            if !names.contains(&r[sc]) {
                names.push(r[sc].clone());
            }
        }
        let (x0, x1) = extent(xs.iter().copied());
        let (y0, y1) = extent(ys.iter().copied());
        let px = |x: f64| LEFT + (W - RIGHT - LEFT) * (x - x0) / (x1 - x0);
        let py = |y: f64| H - BOTTOM - (H - BOTTOM - TOP) * (y - y0) / (y1 - y0);
        let mut svg = String::new();
        frame(&mut svg, title, x_col, y_col, (y0, y1));
        for k in 0..=4 {
            let v = x0 + (x1 - x0) * f64::from(k) / 4.0;
            let _ = writeln!(svg, r#"<text x="{:.1}" y="{}" text-anchor="middle">{v:.2}</text>"#, px(v), H - BOTTOM + 16.0);
        }
        for (i, s) in names.iter().enumerate() {
            let pts: Vec<String> = table
                .rows
                .iter()
                .enumerate()
                .filter(|(_, r)| &r[sc] == s)
                .map(|(j, _)| format!("{:.2},{:.2}", px(xs[j]), py(ys[j])))
                .collect();
            let colour = PALETTE[i % PALETTE.len()];
            let _ = writeln!(svg, r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        }
        legend(&mut svg, &names);
        svg.push_str("</svg>\n");
        Ok(Self {
            name: name.to_string(),
            source: table.file_name(),
            svg,
        })
    }

    /// One bar per row, labelled by `label_cols` joined with `/`, with an
    /// optional ± error column.
    pub fn bars(name: &str, title: &str, table: &CsvTable, label_cols: &[&str], value_col: &str, err_col: Option<&str>) -> Result<Self> {
        let lc: Vec<usize> = label_cols.iter().map(|c| table.column(c)).collect::<Result<_>>()?;
        let values = table.numbers(table.column(value_col)?)?;
        let errs = match err_col {
            Some(c) => table.numbers(table.column(c)?)?,
            None => vec![0.0; values.len()],
        };
        let labels: Vec<String> = table
            .rows
            .iter()
            .map(|r| lc.iter().map(|&c| r[c].as_str()).collect::<Vec<_>>().join("/"))
            .collect();
        let (_, hi) = extent(values.iter().zip(&errs).map(|(v, e)| v + e));
        let (y0, y1) = (0.0, if hi > 0.0 { hi } else { 1.0 });
        let py = |y: f64| H - BOTTOM - (H - BOTTOM - TOP) * (y - y0) / (y1 - y0);
        let mut svg = String::new();
        frame(&mut svg, title, "", value_col, (y0, y1));
        let n = values.len().max(1) as f64;
        let slot = (W - RIGHT - LEFT) / n;
        for (i, (&v, &e)) in values.iter().zip(&errs).enumerate() {
            let x = LEFT + slot * i as f64 + slot * 0.15;
            let colour = PALETTE[i % PALETTE.len()];
            let _ = writeln!(
                svg,
                r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{colour}"/>"#,
                py(v),
                slot * 0.7,
                py(0.0) - py(v)
            );
            if e > 0.0 {
                let cx = x + slot * 0.35;
                let _ = writeln!(svg, r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#, py(v - e), py(v + e));
            }
        }
        legend(&mut svg, &labels);
        svg.push_str("</svg>\n");
        Ok(Self {
            name: name.to_string(),
            source: table.file_name(),
            svg,
        })
    }

    pub fn file_name(&self) -> String {
        format!("{}.svg", self.name)
    }
}

/// Files an experiment writes: tables, charts over those tables, and a
/// plain-text summary.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub tables: Vec<CsvTable>,
    pub charts: Vec<Chart>,
    pub summary: String,
}

pub const SUMMARY_FILE: &str = "summary.txt";

/// Writes every table, chart and the summary into `dir`, creating it if
/// needed. Returns the written paths in write order.
pub fn emit_report(report: &Report, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if dir.exists() && !dir.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotADirectory,
            format!("{} is not a directory", dir.display()),
        )));
    }
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for t in &report.tables {
        let p = dir.join(t.file_name());
        t.write(std::fs::File::create(&p)?)?;
        written.push(p);
    }
    for c in &report.charts {
        if !report.tables.iter().any(|t| t.file_name() == c.source) {
            return Err(Error::Input(format!("chart {} has no backing table {}", c.name, c.source)));
        }
        let p = dir.join(c.file_name());
        std::fs::write(&p, &c.svg)?;
        written.push(p);
    }
    let p = dir.join(SUMMARY_FILE);
    std::fs::write(&p, &report.summary)?;
    written.push(p);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CsvTable {
        let mut t = CsvTable::new("sweep", &["arm", "level", "value"]);
        for (arm, l, v) in [("a", 1, 0.9), ("a", 2, 0.7), ("b", 1, 0.8), ("b", 2, 0.75)] {
            t.push(vec![arm.into(), l.to_string(), format!("{v}")]);
        }
        t
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = CsvTable::new("empty", &["a", "b"]);
        assert_eq!(t.to_csv_string().unwrap(), "a,b\n");
    }

    #[test]
    fn emitted_table_parses_back() {
        let t = sample();
        let chart = Chart::line("sweep", "Sweep", &t, "level", "value", "arm").unwrap();
        assert_eq!(chart.svg.matches("<polyline").count(), 2);
        let report = Report {
            tables: vec![t.clone()],
            charts: vec![chart],
            summary: "ok\n".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&report, dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        assert_eq!(CsvTable::read(dir.path().join("sweep.csv")).unwrap(), t);
        let first = std::fs::read(&files[0]).unwrap();
        emit_report(&report, dir.path()).unwrap();
        assert_eq!(std::fs::read(&files[0]).unwrap(), first);
    }

    #[test]
    fn unwritable_target_errors() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("f");
        std::fs::write(&file, "x").unwrap();
        assert!(emit_report(&Report::default(), &file).is_err());
    }

    #[test]
    fn orphan_chart_rejected() {
        let t = sample();
        let chart = Chart::bars("bars", "B", &t, &["arm", "level"], "value", None).unwrap();
        let report = Report {
            tables: vec![],
            charts: vec![chart],
            summary: String::new(),
        };
        assert!(emit_report(&report, tempfile::tempdir().unwrap().path()).is_err());
    }
}
