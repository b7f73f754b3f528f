//! CSV tables and SVG plots. Both embed the artifact version and config hash.

use std::fmt::Write;

use crate::error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// `# milne-bl <version> config_hash=<hash>`.
pub fn stamp(config_hash: &str) -> String {
    format!("milne-bl {VERSION} config_hash={config_hash}")
}

/// Stamp comment line, header, then rows with 17 significant digits.
pub fn table_csv(config_hash: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<Vec<u8>> {
    let mut out = format!("# {}\n", stamp(config_hash)).into_bytes();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::Io(e.to_string()))?;
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::InvalidParameter(format!("row of {} values for {} columns", r.len(), header.len())));
        }
        w.write_record(r.iter().map(|v| format!("{v:.17e}"))).map_err(|e| Error::Io(e.to_string()))?;
    }
    out.extend(w.into_inner().map_err(|e| Error::Io(e.to_string()))?);
    Ok(out)
}

/// Prefixes an existing CSV body with the stamp comment line.
pub fn stamped(config_hash: &str, body: Vec<u8>) -> Vec<u8> {
    let mut out = format!("# {}\n", stamp(config_hash)).into_bytes();
    out.extend(body);
    out
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Plot {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_x: false,
            log_y: false,
            series: Vec::new(),
        }
    }

    pub fn log_log(mut self) -> Self {
        self.log_x = true;
        self.log_y = true;
        self
    }

    pub fn log_y(mut self) -> Self {
        self.log_y = true;
        self
    }

    pub fn with_series(mut self, label: &str, points: Vec<(f64, f64)>) -> Self {
        self.series.push(Series { label: label.into(), points });
        self
    }

    fn map(&self, p: (f64, f64)) -> Option<(f64, f64)> {
        let x = if self.log_x { p.0.log10() } else { p.0 };
        let y = if self.log_y { p.1.log10() } else { p.1 };
        (x.is_finite() && y.is_finite()).then_some((x, y))
    }

    /// Polylines with point markers; points that cannot be drawn on a log axis are dropped.
    pub fn to_svg(&self, config_hash: &str) -> String {
        let mapped: Vec<Vec<(f64, f64)>> =
            self.series.iter().map(|s| s.points.iter().filter_map(|&p| self.map(p)).collect()).collect();
        let all: Vec<(f64, f64)> = mapped.iter().flatten().copied().collect();
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in &all {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if all.is_empty() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 <= 0.0 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 <= 0.0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
        let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
        let _ = writeln!(s, "<!-- {} -->", stamp(config_hash));
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - 2.0 * MARGIN,
            H - 2.0 * MARGIN
        );
        let _ = writeln!(s, r#"<text x="{}" y="30" text-anchor="middle" font-size="16">{}</text>"#, W / 2.0, esc(&self.title));
        let xl = if self.log_x { format!("log10 {}", self.x_label) } else { self.x_label.clone() };
        let yl = if self.log_y { format!("log10 {}", self.y_label) } else { self.y_label.clone() };
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, W / 2.0, H - 15.0, esc(&xl));
        let _ = writeln!(
            s,
            r#"<text x="15" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 15 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            esc(&yl)
        );
        for (v, anchor, x, y) in [
            (x0, "start", sx(x0), H - MARGIN + 15.0),
            (x1, "end", sx(x1), H - MARGIN + 15.0),
        ] {
            let _ = writeln!(s, r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}" font-size="10">{v:.3}</text>"#);
        }
        for (v, y) in [(y0, sy(y0)), (y1, sy(y1))] {
            let _ = writeln!(s, r#"<text x="{:.1}" y="{y:.1}" text-anchor="end" font-size="10">{v:.3}</text>"#, MARGIN - 4.0);
        }
        for (k, (ser, pts)) in self.series.iter().zip(&mapped).enumerate() {
            let color = COLORS[k % COLORS.len()];
            if pts.len() > 1 {
                let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
                let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
            }
            for &(x, y) in pts {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, sx(x), sy(y));
            }
            let ly = MARGIN + 14.0 + 14.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{ly:.1}" text-anchor="end" font-size="11" fill="{color}">{}</text>"#,
                W - MARGIN - 6.0,
                esc(&ser.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn esc(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_stamp_and_header() {
        let b = table_csv("abc", &["x", "y"], &[vec![1.0, 2.0]]).unwrap();
        let t = String::from_utf8(b).unwrap();
        let mut lines = t.lines();
        assert_eq!(lines.next().unwrap(), format!("# milne-bl {VERSION} config_hash=abc"));
        assert_eq!(lines.next().unwrap(), "x,y");
        assert_eq!(lines.next().unwrap().split(',').count(), 2);
    }

    #[test]
    fn csv_rejects_ragged_rows() {
        assert!(table_csv("h", &["x", "y"], &[vec![1.0]]).is_err());
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let p = Plot::new("t <1>", "eps", "err").log_log().with_series("a", vec![(0.1, 1.0), (0.2, 2.0), (0.0, 1.0)]);
        let s = p.to_svg("h");
        assert!(s.starts_with("<svg"));
        assert!(s.trim_end().ends_with("</svg>"));
        assert!(s.contains("config_hash=h"));
        assert!(s.contains("t &lt;1&gt;"));
        assert_eq!(s.matches("<circle").count(), 2, "log axis drops x = 0");
    }
}
