//! Static SVG line charts, one facet per region stacked vertically.

use std::fmt::Write;

use matchfn_core::Period;

const WIDTH: f64 = 720.0;
const FACET_HEIGHT: f64 = 220.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 140.0;
const MARGIN_TOP: f64 = 28.0;
const MARGIN_BOTTOM: f64 = 30.0;
const TITLE_HEIGHT: f64 = 30.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series {
    pub name: String,
    /// One value per facet period; `None` breaks the line.
    pub values: Vec<Option<f64>>,
}

pub struct Facet {
    pub label: Option<String>,
    pub periods: Vec<Period>,
    pub series: Vec<Series>,
    /// Dashed horizontal reference line.
    pub reference: Option<f64>,
}

pub struct Chart {
    pub title: String,
    pub y_label: String,
    pub facets: Vec<Facet>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn y_range(facet: &Facet) -> (f64, f64) {
    let finite = facet.series.iter().flat_map(|s| s.values.iter().flatten()).copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.chain(facet.reference).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.05 * lo.abs().max(1.0) };
    (lo - pad, hi + pad)
}

impl Chart {
    pub fn render(&self) -> String {
        let height = TITLE_HEIGHT + FACET_HEIGHT * self.facets.len().max(1) as f64;
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        for (k, facet) in self.facets.iter().enumerate() {
            self.render_facet(&mut out, facet, TITLE_HEIGHT + FACET_HEIGHT * k as f64);
        }
        out.push_str("</svg>\n");
        out
    }

    fn render_facet(&self, out: &mut String, facet: &Facet, top: f64) {
        let (x0, x1) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
        let (y0, y1) = (top + MARGIN_TOP, top + FACET_HEIGHT - MARGIN_BOTTOM);
        let (lo, hi) = y_range(facet);
        let n = facet.periods.len();
        let sx = |i: usize| if n > 1 { x0 + (x1 - x0) * i as f64 / (n - 1) as f64 } else { (x0 + x1) / 2.0 };
        let sy = |v: f64| y1 - (y1 - y0) * (v - lo) / (hi - lo);

        let label = facet.label.as_deref().map(escape).unwrap_or_default();
        let _ = writeln!(out, r#"<g class="facet" data-region="{label}">"#);
        if !label.is_empty() {
            let _ = writeln!(out, r#"<text x="{x0}" y="{:.1}" font-weight="bold">{label}</text>"#, y0 - 8.0);
        }
        let _ = writeln!(
            out,
            r##"<rect x="{x0}" y="{y0:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#888"/>"##,
            x1 - x0,
            y1 - y0
        );
        for t in 0..=4 {
            let v = lo + (hi - lo) * t as f64 / 4.0;
            let y = sy(v);
            let _ = writeln!(
                out,
                r##"<line x1="{:.1}" y1="{y:.1}" x2="{x0}" y2="{y:.1}" stroke="#888"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
                x0 - 4.0,
                x0 - 6.0,
                y + 4.0,
                tick(v, hi - lo)
            );
        }
        if n > 0 {
            let picks: Vec<usize> = if n > 2 { vec![0, n / 2, n - 1] } else { (0..n).collect() };
            for i in picks {
                let _ = writeln!(
                    out,
                    r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                    sx(i),
                    y1 + 16.0,
                    facet.periods[i]
                );
            }
        }
        let _ = writeln!(
            out,
            r#"<text transform="translate(14 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
            (y0 + y1) / 2.0,
            escape(&self.y_label)
        );
        if let Some(r) = facet.reference {
            let y = sy(r);
            let _ = writeln!(
                out,
                r##"<line class="reference" x1="{x0}" y1="{y:.1}" x2="{x1}" y2="{y:.1}" stroke="#444" stroke-dasharray="4 3"/>"##
            );
        }
        for (s, series) in facet.series.iter().enumerate() {
            let color = PALETTE[s % PALETTE.len()];
            let mut d = String::new();
            let mut pen_down = false;
            for (i, v) in series.values.iter().enumerate() {
                match v.filter(|v| v.is_finite()) {
                    Some(v) => {
                        let _ = write!(d, "{}{:.2},{:.2} ", if pen_down { 'L' } else { 'M' }, sx(i), sy(v));
                        pen_down = true;
                    }
                    None => pen_down = false,
                }
            }
            let gaps = series.values.iter().filter(|v| !v.is_some_and(f64::is_finite)).count();
            let _ = writeln!(
                out,
                r#"<g class="series" data-name="{}" data-len="{}" data-gaps="{gaps}"><path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/></g>"#,
                escape(&series.name),
                series.values.len(),
                d.trim_end()
            );
            let ly = y0 + 14.0 * s as f64 + 8.0;
            let _ = writeln!(
                out,
                r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                x1 + 10.0,
                x1 + 28.0,
                x1 + 32.0,
                ly + 4.0,
                escape(&series.name)
            );
        }
        out.push_str("</g>\n");
    }
}

fn tick(v: f64, span: f64) -> String {
    let decimals = if span >= 100.0 {
        0
    } else if span >= 1.0 {
        2
    } else {
        (-(span.log10().floor()) as usize + 2).min(8)
    };
    format!("{v:.decimals$}")
}
