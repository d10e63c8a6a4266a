//! Three-panel SVG rendering of sweep metrics (effective SNR, GMI, FER).
//!
//! The plotted table is embedded verbatim as CSV inside `<metadata>`, so a
//! figure can be turned back into data with [`read_plot_table`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{NliError, Result};
use crate::experiment::{read_metrics_from, write_metrics_to, MetricsRecord, Scheme};

const PANEL_W: f64 = 400.0;
const PANEL_H: f64 = 320.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 15.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 45.0;
const CDATA_OPEN: &str = "<![CDATA[";
const CDATA_CLOSE: &str = "]]>";

fn color(s: Scheme) -> &'static str {
    match s {
        Scheme::Traditional => "#1f77b4",
        Scheme::GenieAnalytic => "#ff7f0e",
        Scheme::GenieNbgd => "#2ca02c",
        Scheme::AseOnly => "#7f7f7f",
        Scheme::NliOnly => "#d62728",
        Scheme::NliOnlyGenieNbgd => "#98df8a",
    }
}

fn dashed(s: Scheme) -> bool {
    matches!(s, Scheme::AseOnly | Scheme::NliOnly | Scheme::NliOnlyGenieNbgd)
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn linear(values: impl Iterator<Item = f64>) -> Axis {
        let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if hi - lo < 1e-9 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        Axis {
            lo: lo - pad,
            hi: hi + pad,
            log: false,
        }
    }

    fn log10(floor: f64) -> Axis {
        Axis {
            lo: floor.log10().floor(),
            hi: 0.0,
            log: true,
        }
    }

    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.max(10f64.powf(self.lo)).log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            return (self.lo as i32..=self.hi as i32).map(|e| (10f64.powi(e), format!("1e{e}"))).collect();
        }
        let raw = (self.hi - self.lo) / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 2.5, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
        let mut t = (self.lo / step).ceil() * step;
        let mut out = Vec::new();
        while t <= self.hi + 1e-12 {
            let label = if step >= 1.0 { format!("{t:.0}") } else { format!("{t:.2}") };
            out.push((t, label));
            t += step;
        }
        out
    }
}

struct Panel<'a> {
    x0: f64,
    title: &'a str,
    ylabel: &'a str,
    xa: Axis,
    ya: Axis,
}

impl Panel<'_> {
    fn px(&self, x: f64) -> f64 {
        self.x0 + MARGIN_L + self.xa.frac(x) * (PANEL_W - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        MARGIN_T + (1.0 - self.ya.frac(y)) * (PANEL_H - MARGIN_T - MARGIN_B)
    }

    fn frame(&self, svg: &mut String) {
        let (l, r) = (self.x0 + MARGIN_L, self.x0 + PANEL_W - MARGIN_R);
        let (t, b) = (MARGIN_T, PANEL_H - MARGIN_B);
        let _ = writeln!(svg, r##"<rect x="{l:.1}" y="{t:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#000"/>"##, r - l, b - t);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="13">{}</text>"#, (l + r) / 2.0, self.title);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11">launch power (dBm)</text>"#, (l + r) / 2.0, PANEL_H - 8.0);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
            self.x0 + 14.0,
            (t + b) / 2.0,
            self.x0 + 14.0,
            (t + b) / 2.0,
            self.ylabel
        );
        for (v, label) in self.xa.ticks() {
            let x = self.px(v);
            let _ = writeln!(svg, r##"<line x1="{x:.1}" y1="{b:.1}" x2="{x:.1}" y2="{:.1}" stroke="#000"/>"##, b + 4.0);
            let _ = writeln!(svg, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle" font-size="10">{label}</text>"#, b + 15.0);
        }
        for (v, label) in self.ya.ticks() {
            let y = self.py(v);
            let _ = writeln!(svg, r##"<line x1="{:.1}" y1="{y:.1}" x2="{l:.1}" y2="{y:.1}" stroke="#000"/>"##, l - 4.0);
            let _ = writeln!(svg, r##"<line x1="{l:.1}" y1="{y:.1}" x2="{r:.1}" y2="{y:.1}" stroke="#ddd"/>"##);
            let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="10">{label}</text>"#, l - 6.0, y + 3.0);
        }
    }
}

/// Renders the three panels. Fails without output when there is nothing to draw.
pub fn render_svg(records: &[MetricsRecord]) -> Result<String> {
    let usable: Vec<&MetricsRecord> = records
        .iter()
        .filter(|r| r.power_dbm.is_finite() && r.snr_eff_db.is_finite() && r.gmi_b2d.is_finite())
        .collect();
    if usable.is_empty() {
        return Err(NliError::Input("no data points to plot".into()));
    }
    let mut series: BTreeMap<Scheme, Vec<&MetricsRecord>> = BTreeMap::new();
    for r in &usable {
        series.entry(r.scheme).or_default().push(r);
    }
    for pts in series.values_mut() {
        pts.sort_by(|a, b| a.power_dbm.total_cmp(&b.power_dbm));
    }
    let xa = || Axis::linear(usable.iter().map(|r| r.power_dbm));
    let fer_floor = usable
        .iter()
        .flat_map(|r| [r.fer, r.fer_ci_lo, r.fer_ci_hi])
        .filter(|v| *v > 0.0)
        .fold(1e-1, f64::min);
    let panels = [
        Panel {
            x0: 0.0,
            title: "Effective SNR",
            ylabel: "SNR (dB)",
            xa: xa(),
            ya: Axis::linear(usable.iter().map(|r| r.snr_eff_db)),
        },
        Panel {
            x0: PANEL_W,
            title: "GMI",
            ylabel: "GMI (bit/2D)",
            xa: xa(),
            ya: Axis::linear(usable.iter().map(|r| r.gmi_b2d)),
        },
        Panel {
            x0: 2.0 * PANEL_W,
            title: "Post-FEC FER",
            ylabel: "FER",
            xa: xa(),
            ya: Axis::log10(fer_floor),
        },
    ];

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif">"#,
        w = 3.0 * PANEL_W,
        h = PANEL_H + 20.0 * series.len() as f64 + 10.0
    );
    let mut table = Vec::new();
    write_metrics_to(&mut table, records)?;
    let table = String::from_utf8(table).map_err(|e| NliError::Format(e.to_string()))?;
    if table.contains(CDATA_CLOSE) {
        return Err(NliError::Format("metrics table cannot be embedded".into()));
    }
    let _ = writeln!(svg, "<metadata id=\"metrics\">{CDATA_OPEN}\n{table}{CDATA_CLOSE}</metadata>");
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#fff"/>"##);

    for (pi, panel) in panels.iter().enumerate() {
        panel.frame(&mut svg);
        for (scheme, pts) in &series {
            let c = color(*scheme);
            let dash = if dashed(*scheme) { r#" stroke-dasharray="6 3""# } else { "" };
            let y_of = |r: &MetricsRecord| match pi {
                0 => r.snr_eff_db,
                1 => r.gmi_b2d,
                // zero error counts sit at the upper confidence bound
                _ => if r.fer > 0.0 { r.fer } else { r.fer_ci_hi },
            };
            let path: Vec<String> = pts.iter().map(|r| format!("{:.2},{:.2}", panel.px(r.power_dbm), panel.py(y_of(r)))).collect();
            let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"{dash}/>"#, path.join(" "));
            for r in pts {
                let (x, y) = (panel.px(r.power_dbm), panel.py(y_of(r)));
                if pi == 2 {
                    let lo = if r.fer_ci_lo > 0.0 { panel.py(r.fer_ci_lo) } else { PANEL_H - MARGIN_B };
                    let _ = writeln!(svg, r#"<line x1="{x:.2}" y1="{lo:.2}" x2="{x:.2}" y2="{:.2}" stroke="{c}"/>"#, panel.py(r.fer_ci_hi));
                    if r.fer == 0.0 {
                        let _ = writeln!(
                            svg,
                            r#"<path class="fer-bound" d="M{:.2},{:.2} L{:.2},{:.2} L{:.2},{:.2} Z" fill="none" stroke="{c}"/>"#,
                            x - 4.0,
                            y - 3.0,
                            x + 4.0,
                            y - 3.0,
                            x,
                            y + 4.0
                        );
                        continue;
                    }
                }
                let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{c}"/>"#);
            }
        }
    }
    for (i, scheme) in series.keys().enumerate() {
        let y = PANEL_H + 10.0 + 20.0 * i as f64;
        let dash = if dashed(*scheme) { r#" stroke-dasharray="6 3""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{}" stroke-width="2"{dash}/>"#,
            MARGIN_L,
            MARGIN_L + 30.0,
            color(*scheme)
        );
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" font-size="11">{scheme}</text>"#, MARGIN_L + 36.0, y + 4.0);
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn write_plot(path: impl AsRef<Path>, records: &[MetricsRecord]) -> Result<()> {
    let svg = render_svg(records)?;
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, svg)?;
    Ok(())
}

/// Recovers the metrics table embedded by [`render_svg`].
pub fn read_plot_table(svg: &str) -> Result<Vec<MetricsRecord>> {
    let start = svg
        .find(CDATA_OPEN)
        .ok_or_else(|| NliError::Format("no embedded metrics table".into()))?
        + CDATA_OPEN.len();
    let len = svg[start..].find(CDATA_CLOSE).ok_or_else(|| NliError::Format("unterminated metrics table".into()))?;
    read_metrics_from(svg[start..start + len].trim_start().as_bytes())
}
