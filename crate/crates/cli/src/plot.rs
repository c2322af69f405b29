//! Deterministic SVG scatter and trajectory panels.
//!
//! Each sample is one `<circle>`; each trajectory is one `<polyline>` coloured
//! by its expert id. Panels sit side by side on a fixed canvas.

use std::fmt::Write as _;

use moeflow::flow::Trajectory;
use moeflow::SampleSet;

use crate::config::PlotSection;
use crate::error::{CliError, CliResult};

/// Expert colours, reused cyclically when K exceeds the palette.
pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];
const POINT_COLOR: &str = "#1f3a5f";
const TITLE_HEIGHT: u32 = 24;
const GAP: u32 = 12;

#[derive(Debug, Clone)]
pub enum PanelContent {
    Points(Vec<[f64; 2]>),
    /// `(expert_id, states)` per trajectory.
    Trajectories(Vec<(usize, Vec<[f64; 2]>)>),
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub content: PanelContent,
}

fn xy(row: &[f64]) -> CliResult<[f64; 2]> {
    match row {
        [x, y] => Ok([*x, *y]),
        _ => Err(CliError::Validation(format!(
            "plot needs 2-D data, got dimension {}",
            row.len()
        ))),
    }
}

impl Panel {
    pub fn points(title: impl Into<String>, samples: &SampleSet) -> CliResult<Self> {
        let pts = samples
            .points
            .rows()
            .into_iter()
            .map(|r| xy(r.as_slice().unwrap_or(&r.to_vec())))
            .collect::<CliResult<Vec<_>>>()?;
        Ok(Self {
            title: title.into(),
            content: PanelContent::Points(pts),
        })
    }

    pub fn trajectories(title: impl Into<String>, trajs: &[Trajectory]) -> CliResult<Self> {
        let lines = trajs
            .iter()
            .map(|tr| {
                let states = tr.states.iter().map(|(_, z)| xy(&z.0)).collect::<CliResult<Vec<_>>>()?;
                Ok((tr.expert_id.unwrap_or(0), states))
            })
            .collect::<CliResult<Vec<_>>>()?;
        Ok(Self {
            title: title.into(),
            content: PanelContent::Trajectories(lines),
        })
    }

    fn is_empty(&self) -> bool {
        match &self.content {
            PanelContent::Points(p) => p.is_empty(),
            PanelContent::Trajectories(t) => t.is_empty(),
        }
    }
}

struct Frame {
    left: f64,
    top: f64,
    side: f64,
    x: [f64; 2],
    y: [f64; 2],
}

impl Frame {
    fn map(&self, [x, y]: [f64; 2]) -> (f64, f64) {
        let px = self.left + (x - self.x[0]) / (self.x[1] - self.x[0]) * self.side;
        let py = self.top + (self.y[1] - y) / (self.y[1] - self.y[0]) * self.side;
        (px, py)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders `panels` left to right. Fails on an empty panel list or an empty panel.
pub fn render(panels: &[Panel], cfg: &PlotSection) -> CliResult<String> {
    if panels.is_empty() {
        return Err(CliError::Validation("nothing to plot".into()));
    }
    if let Some(p) = panels.iter().find(|p| p.is_empty()) {
        return Err(CliError::Validation(format!("panel `{}` has no data", p.title)));
    }
    let side = cfg.canvas;
    let width = panels.len() as u32 * (side + GAP) + GAP;
    let height = side + TITLE_HEIGHT + 2 * GAP;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    for (i, panel) in panels.iter().enumerate() {
        let left = GAP + i as u32 * (side + GAP);
        let top = GAP + TITLE_HEIGHT;
        let frame = Frame {
            left: left as f64,
            top: top as f64,
            side: side as f64,
            x: cfg.x_range,
            y: cfg.y_range,
        };
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
            left + side / 2,
            GAP + 16,
            escape(&panel.title)
        );
        let _ = writeln!(
            s,
            r#"<clipPath id="clip{i}"><rect x="{left}" y="{top}" width="{side}" height="{side}"/></clipPath>"#
        );
        let _ = writeln!(
            s,
            r##"<rect x="{left}" y="{top}" width="{side}" height="{side}" fill="none" stroke="#444" stroke-width="1"/>"##
        );
        let _ = writeln!(s, r#"<g clip-path="url(#clip{i})">"#);
        match &panel.content {
            PanelContent::Points(pts) => {
                for &p in pts {
                    let (x, y) = frame.map(p);
                    let _ = writeln!(
                        s,
                        r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.5" fill="{POINT_COLOR}" fill-opacity="0.6"/>"#
                    );
                }
            }
            PanelContent::Trajectories(lines) => {
                for (e, states) in lines {
                    let pts: Vec<String> = states
                        .iter()
                        .map(|&p| {
                            let (x, y) = frame.map(p);
                            format!("{x:.2},{y:.2}")
                        })
                        .collect();
                    let _ = writeln!(
                        s,
                        r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="0.8" stroke-opacity="0.7"/>"#,
                        pts.join(" "),
                        PALETTE[e % PALETTE.len()]
                    );
                }
            }
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    Ok(s)
}
