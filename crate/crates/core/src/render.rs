//! SVG rendering of coverage heat maps with route overlays.
//!
//! Row 0 is drawn at the bottom so the picture matches scene coordinates.
//! Cells are merged into horizontal runs of identical color.

use std::fmt::Write as _;

use thiserror::Error;

use crate::gridgraph::CellId;
use crate::propagation::CoverageMap;

/// Distinct heat colors; runs merge on the quantized level.
pub const RAMP_LEVELS: usize = 64;
pub const BUILDING_FILL: &str = "#3a3a3a";
const LEGEND_W: f64 = 90.0;

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("color ramp needs min < max, got [{0}, {1}]")]
    BadRamp(f64, f64),
    #[error("route {label:?} references {cell}, outside the {cols}x{rows} map")]
    RouteOutsideMap {
        label: String,
        cell: CellId,
        cols: usize,
        rows: usize,
    },
    #[error("cell size must be positive")]
    BadCellSize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteOverlay {
    pub cells: Vec<CellId>,
    pub color: String,
    pub label: String,
}

#[derive(Debug, Clone)]
pub struct RenderSpec<'a> {
    pub map: &'a CoverageMap,
    pub routes: Vec<RouteOverlay>,
    pub cell_px: f64,
    /// dBm values mapped to the blue and yellow ends of the ramp.
    pub ramp: (f64, f64),
}

impl<'a> RenderSpec<'a> {
    /// Spec with the ramp spanning the map's free-cell RSS range.
    pub fn new(map: &'a CoverageMap) -> Self {
        let (lo, hi) = map
            .rss_dbm
            .iter()
            .zip(&map.blocked)
            .filter(|(_, &b)| !b)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| {
                (lo.min(f64::from(v)), hi.max(f64::from(v)))
            });
        let ramp = if lo < hi { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
        Self {
            map,
            routes: Vec::new(),
            cell_px: 1.0,
            ramp,
        }
    }
}

/// Blue (weak) to yellow (strong).
pub fn ramp_color(level: usize) -> String {
    let t = level as f64 / (RAMP_LEVELS - 1) as f64;
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(20.0, 253.0), lerp(40.0, 231.0), lerp(190.0, 37.0))
}

fn level(dbm: f64, (lo, hi): (f64, f64)) -> usize {
    let t = ((dbm - lo) / (hi - lo)).clamp(0.0, 1.0);
    (t * (RAMP_LEVELS - 1) as f64).round() as usize
}

pub fn render_svg(spec: &RenderSpec) -> Result<String, RenderError> {
    let map = spec.map;
    let (lo, hi) = spec.ramp;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(RenderError::BadRamp(lo, hi));
    }
    if !(spec.cell_px.is_finite() && spec.cell_px > 0.0) {
        return Err(RenderError::BadCellSize);
    }
    for r in &spec.routes {
        if let Some(&cell) = r.cells.iter().find(|c| !map.in_grid(c.col, c.row)) {
            return Err(RenderError::RouteOutsideMap {
                label: r.label.clone(),
                cell,
                cols: map.cols,
                rows: map.rows,
            });
        }
    }

    let px = spec.cell_px;
    let w = map.cols as f64 * px;
    let h = map.rows as f64 * px;
    let y_of = |row: usize| (map.rows - 1 - row) as f64 * px;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        w + LEGEND_W,
        h.max(160.0),
        w + LEGEND_W,
        h.max(160.0)
    )
    .unwrap();

    writeln!(s, r#"<g id="heatmap" shape-rendering="crispEdges">"#).unwrap();
    for row in 0..map.rows {
        let key = |col: usize| {
            let i = map.index(col, row);
            if map.blocked[i] {
                None
            } else {
                Some(level(f64::from(map.rss_dbm[i]), spec.ramp))
            }
        };
        let mut start = 0;
        while start < map.cols {
            let k = key(start);
            let mut end = start + 1;
            while end < map.cols && key(end) == k {
                end += 1;
            }
            let fill = k.map_or_else(|| BUILDING_FILL.to_string(), ramp_color);
            writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}" data-cells="{}"/>"#,
                start as f64 * px,
                y_of(row),
                (end - start) as f64 * px,
                px,
                fill,
                end - start
            )
            .unwrap();
            start = end;
        }
    }
    writeln!(s, "</g>").unwrap();

    writeln!(s, r#"<g id="routes" fill="none" stroke-linejoin="round">"#).unwrap();
    for r in &spec.routes {
        let pts: Vec<String> = r
            .cells
            .iter()
            .map(|c| format!("{},{}", (c.col as f64 + 0.5) * px, y_of(c.row) + 0.5 * px))
            .collect();
        writeln!(
            s,
            r#"<polyline points="{}" stroke="{}" stroke-width="{}"><title>{}</title></polyline>"#,
            pts.join(" "),
            escape(&r.color),
            (2.0 * px).max(1.5),
            escape(&r.label)
        )
        .unwrap();
    }
    writeln!(s, "</g>").unwrap();

    // legend: vertical ramp, strong at the top
    let lx = w + 15.0;
    writeln!(s, r#"<g id="legend" font-family="sans-serif" font-size="10">"#).unwrap();
    let bar_h = 120.0;
    let step = bar_h / RAMP_LEVELS as f64;
    for l in 0..RAMP_LEVELS {
        writeln!(
            s,
            r#"<rect x="{lx}" y="{}" width="12" height="{}" fill="{}"/>"#,
            20.0 + (RAMP_LEVELS - 1 - l) as f64 * step,
            step,
            ramp_color(l)
        )
        .unwrap();
    }
    writeln!(s, r#"<text x="{}" y="24">{hi:.1} dBm</text>"#, lx + 16.0).unwrap();
    writeln!(s, r#"<text x="{}" y="{}">{lo:.1} dBm</text>"#, lx + 16.0, 20.0 + bar_h).unwrap();
    writeln!(s, "</g>").unwrap();
    writeln!(s, "</svg>").unwrap();
    Ok(s)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}
