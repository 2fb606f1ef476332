//! Interpretability exports: attention matrices as CSV, heatmap SVGs, and
//! per-residue attention rankings.

use crate::fusion::AttentionMap;
use crate::Real;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("map is {rows}x{cols}; heatmaps support at most {max} per side")]
    TooLarge { rows: usize, cols: usize, max: usize },
    #[error("k = {k} outside 1..={max}")]
    BadK { k: usize, max: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Largest matrix side a heatmap will render.
pub const MAX_HEATMAP_SIDE: usize = 512;
/// Decimal places written to CSV; rankings quantize to the same precision
/// so they agree with re-read exports exactly.
const CSV_DECIMALS: usize = 6;

fn quantize(v: Real) -> Real {
    format!("{v:.CSV_DECIMALS$}").parse().expect("formatted float")
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// CSV rendering of an attention map: a header row of key labels (first
/// cell empty), then one row per query residue with values to 6 decimals.
pub fn attention_csv_string(map: &AttentionMap) -> String {
    let w = map.weights();
    let mut out = String::new();
    for label in map.key_labels() {
        out.push(',');
        out.push_str(&csv_field(label));
    }
    out.push('\n');
    for i in 0..w.rows() {
        out.push_str(&csv_field(&map.query_labels()[i]));
        for j in 0..w.cols() {
            out.push_str(&format!(",{:.CSV_DECIMALS$}", w[(i, j)]));
        }
        out.push('\n');
    }
    out
}

pub fn export_attention_csv(map: &AttentionMap, path: &Path) -> Result<(), ExplainError> {
    std::fs::write(path, attention_csv_string(map))?;
    Ok(())
}

/// A map prepared for rendering: label geometry comes from the map, the
/// color scale spans its min and max.
#[derive(Debug)]
pub struct HeatmapSpec<'a> {
    map: &'a AttentionMap,
    min: Real,
    max: Real,
}

impl<'a> HeatmapSpec<'a> {
    pub fn new(map: &'a AttentionMap) -> Self {
        let data = map.weights().data();
        let min = data.iter().copied().fold(Real::INFINITY, Real::min);
        let max = data.iter().copied().fold(Real::NEG_INFINITY, Real::max);
        HeatmapSpec { map, min, max }
    }

    pub fn min(&self) -> Real {
        self.min
    }

    pub fn max(&self) -> Real {
        self.max
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Standalone SVG heatmap: one rectangle per cell on a linear dark-to-bright
/// grayscale ramp, query labels down the left edge, key labels across the
/// top. Output is a pure function of the spec, byte for byte.
pub fn heatmap_svg_string(spec: &HeatmapSpec) -> Result<String, ExplainError> {
    let w = spec.map.weights();
    let (rows, cols) = w.shape();
    if rows > MAX_HEATMAP_SIDE || cols > MAX_HEATMAP_SIDE {
        return Err(ExplainError::TooLarge {
            rows,
            cols,
            max: MAX_HEATMAP_SIDE,
        });
    }
    const CELL: usize = 16;
    const LEFT: usize = 64;
    const TOP: usize = 56;
    const PAD: usize = 8;
    let width = LEFT + cols * CELL + PAD;
    let height = TOP + rows * CELL + PAD;
    let span = spec.max - spec.min;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"monospace\" font-size=\"10\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{width}\" height=\"{height}\" fill=\"#ffffff\"/>\n"
    ));
    for i in 0..rows {
        for j in 0..cols {
            // flat maps render mid-gray; otherwise brightness is linear in
            // the value between the scale ends
            let t = if span > 0.0 {
                (w[(i, j)] - spec.min) / span
            } else {
                0.5
            };
            let v = (t * 255.0).round() as u8;
            svg.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"rgb({v},{v},{v})\"/>\n",
                LEFT + j * CELL,
                TOP + i * CELL,
            ));
        }
    }
    for (i, label) in spec.map.query_labels().iter().enumerate() {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            LEFT - 6,
            TOP + i * CELL + CELL / 2 + 3,
            xml_escape(label)
        ));
    }
    for (j, label) in spec.map.key_labels().iter().enumerate() {
        let x = LEFT + j * CELL + CELL / 2 + 3;
        let y = TOP - 6;
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{y}\" transform=\"rotate(-90 {x} {y})\">{}</text>\n",
            xml_escape(label)
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn render_heatmap_svg(spec: &HeatmapSpec, path: &Path) -> Result<(), ExplainError> {
    std::fs::write(path, heatmap_svg_string(spec)?)?;
    Ok(())
}

/// The `k` key residues receiving the most attention: column sums in
/// descending order, ties broken by ascending column index. Sums use the
/// CSV export precision, so they match a re-read export to the last digit.
pub fn top_residues(map: &AttentionMap, k: usize) -> Result<Vec<(String, Real)>, ExplainError> {
    let w = map.weights();
    if k == 0 || k > w.cols() {
        return Err(ExplainError::BadK { k, max: w.cols() });
    }
    let mut scored: Vec<(usize, Real)> = (0..w.cols())
        .map(|j| (j, (0..w.rows()).map(|i| quantize(w[(i, j)])).sum()))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite scores").then(a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(j, s)| (map.key_labels()[j].clone(), s))
        .collect())
}
