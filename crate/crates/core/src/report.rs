//! Dependency-free figures (binary PPM and SVG) and small CSV helpers.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::bsgc::ClusterAssignment;
use crate::error::{Error, Result};
use crate::evaluation::AblationReport;

const SEPARATOR: [u8; 3] = [96, 96, 96];
const BACKGROUND: [u8; 3] = [255, 255, 255];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        RgbImage { width, height, pixels: vec![fill; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        self.pixels[y * self.width + x] = rgb;
    }

    fn fill_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize, rgb: [u8; 3]) {
        for y in y0..(y0 + h).min(self.height) {
            for x in x0..(x0 + w).min(self.width) {
                self.set(x, y, rgb);
            }
        }
    }

    /// Binary P6 encoding.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.pixels.len() * 3);
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_ppm()).map_err(|e| Error::io(path, e))
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// White at 0, dark blue at 1.
fn accuracy_color(a: f64) -> [u8; 3] {
    let a = a.clamp(0.0, 1.0);
    let r = (255.0 - 235.0 * a).round() as u8;
    let g = (255.0 - 190.0 * a).round() as u8;
    let b = (255.0 - 95.0 * a).round() as u8;
    [r, g, b]
}

/// ON panel above OFF panel, clusters as rows and labels as columns.
pub fn accuracy_heatmap(report: &AblationReport, cell: usize) -> RgbImage {
    let (k, c) = (report.k(), report.num_classes());
    let gap = cell / 2 + 1;
    let mut img = RgbImage::new(c * cell, 2 * k * cell + gap, BACKGROUND);
    for (panel, rows) in [&report.on, &report.off].into_iter().enumerate() {
        let y0 = panel * (k * cell + gap);
        for (ci, row) in rows.iter().enumerate() {
            for (l, &a) in row.iter().enumerate() {
                img.fill_rect(l * cell, y0 + ci * cell, cell, cell, accuracy_color(a));
            }
        }
    }
    img.fill_rect(0, k * cell, c * cell, gap, SEPARATOR);
    img
}

pub fn accuracy_heatmap_svg(report: &AblationReport) -> String {
    let (k, c) = (report.k(), report.num_classes());
    let cell = 40;
    let left = 90;
    let top = 30;
    let panel_h = k * cell + 40;
    let width = left + c * cell + 10;
    let height = top + 2 * panel_h;
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#).unwrap();
    writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#).unwrap();
    for l in 0..c {
        let x = left + l * cell + cell / 2;
        writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{l}</text>"#, top - 12).unwrap();
    }
    for (panel, (title, rows)) in [("ON", &report.on), ("OFF", &report.off)].into_iter().enumerate() {
        let y0 = top + panel * panel_h;
        for (ci, row) in rows.iter().enumerate() {
            let y = y0 + ci * cell;
            writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{title} c{ci}</text>"#, left - 6, y + cell / 2 + 4)
                .unwrap();
            for (l, &a) in row.iter().enumerate() {
                let [r, g, b] = accuracy_color(a);
                let x = left + l * cell;
                writeln!(s, r#"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({r},{g},{b})" stroke="white"/>"#).unwrap();
                let ink = if a > 0.55 { "white" } else { "black" };
                writeln!(
                    s,
                    r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{a:.2}</text>"#,
                    x + cell / 2,
                    y + cell / 2 + 4
                )
                .unwrap();
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Neurons ordered by cluster label, stable in index.
fn cluster_order(labels: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by_key(|&i| (labels[i], i));
    order
}

/// Positions where a new cluster begins in a cluster-ordered axis (excluding 0).
fn boundaries(labels: &[usize], order: &[usize]) -> Vec<usize> {
    (1..order.len()).filter(|&p| labels[order[p]] != labels[order[p - 1]]).collect()
}

#[derive(Debug, Clone)]
pub struct LayerImage {
    pub image: RgbImage,
    /// Share of rendered colour intensity lying outside the matched diagonal blocks.
    pub off_block_fraction: f64,
}

/// Clustered layer weights (input rows × output columns), permuted by cluster.
/// Red is negative, blue positive; grey lines separate clusters.
pub fn clustered_layer_image(w: &DMatrix<f64>, a: &ClusterAssignment, cell: usize) -> Result<LayerImage> {
    if w.nrows() != a.m() || w.ncols() != a.n() {
        return Err(Error::Shape(format!("weights {}×{} vs assignment {}×{}", w.nrows(), w.ncols(), a.m(), a.n())));
    }
    let rows = cluster_order(&a.u_labels);
    let cols = cluster_order(&a.v_labels);
    let row_cuts = boundaries(&a.u_labels, &rows);
    let col_cuts = boundaries(&a.v_labels, &cols);
    // One separator pixel before every boundary position.
    let px = |pos: usize, cuts: &[usize]| pos * cell + cuts.iter().filter(|&&c| c <= pos).count();
    let width = a.n() * cell + col_cuts.len();
    let height = a.m() * cell + row_cuts.len();
    let mut img = RgbImage::new(width, height, BACKGROUND);
    for &c in &col_cuts {
        img.fill_rect(px(c, &col_cuts) - 1, 0, 1, height, SEPARATOR);
    }
    for &r in &row_cuts {
        img.fill_rect(0, px(r, &row_cuts) - 1, width, 1, SEPARATOR);
    }
    let max = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let (mut inside, mut total) = (0u64, 0u64);
    for (ri, &i) in rows.iter().enumerate() {
        for (ci, &j) in cols.iter().enumerate() {
            let x = w[(i, j)];
            let t = if max > 0.0 { (255.0 * x.abs() / max).round() as u8 } else { 0 };
            let rgb = if x < 0.0 { [255, 255 - t, 255 - t] } else { [255 - t, 255 - t, 255] };
            img.fill_rect(px(ci, &col_cuts), px(ri, &row_cuts), cell, cell, rgb);
            total += t as u64;
            if a.u_labels[i] == a.v_labels[j] {
                inside += t as u64;
            }
        }
    }
    let off_block_fraction = if total == 0 { 0.0 } else { 1.0 - inside as f64 / total as f64 };
    Ok(LayerImage { image: img, off_block_fraction })
}

pub fn clustered_layer_svg(w: &DMatrix<f64>, a: &ClusterAssignment, cell: usize) -> Result<String> {
    let rendered = clustered_layer_image(w, a, 1)?;
    let rows = cluster_order(&a.u_labels);
    let cols = cluster_order(&a.v_labels);
    let (width, height) = (a.n() * cell, a.m() * cell);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" shape-rendering="crispEdges">"#).unwrap();
    writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#).unwrap();
    let max = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for (ri, &i) in rows.iter().enumerate() {
        for (ci, &j) in cols.iter().enumerate() {
            let x = w[(i, j)];
            if x == 0.0 || max == 0.0 {
                continue;
            }
            let colour = if x < 0.0 { "#d62728" } else { "#1f4fb4" };
            writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="{colour}" fill-opacity="{:.4}"/>"#,
                ci * cell,
                ri * cell,
                x.abs() / max
            )
            .unwrap();
        }
    }
    for p in boundaries(&a.v_labels, &cols) {
        writeln!(s, r##"<line x1="{0}" y1="0" x2="{0}" y2="{height}" stroke="#606060"/>"##, p * cell).unwrap();
    }
    for p in boundaries(&a.u_labels, &rows) {
        writeln!(s, r##"<line x1="0" y1="{0}" x2="{width}" y2="{0}" stroke="#606060"/>"##, p * cell).unwrap();
    }
    writeln!(s, "<!-- off-block fraction {:.6} -->", rendered.off_block_fraction).unwrap();
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn sweep_csv(rows: &[(usize, f64)]) -> String {
    let mut s = String::from("k,E\n");
    for (k, e) in rows {
        writeln!(s, "{k},{e:.8}").unwrap();
    }
    s
}
