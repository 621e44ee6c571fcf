//! Rasterizing the scene field: grid sampling, iso-band extraction and
//! image output.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::dsl::{Arg, ConstraintKind, Quantity, SceneSpec, TargetKind};
use crate::font;
use crate::scene::Configuration;
use crate::sdf::{sdf_scene, SdfError};

pub const DEFAULT_RESOLUTION: usize = 512;
pub const DEFAULT_THRESHOLD: f64 = 0.01;
pub const DEFAULT_MARGIN: f64 = 0.15;
/// Bare points are drawn as discs of this many pixels.
pub const POINT_RADIUS_PX: f64 = 1.5;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("grid resolution {0} is below the minimum of 16")]
    Resolution(usize),
    #[error("threshold must be positive")]
    Threshold,
    #[error(transparent)]
    Sdf(#[from] SdfError),
    #[error("png encoding failed: {0}")]
    Png(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Viewport {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl Viewport {
    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (self.xmin..=self.xmax).contains(&p[0]) && (self.ymin..=self.ymax).contains(&p[1])
    }
}

/// Square viewport around every point and circle, grown by `margin_frac` of
/// the side on each side. A layout with no extent gets a side of 2 centred on
/// its single location.
pub fn auto_viewport(cfg: &Configuration, margin_frac: f64) -> Viewport {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    let mut grow = |p: [f64; 2], r: f64| {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k] - r);
            hi[k] = hi[k].max(p[k] + r);
        }
    };
    for p in &cfg.points {
        grow(p.pos, 0.0);
    }
    for i in 0..cfg.circles.len() {
        grow(cfg.circle_center(i), cfg.circles[i].radius);
    }
    if !lo[0].is_finite() {
        return Viewport {
            xmin: -1.0,
            ymin: -1.0,
            xmax: 1.0,
            ymax: 1.0,
        };
    }
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let side = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let half = if side < 1e-9 {
        1.0
    } else {
        side * (0.5 + margin_frac)
    };
    Viewport {
        xmin: center[0] - half,
        ymin: center[1] - half,
        xmax: center[0] + half,
        ymax: center[1] + half,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrid {
    pub n: usize,
    /// Row-major, top row first (`y = ymax`).
    pub values: Vec<f64>,
    pub viewport: Viewport,
}

impl FieldGrid {
    pub fn pixel_size(&self) -> f64 {
        self.viewport.width() / self.n as f64
    }

    /// World coordinates of the centre of pixel `(row, col)`.
    pub fn world(&self, row: usize, col: usize) -> [f64; 2] {
        pixel_center(&self.viewport, self.n, row, col)
    }

    /// Continuous `(col, row)` pixel coordinates of a world position; the
    /// pixel `(r, c)` spans `[c, c+1) x [r, r+1)`.
    pub fn to_pixel(&self, p: [f64; 2]) -> [f64; 2] {
        let vp = &self.viewport;
        let s = self.n as f64;
        [
            (p[0] - vp.xmin) / vp.width() * s,
            (vp.ymax - p[1]) / vp.height() * s,
        ]
    }

    pub fn from_pixel(&self, px: [f64; 2]) -> [f64; 2] {
        let vp = &self.viewport;
        let s = self.n as f64;
        [
            vp.xmin + px[0] / s * vp.width(),
            vp.ymax - px[1] / s * vp.height(),
        ]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n + col]
    }
}

fn pixel_center(vp: &Viewport, n: usize, row: usize, col: usize) -> [f64; 2] {
    let dx = vp.width() / n as f64;
    let dy = vp.height() / n as f64;
    [
        vp.xmin + (col as f64 + 0.5) * dx,
        vp.ymax - (row as f64 + 0.5) * dy,
    ]
}

/// Samples the scene field at every pixel centre of an `n x n` grid.
pub fn sample_grid(cfg: &Configuration, n: usize, vp: Viewport) -> Result<FieldGrid, RenderError> {
    if n < 16 {
        return Err(RenderError::Resolution(n));
    }
    let point_radius = POINT_RADIUS_PX * vp.width() / n as f64;
    let row = |r: usize| -> Result<Vec<f64>, SdfError> {
        (0..n)
            .map(|c| sdf_scene(pixel_center(&vp, n, r, c), cfg, point_radius))
            .collect()
    };
    #[cfg(feature = "parallel")]
    let rows: Result<Vec<Vec<f64>>, SdfError> = {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(row).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Result<Vec<Vec<f64>>, SdfError> = (0..n).map(row).collect();
    Ok(FieldGrid {
        n,
        values: rows?.concat(),
        viewport: vp,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub n: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Pixels set here but not in `other`.
    pub fn violations_against(&self, other: &Mask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|&(&a, &b)| a && !b)
            .count()
    }
}

/// `|value| <= threshold` per pixel.
pub fn extract_isosurface(grid: &FieldGrid, threshold: f64) -> Result<Mask, RenderError> {
    if !(threshold > 0.0) {
        return Err(RenderError::Threshold);
    }
    Ok(Mask {
        n: grid.n,
        bits: grid.values.iter().map(|v| v.abs() <= threshold).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Style {
    /// Black strokes on white.
    Mask,
    /// Like `Mask`, with edges blended by a smoothstep over one pixel.
    SmoothMask,
    /// Distance colour map.
    Heatmap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    /// 1 (grayscale) or 3 (RGB).
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl RasterImage {
    fn new(width: usize, height: usize, channels: usize, fill: u8) -> Self {
        Self {
            width,
            height,
            channels,
            pixels: vec![fill; width * height * channels],
        }
    }

    fn put(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = (y as usize * self.width + x as usize) * self.channels;
        if self.channels == 1 {
            self.pixels[i] = color[0];
        } else {
            self.pixels[i..i + 3].copy_from_slice(&color);
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.pixels[i..i + self.channels]
    }

    /// RGBA bytes, e.g. for a browser canvas.
    pub fn to_rgba(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.width * self.height * 4);
        for px in self.pixels.chunks(self.channels) {
            let (r, g, b) = if self.channels == 1 {
                (px[0], px[0], px[0])
            } else {
                (px[0], px[1], px[2])
            };
            out.extend_from_slice(&[r, g, b, 255]);
        }
        out
    }

    pub fn write_png<W: Write>(&self, w: W) -> Result<(), RenderError> {
        let mut enc = png::Encoder::new(w, self.width as u32, self.height as u32);
        enc.set_color(if self.channels == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| RenderError::Png(e.to_string()))?;
        writer
            .write_image_data(&self.pixels)
            .map_err(|e| RenderError::Png(e.to_string()))?;
        writer.finish().map_err(|e| RenderError::Png(e.to_string()))
    }

    pub fn png_bytes(&self) -> Result<Vec<u8>, RenderError> {
        let mut buf = Vec::new();
        self.write_png(&mut buf)?;
        Ok(buf)
    }

    /// Binary PGM (P5) for grayscale, PPM (P6) for RGB.
    pub fn write_pnm<W: Write>(&self, mut w: W) -> Result<(), RenderError> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        write!(w, "{magic}\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)?;
        Ok(())
    }
}

/// Monotone colour ramp: dark at the zero level set, brightening with
/// distance; warm outside, cool inside.
pub fn heat_color(value: f64, scale: f64) -> [u8; 3] {
    let t = 1.0 - (-value.abs() / scale).exp();
    let ch = |lo: f64, hi: f64| (lo + (hi - lo) * t).round() as u8;
    if value >= 0.0 {
        [ch(20.0, 255.0), ch(10.0, 200.0), ch(0.0, 120.0)]
    } else {
        [ch(0.0, 120.0), ch(10.0, 200.0), ch(20.0, 255.0)]
    }
}

/// Point labels, angle arcs for angle targets and tick marks for
/// equal-length constraints.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Annotations {
    pub labels: Vec<(String, [f64; 2])>,
    /// `(arm end, vertex, arm end)` in world coordinates.
    pub arcs: Vec<[[f64; 2]; 3]>,
    /// `(segment start, segment end, tick count)`.
    pub ticks: Vec<([f64; 2], [f64; 2], usize)>,
}

impl Annotations {
    pub fn from_scene(spec: &SceneSpec, cfg: &Configuration) -> Self {
        let pos = |n: &str| cfg.point(n);
        let labels = cfg.points.iter().map(|p| (p.name.clone(), p.pos)).collect();
        let arcs = spec
            .targets
            .iter()
            .filter(|t| t.kind == TargetKind::Angle && t.args.len() == 3)
            .filter_map(|t| Some([pos(&t.args[0])?, pos(&t.args[1])?, pos(&t.args[2])?]))
            .collect();

        // Group segments related by equal-length constraints; each group gets
        // one more tick than the previous one.
        let mut groups: Vec<Vec<(String, String)>> = Vec::new();
        let key = |a: &str, b: &str| {
            if a <= b {
                (a.to_string(), b.to_string())
            } else {
                (b.to_string(), a.to_string())
            }
        };
        for c in spec.constraints.iter().filter(|c| c.kind == ConstraintKind::Equal) {
            let pair = match c.args.as_slice() {
                [Arg::Quantity(Quantity::Length(a, b)), Arg::Quantity(Quantity::Length(p, q))] => {
                    (key(a, b), key(p, q))
                }
                _ => continue,
            };
            let find = |groups: &Vec<Vec<(String, String)>>, k: &(String, String)| {
                groups.iter().position(|g| g.contains(k))
            };
            match (find(&groups, &pair.0), find(&groups, &pair.1)) {
                (Some(i), Some(j)) if i != j => {
                    let moved = groups.remove(j.max(i));
                    groups[j.min(i)].extend(moved);
                }
                (Some(_), Some(_)) => {}
                (Some(i), None) => groups[i].push(pair.1),
                (None, Some(j)) => groups[j].push(pair.0),
                (None, None) => groups.push(vec![pair.0, pair.1]),
            }
        }
        let ticks = groups
            .iter()
            .enumerate()
            .flat_map(|(gi, g)| {
                g.iter()
                    .filter_map(move |(a, b)| Some((pos(a)?, pos(b)?, (gi % 3) + 1)))
            })
            .collect();
        Self {
            labels,
            arcs,
            ticks,
        }
    }
}

fn draw_annotations(img: &mut RasterImage, grid: &FieldGrid, ann: &Annotations, color: [u8; 3]) {
    let scale = (img.width / 256).max(1) as i64;
    for (name, p) in &ann.labels {
        let px = grid.to_pixel(*p);
        let x = px[0] as i64 + 3 * scale;
        let y = px[1] as i64 - 9 * scale;
        font::draw_text(name, x, y, scale, &mut |x, y| img.put(x, y, color));
    }
    let unit = img.width as f64 / 512.0;
    for [a, v, c] in &ann.arcs {
        let (pa, pv, pc) = (grid.to_pixel(*a), grid.to_pixel(*v), grid.to_pixel(*c));
        draw_arc(img, pa, pv, pc, 18.0 * unit, color);
    }
    for (a, b, count) in &ann.ticks {
        draw_ticks(img, grid.to_pixel(*a), grid.to_pixel(*b), *count, unit, color);
    }
}

fn draw_arc(img: &mut RasterImage, a: [f64; 2], v: [f64; 2], c: [f64; 2], r: f64, color: [u8; 3]) {
    let u = [a[0] - v[0], a[1] - v[1]];
    let w = [c[0] - v[0], c[1] - v[1]];
    let cross = |p: [f64; 2], q: [f64; 2]| p[0] * q[1] - p[1] * q[0];
    let dot = |p: [f64; 2], q: [f64; 2]| p[0] * q[0] + p[1] * q[1];
    let uw = cross(u, w);
    let reach = r.ceil() as i64 + 2;
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let d = [dx as f64 + 0.5, dy as f64 + 0.5];
            let q = [v[0].floor() + d[0] - v[0], v[1].floor() + d[1] - v[1]];
            if ((q[0].hypot(q[1])) - r).abs() > 0.75 {
                continue;
            }
            // inside the smaller sector between u and w
            let inside = if uw.abs() < 1e-12 {
                dot(u, w) > 0.0 && dot(q, u) > 0.0
            } else {
                cross(u, q) * uw >= 0.0 && cross(q, w) * uw >= 0.0
            };
            if inside {
                img.put(v[0].floor() as i64 + dx, v[1].floor() as i64 + dy, color);
            }
        }
    }
}

fn draw_ticks(img: &mut RasterImage, a: [f64; 2], b: [f64; 2], count: usize, unit: f64, color: [u8; 3]) {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len = d[0].hypot(d[1]);
    if len < 1.0 {
        return;
    }
    let t = [d[0] / len, d[1] / len];
    let nrm = [-t[1], t[0]];
    let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
    let half = 5.0 * unit;
    let spacing = 4.0 * unit;
    for k in 0..count {
        let off = (k as f64 - (count as f64 - 1.0) / 2.0) * spacing;
        let c = [mid[0] + t[0] * off, mid[1] + t[1] * off];
        let steps = (4.0 * half).ceil() as i64;
        for s in -steps..=steps {
            let f = s as f64 / steps as f64 * half;
            img.put(
                (c[0] + nrm[0] * f).floor() as i64,
                (c[1] + nrm[1] * f).floor() as i64,
                color,
            );
        }
    }
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Draws the grid in the given style. The mask style writes one grayscale
/// byte per pixel (0 on the iso-band, 255 elsewhere); the heatmap is RGB.
pub fn render_image(
    grid: &FieldGrid,
    threshold: f64,
    style: Style,
    annotations: Option<&Annotations>,
) -> Result<RasterImage, RenderError> {
    let n = grid.n;
    let mut img = match style {
        Style::Mask => {
            let mask = extract_isosurface(grid, threshold)?;
            RasterImage {
                width: n,
                height: n,
                channels: 1,
                pixels: mask.bits.iter().map(|&b| if b { 0 } else { 255 }).collect(),
            }
        }
        Style::SmoothMask => {
            if !(threshold > 0.0) {
                return Err(RenderError::Threshold);
            }
            let half = grid.pixel_size() / 2.0;
            RasterImage {
                width: n,
                height: n,
                channels: 1,
                pixels: grid
                    .values
                    .iter()
                    .map(|v| (255.0 * smoothstep(threshold - half, threshold + half, v.abs())).round() as u8)
                    .collect(),
            }
        }
        Style::Heatmap => {
            let mut img = RasterImage::new(n, n, 3, 0);
            let scale = grid.viewport.width() / 8.0;
            for (i, v) in grid.values.iter().enumerate() {
                img.pixels[i * 3..i * 3 + 3].copy_from_slice(&heat_color(*v, scale));
            }
            img
        }
    };
    if let Some(ann) = annotations {
        let color = match style {
            Style::Mask | Style::SmoothMask => [0, 0, 0],
            Style::Heatmap => [255, 255, 255],
        };
        draw_annotations(&mut img, grid, ann, color);
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_spec;
    use crate::scene::{build_scene, CircleCenter};
    use crate::sdf::{sdf_circle, sdf_segment};

    fn unit_circle() -> Configuration {
        let spec = parse_spec("circle w\nconstraint equal radius(w) 1").unwrap();
        let mut cfg = build_scene(&spec, 0);
        cfg.circles[0].center = CircleCenter::Own {
            pos: [0.0, 0.0],
            slot: 0,
        };
        cfg.circles[0].radius = 1.0;
        cfg
    }

    #[test]
    fn viewport_of_unit_circle() {
        let vp = auto_viewport(&unit_circle(), DEFAULT_MARGIN);
        assert!(vp.xmin <= -1.15 && vp.ymin <= -1.15 && vp.xmax >= 1.15 && vp.ymax >= 1.15);
        assert!((vp.width() - vp.height()).abs() < 1e-12);
    }

    #[test]
    fn viewport_of_single_point() {
        let spec = parse_spec("point A B\nconstraint equal length(A,B) 1").unwrap();
        let mut cfg = build_scene(&spec, 0);
        cfg.points[0].pos = [0.5, -2.0];
        cfg.points[1].pos = [0.5, -2.0];
        assert_eq!(
            auto_viewport(&cfg, DEFAULT_MARGIN),
            Viewport {
                xmin: -0.5,
                ymin: -3.0,
                xmax: 1.5,
                ymax: -1.0
            }
        );
    }

    #[test]
    fn single_segment_grid() {
        let spec = parse_spec("point A B\nsegment A B\nconstraint equal length(A,B) 1").unwrap();
        let mut cfg = build_scene(&spec, 1);
        // Points drawn as zero-radius discs coincide with the segment field.
        let vp = auto_viewport(&cfg, DEFAULT_MARGIN);
        let grid = sample_grid(&cfg, 32, vp).unwrap();
        let (a, b) = (cfg.points[0].pos, cfg.points[1].pos);
        let pr = POINT_RADIUS_PX * vp.width() / 32.0;
        for r in 0..32 {
            for c in 0..32 {
                let x = grid.world(r, c);
                let seg = sdf_segment(x, a, b);
                let pts = (crate::sdf::sdf_point(x, a) - pr).max(0.0).min((crate::sdf::sdf_point(x, b) - pr).max(0.0));
                assert_eq!(grid.get(r, c), seg.min(pts));
            }
        }
        cfg.points.clear();
        cfg.segments.clear();
        assert!(sample_grid(&cfg, 32, vp).is_err());
        assert!(matches!(sample_grid(&build_scene(&spec, 1), 8, vp), Err(RenderError::Resolution(8))));
    }

    #[test]
    fn doubling_resolution_keeps_shared_samples() {
        // Pixel centres of an n grid coincide with those of a 3n grid.
        let cfg = unit_circle();
        let vp = auto_viewport(&cfg, DEFAULT_MARGIN);
        let g1 = sample_grid(&cfg, 20, vp).unwrap();
        let g3 = sample_grid(&cfg, 60, vp).unwrap();
        for r in 0..20 {
            for c in 0..20 {
                let a = g1.world(r, c);
                let b = g3.world(3 * r + 1, 3 * c + 1);
                assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
                assert!((g1.get(r, c) - g3.get(3 * r + 1, 3 * c + 1)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn threshold_monotonicity_and_saturation() {
        let cfg = unit_circle();
        let vp = auto_viewport(&cfg, DEFAULT_MARGIN);
        let grid = sample_grid(&cfg, 128, vp).unwrap();
        let masks: Vec<Mask> = [0.005, 0.03, 0.1, 0.2]
            .iter()
            .map(|&t| extract_isosurface(&grid, t).unwrap())
            .collect();
        for w in masks.windows(2) {
            assert!(w[0].is_subset_of(&w[1]));
        }
        let diag = vp.width().hypot(vp.height());
        assert_eq!(extract_isosurface(&grid, diag * 1.01).unwrap().count(), 128 * 128);
        assert!(extract_isosurface(&grid, 0.0).is_err());
    }

    #[test]
    fn annulus_pixel_count() {
        let cfg = unit_circle();
        let vp = auto_viewport(&cfg, DEFAULT_MARGIN);
        let grid = sample_grid(&cfg, 512, vp).unwrap();
        let tau: f64 = 0.01;
        let px = grid.pixel_size();
        let expect = std::f64::consts::PI * ((1.0 + tau).powi(2) - (1.0 - tau).powi(2)) / (px * px);
        let got = extract_isosurface(&grid, tau).unwrap().count() as f64;
        assert!((got - expect).abs() <= 0.15 * expect, "{got} vs {expect}");
    }

    #[test]
    fn world_pixel_round_trip() {
        let cfg = unit_circle();
        let grid = sample_grid(&cfg, 64, auto_viewport(&cfg, DEFAULT_MARGIN)).unwrap();
        for p in [[0.3, -0.2], [1.0, 1.0], [-1.1, 0.5]] {
            let q = grid.from_pixel(grid.to_pixel(p));
            assert!((q[0] - p[0]).abs() < 1e-12 && (q[1] - p[1]).abs() < 1e-12);
        }
        let c = grid.to_pixel(grid.world(10, 20));
        assert_eq!([c[0].floor(), c[1].floor()], [20.0, 10.0]);
    }

    #[test]
    fn mask_image_matches_mask() {
        let cfg = unit_circle();
        let grid = sample_grid(&cfg, 64, auto_viewport(&cfg, DEFAULT_MARGIN)).unwrap();
        let img = render_image(&grid, 0.05, Style::Mask, None).unwrap();
        let mask = extract_isosurface(&grid, 0.05).unwrap();
        assert_eq!(img.pixels.iter().filter(|&&p| p == 0).count(), mask.count());
        let empty = render_image(&grid, 1e-9, Style::Mask, None).unwrap();
        assert!(empty.pixels.iter().all(|&p| p == 255));
    }

    #[test]
    fn smooth_mask_brackets_hard_mask() {
        let cfg = unit_circle();
        let grid = sample_grid(&cfg, 128, auto_viewport(&cfg, DEFAULT_MARGIN)).unwrap();
        let tau = 0.05;
        let hard = render_image(&grid, tau, Style::Mask, None).unwrap();
        let soft = render_image(&grid, tau, Style::SmoothMask, None).unwrap();
        let half = grid.pixel_size() / 2.0;
        for (i, v) in grid.values.iter().enumerate() {
            let d = v.abs();
            if d <= tau - half {
                assert_eq!(soft.pixels[i], 0);
            } else if d >= tau + half {
                assert_eq!(soft.pixels[i], 255);
            }
            if hard.pixels[i] == 0 {
                assert!(soft.pixels[i] <= 128);
            }
        }
        assert!(soft.pixels.iter().any(|&p| p > 0 && p < 255));
    }

    #[test]
    fn heatmap_monotone_along_ray() {
        let cfg = unit_circle();
        let grid = sample_grid(&cfg, 128, auto_viewport(&cfg, DEFAULT_MARGIN)).unwrap();
        let img = render_image(&grid, 0.01, Style::Heatmap, None).unwrap();
        let row = 64;
        let mut samples: Vec<(f64, u32)> = (64..128)
            .map(|c| {
                let x = grid.world(row, c);
                let d = sdf_circle(x, [0.0, 0.0], 1.0).abs();
                let p = img.pixel(c, row);
                (d, p.iter().map(|&v| v as u32).sum())
            })
            .collect();
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in samples.windows(2) {
            assert!(w[0].1 <= w[1].1);
        }
    }

    #[test]
    fn rendering_is_deterministic_and_encodes() {
        let spec = parse_spec(
            "point A B C\nsegment A B\nsegment B C\nconstraint equal length(A,B) length(B,C)\ntarget angle A B C",
        )
        .unwrap();
        let cfg = build_scene(&spec, 3);
        let grid = sample_grid(&cfg, 64, auto_viewport(&cfg, DEFAULT_MARGIN)).unwrap();
        let ann = Annotations::from_scene(&spec, &cfg);
        assert_eq!(ann.arcs.len(), 1);
        assert_eq!(ann.ticks.len(), 2);
        let a = render_image(&grid, 0.01, Style::Mask, Some(&ann)).unwrap();
        let b = render_image(&grid, 0.01, Style::Mask, Some(&ann)).unwrap();
        assert_eq!(a.png_bytes().unwrap(), b.png_bytes().unwrap());
        let mut pgm = Vec::new();
        a.write_pnm(&mut pgm).unwrap();
        assert!(pgm.starts_with(b"P5\n64 64\n255\n"));
        assert_eq!(pgm.len(), 13 + 64 * 64);
    }
}
