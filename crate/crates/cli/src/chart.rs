//! PNG charts: mean ROAD against k with its confidence band, the best-k
//! histogram, signed CRE bars and heat-map overlays.

use std::io::Cursor;
use std::path::Path;

use camforge_core::cre::CreReport;
use camforge_core::ensemble::KStatistics;
use camforge_core::map::normalize;
use camforge_core::{ActivationMap, ImageTensor};
use image::{ImageFormat, Rgb, RgbImage};

use crate::output::write_atomic;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const INK: Rgb<u8> = Rgb([40, 40, 40]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const LINE: Rgb<u8> = Rgb([31, 90, 160]);
const BAND: Rgb<u8> = Rgb([190, 212, 238]);
const BAR: Rgb<u8> = Rgb([80, 130, 190]);
const POSITIVE: Rgb<u8> = Rgb([220, 60, 80]);
const NEGATIVE: Rgb<u8> = Rgb([30, 136, 229]);

const WIDTH: u32 = 640;
const HEIGHT: u32 = 400;
const LEFT: i64 = 70;
const RIGHT: i64 = 20;
const TOP: i64 = 40;
const BOTTOM: i64 = 50;

/// 3x5 glyphs, one row per byte, leftmost column in bit 2.
fn glyph(c: char) -> [u8; 5] {
    match c.to_ascii_uppercase() {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 2, 2],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        '.' => [0, 0, 0, 0, 2],
        '-' => [0, 0, 7, 0, 0],
        '+' => [0, 2, 7, 2, 0],
        '=' => [0, 7, 0, 7, 0],
        '_' => [0, 0, 0, 0, 7],
        '%' => [5, 1, 2, 4, 5],
        ':' => [0, 2, 0, 2, 0],
        'A' => [2, 5, 7, 5, 5],
        'B' => [6, 5, 6, 5, 6],
        'C' => [3, 4, 4, 4, 3],
        'D' => [6, 5, 5, 5, 6],
        'E' => [7, 4, 6, 4, 7],
        'F' => [7, 4, 6, 4, 4],
        'G' => [3, 4, 5, 5, 3],
        'H' => [5, 5, 7, 5, 5],
        'I' => [7, 2, 2, 2, 7],
        'J' => [1, 1, 1, 5, 2],
        'K' => [5, 5, 6, 5, 5],
        'L' => [4, 4, 4, 4, 7],
        'M' => [5, 7, 7, 5, 5],
        'N' => [6, 5, 5, 5, 5],
        'O' => [2, 5, 5, 5, 2],
        'P' => [6, 5, 6, 4, 4],
        'Q' => [2, 5, 5, 6, 3],
        'R' => [6, 5, 6, 5, 5],
        'S' => [3, 4, 2, 1, 6],
        'T' => [7, 2, 2, 2, 2],
        'U' => [5, 5, 5, 5, 7],
        'V' => [5, 5, 5, 5, 2],
        'W' => [5, 5, 7, 7, 5],
        'X' => [5, 5, 2, 5, 5],
        'Y' => [5, 5, 2, 2, 2],
        'Z' => [7, 1, 2, 4, 7],
        _ => [0; 5],
    }
}

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn new(width: u32, height: u32) -> Self {
        Self {
            img: RgbImage::from_pixel(width, height, WHITE),
        }
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    fn rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
        for y in y0.min(y1)..=y0.max(y1) {
            for x in x0.min(x1)..=x0.max(x1) {
                self.put(x, y, c);
            }
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
        for s in 0..=steps {
            let x = x0 + (x1 - x0) * s / steps;
            let y = y0 + (y1 - y0) * s / steps;
            self.rect(x, y, x + 1, y + 1, c);
        }
    }

    fn text_width(s: &str, scale: i64) -> i64 {
        s.chars().count() as i64 * 4 * scale
    }

    fn text(&mut self, x: i64, y: i64, s: &str, scale: i64, c: Rgb<u8>) {
        for (i, ch) in s.chars().enumerate() {
            let ox = x + i as i64 * 4 * scale;
            for (row, bits) in glyph(ch).iter().enumerate() {
                for col in 0..3 {
                    if bits >> (2 - col) & 1 == 1 {
                        let px = ox + col * scale;
                        let py = y + row as i64 * scale;
                        self.rect(px, py, px + scale - 1, py + scale - 1, c);
                    }
                }
            }
        }
    }

    fn text_centered(&mut self, cx: i64, y: i64, s: &str, scale: i64, c: Rgb<u8>) {
        self.text(cx - Self::text_width(s, scale) / 2, y, s, scale, c);
    }
}

/// Maps data coordinates onto the plot area.
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let pad = |(lo, hi): (f64, f64)| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        Self { x: pad(x), y: pad(y) }
    }

    fn px(&self, v: f64) -> i64 {
        let span = (WIDTH as i64 - LEFT - RIGHT) as f64;
        LEFT + ((v - self.x.0) / (self.x.1 - self.x.0) * span).round() as i64
    }

    fn py(&self, v: f64) -> i64 {
        let span = (HEIGHT as i64 - TOP - BOTTOM) as f64;
        HEIGHT as i64 - BOTTOM - ((v - self.y.0) / (self.y.1 - self.y.0) * span).round() as i64
    }
}

fn label(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e6 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn axes(canvas: &mut Canvas, frame: &Frame, title: &str, x_ticks: &[f64]) {
    let bottom = HEIGHT as i64 - BOTTOM;
    let right = WIDTH as i64 - RIGHT;
    for i in 0..=4 {
        let v = frame.y.0 + (frame.y.1 - frame.y.0) * f64::from(i) / 4.0;
        let y = frame.py(v);
        canvas.rect(LEFT, y, right, y, GRID);
        let s = label(v);
        canvas.text(LEFT - 6 - Canvas::text_width(&s, 2), y - 5, &s, 2, INK);
    }
    let stride = x_ticks.len().div_ceil(12).max(1);
    for &k in x_ticks.iter().step_by(stride) {
        let x = frame.px(k);
        canvas.rect(x, bottom, x, bottom + 4, INK);
        canvas.text_centered(x, bottom + 10, &label(k), 2, INK);
    }
    canvas.rect(LEFT, TOP, LEFT, bottom, INK);
    canvas.rect(LEFT, bottom, right, bottom, INK);
    canvas.text_centered(WIDTH as i64 / 2, 12, title, 2, INK);
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Mean combined ROAD per k, banded by the 95% interval.
pub fn road_curve(stats: &[KStatistics]) -> RgbImage {
    let mut canvas = Canvas::new(WIDTH, HEIGHT);
    if stats.is_empty() {
        canvas.text_centered(WIDTH as i64 / 2, HEIGHT as i64 / 2, "NO DATA", 3, INK);
        return canvas.img;
    }
    let ks: Vec<f64> = stats.iter().map(|s| s.k).collect();
    let (lo, hi) = bounds(stats.iter().flat_map(|s| [s.ci_low, s.ci_high]));
    let margin = (hi - lo) * 0.05;
    let frame = Frame::new(bounds(ks.iter().copied()), (lo - margin, hi + margin));
    axes(&mut canvas, &frame, "MEAN ROAD VS K", &ks);
    for pair in stats.windows(2) {
        let (x0, x1) = (frame.px(pair[0].k), frame.px(pair[1].k));
        for x in x0..=x1 {
            let t = if x1 > x0 { (x - x0) as f64 / (x1 - x0) as f64 } else { 0.0 };
            let low = pair[0].ci_low + t * (pair[1].ci_low - pair[0].ci_low);
            let high = pair[0].ci_high + t * (pair[1].ci_high - pair[0].ci_high);
            canvas.rect(x, frame.py(high), x, frame.py(low), BAND);
        }
    }
    if stats.len() == 1 {
        let x = frame.px(stats[0].k);
        canvas.rect(x - 3, frame.py(stats[0].ci_high), x + 3, frame.py(stats[0].ci_low), BAND);
    }
    for pair in stats.windows(2) {
        canvas.line(
            (frame.px(pair[0].k), frame.py(pair[0].mean)),
            (frame.px(pair[1].k), frame.py(pair[1].mean)),
            LINE,
        );
    }
    for s in stats {
        let (x, y) = (frame.px(s.k), frame.py(s.mean));
        canvas.rect(x - 2, y - 2, x + 2, y + 2, LINE);
    }
    canvas.img
}

/// How often each k was the best threshold.
pub fn best_k_histogram(stats: &[KStatistics]) -> RgbImage {
    let mut canvas = Canvas::new(WIDTH, HEIGHT);
    if stats.is_empty() {
        canvas.text_centered(WIDTH as i64 / 2, HEIGHT as i64 / 2, "NO DATA", 3, INK);
        return canvas.img;
    }
    let ks: Vec<f64> = stats.iter().map(|s| s.k).collect();
    let top = stats.iter().map(|s| s.best_k_count).max().unwrap_or(0).max(1) as f64;
    let (k_lo, k_hi) = bounds(ks.iter().copied());
    let step = if ks.len() > 1 { (k_hi - k_lo) / (ks.len() - 1) as f64 } else { 1.0 };
    let frame = Frame::new((k_lo - step / 2.0, k_hi + step / 2.0), (0.0, top));
    axes(&mut canvas, &frame, "BEST K FREQUENCY", &ks);
    let half = ((frame.px(k_lo + step) - frame.px(k_lo)) as f64 * 0.4).max(1.0) as i64;
    for s in stats.iter().filter(|s| s.best_k_count > 0) {
        let x = frame.px(s.k);
        canvas.rect(x - half, frame.py(s.best_k_count as f64), x + half, frame.py(0.0), BAR);
    }
    canvas.img
}

/// Signed horizontal bars, one per group.
pub fn cre_bars(report: &CreReport) -> RgbImage {
    let rows = report.group_codes.len().max(1) as i64;
    let row_h = 28;
    let height = (TOP + rows * row_h + 20) as u32;
    let mut canvas = Canvas::new(WIDTH, height);
    canvas.text_centered(WIDTH as i64 / 2, 12, "CUMULATIVE RESIDUAL EFFECT", 2, INK);
    let extent = report.residuals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let center = (LEFT + WIDTH as i64 - RIGHT) / 2;
    let half = (WIDTH as i64 - RIGHT - LEFT) / 2 - 60;
    for (i, (code, &r)) in report.group_codes.iter().zip(&report.residuals).enumerate() {
        let y = TOP + i as i64 * row_h;
        canvas.text(10, y + 6, code, 2, INK);
        let len = (r / extent * half as f64).round() as i64;
        let color = if r >= 0.0 { POSITIVE } else { NEGATIVE };
        if len != 0 {
            canvas.rect(center, y + 2, center + len, y + row_h - 6, color);
        }
        let s = format!("{r:+.3}");
        let tx = if r >= 0.0 { center + len + 6 } else { center + len - 6 - Canvas::text_width(&s, 2) };
        canvas.text(tx, y + 6, &s, 2, INK);
    }
    canvas.rect(center, TOP - 4, center, TOP + rows * row_h, INK);
    canvas.img
}

/// Piecewise-linear approximation of the viridis ramp.
pub fn viridis(t: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 9] = [
        [68.0, 1.0, 84.0],
        [71.0, 44.0, 122.0],
        [59.0, 81.0, 139.0],
        [44.0, 113.0, 142.0],
        [33.0, 144.0, 141.0],
        [39.0, 173.0, 129.0],
        [92.0, 200.0, 99.0],
        [170.0, 220.0, 50.0],
        [253.0, 231.0, 37.0],
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let pos = t * 8.0;
    let i = (pos.floor() as usize).min(7);
    let f = pos - i as f64;
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        *o = (STOPS[i][c] + f * (STOPS[i + 1][c] - STOPS[i][c])).round() as u8;
    }
    out
}

/// Heat map blended at `alpha` over the (denormalized) image, upscaled so the
/// longer side is at least 256 pixels.
pub fn overlay(map: &ActivationMap, image: Option<&ImageTensor>, alpha: f64) -> anyhow::Result<RgbImage> {
    let (h, w) = map.dims();
    if let Some(img) = image {
        anyhow::ensure!(img.spatial_dims() == (h, w), "map and image sizes differ");
    }
    let heat = normalize(map)?;
    let scale = (256 / h.max(w)).max(1) as u32;
    let base: Option<Vec<f32>> = image.map(|i| i.denormalized());
    let mut out = RgbImage::new(w as u32 * scale, h as u32 * scale);
    for r in 0..h {
        for c in 0..w {
            let v = heat.values()[r * w + c];
            let color = viridis(v);
            let under: [f64; 3] = match (&base, image) {
                (Some(vals), Some(img)) => {
                    let plane = h * w;
                    let at = |ch: usize| f64::from(vals[ch.min(img.channels() - 1) * plane + r * w + c]).clamp(0.0, 1.0) * 255.0;
                    [at(0), at(1), at(2)]
                }
                _ => [0.0; 3],
            };
            let a = if image.is_some() { alpha } else { 1.0 };
            let px = Rgb(std::array::from_fn(|i| (a * f64::from(color[i]) + (1.0 - a) * under[i]).round() as u8));
            for dy in 0..scale {
                for dx in 0..scale {
                    out.put_pixel(c as u32 * scale + dx, r as u32 * scale + dy, px);
                }
            }
        }
    }
    Ok(out)
}

pub fn save_png(path: &Path, img: &RgbImage) -> anyhow::Result<()> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    write_atomic(path, buf.get_ref())
}
