//! Quick-look figure rendering onto plain RGB images: bar chart, line
//! chart, box plot, pie chart. The CSV bundles are the canonical data;
//! these images are visual companions (geometry only, no text).

use image::{Rgb, RgbImage};

use super::kde::BoxSummary;

pub const PLOT_W: u32 = 640;
pub const PLOT_H: u32 = 420;
const MARGIN: u32 = 40;

/// Per-class palette, canonical class order.
pub const CLASS_COLORS: [Rgb<u8>; 7] = [
    Rgb([204, 68, 54]),   // angry
    Rgb([122, 88, 160]),  // disgust
    Rgb([70, 70, 70]),    // fear
    Rgb([244, 180, 38]),  // happy
    Rgb([64, 105, 170]),  // sad
    Rgb([60, 165, 150]),  // surprise
    Rgb([150, 150, 150]), // neutral
];

fn blank() -> RgbImage {
    RgbImage::from_pixel(PLOT_W, PLOT_H, Rgb([255, 255, 255]))
}

fn fill_rect(img: &mut RgbImage, x0: u32, y0: u32, x1: u32, y1: u32, color: Rgb<u8>) {
    for y in y0.min(PLOT_H - 1)..=y1.min(PLOT_H - 1) {
        for x in x0.min(PLOT_W - 1)..=x1.min(PLOT_W - 1) {
            img.put_pixel(x, y, color);
        }
    }
}

fn draw_line(img: &mut RgbImage, x0: f64, y0: f64, x1: f64, y1: f64, color: Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = (x0 + t * (x1 - x0)).round();
        let y = (y0 + t * (y1 - y0)).round();
        if x >= 0.0 && x < PLOT_W as f64 && y >= 0.0 && y < PLOT_H as f64 {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

fn axes(img: &mut RgbImage) {
    let black = Rgb([0, 0, 0]);
    draw_line(img, MARGIN as f64, (PLOT_H - MARGIN) as f64, (PLOT_W - MARGIN / 2) as f64, (PLOT_H - MARGIN) as f64, black);
    draw_line(img, MARGIN as f64, (PLOT_H - MARGIN) as f64, MARGIN as f64, (MARGIN / 2) as f64, black);
}

/// Vertical bars, one per value, class palette order.
pub fn bar_chart(values: &[u64]) -> RgbImage {
    let mut img = blank();
    axes(&mut img);
    let max = values.iter().copied().max().unwrap_or(0).max(1) as f64;
    let plot_w = PLOT_W - MARGIN - MARGIN / 2;
    let plot_h = (PLOT_H - MARGIN - MARGIN / 2) as f64;
    let slot = plot_w as f64 / values.len().max(1) as f64;
    for (i, &v) in values.iter().enumerate() {
        let h = (v as f64 / max * plot_h).round() as u32;
        let x0 = MARGIN as f64 + slot * i as f64 + slot * 0.15;
        let x1 = MARGIN as f64 + slot * (i + 1) as f64 - slot * 0.15;
        let y1 = PLOT_H - MARGIN;
        let y0 = y1.saturating_sub(h.max(1));
        fill_rect(&mut img, x0 as u32, y0, x1 as u32, y1, CLASS_COLORS[i % CLASS_COLORS.len()]);
    }
    img
}

/// Overlaid line curves sharing one coordinate frame.
pub fn line_chart(curves: &[(Vec<f64>, Vec<f64>)]) -> RgbImage {
    let mut img = blank();
    axes(&mut img);
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut y_hi = f64::NEG_INFINITY;
    for (xs, ys) in curves {
        for &x in xs {
            x_lo = x_lo.min(x);
            x_hi = x_hi.max(x);
        }
        for &y in ys {
            y_hi = y_hi.max(y);
        }
    }
    if !x_lo.is_finite() || x_hi <= x_lo || y_hi <= 0.0 {
        return img;
    }
    let to_px = |x: f64, y: f64| -> (f64, f64) {
        let px = MARGIN as f64
            + (x - x_lo) / (x_hi - x_lo) * (PLOT_W - MARGIN - MARGIN / 2) as f64;
        let py = (PLOT_H - MARGIN) as f64
            - y / y_hi * (PLOT_H - MARGIN - MARGIN / 2) as f64;
        (px, py)
    };
    for (ci, (xs, ys)) in curves.iter().enumerate() {
        let color = CLASS_COLORS[ci % CLASS_COLORS.len()];
        for w in xs.windows(2).zip(ys.windows(2)) {
            let (x, y) = w;
            let (px0, py0) = to_px(x[0], y[0]);
            let (px1, py1) = to_px(x[1], y[1]);
            draw_line(&mut img, px0, py0, px1, py1, color);
        }
    }
    img
}

/// One box-and-whisker glyph per summary.
pub fn box_plot(summaries: &[BoxSummary]) -> RgbImage {
    let mut img = blank();
    axes(&mut img);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in summaries {
        lo = lo.min(s.whisker_lo);
        hi = hi.max(s.whisker_hi);
    }
    if !lo.is_finite() || hi <= lo {
        hi = lo + 1.0;
    }
    let plot_h = (PLOT_H - MARGIN - MARGIN / 2) as f64;
    let to_py = |v: f64| (PLOT_H - MARGIN) as f64 - (v - lo) / (hi - lo) * plot_h;
    let slot = (PLOT_W - MARGIN - MARGIN / 2) as f64 / summaries.len().max(1) as f64;
    for (i, s) in summaries.iter().enumerate() {
        let color = CLASS_COLORS[i % CLASS_COLORS.len()];
        let cx = MARGIN as f64 + slot * (i as f64 + 0.5);
        let half = slot * 0.3;
        // Whisker stem and caps.
        draw_line(&mut img, cx, to_py(s.whisker_lo), cx, to_py(s.whisker_hi), color);
        for v in [s.whisker_lo, s.whisker_hi] {
            draw_line(&mut img, cx - half / 2.0, to_py(v), cx + half / 2.0, to_py(v), color);
        }
        // Box and median.
        let (y_q1, y_q3) = (to_py(s.q1), to_py(s.q3));
        draw_line(&mut img, cx - half, y_q1, cx + half, y_q1, color);
        draw_line(&mut img, cx - half, y_q3, cx + half, y_q3, color);
        draw_line(&mut img, cx - half, y_q1, cx - half, y_q3, color);
        draw_line(&mut img, cx + half, y_q1, cx + half, y_q3, color);
        draw_line(&mut img, cx - half, to_py(s.median), cx + half, to_py(s.median), color);
    }
    img
}

/// Pie over fractions that sum to at most 1.
pub fn pie_chart(fractions: &[(f64, Rgb<u8>)]) -> RgbImage {
    let mut img = blank();
    let cx = PLOT_W as f64 / 2.0;
    let cy = PLOT_H as f64 / 2.0;
    let r = (PLOT_H as f64 / 2.0) - MARGIN as f64;
    let mut start = -std::f64::consts::FRAC_PI_2;
    for &(frac, color) in fractions {
        let end = start + frac.max(0.0) * 2.0 * std::f64::consts::PI;
        let mut a = start;
        while a < end {
            draw_line(&mut img, cx, cy, cx + r * a.cos(), cy + r * a.sin(), color);
            a += 0.5 / r;
        }
        start = end;
    }
    img
}
