use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use image::{imageops, ImageBuffer, Rgb, RgbImage};
use viewsync::maps::MotionFlow;

fn save(img: RgbImage, zoom: u32, path: &Path) -> Result<()> {
    let img = if zoom > 1 {
        imageops::resize(&img, img.width() * zoom, img.height() * zoom, imageops::FilterType::Nearest)
    } else {
        img
    };
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Gray image of a `rows × cols` map, linearly stretched over `[lo, hi]`.
pub fn gray(values: &[f64], rows: usize, cols: usize, lo: f64, hi: f64, zoom: u32, path: &Path) -> Result<()> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let img = ImageBuffer::from_fn(cols as u32, rows as u32, |x, y| {
        let g = to_u8((values[y as usize * cols + x as usize] - lo) / span);
        Rgb([g, g, g])
    });
    save(img, zoom, path)
}

/// Black-red-yellow-white ramp from 0 to `hi`.
pub fn heat(values: &[f64], rows: usize, cols: usize, hi: f64, zoom: u32, path: &Path) -> Result<()> {
    let hi = if hi > 0.0 { hi } else { 1.0 };
    let img = ImageBuffer::from_fn(cols as u32, rows as u32, |x, y| {
        let t = (values[y as usize * cols + x as usize] / hi).clamp(0.0, 1.0) * 3.0;
        Rgb([to_u8(t), to_u8(t - 1.0), to_u8(t - 2.0)])
    });
    save(img, zoom, path)
}

fn hsv(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let (r, g, b) = match i as u8 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [to_u8(r), to_u8(g), to_u8(b)]
}

/// Colour-wheel flow image: hue is direction, saturation is magnitude
/// relative to `max_mag` (white means no motion).
pub fn flow(f: &MotionFlow, max_mag: f64, zoom: u32, path: &Path) -> Result<()> {
    let (h, w) = (f.height(), f.width());
    let scale = if max_mag > 0.0 { max_mag } else { 1.0 };
    let img = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let dx = f.flow.at3(0, y as usize, x as usize);
        let dy = f.flow.at3(1, y as usize, x as usize);
        let angle = dy.atan2(dx) / std::f64::consts::TAU;
        Rgb(hsv(angle, (dx.hypot(dy) / scale).min(1.0), 1.0))
    });
    save(img, zoom, path)
}

/// One named polyline.
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Simple SVG line chart; `log_y` plots log10 of positive values.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], log_y: bool) -> String {
    let (w, h, ml, mr, mt, mb) = (720.0, 420.0, 70.0, 170.0, 40.0, 50.0);
    let ty = |v: f64| if log_y { v.max(1e-12).log10() } else { v };
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|&(x, y)| (x, ty(y))))
        .filter(|p| p.0.is_finite() && p.1.is_finite())
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = pts.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    if pts.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let pw = w - ml - mr;
    let ph = h - mt - mb;
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| mt + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, ml + pw / 2.0, escape(title));
    let _ = writeln!(s, r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let ylab = if log_y { format!("{:.2e}", 10f64.powf(fy)) } else { format!("{fy:.3}") };
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{fx:.0}</text>"#, sx(fx), h - mb + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{ylab}</text>"#, ml - 6.0, sy(fy) + 4.0);
        let _ = writeln!(s, r##"<line x1="{ml}" x2="{}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/>"##, ml + pw, sy(fy), sy(fy));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, ml + pw / 2.0, h - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = ser
            .points
            .iter()
            .map(|&(x, y)| (x, ty(y)))
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        let ly = mt + 14.0 + 18.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#, w - mr + 12.0, w - mr + 32.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, w - mr + 38.0, ly + 4.0, escape(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hsv_primaries() {
        assert_eq!(hsv(0.0, 1.0, 1.0), [255, 0, 0]);
        assert_eq!(hsv(1.0 / 3.0, 1.0, 1.0), [0, 255, 0]);
        assert_eq!(hsv(0.5, 0.0, 1.0), [255, 255, 255]);
    }

    #[test]
    fn chart_has_one_polyline_per_series() {
        let series = vec![
            Series { name: "a".into(), points: vec![(0.0, 1.0), (1.0, 0.5)] },
            Series { name: "b<c".into(), points: vec![(0.0, 2.0)] },
        ];
        let svg = line_chart("t", "x", "y", &series, true);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("b&lt;c"));
    }
}
