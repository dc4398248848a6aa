//! Toy glyph world behind the mock image and video seats.
//!
//! Characters are solid squares in a saturated colour derived from their
//! name. Backgrounds are low-saturation patterns, so any pixel whose channel
//! spread reaches [`CHROMA_THRESHOLD`] belongs to a figure.

use std::collections::BTreeMap;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::schema::Pose;
use crate::util::stable_hash;

/// Minimum channel spread that marks a pixel as part of a figure.
pub const CHROMA_THRESHOLD: u8 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MockWorld {
    pub seed: u64,
    /// Edge length of a character glyph in pixels.
    pub glyph_size: u32,
    /// Largest per-frame glyph displacement in pixels.
    pub s_max: f64,
    /// Distance from the frame border inside which entries must begin.
    pub edge_margin: u32,
}

impl Default for MockWorld {
    fn default() -> Self {
        MockWorld { seed: 0, glyph_size: 16, s_max: 2.0, edge_margin: 16 }
    }
}

impl MockWorld {
    /// Visibility change bound: s_max times glyph perimeter over glyph area.
    pub fn delta_max(&self) -> f64 {
        let g = self.glyph_size as f64;
        self.s_max * (4.0 * g) / (g * g)
    }
}

/// Saturated palette colour for a character name. One channel is 255, one
/// is 0, so the spread is always 255.
pub fn palette(name: &str) -> Rgb<u8> {
    let h = (stable_hash([b"palette".as_slice(), name.as_bytes()]) % 1530) as u32;
    let (sector, f) = (h / 255, (h % 255) as u8);
    let rgb = match sector {
        0 => [255, f, 0],
        1 => [255 - f, 255, 0],
        2 => [0, 255, f],
        3 => [0, 255 - f, 255],
        4 => [f, 0, 255],
        _ => [255, 0, 255 - f],
    };
    Rgb(rgb)
}

/// Colour for the i-th anonymous figure in dataset clips.
pub fn figure_color(i: usize) -> Rgb<u8> {
    const FIGURES: [[u8; 3]; 8] = [
        [255, 40, 0],
        [0, 200, 255],
        [255, 0, 200],
        [60, 255, 0],
        [255, 220, 0],
        [120, 0, 255],
        [0, 255, 150],
        [255, 0, 80],
    ];
    Rgb(FIGURES[i % FIGURES.len()])
}

pub fn is_chromatic(px: &Rgb<u8>) -> bool {
    let [r, g, b] = px.0;
    r.max(g).max(b) - r.min(g).min(b) >= CHROMA_THRESHOLD
}

/// Low-saturation background keyed by `(key, seed)`.
pub fn background(key: &str, seed: u64, width: u32, height: u32) -> RgbImage {
    let h = stable_hash([b"background".as_slice(), key.as_bytes(), &seed.to_le_bytes()]);
    let base = [100 + (h & 0x3f) as i32 % 50, 100 + ((h >> 8) & 0x3f) as i32 % 50, 100 + ((h >> 16) & 0x3f) as i32 % 50];
    let band_w = 6 + ((h >> 24) % 18) as u32;
    let phase = ((h >> 32) % 64) as u32;
    let tilt = ((h >> 40) % 3) as u32;
    let grad = 8 + ((h >> 48) % 24) as i32;
    RgbImage::from_fn(width, height, |x, y| {
        let band = if ((x + phase + tilt * y) / band_w) % 2 == 0 { 12 } else { -12 };
        let shade = grad * y as i32 / height.max(1) as i32 - grad / 2;
        let d = band + shade;
        let px = base.map(|c| (c + d).clamp(64, 191) as u8);
        Rgb(px)
    })
}

/// Gray block that a counting seat must ignore.
pub fn draw_statue(img: &mut RgbImage, x0: i64, y0: i64, w: u32, h: u32) {
    fill_rect(img, x0, y0, w, h, Rgb([150, 150, 150]));
}

pub fn fill_rect(img: &mut RgbImage, x0: i64, y0: i64, w: u32, h: u32, color: Rgb<u8>) {
    let (iw, ih) = (img.width() as i64, img.height() as i64);
    for y in y0.max(0)..(y0 + h as i64).min(ih) {
        for x in x0.max(0)..(x0 + w as i64).min(iw) {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Draw a glyph of edge `g` centred at `(cx, cy)`; parts outside are clipped.
pub fn draw_glyph(img: &mut RgbImage, cx: f64, cy: f64, g: u32, color: Rgb<u8>) {
    let half = g as f64 / 2.0;
    let x0 = (cx - half).round() as i64;
    let y0 = (cy - half).round() as i64;
    fill_rect(img, x0, y0, g, g, color);
}

/// Fraction of a glyph centred at `(cx, cy)` that lies inside the frame.
pub fn visibility(cx: f64, cy: f64, g: u32, width: u32, height: u32) -> f64 {
    let half = g as f64 / 2.0;
    let overlap = |c: f64, extent: u32| ((c + half).min(extent as f64) - (c - half).max(0.0)).max(0.0);
    let area = (g as f64) * (g as f64);
    overlap(cx, width) * overlap(cy, height) / area
}

/// Keyframe centre of the i-th of `n` characters: slot centre, height by pose.
pub fn slot_position(pose: Pose, slot: usize, n: usize, width: u32, height: u32, g: u32) -> (f64, f64) {
    let (lo, hi) = slot_bounds(slot, n, width);
    let centre = (lo + hi) / 2.0;
    let lift = match pose {
        Pose::Sitting => 0.12,
        Pose::Reaching => -0.08,
        _ => 0.0,
    };
    let cy = (height as f64 * (0.55 + lift)).clamp(g as f64 / 2.0, height as f64 - g as f64 / 2.0);
    (centre.round(), cy.round())
}

/// Horizontal band `[lo, hi)` of slot `i` out of `n`.
pub fn slot_bounds(i: usize, n: usize, width: u32) -> (f64, f64) {
    let n = n.max(1) as f64;
    let w = width as f64;
    ((i as f64 * w / n).floor(), ((i as f64 + 1.0) * w / n).floor())
}

/// Bounding box (inclusive) of pixels exactly equal to `color`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
    pub pixels: u32,
}

impl Blob {
    pub fn centre(&self) -> (f64, f64) {
        ((self.x0 + self.x1 + 1) as f64 / 2.0, (self.y0 + self.y1 + 1) as f64 / 2.0)
    }
}

pub fn find_color(img: &RgbImage, color: Rgb<u8>) -> Option<Blob> {
    let mut blob: Option<Blob> = None;
    for (x, y, px) in img.enumerate_pixels() {
        if *px == color {
            let b = blob.get_or_insert(Blob { x0: x, y0: y, x1: x, y1: y, pixels: 0 });
            b.x0 = b.x0.min(x);
            b.y0 = b.y0.min(y);
            b.x1 = b.x1.max(x);
            b.y1 = b.y1.max(y);
            b.pixels += 1;
        }
    }
    blob
}

/// Centre of a glyph from its blob, correcting for clipping at frame edges.
pub fn glyph_centre(blob: &Blob, g: u32, width: u32, height: u32) -> (f64, f64) {
    let axis = |lo: u32, hi: u32, extent: u32| {
        let span = hi - lo + 1;
        if span >= g || (lo > 0 && hi + 1 < extent) {
            (lo + hi + 1) as f64 / 2.0
        } else if lo == 0 {
            (hi + 1) as f64 - g as f64 / 2.0
        } else {
            lo as f64 + g as f64 / 2.0
        }
    };
    (axis(blob.x0, blob.x1, width), axis(blob.y0, blob.y1, height))
}

/// Count figures: 4-connected components of identical chromatic colour.
pub fn count_figures(img: &RgbImage) -> u32 {
    let (w, h) = img.dimensions();
    let mut seen = vec![false; (w * h) as usize];
    let mut count = 0;
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let idx = (y * w + x) as usize;
            let px = *img.get_pixel(x, y);
            if seen[idx] || !is_chromatic(&px) {
                continue;
            }
            count += 1;
            seen[idx] = true;
            stack.push((x, y));
            while let Some((cx, cy)) = stack.pop() {
                let mut visit = |nx: u32, ny: u32| {
                    let n = (ny * w + nx) as usize;
                    if !seen[n] && *img.get_pixel(nx, ny) == px {
                        seen[n] = true;
                        stack.push((nx, ny));
                    }
                };
                if cx > 0 {
                    visit(cx - 1, cy);
                }
                if cx + 1 < w {
                    visit(cx + 1, cy);
                }
                if cy > 0 {
                    visit(cx, cy - 1);
                }
                if cy + 1 < h {
                    visit(cx, cy + 1);
                }
            }
        }
    }
    count
}

/// Present character glyphs by exact palette colour.
pub fn locate(img: &RgbImage, names: impl IntoIterator<Item = String>, g: u32) -> BTreeMap<String, (f64, f64)> {
    let (w, h) = img.dimensions();
    names
        .into_iter()
        .filter_map(|n| find_color(img, palette(&n)).map(|b| (n, glyph_centre(&b, g, w, h))))
        .collect()
}

/// Repaint figure pixels with the nearest non-figure pixel in the same row,
/// preferring the companion image where it shows background.
pub fn scrub_figures(primary: &RgbImage, companion: Option<&RgbImage>) -> RgbImage {
    let (w, h) = primary.dimensions();
    let mut out = primary.clone();
    let mut hole = vec![false; (w * h) as usize];
    for (x, y, px) in primary.enumerate_pixels() {
        if is_chromatic(px) {
            match companion.map(|c| *c.get_pixel(x, y)) {
                Some(c) if !is_chromatic(&c) => out.put_pixel(x, y, c),
                _ => hole[(y * w + x) as usize] = true,
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            if !hole[(y * w + x) as usize] {
                continue;
            }
            let mut fill = None;
            for d in 1..w {
                let left = x.checked_sub(d).filter(|&lx| !hole[(y * w + lx) as usize]);
                let right = Some(x + d).filter(|&rx| rx < w && !hole[(y * w + rx) as usize]);
                if let Some(sx) = left.or(right) {
                    fill = Some(*out.get_pixel(sx, y));
                    break;
                }
            }
            out.put_pixel(x, y, fill.unwrap_or(Rgb([128, 128, 128])));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Vocabulary;

    #[test]
    fn palette_is_saturated() {
        for name in ["A", "B", "Mira", "Zed", "Captain Holloway"] {
            assert!(is_chromatic(&palette(name)));
        }
        assert_ne!(palette("A"), palette("B"));
    }

    #[test]
    fn backgrounds_are_never_chromatic() {
        for key in ["Castle", "Forest", "Harbor"] {
            for seed in 0..5 {
                let bg = background(key, seed, 64, 40);
                assert!(bg.pixels().all(|p| !is_chromatic(p)));
            }
        }
        assert_eq!(background("Castle", 7, 32, 16), background("Castle", 7, 32, 16));
        assert_ne!(background("Castle", 7, 32, 16), background("Castle", 8, 32, 16));
    }

    #[test]
    fn counts_glyphs_and_ignores_statues() {
        let mut img = background("Forest", 1, 128, 80);
        draw_glyph(&mut img, 30.0, 40.0, 16, palette("A"));
        draw_glyph(&mut img, 90.0, 40.0, 16, palette("B"));
        draw_statue(&mut img, 55, 10, 10, 30);
        assert_eq!(count_figures(&img), 2);
        draw_glyph(&mut img, 2.0, 2.0, 16, figure_color(3));
        assert_eq!(count_figures(&img), 3);
    }

    #[test]
    fn visibility_is_fractional_at_edges() {
        assert_eq!(visibility(64.0, 40.0, 16, 128, 80), 1.0);
        assert_eq!(visibility(0.0, 40.0, 16, 128, 80), 0.5);
        assert_eq!(visibility(-8.0, 40.0, 16, 128, 80), 0.0);
        assert!((visibility(-4.0, 40.0, 16, 128, 80) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn locate_recovers_centres() {
        let mut img = background("Forest", 1, 128, 80);
        draw_glyph(&mut img, 30.0, 44.0, 16, palette("A"));
        draw_glyph(&mut img, 4.0, 44.0, 16, palette("B"));
        let found = locate(&img, ["A".to_string(), "B".to_string(), "C".to_string()], 16);
        assert_eq!(found["A"], (30.0, 44.0));
        assert_eq!(found["B"], (4.0, 44.0));
        assert!(!found.contains_key("C"));
    }

    #[test]
    fn scrub_restores_background() {
        let bg = background("Forest", 1, 64, 32);
        let mut a = bg.clone();
        draw_glyph(&mut a, 20.0, 16.0, 8, palette("A"));
        let mut b = bg.clone();
        draw_glyph(&mut b, 40.0, 16.0, 8, palette("B"));
        assert_eq!(scrub_figures(&a, Some(&b)), bg);
    }

    #[test]
    fn slots_keep_glyphs_inside() {
        for n in 1..=2 {
            for i in 0..n {
                for pose in Pose::all() {
                    let (cx, cy) = slot_position(*pose, i, n, 128, 80, 16);
                    let (lo, hi) = slot_bounds(i, n, 128);
                    assert!(cx - 8.0 >= lo && cx + 8.0 <= hi, "{cx} outside [{lo},{hi})");
                    assert_eq!(visibility(cx, cy, 16, 128, 80), 1.0);
                }
            }
        }
    }
}
