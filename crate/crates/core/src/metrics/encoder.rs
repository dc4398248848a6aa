//! Deterministic frame encoders used as perceptual proxies.

use image::RgbImage;
use serde::{Deserialize, Serialize};

/// Maps a frame to a fixed-length embedding.
pub trait FrameEncoder: Send + Sync {
    fn name(&self) -> &'static str;
    fn dim(&self) -> usize;
    /// Smallest frame the encoder accepts.
    fn min_size(&self) -> (u32, u32) {
        (1, 1)
    }
    fn encode(&self, frame: &RgbImage) -> Vec<f64>;
}

/// Mean colour over an 8×8 grid of cells, channels scaled to [0, 1].
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanColorGrid;

pub const GRID: u32 = 8;

impl FrameEncoder for MeanColorGrid {
    fn name(&self) -> &'static str {
        "mean_color_grid"
    }

    fn dim(&self) -> usize {
        (GRID * GRID * 3) as usize
    }

    fn min_size(&self) -> (u32, u32) {
        (GRID, GRID)
    }

    fn encode(&self, frame: &RgbImage) -> Vec<f64> {
        let (w, h) = frame.dimensions();
        let mut out = vec![0.0; self.dim()];
        for gy in 0..GRID {
            let (y0, y1) = (gy * h / GRID, (gy + 1) * h / GRID);
            for gx in 0..GRID {
                let (x0, x1) = (gx * w / GRID, (gx + 1) * w / GRID);
                let mut sum = [0u64; 3];
                for y in y0..y1 {
                    for x in x0..x1 {
                        let p = frame.get_pixel(x, y).0;
                        for c in 0..3 {
                            sum[c] += p[c] as u64;
                        }
                    }
                }
                let n = ((x1 - x0) * (y1 - y0)).max(1) as f64;
                let cell = ((gy * GRID + gx) * 3) as usize;
                for c in 0..3 {
                    out[cell + c] = sum[c] as f64 / n / 255.0;
                }
            }
        }
        out
    }
}

/// Per-channel 16-bin histogram, each channel normalised to sum 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct ChannelHistogram;

pub const BINS: usize = 16;

impl FrameEncoder for ChannelHistogram {
    fn name(&self) -> &'static str {
        "channel_histogram"
    }

    fn dim(&self) -> usize {
        3 * BINS
    }

    fn encode(&self, frame: &RgbImage) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for p in frame.pixels() {
            for c in 0..3 {
                out[c * BINS + p.0[c] as usize * BINS / 256] += 1.0;
            }
        }
        let n = (frame.width() as f64 * frame.height() as f64).max(1.0);
        out.iter_mut().for_each(|v| *v /= n);
        out
    }
}

/// Built-in encoder names, for config and CLI selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    MeanColorGrid,
    ChannelHistogram,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 2] = [EncoderKind::MeanColorGrid, EncoderKind::ChannelHistogram];

    pub fn build(self) -> Box<dyn FrameEncoder> {
        match self {
            EncoderKind::MeanColorGrid => Box::new(MeanColorGrid),
            EncoderKind::ChannelHistogram => Box::new(ChannelHistogram),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::MeanColorGrid => "mean_color_grid",
            EncoderKind::ChannelHistogram => "channel_histogram",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
