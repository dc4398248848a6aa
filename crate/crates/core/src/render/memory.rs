//! Cross-shot memory threaded through clip generation.

use std::collections::BTreeMap;

use image::RgbImage;

use super::directive::NormalizedDirective;
use super::VideoClip;
use crate::metrics::encoder::FrameEncoder;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CrossShotMemory {
    /// Latest appearance digest per character.
    pub digests: BTreeMap<String, Vec<f64>>,
    /// Digest of each location's canonical background.
    pub backgrounds: BTreeMap<String, Vec<f64>>,
    pub last_frame: Option<RgbImage>,
    /// Number of clips folded into this memory.
    pub ordinal: u64,
    /// Ordinal at which each character was last refreshed.
    pub last_seen: BTreeMap<String, u64>,
}

impl CrossShotMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_background(&mut self, location: &str, image: &RgbImage, encoder: &dyn FrameEncoder) {
        self.backgrounds.entry(location.to_string()).or_insert_with(|| encoder.encode(image));
    }

    /// Identity phrases for prompt conditioning of real backends.
    pub fn identity_phrases(&self, names: &[String]) -> Vec<String> {
        names
            .iter()
            .filter_map(|n| self.last_seen.get(n).map(|k| format!("{n} keeps the appearance established in shot #{k}.")))
            .collect()
    }
}

/// Characters that appear at some point in the clip.
fn appearing(clip: &VideoClip, directive: &NormalizedDirective) -> Vec<String> {
    let mut names: Vec<String> = match &directive.tau {
        Some(tau) => tau.start_chars.union(&tau.end_chars).cloned().collect(),
        None => directive.names(),
    };
    if let Some(vis) = &clip.visibility {
        names.retain(|n| vis.get(n).is_none_or(|t| t.visibility.iter().any(|&v| v > 0.0)));
    }
    names
}

/// Fold one generated clip into the memory. Digests are whole-frame
/// encodings of the clip's final frame.
pub fn update_memory(
    memory: &CrossShotMemory,
    clip: &VideoClip,
    directive: &NormalizedDirective,
    encoder: &dyn FrameEncoder,
) -> CrossShotMemory {
    let mut next = memory.clone();
    next.ordinal += 1;
    let last = clip.last_frame().clone();
    let names = appearing(clip, directive);
    if !names.is_empty() {
        let digest = encoder.encode(&last);
        for name in names {
            next.digests.insert(name.clone(), digest.clone());
            next.last_seen.insert(name, next.ordinal);
        }
    }
    next.last_frame = Some(last);
    next
}
