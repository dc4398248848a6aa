//! Consistency metrics over rendered runs: background drift against the
//! canonical background and visibility continuity across seams.

pub mod encoder;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::render::{LoadedRun, RenderError, StitchedVideo, VideoClip};
use crate::util::write_if_changed;
use encoder::{squared_distance, FrameEncoder};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MD: &str = "report.md";

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("frame is {found:?}, expected {expected:?}")]
    Dimension { expected: (u32, u32), found: (u32, u32) },
    #[error("frame {found:?} is smaller than the encoder minimum {min:?}")]
    TooSmall { min: (u32, u32), found: (u32, u32) },
    #[error("scene {scene} shot {shot} has no visibility series")]
    MissingVisibility { scene: u32, shot: u32 },
    #[error("no canonical background for location {0}")]
    MissingBackground(String),
    #[error(transparent)]
    Run(#[from] RenderError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Sum over frames of the squared embedding distance to the background.
pub fn background_drift(frames: &[RgbImage], bg: &RgbImage, enc: &dyn FrameEncoder) -> Result<f64, MetricError> {
    let dims = bg.dimensions();
    let min = enc.min_size();
    if dims.0 < min.0 || dims.1 < min.1 {
        return Err(MetricError::TooSmall { min, found: dims });
    }
    if let Some(f) = frames.iter().find(|f| f.dimensions() != dims) {
        return Err(MetricError::Dimension { expected: dims, found: f.dimensions() });
    }
    let reference = enc.encode(bg);
    Ok(frames.iter().map(|f| squared_distance(&enc.encode(f), &reference)).sum())
}

pub fn clip_drift(clip: &VideoClip, bg: &RgbImage, enc: &dyn FrameEncoder) -> Result<f64, MetricError> {
    background_drift(&clip.frames, bg, enc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeEvent {
    /// Stitched frame index (0-based) where the character is first visible
    /// again, or last visible before vanishing.
    pub frame: usize,
    pub centroid: [f64; 2],
    pub at_edge: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CharacterContinuity {
    pub max_abs_dv: f64,
    /// Stitched frame pairs `(t, t+1)` whose change exceeds the bound, by `t`.
    pub violations: Vec<usize>,
    pub entries: Vec<EdgeEvent>,
    pub exits: Vec<EdgeEvent>,
    /// Inclusive stitched frame ranges with positive visibility.
    pub presence: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeamStat {
    pub scene_index: u32,
    pub left_shot: u32,
    pub right_shot: u32,
    /// Stitched index of the first frame of the right clip.
    pub frame: usize,
    pub max_abs_dv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeamReport {
    pub delta_max: f64,
    pub edge_margin: f64,
    pub characters: BTreeMap<String, CharacterContinuity>,
    pub seams: Vec<SeamStat>,
    pub max_abs_dv: f64,
    /// Every in-scene frame pair respects the bound.
    pub continuity_ok: bool,
    /// Every appearance and disappearance inside a scene happens at an edge.
    pub edges_ok: bool,
}

impl SeamReport {
    pub fn ok(&self) -> bool {
        self.continuity_ok && self.edges_ok
    }
}

fn near_edge(c: [f64; 2], w: f64, h: f64, margin: f64) -> bool {
    c[0] <= margin || c[0] >= w - margin || c[1] <= margin || c[1] >= h - margin
}

/// Per-character visibility continuity inside scenes. Hard cuts between
/// scenes are not checked.
pub fn seam_continuity(stitched: &StitchedVideo, delta_max: f64, edge_margin: f64) -> Result<SeamReport, MetricError> {
    for c in &stitched.clips {
        if c.visibility.is_none() {
            return Err(MetricError::MissingVisibility { scene: c.scene_index, shot: c.shot_index });
        }
    }
    let (w, h) = (stitched.width as f64, stitched.height as f64);
    let names: std::collections::BTreeSet<String> =
        stitched.clips.iter().flat_map(|c| c.visibility.as_ref().expect("checked").keys().cloned()).collect();
    let mut characters: BTreeMap<String, CharacterContinuity> =
        names.iter().map(|n| (n.clone(), CharacterContinuity::default())).collect();
    let mut seams = Vec::new();
    let mut offset = 0;
    for (scene, clips) in stitched.scenes() {
        let len: usize = clips.iter().map(|c| c.frame_count()).sum();
        for name in &names {
            let mut v = Vec::with_capacity(len);
            let mut cen: Vec<Option<[f64; 2]>> = Vec::with_capacity(len);
            for clip in &clips {
                match clip.visibility.as_ref().expect("checked").get(name) {
                    Some(t) => {
                        v.extend_from_slice(&t.visibility);
                        cen.extend(t.centroid.iter().map(|&c| Some(c)));
                    }
                    None => {
                        v.extend(std::iter::repeat_n(0.0, clip.frame_count()));
                        cen.extend(std::iter::repeat_n(None, clip.frame_count()));
                    }
                }
            }
            let entry = characters.get_mut(name).expect("name");
            let mut run_start = None;
            for t in 0..len {
                if v[t] > 0.0 && run_start.is_none() {
                    run_start = Some(t);
                }
                if v[t] <= 0.0 {
                    if let Some(s) = run_start.take() {
                        entry.presence.push([offset + s, offset + t - 1]);
                    }
                }
                if t + 1 == len {
                    continue;
                }
                let dv = (v[t + 1] - v[t]).abs();
                if dv > entry.max_abs_dv {
                    entry.max_abs_dv = dv;
                }
                if dv > delta_max + 1e-12 {
                    entry.violations.push(offset + t);
                }
                if v[t] <= 0.0 && v[t + 1] > 0.0 {
                    let c = cen[t + 1].unwrap_or([w / 2.0, h / 2.0]);
                    entry.entries.push(EdgeEvent { frame: offset + t + 1, centroid: c, at_edge: near_edge(c, w, h, edge_margin) });
                }
                if v[t] > 0.0 && v[t + 1] <= 0.0 {
                    let c = cen[t].unwrap_or([w / 2.0, h / 2.0]);
                    entry.exits.push(EdgeEvent { frame: offset + t, centroid: c, at_edge: near_edge(c, w, h, edge_margin) });
                }
            }
            if let Some(s) = run_start {
                entry.presence.push([offset + s, offset + len - 1]);
            }
        }
        let mut start = offset;
        for pair in clips.windows(2) {
            start += pair[0].frame_count();
            let (l, r) = (pair[0], pair[1]);
            let lv = l.visibility.as_ref().expect("checked");
            let rv = r.visibility.as_ref().expect("checked");
            let at = |m: &crate::backends::VisibilityMap, n: &str, t: usize| m.get(n).map_or(0.0, |tr| tr.visibility[t]);
            let max_abs_dv = names
                .iter()
                .map(|n| (at(rv, n, 0) - at(lv, n, l.frame_count() - 1)).abs())
                .fold(0.0, f64::max);
            seams.push(SeamStat { scene_index: scene, left_shot: l.shot_index, right_shot: r.shot_index, frame: start, max_abs_dv });
        }
        offset += len;
    }
    let max_abs_dv = characters.values().map(|c| c.max_abs_dv).fold(0.0, f64::max);
    let continuity_ok = characters.values().all(|c| c.violations.is_empty());
    let edges_ok = characters.values().all(|c| c.entries.iter().chain(&c.exits).all(|e| e.at_edge));
    Ok(SeamReport { delta_max, edge_margin, characters, seams, max_abs_dv, continuity_ok, edges_ok })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDrift {
    pub scene_index: u32,
    pub location: String,
    pub frames: usize,
    pub l_bg: f64,
    pub l_bg_per_frame: f64,
}

/// Encoder distance between the frames on either side of a seam, used
/// when no visibility series is available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSpike {
    pub scene_index: u32,
    pub frame: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub frame_count: usize,
    pub clips: usize,
    pub scenes: usize,
    pub total_l_bg: f64,
    pub mean_l_bg_per_frame: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_abs_dv: Option<f64>,
    pub delta_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuity_ok: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges_ok: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Always true: these are proxies, not the published benchmark metrics.
    pub proxy_metrics: bool,
    pub run_id: String,
    pub encoder: String,
    pub scenes: Vec<SceneDrift>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuity: Option<SeamReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frame_spikes: Vec<FrameSpike>,
    pub aggregate: Aggregate,
}

/// Background drift per scene of a stitched video, in scene order.
pub fn scene_drifts(
    stitched: &StitchedVideo,
    locations: &BTreeMap<u32, String>,
    backgrounds: &BTreeMap<String, RgbImage>,
    enc: &dyn FrameEncoder,
) -> Result<Vec<SceneDrift>, MetricError> {
    stitched
        .scenes()
        .into_iter()
        .map(|(scene, clips)| {
            let location = locations.get(&scene).cloned().unwrap_or_default();
            let bg = backgrounds.get(&location).ok_or_else(|| MetricError::MissingBackground(location.clone()))?;
            let parts: Vec<f64> = clips.par_iter().map(|c| clip_drift(c, bg, enc)).collect::<Result<_, _>>()?;
            let frames: usize = clips.iter().map(|c| c.frame_count()).sum();
            let l_bg: f64 = parts.iter().sum();
            Ok(SceneDrift { scene_index: scene, location, frames, l_bg, l_bg_per_frame: l_bg / frames.max(1) as f64 })
        })
        .collect()
}

fn frame_spikes(stitched: &StitchedVideo, enc: &dyn FrameEncoder) -> Vec<FrameSpike> {
    let mut out = Vec::new();
    let mut start = 0;
    for pair in stitched.clips.windows(2) {
        start += pair[0].frame_count();
        if pair[0].scene_index == pair[1].scene_index {
            let d = squared_distance(&enc.encode(pair[0].last_frame()), &enc.encode(&pair[1].frames[0]));
            out.push(FrameSpike { scene_index: pair[1].scene_index, frame: start, distance: d });
        }
    }
    out
}

/// Build the consistency report of a persisted run.
pub fn report(run: &LoadedRun, enc: &dyn FrameEncoder) -> Result<ConsistencyReport, MetricError> {
    let cfg = &run.manifest.config;
    let backgrounds: BTreeMap<String, RgbImage> =
        run.backgrounds.iter().map(|(k, v)| (k.clone(), v.image.clone())).collect();
    let scenes = scene_drifts(&run.stitched, &run.scene_locations, &backgrounds, enc)?;
    let delta_max = cfg.effective_delta_max();
    let (continuity, frame_spikes) = match seam_continuity(&run.stitched, delta_max, cfg.edge_margin as f64) {
        Ok(r) => (Some(r), Vec::new()),
        Err(MetricError::MissingVisibility { .. }) => (None, frame_spikes(&run.stitched, enc)),
        Err(e) => return Err(e),
    };
    let frame_count = run.stitched.frame_count();
    let total_l_bg: f64 = scenes.iter().map(|s| s.l_bg).sum();
    let aggregate = Aggregate {
        frame_count,
        clips: run.stitched.clips.len(),
        scenes: scenes.len(),
        total_l_bg,
        mean_l_bg_per_frame: total_l_bg / frame_count.max(1) as f64,
        max_abs_dv: continuity.as_ref().map(|c| c.max_abs_dv),
        delta_max,
        continuity_ok: continuity.as_ref().map(|c| c.continuity_ok),
        edges_ok: continuity.as_ref().map(|c| c.edges_ok),
    };
    Ok(ConsistencyReport {
        proxy_metrics: true,
        run_id: run.manifest.run_id.clone(),
        encoder: enc.name().to_string(),
        scenes,
        continuity,
        frame_spikes,
        aggregate,
    })
}

impl ConsistencyReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }

    pub fn to_markdown(&self) -> String {
        let a = &self.aggregate;
        let mut s = String::new();
        let _ = writeln!(s, "# Consistency report: {}\n", self.run_id);
        let _ = writeln!(s, "Proxy metrics computed with the `{}` encoder; not comparable to published benchmark scores.\n", self.encoder);
        let _ = writeln!(s, "- frames: {} in {} clips over {} scenes", a.frame_count, a.clips, a.scenes);
        let _ = writeln!(s, "- background drift: total {:.6}, per frame {:.6}", a.total_l_bg, a.mean_l_bg_per_frame);
        match (&self.continuity, a.max_abs_dv) {
            (Some(c), Some(m)) => {
                let _ = writeln!(s, "- max visibility change per frame: {m:.4} (bound {:.4})", a.delta_max);
                let _ = writeln!(s, "- continuity: {}", if c.continuity_ok { "ok" } else { "VIOLATED" });
                let _ = writeln!(s, "- edge entries/exits: {}", if c.edges_ok { "ok" } else { "VIOLATED" });
            }
            _ => {
                let _ = writeln!(s, "- no visibility series; seam frame differences listed below");
            }
        }
        let _ = writeln!(s, "\n## Scenes\n\n| scene | location | frames | L_bg | L_bg/frame |\n|---|---|---|---|---|");
        for sc in &self.scenes {
            let _ = writeln!(s, "| {} | {} | {} | {:.6} | {:.6} |", sc.scene_index, sc.location, sc.frames, sc.l_bg, sc.l_bg_per_frame);
        }
        if let Some(c) = &self.continuity {
            let _ = writeln!(s, "\n## Seams\n\n| scene | shots | frame | max abs dv |\n|---|---|---|---|");
            for seam in &c.seams {
                let _ = writeln!(s, "| {} | {}-{} | {} | {:.4} |", seam.scene_index, seam.left_shot, seam.right_shot, seam.frame, seam.max_abs_dv);
            }
            let _ = writeln!(s, "\n## Characters\n\n| character | max abs dv | entries | exits | presence |\n|---|---|---|---|---|");
            for (name, ch) in &c.characters {
                let presence: Vec<String> = ch.presence.iter().map(|[a, b]| format!("{a}-{b}")).collect();
                let _ = writeln!(
                    s,
                    "| {name} | {:.4} | {} | {} | {} |",
                    ch.max_abs_dv,
                    ch.entries.len(),
                    ch.exits.len(),
                    presence.join(", ")
                );
            }
        } else {
            let _ = writeln!(s, "\n## Seam frame differences\n\n| scene | frame | distance |\n|---|---|---|");
            for sp in &self.frame_spikes {
                let _ = writeln!(s, "| {} | {} | {:.6} |", sp.scene_index, sp.frame, sp.distance);
            }
        }
        s
    }

    /// Write `report.json` and `report.md` into a run directory.
    pub fn write(&self, run_dir: &Path) -> Result<(), MetricError> {
        for (name, text) in [(REPORT_JSON, self.to_json()), (REPORT_MD, self.to_markdown())] {
            let path = run_dir.join(name);
            write_if_changed(&path, text.as_bytes())
                .map_err(|source| MetricError::Io { path: path.display().to_string(), source })?;
        }
        Ok(())
    }
}
