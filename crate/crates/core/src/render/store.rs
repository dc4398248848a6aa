//! On-disk layout of a run: manifest, PNG artifacts and clip sidecars.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{BackgroundImage, Keyframe, Provenance, RenderError, Segment, StitchedVideo, VideoClip};
use crate::backends::{decode_png, encode_png, VisibilityMap};
use crate::config::RunConfig;
use crate::schema::{Dialogue, ShotKind, TransitionMetadata};
use crate::util::{sha256_hex, write_if_changed};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CLIP_FILE: &str = "clip.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundEntry {
    pub location: String,
    /// Run-relative PNG path.
    pub path: String,
    pub sha256: String,
    /// False for per-shot ablation backgrounds.
    pub canonical: bool,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeEntry {
    pub scene_index: u32,
    pub shot_index: u32,
    pub path: String,
    pub sha256: String,
    pub background_sha256: String,
    pub characters: Vec<String>,
    pub provenance: Provenance,
}

/// Digests of the images a clip was generated from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipInputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyframe_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_frame_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_keyframe_sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub scene_index: u32,
    pub shot_index: u32,
    pub kind: ShotKind,
    pub location: String,
    /// Run-relative clip directory.
    pub dir: String,
    pub frame_count: usize,
    pub fps: u32,
    pub frames_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<TransitionMetadata>,
    pub inputs: ClipInputs,
    pub provenance: Provenance,
}

/// Contents of `clip.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipFile {
    #[serde(flatten)]
    pub entry: ClipEntry,
    pub frames: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialogue: Option<Dialogue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visibility: Option<VisibilityMap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StitchedEntry {
    pub dir: String,
    pub frame_count: usize,
    pub fps: u32,
    pub width: u32,
    pub height: u32,
    /// Digest over every stitched PNG file, in order.
    pub sha256: String,
    pub segments: Vec<Segment>,
    pub cuts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuxEntry {
    pub command: String,
    pub output: String,
    pub exit_code: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub run_id: String,
    pub status: RunStatus,
    pub plan_sha256: String,
    pub config: RunConfig,
    pub backends: BTreeMap<String, String>,
    pub backgrounds: Vec<BackgroundEntry>,
    pub keyframes: Vec<KeyframeEntry>,
    pub clips: Vec<ClipEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stitched: Option<StitchedEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mux: Option<MuxEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunManifest {
    pub fn canonical_background(&self, location: &str) -> Option<&BackgroundEntry> {
        self.backgrounds.iter().find(|b| b.canonical && b.location == location)
    }

    pub fn keyframe(&self, scene: u32, shot: u32) -> Option<&KeyframeEntry> {
        self.keyframes.iter().find(|k| k.scene_index == scene && k.shot_index == shot)
    }

    pub fn clip(&self, scene: u32, shot: u32) -> Option<&ClipEntry> {
        self.clips.iter().find(|c| c.scene_index == scene && c.shot_index == shot)
    }
}

pub(crate) fn clip_dir_name(scene: u32, shot: u32) -> String {
    format!("clips/{scene:03}_{shot:02}")
}

pub(crate) fn frame_name(t: usize) -> String {
    format!("frame_{t:05}.png")
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), RenderError> {
    write_if_changed(path, bytes).map_err(RenderError::io(path))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RenderError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub(crate) fn read_png(path: &Path) -> Result<(RgbImage, Vec<u8>), RenderError> {
    let bytes = std::fs::read(path).map_err(RenderError::io(path))?;
    let img = decode_png(&bytes).map_err(|e| RenderError::Corrupt(format!("{}: {e}", path.display())))?;
    Ok((img, bytes))
}

pub(crate) fn save_manifest(root: &Path, manifest: &RunManifest) -> Result<(), RenderError> {
    write_json(&root.join(MANIFEST_FILE), manifest)
}

pub(crate) fn load_manifest(root: &Path) -> Result<Option<RunManifest>, RenderError> {
    let path = root.join(MANIFEST_FILE);
    match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| RenderError::Corrupt(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(RenderError::Io { path, source: e }),
    }
}

pub(crate) fn restore_background(root: &Path, entry: &BackgroundEntry) -> Option<BackgroundImage> {
    let (image, bytes) = read_png(&root.join(&entry.path)).ok()?;
    (sha256_hex(&bytes) == entry.sha256).then(|| BackgroundImage {
        location_name: entry.location.clone(),
        image,
        png: bytes,
        sha256: entry.sha256.clone(),
        provenance: entry.provenance.clone(),
    })
}

pub(crate) fn restore_keyframe(root: &Path, entry: &KeyframeEntry) -> Option<Keyframe> {
    let (image, bytes) = read_png(&root.join(&entry.path)).ok()?;
    (sha256_hex(&bytes) == entry.sha256).then(|| Keyframe {
        scene_index: entry.scene_index,
        shot_index: entry.shot_index,
        image,
        png: bytes,
        sha256: entry.sha256.clone(),
        background_sha256: entry.background_sha256.clone(),
        characters: entry.characters.clone(),
        provenance: entry.provenance.clone(),
    })
}

pub(crate) fn write_clip(
    root: &Path,
    clip: &VideoClip,
    entry: &ClipEntry,
    dialogue: Option<&Dialogue>,
) -> Result<(), RenderError> {
    let dir = root.join(&entry.dir);
    let mut names = Vec::with_capacity(clip.frames.len());
    for (i, frame) in clip.frames.iter().enumerate() {
        let name = frame_name(i + 1);
        write_bytes(&dir.join(&name), &encode_png(frame))?;
        names.push(name);
    }
    let file = ClipFile {
        entry: entry.clone(),
        frames: names,
        dialogue: dialogue.cloned(),
        visibility: clip.visibility.clone(),
    };
    write_json(&dir.join(CLIP_FILE), &file)
}

pub(crate) fn read_clip(root: &Path, entry: &ClipEntry) -> Result<VideoClip, RenderError> {
    let dir = root.join(&entry.dir);
    let path = dir.join(CLIP_FILE);
    let text = std::fs::read_to_string(&path).map_err(RenderError::io(&path))?;
    let file: ClipFile =
        serde_json::from_str(&text).map_err(|e| RenderError::Corrupt(format!("{}: {e}", path.display())))?;
    let frames = file
        .frames
        .iter()
        .map(|name| read_png(&dir.join(name)).map(|(img, _)| img))
        .collect::<Result<Vec<_>, _>>()?;
    let clip = VideoClip {
        scene_index: entry.scene_index,
        shot_index: entry.shot_index,
        kind: entry.kind,
        frames,
        fps: entry.fps,
        visibility: file.visibility,
        tau: entry.tau.clone(),
        provenance: entry.provenance.clone(),
    };
    if clip.frame_count() != entry.frame_count || clip.frames_sha256() != entry.frames_sha256 {
        return Err(RenderError::Corrupt(format!("{} does not match its manifest entry", dir.display())));
    }
    Ok(clip)
}

pub(crate) fn restore_clip(root: &Path, entry: &ClipEntry) -> Option<VideoClip> {
    read_clip(root, entry).ok()
}

/// A persisted run read back for reporting.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub root: PathBuf,
    pub manifest: RunManifest,
    pub stitched: StitchedVideo,
    /// Canonical background per location.
    pub backgrounds: BTreeMap<String, BackgroundImage>,
    /// Location of each scene.
    pub scene_locations: BTreeMap<u32, String>,
}

pub fn load_run(root: &Path) -> Result<LoadedRun, RenderError> {
    let manifest = load_manifest(root)?
        .ok_or_else(|| RenderError::Corrupt(format!("{} has no {MANIFEST_FILE}", root.display())))?;
    let clips = manifest.clips.iter().map(|e| read_clip(root, e)).collect::<Result<Vec<_>, _>>()?;
    let mut backgrounds = BTreeMap::new();
    for entry in manifest.backgrounds.iter().filter(|b| b.canonical) {
        let bg = restore_background(root, entry)
            .ok_or_else(|| RenderError::Corrupt(format!("background {} is missing or altered", entry.path)))?;
        backgrounds.insert(entry.location.clone(), bg);
    }
    let scene_locations = manifest.clips.iter().map(|c| (c.scene_index, c.location.clone())).collect();
    let cfg = &manifest.config;
    let stitched = StitchedVideo::new(cfg.width, cfg.height, cfg.fps, clips);
    Ok(LoadedRun { root: root.to_path_buf(), manifest, stitched, backgrounds, scene_locations })
}
