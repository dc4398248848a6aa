//! Scene rendering: canonical backgrounds, keyframe composition, alternating
//! I2V/FLF2V clip generation with cross-shot memory, and stitching.

pub mod directive;
pub mod memory;
mod pipeline;
mod store;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Mutex;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    encode_png, BackendError, BackendHandle, BackendRequest, CastMember, Flf2vPayload, I2iPayload, I2vPayload,
    RequestPayload, ResponsePayload, Seat, T2iPayload, TauSummary, VisibilityMap, WireImage,
};
use crate::schema::{CharacterRef, LocationEntry, Pose, ShotKind, TransitionMetadata, MAX_CHARS_PER_SHOT};
use crate::util::sha256_hex;

pub use directive::{background_prompt, normalize_directive, CastEntry, NormalizedDirective};
pub use memory::{update_memory, CrossShotMemory};
pub use pipeline::{default_run_id, run_dir, run_pipeline, RenderOutput};
pub use store::{
    load_run, BackgroundEntry, ClipEntry, ClipFile, ClipInputs, KeyframeEntry, LoadedRun, MuxEntry, RunManifest,
    RunStatus, StitchedEntry, MANIFEST_FILE, MANIFEST_VERSION,
};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("scene {scene} shot {shot}: {count} characters in one keyframe, at most {MAX_CHARS_PER_SHOT} allowed")]
    TooManyCharacters { scene: u32, shot: u32, count: usize },
    #[error("{what}: expected {expected:?}, got {found:?}")]
    Dimension { what: String, expected: (u32, u32), found: (u32, u32) },
    #[error("{what}: expected {expected} frames, got {found}")]
    FrameCount { what: String, expected: u32, found: usize },
    #[error("{seat} answered {request_id} with an unusable payload: {message}")]
    BadResponse { seat: Seat, request_id: String, message: String },
    #[error("cannot read reference image {path}: {message}")]
    Reference { path: PathBuf, message: String },
    #[error("plan cannot be rendered: {0}")]
    Plan(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt run directory: {0}")]
    Corrupt(String),
    #[error("muxer failed: {0}")]
    Mux(String),
}

impl RenderError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> RenderError {
        let path = path.into();
        move |source| RenderError::Io { path, source }
    }
}

/// Frame geometry and seed shared by every request of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipParams {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub frame_count: u32,
    pub fps: u32,
}

impl ClipParams {
    pub fn from_config(cfg: &crate::config::RunConfig) -> Self {
        ClipParams { seed: cfg.seed, width: cfg.width, height: cfg.height, frame_count: cfg.frames_per_shot, fps: cfg.fps }
    }

    fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seat: Seat,
    pub endpoint: String,
    pub request_id: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundImage {
    pub location_name: String,
    pub image: RgbImage,
    pub png: Vec<u8>,
    pub sha256: String,
    pub provenance: Provenance,
}

impl BackgroundImage {
    pub fn new(location_name: &str, image: RgbImage, provenance: Provenance) -> Self {
        let png = encode_png(&image);
        let sha256 = sha256_hex(&png);
        BackgroundImage { location_name: location_name.to_string(), image, png, sha256, provenance }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub scene_index: u32,
    pub shot_index: u32,
    pub image: RgbImage,
    pub png: Vec<u8>,
    pub sha256: String,
    pub background_sha256: String,
    pub characters: Vec<String>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub scene_index: u32,
    pub shot_index: u32,
    pub kind: ShotKind,
    pub frames: Vec<RgbImage>,
    pub fps: u32,
    pub visibility: Option<VisibilityMap>,
    pub tau: Option<TransitionMetadata>,
    pub provenance: Provenance,
}

impl VideoClip {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Frame `t`, 1-based.
    pub fn frame(&self, t: usize) -> Option<&RgbImage> {
        t.checked_sub(1).and_then(|i| self.frames.get(i))
    }

    pub fn last_frame(&self) -> &RgbImage {
        self.frames.last().expect("clips hold at least two frames")
    }

    /// Digest of the raw frame pixels, used for resume checks.
    pub fn frames_sha256(&self) -> String {
        let mut bytes = Vec::with_capacity(self.frames.iter().map(|f| f.as_raw().len()).sum());
        for f in &self.frames {
            bytes.extend_from_slice(f.as_raw());
        }
        sha256_hex(&bytes)
    }
}

/// A range of stitched frames produced by one clip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub scene_index: u32,
    pub shot_index: u32,
    pub kind: ShotKind,
    /// 0-based index of the first stitched frame of this clip.
    pub start: usize,
    pub len: usize,
}

/// All clips of a run in order; scenes are joined by hard cuts.
#[derive(Debug, Clone, PartialEq)]
pub struct StitchedVideo {
    pub width: u32,
    pub height: u32,
    pub fps: u32,
    pub clips: Vec<VideoClip>,
}

impl StitchedVideo {
    pub fn new(width: u32, height: u32, fps: u32, clips: Vec<VideoClip>) -> Self {
        StitchedVideo { width, height, fps, clips }
    }

    pub fn frame_count(&self) -> usize {
        self.clips.iter().map(VideoClip::frame_count).sum()
    }

    pub fn frames(&self) -> impl Iterator<Item = &RgbImage> {
        self.clips.iter().flat_map(|c| c.frames.iter())
    }

    pub fn segments(&self) -> Vec<Segment> {
        let mut start = 0;
        self.clips
            .iter()
            .map(|c| {
                let s = Segment {
                    scene_index: c.scene_index,
                    shot_index: c.shot_index,
                    kind: c.kind,
                    start,
                    len: c.frame_count(),
                };
                start += c.frame_count();
                s
            })
            .collect()
    }

    /// Stitched frame indices where a new scene starts.
    pub fn cuts(&self) -> Vec<usize> {
        let segs = self.segments();
        segs.windows(2).filter(|w| w[0].scene_index != w[1].scene_index).map(|w| w[1].start).collect()
    }

    /// Stitched frame indices where a clip starts inside the same scene.
    pub fn seams(&self) -> Vec<usize> {
        let segs = self.segments();
        segs.windows(2).filter(|w| w[0].scene_index == w[1].scene_index).map(|w| w[1].start).collect()
    }

    /// Clips grouped by scene, in order.
    pub fn scenes(&self) -> Vec<(u32, Vec<&VideoClip>)> {
        let mut out: Vec<(u32, Vec<&VideoClip>)> = Vec::new();
        for clip in &self.clips {
            match out.last_mut() {
                Some((s, v)) if *s == clip.scene_index => v.push(clip),
                _ => out.push((clip.scene_index, vec![clip])),
            }
        }
        out
    }
}

/// Canonical backgrounds of a run, one per location.
#[derive(Debug, Default)]
pub struct BackgroundCache {
    entries: Mutex<BTreeMap<String, BackgroundImage>>,
}

impl BackgroundCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, location: &str) -> Option<BackgroundImage> {
        self.entries.lock().expect("background cache").get(location).cloned()
    }

    /// Seed the cache with an image restored from disk.
    pub fn insert(&self, bg: BackgroundImage) {
        self.entries.lock().expect("background cache").entry(bg.location_name.clone()).or_insert(bg);
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("background cache").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn provenance(handle: &BackendHandle, request: &BackendRequest) -> Provenance {
    Provenance {
        seat: handle.seat,
        endpoint: handle.endpoint.clone(),
        request_id: request.request_id.clone(),
        seed: request.seed,
    }
}

fn bad(seat: Seat, request: &BackendRequest, message: impl Into<String>) -> RenderError {
    RenderError::BadResponse { seat, request_id: request.request_id.clone(), message: message.into() }
}

fn call_image(handle: &BackendHandle, request: &BackendRequest, dims: (u32, u32), what: &str) -> Result<RgbImage, RenderError> {
    let response = handle.call(request)?;
    let ResponsePayload::Image { image } = response.payload else {
        return Err(bad(handle.seat, request, "expected an image"));
    };
    let img = image.decode().map_err(|e| bad(handle.seat, request, e.to_string()))?;
    if img.dimensions() != dims {
        return Err(RenderError::Dimension { what: what.to_string(), expected: dims, found: img.dimensions() });
    }
    Ok(img)
}

fn call_frames(
    handle: &BackendHandle,
    request: &BackendRequest,
    params: &ClipParams,
    what: &str,
) -> Result<(Vec<RgbImage>, u32, Option<VisibilityMap>), RenderError> {
    let response = handle.call(request)?;
    let ResponsePayload::Frames { frames, fps, visibility } = response.payload else {
        return Err(bad(handle.seat, request, "expected frames"));
    };
    let frames = frames
        .iter()
        .map(|f| f.decode().map_err(|e| bad(handle.seat, request, e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    if frames.len() != params.frame_count as usize || frames.len() < 2 {
        return Err(RenderError::FrameCount { what: what.to_string(), expected: params.frame_count, found: frames.len() });
    }
    if let Some(f) = frames.iter().find(|f| f.dimensions() != params.dims()) {
        return Err(RenderError::Dimension { what: what.to_string(), expected: params.dims(), found: f.dimensions() });
    }
    Ok((frames, fps, visibility))
}

pub(crate) fn background_request_id(location: &str) -> String {
    format!("t2i-{location}")
}

pub(crate) fn shot_tag(scene: u32, shot: u32) -> String {
    format!("s{scene:03}-k{shot:02}")
}

/// Render a location's canonical background, or return the cached one.
pub fn render_background(
    location: &LocationEntry,
    t2i: &BackendHandle,
    cache: &BackgroundCache,
    params: &ClipParams,
) -> Result<BackgroundImage, RenderError> {
    if let Some(bg) = cache.get(&location.name) {
        return Ok(bg);
    }
    let request = BackendRequest::new(
        background_request_id(&location.name),
        params.seed,
        RequestPayload::T2i(T2iPayload { prompt: background_prompt(location), width: params.width, height: params.height }),
    );
    let img = call_image(t2i, &request, params.dims(), "background")?;
    let bg = BackgroundImage::new(&location.name, img, provenance(t2i, &request));
    cache.insert(bg);
    Ok(cache.get(&location.name).expect("just inserted"))
}

/// A fresh, uncached background for one keyframe (ablation mode).
pub fn render_shot_background(
    location: &LocationEntry,
    scene: u32,
    shot: u32,
    t2i: &BackendHandle,
    params: &ClipParams,
) -> Result<BackgroundImage, RenderError> {
    let tag = shot_tag(scene, shot);
    let prompt = format!("{}#{tag}: {}", location.name, location.background_description);
    let request = BackendRequest::new(
        format!("t2i-{}-{tag}", location.name),
        params.seed,
        RequestPayload::T2i(T2iPayload { prompt, width: params.width, height: params.height }),
    );
    let img = call_image(t2i, &request, params.dims(), "background")?;
    Ok(BackgroundImage::new(&location.name, img, provenance(t2i, &request)))
}

fn reference_images(chars: &[&CharacterRef]) -> Result<Vec<WireImage>, RenderError> {
    chars
        .iter()
        .filter_map(|c| c.reference_image.as_ref())
        .map(|path| {
            let path = PathBuf::from(path);
            let bytes = std::fs::read(&path).map_err(|e| RenderError::Reference { path: path.clone(), message: e.to_string() })?;
            let img = image::load_from_memory(&bytes)
                .map_err(|e| RenderError::Reference { path: path.clone(), message: e.to_string() })?;
            Ok(WireImage::from_image(&img.to_rgb8()))
        })
        .collect()
}

/// Fuse the background with the shot's characters.
pub fn compose_keyframe(
    bg: &BackgroundImage,
    chars: &[&CharacterRef],
    directive: &NormalizedDirective,
    i2i: &BackendHandle,
    params: &ClipParams,
) -> Result<Keyframe, RenderError> {
    let (scene, shot) = (directive.scene_index, directive.shot_index);
    if chars.len() > MAX_CHARS_PER_SHOT {
        return Err(RenderError::TooManyCharacters { scene, shot, count: chars.len() });
    }
    let cast = chars
        .iter()
        .map(|c| {
            let pose = directive.cast.iter().find(|e| e.name == c.name).map_or(Pose::Standing, |e| e.pose);
            CastMember { name: c.name.clone(), pose }
        })
        .collect();
    let request = BackendRequest::new(
        format!("i2i-{}", shot_tag(scene, shot)),
        params.seed,
        RequestPayload::I2i(I2iPayload {
            base_image: WireImage::from_image(&bg.image),
            reference_images: reference_images(chars)?,
            prompt: directive.keyframe_text.clone(),
            cast,
        }),
    );
    let image = call_image(i2i, &request, params.dims(), "keyframe")?;
    let png = encode_png(&image);
    Ok(Keyframe {
        scene_index: scene,
        shot_index: shot,
        sha256: sha256_hex(&png),
        png,
        image,
        background_sha256: bg.sha256.clone(),
        characters: chars.iter().map(|c| c.name.clone()).collect(),
        provenance: provenance(i2i, &request),
    })
}

fn with_memory(text: &str, memory: &CrossShotMemory, names: &[String]) -> String {
    let phrases = memory.identity_phrases(names);
    if phrases.is_empty() {
        text.to_string()
    } else {
        format!("{text}\n{}", phrases.join(" "))
    }
}

/// Animate a narrative keyframe.
pub fn generate_narrative_shot(
    keyframe: &Keyframe,
    directive: &NormalizedDirective,
    memory: &CrossShotMemory,
    i2v: &BackendHandle,
    params: &ClipParams,
) -> Result<VideoClip, RenderError> {
    if directive.kind != ShotKind::Narrative {
        return Err(RenderError::Plan(format!(
            "scene {} shot {} is not a narrative shot",
            directive.scene_index, directive.shot_index
        )));
    }
    let request = BackendRequest::new(
        format!("i2v-{}", shot_tag(directive.scene_index, directive.shot_index)),
        params.seed,
        RequestPayload::I2v(I2vPayload {
            keyframe: WireImage::from_image(&keyframe.image),
            prompt: with_memory(&directive.video_text, memory, &directive.names()),
            frame_count: params.frame_count,
            fps: params.fps,
            cast: directive.cast_members(),
        }),
    );
    let (frames, fps, visibility) = call_frames(i2v, &request, params, "narrative clip")?;
    Ok(VideoClip {
        scene_index: directive.scene_index,
        shot_index: directive.shot_index,
        kind: ShotKind::Narrative,
        frames,
        fps,
        visibility,
        tau: None,
        provenance: provenance(i2v, &request),
    })
}

/// Bridge the previous clip's final frame and the next keyframe.
pub fn generate_transition_shot(
    first: &RgbImage,
    last_keyframe: &Keyframe,
    tau: &TransitionMetadata,
    directive: &NormalizedDirective,
    memory: &CrossShotMemory,
    flf2v: &BackendHandle,
    params: &ClipParams,
) -> Result<VideoClip, RenderError> {
    if first.dimensions() != params.dims() {
        return Err(RenderError::Dimension { what: "first frame".into(), expected: params.dims(), found: first.dimensions() });
    }
    let names: Vec<String> = tau.start_chars.union(&tau.end_chars).cloned().collect();
    let request = BackendRequest::new(
        format!("flf2v-{}", shot_tag(directive.scene_index, directive.shot_index)),
        params.seed,
        RequestPayload::Flf2v(Flf2vPayload {
            first_frame: WireImage::from_image(first),
            last_frame: WireImage::from_image(&last_keyframe.image),
            prompt: with_memory(&directive.video_text, memory, &names),
            tau: TauSummary::from(tau),
            frame_count: params.frame_count,
            fps: params.fps,
        }),
    );
    let (frames, fps, visibility) = call_frames(flf2v, &request, params, "transition clip")?;
    Ok(VideoClip {
        scene_index: directive.scene_index,
        shot_index: directive.shot_index,
        kind: ShotKind::Transition,
        frames,
        fps,
        visibility,
        tau: Some(tau.clone()),
        provenance: provenance(flf2v, &request),
    })
}
