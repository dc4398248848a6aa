//! Whole-plan scheduling, persistence and resumption.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use rayon::prelude::*;

use super::store::{
    clip_dir_name, frame_name, load_manifest, restore_background, restore_clip, restore_keyframe, save_manifest,
    write_bytes, write_clip,
};
use super::{
    compose_keyframe, generate_narrative_shot, generate_transition_shot, normalize_directive, render_background,
    render_shot_background, shot_tag, update_memory, BackgroundCache, BackgroundEntry, BackgroundImage, ClipEntry,
    ClipInputs, ClipParams, CrossShotMemory, Keyframe, KeyframeEntry, MuxEntry, NormalizedDirective, RenderError,
    RunManifest, RunStatus, StitchedEntry, StitchedVideo, VideoClip, MANIFEST_VERSION,
};
use crate::backends::{encode_png, Backends, Seat};
use crate::config::{BackgroundMode, RunConfig};
use crate::metrics::encoder::MeanColorGrid;
use crate::schema::{validate_plan, CharacterRef, Scene, ShotDirective, ShotKind, StoryPlan, ValidationOptions};
use crate::util::sha256_hex;

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub run_dir: PathBuf,
    pub manifest: RunManifest,
    pub stitched: StitchedVideo,
    pub backgrounds: BTreeMap<String, BackgroundImage>,
    /// Artifacts taken from a previous attempt instead of regenerated.
    pub reused: usize,
}

/// Settings that change rendered bytes; a previous attempt is resumed only
/// when these match.
fn resume_key(cfg: &RunConfig) -> RunConfig {
    RunConfig {
        jobs: 1,
        mux: None,
        retries: 0,
        backoff_ms: 0,
        timeout_ms: 0,
        dataset: crate::config::DatasetSettings::default(),
        ..cfg.clone()
    }
}

pub fn default_run_id(plan_sha: &str, seed: u64) -> String {
    format!("seed{seed}-{}", &plan_sha[..12])
}

struct Run<'a> {
    plan: &'a StoryPlan,
    backends: &'a Backends,
    config: &'a RunConfig,
    params: ClipParams,
    root: PathBuf,
    previous: Option<RunManifest>,
    manifest: RunManifest,
    cache: BackgroundCache,
    reused: usize,
}

impl<'a> Run<'a> {
    fn save(&self) -> Result<(), RenderError> {
        save_manifest(&self.root, &self.manifest)
    }

    fn canonical_background(&mut self, scene: &Scene) -> Result<BackgroundImage, RenderError> {
        let location = self
            .plan
            .location(&scene.location_name)
            .ok_or_else(|| RenderError::Plan(format!("scene {} uses unknown location {}", scene.index, scene.location_name)))?;
        if let Some(bg) = self.cache.get(&location.name) {
            return Ok(bg);
        }
        let prev = self.previous.as_ref().and_then(|m| m.canonical_background(&location.name));
        let bg = match prev.and_then(|e| restore_background(&self.root, e)) {
            Some(bg) => {
                self.reused += 1;
                self.cache.insert(bg.clone());
                bg
            }
            None => render_background(location, self.backends.handle(Seat::T2i), &self.cache, &self.params)?,
        };
        let path = format!("backgrounds/{}.png", location.name);
        write_bytes(&self.root.join(&path), &bg.png)?;
        self.manifest.backgrounds.push(BackgroundEntry {
            location: location.name.clone(),
            path,
            sha256: bg.sha256.clone(),
            canonical: true,
            provenance: bg.provenance.clone(),
        });
        Ok(bg)
    }

    fn shot_background(&mut self, scene: &Scene, shot: u32) -> Result<BackgroundImage, RenderError> {
        let location = self.plan.location(&scene.location_name).expect("checked by canonical_background");
        let path = format!("backgrounds/variants/{}_{}.png", location.name, shot_tag(scene.index, shot));
        let prev = self
            .previous
            .as_ref()
            .and_then(|m| m.backgrounds.iter().find(|b| b.path == path))
            .and_then(|e| restore_background(&self.root, e));
        let bg = match prev {
            Some(bg) => {
                self.reused += 1;
                bg
            }
            None => render_shot_background(location, scene.index, shot, self.backends.handle(Seat::T2i), &self.params)?,
        };
        write_bytes(&self.root.join(&path), &bg.png)?;
        self.manifest.backgrounds.push(BackgroundEntry {
            location: location.name.clone(),
            path,
            sha256: bg.sha256.clone(),
            canonical: false,
            provenance: bg.provenance.clone(),
        });
        Ok(bg)
    }

    fn cast_of(&self, directive: &NormalizedDirective) -> Result<Vec<&'a CharacterRef>, RenderError> {
        directive
            .names()
            .iter()
            .map(|n| {
                self.plan.spec.character(n).ok_or_else(|| {
                    RenderError::Plan(format!(
                        "scene {} shot {} names unknown character {n}",
                        directive.scene_index, directive.shot_index
                    ))
                })
            })
            .collect()
    }

    fn keyframes(
        &mut self,
        scene: &Scene,
        directives: &BTreeMap<u32, NormalizedDirective>,
        canonical: &BackgroundImage,
    ) -> Result<BTreeMap<u32, Keyframe>, RenderError> {
        let odd: Vec<u32> = directives.iter().filter(|(_, d)| d.kind == ShotKind::Narrative).map(|(k, _)| *k).collect();
        let mut bases = BTreeMap::new();
        for &k in &odd {
            let bg = match self.config.background_mode {
                BackgroundMode::Injected => canonical.clone(),
                BackgroundMode::PerShotRandom => self.shot_background(scene, k)?,
            };
            bases.insert(k, bg);
        }
        let mut out = BTreeMap::new();
        let mut todo = Vec::new();
        for &k in &odd {
            let prev = self.previous.as_ref().and_then(|m| m.keyframe(scene.index, k));
            match prev
                .filter(|e| e.background_sha256 == bases[&k].sha256)
                .and_then(|e| restore_keyframe(&self.root, e))
            {
                Some(kf) => {
                    self.reused += 1;
                    out.insert(k, kf);
                }
                None => todo.push(k),
            }
        }
        let jobs: Vec<(u32, Vec<&CharacterRef>)> =
            todo.iter().map(|&k| self.cast_of(&directives[&k]).map(|c| (k, c))).collect::<Result<_, _>>()?;
        let i2i = self.backends.handle(Seat::I2i);
        let compose = |(k, cast): &(u32, Vec<&CharacterRef>)| {
            compose_keyframe(&bases[k], cast, &directives[k], i2i, &self.params).map(|kf| (*k, kf))
        };
        let made: Vec<Result<(u32, Keyframe), RenderError>> = if self.config.jobs > 1 && jobs.len() > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.config.jobs)
                .build()
                .map_err(|e| RenderError::Plan(format!("thread pool: {e}")))?;
            pool.install(|| jobs.par_iter().map(compose).collect())
        } else {
            jobs.iter().map(compose).collect()
        };
        for r in made {
            let (k, kf) = r?;
            out.insert(k, kf);
        }
        for (k, kf) in &out {
            let path = format!("keyframes/{:03}_{k:02}.png", scene.index);
            write_bytes(&self.root.join(&path), &kf.png)?;
            self.manifest.keyframes.push(KeyframeEntry {
                scene_index: scene.index,
                shot_index: *k,
                path,
                sha256: kf.sha256.clone(),
                background_sha256: kf.background_sha256.clone(),
                characters: kf.characters.clone(),
                provenance: kf.provenance.clone(),
            });
        }
        Ok(out)
    }

    fn scene(&mut self, scene: &Scene, memory: &mut CrossShotMemory) -> Result<Vec<VideoClip>, RenderError> {
        let canonical = self.canonical_background(scene)?;
        memory.record_background(&canonical.location_name, &canonical.image, &MeanColorGrid);
        let location = self.plan.location(&scene.location_name).expect("checked above");
        let shots: Vec<&ShotDirective> = self.plan.shots_of(scene.index);
        let directives: BTreeMap<u32, NormalizedDirective> =
            shots.iter().map(|s| (s.index, normalize_directive(s, &self.plan.spec, location))).collect();
        let keyframes = self.keyframes(scene, &directives, &canonical)?;
        let mut clips = Vec::with_capacity(shots.len());
        for shot in shots {
            let k = shot.index;
            let directive = &directives[&k];
            let (inputs, tau) = match shot.kind {
                ShotKind::Narrative => (ClipInputs { keyframe_sha256: Some(keyframes[&k].sha256.clone()), ..Default::default() }, None),
                ShotKind::Transition => {
                    let first = memory.last_frame.as_ref().filter(|_| k > 1).ok_or_else(|| {
                        RenderError::Plan(format!("scene {} shot {k}: a transition needs a preceding clip", scene.index))
                    })?;
                    let next = keyframes.get(&(k + 1)).ok_or_else(|| {
                        RenderError::Plan(format!("scene {} shot {k}: a transition needs a following narrative shot", scene.index))
                    })?;
                    let tau = shot.transition.clone().ok_or_else(|| {
                        RenderError::Plan(format!("scene {} shot {k}: transition metadata missing", scene.index))
                    })?;
                    (
                        ClipInputs {
                            first_frame_sha256: Some(sha256_hex(&encode_png(first))),
                            last_keyframe_sha256: Some(next.sha256.clone()),
                            ..Default::default()
                        },
                        Some(tau),
                    )
                }
            };
            let prev = self
                .previous
                .as_ref()
                .and_then(|m| m.clip(scene.index, k))
                .filter(|e| e.inputs == inputs && e.tau == tau && e.kind == shot.kind);
            let clip = match prev.and_then(|e| restore_clip(&self.root, e)) {
                Some(c) => {
                    self.reused += 1;
                    c
                }
                None => match (&tau, shot.kind) {
                    (None, _) => generate_narrative_shot(
                        &keyframes[&k],
                        directive,
                        memory,
                        self.backends.handle(Seat::I2v),
                        &self.params,
                    )?,
                    (Some(tau), _) => generate_transition_shot(
                        memory.last_frame.as_ref().expect("checked above"),
                        &keyframes[&(k + 1)],
                        tau,
                        directive,
                        memory,
                        self.backends.handle(Seat::Flf2v),
                        &self.params,
                    )?,
                },
            };
            let entry = ClipEntry {
                scene_index: scene.index,
                shot_index: k,
                kind: shot.kind,
                location: scene.location_name.clone(),
                dir: clip_dir_name(scene.index, k),
                frame_count: clip.frame_count(),
                fps: clip.fps,
                frames_sha256: clip.frames_sha256(),
                tau,
                inputs,
                provenance: clip.provenance.clone(),
            };
            write_clip(&self.root, &clip, &entry, shot.dialogue.as_ref())?;
            self.manifest.clips.push(entry);
            self.save()?;
            *memory = update_memory(memory, &clip, directive, &MeanColorGrid);
            clips.push(clip);
        }
        Ok(clips)
    }

    fn stitch(&mut self, stitched: &StitchedVideo) -> Result<(), RenderError> {
        let dir = "stitched";
        let mut all = Vec::new();
        for (i, frame) in stitched.frames().enumerate() {
            let png = encode_png(frame);
            write_bytes(&self.root.join(dir).join(frame_name(i + 1)), &png)?;
            all.extend_from_slice(&png);
        }
        self.manifest.stitched = Some(StitchedEntry {
            dir: dir.into(),
            frame_count: stitched.frame_count(),
            fps: stitched.fps,
            width: stitched.width,
            height: stitched.height,
            sha256: sha256_hex(&all),
            segments: stitched.segments(),
            cuts: stitched.cuts(),
        });
        Ok(())
    }

    fn mux(&mut self, template: &str) -> Result<(), RenderError> {
        let frames = self.root.join("stitched").join("frame_%05d.png");
        let output = "stitched.mp4";
        let command = template
            .replace("{frames}", &frames.display().to_string())
            .replace("{fps}", &self.params.fps.to_string())
            .replace("{output}", &self.root.join(output).display().to_string());
        let status = Command::new("sh").arg("-c").arg(&command).status();
        let exit_code = status.as_ref().ok().and_then(|s| s.code());
        self.manifest.mux = Some(MuxEntry { command: template.to_string(), output: output.into(), exit_code });
        match status {
            Ok(s) if s.success() => Ok(()),
            Ok(s) => Err(RenderError::Mux(format!("`{command}` exited with {s}"))),
            Err(e) => Err(RenderError::Mux(format!("`{command}`: {e}"))),
        }
    }
}

/// Render a validated plan end to end, writing everything under
/// `<config.out>/<run id>/`. An interrupted run resumes from its manifest.
pub fn run_pipeline(plan: &StoryPlan, backends: &Backends, config: &RunConfig) -> Result<RenderOutput, RenderError> {
    let report = validate_plan(plan, &ValidationOptions { strict: config.strict });
    if !report.is_valid() {
        return Err(RenderError::Plan(report.render()));
    }
    let plan_sha = sha256_hex(plan.to_json().as_bytes());
    let run_id = config.run_id.clone().unwrap_or_else(|| default_run_id(&plan_sha, config.seed));
    let root = config.out.join(&run_id);
    std::fs::create_dir_all(&root).map_err(RenderError::io(&root))?;
    let previous = load_manifest(&root)
        .ok()
        .flatten()
        .filter(|m| m.plan_sha256 == plan_sha && resume_key(&m.config) == resume_key(config));
    let manifest = RunManifest {
        manifest_version: MANIFEST_VERSION,
        run_id,
        status: RunStatus::Incomplete,
        plan_sha256: plan_sha,
        config: config.clone(),
        backends: backends.describe(),
        backgrounds: Vec::new(),
        keyframes: Vec::new(),
        clips: Vec::new(),
        stitched: None,
        mux: None,
        error: None,
    };
    let mut run = Run {
        plan,
        backends,
        config,
        params: ClipParams::from_config(config),
        root,
        previous,
        manifest,
        cache: BackgroundCache::new(),
        reused: 0,
    };
    let mut memory = CrossShotMemory::new();
    let mut clips = Vec::new();
    for scene in &plan.scenes {
        match run.scene(scene, &mut memory) {
            Ok(c) => clips.extend(c),
            Err(e) => {
                carry_over_unreached(&mut run);
                run.manifest.error = Some(e.to_string());
                run.save()?;
                return Err(e);
            }
        }
    }
    let stitched = StitchedVideo::new(config.width, config.height, config.fps, clips);
    run.stitch(&stitched)?;
    if let Some(template) = &config.mux {
        if let Err(e) = run.mux(template) {
            run.manifest.error = Some(e.to_string());
            run.save()?;
            return Err(e);
        }
    }
    run.manifest.status = RunStatus::Complete;
    run.save()?;
    let backgrounds = plan
        .scenes
        .iter()
        .filter_map(|s| run.cache.get(&s.location_name).map(|b| (s.location_name.clone(), b)))
        .collect();
    Ok(RenderOutput { run_dir: run.root, manifest: run.manifest, stitched, backgrounds, reused: run.reused })
}

/// Keep entries of a previous attempt that this attempt did not reach, so a
/// second interruption loses nothing.
fn carry_over_unreached(run: &mut Run<'_>) {
    let Some(prev) = run.previous.take() else { return };
    let m = &mut run.manifest;
    for b in prev.backgrounds {
        if !m.backgrounds.iter().any(|x| x.path == b.path) {
            m.backgrounds.push(b);
        }
    }
    for k in prev.keyframes {
        if m.keyframe(k.scene_index, k.shot_index).is_none() {
            m.keyframes.push(k);
        }
    }
    for c in prev.clips {
        if m.clip(c.scene_index, c.shot_index).is_none() {
            m.clips.push(c);
        }
    }
}

/// Run directory for a plan under a config, whether or not it exists yet.
pub fn run_dir(plan: &StoryPlan, config: &RunConfig) -> PathBuf {
    let plan_sha = sha256_hex(plan.to_json().as_bytes());
    let id = config.run_id.clone().unwrap_or_else(|| default_run_id(&plan_sha, config.seed));
    Path::new(&config.out).join(id)
}
