use std::sync::Arc;
use std::time::Duration;

use storyreel::backends::mock::world::{background, count_figures, locate, palette};
use storyreel::backends::{Backends, BackendError, MockService, RetryPolicy, Seat};
use storyreel::config::{BackgroundMode, RunConfig};
use storyreel::metrics::encoder::{FrameEncoder, MeanColorGrid};
use storyreel::render::*;
use storyreel::schema::{LocationEntry, Pose, ShotKind};
use storyreel::synth::{cast, PlanBuilder};

fn config(dir: &std::path::Path) -> RunConfig {
    RunConfig { out: dir.to_path_buf(), backoff_ms: 0, ..RunConfig::default() }
}

fn mock(cfg: &RunConfig) -> Backends {
    cfg.backends()
}

fn three_shot_plan() -> storyreel::schema::StoryPlan {
    PlanBuilder::new(&["Ada", "Bram"])
        .location("Castle", "cold stone hall with banners")
        .location("Forest", "tall pines in morning mist")
        .scene("Castle", vec![cast(&[("Ada", Pose::Standing)]), cast(&[("Ada", Pose::Walking), ("Bram", Pose::Standing)])])
        .build()
}

fn two_scene_plan() -> storyreel::schema::StoryPlan {
    PlanBuilder::new(&["Ada", "Bram", "Cleo"])
        .location("Castle", "cold stone hall with banners")
        .location("Forest", "tall pines in morning mist")
        .scene("Castle", vec![cast(&[("Ada", Pose::Standing)]), cast(&[("Bram", Pose::Sitting)])])
        .scene(
            "Forest",
            vec![
                cast(&[("Ada", Pose::Walking)]),
                cast(&[("Ada", Pose::Standing), ("Cleo", Pose::Running)]),
                cast(&[("Cleo", Pose::Standing)]),
            ],
        )
        .build()
}

#[test]
fn single_shot_scene_stitches_to_its_clip() {
    let dir = tempfile::tempdir().unwrap();
    let plan = PlanBuilder::new(&["Ada"])
        .location("Forest", "tall pines")
        .scene("Forest", vec![cast(&[("Ada", Pose::Sitting)])])
        .build();
    let cfg = config(dir.path());
    let out = run_pipeline(&plan, &mock(&cfg), &cfg).unwrap();
    assert_eq!(out.stitched.clips.len(), 1);
    assert_eq!(out.stitched.frame_count(), 40);
    assert_eq!(out.manifest.status, RunStatus::Complete);
    let stitched = out.run_dir.join("stitched");
    assert_eq!(std::fs::read_dir(&stitched).unwrap().count(), 40);
    assert_eq!(
        std::fs::read(stitched.join("frame_00001.png")).unwrap(),
        std::fs::read(out.run_dir.join("clips/001_01/frame_00001.png")).unwrap()
    );
}

#[test]
fn three_shot_schedule_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let backends = mock(&cfg);
    run_pipeline(&three_shot_plan(), &backends, &cfg).unwrap();
    let log = backends.log().snapshot();
    let seats: Vec<Seat> = log.iter().map(|r| r.seat).collect();
    assert_eq!(seats, vec![Seat::T2i, Seat::I2i, Seat::I2i, Seat::I2v, Seat::Flf2v, Seat::I2v]);
    let ids: Vec<&str> = log.iter().map(|r| r.request_id.as_str()).collect();
    assert_eq!(ids, ["t2i-Castle", "i2i-s001-k01", "i2i-s001-k03", "i2v-s001-k01", "flf2v-s001-k02", "i2v-s001-k03"]);
}

#[test]
fn two_scenes_give_eight_clips_and_a_cut() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let backends = mock(&cfg);
    let out = run_pipeline(&two_scene_plan(), &backends, &cfg).unwrap();
    assert_eq!(out.manifest.clips.len(), 8);
    assert_eq!(out.manifest.backgrounds.len(), 2);
    assert_eq!(backends.log().seats().iter().filter(|s| **s == Seat::T2i).count(), 2);
    let kinds: Vec<(u32, u32, ShotKind)> = out.manifest.clips.iter().map(|c| (c.scene_index, c.shot_index, c.kind)).collect();
    for (s, k, kind) in kinds {
        assert_eq!(kind == ShotKind::Narrative, k % 2 == 1, "scene {s} shot {k}");
    }
    let stitched = out.manifest.stitched.as_ref().unwrap();
    assert_eq!(stitched.frame_count, 8 * 40);
    assert_eq!(stitched.cuts, vec![3 * 40]);
    assert_eq!(out.stitched.seams().len(), 6);
}

#[test]
fn transitions_bridge_last_frame_and_next_keyframe() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let out = run_pipeline(&two_scene_plan(), &mock(&cfg), &cfg).unwrap();
    let clips = &out.stitched.clips;
    for (i, clip) in clips.iter().enumerate().filter(|(_, c)| c.kind == ShotKind::Transition) {
        assert_eq!(clip.frame(1).unwrap(), clips[i - 1].last_frame());
        let kf = out.manifest.keyframe(clip.scene_index, clip.shot_index + 1).unwrap();
        let (img, _) = (image::open(out.run_dir.join(&kf.path)).unwrap().to_rgb8(), ());
        assert_eq!(clip.last_frame(), &img);
        assert_eq!(clips[i + 1].frame(1).unwrap(), &img);
    }
    for scene in [1, 2] {
        let shas: std::collections::BTreeSet<&str> = out
            .manifest
            .keyframes
            .iter()
            .filter(|k| k.scene_index == scene)
            .map(|k| k.background_sha256.as_str())
            .collect();
        assert_eq!(shas.len(), 1, "scene {scene} keyframes share one background");
    }
}

#[test]
fn per_shot_mode_gives_each_keyframe_its_own_background() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { background_mode: BackgroundMode::PerShotRandom, ..config(dir.path()) };
    let out = run_pipeline(&three_shot_plan(), &mock(&cfg), &cfg).unwrap();
    let shas: Vec<&str> = out.manifest.keyframes.iter().map(|k| k.background_sha256.as_str()).collect();
    assert_eq!(shas.len(), 2);
    assert_ne!(shas[0], shas[1]);
    assert!(out.manifest.canonical_background("Castle").is_some());
}

fn params() -> ClipParams {
    ClipParams::from_config(&RunConfig::default())
}

fn loc() -> LocationEntry {
    LocationEntry { name: "Castle".into(), background_description: "cold stone hall".into() }
}

#[test]
fn background_is_keyed_by_location_and_cached() {
    let cfg = RunConfig { seed: 7, ..RunConfig::default() };
    let backends = mock(&cfg);
    let cache = BackgroundCache::new();
    let p = ClipParams::from_config(&cfg);
    let a = render_background(&loc(), backends.handle(Seat::T2i), &cache, &p).unwrap();
    let b = render_background(&loc(), backends.handle(Seat::T2i), &cache, &p).unwrap();
    assert_eq!(a.image, background("Castle", 7, 128, 80));
    assert_eq!(a.png, b.png);
    assert_eq!(backends.log().snapshot().len(), 1);
}

#[test]
fn unreachable_endpoint_reports_attempts() {
    let backends = Backends::remote(
        "http://127.0.0.1:1",
        &Default::default(),
        RetryPolicy::immediate(3),
        Duration::from_millis(500),
    );
    let err = render_background(&loc(), backends.handle(Seat::T2i), &BackgroundCache::new(), &params()).unwrap_err();
    match err {
        RenderError::Backend(e @ BackendError::Transport { .. }) => assert_eq!(e.attempts(), 3),
        other => panic!("unexpected {other:?}"),
    }
}

fn directive_for(plan: &storyreel::schema::StoryPlan, scene: u32, shot: u32) -> NormalizedDirective {
    let s = plan.shots.iter().find(|s| s.scene_index == scene && s.index == shot).unwrap();
    normalize_directive(s, &plan.spec, plan.location(&plan.scene(scene).unwrap().location_name).unwrap())
}

#[test]
fn keyframe_composition() {
    let cfg = RunConfig::default();
    let backends = mock(&cfg);
    let cache = BackgroundCache::new();
    let bg = render_background(&loc(), backends.handle(Seat::T2i), &cache, &params()).unwrap();
    let plan = three_shot_plan();

    let empty = PlanBuilder::new(&["Ada"]).location("Castle", "x").scene("Castle", vec![cast(&[])]).build();
    let d0 = directive_for(&empty, 1, 1);
    let k0 = compose_keyframe(&bg, &[], &d0, backends.handle(Seat::I2i), &params()).unwrap();
    assert_eq!(k0.image, bg.image);

    let d3 = directive_for(&plan, 1, 3);
    let chars: Vec<_> = plan.spec.characters.iter().collect();
    let k3 = compose_keyframe(&bg, &chars, &d3, backends.handle(Seat::I2i), &params()).unwrap();
    assert_eq!(count_figures(&k3.image), 2);
    let found = locate(&k3.image, ["Ada".to_string(), "Bram".to_string()], 16);
    assert_eq!(found.len(), 2);
    assert_ne!(palette("Ada"), palette("Bram"));
    assert_eq!(k3.background_sha256, bg.sha256);

    let three = PlanBuilder::new(&["Ada", "Bram", "Cleo"]).build();
    let refs: Vec<_> = three.spec.characters.iter().collect();
    let err = compose_keyframe(&bg, &refs, &d3, backends.handle(Seat::I2i), &params()).unwrap_err();
    assert!(matches!(err, RenderError::TooManyCharacters { count: 3, .. }));
}

#[test]
fn narrative_clips_follow_pose_motion() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { frames_per_shot: 16, s_max: 5.0, ..config(dir.path()) };
    let out = run_pipeline(&three_shot_plan(), &mock(&cfg), &cfg).unwrap();
    let clips = &out.stitched.clips;
    assert!(clips.iter().all(|c| c.frame_count() == 16));
    let still = &clips[0];
    assert!(still.frames.iter().all(|f| f == &still.frames[0]));
    let vis = still.visibility.as_ref().unwrap();
    assert!(vis["Ada"].visibility.iter().all(|&v| v == 1.0));
    let walking = &clips[2].visibility.as_ref().unwrap()["Ada"];
    let steps: Vec<f64> = walking.centroid.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).collect();
    assert!(steps.iter().all(|&d| d <= cfg.s_max + 1e-9));
    assert!(steps.iter().any(|&d| d > 0.0));
}

#[test]
fn entry_transition_starts_at_an_edge() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let out = run_pipeline(&three_shot_plan(), &mock(&cfg), &cfg).unwrap();
    let t = &out.stitched.clips[1];
    assert_eq!(t.tau.as_ref().unwrap().entering.iter().collect::<Vec<_>>(), ["Bram"]);
    let bram = &t.visibility.as_ref().unwrap()["Bram"];
    assert_eq!(bram.visibility[0], 0.0);
    assert_eq!(*bram.visibility.last().unwrap(), 1.0);
    let first = bram.visibility.iter().position(|&v| v > 0.0).unwrap();
    let [x, _] = bram.centroid[first];
    let m = cfg.edge_margin as f64;
    assert!(x <= m || x >= cfg.width as f64 - m, "entered at x={x}");
}

#[test]
fn memory_updates() {
    let plan = three_shot_plan();
    let d1 = directive_for(&plan, 1, 1);
    let img = background("Castle", 1, 32, 16);
    let prov = Provenance { seat: Seat::I2v, endpoint: "m".into(), request_id: "r".into(), seed: 0 };
    let clip = |frames: Vec<image::RgbImage>| VideoClip {
        scene_index: 1,
        shot_index: 1,
        kind: ShotKind::Narrative,
        frames,
        fps: 8,
        visibility: None,
        tau: None,
        provenance: prov.clone(),
    };
    let m0 = CrossShotMemory::new();
    let m1 = update_memory(&m0, &clip(vec![img.clone(), img.clone()]), &d1, &MeanColorGrid);
    assert_eq!(m1.digests.keys().collect::<Vec<_>>(), ["Ada"]);
    assert_eq!(m1.ordinal, 1);
    let other = background("Forest", 1, 32, 16);
    let m2 = update_memory(&m1, &clip(vec![img.clone(), other.clone()]), &d1, &MeanColorGrid);
    assert_eq!(m2.digests["Ada"], MeanColorGrid.encode(&other));
    assert_eq!(m2.last_frame.as_ref(), Some(&other));

    let empty = PlanBuilder::new(&["Ada"]).location("Castle", "x").scene("Castle", vec![cast(&[])]).build();
    let m3 = update_memory(&m2, &clip(vec![img.clone(), img]), &directive_for(&empty, 1, 1), &MeanColorGrid);
    assert_eq!(m3.digests, m2.digests);
    assert_eq!(m3.ordinal, 3);
}

fn stitched_bytes(run_dir: &std::path::Path) -> Vec<Vec<u8>> {
    let mut files: Vec<_> = std::fs::read_dir(run_dir.join("stitched")).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files.iter().map(|p| std::fs::read(p).unwrap()).collect()
}

#[test]
fn renders_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { seed: 7, ..config(dir.path()) };
    let first = run_pipeline(&two_scene_plan(), &mock(&cfg), &cfg).unwrap();
    let frames = stitched_bytes(&first.run_dir);
    let manifest = std::fs::read(first.run_dir.join(MANIFEST_FILE)).unwrap();
    std::fs::remove_dir_all(&first.run_dir).unwrap();
    let second = run_pipeline(&two_scene_plan(), &mock(&cfg), &cfg).unwrap();
    assert_eq!(second.reused, 0);
    assert_eq!(stitched_bytes(&second.run_dir), frames);
    assert_eq!(std::fs::read(second.run_dir.join(MANIFEST_FILE)).unwrap(), manifest);

    let parallel = RunConfig { jobs: 4, run_id: Some("par".into()), ..cfg.clone() };
    let third = run_pipeline(&two_scene_plan(), &mock(&parallel), &parallel).unwrap();
    assert_eq!(stitched_bytes(&third.run_dir), frames);
}

#[test]
fn interrupted_run_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { retries: 2, ..config(dir.path()) };
    let service = Arc::new(MockService::new(cfg.mock_config()));
    service.fail_next(Seat::Flf2v, 2);
    let backends = Backends::mock(service, cfg.retry_policy());
    let err = run_pipeline(&two_scene_plan(), &backends, &cfg).unwrap_err();
    assert!(matches!(err, RenderError::Backend(_)));
    let dir_run = run_dir(&two_scene_plan(), &cfg);
    let text = std::fs::read_to_string(dir_run.join(MANIFEST_FILE)).unwrap();
    let partial: RunManifest = serde_json::from_str(&text).unwrap();
    assert_eq!(partial.status, RunStatus::Incomplete);
    assert_eq!(partial.clips.len(), 1);
    assert!(partial.error.is_some());

    let fresh = mock(&cfg);
    let resumed = run_pipeline(&two_scene_plan(), &fresh, &cfg).unwrap();
    assert!(resumed.reused >= 4, "reused {}", resumed.reused);
    let seats = fresh.log().seats();
    assert_eq!(seats.iter().filter(|s| **s == Seat::I2v).count(), 4);
    assert_eq!(seats[0], Seat::Flf2v);

    let clean_dir = tempfile::tempdir().unwrap();
    let clean_cfg = config(clean_dir.path());
    let clean = run_pipeline(&two_scene_plan(), &mock(&clean_cfg), &clean_cfg).unwrap();
    assert_eq!(stitched_bytes(&clean.run_dir), stitched_bytes(&resumed.run_dir));
    assert_eq!(clean.manifest.stitched, resumed.manifest.stitched);
}

#[test]
fn mux_hook_runs_the_template() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { mux: Some("test -n '{frames}' && test {fps} -eq 8 && touch {output}".into()), ..config(dir.path()) };
    let out = run_pipeline(&three_shot_plan(), &mock(&cfg), &cfg).unwrap();
    assert!(out.run_dir.join("stitched.mp4").exists());
    assert_eq!(out.manifest.mux.as_ref().unwrap().exit_code, Some(0));

    let bad = RunConfig { mux: Some("exit 3".into()), run_id: Some("bad".into()), ..cfg };
    assert!(matches!(run_pipeline(&three_shot_plan(), &mock(&bad), &bad), Err(RenderError::Mux(_))));
}

#[test]
fn load_run_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let out = run_pipeline(&two_scene_plan(), &mock(&cfg), &cfg).unwrap();
    let loaded = load_run(&out.run_dir).unwrap();
    assert_eq!(loaded.stitched, out.stitched);
    assert_eq!(loaded.backgrounds.len(), 2);
    assert_eq!(loaded.backgrounds["Forest"].png, out.backgrounds["Forest"].png);
}

#[test]
fn invalid_plans_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let mut plan = three_shot_plan();
    plan.scenes[0].location_name = "Nowhere".into();
    assert!(matches!(run_pipeline(&plan, &mock(&cfg), &cfg), Err(RenderError::Plan(_))));
}
