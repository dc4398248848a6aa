use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use proptest::prelude::*;
use storyreel::config::{BackgroundMode, RunConfig};
use storyreel::metrics::encoder::{ChannelHistogram, EncoderKind, FrameEncoder, MeanColorGrid};
use storyreel::metrics::*;
use storyreel::render::{load_run, run_pipeline, StitchedVideo};
use storyreel::schema::{Pose, StoryPlan};
use storyreel::synth::{cast, PlanBuilder};

fn render(plan: &StoryPlan, cfg: &RunConfig) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { out: dir.path().to_path_buf(), ..cfg.clone() };
    let out = run_pipeline(plan, &cfg.backends(), &cfg).unwrap();
    (dir, out.run_dir)
}

fn all_movements_plan() -> StoryPlan {
    PlanBuilder::new(&["Ada", "Bram", "Cleo"])
        .location("Castle", "cold stone hall with banners")
        .location("Forest", "tall pines")
        .scene(
            "Castle",
            vec![
                cast(&[("Ada", Pose::Standing)]),
                cast(&[("Ada", Pose::Standing), ("Bram", Pose::Walking)]),
                cast(&[("Bram", Pose::Standing)]),
                cast(&[("Cleo", Pose::Sitting)]),
                cast(&[("Cleo", Pose::Running)]),
            ],
        )
        .scene("Forest", vec![cast(&[("Ada", Pose::Standing)]), cast(&[("Ada", Pose::Standing)])])
        .build()
}

/// Independent grid-mean encoder: per-pixel cell lookup instead of per-cell loops.
fn naive_grid(frame: &RgbImage) -> Vec<f64> {
    let (w, h) = frame.dimensions();
    let mut sum = vec![0.0; 192];
    let mut count = vec![0.0; 64];
    for (x, y, p) in frame.enumerate_pixels() {
        let gx = (0..8).find(|&g| x >= g * w / 8 && x < (g + 1) * w / 8).unwrap();
        let gy = (0..8).find(|&g| y >= g * h / 8 && y < (g + 1) * h / 8).unwrap();
        let cell = (gy * 8 + gx) as usize;
        count[cell] += 1.0;
        for c in 0..3 {
            sum[cell * 3 + c] += p.0[c] as f64 / 255.0;
        }
    }
    (0..192).map(|i| sum[i] / count[i / 3]).collect()
}

fn naive_drift(frames: &[RgbImage], bg: &RgbImage) -> f64 {
    let b = naive_grid(bg);
    let mut total = 0.0;
    for f in frames {
        let e = naive_grid(f);
        for i in 0..e.len() {
            total += (e[i] - b[i]).powi(2);
        }
    }
    total
}

fn random_frame(rng: &mut impl rand::Rng, w: u32, h: u32) -> RgbImage {
    let mut bytes = vec![0u8; (w * h * 3) as usize];
    rng.fill_bytes(&mut bytes);
    RgbImage::from_raw(w, h, bytes).unwrap()
}

#[test]
fn drift_matches_naive_oracle_on_random_clips() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let w = 8 + (rand::RngExt::random_range(&mut rng, 0..40u32));
        let h = 8 + (rand::RngExt::random_range(&mut rng, 0..30u32));
        let n = rand::RngExt::random_range(&mut rng, 1..6usize);
        let bg = random_frame(&mut rng, w, h);
        let frames: Vec<RgbImage> = (0..n).map(|_| random_frame(&mut rng, w, h)).collect();
        let fast = background_drift(&frames, &bg, &MeanColorGrid).unwrap();
        assert!((fast - naive_drift(&frames, &bg)).abs() <= 1e-9);
    }
}

fn frame_strategy() -> impl Strategy<Value = RgbImage> {
    proptest::collection::vec(any::<u8>(), 16 * 8 * 3).prop_map(|b| RgbImage::from_raw(16, 8, b).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn drift_is_additive(a in proptest::collection::vec(frame_strategy(), 0..4),
                         b in proptest::collection::vec(frame_strategy(), 0..4),
                         bg in frame_strategy()) {
        for enc in EncoderKind::ALL.map(EncoderKind::build) {
            let joined: Vec<RgbImage> = a.iter().chain(&b).cloned().collect();
            let whole = background_drift(&joined, &bg, enc.as_ref()).unwrap();
            let parts = background_drift(&a, &bg, enc.as_ref()).unwrap() + background_drift(&b, &bg, enc.as_ref()).unwrap();
            prop_assert!((whole - parts).abs() <= 1e-9 * (1.0 + whole));
            prop_assert!(whole >= 0.0 && whole.is_finite());
        }
    }
}

#[test]
fn continuity_holds_across_all_movement_types() {
    let cfg = RunConfig::default();
    let (_d, run_dir) = render(&all_movements_plan(), &cfg);
    let run = load_run(&run_dir).unwrap();
    let movements: Vec<_> =
        run.stitched.clips.iter().filter_map(|c| c.tau.as_ref().map(|t| t.movement)).collect();
    use storyreel::schema::MovementType::*;
    assert_eq!(movements, vec![Entry, Exit, Combination, NoChange, NoChange]);
    let r = seam_continuity(&run.stitched, cfg.effective_delta_max(), cfg.edge_margin as f64).unwrap();
    assert!(r.ok(), "{r:#?}");
    assert!(r.max_abs_dv > 0.0 && r.max_abs_dv <= cfg.effective_delta_max());
    assert_eq!(r.characters["Bram"].entries.len(), 1);
    assert_eq!(r.characters["Ada"].exits.len(), 1);
    assert_eq!(r.characters["Cleo"].entries.len(), 1);
    assert_eq!(r.seams.len(), 8 + 2);
}

#[test]
fn static_no_change_story_has_zero_visibility_change() {
    let plan = PlanBuilder::new(&["Ada"])
        .location("Forest", "tall pines")
        .scene("Forest", vec![cast(&[("Ada", Pose::Standing)]), cast(&[("Ada", Pose::Sitting)])])
        .build();
    let cfg = RunConfig::default();
    let (_d, run_dir) = render(&plan, &cfg);
    let run = load_run(&run_dir).unwrap();
    let r = seam_continuity(&run.stitched, cfg.effective_delta_max(), 16.0).unwrap();
    assert_eq!(r.max_abs_dv, 0.0);
    assert!(r.ok());
}

#[test]
fn spliced_hard_cut_is_flagged() {
    let cfg = RunConfig::default();
    let (_d, run_dir) = render(&all_movements_plan(), &cfg);
    let run = load_run(&run_dir).unwrap();
    let mut clips = run.stitched.clips.clone();
    clips.remove(1);
    let spliced = StitchedVideo::new(run.stitched.width, run.stitched.height, run.stitched.fps, clips);
    let r = seam_continuity(&spliced, cfg.effective_delta_max(), cfg.edge_margin as f64).unwrap();
    assert!(!r.continuity_ok);
    assert!(!r.edges_ok);
    assert_eq!(r.characters["Bram"].violations, vec![39]);
}

#[test]
fn missing_visibility_falls_back_to_frame_spikes() {
    let cfg = RunConfig::default();
    let (_d, run_dir) = render(&all_movements_plan(), &cfg);
    let mut run = load_run(&run_dir).unwrap();
    run.stitched.clips.iter_mut().for_each(|c| c.visibility = None);
    assert!(matches!(
        seam_continuity(&run.stitched, 0.5, 16.0),
        Err(MetricError::MissingVisibility { scene: 1, shot: 1 })
    ));
    let rep = report(&run, &MeanColorGrid).unwrap();
    assert!(rep.continuity.is_none());
    assert_eq!(rep.frame_spikes.len(), 10);
    assert!(rep.frame_spikes.iter().all(|s| s.distance == 0.0));
}

fn total_drift(plan: &StoryPlan, cfg: &RunConfig, enc: &dyn FrameEncoder) -> f64 {
    let (_d, run_dir) = render(plan, cfg);
    let rep = report(&load_run(&run_dir).unwrap(), enc).unwrap();
    rep.aggregate.total_l_bg
}

#[test]
fn injection_beats_per_shot_backgrounds() {
    let plan = all_movements_plan();
    for seed in 0..5 {
        for kind in EncoderKind::ALL {
            let enc = kind.build();
            let base = RunConfig { seed, ..RunConfig::default() };
            let injected = total_drift(&plan, &base, enc.as_ref());
            let random = total_drift(&plan, &RunConfig { background_mode: BackgroundMode::PerShotRandom, ..base }, enc.as_ref());
            assert!(injected < random, "seed {seed} {}: {injected} vs {random}", kind.as_str());
        }
    }
}

#[test]
fn report_is_finite_and_flagged_as_proxy() {
    let cfg = RunConfig::default();
    let (_d, run_dir) = render(&all_movements_plan(), &cfg);
    let rep = report(&load_run(&run_dir).unwrap(), &ChannelHistogram).unwrap();
    assert!(rep.proxy_metrics);
    assert!(rep.scenes.iter().all(|s| s.l_bg.is_finite() && s.l_bg >= 0.0));
    rep.write(&run_dir).unwrap();
    let back: ConsistencyReport = serde_json::from_str(&std::fs::read_to_string(run_dir.join(REPORT_JSON)).unwrap()).unwrap();
    assert_eq!(back, rep);
    assert!(std::fs::read_to_string(run_dir.join(REPORT_MD)).unwrap().contains("| 1 | Castle |"));
}

fn golden(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("STORYREEL_UPDATE_GOLDENS").is_some() || !path.exists() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).unwrap();
    assert_eq!(actual, expected, "golden {name} differs; rerun with STORYREEL_UPDATE_GOLDENS=1 after review");
}

#[test]
fn golden_reports() {
    let single = PlanBuilder::new(&["Ada"])
        .location("Harbor", "wet planks and rope")
        .scene("Harbor", vec![cast(&[("Ada", Pose::Walking)])])
        .build();
    let fixtures: [(&str, StoryPlan, RunConfig); 3] = [
        ("report_single.json", single, RunConfig { seed: 3, run_id: Some("single".into()), ..RunConfig::default() }),
        ("report_movements.json", all_movements_plan(), RunConfig { seed: 7, run_id: Some("movements".into()), ..RunConfig::default() }),
        (
            "report_ablation.json",
            all_movements_plan(),
            RunConfig { seed: 7, run_id: Some("ablation".into()), background_mode: BackgroundMode::PerShotRandom, ..RunConfig::default() },
        ),
    ];
    for (name, plan, cfg) in fixtures {
        let (_d, run_dir) = render(&plan, &cfg);
        let rep = report(&load_run(&run_dir).unwrap(), &MeanColorGrid).unwrap();
        golden(name, &rep.to_json());
    }
}

#[test]
fn uniform_frames_have_no_histogram_drift() {
    let bg = RgbImage::from_pixel(16, 16, Rgb([3, 4, 5]));
    let frames = vec![bg.clone(); 3];
    let by_encoder: BTreeMap<&str, f64> = EncoderKind::ALL
        .iter()
        .map(|k| (k.as_str(), background_drift(&frames, &bg, k.build().as_ref()).unwrap()))
        .collect();
    assert!(by_encoder.values().all(|&v| v == 0.0));
}
