use std::sync::Arc;

use storyreel::agents::{AgentError, Neighbors, Planner, PlannerOptions, TraceSink};
use storyreel::backends::mock::llm::LlmFault;
use storyreel::backends::{Backends, MockConfig, MockService, RetryPolicy};
use storyreel::schema::{
    parse_spec, validate_plan, ErrorCode, Interaction, LocationEntry, Pose, Scene, ShotKind, StorySpec,
    ValidationOptions, MovementType,
};

fn spec() -> StorySpec {
    parse_spec(include_str!("fixtures/story_spec.json")).unwrap()
}

fn setup() -> (Arc<MockService>, Backends) {
    let svc = Arc::new(MockService::new(MockConfig::default()));
    let backends = Backends::mock(svc.clone(), RetryPolicy::immediate(3));
    (svc, backends)
}

fn planner(backends: &Backends, seed: u64) -> Planner {
    Planner::new(backends, TraceSink::memory(), PlannerOptions { seed, strict: true, ..Default::default() })
}

#[test]
fn full_pipeline_yields_valid_plan() {
    let (_, backends) = setup();
    let plan = planner(&backends, 1).plan_story(&spec()).unwrap();
    assert_eq!(plan.chapters.len(), 12);
    assert_eq!(plan.locations.len(), 10);
    let report = validate_plan(&plan, &ValidationOptions { strict: true });
    assert!(report.is_valid(), "{}", report.render());
    assert!(report.warnings.is_empty());
    let names = spec().names();
    for ch in &plan.chapters {
        assert!(ch.characters.is_subset(&names));
    }
    for shot in &plan.shots {
        let kind = if shot.index % 2 == 1 { ShotKind::Narrative } else { ShotKind::Transition };
        assert_eq!(shot.kind, kind);
    }
}

#[test]
fn pipeline_is_byte_reproducible() {
    let (_, a) = setup();
    let (_, b) = setup();
    let pa = planner(&a, 5).plan_story(&spec()).unwrap();
    let pb = planner(&b, 5).plan_story(&spec()).unwrap();
    assert_eq!(pa.to_json(), pb.to_json());
    let (_, c) = setup();
    let par = Planner::new(&c, TraceSink::memory(), PlannerOptions { seed: 5, strict: true, jobs: 4, ..Default::default() })
        .plan_story(&spec())
        .unwrap();
    assert_eq!(pa.to_json(), par.to_json());
}

#[test]
fn single_character_story() {
    let mut s = spec();
    s.characters.truncate(1);
    let (_, backends) = setup();
    let (chapters, _) = planner(&backends, 2).plan_chapters(&s).unwrap();
    assert_eq!(chapters.len(), 12);
    for ch in chapters {
        assert_eq!(ch.characters, s.names());
    }
}

#[test]
fn unknown_character_exhausts_retries() {
    let (svc, backends) = setup();
    svc.arm_fault(LlmFault::UnknownCharacter, 3);
    let p = planner(&backends, 1);
    let err = p.plan_chapters(&spec()).unwrap_err();
    match &err {
        AgentError::Exhausted { attempts, report, .. } => {
            assert_eq!(*attempts, 3);
            assert!(report.codes().contains(&ErrorCode::CharNotAllowed));
        }
        other => panic!("{other}"),
    }
    let traces = p.traces();
    assert_eq!(traces.len(), 3);
    assert!(traces.iter().all(|t| t.validation_codes.contains(&"E_CHAR_NOT_ALLOWED".to_string())));
    assert!(traces[1].request.contains("E_CHAR_NOT_ALLOWED"));
}

#[test]
fn one_bad_reply_is_retried() {
    for fault in [LlmFault::UnknownCharacter, LlmFault::MalformedJson] {
        let (svc, backends) = setup();
        svc.arm_fault(fault, 1);
        let p = planner(&backends, 1);
        assert!(p.plan_chapters(&spec()).is_ok());
        assert_eq!(p.traces().len(), 2);
    }
}

#[test]
fn location_faults_are_retried() {
    for (fault, code) in [
        (LlmFault::DuplicateLocation, ErrorCode::DuplicateName),
        (LlmFault::CharacterInBackground, ErrorCode::BgCharacter),
    ] {
        let (svc, backends) = setup();
        let p = planner(&backends, 1);
        let (chapters, _) = p.plan_chapters(&spec()).unwrap();
        svc.arm_fault(fault, 1);
        let locations = p.build_location_library(&spec(), &chapters).unwrap();
        assert_eq!(locations.len(), 10);
        assert!(locations.iter().any(|l| l.name == "Castle") && locations.iter().any(|l| l.name == "Forest"));
        let traces = p.traces();
        let loc: Vec<_> = traces.iter().filter(|t| t.stage == "location").collect();
        assert_eq!(loc.len(), 2);
        assert_eq!(loc[0].validation_codes, vec![code.as_str().to_string()]);
    }
}

#[test]
fn scene_faults_are_retried() {
    for (fault, code) in [(LlmFault::EvenShotCount, ErrorCode::EvenShots), (LlmFault::AdjacentLocation, ErrorCode::AdjLocation)] {
        let (svc, backends) = setup();
        let p = planner(&backends, 1);
        let (chapters, _) = p.plan_chapters(&spec()).unwrap();
        let locations = p.build_location_library(&spec(), &chapters).unwrap();
        svc.arm_fault(fault, 1);
        let scenes = p.plan_scenes(&spec(), &chapters, &locations).unwrap();
        assert!(scenes.iter().all(|s| s.shot_count % 2 == 1));
        assert!(scenes.windows(2).all(|w| w[0].location_name != w[1].location_name));
        let first = p.traces().into_iter().find(|t| t.stage == "scene").unwrap();
        assert!(first.validation_codes.contains(&code.as_str().to_string()), "{:?}", first.validation_codes);
    }
}

fn scene(count: u32, chars: &[&str]) -> (LocationEntry, Scene) {
    let loc = LocationEntry { name: "Forest".into(), background_description: "Tall pines.".into() };
    let sc = Scene {
        chapter_index: 1,
        index: 1,
        location_name: "Forest".into(),
        characters: chars.iter().map(|s| s.to_string()).collect(),
        tone: "calm".into(),
        shot_count: count,
        summary: String::new(),
    };
    (loc, sc)
}

#[test]
fn shot_kinds_alternate() {
    let (_, backends) = setup();
    let (loc, sc) = scene(5, &["Mira", "Tobin"]);
    let shots = planner(&backends, 3).plan_shots(&spec(), &loc, &sc, &Neighbors::default()).unwrap();
    let kinds: Vec<ShotKind> = shots.iter().map(|s| s.kind).collect();
    use ShotKind::*;
    assert_eq!(kinds, vec![Narrative, Transition, Narrative, Transition, Narrative]);
    for s in &shots {
        assert_eq!(s.keyframe_prompt.is_some(), s.kind == Narrative);
        assert_eq!(s.transition.is_some(), s.kind == Transition);
        assert!(s.characters().len() <= 2);
        if s.characters().len() < 2 {
            assert_eq!(s.interaction, Interaction::None);
        }
        for p in s.pose.values() {
            assert!(matches!(p, Pose::Standing | Pose::Sitting | Pose::Walking | Pose::Running | Pose::Reaching));
        }
    }
    let (loc, one) = scene(1, &["Mira"]);
    let shots = planner(&backends, 3).plan_shots(&spec(), &loc, &one, &Neighbors::default()).unwrap();
    assert_eq!(shots.len(), 1);
    assert!(shots.iter().all(|s| s.kind == Narrative));
}

#[test]
fn wrong_transition_is_overridden_after_one_retry() {
    let (svc, backends) = setup();
    let (loc, sc) = scene(3, &["Mira", "Tobin"]);
    svc.arm_fault(LlmFault::WrongTransition, 5);
    let p = planner(&backends, 4);
    let shots = p.plan_shots(&spec(), &loc, &sc, &Neighbors::default()).unwrap();
    let tau = shots[1].transition.as_ref().unwrap();
    let prev = shots[0].characters();
    let next = shots[2].characters();
    assert_eq!(tau.exiting, prev.difference(&next).cloned().collect());
    assert_eq!(tau.entering, next.difference(&prev).cloned().collect());
    let traces = p.traces();
    assert_eq!(traces.len(), 2);
    assert_eq!(traces[0].validation_codes, vec!["E_TRANSITION_MISMATCH".to_string()]);
    assert!(traces[1].note.as_deref().unwrap_or("").contains("derived transition metadata"));
}

#[test]
fn entry_case_from_fixture_sets() {
    let prev = storyreel::schema::CharacterSet::from(["A".to_string()]);
    let next = storyreel::schema::CharacterSet::from(["A".to_string(), "B".to_string()]);
    let tau = storyreel::transition::metadata_from_sets(&prev, &next);
    assert_eq!(tau.entering, ["B".to_string()].into());
    assert_eq!(tau.movement, MovementType::Entry);
}

#[test]
fn traces_land_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let (svc, backends) = setup();
    svc.arm_fault(LlmFault::UnknownCharacter, 3);
    let p = Planner::new(&backends, TraceSink::directory(dir.path().join("traces")), PlannerOptions::default());
    assert!(p.plan_chapters(&spec()).is_err());
    for a in 1..=3 {
        let path = dir.path().join(format!("traces/chapter_000_{a}.json"));
        let trace: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(trace["attempt"], a);
        assert_eq!(trace["validation_codes"][0], "E_CHAR_NOT_ALLOWED");
    }
}
