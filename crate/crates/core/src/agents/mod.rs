//! Four-stage planning: chapters, location library, scenes, shots.
//!
//! Each stage renders a prompt template, asks the LLM seat, parses the reply
//! with the plan parser and validates the result against the constraints
//! that stage owns. Invalid replies are retried with the error codes fed back.

mod caller;
pub mod prompts;

use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use caller::{extract_json, AgentError, AgentTrace, LlmCaller, Outcome, TraceSink};

use crate::backends::Backends;
use crate::schema::{
    checks, fragments, validate_with, Chapter, CharacterSet, Emotion, ErrorCode, Interaction, LocationEntry,
    MovementType, PlanNotes, Pose, Scene, ShotDirective, ShotKind, StoryPlan, StorySpec, ValidationOptions,
    ValidationReport, Vocabulary, CHAPTER_RANGE, LOCATION_RANGE, MAX_CHARS_PER_SHOT, PLAN_VERSION,
};
use crate::transition::metadata_from_sets;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StageName {
    Chapter,
    Location,
    Scene,
    Shot,
}

impl StageName {
    pub const ORDER: [StageName; 4] = [StageName::Chapter, StageName::Location, StageName::Scene, StageName::Shot];

    pub fn as_str(self) -> &'static str {
        match self {
            StageName::Chapter => "chapter",
            StageName::Location => "location",
            StageName::Scene => "scene",
            StageName::Shot => "shot",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentStage {
    pub name: StageName,
    pub prompt_template: &'static str,
    pub max_retries: u32,
}

impl AgentStage {
    pub fn new(name: StageName, max_retries: u32) -> Self {
        AgentStage { name, prompt_template: prompts::template(name.as_str()), max_retries }
    }
}

/// Text summaries of the scenes around the one being shot-planned.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Neighbors {
    pub previous: Option<String>,
    pub next: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerOptions {
    pub seed: u64,
    pub strict: bool,
    /// Attempts per stage call, including the first.
    pub max_attempts: u32,
    /// Concurrent shot-planning calls.
    pub jobs: usize,
}

impl Default for PlannerOptions {
    fn default() -> Self {
        PlannerOptions { seed: 0, strict: false, max_attempts: 3, jobs: 1 }
    }
}

pub struct Planner {
    caller: LlmCaller,
    options: PlannerOptions,
}

fn stage_report(plan: &StoryPlan, options: &ValidationOptions, names: &[&str]) -> ValidationReport {
    validate_with(plan, options, checks().iter().filter(|c| names.contains(&c.name)))
}

fn skeleton(spec: &StorySpec) -> StoryPlan {
    StoryPlan {
        plan_version: PLAN_VERSION,
        spec: spec.clone(),
        notes: PlanNotes::new(),
        chapters: Vec::new(),
        locations: Vec::new(),
        scenes: Vec::new(),
        shots: Vec::new(),
    }
}

fn parse_field<T>(
    reply: &Value,
    key: &str,
    parse: fn(&Value, &str) -> Result<T, Vec<crate::schema::SchemaError>>,
) -> Result<T, ValidationReport> {
    match reply.get(key) {
        Some(v) => parse(v, &format!("$.{key}")).map_err(|e| ValidationReport::from_schema_errors(&e)),
        None => Err(ValidationReport::from_schema_errors(&[crate::schema::SchemaError {
            path: format!("$.{key}"),
            expected: format!("a \"{key}\" array"),
            found: "nothing".into(),
            code: ErrorCode::Schema,
        }])),
    }
}

impl Planner {
    pub fn new(backends: &Backends, traces: TraceSink, options: PlannerOptions) -> Self {
        Planner { caller: LlmCaller::new(backends, traces, options.seed, options.max_attempts), options }
    }

    pub fn traces(&self) -> Vec<AgentTrace> {
        self.caller.traces()
    }

    fn validation(&self) -> ValidationOptions {
        ValidationOptions { strict: self.options.strict }
    }

    pub fn plan_chapters(&self, spec: &StorySpec) -> Result<(Vec<Chapter>, PlanNotes), AgentError> {
        let input = json!({
            "story": spec.description,
            "characters": spec.characters.iter().map(|c| json!({"name": c.name, "description": c.description})).collect::<Vec<_>>(),
        });
        let vars = [("min_chapters", CHAPTER_RANGE.0.to_string()), ("max_chapters", CHAPTER_RANGE.1.to_string())];
        self.caller.ask("chapter", "000", &vars, &input, |reply, _| {
            let chapters = parse_field(reply, "chapters", fragments::chapters)?;
            let notes: PlanNotes = reply
                .get("notes")
                .and_then(Value::as_object)
                .map(|m| m.iter().map(|(k, v)| (k.clone(), v.as_str().map(String::from).unwrap_or_else(|| v.to_string()))).collect())
                .unwrap_or_default();
            let mut plan = skeleton(spec);
            plan.chapters = chapters;
            let report = stage_report(&plan, &self.validation(), &["spec", "chapters", "chapter_range"]);
            if report.is_valid() {
                Ok(Outcome::accept((plan.chapters, notes)))
            } else {
                Err(report)
            }
        })
    }

    pub fn build_location_library(&self, spec: &StorySpec, chapters: &[Chapter]) -> Result<Vec<LocationEntry>, AgentError> {
        let input = json!({
            "story": spec.description,
            "characters": spec.characters.iter().map(|c| c.name.clone()).collect::<Vec<_>>(),
            "chapters": chapters.iter().map(|c| json!({"index": c.index, "summary": c.summary})).collect::<Vec<_>>(),
        });
        let vars = [("min_locations", LOCATION_RANGE.0.to_string()), ("max_locations", LOCATION_RANGE.1.to_string())];
        self.caller.ask("location", "000", &vars, &input, |reply, _| {
            let locations = parse_field(reply, "locations", fragments::locations)?;
            let mut plan = skeleton(spec);
            plan.chapters = chapters.to_vec();
            plan.locations = locations;
            let report = stage_report(&plan, &self.validation(), &["locations", "location_range"]);
            if report.is_valid() {
                Ok(Outcome::accept(plan.locations))
            } else {
                Err(report)
            }
        })
    }

    pub fn plan_scenes(
        &self,
        spec: &StorySpec,
        chapters: &[Chapter],
        locations: &[LocationEntry],
    ) -> Result<Vec<Scene>, AgentError> {
        let input = json!({
            "characters": spec.characters.iter().map(|c| c.name.clone()).collect::<Vec<_>>(),
            "chapters": chapters.iter().map(|c| json!({"index": c.index, "summary": c.summary, "characters": c.characters})).collect::<Vec<_>>(),
            "locations": locations.iter().map(|l| l.name.clone()).collect::<Vec<_>>(),
        });
        self.caller.ask("scene", "000", &[], &input, |reply, _| {
            let scenes = parse_field(reply, "scenes", fragments::scenes)?;
            let mut plan = skeleton(spec);
            plan.chapters = chapters.to_vec();
            plan.locations = locations.to_vec();
            plan.scenes = scenes;
            let report = stage_report(&plan, &self.validation(), &["scenes", "adjacent_locations"]);
            if report.is_valid() {
                Ok(Outcome::accept(plan.scenes))
            } else {
                Err(report)
            }
        })
    }

    /// Plan the shots of one scene. Transition metadata stated by the model is
    /// cross-checked against the metadata derived from the neighbouring
    /// narrative shots; after one retry the derived metadata replaces it.
    pub fn plan_shots(
        &self,
        spec: &StorySpec,
        location: &LocationEntry,
        scene: &Scene,
        neighbors: &Neighbors,
    ) -> Result<Vec<ShotDirective>, AgentError> {
        let input = json!({
            "scene": scene,
            "location": location,
            "previous": neighbors.previous,
            "next": neighbors.next,
            "characters": spec.characters.iter().filter(|c| scene.characters.contains(&c.name)).map(|c| json!({"name": c.name, "description": c.description})).collect::<Vec<_>>(),
        });
        let vars = [
            ("max_chars", MAX_CHARS_PER_SHOT.to_string()),
            ("emotions", Emotion::allowed()),
            ("poses", Pose::allowed()),
            ("interactions", Interaction::allowed()),
            ("movements", MovementType::allowed()),
        ];
        let call = format!("s{:03}", scene.index);
        self.caller.ask("shot", &call, &vars, &input, |reply, attempt| {
            let mut shots = parse_field(reply, "shots", fragments::shots)?;
            let mut plan = skeleton(spec);
            plan.locations = vec![location.clone()];
            plan.scenes = vec![scene.clone()];
            plan.shots = shots.clone();
            let names = ["shot_sequence", "shot_characters", "dialogue", "transitions"];
            let report = stage_report(&plan, &self.validation(), &names);
            if report.is_valid() {
                return Ok(Outcome::accept(shots));
            }
            let only_tau = report.codes() == [ErrorCode::TransitionMismatch].into();
            if !only_tau || attempt < 2 {
                return Err(report);
            }
            let replaced = override_transitions(&mut shots);
            plan.shots = shots.clone();
            let after = stage_report(&plan, &self.validation(), &names);
            if !after.is_valid() {
                return Err(after);
            }
            let note = format!("derived transition metadata replaced the stated metadata on shot(s) {replaced:?}");
            Ok(Outcome::accept(shots).with_note(note))
        })
    }

    /// Run all four stages in order and assemble the plan.
    pub fn plan_story(&self, spec: &StorySpec) -> Result<StoryPlan, AgentError> {
        let (chapters, notes) = self.plan_chapters(spec)?;
        let locations = self.build_location_library(spec, &chapters)?;
        let scenes = self.plan_scenes(spec, &chapters, &locations)?;
        let jobs = self.options.jobs.max(1);
        let plan_one = |i: usize| -> Result<Vec<ShotDirective>, AgentError> {
            let scene = &scenes[i];
            let location = locations
                .iter()
                .find(|l| l.name == scene.location_name)
                .expect("scene locations were validated");
            let neighbors = Neighbors {
                previous: i.checked_sub(1).map(|p| scenes[p].summary.clone()),
                next: scenes.get(i + 1).map(|n| n.summary.clone()),
            };
            self.plan_shots(spec, location, scene, &neighbors)
        };
        let per_scene: Vec<Result<Vec<ShotDirective>, AgentError>> = if jobs == 1 {
            (0..scenes.len()).map(plan_one).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().expect("thread pool");
            pool.install(|| (0..scenes.len()).into_par_iter().map(plan_one).collect())
        };
        let mut shots = Vec::new();
        for r in per_scene {
            shots.extend(r?);
        }
        let plan = StoryPlan { plan_version: PLAN_VERSION, spec: spec.clone(), notes, chapters, locations, scenes, shots };
        Ok(plan)
    }
}

/// Replace every transition's metadata with the one derived from its
/// neighbours. Returns the indices that changed.
fn override_transitions(shots: &mut [ShotDirective]) -> Vec<u32> {
    let casts: BTreeMap<u32, CharacterSet> =
        shots.iter().filter(|s| s.kind == ShotKind::Narrative).map(|s| (s.index, s.characters())).collect();
    let mut changed = Vec::new();
    for shot in shots.iter_mut().filter(|s| s.kind == ShotKind::Transition) {
        let (Some(prev), Some(next)) = (casts.get(&(shot.index - 1)), casts.get(&(shot.index + 1))) else { continue };
        let derived = metadata_from_sets(prev, next);
        let same = shot.transition.as_ref().is_some_and(|t| t.same_logic(&derived));
        if !same {
            shot.transition = Some(derived);
            changed.push(shot.index);
        }
    }
    changed
}

/// Where traces for a run live.
pub fn trace_dir(run_root: &std::path::Path) -> PathBuf {
    run_root.join("traces")
}
