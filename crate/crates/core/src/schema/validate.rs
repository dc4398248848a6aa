//! Constraint checking for parsed plans.
//!
//! Violations are data: `validate_plan` never fails, it returns a report with
//! one entry per broken constraint. Checks are independent of each other, so
//! the set of reported codes does not depend on the order they run in.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::parse::{parse_plan, SchemaError};
use super::types::*;
use crate::transition::{metadata_from_sets, rederive};

pub const CHAPTER_RANGE: (usize, usize) = (10, 20);
pub const LOCATION_RANGE: (usize, usize) = (8, 12);
pub const DIALOGUE_WINDOW_S: (f64, f64) = (0.0, 5.0);
pub const MAX_CHARS_PER_SHOT: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorCode {
    #[serde(rename = "E_EVEN_SHOTS")]
    EvenShots,
    #[serde(rename = "E_ADJ_LOCATION")]
    AdjLocation,
    #[serde(rename = "E_CHAR_NOT_ALLOWED")]
    CharNotAllowed,
    #[serde(rename = "E_TOO_MANY_CHARS")]
    TooManyChars,
    #[serde(rename = "E_VOCAB")]
    Vocab,
    #[serde(rename = "E_LOCATION_UNKNOWN")]
    LocationUnknown,
    #[serde(rename = "E_TRANSITION_MISMATCH")]
    TransitionMismatch,
    #[serde(rename = "E_CHAPTER_RANGE")]
    ChapterRange,
    #[serde(rename = "E_LOCATION_RANGE")]
    LocationRange,
    #[serde(rename = "E_SCHEMA")]
    Schema,
    #[serde(rename = "E_EMPTY_SPEC")]
    EmptySpec,
    #[serde(rename = "E_DUPLICATE_NAME")]
    DuplicateName,
    #[serde(rename = "E_LOCATION_NAME")]
    LocationName,
    #[serde(rename = "E_BG_CHARACTER")]
    BgCharacter,
    #[serde(rename = "E_CHAPTER_SEQUENCE")]
    ChapterSequence,
    #[serde(rename = "E_SCENE_SEQUENCE")]
    SceneSequence,
    #[serde(rename = "E_SHOT_SEQUENCE")]
    ShotSequence,
    #[serde(rename = "E_DIALOGUE_TIMING")]
    DialogueTiming,
}

impl ErrorCode {
    /// The nine plan-constraint codes covered by fault injection.
    pub const CONSTRAINT_CODES: [ErrorCode; 9] = [
        ErrorCode::EvenShots,
        ErrorCode::AdjLocation,
        ErrorCode::CharNotAllowed,
        ErrorCode::TooManyChars,
        ErrorCode::Vocab,
        ErrorCode::LocationUnknown,
        ErrorCode::TransitionMismatch,
        ErrorCode::ChapterRange,
        ErrorCode::LocationRange,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::EvenShots => "E_EVEN_SHOTS",
            ErrorCode::AdjLocation => "E_ADJ_LOCATION",
            ErrorCode::CharNotAllowed => "E_CHAR_NOT_ALLOWED",
            ErrorCode::TooManyChars => "E_TOO_MANY_CHARS",
            ErrorCode::Vocab => "E_VOCAB",
            ErrorCode::LocationUnknown => "E_LOCATION_UNKNOWN",
            ErrorCode::TransitionMismatch => "E_TRANSITION_MISMATCH",
            ErrorCode::ChapterRange => "E_CHAPTER_RANGE",
            ErrorCode::LocationRange => "E_LOCATION_RANGE",
            ErrorCode::Schema => "E_SCHEMA",
            ErrorCode::EmptySpec => "E_EMPTY_SPEC",
            ErrorCode::DuplicateName => "E_DUPLICATE_NAME",
            ErrorCode::LocationName => "E_LOCATION_NAME",
            ErrorCode::BgCharacter => "E_BG_CHARACTER",
            ErrorCode::ChapterSequence => "E_CHAPTER_SEQUENCE",
            ErrorCode::SceneSequence => "E_SCENE_SEQUENCE",
            ErrorCode::ShotSequence => "E_SHOT_SEQUENCE",
            ErrorCode::DialogueTiming => "E_DIALOGUE_TIMING",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub code: ErrorCode,
    pub path: String,
    pub message: String,
    pub severity: Severity,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Violation>,
    pub warnings: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn codes(&self) -> BTreeSet<ErrorCode> {
        self.errors.iter().map(|v| v.code).collect()
    }

    pub fn warning_codes(&self) -> BTreeSet<ErrorCode> {
        self.warnings.iter().map(|v| v.code).collect()
    }

    fn from_violations(mut all: Vec<Violation>) -> Self {
        all.sort();
        all.dedup();
        let (errors, warnings) = all.into_iter().partition(|v| v.severity == Severity::Error);
        ValidationReport { errors, warnings }
    }

    pub fn from_schema_errors(errors: &[SchemaError]) -> Self {
        Self::from_violations(
            errors
                .iter()
                .map(|e| Violation {
                    code: e.code,
                    path: e.path.clone(),
                    message: format!("expected {}, found {}", e.expected, e.found),
                    severity: Severity::Error,
                })
                .collect(),
        )
    }

    pub fn merge(&mut self, other: ValidationReport) {
        let mut all = std::mem::take(&mut self.errors);
        all.append(&mut std::mem::take(&mut self.warnings));
        all.extend(other.errors);
        all.extend(other.warnings);
        *self = Self::from_violations(all);
    }

    /// One line per violation, errors first.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for v in self.errors.iter().chain(&self.warnings) {
            let tag = match v.severity {
                Severity::Error => "error",
                Severity::Warning => "warning",
            };
            out.push_str(&format!("{tag} {} {}: {}\n", v.code, v.path, v.message));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationOptions {
    /// Promote chapter/location count range violations from warnings to errors.
    pub strict: bool,
}

/// A single independent constraint check.
#[derive(Clone, Copy)]
pub struct Check {
    pub name: &'static str,
    pub run: fn(&StoryPlan, &ValidationOptions, &mut Vec<Violation>),
}

const CHECKS: &[Check] = &[
    Check { name: "spec", run: check_spec },
    Check { name: "chapters", run: check_chapters },
    Check { name: "chapter_range", run: check_chapter_range },
    Check { name: "locations", run: check_locations },
    Check { name: "location_range", run: check_location_range },
    Check { name: "scenes", run: check_scenes },
    Check { name: "adjacent_locations", run: check_adjacent_locations },
    Check { name: "shot_sequence", run: check_shot_sequence },
    Check { name: "shot_characters", run: check_shot_characters },
    Check { name: "dialogue", run: check_dialogue },
    Check { name: "transitions", run: check_transitions },
];

pub fn checks() -> &'static [Check] {
    CHECKS
}

pub fn validate_plan(plan: &StoryPlan, options: &ValidationOptions) -> ValidationReport {
    validate_with(plan, options, CHECKS.iter())
}

pub fn validate_with<'a>(
    plan: &StoryPlan,
    options: &ValidationOptions,
    checks: impl IntoIterator<Item = &'a Check>,
) -> ValidationReport {
    let mut all = Vec::new();
    for check in checks {
        (check.run)(plan, options, &mut all);
    }
    ValidationReport::from_violations(all)
}

/// Parse and validate a document. Schema violations are folded into the
/// report, so a document with an unknown pose yields `E_VOCAB`.
pub fn validate_document(document: &str, options: &ValidationOptions) -> (Option<StoryPlan>, ValidationReport) {
    match parse_plan(document) {
        Ok(plan) => {
            let report = validate_plan(&plan, options);
            (Some(plan), report)
        }
        Err(errors) => (None, ValidationReport::from_schema_errors(&errors)),
    }
}

fn err(out: &mut Vec<Violation>, code: ErrorCode, path: impl Into<String>, message: impl Into<String>) {
    out.push(Violation { code, path: path.into(), message: message.into(), severity: Severity::Error });
}

fn range_violation(
    out: &mut Vec<Violation>,
    options: &ValidationOptions,
    code: ErrorCode,
    path: &str,
    what: &str,
    count: usize,
    (lo, hi): (usize, usize),
) {
    if count < lo || count > hi {
        out.push(Violation {
            code,
            path: path.to_string(),
            message: format!("{count} {what}, expected {lo}-{hi}"),
            severity: if options.strict { Severity::Error } else { Severity::Warning },
        });
    }
}

fn fmt_set(set: &CharacterSet) -> String {
    format!("{{{}}}", set.iter().cloned().collect::<Vec<_>>().join(", "))
}

fn check_spec(plan: &StoryPlan, _: &ValidationOptions, out: &mut Vec<Violation>) {
    if plan.spec.characters.is_empty() {
        err(out, ErrorCode::EmptySpec, "$.spec.characters", "at least one character is required");
    }
    let mut seen = HashSet::new();
    for (i, c) in plan.spec.characters.iter().enumerate() {
        if c.name.trim().is_empty() {
            err(out, ErrorCode::EmptySpec, format!("$.spec.characters[{i}].name"), "character name is empty");
        } else if !seen.insert(c.name.as_str()) {
            err(out, ErrorCode::DuplicateName, format!("$.spec.characters[{i}].name"), format!("duplicate character \"{}\"", c.name));
        }
    }
}

fn check_chapters(plan: &StoryPlan, _: &ValidationOptions, out: &mut Vec<Violation>) {
    let allowed = plan.spec.names();
    for (i, ch) in plan.chapters.iter().enumerate() {
        if ch.index as usize != i + 1 {
            err(out, ErrorCode::ChapterSequence, format!("$.chapters[{i}].index"), format!("expected index {}, found {}", i + 1, ch.index));
        }
        let extra: CharacterSet = ch.characters.difference(&allowed).cloned().collect();
        if !extra.is_empty() {
            err(
                out,
                ErrorCode::CharNotAllowed,
                format!("$.chapters[{i}].characters"),
                format!("{} not in the story's characters", fmt_set(&extra)),
            );
        }
    }
}

fn check_chapter_range(plan: &StoryPlan, options: &ValidationOptions, out: &mut Vec<Violation>) {
    range_violation(out, options, ErrorCode::ChapterRange, "$.chapters", "chapters", plan.chapters.len(), CHAPTER_RANGE);
}

fn check_location_range(plan: &StoryPlan, options: &ValidationOptions, out: &mut Vec<Violation>) {
    range_violation(out, options, ErrorCode::LocationRange, "$.locations", "locations", plan.locations.len(), LOCATION_RANGE);
}

/// Case-insensitive substring scan for character names.
pub fn mentioned_characters(text: &str, names: &CharacterSet) -> CharacterSet {
    let lower = text.to_lowercase();
    names.iter().filter(|n| !n.is_empty() && contains_word(&lower, &n.to_lowercase())).cloned().collect()
}

/// Case-folded whole-word containment.
fn contains_word(haystack: &str, needle: &str) -> bool {
    haystack.match_indices(needle).any(|(i, m)| {
        let before = haystack[..i].chars().next_back();
        let after = haystack[i + m.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

fn check_locations(plan: &StoryPlan, _: &ValidationOptions, out: &mut Vec<Violation>) {
    let names = plan.spec.names();
    let mut seen = HashSet::new();
    for (i, loc) in plan.locations.iter().enumerate() {
        let path = format!("$.locations[{i}]");
        if loc.name.is_empty() || loc.name.chars().any(char::is_whitespace) {
            err(out, ErrorCode::LocationName, format!("{path}.name"), format!("\"{}\" is not a single token", loc.name));
        }
        if !seen.insert(loc.name.as_str()) {
            err(out, ErrorCode::DuplicateName, format!("{path}.name"), format!("duplicate location \"{}\"", loc.name));
        }
        let hits = mentioned_characters(&loc.background_description, &names);
        if !hits.is_empty() {
            err(
                out,
                ErrorCode::BgCharacter,
                format!("{path}.background_description"),
                format!("background mentions {}", fmt_set(&hits)),
            );
        }
    }
}

fn check_scenes(plan: &StoryPlan, _: &ValidationOptions, out: &mut Vec<Violation>) {
    let mut last_chapter = 0;
    for (i, sc) in plan.scenes.iter().enumerate() {
        let path = format!("$.scenes[{i}]");
        if sc.index as usize != i + 1 {
            err(out, ErrorCode::SceneSequence, format!("{path}.index"), format!("expected index {}, found {}", i + 1, sc.index));
        }
        if sc.chapter_index < last_chapter {
            err(out, ErrorCode::SceneSequence, format!("{path}.chapter_index"), "scenes must follow chapter order");
        }
        last_chapter = sc.chapter_index;
        if sc.shot_count % 2 == 0 {
            err(out, ErrorCode::EvenShots, format!("{path}.shot_count"), format!("odd shot count required, found {}", sc.shot_count));
        }
        if plan.location(&sc.location_name).is_none() {
            err(
                out,
                ErrorCode::LocationUnknown,
                format!("{path}.location_name"),
                format!("\"{}\" is not in the location library", sc.location_name),
            );
        }
        match plan.chapter(sc.chapter_index) {
            None => err(out, ErrorCode::SceneSequence, format!("{path}.chapter_index"), format!("no chapter {}", sc.chapter_index)),
            Some(ch) => {
                let extra: CharacterSet = sc.characters.difference(&ch.characters).cloned().collect();
                if !extra.is_empty() {
                    err(
                        out,
                        ErrorCode::CharNotAllowed,
                        format!("{path}.characters"),
                        format!("{} not allowed by chapter {}", fmt_set(&extra), ch.index),
                    );
                }
            }
        }
    }
}

fn check_adjacent_locations(plan: &StoryPlan, _: &ValidationOptions, out: &mut Vec<Violation>) {
    for (i, pair) in plan.scenes.windows(2).enumerate() {
        if pair[0].location_name == pair[1].location_name {
            err(
                out,
                ErrorCode::AdjLocation,
                format!("$.scenes[{}].location_name", i + 1),
                format!("scenes {} and {} both use \"{}\"", pair[0].index, pair[1].index, pair[1].location_name),
            );
        }
    }
}

fn shot_path(plan: &StoryPlan, shot: &ShotDirective) -> String {
    let pos = plan.shots.iter().position(|s| std::ptr::eq(s, shot)).unwrap_or(0);
    format!("$.shots[{pos}]")
}

fn check_shot_sequence(plan: &StoryPlan, _: &ValidationOptions, out: &mut Vec<Violation>) {
    let mut by_scene: BTreeMap<u32, Vec<&ShotDirective>> = BTreeMap::new();
    for shot in &plan.shots {
        by_scene.entry(shot.scene_index).or_default().push(shot);
    }
    for (scene_index, shots) in &by_scene {
        if plan.scene(*scene_index).is_none() {
            err(out, ErrorCode::ShotSequence, shot_path(plan, shots[0]), format!("shot refers to unknown scene {scene_index}"));
        }
    }
    for sc in &plan.scenes {
        let shots = by_scene.get(&sc.index).cloned().unwrap_or_default();
        let indices: Vec<u32> = shots.iter().map(|s| s.index).collect();
        let expected: Vec<u32> = (1..=sc.shot_count).collect();
        if indices != expected {
            err(
                out,
                ErrorCode::ShotSequence,
                format!("$.scenes[{}]", sc.index.saturating_sub(1)),
                format!("scene {} declares {} shots but lists indices {:?}", sc.index, sc.shot_count, indices),
            );
        }
    }
    for shot in &plan.shots {
        let path = shot_path(plan, shot);
        let expected = if shot.index % 2 == 1 { ShotKind::Narrative } else { ShotKind::Transition };
        if shot.kind != expected {
            err(out, ErrorCode::ShotSequence, format!("{path}.kind"), format!("shot {} must be {expected}", shot.index));
        }
        match shot.kind {
            ShotKind::Narrative => {
                if shot.keyframe_prompt.is_none() {
                    err(out, ErrorCode::Schema, format!("{path}.keyframe_prompt"), "narrative shots need a keyframe prompt");
                }
                if shot.transition.is_some() {
                    err(out, ErrorCode::ShotSequence, format!("{path}.transition"), "narrative shots carry no transition metadata");
                }
            }
            ShotKind::Transition => {
                if shot.transition.is_none() {
                    err(out, ErrorCode::TransitionMismatch, format!("{path}.transition"), "transition shot lacks metadata");
                }
            }
        }
    }
}

fn check_shot_characters(plan: &StoryPlan, _: &ValidationOptions, out: &mut Vec<Violation>) {
    for shot in &plan.shots {
        let path = shot_path(plan, shot);
        match (&shot.kind, &shot.transition) {
            (ShotKind::Transition, Some(tau)) => {
                for (label, set) in [("start_chars", &tau.start_chars), ("end_chars", &tau.end_chars)] {
                    if set.len() > MAX_CHARS_PER_SHOT {
                        err(
                            out,
                            ErrorCode::TooManyChars,
                            format!("{path}.transition.{label}"),
                            format!("{} characters, at most {MAX_CHARS_PER_SHOT}", set.len()),
                        );
                    }
                }
            }
            _ => {
                let n = shot.characters().len();
                if n > MAX_CHARS_PER_SHOT {
                    err(out, ErrorCode::TooManyChars, format!("{path}.pose"), format!("{n} characters, at most {MAX_CHARS_PER_SHOT}"));
                }
            }
        }
        if let Some(sc) = plan.scene(shot.scene_index) {
            let extra: CharacterSet = shot.all_characters().difference(&sc.characters).cloned().collect();
            if !extra.is_empty() {
                err(
                    out,
                    ErrorCode::CharNotAllowed,
                    path,
                    format!("{} not allowed by scene {}", fmt_set(&extra), sc.index),
                );
            }
        }
    }
}

fn check_dialogue(plan: &StoryPlan, _: &ValidationOptions, out: &mut Vec<Violation>) {
    let (lo, hi) = DIALOGUE_WINDOW_S;
    for shot in &plan.shots {
        if let Some(d) = &shot.dialogue {
            let ok = d.start_s.is_finite() && d.end_s.is_finite() && lo <= d.start_s && d.start_s <= d.end_s && d.end_s <= hi;
            if !ok {
                err(
                    out,
                    ErrorCode::DialogueTiming,
                    format!("{}.dialogue", shot_path(plan, shot)),
                    format!("interval [{}, {}] outside [{lo}, {hi}] s", d.start_s, d.end_s),
                );
            }
        }
    }
}

fn check_transitions(plan: &StoryPlan, _: &ValidationOptions, out: &mut Vec<Violation>) {
    for shot in &plan.shots {
        let Some(tau) = &shot.transition else { continue };
        if shot.kind != ShotKind::Transition {
            continue;
        }
        let path = format!("{}.transition", shot_path(plan, shot));
        let recomputed = rederive(tau);
        if !recomputed.same_logic(tau) {
            err(
                out,
                ErrorCode::TransitionMismatch,
                path.clone(),
                format!(
                    "stored exiting {} / entering {} / {} disagree with start {} and end {}",
                    fmt_set(&tau.exiting),
                    fmt_set(&tau.entering),
                    tau.movement,
                    fmt_set(&tau.start_chars),
                    fmt_set(&tau.end_chars)
                ),
            );
            continue;
        }
        let find = |index: u32| plan.shots.iter().find(|s| s.scene_index == shot.scene_index && s.index == index);
        let (Some(prev), Some(next)) = (find(shot.index.wrapping_sub(1)), find(shot.index + 1)) else {
            // missing neighbours are reported by the sequence check
            continue;
        };
        let derived = metadata_from_sets(&prev.characters(), &next.characters());
        if !derived.same_logic(tau) {
            err(
                out,
                ErrorCode::TransitionMismatch,
                path,
                format!(
                    "transition bridges {} to {} but neighbours have {} and {}",
                    fmt_set(&tau.start_chars),
                    fmt_set(&tau.end_chars),
                    fmt_set(&derived.start_chars),
                    fmt_set(&derived.end_chars)
                ),
            );
        }
    }
}
