//! Plan document parsing.
//!
//! Parsing walks the JSON tree by hand instead of going through serde so that
//! every violation in a document is reported in one pass, each with the JSON
//! path of the offending value.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use serde_json::{Map, Value};

use super::types::*;
use super::validate::ErrorCode;
use super::vocab::Vocabulary;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SchemaError {
    pub path: String,
    pub expected: String,
    pub found: String,
    pub code: ErrorCode,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: expected {}, found {}", self.code, self.path, self.expected, self.found)
    }
}

/// Parse a plan document, returning every schema violation on failure.
pub fn parse_plan(document: &str) -> Result<StoryPlan, Vec<SchemaError>> {
    let value: Value = serde_json::from_str(document).map_err(|e| {
        vec![SchemaError {
            path: "$".into(),
            expected: "a JSON document".into(),
            found: e.to_string(),
            code: ErrorCode::Schema,
        }]
    })?;
    parse_plan_value(&value)
}

pub fn parse_plan_value(value: &Value) -> Result<StoryPlan, Vec<SchemaError>> {
    let mut w = Walker::default();
    let plan = w.plan(value);
    match plan {
        Some(plan) if w.errors.is_empty() => Ok(plan),
        _ => Err(w.errors),
    }
}

/// Parse a standalone story specification document.
pub fn parse_spec(document: &str) -> Result<StorySpec, Vec<SchemaError>> {
    let value: Value = serde_json::from_str(document).map_err(|e| {
        vec![SchemaError { path: "$".into(), expected: "a JSON document".into(), found: e.to_string(), code: ErrorCode::Schema }]
    })?;
    fragments::spec(&value, "$")
}

/// Parse pieces of agent replies with the same rules used for whole plans.
pub(crate) mod fragments {
    use super::*;

    pub fn chapters(value: &Value, path: &str) -> Result<Vec<Chapter>, Vec<SchemaError>> {
        let mut w = Walker::default();
        let out = w.list(value, path, Walker::chapter);
        w.finish(out)
    }

    pub fn locations(value: &Value, path: &str) -> Result<Vec<LocationEntry>, Vec<SchemaError>> {
        let mut w = Walker::default();
        let out = w.list(value, path, Walker::location);
        w.finish(out)
    }

    pub fn scenes(value: &Value, path: &str) -> Result<Vec<Scene>, Vec<SchemaError>> {
        let mut w = Walker::default();
        let out = w.list(value, path, Walker::scene);
        w.finish(out)
    }

    pub fn shots(value: &Value, path: &str) -> Result<Vec<ShotDirective>, Vec<SchemaError>> {
        let mut w = Walker::default();
        let out = w.list(value, path, Walker::shot);
        w.finish(out)
    }

    pub fn spec(value: &Value, path: &str) -> Result<StorySpec, Vec<SchemaError>> {
        let mut w = Walker::default();
        let out = w.spec(value, path);
        w.finish(out)
    }
}

fn kind_of(v: &Value) -> String {
    match v {
        Value::Null => "null".into(),
        Value::Bool(b) => format!("boolean {b}"),
        Value::Number(n) => format!("number {n}"),
        Value::String(s) => format!("\"{s}\""),
        Value::Array(_) => "array".into(),
        Value::Object(_) => "object".into(),
    }
}

#[derive(Default)]
struct Walker {
    errors: Vec<SchemaError>,
}

impl Walker {
    fn finish<T>(self, out: Option<T>) -> Result<T, Vec<SchemaError>> {
        match out {
            Some(v) if self.errors.is_empty() => Ok(v),
            _ => Err(self.errors),
        }
    }

    fn push(&mut self, path: &str, expected: impl Into<String>, found: impl Into<String>, code: ErrorCode) {
        self.errors.push(SchemaError {
            path: path.to_string(),
            expected: expected.into(),
            found: found.into(),
            code,
        });
    }

    fn object<'a>(&mut self, v: &'a Value, path: &str, allowed: &[&str]) -> Option<&'a Map<String, Value>> {
        let Some(map) = v.as_object() else {
            self.push(path, "object", kind_of(v), ErrorCode::Schema);
            return None;
        };
        for key in map.keys() {
            if !allowed.contains(&key.as_str()) {
                self.push(
                    &format!("{path}.{key}"),
                    format!("one of the fields [{}]", allowed.join(", ")),
                    format!("unknown field \"{key}\""),
                    ErrorCode::Schema,
                );
            }
        }
        Some(map)
    }

    fn field<'a>(&mut self, map: &'a Map<String, Value>, path: &str, key: &str) -> Option<&'a Value> {
        let v = map.get(key);
        if v.is_none() {
            self.push(&format!("{path}.{key}"), "required field", "nothing", ErrorCode::Schema);
        }
        v
    }

    fn string(&mut self, v: &Value, path: &str) -> Option<String> {
        match v.as_str() {
            Some(s) => Some(s.to_string()),
            None => {
                self.push(path, "string", kind_of(v), ErrorCode::Schema);
                None
            }
        }
    }

    fn str_field(&mut self, map: &Map<String, Value>, path: &str, key: &str) -> Option<String> {
        let v = self.field(map, path, key)?;
        self.string(v, &format!("{path}.{key}"))
    }

    fn opt_str_field(&mut self, map: &Map<String, Value>, path: &str, key: &str) -> Option<Option<String>> {
        match map.get(key) {
            None | Some(Value::Null) => Some(None),
            Some(v) => self.string(v, &format!("{path}.{key}")).map(Some),
        }
    }

    fn uint_field(&mut self, map: &Map<String, Value>, path: &str, key: &str) -> Option<u32> {
        let v = self.field(map, path, key)?;
        match v.as_u64().and_then(|n| u32::try_from(n).ok()) {
            Some(n) => Some(n),
            None => {
                self.push(&format!("{path}.{key}"), "non-negative integer", kind_of(v), ErrorCode::Schema);
                None
            }
        }
    }

    fn number(&mut self, v: &Value, path: &str) -> Option<f64> {
        match v.as_f64() {
            Some(n) => Some(n),
            None => {
                self.push(path, "number", kind_of(v), ErrorCode::Schema);
                None
            }
        }
    }

    fn vocab<T: Vocabulary>(&mut self, v: &Value, path: &str) -> Option<T> {
        let raw = self.string(v, path)?;
        match T::parse(&raw) {
            Some(t) => Some(t),
            None => {
                self.push(path, format!("{} in {{{}}}", T::LABEL, T::allowed()), format!("\"{raw}\""), ErrorCode::Vocab);
                None
            }
        }
    }

    fn list<T>(&mut self, v: &Value, path: &str, item: fn(&mut Self, &Value, &str) -> Option<T>) -> Option<Vec<T>> {
        let Some(items) = v.as_array() else {
            self.push(path, "array", kind_of(v), ErrorCode::Schema);
            return None;
        };
        let mut out = Vec::with_capacity(items.len());
        let mut ok = true;
        for (i, it) in items.iter().enumerate() {
            match item(self, it, &format!("{path}[{i}]")) {
                Some(t) => out.push(t),
                None => ok = false,
            }
        }
        ok.then_some(out)
    }

    fn name_set(&mut self, v: &Value, path: &str) -> Option<CharacterSet> {
        let names = self.list(v, path, |w, v, p| w.string(v, p))?;
        let mut set = BTreeSet::new();
        for (i, n) in names.into_iter().enumerate() {
            if !set.insert(n.clone()) {
                self.push(&format!("{path}[{i}]"), "distinct names", format!("duplicate \"{n}\""), ErrorCode::Schema);
            }
        }
        Some(set)
    }

    fn vocab_map<T: Vocabulary>(&mut self, v: &Value, path: &str) -> Option<BTreeMap<String, T>> {
        let Some(map) = v.as_object() else {
            self.push(path, "object mapping character names", kind_of(v), ErrorCode::Schema);
            return None;
        };
        let mut out = BTreeMap::new();
        let mut ok = true;
        for (name, raw) in map {
            match self.vocab::<T>(raw, &format!("{path}.{name}")) {
                Some(t) => {
                    out.insert(name.clone(), t);
                }
                None => ok = false,
            }
        }
        ok.then_some(out)
    }

    fn plan(&mut self, v: &Value) -> Option<StoryPlan> {
        let path = "$";
        let map = self.object(
            v,
            path,
            &["plan_version", "spec", "notes", "chapters", "locations", "scenes", "shots"],
        )?;
        let version = self.uint_field(map, path, "plan_version");
        if let Some(ver) = version {
            if ver != PLAN_VERSION {
                self.push("$.plan_version", format!("{PLAN_VERSION}"), ver.to_string(), ErrorCode::Schema);
            }
        }
        let spec = self.field(map, path, "spec").and_then(|v| self.spec(v, "$.spec"));
        let notes = match map.get("notes") {
            None => Some(BTreeMap::new()),
            Some(v) => self.notes(v, "$.notes"),
        };
        let chapters = self.field(map, path, "chapters").and_then(|v| self.list(v, "$.chapters", Self::chapter));
        let locations = self.field(map, path, "locations").and_then(|v| self.list(v, "$.locations", Self::location));
        let scenes = self.field(map, path, "scenes").and_then(|v| self.list(v, "$.scenes", Self::scene));
        let shots = self.field(map, path, "shots").and_then(|v| self.list(v, "$.shots", Self::shot));
        Some(StoryPlan {
            plan_version: version?,
            spec: spec?,
            notes: notes?,
            chapters: chapters?,
            locations: locations?,
            scenes: scenes?,
            shots: shots?,
        })
    }

    fn notes(&mut self, v: &Value, path: &str) -> Option<PlanNotes> {
        let map = v.as_object().or_else(|| {
            self.push(path, "object of strings", kind_of(v), ErrorCode::Schema);
            None
        })?;
        let mut out = BTreeMap::new();
        for (k, v) in map {
            out.insert(k.clone(), self.string(v, &format!("{path}.{k}"))?);
        }
        Some(out)
    }

    fn spec(&mut self, v: &Value, path: &str) -> Option<StorySpec> {
        let map = self.object(v, path, &["description", "characters"])?;
        let description = self.str_field(map, path, "description");
        let characters = self
            .field(map, path, "characters")
            .and_then(|v| self.list(v, &format!("{path}.characters"), Self::character));
        Some(StorySpec { description: description?, characters: characters? })
    }

    fn character(&mut self, v: &Value, path: &str) -> Option<CharacterRef> {
        let map = self.object(v, path, &["name", "description", "reference_image"])?;
        let name = self.str_field(map, path, "name");
        let description = self.str_field(map, path, "description");
        let reference_image = self.opt_str_field(map, path, "reference_image");
        Some(CharacterRef { name: name?, description: description?, reference_image: reference_image? })
    }

    fn chapter(&mut self, v: &Value, path: &str) -> Option<Chapter> {
        let map = self.object(v, path, &["index", "summary", "characters", "timeline", "justification"])?;
        let index = self.uint_field(map, path, "index");
        let summary = self.str_field(map, path, "summary");
        let characters = self
            .field(map, path, "characters")
            .and_then(|v| self.name_set(v, &format!("{path}.characters")));
        let timeline = self.str_field(map, path, "timeline");
        let justification = self.str_field(map, path, "justification");
        Some(Chapter {
            index: index?,
            summary: summary?,
            characters: characters?,
            timeline: timeline?,
            justification: justification?,
        })
    }

    fn location(&mut self, v: &Value, path: &str) -> Option<LocationEntry> {
        let map = self.object(v, path, &["name", "background_description"])?;
        let name = self.str_field(map, path, "name");
        let background_description = self.str_field(map, path, "background_description");
        Some(LocationEntry { name: name?, background_description: background_description? })
    }

    fn scene(&mut self, v: &Value, path: &str) -> Option<Scene> {
        let map = self.object(
            v,
            path,
            &["chapter_index", "index", "location_name", "characters", "tone", "shot_count", "summary"],
        )?;
        let chapter_index = self.uint_field(map, path, "chapter_index");
        let index = self.uint_field(map, path, "index");
        let location_name = self.str_field(map, path, "location_name");
        let characters = self
            .field(map, path, "characters")
            .and_then(|v| self.name_set(v, &format!("{path}.characters")));
        let tone = self.str_field(map, path, "tone");
        let shot_count = self.uint_field(map, path, "shot_count");
        if let Some(n) = shot_count {
            if n % 2 == 0 {
                self.push(
                    &format!("{path}.shot_count"),
                    "odd shot count required",
                    n.to_string(),
                    ErrorCode::EvenShots,
                );
            }
        }
        let summary = self.opt_str_field(map, path, "summary");
        Some(Scene {
            chapter_index: chapter_index?,
            index: index?,
            location_name: location_name?,
            characters: characters?,
            tone: tone?,
            shot_count: shot_count?,
            summary: summary?.unwrap_or_default(),
        })
    }

    fn dialogue(&mut self, v: &Value, path: &str) -> Option<Dialogue> {
        let map = self.object(v, path, &["text", "start_s", "end_s"])?;
        let text = self.str_field(map, path, "text");
        let start_s = self.field(map, path, "start_s").and_then(|v| self.number(v, &format!("{path}.start_s")));
        let end_s = self.field(map, path, "end_s").and_then(|v| self.number(v, &format!("{path}.end_s")));
        Some(Dialogue { text: text?, start_s: start_s?, end_s: end_s? })
    }

    fn transition(&mut self, v: &Value, path: &str) -> Option<TransitionMetadata> {
        let map = self.object(
            v,
            path,
            &["prev_chars", "start_chars", "end_chars", "exiting", "entering", "movement", "description"],
        )?;
        let set = |w: &mut Self, key: &str| {
            w.field(map, path, key).and_then(|v| w.name_set(v, &format!("{path}.{key}")))
        };
        let prev_chars = set(self, "prev_chars");
        let start_chars = set(self, "start_chars");
        let end_chars = set(self, "end_chars");
        let exiting = set(self, "exiting");
        let entering = set(self, "entering");
        let movement = self
            .field(map, path, "movement")
            .and_then(|v| self.vocab::<MovementType>(v, &format!("{path}.movement")));
        let description = self.str_field(map, path, "description");
        Some(TransitionMetadata {
            prev_chars: prev_chars?,
            start_chars: start_chars?,
            end_chars: end_chars?,
            exiting: exiting?,
            entering: entering?,
            movement: movement?,
            description: description?,
        })
    }

    fn shot(&mut self, v: &Value, path: &str) -> Option<ShotDirective> {
        let map = self.object(
            v,
            path,
            &[
                "scene_index",
                "index",
                "kind",
                "emotion",
                "pose",
                "interaction",
                "dialogue",
                "keyframe_prompt",
                "video_prompt",
                "camera",
                "transition",
            ],
        )?;
        let scene_index = self.uint_field(map, path, "scene_index");
        let index = self.uint_field(map, path, "index");
        let kind = self.field(map, path, "kind").and_then(|v| self.vocab::<ShotKind>(v, &format!("{path}.kind")));
        let emotion = self
            .field(map, path, "emotion")
            .and_then(|v| self.vocab_map::<Emotion>(v, &format!("{path}.emotion")));
        let pose = self.field(map, path, "pose").and_then(|v| self.vocab_map::<Pose>(v, &format!("{path}.pose")));
        let interaction = self
            .field(map, path, "interaction")
            .and_then(|v| self.vocab::<Interaction>(v, &format!("{path}.interaction")));
        let dialogue = match map.get("dialogue") {
            None | Some(Value::Null) => Some(None),
            Some(v) => self.dialogue(v, &format!("{path}.dialogue")).map(Some),
        };
        let keyframe_prompt = self.opt_str_field(map, path, "keyframe_prompt");
        let video_prompt = self.str_field(map, path, "video_prompt");
        let camera = self.str_field(map, path, "camera");
        let transition = match map.get("transition") {
            None | Some(Value::Null) => Some(None),
            Some(v) => self.transition(v, &format!("{path}.transition")).map(Some),
        };
        Some(ShotDirective {
            scene_index: scene_index?,
            index: index?,
            kind: kind?,
            emotion: emotion?,
            pose: pose?,
            interaction: interaction?,
            dialogue: dialogue?,
            keyframe_prompt: keyframe_prompt?,
            video_prompt: video_prompt?,
            camera: camera?,
            transition: transition?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = include_str!("../../tests/fixtures/minimal_plan.json");

    #[test]
    fn minimal_fixture_parses() {
        let plan = parse_plan(MINIMAL).expect("minimal plan parses");
        assert_eq!(plan.chapters.len(), 1);
        assert_eq!(plan.locations.len(), 2);
        assert_eq!(plan.scenes.len(), 1);
        assert_eq!(plan.shots.len(), 1);
        assert_eq!(plan.shots[0].kind, ShotKind::Narrative);
    }

    #[test]
    fn unknown_pose_names_vocabulary() {
        let doc = MINIMAL.replace("\"Standing\"", "\"Leaping\"");
        let errs = parse_plan(&doc).unwrap_err();
        assert_eq!(errs.len(), 1);
        let e = &errs[0];
        assert_eq!(e.code, ErrorCode::Vocab);
        assert_eq!(e.path, "$.shots[0].pose.Mira");
        assert!(e.expected.contains("Standing, Sitting, Walking, Running, Reaching"), "{}", e.expected);
        assert_eq!(e.found, "\"Leaping\"");
    }

    #[test]
    fn even_shot_count_is_rejected() {
        let doc = MINIMAL.replace("\"shot_count\": 1", "\"shot_count\": 4");
        let errs = parse_plan(&doc).unwrap_err();
        assert!(errs.iter().any(|e| e.code == ErrorCode::EvenShots && e.expected == "odd shot count required"));
    }

    #[test]
    fn reports_all_errors_not_first() {
        let doc = MINIMAL
            .replace("\"Standing\"", "\"Leaping\"")
            .replace("\"Happy\"", "\"Ecstatic\"")
            .replace("\"shot_count\": 1", "\"shot_count\": 2");
        let errs = parse_plan(&doc).unwrap_err();
        assert_eq!(errs.len(), 3, "{errs:?}");
    }

    #[test]
    fn missing_and_unknown_fields() {
        let mut v: Value = serde_json::from_str(MINIMAL).unwrap();
        let scene = v["scenes"][0].as_object_mut().unwrap();
        scene.remove("tone");
        scene.insert("mood".into(), Value::String("x".into()));
        let errs = parse_plan_value(&v).unwrap_err();
        let paths: Vec<_> = errs.iter().map(|e| e.path.as_str()).collect();
        assert!(paths.contains(&"$.scenes[0].tone"));
        assert!(paths.contains(&"$.scenes[0].mood"));
        assert!(errs.iter().all(|e| e.code == ErrorCode::Schema));
    }

    #[test]
    fn malformed_json_is_a_single_schema_error() {
        let errs = parse_plan("{ not json").unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].path, "$");
    }

    #[test]
    fn serialize_round_trip() {
        let plan = parse_plan(MINIMAL).unwrap();
        let again = parse_plan(&plan.to_json()).unwrap();
        assert_eq!(plan, again);
    }
}
