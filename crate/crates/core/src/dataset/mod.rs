//! Transition dataset factory: scenario agents, prompt synthesis, counting
//! filter and balanced training manifests.

mod pipeline;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use image::RgbImage;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use pipeline::{
    assemble_stage, corpus_dir, filter_stage, gen_stage, load_corpus, read_clip, read_jsonl, run_dataset_pipeline,
    stats_stage, CategoryStats, Corpus, DatasetOutput, DatasetStats, FLAVORS_FILE, MANIFEST_FILE, PROMPTS_FILE, SETUP_FILE, STATS_FILE, VARIATIONS_FILE, VERDICTS_FILE,
};

use crate::agents::{prompts, AgentError, LlmCaller, Outcome};
use crate::backends::mock::llm::STYLES;
use crate::backends::{
    BackendError, BackendHandle, BackendRequest, RequestPayload, ResponsePayload, T2vPayload, VlmPayload, WireImage,
};
use crate::config::DatasetSettings;
use crate::schema::{CharacterSet, ErrorCode, MovementType, SchemaError, ValidationReport};
use crate::transition::{classify_category, TransitionCategory};
use crate::util::{counted, seeded_rng, stable_hash};

pub const FLAVOR_COUNT: usize = 40;
pub const BATCH_COUNT: u32 = 10;
pub const BATCH_SIZE: u32 = 25;
pub const MAX_COUNT: u32 = 4;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("no passing clips for: {}", list(.categories))]
    EmptyCategory { categories: Vec<TransitionCategory> },
    #[error("clip {id} has {frames} frame(s); filtering needs at least 2")]
    TooFewFrames { id: String, frames: usize },
    #[error("{0}")]
    BadResponse(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("missing checkpoint {0}; run the earlier dataset stage first")]
    MissingStage(PathBuf),
}

fn list(categories: &[TransitionCategory]) -> String {
    categories.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(", ")
}

/// Planning document shared by every later dataset agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSetup {
    pub documentation: String,
    pub rules: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFlavor {
    pub id: u32,
    pub category: TransitionCategory,
    pub summary: String,
}

/// One detailed scenario. `characters` lists the leaving characters first,
/// then the staying ones, then the arriving ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioVariation {
    pub flavor_id: u32,
    pub category: TransitionCategory,
    pub batch: u32,
    pub index: u32,
    pub start_count: u32,
    pub end_count: u32,
    pub staying_count: u32,
    pub characters: Vec<String>,
    pub choreography: String,
    pub shot_type: String,
    pub camera: String,
    pub interaction: String,
    pub style: String,
}

pub fn record_id(flavor_id: u32, batch: u32, index: u32) -> String {
    format!("f{flavor_id:02}-b{batch:02}-v{index:02}")
}

impl ScenarioVariation {
    pub fn id(&self) -> String {
        record_id(self.flavor_id, self.batch, self.index)
    }

    pub fn start_set(&self) -> CharacterSet {
        self.characters.iter().take(self.start_count as usize).cloned().collect()
    }

    pub fn end_set(&self) -> CharacterSet {
        let skip = self.start_count.saturating_sub(self.staying_count) as usize;
        self.characters.iter().skip(skip).take(self.end_count as usize).cloned().collect()
    }

    /// Category implied by the endpoint identities.
    pub fn derived_category(&self) -> TransitionCategory {
        classify_category(&self.start_set(), &self.end_set())
    }

    /// Problems with this variation, empty when it is well formed.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.start_count > MAX_COUNT || self.end_count > MAX_COUNT {
            out.push(format!("counts {}/{} exceed {MAX_COUNT}", self.start_count, self.end_count));
        }
        if self.staying_count > self.start_count.min(self.end_count) {
            out.push(format!("staying_count {} exceeds an endpoint count", self.staying_count));
        }
        let needed = (self.start_count + self.end_count).saturating_sub(self.staying_count) as usize;
        if self.characters.len() != needed {
            out.push(format!("{} character descriptions for {needed} characters", self.characters.len()));
        }
        if self.characters.iter().collect::<BTreeSet<_>>().len() != self.characters.len() {
            out.push("character descriptions repeat".into());
        }
        if self.category == TransitionCategory::Entry && self.start_count != 0 {
            out.push("Entry scenarios must start from an empty frame".into());
        }
        if !STYLES.contains(&self.style.as_str()) {
            out.push(format!("style \"{}\" is not one of {}", self.style, STYLES.join(", ")));
        }
        if out.is_empty() && self.derived_category() != self.category {
            out.push(format!("counts describe {}, not {}", self.derived_category(), self.category));
        }
        out
    }
}

/// The transition summary carried into manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TauRecord {
    pub category: TransitionCategory,
    pub movement: MovementType,
    pub start_count: u32,
    pub end_count: u32,
    pub staying_count: u32,
    pub exiting_count: u32,
    pub entering_count: u32,
}

impl TauRecord {
    pub fn of(v: &ScenarioVariation) -> Self {
        TauRecord {
            category: v.category,
            movement: v.category.movement(),
            start_count: v.start_count,
            end_count: v.end_count,
            staying_count: v.staying_count,
            exiting_count: v.start_count - v.staying_count,
            entering_count: v.end_count - v.staying_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionPrompt {
    pub id: String,
    /// Position of the record in the corpus; offsets the generation seed.
    pub ordinal: u64,
    pub positive: String,
    pub negative: String,
    pub target_first: u32,
    pub target_last: u32,
    pub tau: TauRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub id: String,
    pub counted_first: u32,
    pub counted_last: u32,
    pub target_first: u32,
    pub target_last: u32,
    pub pass: bool,
    pub rationale: String,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub category: TransitionCategory,
    pub clip: String,
    pub first_frame: String,
    pub last_frame: String,
    /// Prompter text followed by the counting caption.
    pub prompt: String,
    pub tau: TauRecord,
    /// Pass over the category pool this row was drawn in, from 0.
    pub epoch: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub rows: Vec<ManifestRow>,
    pub histogram: BTreeMap<TransitionCategory, usize>,
}

fn reject(path: &str, expected: &str, found: impl Into<String>) -> ValidationReport {
    ValidationReport::from_schema_errors(&[SchemaError {
        path: path.into(),
        expected: expected.into(),
        found: found.into(),
        code: ErrorCode::Schema,
    }])
}

fn parse<T: serde::de::DeserializeOwned>(reply: &Value, key: &str) -> Result<T, ValidationReport> {
    let value = reply.get(key).ok_or_else(|| reject(&format!("$.{key}"), &format!("a \"{key}\" field"), "nothing"))?;
    serde_json::from_value(value.clone()).map_err(|e| reject(&format!("$.{key}"), "the documented shape", e.to_string()))
}

fn categories_text() -> String {
    list(&TransitionCategory::ALL)
}

pub fn setup_scenarios(caller: &LlmCaller, max_characters: u32) -> Result<ScenarioSetup, DatasetError> {
    let input = json!({ "max_characters": max_characters, "categories": TransitionCategory::ALL, "styles": STYLES });
    let vars = [("max_characters", max_characters.to_string()), ("styles", STYLES.join(", "))];
    Ok(caller.ask("scenario_setup", "000", &vars, &input, |reply, _| {
        let setup = ScenarioSetup { documentation: parse(reply, "documentation")?, rules: parse(reply, "rules")? };
        if setup.documentation.trim().is_empty() || setup.rules.is_empty() {
            return Err(reject("$", "a documentation text and at least one rule", "empty fields"));
        }
        Ok(Outcome::accept(setup))
    })?)
}

pub fn generate_flavors(caller: &LlmCaller, setup: &ScenarioSetup) -> Result<Vec<ScenarioFlavor>, DatasetError> {
    let input = json!({ "documentation": setup.documentation, "rules": setup.rules, "count": FLAVOR_COUNT });
    let vars = [("count", FLAVOR_COUNT.to_string()), ("categories", categories_text())];
    Ok(caller.ask("architect", "000", &vars, &input, |reply, _| {
        let flavors: Vec<ScenarioFlavor> = parse(reply, "flavors")?;
        if flavors.len() != FLAVOR_COUNT {
            return Err(reject("$.flavors", &format!("{FLAVOR_COUNT} flavors"), flavors.len().to_string()));
        }
        for (i, f) in flavors.iter().enumerate() {
            if f.id as usize != i + 1 {
                return Err(reject(&format!("$.flavors[{i}].id"), &(i + 1).to_string(), f.id.to_string()));
            }
        }
        let present: BTreeSet<_> = flavors.iter().map(|f| f.category).collect();
        let missing: Vec<_> = TransitionCategory::ALL.into_iter().filter(|c| !present.contains(c)).collect();
        if !missing.is_empty() {
            return Err(reject("$.flavors", "every category", format!("no {}", list(&missing))));
        }
        Ok(Outcome::accept(flavors))
    })?)
}

#[derive(Deserialize)]
struct RawVariation {
    index: u32,
    start_count: u32,
    end_count: u32,
    staying_count: u32,
    characters: Vec<String>,
    choreography: String,
    shot_type: String,
    camera: String,
    interaction: String,
    style: String,
}

/// One batch of variations for a flavor.
pub fn generate_batch(
    caller: &LlmCaller,
    setup: &ScenarioSetup,
    flavor: &ScenarioFlavor,
    batch: u32,
) -> Result<Vec<ScenarioVariation>, DatasetError> {
    let input = json!({
        "documentation": setup.documentation,
        "rules": setup.rules,
        "flavor": flavor,
        "batch": batch,
        "count": BATCH_SIZE,
    });
    let vars = [("batch", batch.to_string()), ("count", BATCH_SIZE.to_string()), ("styles", STYLES.join(", "))];
    let call = format!("f{:02}-b{batch:02}", flavor.id);
    Ok(caller.ask("director", &call, &vars, &input, |reply, _| {
        let raw: Vec<RawVariation> = parse(reply, "variations")?;
        if raw.len() != BATCH_SIZE as usize {
            return Err(reject("$.variations", &format!("{BATCH_SIZE} variations"), raw.len().to_string()));
        }
        let mut out = Vec::with_capacity(raw.len());
        for (i, r) in raw.into_iter().enumerate() {
            let path = format!("$.variations[{i}]");
            if r.index as usize != i + 1 {
                return Err(reject(&format!("{path}.index"), &(i + 1).to_string(), r.index.to_string()));
            }
            let v = ScenarioVariation {
                flavor_id: flavor.id,
                category: flavor.category,
                batch,
                index: r.index,
                start_count: r.start_count,
                end_count: r.end_count,
                staying_count: r.staying_count,
                characters: r.characters,
                choreography: r.choreography,
                shot_type: r.shot_type,
                camera: r.camera,
                interaction: r.interaction,
                style: r.style,
            };
            let problems = v.problems();
            if !problems.is_empty() {
                return Err(reject(&path, "a scenario consistent with its flavor", problems.join("; ")));
            }
            out.push(v);
        }
        Ok(Outcome::accept(out))
    })?)
}

/// All variations of one flavor: `batches` batches of 25.
pub fn generate_variations(
    caller: &LlmCaller,
    setup: &ScenarioSetup,
    flavor: &ScenarioFlavor,
    batches: u32,
) -> Result<Vec<ScenarioVariation>, DatasetError> {
    let mut out = Vec::new();
    for b in 1..=batches {
        out.extend(generate_batch(caller, setup, flavor, b)?);
    }
    Ok(out)
}

pub fn count_clause(start: u32, end: u32) -> String {
    format!(
        "The shot opens with {} in frame and closes with {} in frame.",
        counted(start, "character", "characters"),
        counted(end, "character", "characters")
    )
}

pub fn synthesize_prompt(caller: &LlmCaller, variation: &ScenarioVariation, ordinal: u64) -> Result<TransitionPrompt, DatasetError> {
    let id = variation.id();
    let input = json!({ "variation": variation });
    let (start, end) = (variation.start_count, variation.end_count);
    Ok(caller.ask("prompter", &id, &[], &input, |reply, _| {
        let mut positive: String = parse(reply, "positive")?;
        let negative: String = parse(reply, "negative")?;
        if positive.trim().is_empty() || negative.trim().is_empty() {
            return Err(reject("$", "nonempty positive and negative prompts", "an empty prompt"));
        }
        let mut outcome = None;
        match crate::backends::mock::video::parse_count_clause(&positive) {
            Some(counts) if counts == (start, end) => {}
            Some((s, e)) => {
                return Err(reject("$.positive", &format!("{start} then {end} characters"), format!("{s} then {e}")));
            }
            None => {
                positive = format!("{} {}", positive.trim_end(), count_clause(start, end));
                outcome = Some("count clause appended");
            }
        }
        let prompt = TransitionPrompt {
            id: id.clone(),
            ordinal,
            positive,
            negative,
            target_first: start,
            target_last: end,
            tau: TauRecord::of(variation),
        };
        let accepted = Outcome::accept(prompt);
        Ok(match outcome {
            Some(note) => accepted.with_note(note),
            None => accepted,
        })
    })?)
}

/// Text-to-video generation for one prompt. The seed is `base + ordinal`.
pub fn generate_clip(
    t2v: &BackendHandle,
    prompt: &TransitionPrompt,
    settings: &DatasetSettings,
    base_seed: u64,
) -> Result<Vec<RgbImage>, DatasetError> {
    let request = BackendRequest::new(
        format!("t2v-{}", prompt.id),
        base_seed.wrapping_add(prompt.ordinal),
        RequestPayload::T2v(T2vPayload {
            prompt: prompt.positive.clone(),
            negative_prompt: prompt.negative.clone(),
            width: settings.width,
            height: settings.height,
            frame_count: settings.frame_count,
            fps: settings.fps,
        }),
    );
    let response = t2v.call(&request)?;
    let ResponsePayload::Frames { frames, .. } = response.payload else {
        return Err(DatasetError::BadResponse(format!("{}: expected frames", request.request_id)));
    };
    let frames = frames
        .iter()
        .map(|f| f.decode().map_err(|e| DatasetError::BadResponse(format!("{}: {e}", request.request_id))))
        .collect::<Result<Vec<_>, _>>()?;
    if frames.len() != settings.frame_count as usize {
        return Err(DatasetError::BadResponse(format!(
            "{}: {} frames, asked for {}",
            request.request_id,
            frames.len(),
            settings.frame_count
        )));
    }
    Ok(frames)
}

/// The counting question sent with every filter request.
pub fn counting_question() -> &'static str {
    prompts::template("vlm_count").trim()
}

/// Count figures in the first and last frames and compare with the targets.
pub fn filter_clip(
    id: &str,
    frames: &[RgbImage],
    prompt: &TransitionPrompt,
    vlm: &BackendHandle,
) -> Result<FilterVerdict, DatasetError> {
    let (Some(first), Some(last)) = (frames.first(), frames.last()) else {
        return Err(DatasetError::TooFewFrames { id: id.into(), frames: frames.len() });
    };
    if frames.len() < 2 {
        return Err(DatasetError::TooFewFrames { id: id.into(), frames: frames.len() });
    }
    let request = BackendRequest::new(
        format!("vlm-{id}"),
        0,
        RequestPayload::Vlm(VlmPayload {
            frames: vec![WireImage::from_image(first), WireImage::from_image(last)],
            question: counting_question().to_string(),
        }),
    );
    let response = vlm.call(&request)?;
    let ResponsePayload::Counts { counts, caption } = response.payload else {
        return Err(DatasetError::BadResponse(format!("{}: expected counts", request.request_id)));
    };
    let [counted_first, counted_last] = counts[..] else {
        return Err(DatasetError::BadResponse(format!("{}: {} counts for 2 frames", request.request_id, counts.len())));
    };
    Ok(verdict(id, counted_first, counted_last, prompt, caption))
}

fn verdict(id: &str, counted_first: u32, counted_last: u32, prompt: &TransitionPrompt, caption: String) -> FilterVerdict {
    let (tf, tl) = (prompt.target_first, prompt.target_last);
    let mut misses = Vec::new();
    if counted_first != tf {
        misses.push(format!("first frame shows {}, prompt asks for {tf}", counted(counted_first, "character", "characters")));
    }
    if counted_last != tl {
        misses.push(format!("last frame shows {}, prompt asks for {tl}", counted(counted_last, "character", "characters")));
    }
    let pass = misses.is_empty();
    let rationale =
        if pass { format!("both endpoint counts match ({tf} then {tl})") } else { misses.join("; ") };
    FilterVerdict {
        id: id.into(),
        counted_first,
        counted_last,
        target_first: tf,
        target_last: tl,
        pass,
        rationale,
        caption,
    }
}

pub fn clip_dir(id: &str) -> String {
    format!("clips/{id}")
}

/// Balanced manifest over passing clips. Each category gets an equal share
/// of `rows` (remainder to the earlier categories); a category pool is drawn
/// without replacement and reshuffled once exhausted.
pub fn assemble_manifest(
    verdicts: &[FilterVerdict],
    prompts: &[TransitionPrompt],
    rows: usize,
    seed: u64,
) -> Result<TrainingManifest, DatasetError> {
    let by_id: BTreeMap<&str, &TransitionPrompt> = prompts.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut pools: BTreeMap<TransitionCategory, Vec<(&FilterVerdict, &TransitionPrompt)>> = BTreeMap::new();
    for v in verdicts.iter().filter(|v| v.pass) {
        let p = by_id
            .get(v.id.as_str())
            .ok_or_else(|| DatasetError::BadResponse(format!("verdict {} has no prompt", v.id)))?;
        pools.entry(p.tau.category).or_default().push((v, p));
    }
    let empty: Vec<_> = TransitionCategory::ALL.into_iter().filter(|c| !pools.contains_key(c)).collect();
    if !empty.is_empty() {
        return Err(DatasetError::EmptyCategory { categories: empty });
    }
    let k = TransitionCategory::ALL.len();
    let mut out = Vec::with_capacity(rows);
    let mut histogram = BTreeMap::new();
    for (ci, category) in TransitionCategory::ALL.into_iter().enumerate() {
        let quota = rows / k + usize::from(ci < rows % k);
        let pool = &mut pools.get_mut(&category).expect("checked above");
        pool.sort_by(|a, b| a.0.id.cmp(&b.0.id));
        let mut rng = seeded_rng(stable_hash([b"manifest".as_slice(), &seed.to_le_bytes(), category.as_str().as_bytes()]));
        let mut order: Vec<usize> = Vec::new();
        for n in 0..quota {
            if n % pool.len() == 0 {
                order = (0..pool.len()).collect();
                order.shuffle(&mut rng);
            }
            let (v, p) = pool[order[n % pool.len()]];
            let dir = clip_dir(&v.id);
            out.push(ManifestRow {
                id: v.id.clone(),
                category,
                clip: format!("{dir}/frames.png"),
                first_frame: format!("{dir}/first.png"),
                last_frame: format!("{dir}/last.png"),
                prompt: format!("{} {}", p.positive.trim_end(), v.caption),
                tau: p.tau,
                epoch: (n / pool.len()) as u32,
            });
        }
        histogram.insert(category, quota);
    }
    let mut rng = seeded_rng(stable_hash([b"manifest-order".as_slice(), &seed.to_le_bytes()]));
    out.shuffle(&mut rng);
    Ok(TrainingManifest { rows: out, histogram })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn variation(category: TransitionCategory, s: u32, e: u32, k: u32) -> ScenarioVariation {
        let n = s + e - k;
        ScenarioVariation {
            flavor_id: 1,
            category,
            batch: 1,
            index: 1,
            start_count: s,
            end_count: e,
            staying_count: k,
            characters: (0..n).map(|i| format!("c{i}")).collect(),
            choreography: String::new(),
            shot_type: "wide shot".into(),
            camera: "static camera".into(),
            interaction: "none".into(),
            style: "anime".into(),
        }
    }

    #[test]
    fn endpoint_sets_follow_character_order() {
        let v = variation(TransitionCategory::Combination, 3, 2, 1);
        let names = |s: CharacterSet| s.into_iter().collect::<Vec<_>>();
        assert_eq!(names(v.start_set()), ["c0", "c1", "c2"]);
        assert_eq!(names(v.end_set()), ["c2", "c3"]);
        assert!(v.problems().is_empty());
    }

    #[test]
    fn problems_catch_category_mismatch() {
        assert!(variation(TransitionCategory::Replacement, 2, 2, 0).problems().is_empty());
        assert!(!variation(TransitionCategory::Replacement, 2, 2, 2).problems().is_empty());
        assert!(!variation(TransitionCategory::Entry, 1, 2, 1).problems().is_empty());
        let mut v = variation(TransitionCategory::Exit, 2, 1, 1);
        v.style = "photoreal".into();
        assert!(!v.problems().is_empty());
    }

    #[test]
    fn verdict_names_the_failing_frame() {
        let p = TransitionPrompt {
            id: "x".into(),
            ordinal: 0,
            positive: String::new(),
            negative: String::new(),
            target_first: 0,
            target_last: 1,
            tau: TauRecord::of(&variation(TransitionCategory::Entry, 0, 1, 0)),
        };
        assert!(verdict("x", 0, 1, &p, String::new()).pass);
        let v = verdict("x", 1, 1, &p, String::new());
        assert!(!v.pass);
        assert!(v.rationale.starts_with("first frame"));
        assert!(!v.rationale.contains("last frame"));
    }
}
