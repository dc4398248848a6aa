//! Rule-based stand-in for the language model seat.
//!
//! Every prompt ends with a fenced JSON block holding the stage input. The
//! templater reads the last such block and answers with a reply that is valid
//! by construction, unless a fault has been armed for that stage.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::schema::{mentioned_characters, CharacterSet, Emotion, Interaction, Pose, Vocabulary};
use crate::transition::{metadata_from_sets, TransitionCategory};
use crate::dataset::count_clause;
use crate::util::{agree, counted, seeded_rng, stable_hash};

/// Opt-in corruptions, each consumed once per armed count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmFault {
    /// A chapter lists the character "Zed", who is not in the story.
    UnknownCharacter,
    /// Two locations share a name.
    DuplicateLocation,
    /// A background description names a character.
    CharacterInBackground,
    /// A scene asks for an even number of shots.
    EvenShotCount,
    /// Two consecutive scenes reuse a location.
    AdjacentLocation,
    /// A transition shot states the wrong exiting set.
    WrongTransition,
    /// The architect returns 39 flavors.
    MissingFlavor,
    /// The reply is not JSON at all.
    MalformedJson,
}

impl LlmFault {
    pub const ALL: [LlmFault; 8] = [
        LlmFault::UnknownCharacter,
        LlmFault::DuplicateLocation,
        LlmFault::CharacterInBackground,
        LlmFault::EvenShotCount,
        LlmFault::AdjacentLocation,
        LlmFault::WrongTransition,
        LlmFault::MissingFlavor,
        LlmFault::MalformedJson,
    ];

    /// Stage whose replies the fault corrupts; `None` means any stage.
    pub fn stage(self) -> Option<&'static str> {
        match self {
            LlmFault::UnknownCharacter => Some("chapter"),
            LlmFault::DuplicateLocation | LlmFault::CharacterInBackground => Some("location"),
            LlmFault::EvenShotCount | LlmFault::AdjacentLocation => Some("scene"),
            LlmFault::WrongTransition => Some("shot"),
            LlmFault::MissingFlavor => Some("architect"),
            LlmFault::MalformedJson => None,
        }
    }

    pub fn parse(s: &str) -> Option<LlmFault> {
        serde_json::from_value(Value::String(s.to_string())).ok()
    }
}

pub const STAGES: [&str; 8] = ["chapter", "location", "scene", "shot", "scenario_setup", "architect", "director", "prompter"];

pub const MOCK_CHAPTERS: usize = 12;
pub const MOCK_LOCATIONS: usize = 10;
pub const FLAVORS: usize = 40;
pub const BATCH_SIZE: usize = 25;

/// The JSON input block of a prompt: the contents of the last ```json fence.
pub fn extract_input(prompt: &str) -> Option<Value> {
    let start = prompt.rfind("```json")? + "```json".len();
    let rest = &prompt[start..];
    let end = rest.find("```")?;
    serde_json::from_str(rest[..end].trim()).ok()
}

/// Answer one stage call. `fault` is the armed fault consumed by this call.
pub fn respond(stage: &str, prompt: &str, seed: u64, fault: Option<LlmFault>) -> Result<String, String> {
    if fault == Some(LlmFault::MalformedJson) {
        return Ok("Sure! Here is the plan you asked for: {chapters: [".to_string());
    }
    let input = extract_input(prompt).ok_or_else(|| format!("{stage} prompt carries no ```json input block"))?;
    let canonical = serde_json::to_string(&input).expect("value serializes");
    let mut rng = seeded_rng(stable_hash([stage.as_bytes(), &seed.to_le_bytes(), canonical.as_bytes()]));
    let reply = match stage {
        "chapter" => chapters(&input, &mut rng, fault),
        "location" => locations(&input, &mut rng, fault),
        "scene" => scenes(&input, &mut rng, fault),
        "shot" => shots(&input, &mut rng, fault),
        "scenario_setup" => scenario_setup(&input),
        "architect" => architect(&input, fault),
        "director" => director(&input, &mut rng),
        "prompter" => prompter(&input, &mut rng),
        other => return Err(format!("unknown stage \"{other}\"")),
    }?;
    Ok(serde_json::to_string_pretty(&reply).expect("reply serializes"))
}

fn str_list(v: &Value) -> Vec<String> {
    v.as_array().map(|a| a.iter().filter_map(|s| s.as_str().map(String::from)).collect()).unwrap_or_default()
}

fn names_of(input: &Value) -> Vec<String> {
    match input.get("characters") {
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(|c| c.as_str().map(String::from).or_else(|| c.get("name")?.as_str().map(String::from)))
            .collect(),
        _ => Vec::new(),
    }
}

fn subset(rng: &mut ChaCha8Rng, pool: &[String], lo: usize, hi: usize) -> Vec<String> {
    let hi = hi.min(pool.len());
    let lo = lo.min(hi);
    let n = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let mut picked: Vec<String> = pool.to_vec();
    picked.shuffle(rng);
    picked.truncate(n);
    picked.sort();
    picked
}

fn join_names(names: &[String]) -> String {
    match names {
        [] => "Nobody".to_string(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

const BEATS: [&str; 12] = [
    "cross paths for the first time",
    "uncover a map hidden in an old book",
    "argue over which road to take",
    "hide from a passing patrol",
    "bargain for safe passage",
    "find the first clue to the missing bell",
    "repair a broken cart before dusk",
    "share a quiet meal and old stories",
    "follow footprints into unfamiliar ground",
    "are separated by a sudden storm",
    "reunite and compare what they learned",
    "return the bell and part as friends",
];

const DAY_PARTS: [&str; 4] = ["Morning", "Afternoon", "Evening", "Night"];

fn chapters(input: &Value, rng: &mut ChaCha8Rng, fault: Option<LlmFault>) -> Result<Value, String> {
    let names = names_of(input);
    if names.is_empty() {
        return Err("chapter input lists no characters".into());
    }
    let mut out = Vec::new();
    for i in 0..MOCK_CHAPTERS {
        let mut cast = subset(rng, &names, 1, 3);
        if fault == Some(LlmFault::UnknownCharacter) && i == 0 {
            cast.push("Zed".into());
        }
        let summary = format!("{} {}.", join_names(&cast), BEATS[i % BEATS.len()]);
        out.push(json!({
            "index": i + 1,
            "summary": summary,
            "characters": cast,
            "timeline": format!("Day {}, {}", i / 3 + 1, DAY_PARTS[i % 4]),
            "justification": format!("Beat {} of {} keeps the cast focused on one goal.", i + 1, MOCK_CHAPTERS),
        }));
    }
    let mut notes = BTreeMap::new();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            let kind = ["old friends", "wary rivals", "siblings", "mentor and student"][rng.random_range(0..4)];
            notes.insert(format!("{a}|{b}"), kind.to_string());
        }
    }
    Ok(json!({ "chapters": out, "notes": notes }))
}

const LOCATION_POOL: [&str; 20] = [
    "Castle",
    "Forest",
    "Harbor",
    "Library",
    "Market",
    "Tavern",
    "Meadow",
    "Cavern",
    "Tower",
    "Bridge",
    "Garden",
    "Chapel",
    "Workshop",
    "Lighthouse",
    "Courtyard",
    "Orchard",
    "Observatory",
    "Cellar",
    "Ridge",
    "Station",
];

const TEXTURES: [&str; 8] = [
    "weathered stone",
    "pale timber",
    "mossy ground",
    "cracked tiles",
    "wet cobbles",
    "dry grass",
    "polished brass",
    "rough plaster",
];
const LIGHTS: [&str; 6] = [
    "Soft morning light spills across the space.",
    "Long amber shadows stretch over the floor.",
    "Grey overcast light flattens every colour.",
    "Lanterns glow warmly against the dusk.",
    "Bright noon sun bleaches the upper walls.",
    "Cool blue moonlight rests on every edge.",
];
const DETAILS: [&str; 6] = [
    "The air is still and smells faintly of rain.",
    "A low breeze stirs loose leaves in one corner.",
    "Distant bells can be heard beyond the walls.",
    "Dust hangs in the light above the ground.",
    "Water drips steadily somewhere out of view.",
    "Birds call from somewhere high overhead.",
];

fn free_of(text: &str, names: &CharacterSet) -> bool {
    mentioned_characters(text, names).is_empty()
}

fn locations(input: &Value, rng: &mut ChaCha8Rng, fault: Option<LlmFault>) -> Result<Value, String> {
    let names: CharacterSet = names_of(input).into_iter().collect();
    let mut pool: Vec<&str> = LOCATION_POOL[2..].iter().copied().filter(|l| free_of(l, &names)).collect();
    pool.shuffle(rng);
    let mut chosen: Vec<&str> = LOCATION_POOL[..2].iter().copied().filter(|l| free_of(l, &names)).collect();
    chosen.extend(pool.into_iter().take(MOCK_LOCATIONS - chosen.len()));
    let mut out = Vec::new();
    for (i, name) in chosen.iter().enumerate() {
        let texture = TEXTURES.choose(rng).expect("nonempty");
        let mut sentences = vec![format!("A quiet {} of {texture}.", name.to_lowercase())];
        let mut extras: Vec<&str> = LIGHTS.iter().chain(DETAILS.iter()).copied().collect();
        extras.shuffle(rng);
        sentences.extend(extras.into_iter().filter(|s| free_of(s, &names)).take(2).map(String::from));
        let mut description = sentences.join(" ");
        if fault == Some(LlmFault::CharacterInBackground) && i == 0 {
            if let Some(n) = names.iter().next() {
                description = format!("{n} waits by the entrance. {description}");
            }
        }
        let name = if fault == Some(LlmFault::DuplicateLocation) && i == 1 { chosen[0] } else { name };
        out.push(json!({ "name": name, "background_description": description }));
    }
    Ok(json!({ "locations": out }))
}

const TONES: [&str; 6] = ["hopeful", "tense", "playful", "somber", "curious", "urgent"];

fn scenes(input: &Value, rng: &mut ChaCha8Rng, fault: Option<LlmFault>) -> Result<Value, String> {
    let locations = str_list(input.get("locations").unwrap_or(&Value::Null));
    if locations.len() < 2 {
        return Err("scene stage needs at least two locations".into());
    }
    let chapters = input.get("chapters").and_then(Value::as_array).cloned().unwrap_or_default();
    let mut out = Vec::new();
    let mut prev: Option<String> = None;
    for ch in &chapters {
        let ch_index = ch.get("index").and_then(Value::as_u64).unwrap_or(1);
        let cast = str_list(ch.get("characters").unwrap_or(&Value::Null));
        let count = rng.random_range(1..=2);
        for _ in 0..count {
            let choices: Vec<&String> = locations.iter().filter(|l| Some(*l) != prev.as_ref()).collect();
            let mut location = (*choices.choose(rng).expect("two or more locations")).clone();
            let index = out.len() + 1;
            if fault == Some(LlmFault::AdjacentLocation) && index == 2 {
                location = prev.clone().unwrap_or(location);
            }
            let mut shot_count = *[1u32, 3, 3, 5].choose(rng).expect("nonempty");
            if fault == Some(LlmFault::EvenShotCount) && index == 1 {
                shot_count = 4;
            }
            let scene_cast = subset(rng, &cast, 1, 3);
            let tone = TONES.choose(rng).expect("nonempty");
            out.push(json!({
                "chapter_index": ch_index,
                "index": index,
                "location_name": location,
                "characters": scene_cast,
                "tone": tone,
                "shot_count": shot_count,
                "summary": format!("{} in the {}, {tone}.", join_names(&scene_cast), location.to_lowercase()),
            }));
            prev = Some(location);
        }
    }
    Ok(json!({ "scenes": out }))
}

const LINES: [&str; 6] = [
    "Did you hear that?",
    "We should keep moving.",
    "I know this place.",
    "Stay close to me.",
    "Look over there!",
    "It was here all along.",
];
const CAMERAS: [&str; 5] = [
    "medium shot, static",
    "wide shot, slow pan",
    "close-up, slight push-in",
    "over-the-shoulder, static",
    "wide shot, gentle dolly",
];

fn shots(input: &Value, rng: &mut ChaCha8Rng, fault: Option<LlmFault>) -> Result<Value, String> {
    let scene = input.get("scene").ok_or("shot input lacks a scene")?;
    let scene_index = scene.get("index").and_then(Value::as_u64).ok_or("scene lacks an index")?;
    let count = scene.get("shot_count").and_then(Value::as_u64).ok_or("scene lacks shot_count")? as u32;
    let location = scene.get("location_name").and_then(Value::as_str).unwrap_or("scene").to_lowercase();
    let cast = str_list(scene.get("characters").unwrap_or(&Value::Null));
    let mut narrative: BTreeMap<u32, Vec<String>> = BTreeMap::new();
    let mut previous: Option<Vec<String>> = None;
    for k in (1..=count).step_by(2) {
        let mut pick = subset(rng, &cast, 1, 2);
        // vary consecutive casts so transitions exercise every movement type
        if previous.as_ref() == Some(&pick) && cast.len() > 1 && rng.random_bool(0.6) {
            pick = subset(rng, &cast, 1, 2);
        }
        previous = Some(pick.clone());
        narrative.insert(k, pick);
    }
    let mut out = Vec::new();
    for k in 1..=count {
        if k % 2 == 1 {
            let chars = &narrative[&k];
            let mut pose = BTreeMap::new();
            let mut emotion = BTreeMap::new();
            for c in chars {
                pose.insert(c.clone(), *Pose::all().choose(rng).expect("nonempty"));
                emotion.insert(c.clone(), *Emotion::all().choose(rng).expect("nonempty"));
            }
            let interaction =
                if chars.len() == 2 { *Interaction::all().choose(rng).expect("nonempty") } else { Interaction::None };
            let described: Vec<String> = chars.iter().map(|c| format!("{c} {}", pose[c].phrase())).collect();
            let mut shot = json!({
                "scene_index": scene_index,
                "index": k,
                "kind": "Narrative",
                "emotion": emotion,
                "pose": pose,
                "interaction": interaction,
                "keyframe_prompt": format!("{} in the {location}.", join_names(&described)),
                "video_prompt": format!("{} continue {}, {}.", join_names(chars), if interaction == Interaction::None { "alone".to_string() } else { interaction.phrase().to_string() }, emotion.values().map(|e: &Emotion| e.phrase()).collect::<Vec<_>>().join(" and ")),
                "camera": CAMERAS.choose(rng).expect("nonempty"),
            });
            if rng.random_bool(0.5) {
                let start = rng.random_range(0..=4) as f64 * 0.5;
                let end = start + rng.random_range(2..=6) as f64 * 0.5;
                shot["dialogue"] = json!({
                    "text": LINES.choose(rng).expect("nonempty"),
                    "start_s": start,
                    "end_s": end.min(5.0),
                });
            }
            out.push(shot);
        } else {
            let start: CharacterSet = narrative[&(k - 1)].iter().cloned().collect();
            let end: CharacterSet = narrative[&(k + 1)].iter().cloned().collect();
            let tau = metadata_from_sets(&start, &end);
            let mut tau_json = serde_json::to_value(&tau).expect("metadata serializes");
            if fault == Some(LlmFault::WrongTransition) {
                tau_json["exiting"] = json!(start.iter().collect::<Vec<_>>());
            }
            out.push(json!({
                "scene_index": scene_index,
                "index": k,
                "kind": "Transition",
                "emotion": {},
                "pose": {},
                "interaction": "None",
                "video_prompt": tau.description,
                "camera": "wide shot, static",
                "transition": tau_json,
            }));
        }
    }
    Ok(json!({ "shots": out }))
}

pub const STYLES: [&str; 3] = ["anime", "cartoon", "3D animation"];

fn scenario_setup(input: &Value) -> Result<Value, String> {
    let max = input.get("max_characters").and_then(Value::as_u64).unwrap_or(4);
    Ok(json!({
        "documentation": format!(
            "Transitions run five seconds in one continuous take. Characters enter and leave only across frame edges. \
             Endpoints hold between zero and {max} characters. Every scene uses its own location."
        ),
        "rules": [
            "Entry scenarios start from a completely empty frame.",
            format!("Never exceed {max} characters in any frame."),
            "Use anime, cartoon or 3D animation styles only.",
            "Do not reuse a location within a batch.",
        ],
    }))
}

fn flavor_summary(category: TransitionCategory, i: usize) -> String {
    let settings = ["rooftop garden", "train platform", "snowy field", "library aisle", "beach boardwalk", "night market", "castle hall", "forest trail"];
    let setting = settings[i % settings.len()];
    match category {
        TransitionCategory::Entry => format!("Figures step into an empty {setting}."),
        TransitionCategory::Exit => format!("Figures leave the {setting} one by one."),
        TransitionCategory::Replacement => format!("One group leaves the {setting} as another arrives."),
        TransitionCategory::NoChange => format!("The same figures stay together in the {setting}."),
        TransitionCategory::Combination => format!("Some figures stay in the {setting} while others come and go."),
    }
}

fn architect(input: &Value, fault: Option<LlmFault>) -> Result<Value, String> {
    let count = input.get("count").and_then(Value::as_u64).unwrap_or(FLAVORS as u64) as usize;
    let mut out = Vec::new();
    for i in 0..count {
        let category = TransitionCategory::ALL[i % TransitionCategory::ALL.len()];
        out.push(json!({ "id": i + 1, "category": category, "summary": flavor_summary(category, i / 5) }));
    }
    if fault == Some(LlmFault::MissingFlavor) {
        out.pop();
    }
    Ok(json!({ "flavors": out }))
}

/// Endpoint counts `(start, end, staying)` for a category.
pub fn counts_for(category: TransitionCategory, rng: &mut ChaCha8Rng) -> (u32, u32, u32) {
    match category {
        TransitionCategory::Entry => (0, rng.random_range(1..=4), 0),
        TransitionCategory::Exit => {
            let s = rng.random_range(1..=4);
            let e = rng.random_range(0..s);
            (s, e, e)
        }
        TransitionCategory::Replacement => {
            let s = rng.random_range(1..=4);
            (s, s, 0)
        }
        TransitionCategory::NoChange => {
            let s = rng.random_range(1..=4);
            (s, s, s)
        }
        TransitionCategory::Combination => loop {
            let s = rng.random_range(1..=4);
            let e = rng.random_range(1..=4);
            let k = rng.random_range(0..=s.min(e));
            let left = s - k;
            let came = e - k;
            if left > 0 && came > 0 && !(s == e && k == 0) {
                break (s, e, k);
            }
        },
    }
}

const LOOKS: [&str; 8] = [
    "a tall courier in a red scarf",
    "a child with a yellow raincoat",
    "an old fisherman with a grey beard",
    "a knight in dented armour",
    "a dancer in a flowing blue dress",
    "a student carrying a stack of books",
    "a chef in a white apron",
    "a traveller with a huge backpack",
];
const SHOT_TYPES: [&str; 4] = ["wide shot", "medium shot", "full shot", "medium-wide shot"];
const CAMERA_MOVES: [&str; 4] = ["static camera", "slow pan", "gentle dolly-in", "slight tilt"];
const INTERACTIONS: [&str; 4] = ["none", "waving", "talking", "handing over an object"];

fn director(input: &Value, rng: &mut ChaCha8Rng) -> Result<Value, String> {
    let flavor = input.get("flavor").ok_or("director input lacks a flavor")?;
    let category: TransitionCategory =
        serde_json::from_value(flavor.get("category").cloned().unwrap_or(Value::Null)).map_err(|e| e.to_string())?;
    let count = input.get("count").and_then(Value::as_u64).unwrap_or(BATCH_SIZE as u64) as usize;
    let mut out = Vec::new();
    for i in 0..count {
        let (start, end, staying) = counts_for(category, rng);
        let needed = (start + end - staying) as usize;
        let mut looks: Vec<&str> = LOOKS.to_vec();
        looks.shuffle(rng);
        let characters: Vec<&str> = looks.into_iter().take(needed).collect();
        let (leaving, arriving) = (start - staying, end - staying);
        let choreography = match category {
            TransitionCategory::Entry => {
                format!("{} {} in from the edges of an empty frame.", figures(end), agree(end, "walks", "walk"))
            }
            TransitionCategory::Exit => {
                format!("{leaving} of {} {} out of frame.", figures(start), agree(leaving, "walks", "walk"))
            }
            TransitionCategory::Replacement => format!(
                "{} {} while {arriving} new {} {}.",
                figures(start),
                agree(start, "leaves", "leave"),
                agree(arriving, "figure", "figures"),
                agree(arriving, "arrives", "arrive")
            ),
            TransitionCategory::NoChange => {
                format!("{} {} in frame and {} position.", figures(start), agree(start, "stays", "stay"), agree(start, "shifts", "shift"))
            }
            TransitionCategory::Combination => format!(
                "{} {}, {leaving} {} and {arriving} {}.",
                figures(staying),
                agree(staying, "stays", "stay"),
                agree(leaving, "leaves", "leave"),
                agree(arriving, "arrives", "arrive")
            ),
        };
        out.push(json!({
            "index": i + 1,
            "start_count": start,
            "end_count": end,
            "staying_count": staying,
            "characters": characters,
            "choreography": choreography,
            "shot_type": SHOT_TYPES.choose(rng).expect("nonempty"),
            "camera": CAMERA_MOVES.choose(rng).expect("nonempty"),
            "interaction": INTERACTIONS.choose(rng).expect("nonempty"),
            "style": STYLES.choose(rng).expect("nonempty"),
        }));
    }
    Ok(json!({ "variations": out }))
}

fn figures(n: u32) -> String {
    counted(n, "figure", "figures")
}

fn prompter(input: &Value, rng: &mut ChaCha8Rng) -> Result<Value, String> {
    let v = input.get("variation").ok_or("prompter input lacks a variation")?;
    let start = v.get("start_count").and_then(Value::as_u64).ok_or("variation lacks start_count")?;
    let end = v.get("end_count").and_then(Value::as_u64).ok_or("variation lacks end_count")?;
    let style = v.get("style").and_then(Value::as_str).unwrap_or("cartoon");
    let shot = v.get("shot_type").and_then(Value::as_str).unwrap_or("wide shot");
    let camera = v.get("camera").and_then(Value::as_str).unwrap_or("static camera");
    let chore = v.get("choreography").and_then(Value::as_str).unwrap_or("");
    let who: BTreeSet<String> = str_list(v.get("characters").unwrap_or(&Value::Null)).into_iter().collect();
    let who: Vec<String> = who.into_iter().collect();
    let mood = ["bright", "calm", "lively", "dreamy"].choose(rng).expect("nonempty");
    let positive = format!(
        "{style} style, {shot}, {camera}, {mood} setting. Characters: {}. {chore} \
{}",
        if who.is_empty() { "none".to_string() } else { who.join("; ") },
        count_clause(start as u32, end as u32)
    );
    let negative = "extra people, people appearing suddenly, people vanishing mid-frame, duplicated characters, \
                    cut or scene change, photorealistic style, blurry, distorted limbs, text, watermark";
    Ok(json!({ "positive": positive, "negative": negative }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompt(input: Value) -> String {
        format!("Instructions...\n```json\n{}\n```\n", serde_json::to_string_pretty(&input).unwrap())
    }

    #[test]
    fn extracts_last_block() {
        let p = "```json\n{\"a\":1}\n```\nmore\n```json\n{\"b\":2}\n```";
        assert_eq!(extract_input(p), Some(json!({"b": 2})));
    }

    #[test]
    fn chapters_use_only_story_characters() {
        let p = prompt(json!({"story": "x", "characters": [{"name": "A", "description": ""}, {"name": "B", "description": ""}]}));
        let reply: Value = serde_json::from_str(&respond("chapter", &p, 1, None).unwrap()).unwrap();
        let chapters = reply["chapters"].as_array().unwrap();
        assert_eq!(chapters.len(), MOCK_CHAPTERS);
        for ch in chapters {
            for c in str_list(&ch["characters"]) {
                assert!(c == "A" || c == "B");
            }
        }
        let again = respond("chapter", &p, 1, None).unwrap();
        assert_eq!(serde_json::to_string_pretty(&reply).unwrap(), again);
    }

    #[test]
    fn locations_avoid_character_names() {
        let p = prompt(json!({"characters": ["Ann", "Tower"]}));
        let reply: Value = serde_json::from_str(&respond("location", &p, 3, None).unwrap()).unwrap();
        let names: CharacterSet = ["Ann".to_string(), "Tower".to_string()].into();
        let locs = reply["locations"].as_array().unwrap();
        assert_eq!(locs.len(), MOCK_LOCATIONS);
        for l in locs {
            assert!(free_of(l["background_description"].as_str().unwrap(), &names));
        }
    }

    #[test]
    fn architect_balances_categories() {
        let p = prompt(json!({"count": 40}));
        let reply: Value = serde_json::from_str(&respond("architect", &p, 1, None).unwrap()).unwrap();
        let mut hist = BTreeMap::new();
        for f in reply["flavors"].as_array().unwrap() {
            *hist.entry(f["category"].as_str().unwrap().to_string()).or_insert(0) += 1;
        }
        assert_eq!(hist.len(), 5);
        assert!(hist.values().all(|&n| n == 8));
        let short: Value =
            serde_json::from_str(&respond("architect", &p, 1, Some(LlmFault::MissingFlavor)).unwrap()).unwrap();
        assert_eq!(short["flavors"].as_array().unwrap().len(), 39);
    }

    #[test]
    fn category_counts_classify_back() {
        let mut rng = seeded_rng(9);
        for cat in TransitionCategory::ALL {
            for _ in 0..200 {
                let (s, e, k) = counts_for(cat, &mut rng);
                assert!(s <= 4 && e <= 4 && k <= s.min(e));
                let start: CharacterSet = (0..s).map(|i| format!("s{i}")).collect();
                let end: CharacterSet =
                    (0..k).map(|i| format!("s{i}")).chain((0..e - k).map(|i| format!("n{i}"))).collect();
                assert_eq!(crate::transition::classify_category(&start, &end), cat);
                if cat == TransitionCategory::Entry {
                    assert_eq!(s, 0);
                }
            }
        }
    }

    #[test]
    fn malformed_fault_is_not_json() {
        let out = respond("chapter", "", 1, Some(LlmFault::MalformedJson)).unwrap();
        assert!(serde_json::from_str::<Value>(&out).is_err());
    }

    #[test]
    fn fault_names_parse() {
        assert_eq!(LlmFault::parse("unknown_character"), Some(LlmFault::UnknownCharacter));
        assert_eq!(LlmFault::parse("nope"), None);
    }
}
