//! Synthetic valid plans for demos, tests and benchmarks.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::RngExt;

use crate::schema::{
    CharacterRef, CharacterSet, Chapter, Emotion, Interaction, LocationEntry, Pose, Scene, ShotDirective, ShotKind,
    StoryPlan, StorySpec, Vocabulary, PLAN_VERSION,
};
use crate::transition::metadata_from_sets;
use crate::util::seeded_rng;

/// One narrative shot: characters with their poses.
pub type Cast = Vec<(String, Pose)>;

#[derive(Debug, Clone, Default)]
pub struct PlanBuilder {
    characters: Vec<String>,
    locations: Vec<LocationEntry>,
    scenes: Vec<(String, Vec<Cast>)>,
}

pub fn cast(members: &[(&str, Pose)]) -> Cast {
    members.iter().map(|(n, p)| (n.to_string(), *p)).collect()
}

impl PlanBuilder {
    pub fn new(characters: &[&str]) -> Self {
        PlanBuilder { characters: characters.iter().map(|s| s.to_string()).collect(), ..Default::default() }
    }

    pub fn location(mut self, name: &str, description: &str) -> Self {
        self.locations.push(LocationEntry { name: name.into(), background_description: description.into() });
        self
    }

    /// A scene whose narrative shots have the given casts; transitions between
    /// them are filled in with derived metadata.
    pub fn scene(mut self, location: &str, narratives: Vec<Cast>) -> Self {
        assert!(!narratives.is_empty(), "a scene needs at least one narrative shot");
        self.scenes.push((location.to_string(), narratives));
        self
    }

    pub fn build(self) -> StoryPlan {
        let spec = StorySpec {
            description: "A synthetic story used to exercise the renderer.".into(),
            characters: self
                .characters
                .iter()
                .map(|n| CharacterRef { name: n.clone(), description: format!("{n}, a figure in a plain coat"), reference_image: None })
                .collect(),
        };
        let everyone: CharacterSet = self.characters.iter().cloned().collect();
        let mut chapters = Vec::new();
        let mut scenes = Vec::new();
        let mut shots = Vec::new();
        for (i, (location, narratives)) in self.scenes.iter().enumerate() {
            let index = i as u32 + 1;
            let present: CharacterSet = narratives.iter().flatten().map(|(n, _)| n.clone()).collect();
            chapters.push(Chapter {
                index,
                summary: format!("Chapter {index} happens at {location}."),
                characters: everyone.clone(),
                timeline: format!("day {index}"),
                justification: "needed for the test story".into(),
            });
            scenes.push(Scene {
                chapter_index: index,
                index,
                location_name: location.clone(),
                characters: present,
                tone: "calm".into(),
                shot_count: (2 * narratives.len() - 1) as u32,
                summary: String::new(),
            });
            let narrative = |k: u32, c: &Cast| ShotDirective {
                scene_index: index,
                index: k,
                kind: ShotKind::Narrative,
                emotion: c.iter().map(|(n, _)| (n.clone(), Emotion::Neutral)).collect(),
                pose: c.iter().map(|(n, p)| (n.clone(), *p)).collect(),
                interaction: Interaction::None,
                dialogue: None,
                keyframe_prompt: Some(format!("Scene {index}, shot {k} at {location}.")),
                video_prompt: format!("The figures go about their business at {location}."),
                camera: "medium shot".into(),
                transition: None,
            };
            for (j, c) in narratives.iter().enumerate() {
                let k = 2 * j as u32 + 1;
                if j > 0 {
                    let start: CharacterSet = narratives[j - 1].iter().map(|(n, _)| n.clone()).collect();
                    let end: CharacterSet = c.iter().map(|(n, _)| n.clone()).collect();
                    shots.push(ShotDirective {
                        scene_index: index,
                        index: k - 1,
                        kind: ShotKind::Transition,
                        emotion: BTreeMap::new(),
                        pose: BTreeMap::new(),
                        interaction: Interaction::None,
                        dialogue: None,
                        keyframe_prompt: None,
                        video_prompt: "The view holds while people come and go.".into(),
                        camera: "wide shot, static".into(),
                        transition: Some(metadata_from_sets(&start, &end)),
                    });
                }
                shots.push(narrative(k, c));
            }
        }
        StoryPlan {
            plan_version: PLAN_VERSION,
            spec,
            notes: Default::default(),
            chapters,
            locations: self.locations,
            scenes,
            shots,
        }
    }
}

const PLACES: [&str; 6] = ["Castle", "Forest", "Harbor", "Market", "Library", "Meadow"];
const NAMES: [&str; 4] = ["Ada", "Bram", "Cleo", "Dov"];

/// A random valid plan: `scenes` scenes of 1 to `max_narratives` narrative
/// shots, casts of at most two drawn from four characters.
pub fn random_plan(seed: u64, scenes: usize, max_narratives: usize) -> StoryPlan {
    let mut rng = seeded_rng(seed);
    let mut b = PlanBuilder::new(&NAMES);
    for p in PLACES {
        b = b.location(p, &format!("the quiet {} under grey light", p.to_lowercase()));
    }
    let mut last = "";
    for _ in 0..scenes {
        let loc = *PLACES.iter().filter(|p| **p != last).collect::<Vec<_>>().choose(&mut rng).expect("places");
        last = loc;
        let n = rng.random_range(1..=max_narratives.max(1));
        let casts = (0..n)
            .map(|_| {
                let k = rng.random_range(0..=2usize);
                let mut names = NAMES.to_vec();
                names.shuffle(&mut rng);
                names[..k].iter().map(|n| (n.to_string(), *Pose::all().choose(&mut rng).expect("poses"))).collect()
            })
            .collect();
        b = b.scene(loc, casts);
    }
    b.build()
}
