use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use super::vocab::{Emotion, Interaction, MovementType, Pose, ShotKind};

/// Current plan document version.
pub const PLAN_VERSION: u32 = 1;

/// Characters are referenced by name throughout a plan.
pub type CharacterSet = BTreeSet<String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterRef {
    pub name: String,
    pub description: String,
    /// Path to a reference image. Mock backends derive a glyph from the name
    /// when this is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_image: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorySpec {
    pub description: String,
    pub characters: Vec<CharacterRef>,
}

impl StorySpec {
    pub fn character(&self, name: &str) -> Option<&CharacterRef> {
        self.characters.iter().find(|c| c.name == name)
    }

    pub fn names(&self) -> CharacterSet {
        self.characters.iter().map(|c| c.name.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chapter {
    pub index: u32,
    pub summary: String,
    pub characters: CharacterSet,
    pub timeline: String,
    pub justification: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationEntry {
    pub name: String,
    pub background_description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub chapter_index: u32,
    /// Global 1-based ordinal across the whole plan.
    pub index: u32,
    pub location_name: String,
    pub characters: CharacterSet,
    pub tone: String,
    pub shot_count: u32,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub text: String,
    pub start_s: f64,
    pub end_s: f64,
}

/// Transition metadata attached to an even-indexed shot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionMetadata {
    pub prev_chars: CharacterSet,
    pub start_chars: CharacterSet,
    pub end_chars: CharacterSet,
    pub exiting: CharacterSet,
    pub entering: CharacterSet,
    pub movement: MovementType,
    pub description: String,
}

impl TransitionMetadata {
    /// Same sets and movement; the description is free text and ignored.
    pub fn same_logic(&self, other: &TransitionMetadata) -> bool {
        self.prev_chars == other.prev_chars
            && self.start_chars == other.start_chars
            && self.end_chars == other.end_chars
            && self.exiting == other.exiting
            && self.entering == other.entering
            && self.movement == other.movement
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotDirective {
    pub scene_index: u32,
    /// 1-based index within the scene.
    pub index: u32,
    pub kind: ShotKind,
    pub emotion: BTreeMap<String, Emotion>,
    pub pose: BTreeMap<String, Pose>,
    pub interaction: Interaction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialogue: Option<Dialogue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyframe_prompt: Option<String>,
    pub video_prompt: String,
    pub camera: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<TransitionMetadata>,
}

impl ShotDirective {
    /// Characters named in the emotion/pose dictionaries.
    pub fn characters(&self) -> CharacterSet {
        self.emotion.keys().chain(self.pose.keys()).cloned().collect()
    }

    /// Every character that appears at some point in the shot.
    pub fn all_characters(&self) -> CharacterSet {
        let mut set = self.characters();
        if let Some(tau) = &self.transition {
            set.extend(tau.start_chars.iter().cloned());
            set.extend(tau.end_chars.iter().cloned());
        }
        set
    }

    pub fn pose_of(&self, name: &str) -> Pose {
        self.pose.get(name).copied().unwrap_or(Pose::Standing)
    }

    pub fn emotion_of(&self, name: &str) -> Emotion {
        self.emotion.get(name).copied().unwrap_or(Emotion::Neutral)
    }
}

/// Opaque notes carried along from the agents (relationships, planning
/// notes). Never interpreted.
pub type PlanNotes = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoryPlan {
    pub plan_version: u32,
    pub spec: StorySpec,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: PlanNotes,
    pub chapters: Vec<Chapter>,
    pub locations: Vec<LocationEntry>,
    pub scenes: Vec<Scene>,
    pub shots: Vec<ShotDirective>,
}

impl StoryPlan {
    pub fn location(&self, name: &str) -> Option<&LocationEntry> {
        self.locations.iter().find(|l| l.name == name)
    }

    pub fn chapter(&self, index: u32) -> Option<&Chapter> {
        self.chapters.iter().find(|c| c.index == index)
    }

    pub fn scene(&self, index: u32) -> Option<&Scene> {
        self.scenes.iter().find(|s| s.index == index)
    }

    /// Shots of one scene in index order.
    pub fn shots_of(&self, scene_index: u32) -> Vec<&ShotDirective> {
        let mut shots: Vec<_> = self.shots.iter().filter(|s| s.scene_index == scene_index).collect();
        shots.sort_by_key(|s| s.index);
        shots
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}
