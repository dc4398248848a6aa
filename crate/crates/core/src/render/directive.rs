//! Flattening a shot directive into self-contained prompt text.

use serde::{Deserialize, Serialize};

use crate::backends::CastMember;
use crate::schema::{
    Dialogue, Emotion, Interaction, LocationEntry, Pose, ShotDirective, ShotKind, StorySpec, TransitionMetadata,
    Vocabulary,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CastEntry {
    pub name: String,
    pub description: String,
    pub pose: Pose,
    pub emotion: Emotion,
}

impl CastEntry {
    pub fn phrase(&self) -> String {
        format!("{} ({}), {}, {}", self.name, self.description, self.emotion.phrase(), self.pose.phrase())
    }
}

/// Prompt bundle for one shot with every reference resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedDirective {
    pub scene_index: u32,
    pub shot_index: u32,
    pub kind: ShotKind,
    pub location_name: String,
    pub location_description: String,
    /// Characters of a narrative shot, sorted by name. Empty for transitions.
    pub cast: Vec<CastEntry>,
    pub interaction: Interaction,
    pub camera: String,
    pub dialogue: Option<Dialogue>,
    pub tau: Option<TransitionMetadata>,
    pub keyframe_text: String,
    pub video_text: String,
}

impl NormalizedDirective {
    pub fn cast_members(&self) -> Vec<CastMember> {
        self.cast.iter().map(|c| CastMember { name: c.name.clone(), pose: c.pose }).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.cast.iter().map(|c| c.name.clone()).collect()
    }
}

/// Background prompt for a location; the text before the colon is the
/// location key.
pub fn background_prompt(location: &LocationEntry) -> String {
    format!("{}: {}", location.name, location.background_description)
}

fn describe<'a>(spec: &'a StorySpec, name: &str) -> &'a str {
    spec.character(name).map(|c| c.description.as_str()).unwrap_or("")
}

fn join_names<'a>(names: impl IntoIterator<Item = &'a String>) -> String {
    let v: Vec<&str> = names.into_iter().map(String::as_str).collect();
    if v.is_empty() {
        "nobody".into()
    } else {
        v.join(" and ")
    }
}

pub fn normalize_directive(shot: &ShotDirective, spec: &StorySpec, location: &LocationEntry) -> NormalizedDirective {
    let cast: Vec<CastEntry> = shot
        .characters()
        .into_iter()
        .map(|name| CastEntry {
            description: describe(spec, &name).to_string(),
            pose: shot.pose_of(&name),
            emotion: shot.emotion_of(&name),
            name,
        })
        .collect();
    let setting = format!("Setting: {}: {}", location.name, location.background_description);
    let people = if cast.is_empty() {
        "No characters in frame.".to_string()
    } else {
        format!("In frame: {}.", cast.iter().map(CastEntry::phrase).collect::<Vec<_>>().join("; "))
    };
    let action = format!("Interaction: {}. Camera: {}.", shot.interaction.phrase(), shot.camera);
    let keyframe_base = shot.keyframe_prompt.as_deref().unwrap_or(&shot.video_prompt);
    let keyframe_text = format!("{keyframe_base}\n{setting}\n{people}\n{action}");
    let mut video_text = format!("{}\n{setting}\n{people}\n{action}", shot.video_prompt);
    if let Some(tau) = &shot.transition {
        let mut lines = vec![format!(
            "Movement: {}. Opens with {}; closes with {}.",
            tau.movement.phrase(),
            join_names(&tau.start_chars),
            join_names(&tau.end_chars)
        )];
        for name in &tau.exiting {
            lines.push(format!("{name} ({}) walks out of frame.", describe(spec, name)));
        }
        for name in &tau.entering {
            lines.push(format!("{name} ({}) walks into frame from the edge.", describe(spec, name)));
        }
        if !tau.description.is_empty() {
            lines.push(tau.description.clone());
        }
        video_text.push('\n');
        video_text.push_str(&lines.join("\n"));
    }
    if let Some(d) = &shot.dialogue {
        video_text.push_str(&format!("\nSubtitle ({:.1}s-{:.1}s): {}", d.start_s, d.end_s, d.text));
    }
    NormalizedDirective {
        scene_index: shot.scene_index,
        shot_index: shot.index,
        kind: shot.kind,
        location_name: location.name.clone(),
        location_description: location.background_description.clone(),
        cast,
        interaction: shot.interaction,
        camera: shot.camera.clone(),
        dialogue: shot.dialogue.clone(),
        tau: shot.transition.clone(),
        keyframe_text,
        video_text,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::CharacterRef;
    use std::collections::BTreeMap;

    fn spec() -> StorySpec {
        StorySpec {
            description: "d".into(),
            characters: vec![CharacterRef { name: "Ada".into(), description: "a tall smith".into(), reference_image: None }],
        }
    }

    fn shot() -> ShotDirective {
        ShotDirective {
            scene_index: 1,
            index: 1,
            kind: ShotKind::Narrative,
            emotion: BTreeMap::from([("Ada".to_string(), Emotion::Happy)]),
            pose: BTreeMap::from([("Ada".to_string(), Pose::Walking)]),
            interaction: Interaction::None,
            dialogue: None,
            keyframe_prompt: None,
            video_prompt: "Ada crosses the glade".into(),
            camera: "medium shot".into(),
            transition: None,
        }
    }

    #[test]
    fn inlines_descriptions_location_and_phrases() {
        let loc = LocationEntry { name: "Forest".into(), background_description: "tall pines in mist".into() };
        let n = normalize_directive(&shot(), &spec(), &loc);
        assert!(n.video_text.contains("a tall smith"));
        assert!(n.video_text.contains("walking"));
        assert!(n.keyframe_text.contains("tall pines in mist"));
        assert_eq!(n, normalize_directive(&shot(), &spec(), &loc));
        assert_eq!(background_prompt(&loc), "Forest: tall pines in mist");
    }
}
