//! Transition metadata calculus.
//!
//! A transition shot bridges the final frame of the narrative shot before it
//! and the keyframe of the narrative shot after it, so its start set is the
//! previous shot's characters and its end set is the next shot's.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{CharacterSet, MovementType, ShotDirective, ShotKind, TransitionMetadata};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransitionError {
    #[error("shots belong to different scenes ({prev} and {next}); scenes are joined by hard cuts")]
    DifferentScene { prev: u32, next: u32 },
    #[error("shot {index} of scene {scene} is not a narrative shot")]
    NotNarrative { scene: u32, index: u32 },
    #[error("shots {prev} and {next} do not surround a single transition slot")]
    NotAdjacent { prev: u32, next: u32 },
    #[error("exiting and entering sets overlap on {0:?}")]
    Overlap(Vec<String>),
}

/// Classify a transition by which of its mover sets are empty.
pub fn classify_movement_type(
    exiting: &CharacterSet,
    entering: &CharacterSet,
) -> Result<MovementType, TransitionError> {
    let shared: Vec<String> = exiting.intersection(entering).cloned().collect();
    if !shared.is_empty() {
        return Err(TransitionError::Overlap(shared));
    }
    Ok(match (exiting.is_empty(), entering.is_empty()) {
        (true, true) => MovementType::NoChange,
        (true, false) => MovementType::Entry,
        (false, true) => MovementType::Exit,
        (false, false) => MovementType::Combination,
    })
}

/// Build the metadata for a transition from its start and end sets.
pub fn metadata_from_sets(start: &CharacterSet, end: &CharacterSet) -> TransitionMetadata {
    let exiting: CharacterSet = start.difference(end).cloned().collect();
    let entering: CharacterSet = end.difference(start).cloned().collect();
    let movement = classify_movement_type(&exiting, &entering).expect("set differences are disjoint");
    let description = describe(start, end, &exiting, &entering);
    TransitionMetadata {
        prev_chars: start.clone(),
        start_chars: start.clone(),
        end_chars: end.clone(),
        exiting,
        entering,
        movement,
        description,
    }
}

/// Derive the metadata of the transition slot between two narrative shots.
pub fn derive_transition_metadata(
    prev_shot: &ShotDirective,
    next_shot: &ShotDirective,
) -> Result<TransitionMetadata, TransitionError> {
    if prev_shot.scene_index != next_shot.scene_index {
        return Err(TransitionError::DifferentScene { prev: prev_shot.scene_index, next: next_shot.scene_index });
    }
    for shot in [prev_shot, next_shot] {
        if shot.kind != ShotKind::Narrative {
            return Err(TransitionError::NotNarrative { scene: shot.scene_index, index: shot.index });
        }
    }
    if next_shot.index != prev_shot.index + 2 {
        return Err(TransitionError::NotAdjacent { prev: prev_shot.index, next: next_shot.index });
    }
    Ok(metadata_from_sets(&prev_shot.characters(), &next_shot.characters()))
}

/// Recompute the metadata from the stored start/end sets, keeping the stored
/// description.
pub fn rederive(tau: &TransitionMetadata) -> TransitionMetadata {
    let mut out = metadata_from_sets(&tau.start_chars, &tau.end_chars);
    out.prev_chars = tau.prev_chars.clone();
    out.description = tau.description.clone();
    out
}

/// Frame edge a mover uses in the drafted choreography text.
pub fn frame_edge_for(name: &str) -> &'static str {
    let sum: u32 = name.bytes().map(u32::from).sum();
    if sum % 2 == 0 {
        "left"
    } else {
        "right"
    }
}

fn describe(start: &CharacterSet, end: &CharacterSet, exiting: &CharacterSet, entering: &CharacterSet) -> String {
    let mut parts = Vec::new();
    for name in exiting {
        parts.push(format!("{name} walks out of frame toward the {} edge", frame_edge_for(name)));
    }
    for name in entering {
        parts.push(format!("{name} walks in from the {} edge toward center", frame_edge_for(name)));
    }
    let staying: Vec<&String> = start.intersection(end).collect();
    if !staying.is_empty() {
        let names: Vec<&str> = staying.iter().map(|s| s.as_str()).collect();
        let verbs = if names.len() == 1 { "remains in frame and repositions" } else { "remain in frame and reposition" };
        parts.push(format!("{} {verbs} smoothly", names.join(" and ")));
    }
    if parts.is_empty() {
        "The empty frame holds steady.".to_string()
    } else {
        let mut text = parts.join("; ");
        text.push('.');
        let mut chars = text.chars();
        match chars.next() {
            Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
            None => text,
        }
    }
}

/// Dataset transition categories. `Replacement` is dataset-only and maps onto
/// `Combination` in story plans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TransitionCategory {
    Entry,
    Exit,
    Replacement,
    NoChange,
    Combination,
}

impl TransitionCategory {
    pub const ALL: [TransitionCategory; 5] = [
        TransitionCategory::Entry,
        TransitionCategory::Exit,
        TransitionCategory::Replacement,
        TransitionCategory::NoChange,
        TransitionCategory::Combination,
    ];

    pub fn movement(self) -> MovementType {
        match self {
            TransitionCategory::Entry => MovementType::Entry,
            TransitionCategory::Exit => MovementType::Exit,
            TransitionCategory::NoChange => MovementType::NoChange,
            TransitionCategory::Replacement | TransitionCategory::Combination => MovementType::Combination,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TransitionCategory::Entry => "Entry",
            TransitionCategory::Exit => "Exit",
            TransitionCategory::Replacement => "Replacement",
            TransitionCategory::NoChange => "NoChange",
            TransitionCategory::Combination => "Combination",
        }
    }
}

impl fmt::Display for TransitionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Dataset classification: the four pipeline rules, with two-sided swaps of
/// equal size and no shared identities split out as `Replacement`.
pub fn classify_category(start: &CharacterSet, end: &CharacterSet) -> TransitionCategory {
    let exiting: CharacterSet = start.difference(end).cloned().collect();
    let entering: CharacterSet = end.difference(start).cloned().collect();
    match classify_movement_type(&exiting, &entering).expect("set differences are disjoint") {
        MovementType::NoChange => TransitionCategory::NoChange,
        MovementType::Entry => TransitionCategory::Entry,
        MovementType::Exit => TransitionCategory::Exit,
        MovementType::Combination => {
            if start.len() == end.len() && start.is_disjoint(end) {
                TransitionCategory::Replacement
            } else {
                TransitionCategory::Combination
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::schema::{Interaction, Pose};

    fn set(names: &[&str]) -> CharacterSet {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn narrative(scene: u32, index: u32, chars: &[&str]) -> ShotDirective {
        ShotDirective {
            scene_index: scene,
            index,
            kind: ShotKind::Narrative,
            emotion: BTreeMap::new(),
            pose: chars.iter().map(|c| (c.to_string(), Pose::Standing)).collect(),
            interaction: Interaction::None,
            dialogue: None,
            keyframe_prompt: Some(String::new()),
            video_prompt: String::new(),
            camera: String::new(),
            transition: None,
        }
    }

    #[test]
    fn combination_case() {
        let tau = derive_transition_metadata(&narrative(1, 1, &["A", "B"]), &narrative(1, 3, &["B", "C"])).unwrap();
        assert_eq!(tau.exiting, set(&["A"]));
        assert_eq!(tau.entering, set(&["C"]));
        assert_eq!(tau.movement, MovementType::Combination);
        assert_eq!(tau.start_chars, set(&["A", "B"]));
        assert_eq!(tau.end_chars, set(&["B", "C"]));
        assert_eq!(tau.prev_chars, tau.start_chars);
    }

    #[test]
    fn no_change_case() {
        let tau = derive_transition_metadata(&narrative(1, 1, &["A"]), &narrative(1, 3, &["A"])).unwrap();
        assert!(tau.exiting.is_empty() && tau.entering.is_empty());
        assert_eq!(tau.movement, MovementType::NoChange);
    }

    #[test]
    fn empty_to_occupied_is_entry() {
        let tau = derive_transition_metadata(&narrative(1, 1, &[]), &narrative(1, 3, &["A"])).unwrap();
        assert_eq!(tau.entering, set(&["A"]));
        assert_eq!(tau.movement, MovementType::Entry);
        assert!(tau.description.contains("A walks in"));
    }

    #[test]
    fn scene_boundary_is_rejected() {
        let err = derive_transition_metadata(&narrative(1, 1, &["A"]), &narrative(2, 3, &["A"])).unwrap_err();
        assert_eq!(err, TransitionError::DifferentScene { prev: 1, next: 2 });
    }

    #[test]
    fn non_adjacent_is_rejected() {
        let err = derive_transition_metadata(&narrative(1, 1, &["A"]), &narrative(1, 5, &["A"])).unwrap_err();
        assert!(matches!(err, TransitionError::NotAdjacent { .. }));
    }

    #[test]
    fn overlap_is_an_error() {
        let err = classify_movement_type(&set(&["A"]), &set(&["A", "B"])).unwrap_err();
        assert_eq!(err, TransitionError::Overlap(vec!["A".into()]));
    }

    #[test]
    fn swap_is_combination_in_pipeline() {
        assert_eq!(classify_movement_type(&set(&["A"]), &set(&["B"])).unwrap(), MovementType::Combination);
        assert_eq!(classify_category(&set(&["A"]), &set(&["B"])), TransitionCategory::Replacement);
        assert_eq!(classify_category(&set(&["A", "B"]), &set(&["B", "C"])), TransitionCategory::Combination);
        assert_eq!(classify_category(&set(&["A"]), &set(&["B", "C"])), TransitionCategory::Combination);
        assert_eq!(classify_category(&set(&[]), &set(&[])), TransitionCategory::NoChange);
    }

    #[test]
    fn rederive_is_idempotent() {
        let tau = metadata_from_sets(&set(&["A", "B"]), &set(&["C"]));
        assert_eq!(rederive(&tau), tau);
        assert_eq!(rederive(&rederive(&tau)), tau);
    }
}
