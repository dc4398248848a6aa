//! Fixed vocabularies used by shot directives.
//!
//! Wire spellings are the PascalCase identifiers. Agents are allowed to emit
//! the spaced forms ("Shaking Hands", "No Change") and they parse to the same
//! variant.

use serde::{Deserialize, Serialize};

/// A closed set of values that can appear in a plan document.
pub trait Vocabulary: Sized + Copy + 'static {
    /// Human label for error messages, e.g. `pose`.
    const LABEL: &'static str;

    fn all() -> &'static [Self];
    fn canonical(self) -> &'static str;
    fn aliases(self) -> &'static [&'static str];
    /// Lowercase phrase used when rendering prompts.
    fn phrase(self) -> &'static str;

    fn parse(raw: &str) -> Option<Self> {
        Self::all().iter().copied().find(|v| {
            v.canonical() == raw || v.aliases().iter().any(|a| a.eq_ignore_ascii_case(raw))
        })
    }

    fn allowed() -> String {
        Self::all()
            .iter()
            .map(|v| v.canonical())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

macro_rules! vocab_enum {
    (
        $(#[$meta:meta])*
        $name:ident, $label:literal {
            $( $variant:ident => $phrase:literal $(, alias $alias:literal)* ; )+
        }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $( $( #[serde(alias = $alias)] )* $variant, )+
        }

        impl Vocabulary for $name {
            const LABEL: &'static str = $label;

            fn all() -> &'static [Self] {
                &[ $( $name::$variant, )+ ]
            }

            fn canonical(self) -> &'static str {
                match self { $( $name::$variant => stringify!($variant), )+ }
            }

            fn aliases(self) -> &'static [&'static str] {
                match self { $( $name::$variant => &[ $( $alias, )* ], )+ }
            }

            fn phrase(self) -> &'static str {
                match self { $( $name::$variant => $phrase, )+ }
            }
        }

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.canonical())
            }
        }
    };
}

vocab_enum! {
    /// Shot kind. Odd shot indices are narrative (I2V), even are transitions (FLF2V).
    ShotKind, "kind" {
        Narrative => "narrative";
        Transition => "transition";
    }
}

vocab_enum! {
    Emotion, "emotion" {
        Neutral => "neutral";
        Angry => "angry";
        Happy => "happy";
        Sad => "sad";
    }
}

vocab_enum! {
    Pose, "pose" {
        Standing => "standing";
        Sitting => "sitting";
        Walking => "walking";
        Running => "running";
        Reaching => "reaching";
    }
}

vocab_enum! {
    Interaction, "interaction" {
        None => "no interaction";
        ShakingHands => "shaking hands", alias "Shaking Hands";
        Hugging => "hugging";
        Talking => "talking";
        HandingOverObject => "handing over an object", alias "Handing Over an Object", alias "Handing Over Object";
    }
}

vocab_enum! {
    /// Movement type of a transition shot in the story pipeline.
    MovementType, "movement" {
        Entry => "entry";
        Exit => "exit";
        NoChange => "no change", alias "No Change";
        Combination => "combination";
    }
}

impl Pose {
    /// Poses that translate the glyph during a narrative shot.
    pub fn is_moving(self) -> bool {
        matches!(self, Pose::Walking | Pose::Running)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aliases_parse_to_canonical() {
        assert_eq!(Interaction::parse("Shaking Hands"), Some(Interaction::ShakingHands));
        assert_eq!(Interaction::parse("handing over an object"), Some(Interaction::HandingOverObject));
        assert_eq!(MovementType::parse("No Change"), Some(MovementType::NoChange));
        assert_eq!(Pose::parse("Leaping"), None);
    }

    #[test]
    fn serde_accepts_alias() {
        let v: Interaction = serde_json::from_str("\"Shaking Hands\"").unwrap();
        assert_eq!(v, Interaction::ShakingHands);
        assert_eq!(serde_json::to_string(&v).unwrap(), "\"ShakingHands\"");
    }

    #[test]
    fn allowed_lists_every_value() {
        assert_eq!(Pose::allowed(), "Standing, Sitting, Walking, Running, Reaching");
        assert_eq!(Emotion::all().len(), 4);
        assert_eq!(Interaction::all().len(), 5);
    }
}
