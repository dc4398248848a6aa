//! Plan hierarchy types, plan document parsing, and constraint validation.

mod parse;
mod types;
mod validate;
mod vocab;

pub(crate) use parse::fragments;
pub use parse::{parse_plan, parse_plan_value, parse_spec, SchemaError};
pub use types::*;
pub use validate::{
    checks, mentioned_characters, validate_document, validate_plan, validate_with, Check, ErrorCode, Severity,
    ValidationOptions, ValidationReport, Violation, CHAPTER_RANGE, DIALOGUE_WINDOW_S, LOCATION_RANGE,
    MAX_CHARS_PER_SHOT,
};
pub use vocab::Vocabulary;
