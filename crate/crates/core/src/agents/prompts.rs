//! Prompt templates, embedded from `prompts/*.txt`.

const TEMPLATES: &[(&str, &str)] = &[
    ("chapter", include_str!("../../prompts/chapter.txt")),
    ("location", include_str!("../../prompts/location.txt")),
    ("scene", include_str!("../../prompts/scene.txt")),
    ("shot", include_str!("../../prompts/shot.txt")),
    ("scenario_setup", include_str!("../../prompts/scenario_setup.txt")),
    ("architect", include_str!("../../prompts/architect.txt")),
    ("director", include_str!("../../prompts/director.txt")),
    ("prompter", include_str!("../../prompts/prompter.txt")),
    ("vlm_count", include_str!("../../prompts/vlm_count.txt")),
];

/// Template text for a stage. Panics on unknown names, which are programmer errors.
pub fn template(name: &str) -> &'static str {
    TEMPLATES.iter().find(|(n, _)| *n == name).map(|(_, t)| *t).unwrap_or_else(|| panic!("no template {name}"))
}

pub fn names() -> impl Iterator<Item = &'static str> {
    TEMPLATES.iter().map(|(n, _)| *n)
}

/// Replace `{key}` for each supplied key. Other braces (JSON examples) are
/// left alone.
pub fn render(template: &str, vars: &[(&str, String)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open + 1..];
        let key_len = tail.find(|c: char| !(c.is_ascii_lowercase() || c == '_')).unwrap_or(tail.len());
        let key = &tail[..key_len];
        match vars.iter().find(|(k, _)| *k == key) {
            Some((_, value)) if tail[key_len..].starts_with('}') && !key.is_empty() => {
                out.push_str(value);
                rest = &tail[key_len + 1..];
            }
            _ => {
                out.push('{');
                rest = tail;
            }
        }
    }
    out.push_str(rest);
    out
}
