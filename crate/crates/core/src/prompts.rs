//! System prompts and per-turn message construction for both roles.
//!
//! Templates live in `prompts/*.txt` next to a `manifest.txt` listing
//! `role file sha256` per line.

use sha2::{Digest, Sha256};

use crate::world::{serialize_blocks, WorldState};

pub const BUILDER_TEMPLATE: &str = include_str!("../prompts/builder.txt");
pub const ARCHITECT_TEMPLATE: &str = include_str!("../prompts/architect.txt");
pub const MANIFEST: &str = include_str!("../prompts/manifest.txt");

/// Placeholder in the architect template that receives the target blocks.
pub const TARGET_PLACEHOLDER: &str = "<<target_world_state>>";

/// Label preceding the world snapshot in architect turns.
pub const WORLD_LABEL: &str = "Current world state:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PromptRole {
    Builder,
    Architect,
}

impl PromptRole {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptRole::Builder => "builder",
            PromptRole::Architect => "architect",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub role: PromptRole,
    pub text: &'static str,
}

impl PromptTemplate {
    pub fn builder() -> Self {
        PromptTemplate {
            role: PromptRole::Builder,
            text: BUILDER_TEMPLATE,
        }
    }

    pub fn architect() -> Self {
        PromptTemplate {
            role: PromptRole::Architect,
            text: ARCHITECT_TEMPLATE,
        }
    }

    /// Hex sha256 of the template bytes.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.text.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub role: String,
    pub file: String,
    pub sha256: String,
}

pub fn manifest_entries() -> Vec<ManifestEntry> {
    MANIFEST
        .lines()
        .filter(|l| !l.trim().is_empty())
        .filter_map(|line| {
            let mut parts = line.split_whitespace();
            Some(ManifestEntry {
                role: parts.next()?.to_string(),
                file: parts.next()?.to_string(),
                sha256: parts.next()?.to_string(),
            })
        })
        .collect()
}

pub fn render_builder_system() -> String {
    BUILDER_TEMPLATE.to_string()
}

pub fn render_architect_system(target: &WorldState) -> String {
    ARCHITECT_TEMPLATE.replacen(TARGET_PLACEHOLDER, &serialize_blocks(target), 1)
}

/// One architect user message: the builder's utterance (if any) followed by
/// the labeled canonical world snapshot.
pub fn render_architect_turn(builder_utterance: &str, world: &WorldState) -> String {
    let world_line = format!("{WORLD_LABEL} {}", serialize_blocks(world));
    let utterance = builder_utterance.trim();
    if utterance.is_empty() {
        world_line
    } else {
        format!("{utterance}\n\n{world_line}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Block, Color};

    #[test]
    fn builder_prompt_contents() {
        let text = render_builder_system();
        assert!(text.contains("must be one of: blue, yellow, green, orange, purple, red"));
        assert!(text.contains(r#""confidence": 0.0"#));
        assert!(text.contains(
            r#"{"add": [[x,y,z,color], ...], "remove": [[x,y,z,color], ...], "confidence": 0.0, "question": "..."}"#
        ));
        assert!(text.contains("Give the JSON only, no additional dialog."));
        assert_eq!(text, render_builder_system());
    }

    #[test]
    fn architect_template_has_one_placeholder() {
        assert_eq!(ARCHITECT_TEMPLATE.matches(TARGET_PLACEHOLDER).count(), 1);
        assert!(!BUILDER_TEMPLATE.contains(TARGET_PLACEHOLDER));
    }

    #[test]
    fn architect_system_embeds_target() {
        let empty = render_architect_system(&WorldState::new());
        assert!(empty.contains("target world state: [] where"));
        assert!(empty.contains("start building the structure from the ground up"));
        assert!(!empty.contains(TARGET_PLACEHOLDER));

        let column = WorldState::from_blocks([
            Block::at(-2, 0, 3, Color::Green).unwrap(),
            Block::at(-2, 1, 3, Color::Green).unwrap(),
        ])
        .unwrap();
        let text = render_architect_system(&column);
        assert!(text.contains(r#"[[-2,0,3,"green"],[-2,1,3,"green"]]"#));
        assert_eq!(text, render_architect_system(&column));
    }

    #[test]
    fn architect_turn_layout() {
        let msg = render_architect_turn("hello architect", &WorldState::new());
        assert_eq!(msg, "hello architect\n\nCurrent world state: []");

        let red = WorldState::from_blocks([Block::at(-1, 0, 2, Color::Red).unwrap()]).unwrap();
        let msg = render_architect_turn("correct?", &red);
        assert!(msg.starts_with("correct?"));
        assert!(msg.contains(r#"[[-1,0,2,"red"]]"#));

        assert_eq!(
            render_architect_turn("", &WorldState::new()),
            "Current world state: []"
        );
    }

    #[test]
    fn manifest_checksums_match_templates() {
        let entries = manifest_entries();
        assert_eq!(entries.len(), 2);
        for entry in entries {
            let template = match entry.role.as_str() {
                "builder" => PromptTemplate::builder(),
                "architect" => PromptTemplate::architect(),
                other => panic!("unexpected role {other}"),
            };
            assert_eq!(entry.file, format!("{}.txt", template.role.as_str()));
            assert_eq!(entry.sha256, template.checksum(), "{} drifted", entry.file);
        }
    }

    #[test]
    fn pinned_checksums() {
        assert_eq!(
            PromptTemplate::builder().checksum(),
            "f8d21a0568d27bdc0f542bf2199ac9ecfccccae08e498cfdc582dc4d8dc9dd88"
        );
        assert_eq!(
            PromptTemplate::architect().checksum(),
            "8586c1f940ba7d89b6f4a9663661371c3e223799928c60d8380db1a39535f22d"
        );
    }
}
