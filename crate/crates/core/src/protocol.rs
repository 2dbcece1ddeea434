//! Builder action protocol.
//!
//! Builders answer every instruction with a JSON object of the shape
//! `{"add": [[x,y,z,color], ...], "remove": [[x,y,z,color], ...],
//! "confidence": 0.0, "question": "..."}`. Model output is untrusted: this
//! module locates the object inside whatever text came back, validates it, and
//! either yields a normalized [`BuilderResponse`] or disregards the reply with
//! a reason. A disregarded reply never touches the world.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::world::{Block, Color, Coord, WorldDiff, WorldState};

/// A requested removal. Removals match by position; the color, when the
/// model supplied one, is only compared against the world for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Removal {
    pub pos: Coord,
    pub color: Option<Color>,
}

impl Removal {
    pub fn new(pos: Coord, color: Option<Color>) -> Self {
        Removal { pos, color }
    }
}

impl From<Block> for Removal {
    fn from(block: Block) -> Self {
        Removal {
            pos: block.pos,
            color: Some(block.color),
        }
    }
}

/// `[x, y, z]` or `[x, y, z, "color"]` on the wire.
impl Serialize for Removal {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let (x, y, z) = (self.pos.x(), self.pos.y(), self.pos.z());
        match self.color {
            Some(color) => (x, y, z, color).serialize(serializer),
            None => (x, y, z).serialize(serializer),
        }
    }
}

impl<'de> Deserialize<'de> for Removal {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        parse_remove_entry(&value)
            .map_err(|reason| serde::de::Error::custom(format!("invalid removal: {reason}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuilderResponse {
    pub add: Vec<Block>,
    pub remove: Vec<Removal>,
    /// Always within `[0, 1]`.
    pub confidence: f64,
    /// Never empty or whitespace-only.
    pub question: Option<String>,
}

impl BuilderResponse {
    pub fn new(add: Vec<Block>, remove: Vec<Removal>, confidence: f64, question: Option<String>) -> Self {
        BuilderResponse {
            add,
            remove,
            confidence: clamp_confidence(confidence),
            question: normalize_question(question),
        }
    }

    pub fn has_actions(&self) -> bool {
        !self.add.is_empty() || !self.remove.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisregardReason {
    NoJsonFound,
    MalformedJson,
    SchemaViolation,
    OutOfBoundsAction,
    UnknownColor,
}

impl DisregardReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DisregardReason::NoJsonFound => "no_json_found",
            DisregardReason::MalformedJson => "malformed_json",
            DisregardReason::SchemaViolation => "schema_violation",
            DisregardReason::OutOfBoundsAction => "out_of_bounds_action",
            DisregardReason::UnknownColor => "unknown_color",
        }
    }
}

impl fmt::Display for DisregardReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParseOutcome {
    Ok(BuilderResponse),
    Disregarded(DisregardReason),
}

impl ParseOutcome {
    pub fn response(&self) -> Option<&BuilderResponse> {
        match self {
            ParseOutcome::Ok(resp) => Some(resp),
            ParseOutcome::Disregarded(_) => None,
        }
    }

    pub fn disregarded(&self) -> Option<DisregardReason> {
        match self {
            ParseOutcome::Ok(_) => None,
            ParseOutcome::Disregarded(reason) => Some(*reason),
        }
    }
}

/// Non-fatal observations made while applying a response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "warning", rename_all = "snake_case")]
pub enum ActionWarning {
    RemovedEmptyCell {
        pos: [i32; 3],
    },
    RemoveColorMismatch {
        pos: [i32; 3],
        requested: Color,
        found: Color,
    },
}

fn clamp_confidence(value: f64) -> f64 {
    if value.is_nan() {
        0.0
    } else {
        value.clamp(0.0, 1.0)
    }
}

fn normalize_question(question: Option<String>) -> Option<String> {
    question
        .map(|q| q.trim().to_string())
        .filter(|q| !q.is_empty())
}

/// Returns the contents of the first fenced code block, if any. An
/// unterminated fence runs to the end of the text.
fn strip_code_fence(raw: &str) -> Option<&str> {
    let start = raw.find("```")?;
    let after = &raw[start + 3..];
    // Skip the info string (`json`, `JSON`, ...) up to the end of the line.
    let body = match after.find('\n') {
        Some(nl) if after[..nl].chars().all(|c| c.is_ascii_alphanumeric() || c == ' ') => &after[nl + 1..],
        _ => after,
    };
    Some(match body.find("```") {
        Some(end) => &body[..end],
        None => body,
    })
}

/// Finds the first balanced `{...}` object in `text`, skipping braces that
/// sit inside string literals.
fn first_balanced_object(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let mut search_from = 0;
    while let Some(rel) = text[search_from..].find('{') {
        let start = search_from + rel;
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        for (offset, &b) in bytes[start..].iter().enumerate() {
            if in_string {
                if escaped {
                    escaped = false;
                } else if b == b'\\' {
                    escaped = true;
                } else if b == b'"' {
                    in_string = false;
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(&text[start..=start + offset]);
                    }
                }
                _ => {}
            }
        }
        search_from = start + 1;
    }
    None
}

/// Locates the protocol object in raw model output.
///
/// Code fences are stripped first; when the fenced region holds no object
/// the whole text is searched instead.
pub fn extract_json(raw: &str) -> Option<&str> {
    strip_code_fence(raw)
        .and_then(first_balanced_object)
        .or_else(|| first_balanced_object(raw))
}

/// Parses raw model output into a validated response or a disregard reason.
/// Total: never panics, for any input.
pub fn parse_response(raw: &str) -> ParseOutcome {
    match parse_inner(raw) {
        Ok(resp) => ParseOutcome::Ok(resp),
        Err(reason) => ParseOutcome::Disregarded(reason),
    }
}

/// Byte-level entry point; invalid UTF-8 is replaced before parsing.
pub fn parse_response_bytes(raw: &[u8]) -> ParseOutcome {
    parse_response(&String::from_utf8_lossy(raw))
}

fn parse_inner(raw: &str) -> Result<BuilderResponse, DisregardReason> {
    let object_text = extract_json(raw).ok_or(DisregardReason::NoJsonFound)?;
    let value: Value =
        serde_json::from_str(object_text).map_err(|_| DisregardReason::MalformedJson)?;
    let Value::Object(map) = value else {
        return Err(DisregardReason::SchemaViolation);
    };

    let add = match field(&map, "add") {
        None => Vec::new(),
        Some(v) => entries(v)?
            .iter()
            .map(parse_add_entry)
            .collect::<Result<Vec<_>, _>>()?,
    };
    let remove = match field(&map, "remove") {
        None => Vec::new(),
        Some(v) => entries(v)?
            .iter()
            .map(parse_remove_entry)
            .collect::<Result<Vec<_>, _>>()?,
    };
    let confidence = match field(&map, "confidence") {
        None => 0.0,
        Some(v) => v.as_f64().ok_or(DisregardReason::SchemaViolation)?,
    };
    let question = match field(&map, "question") {
        None => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(DisregardReason::SchemaViolation),
    };

    Ok(BuilderResponse::new(add, remove, confidence, question))
}

/// Present and non-null.
fn field<'a>(map: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    map.get(key).filter(|v| !v.is_null())
}

fn entries(value: &Value) -> Result<&Vec<Value>, DisregardReason> {
    value.as_array().ok_or(DisregardReason::SchemaViolation)
}

fn parse_position(items: &[Value]) -> Result<Coord, DisregardReason> {
    let mut xyz = [0i64; 3];
    for (slot, item) in xyz.iter_mut().zip(items) {
        *slot = match item.as_i64() {
            Some(v) => v,
            // Integers beyond i64 are still integers, just off the grid.
            None if item.is_u64() || item.as_f64().is_some_and(huge_integer) => {
                return Err(DisregardReason::OutOfBoundsAction)
            }
            None => return Err(DisregardReason::SchemaViolation),
        };
    }
    Coord::new(xyz[0], xyz[1], xyz[2]).map_err(|_| DisregardReason::OutOfBoundsAction)
}

fn huge_integer(v: f64) -> bool {
    v.fract() == 0.0 && v.abs() >= i64::MAX as f64
}

fn parse_color(value: &Value) -> Result<Color, DisregardReason> {
    let name = value.as_str().ok_or(DisregardReason::SchemaViolation)?;
    name.parse().map_err(|_| DisregardReason::UnknownColor)
}

fn parse_add_entry(entry: &Value) -> Result<Block, DisregardReason> {
    let items = entry.as_array().ok_or(DisregardReason::SchemaViolation)?;
    if items.len() != 4 {
        return Err(DisregardReason::SchemaViolation);
    }
    let pos = parse_position(&items[..3])?;
    let color = parse_color(&items[3])?;
    Ok(Block::new(pos, color))
}

/// Removal entries may omit the color: `[x,y,z]` or `[x,y,z,color]`.
fn parse_remove_entry(entry: &Value) -> Result<Removal, DisregardReason> {
    let items = entry.as_array().ok_or(DisregardReason::SchemaViolation)?;
    let color = match items.len() {
        3 => None,
        4 if items[3].is_null() => None,
        4 => Some(parse_color(&items[3])?),
        _ => return Err(DisregardReason::SchemaViolation),
    };
    let pos = parse_position(&items[..3])?;
    Ok(Removal { pos, color })
}

/// Canonical protocol text for a response. `parse_response` inverts it.
pub fn render_response(resp: &BuilderResponse) -> String {
    let add: Vec<Value> = resp
        .add
        .iter()
        .map(|b| serde_json::json!([b.pos.x(), b.pos.y(), b.pos.z(), b.color.as_str()]))
        .collect();
    let remove: Vec<Value> = resp
        .remove
        .iter()
        .map(|r| match r.color {
            Some(c) => serde_json::json!([r.pos.x(), r.pos.y(), r.pos.z(), c.as_str()]),
            None => serde_json::json!([r.pos.x(), r.pos.y(), r.pos.z()]),
        })
        .collect();
    WireResponse {
        add,
        remove,
        confidence: resp.confidence,
        question: resp.question.as_deref().unwrap_or_default(),
    }
    .to_json()
}

/// Field order follows the prompt's schema line.
#[derive(Serialize)]
struct WireResponse<'a> {
    add: Vec<Value>,
    remove: Vec<Value>,
    confidence: f64,
    question: &'a str,
}

impl WireResponse<'_> {
    fn to_json(&self) -> String {
        serde_json::to_string(self).expect("protocol values always serialize")
    }
}

/// Applies a response to `world`: all removals first, then all additions.
/// Returns the new world, the net diff, and any warnings.
pub fn apply_response(
    resp: &BuilderResponse,
    world: &WorldState,
) -> (WorldState, WorldDiff, Vec<ActionWarning>) {
    let mut next = world.clone();
    let mut warnings = Vec::new();
    for removal in &resp.remove {
        let pos = removal.pos;
        let xyz = [pos.x(), pos.y(), pos.z()];
        match (next.get(pos), removal.color) {
            (None, _) => warnings.push(ActionWarning::RemovedEmptyCell { pos: xyz }),
            (Some(found), Some(requested)) if found != requested => {
                warnings.push(ActionWarning::RemoveColorMismatch {
                    pos: xyz,
                    requested,
                    found,
                })
            }
            _ => {}
        }
        next.remove_in_place(pos);
    }
    for block in &resp.add {
        next.add_in_place(*block);
    }
    let diff = WorldDiff::between(world, &next);
    (next, diff, warnings)
}

/// The net world change a response would cause.
pub fn to_diff(resp: &BuilderResponse, world: &WorldState) -> WorldDiff {
    apply_response(resp, world).1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(x: i64, y: i64, z: i64, color: Color) -> Block {
        Block::at(x, y, z, color).unwrap()
    }

    #[test]
    fn extract_identity_on_bare_object() {
        assert_eq!(extract_json(r#"{"add":[]}"#), Some(r#"{"add":[]}"#));
    }

    #[test]
    fn extract_from_fenced_reply() {
        let raw = "Sure! ```json\n{\"add\":[[0,0,0,\"red\"]],\"remove\":[],\"confidence\":1.0,\"question\":\"\"}\n```";
        assert_eq!(
            extract_json(raw),
            Some(r#"{"add":[[0,0,0,"red"]],"remove":[],"confidence":1.0,"question":""}"#)
        );
    }

    #[test]
    fn extract_none_without_braces() {
        assert_eq!(extract_json("I cannot do that."), None);
    }

    #[test]
    fn extract_ignores_braces_in_strings() {
        let raw = r#"{"question":"use } carefully {","add":[]} trailing }"#;
        assert_eq!(
            extract_json(raw),
            Some(r#"{"question":"use } carefully {","add":[]}"#)
        );
    }

    #[test]
    fn parses_yellow_on_top() {
        let outcome =
            parse_response(r#"{"add":[[0,1,0,"yellow"]],"remove":[],"confidence":1.0,"question":""}"#);
        let resp = outcome.response().unwrap();
        assert_eq!(resp.add, vec![block(0, 1, 0, Color::Yellow)]);
        assert!(resp.remove.is_empty());
        assert_eq!(resp.confidence, 1.0);
        assert_eq!(resp.question, None);
    }

    #[test]
    fn parses_clarification_question() {
        let outcome = parse_response(
            r#"{"add":[[0,0,0,"blue"]],"remove":[],"confidence":0.4,"question":"What color should the block be and where specifically should I place it?"}"#,
        );
        let resp = outcome.response().unwrap();
        assert_eq!(resp.confidence, 0.4);
        assert_eq!(
            resp.question.as_deref(),
            Some("What color should the block be and where specifically should I place it?")
        );
    }

    #[test]
    fn disregard_reasons() {
        let cases = [
            (r#"{"add":[[12,0,0,"red"]],"remove":[],"confidence":1.0,"question":""}"#, DisregardReason::OutOfBoundsAction),
            (r#"{"add":[[0,0,0,"stone"]]}"#, DisregardReason::UnknownColor),
            (r#"{"add":[[0,0,"red"]]}"#, DisregardReason::SchemaViolation),
            (r#"{"add":[[0.5,0,0,"red"]]}"#, DisregardReason::SchemaViolation),
            (r#"{"add":"none"}"#, DisregardReason::SchemaViolation),
            (r#"{"confidence":"high"}"#, DisregardReason::SchemaViolation),
            (r#"{"question":7}"#, DisregardReason::SchemaViolation),
            (r#"{"add":[[0,0,0,"red"],}"#, DisregardReason::MalformedJson),
            (r#"{"add":[[99999999999999999999,0,0,"red"]]}"#, DisregardReason::OutOfBoundsAction),
            (r#"{"remove":[[0,0,0,"red",1]]}"#, DisregardReason::SchemaViolation),
            ("I cannot do that.", DisregardReason::NoJsonFound),
        ];
        for (raw, reason) in cases {
            assert_eq!(parse_response(raw), ParseOutcome::Disregarded(reason), "{raw}");
        }
    }

    #[test]
    fn first_failing_entry_decides_the_reason() {
        let raw = r#"{"add":[[0,0,0,"stone"],[12,0,0,"red"]]}"#;
        assert_eq!(
            parse_response(raw),
            ParseOutcome::Disregarded(DisregardReason::UnknownColor)
        );
    }

    #[test]
    fn defaults_and_normalization() {
        let resp = parse_response(r#"{"extra":true}"#).response().cloned().unwrap();
        assert!(resp.add.is_empty() && resp.remove.is_empty());
        assert_eq!(resp.confidence, 0.0);
        assert_eq!(resp.question, None);

        let resp = parse_response(r#"{"add":[[0,0,0,"RED"]],"confidence":3.5,"question":"   "}"#)
            .response()
            .cloned()
            .unwrap();
        assert_eq!(resp.add[0].color, Color::Red);
        assert_eq!(resp.confidence, 1.0);
        assert_eq!(resp.question, None);

        let resp = parse_response(r#"{"confidence":-2,"add":null}"#)
            .response()
            .cloned()
            .unwrap();
        assert_eq!(resp.confidence, 0.0);
    }

    #[test]
    fn remove_entries_may_omit_color() {
        let resp = parse_response(r#"{"remove":[[1,0,1],[2,0,2,"green"]]}"#)
            .response()
            .cloned()
            .unwrap();
        assert_eq!(resp.remove[0].color, None);
        assert_eq!(resp.remove[1].color, Some(Color::Green));
    }

    #[test]
    fn to_diff_examples() {
        let add_red = BuilderResponse::new(vec![block(0, 0, 0, Color::Red)], vec![], 1.0, None);
        let diff = to_diff(&add_red, &WorldState::new());
        assert_eq!(diff.added.iter().copied().collect::<Vec<_>>(), vec![block(0, 0, 0, Color::Red)]);
        assert!(diff.removed.is_empty());

        let blue = WorldState::from_blocks([block(0, 0, 0, Color::Blue)]).unwrap();
        let swap = BuilderResponse::new(
            vec![block(0, 0, 0, Color::Red)],
            vec![block(0, 0, 0, Color::Blue).into()],
            1.0,
            None,
        );
        let diff = to_diff(&swap, &blue);
        assert_eq!(diff.removed.iter().copied().collect::<Vec<_>>(), vec![block(0, 0, 0, Color::Blue)]);
        assert_eq!(diff.added.iter().copied().collect::<Vec<_>>(), vec![block(0, 0, 0, Color::Red)]);

        let remove_empty = BuilderResponse::new(vec![], vec![Removal::new(Coord::ORIGIN, None)], 1.0, None);
        let (_, diff, warnings) = apply_response(&remove_empty, &WorldState::new());
        assert!(diff.removed.is_empty());
        assert_eq!(warnings, vec![ActionWarning::RemovedEmptyCell { pos: [0, 0, 0] }]);
    }

    #[test]
    fn removal_color_mismatch_is_a_warning_only() {
        let blue = WorldState::from_blocks([block(0, 0, 0, Color::Blue)]).unwrap();
        let resp = BuilderResponse::new(vec![], vec![block(0, 0, 0, Color::Red).into()], 1.0, None);
        let (world, diff, warnings) = apply_response(&resp, &blue);
        assert!(world.is_empty());
        assert_eq!(diff.removed.len(), 1);
        assert!(matches!(warnings[0], ActionWarning::RemoveColorMismatch { found: Color::Blue, .. }));
    }

    #[test]
    fn removals_run_before_additions() {
        let resp = BuilderResponse::new(
            vec![block(0, 0, 0, Color::Green)],
            vec![Removal::new(Coord::ORIGIN, None)],
            1.0,
            None,
        );
        let (world, _, _) = apply_response(&resp, &WorldState::new());
        assert_eq!(world.get(Coord::ORIGIN), Some(Color::Green));
    }

    #[test]
    fn render_matches_prompt_shape() {
        let resp = BuilderResponse::new(vec![block(0, 1, 0, Color::Yellow)], vec![], 1.0, None);
        assert_eq!(
            render_response(&resp),
            r#"{"add":[[0,1,0,"yellow"]],"remove":[],"confidence":1.0,"question":""}"#
        );
    }
}
