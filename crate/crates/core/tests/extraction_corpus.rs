//! Hand-written model outputs. Whatever `extract_json` returns must be
//! the exact object a strict JSON parser reads from the intended span.

use blockwork_core::protocol::{extract_json, parse_response, DisregardReason, ParseOutcome};
use serde_json::Value;

enum Expect {
    Object(&'static str),
    Reason(DisregardReason),
}

use DisregardReason::*;
use Expect::*;

const RED: &str = r#"{"add":[[0,0,0,"red"]],"remove":[],"confidence":1.0,"question":""}"#;

fn corpus() -> Vec<(String, Expect)> {
    vec![
        (RED.into(), Object(RED)),
        (format!("```json\n{RED}\n```"), Object(RED)),
        (format!("```JSON\n{RED}\n```"), Object(RED)),
        (format!("```\n{RED}\n```"), Object(RED)),
        (format!("Sure! Here you go:\n```json\n{RED}\n```\nLet me know."), Object(RED)),
        (format!("Here is my answer: {RED} Hope that helps."), Object(RED)),
        (format!("```json\n{RED}"), Object(RED)),
        (format!("  \n\t{RED}\n\n"), Object(RED)),
        (
            r#"{"add":[],"remove":[],"confidence":0.4,"question":"Which {color} do you mean?"}"#.into(),
            Object(r#"{"add":[],"remove":[],"confidence":0.4,"question":"Which {color} do you mean?"}"#),
        ),
        (
            r#"{"add":[],"confidence":0.5,"question":"a \"quoted\" } brace"}"#.into(),
            Object(r#"{"add":[],"confidence":0.5,"question":"a \"quoted\" } brace"}"#),
        ),
        (
            r#"{"add":[],"question":"back\\slash"} trailing"#.into(),
            Object(r#"{"add":[],"question":"back\\slash"}"#),
        ),
        (
            "I think {this} is wrong but {\"add\":[[1,0,1,\"blue\"]]} is right".into(),
            Object("{this}"),
        ),
        (
            "```python\nprint('no json here')\n```\n{\"add\":[[1,0,1,\"blue\"]]}".into(),
            Object("{\"add\":[[1,0,1,\"blue\"]]}"),
        ),
        (
            format!("first {RED} second {{\"add\":[[1,1,1,\"blue\"]]}}"),
            Object(RED),
        ),
        (
            r#"{"meta":{"nested":{"deep":true}},"add":[]}"#.into(),
            Object(r#"{"meta":{"nested":{"deep":true}},"add":[]}"#),
        ),
        ("no json at all".into(), Reason(NoJsonFound)),
        ("".into(), Reason(NoJsonFound)),
        ("[[0,0,0,\"red\"]]".into(), Reason(NoJsonFound)),
        ("{\"add\": [[0,0,0,\"red\"]".into(), Reason(NoJsonFound)),
        ("{'add': []}".into(), Reason(MalformedJson)),
        ("{\"add\": [[0,0,0,\"red\"],]}".into(), Reason(MalformedJson)),
        ("{\"add\": [[0,0,0,\"magenta\"]]}".into(), Reason(UnknownColor)),
        ("{\"add\": [[0,0,0,\"Red\"]]}".into(), Object("{\"add\": [[0,0,0,\"Red\"]]}")),
        ("{\"add\": [[6,0,0,\"red\"]]}".into(), Reason(OutOfBoundsAction)),
        ("{\"add\": [[0,-1,0,\"red\"]]}".into(), Reason(OutOfBoundsAction)),
        ("{\"add\": [[0,9,0,\"red\"]]}".into(), Reason(OutOfBoundsAction)),
        ("{\"add\": [[0.5,0,0,\"red\"]]}".into(), Reason(SchemaViolation)),
        ("{\"add\": [[0,0,0]]}".into(), Reason(SchemaViolation)),
        ("{\"add\": \"red block\"}".into(), Reason(SchemaViolation)),
        ("{\"confidence\": \"high\"}".into(), Reason(SchemaViolation)),
        ("{\"remove\": [[0,0,0]], \"question\": 7}".into(), Reason(SchemaViolation)),
        ("{\"remove\": [[0,0,0]]}".into(), Object("{\"remove\": [[0,0,0]]}")),
    ]
}

#[test]
fn corpus_has_enough_cases() {
    assert!(corpus().len() >= 30);
}

#[test]
fn extraction_matches_strict_reference() {
    for (input, expect) in corpus() {
        match expect {
            Object(span) => {
                let reference: Value = serde_json::from_str(span)
                    .unwrap_or_else(|_| Value::String(span.to_string()));
                let got = extract_json(&input).unwrap_or_else(|| panic!("nothing extracted from {input:?}"));
                assert_eq!(got, span, "input {input:?}");
                if let Ok(parsed) = serde_json::from_str::<Value>(got) {
                    assert_eq!(parsed, reference, "input {input:?}");
                }
            }
            Reason(reason) => {
                assert_eq!(parse_response(&input), ParseOutcome::Disregarded(reason), "input {input:?}");
            }
        }
    }
}

#[test]
fn extracted_objects_that_strictly_parse_are_accepted_or_schema_checked() {
    for (input, _) in corpus() {
        let outcome = parse_response(&input);
        match extract_json(&input) {
            None => assert_eq!(outcome, ParseOutcome::Disregarded(NoJsonFound)),
            Some(span) => match serde_json::from_str::<Value>(span) {
                Err(_) => assert_eq!(outcome, ParseOutcome::Disregarded(MalformedJson)),
                Ok(_) => assert_ne!(outcome.disregarded(), Some(MalformedJson), "input {input:?}"),
            },
        }
    }
}
