use std::collections::BTreeMap;

use blockwork_core::agents::{OracleArchitect, OracleBuilder};
use blockwork_core::protocol::{
    apply_response, parse_response, parse_response_bytes, render_response, to_diff, BuilderResponse, ParseOutcome,
    Removal,
};
use blockwork_core::session::{replay, run_session, AgentKind, SessionConfig, SessionOutcome};
use blockwork_core::world::{
    equals_target, parse_blocks, serialize_blocks, Block, Color, Coord, WorldDiff, WorldState,
};
use proptest::prelude::*;

fn coord() -> impl Strategy<Value = Coord> {
    (-5i64..=5, 0i64..=8, -5i64..=5).prop_map(|(x, y, z)| Coord::new(x, y, z).unwrap())
}

fn color() -> impl Strategy<Value = Color> {
    prop::sample::select(Color::ALL.to_vec())
}

fn block() -> impl Strategy<Value = Block> {
    (coord(), color()).prop_map(|(pos, color)| Block::new(pos, color))
}

fn world(max: usize) -> impl Strategy<Value = WorldState> {
    prop::collection::btree_map(coord(), color(), 0..=max)
        .prop_map(|cells| cells.into_iter().map(|(pos, color)| Block::new(pos, color)).collect())
}

fn reference_text(cells: &BTreeMap<(i32, i32, i32), Color>) -> String {
    let mut rows: Vec<(i32, i32, i32, Color)> = cells.iter().map(|(&(x, y, z), &c)| (x, y, z, c)).collect();
    rows.sort_by_key(|&(x, y, z, _)| (y, z, x));
    let items: Vec<String> = rows
        .iter()
        .map(|(x, y, z, c)| format!("[{x},{y},{z},\"{}\"]", c.as_str()))
        .collect();
    format!("[{}]", items.join(","))
}

fn response() -> impl Strategy<Value = BuilderResponse> {
    let removal = (coord(), prop::option::of(color())).prop_map(|(pos, color)| Removal::new(pos, color));
    (
        prop::collection::vec(block(), 0..6),
        prop::collection::vec(removal, 0..6),
        0.0f64..=1.0,
        prop::option::of("[ -~]{0,40}"),
    )
        .prop_map(|(add, remove, confidence, question)| BuilderResponse::new(add, remove, confidence, question))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn serialization_round_trips(w in world(40)) {
        prop_assert_eq!(parse_blocks(&serialize_blocks(&w)).unwrap(), w);
    }

    #[test]
    fn serialization_is_canonical(w in world(40)) {
        let cells: BTreeMap<(i32, i32, i32), Color> =
            w.blocks().map(|b| ((b.pos.x(), b.pos.y(), b.pos.z()), b.color)).collect();
        prop_assert_eq!(serialize_blocks(&w), reference_text(&cells));
    }

    #[test]
    fn insertion_order_does_not_matter(w in world(30), seed in any::<u64>()) {
        let mut blocks: Vec<Block> = w.blocks().collect();
        let n = blocks.len();
        if n > 1 {
            blocks.rotate_left((seed as usize) % n);
            blocks.reverse();
        }
        let rebuilt = WorldState::from_blocks(blocks).unwrap();
        prop_assert_eq!(serialize_blocks(&rebuilt), serialize_blocks(&w));
    }

    #[test]
    fn target_equality_is_an_equivalence(a in world(10), b in world(10), c in world(10)) {
        prop_assert!(equals_target(&a, &a));
        prop_assert_eq!(equals_target(&a, &b), equals_target(&b, &a));
        if equals_target(&a, &b) && equals_target(&b, &c) {
            prop_assert!(equals_target(&a, &c));
        }
        prop_assert_eq!(equals_target(&a, &b), a.distance(&b) == 0);
    }

    #[test]
    fn recoloring_breaks_equality(w in world(10).prop_filter("non-empty", |w| !w.is_empty()), shift in 1usize..6) {
        let first = w.blocks().next().unwrap();
        let idx = Color::ALL.iter().position(|&c| c == first.color).unwrap();
        let other = Color::ALL[(idx + shift) % Color::ALL.len()];
        let (recolored, _) = w.apply_add(Block::new(first.pos, other));
        prop_assert!(!equals_target(&w, &recolored));
    }

    #[test]
    fn diff_applies_and_inverts(a in world(25), b in world(25)) {
        let diff = WorldDiff::between(&a, &b);
        prop_assert_eq!(a.apply_diff(&diff).unwrap(), b.clone());
        prop_assert_eq!(b.apply_diff(&diff.inverse()).unwrap(), a.clone());
        prop_assert_eq!(diff.len(), a.distance(&b));
    }

    #[test]
    fn distance_is_a_metric(a in world(12), b in world(12), c in world(12)) {
        prop_assert_eq!(a.distance(&b), b.distance(&a));
        prop_assert!(a.distance(&c) <= a.distance(&b) + b.distance(&c));
    }

    #[test]
    fn protocol_round_trips(resp in response()) {
        let text = render_response(&resp);
        prop_assert_eq!(parse_response(&text), ParseOutcome::Ok(resp));
    }

    #[test]
    fn fenced_protocol_round_trips(resp in response(), prose in "[a-zA-Z .,!]{0,30}") {
        let text = format!("{prose}\n```json\n{}\n```\n{prose}", render_response(&resp));
        prop_assert_eq!(parse_response(&text), ParseOutcome::Ok(resp));
    }

    #[test]
    fn parse_is_total_on_text(raw in ".{0,200}") {
        let _ = parse_response(&raw);
    }

    #[test]
    fn parse_is_total_on_bytes(raw in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = parse_response_bytes(&raw);
    }

    #[test]
    fn parse_is_total_on_json_like_noise(raw in "[\\[\\]{}\",:0-9a-z\\\\ -]{0,120}") {
        let _ = parse_response(&raw);
    }

    #[test]
    fn net_diff_matches_applied_world(resp in response(), w in world(20)) {
        let (next, diff, _) = apply_response(&resp, &w);
        prop_assert_eq!(WorldDiff::between(&w, &next), diff.clone());
        prop_assert_eq!(w.apply_diff(&diff).unwrap(), next);
        prop_assert_eq!(to_diff(&resp, &w), diff);
    }

    #[test]
    fn removals_precede_additions(b in block()) {
        let resp = BuilderResponse::new(vec![b], vec![Removal::new(b.pos, None)], 1.0, None);
        let (next, _, _) = apply_response(&resp, &WorldState::new());
        prop_assert_eq!(next.get(b.pos), Some(b.color));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn oracle_pair_converges(target in world(20), seed in world(6)) {
        let mut config = SessionConfig::new(target.clone(), AgentKind::Oracle, AgentKind::Oracle);
        config.seed_world = seed.clone();
        config.max_turns = 60;
        let transcript = run_session(&config, &mut OracleArchitect::new(target.clone()), &mut OracleBuilder).unwrap();
        let reached = matches!(transcript.outcome(), SessionOutcome::GoalReached);
        prop_assert!(reached);
        prop_assert!(equals_target(&transcript.final_world, &target));
        let turns = transcript.distance_trace().len();
        prop_assert!(turns <= seed.distance(&target).max(1));
        let trace: Vec<usize> = transcript.distance_trace().iter().map(|&(_, d)| d).collect();
        prop_assert!(trace.windows(2).all(|w| w[1] < w[0]));
        prop_assert_eq!(replay(&transcript).unwrap(), transcript.final_world.clone());
    }
}
