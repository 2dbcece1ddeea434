//! Instruction-following evaluation.
//!
//! An instance pairs an initial world and an instruction with the world the
//! instruction should produce. A builder's reply is applied to the initial
//! world; the instance is correct iff the result equals the target exactly
//! (color-sensitive). Block-level precision and recall compare the predicted
//! net diff against the ground-truth diff and are micro-averaged.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{place_instruction, remove_instruction, AgentReply, Builder, Speaker};
use crate::protocol::{render_response, to_diff, BuilderResponse, ParseOutcome, Removal};
use crate::world::{Block, Color, Coord, WorldDiff, WorldState};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no instance carries a clarification label")]
    NoLabeledInstances,
    #[error("dataset line {line}: {message}")]
    BadInstance { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("could not start worker pool: {0}")]
    Pool(String),
    #[error("responses ({responses}) do not line up with instances ({instances})")]
    LengthMismatch { instances: usize, responses: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalInstance {
    pub id: String,
    #[serde(default)]
    pub context: Vec<(Speaker, String)>,
    #[serde(default)]
    pub initial: WorldState,
    pub instruction: String,
    pub target: WorldState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requires_clarification: Option<bool>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockStats {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl BlockStats {
    pub fn compare(predicted: &WorldDiff, truth: &WorldDiff) -> Self {
        let hits = predicted.added.intersection(&truth.added).count()
            + predicted.removed.intersection(&truth.removed).count();
        BlockStats {
            true_positives: hits,
            false_positives: predicted.len() - hits,
            false_negatives: truth.len() - hits,
        }
    }

    /// Blocks of `world` against the blocks of `target`.
    pub fn of_world(world: &WorldState, target: &WorldState) -> Self {
        let hits = world.blocks().filter(|b| target.get(b.pos) == Some(b.color)).count();
        BlockStats {
            true_positives: hits,
            false_positives: world.len() - hits,
            false_negatives: target.len() - hits,
        }
    }

    /// 1.0 when nothing was predicted.
    pub fn precision(&self) -> f64 {
        ratio(self.true_positives, self.true_positives + self.false_positives)
    }

    /// 1.0 when there was nothing to find.
    pub fn recall(&self) -> f64 {
        ratio(self.true_positives, self.true_positives + self.false_negatives)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    fn add(self, other: BlockStats) -> BlockStats {
        BlockStats {
            true_positives: self.true_positives + other.true_positives,
            false_positives: self.false_positives + other.false_positives,
            false_negatives: self.false_negatives + other.false_negatives,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceScore {
    pub correct: bool,
    pub stats: BlockStats,
    pub reason: String,
}

/// Scores one reply against one instance.
pub fn score_instance(instance: &EvalInstance, response: &ParseOutcome) -> InstanceScore {
    let truth = WorldDiff::between(&instance.initial, &instance.target);
    match response {
        ParseOutcome::Disregarded(reason) => InstanceScore {
            correct: false,
            stats: BlockStats::compare(&WorldDiff::default(), &truth),
            reason: format!("disregarded:{reason}"),
        },
        ParseOutcome::Ok(resp) => {
            let predicted = to_diff(resp, &instance.initial);
            let correct = predicted == truth;
            InstanceScore {
                correct,
                stats: BlockStats::compare(&predicted, &truth),
                reason: if correct { "exact_match" } else { "mismatch" }.to_string(),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub id: String,
    pub correct: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub correct: usize,
    pub exact_match_accuracy: f64,
    pub block_precision: f64,
    pub block_recall: f64,
    pub block_f1: f64,
    pub disregard_rate: f64,
    pub error_rate: f64,
    pub question_precision: Option<f64>,
    pub question_recall: Option<f64>,
    pub per_instance: Vec<InstanceResult>,
}

impl EvalReport {
    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut writer = csv::Writer::from_writer(out);
        for row in &self.per_instance {
            writer
                .serialize(row)
                .map_err(|e| EvalError::Io(io::Error::other(e)))?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Row in the "Model, Accuracy %" layout.
    pub fn table_row(&self, label: &str) -> String {
        format!("{label}, {:.1}", self.exact_match_accuracy * 100.0)
    }
}

pub const TABLE_HEADER: &str = "Model, Accuracy %";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClarificationScore {
    /// `None` when no question was asked on a labeled instance.
    pub precision: Option<f64>,
    /// `None` when no labeled instance requires clarification.
    pub recall: Option<f64>,
}

fn asked_question(response: &ParseOutcome) -> bool {
    response.response().is_some_and(|r| r.question.is_some())
}

/// Question issuance as a binary prediction over labeled instances.
pub fn score_clarification(
    dataset: &[EvalInstance],
    responses: &[ParseOutcome],
) -> Result<ClarificationScore, EvalError> {
    if dataset.len() != responses.len() {
        return Err(EvalError::LengthMismatch {
            instances: dataset.len(),
            responses: responses.len(),
        });
    }
    let labeled: Vec<(bool, bool)> = dataset
        .iter()
        .zip(responses)
        .filter_map(|(inst, resp)| inst.requires_clarification.map(|label| (label, asked_question(resp))))
        .collect();
    clarification_from_pairs(&labeled).ok_or(EvalError::NoLabeledInstances)
}

fn clarification_from_pairs(pairs: &[(bool, bool)]) -> Option<ClarificationScore> {
    if pairs.is_empty() {
        return None;
    }
    let tp = pairs.iter().filter(|(label, asked)| *label && *asked).count();
    let asked = pairs.iter().filter(|(_, asked)| *asked).count();
    let positives = pairs.iter().filter(|(label, _)| *label).count();
    Some(ClarificationScore {
        precision: (asked > 0).then(|| tp as f64 / asked as f64),
        recall: (positives > 0).then(|| tp as f64 / positives as f64),
    })
}

struct Outcome {
    id: String,
    score: InstanceScore,
    disregarded: bool,
    errored: bool,
    label: Option<(bool, bool)>,
}

fn evaluate_one<F>(instance: &EvalInstance, factory: &F) -> Outcome
where
    F: Fn(&EvalInstance) -> Result<Box<dyn Builder>, String>,
{
    let reply = factory(instance).and_then(|mut builder| {
        builder.prime(&instance.context).map_err(|e| e.to_string())?;
        builder
            .respond(&instance.instruction, &instance.initial)
            .map_err(|e| e.to_string())
    });
    let outcome = match reply {
        Ok(AgentReply::BuilderActions { outcome, .. }) => outcome,
        Ok(AgentReply::ArchitectInstruction { .. }) => {
            return errored(instance, "builder produced a non-builder reply".into())
        }
        Err(message) => return errored(instance, message),
    };
    let score = score_instance(instance, &outcome);
    Outcome {
        id: instance.id.clone(),
        disregarded: outcome.disregarded().is_some(),
        errored: false,
        label: instance
            .requires_clarification
            .map(|label| (label, asked_question(&outcome))),
        score,
    }
}

fn errored(instance: &EvalInstance, message: String) -> Outcome {
    let truth = WorldDiff::between(&instance.initial, &instance.target);
    Outcome {
        id: instance.id.clone(),
        score: InstanceScore {
            correct: false,
            stats: BlockStats::compare(&WorldDiff::default(), &truth),
            reason: format!("error:{message}"),
        },
        disregarded: false,
        errored: true,
        label: instance.requires_clarification.map(|label| (label, false)),
    }
}

/// Evaluates every instance with a fresh builder from `factory`, running up
/// to `parallelism` instances at once. Per-instance failures are scored as
/// incorrect and do not stop the run.
pub fn run_eval<F>(dataset: &[EvalInstance], factory: F, parallelism: usize) -> Result<EvalReport, EvalError>
where
    F: Fn(&EvalInstance) -> Result<Box<dyn Builder>, String> + Sync,
{
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    let mut outcomes: Vec<Outcome> =
        pool.install(|| dataset.par_iter().map(|inst| evaluate_one(inst, &factory)).collect());
    outcomes.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(aggregate(outcomes))
}

fn aggregate(outcomes: Vec<Outcome>) -> EvalReport {
    let n = outcomes.len();
    let correct = outcomes.iter().filter(|o| o.score.correct).count();
    let stats = outcomes
        .iter()
        .fold(BlockStats::default(), |acc, o| acc.add(o.score.stats));
    let disregarded = outcomes.iter().filter(|o| o.disregarded).count();
    let errors = outcomes.iter().filter(|o| o.errored).count();
    let labeled: Vec<(bool, bool)> = outcomes.iter().filter_map(|o| o.label).collect();
    let clarification = clarification_from_pairs(&labeled);
    EvalReport {
        n,
        correct,
        exact_match_accuracy: correct as f64 / n as f64,
        block_precision: stats.precision(),
        block_recall: stats.recall(),
        block_f1: stats.f1(),
        disregard_rate: disregarded as f64 / n as f64,
        error_rate: errors as f64 / n as f64,
        question_precision: clarification.and_then(|c| c.precision),
        question_recall: clarification.and_then(|c| c.recall),
        per_instance: outcomes
            .into_iter()
            .map(|o| InstanceResult {
                id: o.id,
                correct: o.score.correct,
                reason: o.score.reason,
            })
            .collect(),
    }
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<Vec<EvalInstance>, EvalError> {
    let mut instances = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| EvalError::BadInstance { line: i + 1, message };
        let instance: EvalInstance = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if instance.instruction.trim().is_empty() {
            return Err(bad("instruction is empty".into()));
        }
        instances.push(instance);
    }
    Ok(instances)
}

pub fn load_dataset(path: &Path) -> Result<Vec<EvalInstance>, EvalError> {
    read_dataset(io::BufReader::new(fs::File::open(path)?))
}

pub fn write_dataset<W: Write>(dataset: &[EvalInstance], mut out: W) -> Result<(), EvalError> {
    for instance in dataset {
        let line = serde_json::to_string(instance).map_err(io::Error::other)?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn random_coord(rng: &mut ChaCha8Rng) -> Coord {
    Coord::new(
        rng.random_range(-5..=5),
        rng.random_range(0..=8),
        rng.random_range(-5..=5),
    )
    .expect("sampled within bounds")
}

fn random_color(rng: &mut ChaCha8Rng) -> Color {
    *Color::ALL.choose(rng).expect("six colors")
}

/// Seeded dataset of grammar instructions whose targets are exactly what
/// the oracle grammar prescribes. Earlier placements show up as context.
pub fn synthetic_dataset(seed: u64, count: usize) -> Vec<EvalInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let mut initial = WorldState::new();
            let mut context = Vec::new();
            for _ in 0..rng.random_range(0..=6) {
                let block = Block::new(random_coord(&mut rng), random_color(&mut rng));
                initial = initial.apply_add(block).0;
                if context.len() < 4 {
                    context.push((Speaker::Architect, place_instruction(block)));
                    let reply = BuilderResponse::new(vec![block], vec![], 1.0, None);
                    context.push((Speaker::Builder, render_response(&reply)));
                }
            }
            let existing: Vec<Block> = initial.blocks().collect();
            let (instruction, target) = match existing.choose(&mut rng) {
                Some(victim) if rng.random_bool(0.3) => {
                    let resp = BuilderResponse::new(vec![], vec![Removal::from(*victim)], 1.0, None);
                    let target = initial.apply_diff(&to_diff(&resp, &initial)).expect("own diff applies");
                    (remove_instruction(victim.pos), target)
                }
                _ => {
                    let block = Block::new(random_coord(&mut rng), random_color(&mut rng));
                    (place_instruction(block), initial.apply_add(block).0)
                }
            };
            EvalInstance {
                id: format!("syn-{seed}-{i:05}"),
                context,
                initial,
                instruction,
                target,
                requires_clarification: Some(false),
            }
        })
        .collect()
}
