//! Topic-validation survey instruments: a 4-choice label-agreement task and
//! a 6-item intruder-detection task, plus exact-binomial scoring of
//! collected responses.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::corpus::BasketCorpus;
use crate::error::{Error, Result};
use crate::inference::TopicModel;
use crate::metrics::rank_products;

/// Relevance weighting used to pick shown products for both instruments.
pub const SURVEY_LAMBDA: f64 = 0.6;
pub const LABEL_TASK_PRODUCTS: usize = 10;
pub const LABEL_TASK_OPTIONS: usize = 4;
pub const INTRUDER_IN_TOPIC: usize = 5;
pub const INTRUDER_OPTIONS: usize = 6;
pub const LABEL_CHANCE: f64 = 0.25;
pub const INTRUDER_CHANCE: f64 = 1.0 / 6.0;

/// Chance level as a percentage with two decimals, e.g. "25.00%".
pub fn chance_percent(chance: f64) -> String {
    format!("{:.2}%", chance * 100.0)
}

/// Pick-the-label task: 10 top-relevance products shown, 4 label options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelTask {
    pub id: String,
    pub topic: usize,
    /// The topic's 10 highest-relevance products.
    pub product_ids: Vec<String>,
    /// Four labels in shuffled order: the topic's own and three distractors.
    pub options: Vec<String>,
    /// Index of the correct label within `options`.
    pub answer: usize,
    pub chance: f64,
    pub seed: u64,
}

/// Spot-the-intruder task: 5 in-topic products plus one top product from a
/// different topic, in shuffled order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntruderTask {
    pub id: String,
    pub topic: usize,
    /// Six products in display order.
    pub product_ids: Vec<String>,
    /// Where the intruder came from.
    pub intruder_topic: usize,
    /// Index of the intruder within `product_ids`.
    pub answer: usize,
    pub chance: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Label,
    Intruder,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskKind::Label => "label",
            TaskKind::Intruder => "intruder",
        })
    }
}

/// Either survey instrument; serialized with a "type" discriminator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SurveyTask {
    Label(LabelTask),
    Intruder(IntruderTask),
}

impl SurveyTask {
    pub fn id(&self) -> &str {
        match self {
            SurveyTask::Label(t) => &t.id,
            SurveyTask::Intruder(t) => &t.id,
        }
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            SurveyTask::Label(_) => TaskKind::Label,
            SurveyTask::Intruder(_) => TaskKind::Intruder,
        }
    }

    pub fn topic(&self) -> usize {
        match self {
            SurveyTask::Label(t) => t.topic,
            SurveyTask::Intruder(t) => t.topic,
        }
    }

    pub fn answer(&self) -> usize {
        match self {
            SurveyTask::Label(t) => t.answer,
            SurveyTask::Intruder(t) => t.answer,
        }
    }

    pub fn chance(&self) -> f64 {
        match self {
            SurveyTask::Label(t) => t.chance,
            SurveyTask::Intruder(t) => t.chance,
        }
    }

    /// Number of answerable choices: option count or displayed products.
    pub fn num_choices(&self) -> usize {
        match self {
            SurveyTask::Label(t) => t.options.len(),
            SurveyTask::Intruder(t) => t.product_ids.len(),
        }
    }
}

fn top_product_ids(
    model: &TopicModel,
    corpus: &BasketCorpus,
    k: usize,
    n: usize,
) -> Result<Vec<String>> {
    let ranked = rank_products(model, corpus, k, SURVEY_LAMBDA, n)?;
    if ranked.len() < n {
        return Err(Error::invalid(format!(
            "topic {k} has only {} rankable products; need {n}",
            ranked.len()
        )));
    }
    Ok(ranked.into_iter().map(|r| r.product_id).collect())
}

/// Builds one label-agreement task for topic `k`. Distractor labels are
/// drawn uniformly without replacement from the other topics' distinct
/// labels; option order is shuffled by `seed`.
pub fn gen_label_task(
    model: &TopicModel,
    corpus: &BasketCorpus,
    topic_labels: &[String],
    k: usize,
    seed: u64,
) -> Result<LabelTask> {
    let num_topics = model.num_topics();
    if topic_labels.len() != num_topics {
        return Err(Error::invalid(format!(
            "expected {num_topics} topic labels, got {}",
            topic_labels.len()
        )));
    }
    if let Some(i) = topic_labels.iter().position(|l| l.is_empty()) {
        return Err(Error::invalid(format!("topic {i} has an empty label")));
    }
    if num_topics < LABEL_TASK_OPTIONS {
        return Err(Error::invalid(format!(
            "need at least {LABEL_TASK_OPTIONS} labeled topics for a forced-choice task, \
             got {num_topics}"
        )));
    }
    if k >= num_topics {
        return Err(Error::invalid(format!(
            "topic index {k} out of range for a {num_topics}-topic model"
        )));
    }
    let product_ids = top_product_ids(model, corpus, k, LABEL_TASK_PRODUCTS)?;
    let target = &topic_labels[k];

    // Distinct labels of other topics, first appearance order.
    let mut pool: Vec<&String> = Vec::new();
    for (i, label) in topic_labels.iter().enumerate() {
        if i != k && label != target && !pool.contains(&label) {
            pool.push(label);
        }
    }
    if pool.len() < LABEL_TASK_OPTIONS - 1 {
        return Err(Error::invalid(format!(
            "need at least {} distinct distractor labels, got {}",
            LABEL_TASK_OPTIONS - 1,
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let mut options: Vec<String> = vec![target.clone()];
    options.extend(pool[..LABEL_TASK_OPTIONS - 1].iter().map(|l| l.to_string()));
    options.shuffle(&mut rng);
    let answer = options.iter().position(|o| o == target).expect("target kept");

    Ok(LabelTask {
        id: format!("label-t{k}-s{seed}"),
        topic: k,
        product_ids,
        options,
        answer,
        chance: LABEL_CHANCE,
        seed,
    })
}

/// Builds one intruder task for topic `k`: its 5 top products plus the top
/// product of a uniformly chosen other topic. Alternative topics whose top
/// product already appears among the 5 are redrawn; when every alternative
/// collides the task is impossible.
pub fn gen_intruder_task(
    model: &TopicModel,
    corpus: &BasketCorpus,
    k: usize,
    seed: u64,
) -> Result<IntruderTask> {
    let num_topics = model.num_topics();
    if num_topics < 2 {
        return Err(Error::invalid("intruder tasks need at least 2 topics"));
    }
    if k >= num_topics {
        return Err(Error::invalid(format!(
            "topic index {k} out of range for a {num_topics}-topic model"
        )));
    }
    let in_topic = top_product_ids(model, corpus, k, INTRUDER_IN_TOPIC)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates: Vec<usize> = (0..num_topics).filter(|&t| t != k).collect();
    candidates.shuffle(&mut rng);
    let mut chosen: Option<(usize, String)> = None;
    for alt in candidates {
        let top = rank_products(model, corpus, alt, SURVEY_LAMBDA, 1)?;
        match top.into_iter().next() {
            Some(r) if !in_topic.contains(&r.product_id) => {
                chosen = Some((alt, r.product_id));
                break;
            }
            _ => continue,
        }
    }
    let Some((intruder_topic, intruder)) = chosen else {
        return Err(Error::invalid(format!(
            "every alternative topic's top product already appears among topic {k}'s products"
        )));
    };

    let mut product_ids = in_topic;
    product_ids.push(intruder.clone());
    product_ids.shuffle(&mut rng);
    let answer = product_ids.iter().position(|p| *p == intruder).expect("intruder kept");

    Ok(IntruderTask {
        id: format!("intruder-t{k}-s{seed}"),
        topic: k,
        product_ids,
        intruder_topic,
        answer,
        chance: INTRUDER_CHANCE,
        seed,
    })
}

/// JSON export: an array of tagged tasks.
pub fn write_tasks<W: Write>(tasks: &[SurveyTask], mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, tasks)
        .map_err(|e| Error::invalid(format!("JSON write failed: {e}")))?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_tasks<R: Read>(source: R) -> Result<Vec<SurveyTask>> {
    serde_json::from_reader(source)
        .map_err(|e| Error::invalid(format!("malformed task file: {e}")))
}

/// One collected answer.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyResponse {
    pub task_id: String,
    pub respondent_id: String,
    pub chosen_index: usize,
}

const RESPONSE_COLUMNS: [&str; 3] = ["task_id", "respondent_id", "chosen_index"];

/// Reads the responses CSV `task_id,respondent_id,chosen_index`.
pub fn read_responses<R: Read>(source: R) -> Result<Vec<SurveyResponse>> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(1, format!("invalid CSV header: {e}")))?
        .clone();
    let mut col = [usize::MAX; 3];
    for (want, slot) in RESPONSE_COLUMNS.iter().zip(col.iter_mut()) {
        match headers.iter().position(|h| h == *want) {
            Some(i) => *slot = i,
            None => return Err(Error::parse(1, format!("missing column {want:?} in CSV header"))),
        }
    }
    let mut rows = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::parse(line, format!("malformed CSV row: {e}"))
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| row.get(col[i]).unwrap_or("");
        let chosen_index = field(2)
            .parse::<usize>()
            .map_err(|_| Error::parse(line, format!("invalid chosen_index {:?}", field(2))))?;
        rows.push(SurveyResponse {
            task_id: field(0).to_string(),
            respondent_id: field(1).to_string(),
            chosen_index,
        });
    }
    Ok(rows)
}

/// One response with its correctness resolved.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredResponse {
    pub task_id: String,
    pub respondent_id: String,
    pub chosen_index: usize,
    pub correct: bool,
}

/// Aggregate for one (instrument, topic) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopicScore {
    pub kind: TaskKind,
    pub topic: usize,
    pub n: u64,
    pub correct: u64,
    pub proportion: f64,
    /// sqrt(p(1-p)/n).
    pub standard_error: f64,
    pub chance: f64,
    /// Exact binomial upper tail P(X >= correct) at the chance rate.
    pub p_value: f64,
}

/// Scored responses plus per-topic aggregates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResponseSheet {
    pub responses: Vec<ScoredResponse>,
    pub topics: Vec<TopicScore>,
}

pub fn write_sheet<W: Write>(sheet: &ResponseSheet, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, sheet)
        .map_err(|e| Error::invalid(format!("JSON write failed: {e}")))?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Upper tail P(X >= x) for X ~ Binomial(n, p). Exact at the boundaries:
/// 1.0 for x = 0 and p^n for x = n; interior sums run in log space.
fn binomial_tail(n: u64, x: u64, p: f64) -> f64 {
    debug_assert!(x <= n && (0.0..=1.0).contains(&p));
    if x == 0 {
        return 1.0;
    }
    if x == n {
        return p.powi(n as i32);
    }
    let q = 1.0 - p;
    let ln_n1 = ln_gamma(n as f64 + 1.0);
    let mut total = 0.0;
    for i in x..=n {
        let ln_term = ln_n1 - ln_gamma(i as f64 + 1.0) - ln_gamma((n - i) as f64 + 1.0)
            + i as f64 * p.ln()
            + (n - i) as f64 * q.ln();
        total += ln_term.exp();
    }
    total.min(1.0)
}

/// Marks each response right or wrong against its task and aggregates per
/// (instrument, topic): proportion correct, standard error, and an exact
/// binomial test against the chance rate. Aggregates are independent of
/// response order.
pub fn score_responses(
    tasks: &[SurveyTask],
    responses: &[SurveyResponse],
) -> Result<ResponseSheet> {
    let by_id: BTreeMap<&str, &SurveyTask> = tasks.iter().map(|t| (t.id(), t)).collect();
    let mut scored = Vec::with_capacity(responses.len());
    let mut groups: BTreeMap<(TaskKind, usize), (u64, u64, f64)> = BTreeMap::new();
    for r in responses {
        let task = by_id
            .get(r.task_id.as_str())
            .ok_or_else(|| Error::invalid(format!("response references unknown task {:?}", r.task_id)))?;
        if r.chosen_index >= task.num_choices() {
            return Err(Error::invalid(format!(
                "chosen index {} out of range for task {:?} with {} choices",
                r.chosen_index,
                r.task_id,
                task.num_choices()
            )));
        }
        let correct = r.chosen_index == task.answer();
        scored.push(ScoredResponse {
            task_id: r.task_id.clone(),
            respondent_id: r.respondent_id.clone(),
            chosen_index: r.chosen_index,
            correct,
        });
        let entry = groups.entry((task.kind(), task.topic())).or_insert((0, 0, task.chance()));
        entry.0 += 1;
        entry.1 += correct as u64;
    }
    let topics = groups
        .into_iter()
        .map(|((kind, topic), (n, correct, chance))| {
            let proportion = correct as f64 / n as f64;
            TopicScore {
                kind,
                topic,
                n,
                correct,
                proportion,
                standard_error: (proportion * (1.0 - proportion) / n as f64).sqrt(),
                chance,
                p_value: binomial_tail(n, correct, chance),
            }
        })
        .collect();
    Ok(ResponseSheet { responses: scored, topics })
}
