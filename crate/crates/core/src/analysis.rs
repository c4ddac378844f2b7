//! Downstream analyses: basket topic labeling, seasonal and weekday
//! prevalence indices, customer-level topic features, and demographic
//! prediction with stratified cross-validation.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::BasketCorpus;
use crate::error::{Error, Result};
use crate::inference::{infer_mixture, TopicModel};
use crate::logreg;

fn csv_io(e: csv::Error) -> Error {
    Error::invalid(format!("CSV write failed: {e}"))
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in values.iter().enumerate().skip(1) {
        if x > values[best] {
            best = i;
        }
    }
    best
}

/// One basket's dominant topic, with the context needed for prevalence
/// analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct BasketLabel {
    pub basket_id: String,
    /// Argmax topic of the basket's mixture; ties break to the lowest index.
    pub label: usize,
    pub date: Option<NaiveDate>,
    pub customer_id: Option<String>,
}

/// Dominant-topic labels for a whole corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct BasketLabeling {
    pub num_topics: usize,
    pub labels: Vec<BasketLabel>,
}

/// Labels every basket with the argmax topic of its inferred mixture.
pub fn label_baskets(model: &TopicModel, corpus: &BasketCorpus) -> Result<BasketLabeling> {
    if model.vocab().hash() != corpus.vocab().hash() {
        return Err(Error::invalid("model and corpus vocabularies differ"));
    }
    let labels = corpus
        .baskets()
        .iter()
        .map(|b| {
            let mix = infer_mixture(model, b)?;
            Ok(BasketLabel {
                basket_id: b.id.clone(),
                label: argmax(&mix.theta),
                date: b.date,
                customer_id: b.customer_id.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BasketLabeling { num_topics: model.num_topics(), labels })
}

/// Calendar bucketing for prevalence indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeriodKind {
    Month,
    Weekday,
}

impl std::fmt::Display for PeriodKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PeriodKind::Month => "month",
            PeriodKind::Weekday => "weekday",
        })
    }
}

impl FromStr for PeriodKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "month" => Ok(PeriodKind::Month),
            "weekday" => Ok(PeriodKind::Weekday),
            other => Err(Error::invalid(format!(
                "unknown period kind {other:?} (expected \"month\" or \"weekday\")"
            ))),
        }
    }
}

const WEEKDAY_NAMES: [&str; 7] =
    ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"];

/// One calendar bucket's topic proportions and indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PrevalencePeriod {
    /// Month number "1".."12", or a lowercase weekday name.
    pub period: String,
    pub basket_count: u64,
    /// Per-topic share of this period's baskets; sums to 1.
    pub proportions: Vec<f64>,
    /// proportion / (mean proportion across topics) = K * proportion.
    pub indices: Vec<f64>,
}

/// Topic prevalence per calendar period. Periods with no baskets are absent.
#[derive(Debug, Clone, PartialEq)]
pub struct PrevalenceIndex {
    pub kind: PeriodKind,
    pub num_topics: usize,
    /// Months ascending, or weekdays Monday through Sunday.
    pub periods: Vec<PrevalencePeriod>,
}

/// Buckets labeled baskets by month or weekday. A topic's index in a period
/// is its share of that period's baskets divided by the across-topic mean
/// share (which is 1/K), so 1.0 means average prevalence.
pub fn prevalence_index(labeling: &BasketLabeling, kind: PeriodKind) -> Result<PrevalenceIndex> {
    let k = labeling.num_topics;
    // slot -> per-topic counts; slots are month-1 or days-from-Monday.
    let mut buckets: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    for label in &labeling.labels {
        let date = label.date.ok_or_else(|| {
            Error::invalid(format!(
                "basket {:?} has no date; prevalence analysis needs dated baskets",
                label.basket_id
            ))
        })?;
        let slot = match kind {
            PeriodKind::Month => date.month0() as usize,
            PeriodKind::Weekday => date.weekday().num_days_from_monday() as usize,
        };
        buckets.entry(slot).or_insert_with(|| vec![0; k])[label.label] += 1;
    }
    let periods = buckets
        .into_iter()
        .map(|(slot, counts)| {
            let total: u64 = counts.iter().sum();
            let proportions: Vec<f64> =
                counts.iter().map(|&c| c as f64 / total as f64).collect();
            let indices: Vec<f64> = proportions.iter().map(|&p| k as f64 * p).collect();
            PrevalencePeriod {
                period: match kind {
                    PeriodKind::Month => (slot + 1).to_string(),
                    PeriodKind::Weekday => WEEKDAY_NAMES[slot].to_string(),
                },
                basket_count: total,
                proportions,
                indices,
            }
        })
        .collect();
    Ok(PrevalenceIndex { kind, num_topics: k, periods })
}

impl PrevalenceIndex {
    /// CSV layout: topic,period,proportion,index.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["topic", "period", "proportion", "index"]).map_err(csv_io)?;
        for t in 0..self.num_topics {
            for p in &self.periods {
                w.write_record([
                    t.to_string(),
                    p.period.clone(),
                    p.proportions[t].to_string(),
                    p.indices[t].to_string(),
                ])
                .map_err(csv_io)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// One customer's averaged topic mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct CustomerFeature {
    pub customer_id: String,
    /// Unweighted mean of the customer's per-basket mixtures; sums to 1.
    pub mean_theta: Vec<f64>,
    pub basket_count: u32,
}

/// Customer-level features, sorted by customer id.
#[derive(Debug, Clone, PartialEq)]
pub struct CustomerFeatures {
    pub num_topics: usize,
    pub customers: Vec<CustomerFeature>,
}

/// Averages per-basket mixtures per customer. Baskets without a customer id
/// are skipped with a warning; a corpus with none at all is an error.
pub fn customer_features(model: &TopicModel, corpus: &BasketCorpus) -> Result<CustomerFeatures> {
    if model.vocab().hash() != corpus.vocab().hash() {
        return Err(Error::invalid("model and corpus vocabularies differ"));
    }
    let k = model.num_topics();
    let mut sums: BTreeMap<&str, (Vec<f64>, u32)> = BTreeMap::new();
    let mut skipped = 0usize;
    for basket in corpus.baskets() {
        let Some(customer) = basket.customer_id.as_deref() else {
            skipped += 1;
            continue;
        };
        let mix = infer_mixture(model, basket)?;
        let entry = sums.entry(customer).or_insert_with(|| (vec![0.0; k], 0));
        for (s, t) in entry.0.iter_mut().zip(&mix.theta) {
            *s += t;
        }
        entry.1 += 1;
    }
    if skipped > 0 {
        log::warn!("{skipped} baskets without customer ids were skipped");
    }
    if sums.is_empty() {
        return Err(Error::invalid("corpus lacks customer identifiers"));
    }
    let customers = sums
        .into_iter()
        .map(|(id, (sum, n))| CustomerFeature {
            customer_id: id.to_string(),
            mean_theta: sum.iter().map(|s| s / n as f64).collect(),
            basket_count: n,
        })
        .collect();
    Ok(CustomerFeatures { num_topics: k, customers })
}

pub const AGE_BANDS: [&str; 4] = ["18-29", "30-44", "45-59", "60+"];
pub const REGIONS: [&str; 2] = ["england", "regional"];
pub const GENDERS: [&str; 2] = ["f", "m"];

/// One customer's demographic attributes; absent fields were left empty in
/// the source file.
#[derive(Debug, Clone, PartialEq)]
pub struct DemographicRecord {
    pub customer_id: String,
    pub age_band: Option<String>,
    pub region: Option<String>,
    pub gender: Option<String>,
}

const DEMOGRAPHIC_COLUMNS: [&str; 4] = ["customer_id", "age_band", "region", "gender"];

fn validated(line: u64, what: &str, value: &str, domain: &[&str]) -> Result<Option<String>> {
    if value.is_empty() {
        return Ok(None);
    }
    if domain.contains(&value) {
        Ok(Some(value.to_string()))
    } else {
        Err(Error::parse(
            line,
            format!("unknown {what} {value:?} (expected one of {domain:?})"),
        ))
    }
}

/// Reads the demographics CSV `customer_id,age_band,region,gender`. Empty
/// attribute fields mean the customer did not disclose that attribute.
pub fn read_demographics<R: Read>(source: R) -> Result<Vec<DemographicRecord>> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(1, format!("invalid CSV header: {e}")))?
        .clone();
    let mut col = [usize::MAX; 4];
    for (want, slot) in DEMOGRAPHIC_COLUMNS.iter().zip(col.iter_mut()) {
        match headers.iter().position(|h| h == *want) {
            Some(i) => *slot = i,
            None => return Err(Error::parse(1, format!("missing column {want:?} in CSV header"))),
        }
    }
    let mut rows = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::parse(line, format!("malformed CSV row: {e}"))
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| row.get(col[i]).unwrap_or("");
        let customer_id = field(0).to_string();
        if customer_id.is_empty() {
            return Err(Error::parse(line, "empty customer_id".to_string()));
        }
        if !seen.insert(customer_id.clone()) {
            return Err(Error::parse(line, format!("duplicate customer id {customer_id:?}")));
        }
        rows.push(DemographicRecord {
            customer_id,
            age_band: validated(line, "age band", field(1), &AGE_BANDS)?,
            region: validated(line, "region", field(2), &REGIONS)?,
            gender: validated(line, "gender", field(3), &GENDERS)?,
        });
    }
    Ok(rows)
}

/// Writes the demographics CSV; absent attributes become empty fields.
pub fn write_demographics<W: Write>(rows: &[DemographicRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DEMOGRAPHIC_COLUMNS).map_err(csv_io)?;
    for r in rows {
        w.write_record([
            r.customer_id.as_str(),
            r.age_band.as_deref().unwrap_or(""),
            r.region.as_deref().unwrap_or(""),
            r.gender.as_deref().unwrap_or(""),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Which demographic attribute to predict from topic features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemographicTask {
    Age,
    Region,
    Gender,
}

impl DemographicTask {
    pub fn classes(&self) -> &'static [&'static str] {
        match self {
            DemographicTask::Age => &AGE_BANDS,
            DemographicTask::Region => &REGIONS,
            DemographicTask::Gender => &GENDERS,
        }
    }

    fn label_of<'a>(&self, record: &'a DemographicRecord) -> Option<&'a str> {
        match self {
            DemographicTask::Age => record.age_band.as_deref(),
            DemographicTask::Region => record.region.as_deref(),
            DemographicTask::Gender => record.gender.as_deref(),
        }
    }

    /// Binary tasks are selected by AUC, the multi-class age task by
    /// accuracy; both metrics are always reported for binary tasks.
    fn selection_metric(&self) -> &'static str {
        match self {
            DemographicTask::Age => "accuracy",
            DemographicTask::Region | DemographicTask::Gender => "auc",
        }
    }
}

impl std::fmt::Display for DemographicTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DemographicTask::Age => "age",
            DemographicTask::Region => "region",
            DemographicTask::Gender => "gender",
        })
    }
}

impl FromStr for DemographicTask {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "age" => Ok(DemographicTask::Age),
            "region" => Ok(DemographicTask::Region),
            "gender" => Ok(DemographicTask::Gender),
            other => Err(Error::invalid(format!(
                "unknown task {other:?} (expected \"age\", \"region\", or \"gender\")"
            ))),
        }
    }
}

/// One cross-validation fold's evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldMetric {
    pub fold: usize,
    pub test_size: usize,
    pub accuracy: f64,
    /// Present for binary tasks only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    /// Frequency of the test fold's majority class: the accuracy of always
    /// predicting it.
    pub baseline: f64,
}

/// Cross-validation outcome for the selected regularization strength.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub task: String,
    pub classes: Vec<String>,
    pub grid: Vec<f64>,
    pub chosen_lambda: f64,
    /// Metric the grid search maximized: "accuracy" or "auc".
    pub selection_metric: String,
    pub folds: Vec<FoldMetric>,
    pub mean_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_auc: Option<f64>,
    pub mean_baseline: f64,
}

/// Fitted demographic classifier with its cross-validation report.
#[derive(Debug, Clone, PartialEq)]
pub struct DemographicModel {
    pub task: DemographicTask,
    /// Observed classes in canonical order; weight rows align with these.
    pub classes: Vec<String>,
    /// Per-class weights over the K topic features.
    pub weights: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    pub lambda_reg: f64,
    pub report: CvReport,
}

/// Pretty-printed JSON export of the CV report.
pub fn write_cv_report<W: Write>(report: &CvReport, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, report)
        .map_err(|e| Error::invalid(format!("JSON write failed: {e}")))?;
    out.write_all(b"\n")?;
    Ok(())
}

/// Labeled training matrix joined from features and records.
struct TaskSamples {
    x: Vec<Vec<f64>>,
    y: Vec<usize>,
    classes: Vec<String>,
}

fn join_samples(
    features: &CustomerFeatures,
    records: &[DemographicRecord],
    task: DemographicTask,
) -> Result<TaskSamples> {
    let by_id: BTreeMap<&str, &DemographicRecord> =
        records.iter().map(|r| (r.customer_id.as_str(), r)).collect();
    // Observed classes in the task's canonical order.
    let observed: Vec<String> = task
        .classes()
        .iter()
        .filter(|c| {
            features.customers.iter().any(|f| {
                by_id.get(f.customer_id.as_str()).and_then(|r| task.label_of(r)) == Some(**c)
            })
        })
        .map(|c| c.to_string())
        .collect();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for f in &features.customers {
        let Some(label) = by_id.get(f.customer_id.as_str()).and_then(|r| task.label_of(r)) else {
            continue;
        };
        x.push(f.mean_theta.clone());
        y.push(observed.iter().position(|c| c == label).expect("observed class"));
    }
    if x.is_empty() {
        return Err(Error::invalid(format!("no customers with both features and {task} labels")));
    }
    if observed.len() < 2 {
        return Err(Error::invalid(format!(
            "{task} prediction needs at least two observed classes; found only {:?}",
            observed[0]
        )));
    }
    Ok(TaskSamples { x, y, classes: observed })
}

/// Stratified fold assignment: members of each class are shuffled and dealt
/// round-robin, so every fold holds at least one of every class whenever
/// each class has at least `folds` members.
pub(crate) fn fold_assignments(
    y: &[usize],
    num_classes: usize,
    folds: usize,
    seed: u64,
) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; y.len()];
    for c in 0..num_classes {
        let mut members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        members.shuffle(&mut rng);
        for (j, &i) in members.iter().enumerate() {
            assignment[i] = j % folds;
        }
    }
    assignment
}

/// Mann-Whitney AUC with average ranks for ties. None when either class is
/// empty.
fn auc_score(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n = scores.len();
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks averaged over the tie run i..=j.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = (0..n).filter(|&i| positive[i]).map(|i| ranks[i]).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

struct FoldEval {
    metrics: Vec<FoldMetric>,
    mean_selection: f64,
}

fn evaluate_lambda(
    samples: &TaskSamples,
    assignment: &[usize],
    folds: usize,
    lambda: f64,
    task: DemographicTask,
) -> FoldEval {
    let binary = samples.classes.len() == 2;
    let mut metrics = Vec::with_capacity(folds);
    for f in 0..folds {
        let mut train_x = Vec::new();
        let mut train_y = Vec::new();
        let mut test_x = Vec::new();
        let mut test_y = Vec::new();
        for i in 0..samples.x.len() {
            if assignment[i] == f {
                test_x.push(samples.x[i].clone());
                test_y.push(samples.y[i]);
            } else {
                train_x.push(samples.x[i].clone());
                train_y.push(samples.y[i]);
            }
        }
        let model = logreg::fit(&train_x, &train_y, samples.classes.len(), lambda);
        let mut correct = 0usize;
        let mut scores = Vec::with_capacity(test_x.len());
        let mut positives = Vec::with_capacity(test_x.len());
        for (xi, &yi) in test_x.iter().zip(&test_y) {
            let p = model.probabilities(xi);
            if argmax(&p) == yi {
                correct += 1;
            }
            if binary {
                scores.push(p[1]);
                positives.push(yi == 1);
            }
        }
        let mut class_counts = vec![0usize; samples.classes.len()];
        for &yi in &test_y {
            class_counts[yi] += 1;
        }
        let accuracy = correct as f64 / test_y.len() as f64;
        metrics.push(FoldMetric {
            fold: f,
            test_size: test_y.len(),
            accuracy,
            auc: if binary { auc_score(&scores, &positives) } else { None },
            baseline: *class_counts.iter().max().expect("nonempty") as f64 / test_y.len() as f64,
        });
    }
    let mean_selection = metrics
        .iter()
        .map(|m| match task.selection_metric() {
            "auc" => m.auc.expect("stratified folds keep both classes"),
            _ => m.accuracy,
        })
        .sum::<f64>()
        / folds as f64;
    FoldEval { metrics, mean_selection }
}

/// Grid-searches the L2 strength by stratified cross-validation, then refits
/// on all labeled customers at the winning strength. Binary tasks select by
/// mean fold AUC, the age task by mean fold accuracy; ties keep the earlier
/// grid entry.
pub fn fit_demographic_model(
    features: &CustomerFeatures,
    records: &[DemographicRecord],
    task: DemographicTask,
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<DemographicModel> {
    if grid.is_empty() {
        return Err(Error::invalid("empty regularization grid"));
    }
    for &l in grid {
        if !(l >= 0.0) || !l.is_finite() {
            return Err(Error::invalid(format!("regularization strength must be ≥ 0, got {l}")));
        }
    }
    if folds < 2 {
        return Err(Error::invalid("cross-validation needs at least 2 folds"));
    }
    let samples = join_samples(features, records, task)?;
    let mut class_counts = vec![0usize; samples.classes.len()];
    for &yi in &samples.y {
        class_counts[yi] += 1;
    }
    for (c, &n) in samples.classes.iter().zip(&class_counts) {
        if n < folds {
            return Err(Error::invalid(format!(
                "class {c:?} has {n} labeled customers; stratified {folds}-fold \
                 cross-validation needs at least {folds} per class"
            )));
        }
    }
    let assignment = fold_assignments(&samples.y, samples.classes.len(), folds, seed);

    let mut best: Option<(f64, FoldEval)> = None;
    for &lambda in grid {
        let eval = evaluate_lambda(&samples, &assignment, folds, lambda, task);
        let better = match &best {
            None => true,
            Some((_, b)) => eval.mean_selection > b.mean_selection,
        };
        if better {
            best = Some((lambda, eval));
        }
    }
    let (chosen_lambda, eval) = best.expect("nonempty grid");

    let final_fit = logreg::fit(&samples.x, &samples.y, samples.classes.len(), chosen_lambda);
    let binary = samples.classes.len() == 2;
    let n = folds as f64;
    let report = CvReport {
        task: task.to_string(),
        classes: samples.classes.clone(),
        grid: grid.to_vec(),
        chosen_lambda,
        selection_metric: task.selection_metric().to_string(),
        mean_accuracy: eval.metrics.iter().map(|m| m.accuracy).sum::<f64>() / n,
        mean_auc: binary
            .then(|| eval.metrics.iter().map(|m| m.auc.expect("binary")).sum::<f64>() / n),
        mean_baseline: eval.metrics.iter().map(|m| m.baseline).sum::<f64>() / n,
        folds: eval.metrics,
    };
    Ok(DemographicModel {
        task,
        classes: samples.classes,
        weights: final_fit.weights,
        intercepts: final_fit.intercepts,
        lambda_reg: chosen_lambda,
        report,
    })
}

/// One customer's predicted class and class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct DemographicPrediction {
    pub customer_id: String,
    pub predicted: String,
    /// Aligned with the model's classes; sums to 1.
    pub probabilities: Vec<f64>,
}

/// Scores every customer in `features`; ties predict the lowest class index.
pub fn predict_demographics(
    model: &DemographicModel,
    features: &CustomerFeatures,
) -> Result<Vec<DemographicPrediction>> {
    let dim = model.weights[0].len();
    if features.num_topics != dim {
        return Err(Error::invalid(format!(
            "feature dimension {} does not match model dimension {dim}",
            features.num_topics
        )));
    }
    let scorer = logreg::Softmax {
        weights: model.weights.clone(),
        intercepts: model.intercepts.clone(),
    };
    Ok(features
        .customers
        .iter()
        .map(|f| {
            let probabilities = scorer.probabilities(&f.mean_theta);
            DemographicPrediction {
                customer_id: f.customer_id.clone(),
                predicted: model.classes[argmax(&probabilities)].clone(),
                probabilities,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Basket, Vocabulary};
    use rand::Rng;
    use std::sync::Arc;

    fn onehot_model(k: usize, v: usize) -> TopicModel {
        let eps = 1e-9;
        let phi: Vec<Vec<f64>> = (0..k)
            .map(|t| {
                (0..v).map(|w| if w == t { 1.0 - eps * (v - 1) as f64 } else { eps }).collect()
            })
            .collect();
        let vocab = Arc::new(
            Vocabulary::from_products((0..v).map(|i| format!("p{i}")).collect()).unwrap(),
        );
        TopicModel::from_phi(phi, 0.1, 0.01, vocab, Vec::new()).unwrap()
    }

    fn pure_basket(id: &str, topic: u32, date: Option<NaiveDate>, customer: Option<&str>) -> Basket {
        Basket::new(id.to_string(), date, customer.map(str::to_string), vec![(topic, 20)]).unwrap()
    }

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn single_topic_labels_are_zero() {
        let model = onehot_model(1, 4);
        let baskets = vec![
            pure_basket("b0", 0, Some(date(2014, 1, 5)), None),
            pure_basket("b1", 2, None, Some("c1")),
        ];
        let corpus = BasketCorpus::new(Arc::clone(model.vocab()), baskets).unwrap();
        let labeling = label_baskets(&model, &corpus).unwrap();
        assert_eq!(labeling.num_topics, 1);
        assert!(labeling.labels.iter().all(|l| l.label == 0));
        assert_eq!(labeling.labels[0].date, Some(date(2014, 1, 5)));
        assert_eq!(labeling.labels[1].customer_id.as_deref(), Some("c1"));
    }

    #[test]
    fn labels_recover_generating_topic_under_onehot_topics() {
        let model = onehot_model(3, 6);
        let baskets: Vec<Basket> =
            (0..30).map(|i| pure_basket(&format!("b{i}"), (i % 3) as u32, None, None)).collect();
        let corpus = BasketCorpus::new(Arc::clone(model.vocab()), baskets).unwrap();
        let labeling = label_baskets(&model, &corpus).unwrap();
        for (i, l) in labeling.labels.iter().enumerate() {
            assert_eq!(l.label, i % 3);
        }
    }

    #[test]
    fn identical_rows_tie_to_topic_zero() {
        let vocab =
            Arc::new(Vocabulary::from_products(vec!["a".into(), "b".into()]).unwrap());
        let phi = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let model = TopicModel::from_phi(phi, 0.1, 0.5, vocab, Vec::new()).unwrap();
        let corpus = BasketCorpus::new(
            Arc::clone(model.vocab()),
            vec![pure_basket("b0", 0, None, None)],
        )
        .unwrap();
        let labeling = label_baskets(&model, &corpus).unwrap();
        assert_eq!(labeling.labels[0].label, 0);
    }

    #[test]
    fn label_rejects_foreign_corpus() {
        let model = onehot_model(2, 3);
        let other = Arc::new(
            Vocabulary::from_products(vec!["x".into(), "y".into(), "z".into()]).unwrap(),
        );
        let corpus =
            BasketCorpus::new(other, vec![pure_basket("b0", 0, None, None)]).unwrap();
        let err = label_baskets(&model, &corpus).unwrap_err();
        assert!(err.to_string().contains("vocabularies differ"), "{err}");
    }

    fn labeling_from(specs: &[(usize, NaiveDate)], k: usize) -> BasketLabeling {
        BasketLabeling {
            num_topics: k,
            labels: specs
                .iter()
                .enumerate()
                .map(|(i, &(label, d))| BasketLabel {
                    basket_id: format!("b{i}"),
                    label,
                    date: Some(d),
                    customer_id: None,
                })
                .collect(),
        }
    }

    #[test]
    fn uniform_labels_index_to_one() {
        let mut specs = Vec::new();
        for m in 1..=12u32 {
            for t in 0..4usize {
                specs.push((t, date(2014, m, 3)));
                specs.push((t, date(2014, m, 17)));
            }
        }
        let idx = prevalence_index(&labeling_from(&specs, 4), PeriodKind::Month).unwrap();
        assert_eq!(idx.periods.len(), 12);
        for p in &idx.periods {
            for t in 0..4 {
                assert!((p.indices[t] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pure_month_hits_extreme_indices() {
        let specs = vec![
            (0usize, date(2014, 1, 2)),
            (0, date(2014, 1, 9)),
            (0, date(2014, 2, 2)),
            (1, date(2014, 2, 9)),
        ];
        let idx = prevalence_index(&labeling_from(&specs, 2), PeriodKind::Month).unwrap();
        let jan = &idx.periods[0];
        assert_eq!(jan.period, "1");
        assert_eq!(jan.indices, vec![2.0, 0.0]);
        let feb = &idx.periods[1];
        assert_eq!(feb.indices, vec![1.0, 1.0]);
    }

    #[test]
    fn empty_periods_are_absent() {
        let specs = vec![(0usize, date(2014, 3, 1)), (1, date(2014, 5, 1))];
        let idx = prevalence_index(&labeling_from(&specs, 2), PeriodKind::Month).unwrap();
        let names: Vec<&str> = idx.periods.iter().map(|p| p.period.as_str()).collect();
        assert_eq!(names, ["3", "5"]);
    }

    #[test]
    fn undated_basket_is_rejected() {
        let labeling = BasketLabeling {
            num_topics: 2,
            labels: vec![BasketLabel {
                basket_id: "b7".into(),
                label: 0,
                date: None,
                customer_id: None,
            }],
        };
        let err = prevalence_index(&labeling, PeriodKind::Month).unwrap_err();
        assert!(err.to_string().contains("b7") && err.to_string().contains("no date"), "{err}");
    }

    // Per period: proportions sum to 1 and the across-topic index mean is 1.
    #[test]
    fn index_means_are_one_on_random_labelings() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let k = rng.random_range(1..6usize);
            let specs: Vec<(usize, NaiveDate)> = (0..rng.random_range(1..200))
                .map(|_| {
                    (
                        rng.random_range(0..k),
                        date(2014, rng.random_range(1..13), rng.random_range(1..29)),
                    )
                })
                .collect();
            for kind in [PeriodKind::Month, PeriodKind::Weekday] {
                let idx = prevalence_index(&labeling_from(&specs, k), kind).unwrap();
                for p in &idx.periods {
                    assert!((p.proportions.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    let mean = p.indices.iter().sum::<f64>() / k as f64;
                    assert!((mean - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn weekday_periods_are_ordered_monday_first() {
        // 2014-01-06 was a Monday; fourteen consecutive days cover the week.
        let start = date(2014, 1, 6);
        let specs: Vec<(usize, NaiveDate)> =
            (0..14).map(|i| (0usize, start + chrono::Days::new(i))).collect();
        let idx = prevalence_index(&labeling_from(&specs, 1), PeriodKind::Weekday).unwrap();
        let names: Vec<&str> = idx.periods.iter().map(|p| p.period.as_str()).collect();
        assert_eq!(
            names,
            ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"]
        );
        assert!(idx.periods.iter().all(|p| p.basket_count == 2));
    }

    #[test]
    fn prevalence_csv_layout() {
        let specs = vec![
            (0usize, date(2014, 1, 2)),
            (0, date(2014, 1, 9)),
            (1, date(2014, 2, 2)),
            (0, date(2014, 2, 9)),
        ];
        let idx = prevalence_index(&labeling_from(&specs, 2), PeriodKind::Month).unwrap();
        let mut buf = Vec::new();
        idx.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "topic,period,proportion,index\n\
             0,1,1,2\n0,2,0.5,1\n1,1,0,0\n1,2,0.5,1\n"
        );
    }

    #[test]
    fn customer_means_average_basket_mixtures() {
        let model = onehot_model(2, 4);
        let baskets = vec![
            pure_basket("b0", 0, None, Some("alice")),
            pure_basket("b1", 0, None, Some("bob")),
            pure_basket("b2", 1, None, Some("bob")),
            pure_basket("b3", 1, None, None),
        ];
        let corpus = BasketCorpus::new(Arc::clone(model.vocab()), baskets).unwrap();
        let features = customer_features(&model, &corpus).unwrap();
        assert_eq!(features.customers.len(), 2);
        assert_eq!(features.customers[0].customer_id, "alice");
        assert_eq!(features.customers[1].customer_id, "bob");
        let alice = &features.customers[0];
        assert_eq!(alice.basket_count, 1);
        assert!(alice.mean_theta[0] > 0.9);
        let bob = &features.customers[1];
        assert_eq!(bob.basket_count, 2);
        // Mean of two near-one-hot mixtures pointing at different topics.
        assert!((bob.mean_theta[0] - 0.5).abs() < 0.02, "{:?}", bob.mean_theta);
        for f in &features.customers {
            assert!((f.mean_theta.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn featureless_corpus_is_rejected() {
        let model = onehot_model(2, 4);
        let corpus = BasketCorpus::new(
            Arc::clone(model.vocab()),
            vec![pure_basket("b0", 0, None, None)],
        )
        .unwrap();
        let err = customer_features(&model, &corpus).unwrap_err();
        assert_eq!(err.to_string(), "corpus lacks customer identifiers");
    }

    #[test]
    fn demographics_round_trip_and_blank_fields() {
        let text = "customer_id,age_band,region,gender\n\
                    c1,18-29,england,f\n\
                    c2,,regional,\n\
                    c3,60+,,m\n";
        let rows = read_demographics(text.as_bytes()).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].age_band.as_deref(), Some("18-29"));
        assert_eq!(rows[1].age_band, None);
        assert_eq!(rows[1].region.as_deref(), Some("regional"));
        assert_eq!(rows[2].gender.as_deref(), Some("m"));
        let mut buf = Vec::new();
        write_demographics(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
    }

    #[test]
    fn demographics_reject_unknown_values_and_duplicates() {
        let err = read_demographics(
            "customer_id,age_band,region,gender\nc1,25-ish,england,f\n".as_bytes(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("unknown age band \"25-ish\""), "{err}");
        assert!(err.to_string().contains("line 2"), "{err}");

        let err = read_demographics(
            "customer_id,age_band,region,gender\nc1,18-29,,\nc1,30-44,,\n".as_bytes(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate customer id \"c1\""), "{err}");
    }

    /// Features around two well-separated mean mixtures, one per class.
    fn separable_setup(
        n_per_class: usize,
        seed: u64,
    ) -> (CustomerFeatures, Vec<DemographicRecord>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut customers = Vec::new();
        let mut records = Vec::new();
        for i in 0..2 * n_per_class {
            let class = i % 2;
            let base = if class == 0 { [0.8, 0.15, 0.05] } else { [0.1, 0.8, 0.1] };
            let jitter: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 0.1).collect();
            let raw: Vec<f64> = base.iter().zip(&jitter).map(|(b, j)| b + j).collect();
            let total: f64 = raw.iter().sum();
            customers.push(CustomerFeature {
                customer_id: format!("c{i:05}"),
                mean_theta: raw.iter().map(|r| r / total).collect(),
                basket_count: 3,
            });
            records.push(DemographicRecord {
                customer_id: format!("c{i:05}"),
                age_band: None,
                region: Some(REGIONS[class].to_string()),
                gender: None,
            });
        }
        (CustomerFeatures { num_topics: 3, customers }, records)
    }

    fn paper_grid() -> Vec<f64> {
        (1..=10).map(|i| i as f64 / 10.0).collect()
    }

    #[test]
    fn separable_groups_cross_validate_accurately() {
        let (features, records) = separable_setup(100, 60);
        let model = fit_demographic_model(
            &features,
            &records,
            DemographicTask::Region,
            &paper_grid(),
            5,
            61,
        )
        .unwrap();
        let r = &model.report;
        assert_eq!(r.selection_metric, "auc");
        assert_eq!(r.classes, vec!["england", "regional"]);
        assert!(r.mean_accuracy > 0.95, "accuracy {}", r.mean_accuracy);
        assert!(r.mean_auc.unwrap() > 0.95, "auc {:?}", r.mean_auc);
        assert!(r.grid.contains(&r.chosen_lambda));
        // Folds partition the samples.
        assert_eq!(r.folds.iter().map(|f| f.test_size).sum::<usize>(), 200);
        for f in &r.folds {
            assert!(f.baseline >= 0.5 - 1e-12 && f.baseline < 1.0);
        }
    }

    #[test]
    fn permuted_labels_score_near_baseline() {
        let (features, mut records) = separable_setup(1000, 70);
        // Break the feature-label link by shuffling the label column.
        let mut labels: Vec<Option<String>> = records.iter().map(|r| r.region.clone()).collect();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(72));
        for (r, label) in records.iter_mut().zip(labels) {
            r.region = label;
        }
        let model = fit_demographic_model(
            &features,
            &records,
            DemographicTask::Region,
            &paper_grid(),
            5,
            71,
        )
        .unwrap();
        let r = &model.report;
        assert!(
            (r.mean_accuracy - r.mean_baseline).abs() < 0.03,
            "accuracy {} vs baseline {}",
            r.mean_accuracy,
            r.mean_baseline
        );
    }

    #[test]
    fn undersized_class_gets_stratification_error() {
        let (features, mut records) = separable_setup(20, 80);
        // Leave only three regional labels.
        let mut kept = 0;
        for r in records.iter_mut() {
            if r.region.as_deref() == Some("regional") {
                kept += 1;
                if kept > 3 {
                    r.region = None;
                }
            }
        }
        let err = fit_demographic_model(
            &features,
            &records,
            DemographicTask::Region,
            &paper_grid(),
            5,
            81,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("\"regional\"") && msg.contains("3 labeled") && msg.contains("5-fold"),
            "{msg}"
        );
    }

    #[test]
    fn identical_grid_entries_are_order_invariant() {
        let (features, records) = separable_setup(30, 90);
        let a = fit_demographic_model(
            &features,
            &records,
            DemographicTask::Region,
            &[0.5, 0.5, 0.5],
            5,
            91,
        )
        .unwrap();
        let b =
            fit_demographic_model(&features, &records, DemographicTask::Region, &[0.5], 5, 91)
                .unwrap();
        assert_eq!(a.lambda_reg, b.lambda_reg);
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.report.folds, b.report.folds);
    }

    // Recompute one fold's accuracy from scratch: same split, same lambda,
    // same optimizer, evaluated by hand.
    #[test]
    fn fold_metrics_survive_independent_recomputation() {
        let (features, records) = separable_setup(40, 100);
        let task = DemographicTask::Region;
        let model =
            fit_demographic_model(&features, &records, task, &[0.3], 4, 101).unwrap();
        let samples = join_samples(&features, &records, task).unwrap();
        let assignment = fold_assignments(&samples.y, samples.classes.len(), 4, 101);
        for f in 0..4 {
            let mut train_x = Vec::new();
            let mut train_y = Vec::new();
            let mut correct = 0usize;
            let mut total = 0usize;
            for i in 0..samples.x.len() {
                if assignment[i] != f {
                    train_x.push(samples.x[i].clone());
                    train_y.push(samples.y[i]);
                }
            }
            let fit = logreg::fit(&train_x, &train_y, 2, 0.3);
            for i in 0..samples.x.len() {
                if assignment[i] == f {
                    total += 1;
                    if argmax(&fit.probabilities(&samples.x[i])) == samples.y[i] {
                        correct += 1;
                    }
                }
            }
            let expected = correct as f64 / total as f64;
            assert_eq!(model.report.folds[f].accuracy, expected);
            assert_eq!(model.report.folds[f].test_size, total);
        }
    }

    #[test]
    fn zero_weight_predictions_are_uniform_and_tie_low() {
        let model = DemographicModel {
            task: DemographicTask::Gender,
            classes: vec!["f".into(), "m".into()],
            weights: vec![vec![0.0; 3], vec![0.0; 3]],
            intercepts: vec![0.0, 0.0],
            lambda_reg: 0.1,
            report: CvReport {
                task: "gender".into(),
                classes: vec!["f".into(), "m".into()],
                grid: vec![0.1],
                chosen_lambda: 0.1,
                selection_metric: "auc".into(),
                folds: Vec::new(),
                mean_accuracy: 0.5,
                mean_auc: Some(0.5),
                mean_baseline: 0.5,
            },
        };
        let features = CustomerFeatures {
            num_topics: 3,
            customers: vec![CustomerFeature {
                customer_id: "c1".into(),
                mean_theta: vec![0.2, 0.3, 0.5],
                basket_count: 1,
            }],
        };
        let preds = predict_demographics(&model, &features).unwrap();
        assert_eq!(preds[0].predicted, "f");
        assert_eq!(preds[0].probabilities, vec![0.5, 0.5]);

        let bad = CustomerFeatures { num_topics: 2, customers: Vec::new() };
        let err = predict_demographics(&model, &bad).unwrap_err();
        assert!(
            err.to_string().contains("feature dimension 2 does not match model dimension 3"),
            "{err}"
        );
    }

    #[test]
    fn prediction_probabilities_sum_to_one() {
        let (features, records) = separable_setup(30, 110);
        let model = fit_demographic_model(
            &features,
            &records,
            DemographicTask::Region,
            &[0.2],
            5,
            111,
        )
        .unwrap();
        let preds = predict_demographics(&model, &features).unwrap();
        assert_eq!(preds.len(), features.customers.len());
        for p in &preds {
            assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        // Near-perfect separation means predictions track the planted class.
        let right = preds
            .iter()
            .zip(&records)
            .filter(|(p, r)| Some(p.predicted.as_str()) == r.region.as_deref())
            .count();
        assert!(right as f64 / preds.len() as f64 > 0.95);
    }

    #[test]
    fn auc_handles_separation_reversal_and_ties() {
        let positive = [true, true, false, false];
        assert_eq!(auc_score(&[0.9, 0.8, 0.2, 0.1], &positive), Some(1.0));
        assert_eq!(auc_score(&[0.1, 0.2, 0.8, 0.9], &positive), Some(0.0));
        assert_eq!(auc_score(&[0.5, 0.5, 0.5, 0.5], &positive), Some(0.5));
        assert_eq!(auc_score(&[0.5, 0.5], &[true, true]), None);
    }

    #[test]
    fn cv_report_json_shape_and_determinism() {
        let (features, records) = separable_setup(25, 120);
        let fit = |seed| {
            fit_demographic_model(
                &features,
                &records,
                DemographicTask::Region,
                &[0.1, 0.2],
                5,
                seed,
            )
            .unwrap()
        };
        let a = fit(121);
        let b = fit(121);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        write_cv_report(&a.report, &mut buf_a).unwrap();
        write_cv_report(&b.report, &mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);

        let value: serde_json::Value = serde_json::from_slice(&buf_a).unwrap();
        assert_eq!(value["task"], "region");
        assert_eq!(value["selection_metric"], "auc");
        assert_eq!(value["folds"].as_array().unwrap().len(), 5);
        let fold0 = &value["folds"][0];
        for key in ["fold", "test_size", "accuracy", "auc", "baseline"] {
            assert!(fold0.get(key).is_some(), "missing {key}");
        }
        assert!(value.get("mean_accuracy").is_some());
        assert!(value.get("mean_auc").is_some());
        assert!(value.get("mean_baseline").is_some());
    }
}
