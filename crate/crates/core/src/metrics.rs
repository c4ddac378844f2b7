//! Model quality and topic summary metrics.
//!
//! Held-out likelihood is reported as per-token log-perplexity: the negated
//! variational lower bound on the corpus log-likelihood under fold-in
//! mixtures, divided by the token count. The bound's KL(q(theta) || prior)
//! term is what penalizes surplus topics, so held-out sweeps bottom out at
//! the data's complexity instead of always rewarding larger K. Topic
//! summaries rank products by relevance, the lambda-weighted blend of
//! within-topic log-probability and log-lift. Natural logarithms
//! throughout; perplexity pairs with exp.

use std::io::Write;

use statrs::function::gamma::{digamma, ln_gamma};

use crate::assignment::min_cost_assignment;
use crate::corpus::BasketCorpus;
use crate::error::{Error, Result};
use crate::inference::{fold_in_gamma, TopicModel, PHI_FLOOR};

/// Per-token log-perplexity of the corpus under the model: -L / sum_d N_d,
/// where L is the sum of per-basket variational bounds with topics held
/// fixed and mixtures estimated by fold-in on each basket. Exact (the bound
/// is tight) for single-topic models. Baskets with no in-vocabulary tokens
/// are excluded with a warning.
pub fn log_perplexity(model: &TopicModel, corpus: &BasketCorpus) -> Result<f64> {
    log_perplexity_phi(model.phi(), model.alpha, corpus)
}

/// exp of [`log_perplexity`]; the uniform model over V products scores V.
pub fn perplexity(model: &TopicModel, corpus: &BasketCorpus) -> Result<f64> {
    Ok(log_perplexity(model, corpus)?.exp())
}

/// Implementation over a bare topic matrix, shared with the trainer's
/// per-epoch trace.
///
/// With gamma the converged fold-in parameters of one basket and
/// Elog_k = psi(gamma_k) - psi(sum gamma), the basket's bound is
///   sum_w n_w ln(sum_k exp(Elog_k) phi_kw)
///   + lnG(K alpha) - K lnG(alpha) - lnG(sum gamma)
///   + sum_k [(alpha - gamma_k) Elog_k + lnG(gamma_k)],
/// the token responsibilities having been folded into the phinorm term.
pub(crate) fn log_perplexity_phi(phi: &[Vec<f64>], alpha: f64, corpus: &BasketCorpus) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot score an empty corpus"));
    }
    let k = phi.len();
    let v = phi.first().map_or(0, Vec::len);
    let prior_norm = ln_gamma(k as f64 * alpha) - k as f64 * ln_gamma(alpha);
    let mut bound = 0.0f64;
    let mut tokens = 0u64;
    let mut scored = 0usize;
    for basket in corpus.baskets() {
        let counts: Vec<(u32, u32)> = basket
            .counts()
            .iter()
            .copied()
            .filter(|&(w, _)| (w as usize) < v)
            .collect();
        if counts.is_empty() {
            log::warn!("basket {:?} has no in-vocabulary tokens; excluded from perplexity", basket.id);
            continue;
        }
        let gamma = fold_in_gamma(phi, alpha, &counts);
        let total: f64 = gamma.iter().sum();
        let psi_total = digamma(total);
        bound += prior_norm - ln_gamma(total);
        let mut exp_elog = Vec::with_capacity(k);
        for &g in &gamma {
            let elog = digamma(g) - psi_total;
            bound += (alpha - g) * elog + ln_gamma(g);
            exp_elog.push(elog.exp());
        }
        for &(w, c) in &counts {
            let wi = w as usize;
            let mut phinorm = PHI_FLOOR;
            for t in 0..k {
                phinorm += exp_elog[t] * phi[t][wi];
            }
            bound += c as f64 * phinorm.ln();
            tokens += c as u64;
        }
        scored += 1;
    }
    if scored == 0 {
        return Err(Error::invalid("no baskets with in-vocabulary items to score"));
    }
    Ok(-bound / tokens as f64)
}

/// Ratio of a product's within-topic probability to its corpus marginal;
/// values over 1 mark over-representation in the topic.
pub fn lift(p_wk: f64, p_w: f64) -> Result<f64> {
    if !(p_wk >= 0.0) || p_wk > 1.0 {
        return Err(Error::invalid(format!("p_wk must be a probability, got {p_wk}")));
    }
    if !(p_w > 0.0) {
        return Err(Error::invalid("undefined lift for zero-frequency product"));
    }
    Ok(p_wk / p_w)
}

/// lambda * log(p_wk) + (1 - lambda) * log(p_wk / p_w). At lambda=1 this is
/// the within-topic log-probability; at lambda=0 it is log-lift.
pub fn relevance(p_wk: f64, p_w: f64, lambda: f64) -> Result<f64> {
    if !(p_wk > 0.0) {
        return Err(Error::invalid(format!(
            "relevance needs a positive within-topic probability, got {p_wk}"
        )));
    }
    if !(p_w > 0.0) {
        return Err(Error::invalid(format!(
            "relevance needs a positive marginal probability, got {p_w}"
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    Ok(lambda * p_wk.ln() + (1.0 - lambda) * (p_wk / p_w).ln())
}

/// One product's scores within one topic.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedProduct {
    /// 1-based rank within the topic.
    pub rank: usize,
    pub product_index: u32,
    pub product_id: String,
    pub p_wk: f64,
    pub p_w: f64,
    pub lift: f64,
    pub relevance: f64,
}

fn check_same_vocab(model: &TopicModel, corpus: &BasketCorpus) -> Result<()> {
    if model.vocab().hash() != corpus.vocab().hash() {
        return Err(Error::invalid("model and corpus vocabularies differ"));
    }
    Ok(())
}

/// Top products of topic `k` by descending relevance; ties break to the
/// lower product index. Zero-frequency and zero-probability products are
/// excluded.
pub fn rank_products(
    model: &TopicModel,
    corpus: &BasketCorpus,
    k: usize,
    lambda: f64,
    top_n: usize,
) -> Result<Vec<RankedProduct>> {
    if k >= model.num_topics() {
        return Err(Error::invalid(format!(
            "topic index {k} out of range for a {}-topic model",
            model.num_topics()
        )));
    }
    if top_n < 1 {
        return Err(Error::invalid("top_n must be ≥ 1"));
    }
    check_same_vocab(model, corpus)?;
    let freqs = corpus.product_frequencies();
    let row = model.phi_row(k);
    let mut scored: Vec<(u32, f64)> = Vec::new();
    for (w, (&p_wk, &p_w)) in row.iter().zip(&freqs).enumerate() {
        if p_w > 0.0 && p_wk > 0.0 {
            scored.push((w as u32, relevance(p_wk, p_w, lambda)?));
        }
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite scores").then(a.0.cmp(&b.0)));
    scored.truncate(top_n);
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (w, score))| RankedProduct {
            rank: i + 1,
            product_index: w,
            product_id: model.vocab().product(w).expect("index in range").to_string(),
            p_wk: row[w as usize],
            p_w: freqs[w as usize],
            lift: row[w as usize] / freqs[w as usize],
            relevance: score,
        })
        .collect())
}

/// Per-topic relevance rankings for every topic of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceTable {
    pub lambda: f64,
    /// (topic, ranked products) in topic order.
    pub topics: Vec<(usize, Vec<RankedProduct>)>,
}

/// Builds the relevance table at `lambda` with `top_n` products per topic.
pub fn relevance_table(
    model: &TopicModel,
    corpus: &BasketCorpus,
    lambda: f64,
    top_n: usize,
) -> Result<RelevanceTable> {
    let topics = (0..model.num_topics())
        .map(|k| Ok((k, rank_products(model, corpus, k, lambda, top_n)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(RelevanceTable { lambda, topics })
}

impl RelevanceTable {
    /// CSV layout: topic,rank,product_id,p_wk,p_w,lift,relevance.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["topic", "rank", "product_id", "p_wk", "p_w", "lift", "relevance"])
            .map_err(csv_io)?;
        for (topic, products) in &self.topics {
            for p in products {
                w.write_record([
                    topic.to_string(),
                    p.rank.to_string(),
                    p.product_id.clone(),
                    p.p_wk.to_string(),
                    p.p_w.to_string(),
                    p.lift.to_string(),
                    p.relevance.to_string(),
                ])
                .map_err(csv_io)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::invalid(format!("CSV write failed: {e}"))
}

/// Fraction of products whose most probable topic is each topic: assigns
/// every product w to argmax_k phi_kw (ties to the lowest topic index) and
/// divides the counts by V.
pub fn topic_sizes(model: &TopicModel) -> Vec<f64> {
    let k = model.num_topics();
    let v = model.vocab_len();
    let mut counts = vec![0usize; k];
    for w in 0..v {
        let mut best = 0;
        for t in 1..k {
            if model.phi_row(t)[w] > model.phi_row(best)[w] {
                best = t;
            }
        }
        counts[best] += 1;
    }
    counts.iter().map(|&c| c as f64 / v as f64).collect()
}

/// Aligns the rows of `phi_a` to rows of `phi_b` minimizing total variation.
/// Returns the permutation (`perm[i]` = row of `phi_b` matched to row i of
/// `phi_a`) and the mean matched distance.
pub fn match_topics(phi_a: &[Vec<f64>], phi_b: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    if phi_a.len() != phi_b.len() || phi_a.is_empty() {
        return Err(Error::invalid(format!(
            "topic count mismatch: {} vs {}",
            phi_a.len(),
            phi_b.len()
        )));
    }
    let v = phi_a[0].len();
    if phi_a.iter().chain(phi_b).any(|r| r.len() != v) {
        return Err(Error::invalid("topic matrices must share one vocabulary width"));
    }
    let k = phi_a.len();
    let cost: Vec<Vec<f64>> = phi_a
        .iter()
        .map(|a| phi_b.iter().map(|b| total_variation(a, b)).collect())
        .collect();
    let perm = min_cost_assignment(&cost);
    let mean = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>() / k as f64;
    Ok((perm, mean))
}

/// 0.5 * L1 distance between two distributions.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Which per-product score to correlate against corpus frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreKind {
    /// Within-topic probability phi_kw.
    Probability,
    Lift,
    Relevance { lambda: f64 },
}

/// Pearson correlation between each product's corpus frequency and its
/// maximum score across topics.
pub fn prob_freq_correlation(model: &TopicModel, corpus: &BasketCorpus, score: ScoreKind) -> Result<f64> {
    check_same_vocab(model, corpus)?;
    let freqs = corpus.product_frequencies();
    let k = model.num_topics();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (w, &p_w) in freqs.iter().enumerate() {
        if p_w <= 0.0 {
            continue;
        }
        let mut best: Option<f64> = None;
        for t in 0..k {
            let p_wk = model.phi_row(t)[w];
            let value = match score {
                ScoreKind::Probability => Some(p_wk),
                ScoreKind::Lift => Some(p_wk / p_w),
                ScoreKind::Relevance { lambda } => {
                    if p_wk > 0.0 {
                        Some(relevance(p_wk, p_w, lambda)?)
                    } else {
                        None
                    }
                }
            };
            if let Some(val) = value {
                best = Some(best.map_or(val, |b: f64| b.max(val)));
            }
        }
        if let Some(y) = best {
            xs.push(p_w);
            ys.push(y);
        }
    }
    if xs.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 scored products for a correlation, got {}",
            xs.len()
        )));
    }
    pearson(&xs, &ys)
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("zero variance in correlation input"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// One row of the model-selection sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub train_log_perplexity: f64,
    pub test_log_perplexity: f64,
}

/// CSV layout: K,train_log_perplexity,test_log_perplexity.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["K", "train_log_perplexity", "test_log_perplexity"]).map_err(csv_io)?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            r.train_log_perplexity.to_string(),
            r.test_log_perplexity.to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}
