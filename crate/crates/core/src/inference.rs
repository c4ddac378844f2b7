//! Topic model fitting and mixture inference.
//!
//! The primary trainer is online variational Bayes: per minibatch, a local
//! variational step estimates per-basket topic responsibilities against the
//! current topics, and a global step blends the resulting sufficient
//! statistics into the topic parameters with a decaying step size
//! rho_t = (tau0 + t)^(-kappa). A collapsed Gibbs sampler over token
//! assignments serves as an independent cross-check on small corpora.
//! Mixtures for unseen baskets come from the same local step with topics
//! held fixed (fold-in).

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::digamma;

use crate::corpus::{Basket, BasketCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::serialize::{ByteReader, ByteWriter};

pub const MODEL_FORMAT_VERSION: &str = "model-v1";

/// Dense count arrays make the Gibbs sampler quadratic in memory; corpora
/// beyond this many tokens must use the online trainer.
pub const GIBBS_TOKEN_LIMIT: u64 = 2_000_000;

const LOCAL_MAX_ITERS: usize = 100;
/// Local step stops when the L1 change of the normalized mixture falls
/// under this.
const LOCAL_TOL: f64 = 1e-3;
/// Additive guard against zero product weights; far below one ulp of any
/// realistic weight, so it never perturbs well-conditioned arithmetic.
pub(crate) const PHI_FLOOR: f64 = 1e-100;

/// Training hyperparameters. `new(k)` fills the documented defaults.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TrainConfig {
    pub num_topics: usize,
    /// Symmetric Dirichlet concentration over basket mixtures.
    pub alpha: f64,
    /// Symmetric Dirichlet concentration over topic rows.
    pub beta: f64,
    /// One epoch is one full pass over the training baskets in minibatches.
    pub max_epochs: usize,
    pub minibatch_size: usize,
    /// tau0 in rho_t = (tau0 + t)^(-kappa).
    pub learning_offset: f64,
    /// kappa, must lie in (0.5, 1] for convergence of the online updates.
    pub decay: f64,
    /// Stop when the relative change of training log-perplexity between
    /// consecutive epochs falls below this.
    pub convergence_tol: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(num_topics: usize) -> Self {
        TrainConfig {
            num_topics,
            alpha: 0.1,
            beta: 1.0 / num_topics.max(1) as f64,
            max_epochs: 500,
            minibatch_size: 4096,
            learning_offset: 1024.0,
            decay: 0.51,
            // With one update per epoch at this learning offset the
            // per-epoch perplexity deltas are small long before the topics
            // settle; 1e-4 here stops training while topic recovery is
            // still poor.
            convergence_tol: 1e-5,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_topics < 1 {
            return Err(Error::invalid("need at least one topic"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.beta > 0.0) {
            return Err(Error::invalid(format!("beta must be positive, got {}", self.beta)));
        }
        if self.max_epochs < 1 {
            return Err(Error::invalid("max_epochs must be ≥ 1"));
        }
        if self.minibatch_size < 1 {
            return Err(Error::invalid("minibatch_size must be ≥ 1"));
        }
        if !(self.learning_offset > 0.0) {
            return Err(Error::invalid(format!(
                "learning offset must be positive, got {}",
                self.learning_offset
            )));
        }
        if !(self.decay > 0.5 && self.decay <= 1.0) {
            return Err(Error::invalid(format!("decay must lie in (0.5, 1], got {}", self.decay)));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::invalid(format!(
                "convergence tolerance must be positive, got {}",
                self.convergence_tol
            )));
        }
        Ok(())
    }
}

/// A fitted topic model: row-stochastic topic-product matrix, the
/// concentrations it was trained with, its vocabulary, and the per-epoch
/// training log-perplexity trace.
#[derive(Debug, Clone)]
pub struct TopicModel {
    phi: Vec<Vec<f64>>,
    pub alpha: f64,
    pub beta: f64,
    vocab: Arc<Vocabulary>,
    pub trace: Vec<f64>,
}

impl TopicModel {
    /// Wraps an explicit topic matrix. Rows must be stochastic within 1e-9.
    pub fn from_phi(
        phi: Vec<Vec<f64>>,
        alpha: f64,
        beta: f64,
        vocab: Arc<Vocabulary>,
        trace: Vec<f64>,
    ) -> Result<Self> {
        if phi.is_empty() {
            return Err(Error::invalid("model needs at least one topic row"));
        }
        let v = vocab.len();
        for (i, row) in phi.iter().enumerate() {
            if row.len() != v {
                return Err(Error::invalid(format!(
                    "topic row {i} has length {}, vocabulary has {v}",
                    row.len()
                )));
            }
            if row.iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::invalid(format!("topic row {i} has a negative or NaN entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("topic row {i} sums to {sum}, expected 1")));
            }
        }
        Ok(TopicModel { phi, alpha, beta, vocab, trace })
    }

    pub fn num_topics(&self) -> usize {
        self.phi.len()
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn phi(&self) -> &[Vec<f64>] {
        &self.phi
    }

    pub fn phi_row(&self, k: usize) -> &[f64] {
        &self.phi[k]
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    /// Relabels topics: row `i` of the result is row `perm[i]` of `self`.
    /// `perm` must be a permutation of 0..K.
    pub fn permuted(&self, perm: &[usize]) -> Result<TopicModel> {
        let k = self.num_topics();
        let mut seen = vec![false; k];
        if perm.len() != k || perm.iter().any(|&p| p >= k || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid(format!("not a permutation of 0..{k}: {perm:?}")));
        }
        Ok(TopicModel {
            phi: perm.iter().map(|&p| self.phi[p].clone()).collect(),
            alpha: self.alpha,
            beta: self.beta,
            vocab: Arc::clone(&self.vocab),
            trace: self.trace.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        write_model(self, &mut w)
    }

    pub fn load(path: &Path, vocab: Arc<Vocabulary>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut r = std::io::BufReader::new(file);
        read_model(&mut r, vocab)
    }
}

/// Per-basket topic mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicMixture {
    /// Length-K probability vector; sums to 1 within 1e-9.
    pub theta: Vec<f64>,
}

fn normalize(values: &[f64]) -> Vec<f64> {
    let sum: f64 = values.iter().sum();
    values.iter().map(|&x| x / sum).collect()
}

/// exp(psi(gamma_k) - psi(sum gamma)) per coordinate.
fn dirichlet_expectation(gamma: &[f64]) -> Vec<f64> {
    let total: f64 = gamma.iter().sum();
    let psi_total = digamma(total);
    gamma.iter().map(|&g| (digamma(g) - psi_total).exp()).collect()
}

/// Uniform starting point for fold-in: every topic gets an equal share of
/// the basket mass. Query-time inference must not consume randomness.
fn fold_in_gamma_init(counts: &[(u32, u32)], alpha: f64, k: usize) -> Vec<f64> {
    let nd: f64 = counts.iter().map(|&(_, c)| c as f64).sum();
    vec![alpha + nd / k as f64; k]
}

/// Local variational step for one basket against fixed per-topic product
/// weights (exponentiated expected log-topics during training, phi rows at
/// fold-in), starting from `init`. Training passes a random start: with a
/// symmetric start every basket tilts toward whichever topic the global
/// initialization happens to favor, and small vocabularies collapse onto a
/// single live topic. `on_iter` observes gamma after every update.
fn e_step_basket(
    counts: &[(u32, u32)],
    weights: &[Vec<f64>],
    alpha: f64,
    init: Vec<f64>,
    mut on_iter: impl FnMut(&[f64]),
) -> Vec<f64> {
    let k = weights.len();
    debug_assert_eq!(init.len(), k);
    let mut gamma = init;
    let mut exp_elog_theta = dirichlet_expectation(&gamma);
    let mut theta = normalize(&gamma);
    for _ in 0..LOCAL_MAX_ITERS {
        let mut next = vec![alpha; k];
        for &(w, c) in counts {
            let wi = w as usize;
            let mut phinorm = PHI_FLOOR;
            for t in 0..k {
                phinorm += exp_elog_theta[t] * weights[t][wi];
            }
            let scale = c as f64 / phinorm;
            for t in 0..k {
                next[t] += exp_elog_theta[t] * weights[t][wi] * scale;
            }
        }
        gamma = next;
        exp_elog_theta = dirichlet_expectation(&gamma);
        on_iter(&gamma);
        let new_theta = normalize(&gamma);
        let change: f64 = new_theta.iter().zip(&theta).map(|(a, b)| (a - b).abs()).sum();
        theta = new_theta;
        if change < LOCAL_TOL {
            break;
        }
    }
    gamma
}

/// The gamma-dependent part of one basket's variational objective, used to
/// verify that the local step ascends.
#[cfg(test)]
fn basket_objective(counts: &[(u32, u32)], weights: &[Vec<f64>], alpha: f64, gamma: &[f64]) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let k = weights.len();
    let total: f64 = gamma.iter().sum();
    let psi_total = digamma(total);
    let elog_theta: Vec<f64> = gamma.iter().map(|&g| digamma(g) - psi_total).collect();
    let exp_elog_theta: Vec<f64> = elog_theta.iter().map(|&x| x.exp()).collect();
    let mut score = 0.0;
    for &(w, c) in counts {
        let wi = w as usize;
        let mut phinorm = PHI_FLOOR;
        for t in 0..k {
            phinorm += exp_elog_theta[t] * weights[t][wi];
        }
        score += c as f64 * phinorm.ln();
    }
    for t in 0..k {
        score += (alpha - gamma[t]) * elog_theta[t];
        score += ln_gamma(gamma[t]);
    }
    score - ln_gamma(total)
}

/// Normalizes each row by its own sum.
fn rows_to_phi(lambda: &[Vec<f64>]) -> Vec<Vec<f64>> {
    lambda
        .iter()
        .map(|row| {
            let sum: f64 = row.iter().sum();
            let out: Vec<f64> = row.iter().map(|&x| x / sum).collect();
            debug_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            out
        })
        .collect()
}

/// Restricts basket counts to indices the model knows. Returns None when
/// nothing survives.
fn known_counts(basket: &Basket, v: usize) -> Option<Vec<(u32, u32)>> {
    let known: Vec<(u32, u32)> = basket
        .counts()
        .iter()
        .copied()
        .filter(|&(w, _)| (w as usize) < v)
        .collect();
    if known.len() < basket.counts().len() {
        log::warn!(
            "basket {:?}: skipping {} products outside the model vocabulary",
            basket.id,
            basket.counts().len() - known.len()
        );
    }
    if known.is_empty() {
        None
    } else {
        Some(known)
    }
}

/// Fold-in: converged variational Dirichlet parameters for explicit counts
/// under fixed topics.
pub(crate) fn fold_in_gamma(phi: &[Vec<f64>], alpha: f64, counts: &[(u32, u32)]) -> Vec<f64> {
    let init = fold_in_gamma_init(counts, alpha, phi.len());
    e_step_basket(counts, phi, alpha, init, |_| {})
}

/// Fold-in: normalized mixture for explicit counts under fixed topics.
pub(crate) fn fold_in_theta(phi: &[Vec<f64>], alpha: f64, counts: &[(u32, u32)]) -> Vec<f64> {
    normalize(&fold_in_gamma(phi, alpha, counts))
}

/// Infers the topic mixture of one basket with the model's topics held
/// fixed. Products outside the model vocabulary are skipped with a warning.
pub fn infer_mixture(model: &TopicModel, basket: &Basket) -> Result<TopicMixture> {
    let counts = known_counts(basket, model.vocab_len())
        .ok_or_else(|| Error::invalid("no in-vocabulary items"))?;
    Ok(TopicMixture {
        theta: fold_in_theta(model.phi(), model.alpha, &counts),
    })
}

/// Fits a topic model by online variational Bayes. Deterministic given
/// `config.seed`: the topic initialization and the per-basket local starting
/// points are the only random draws, and minibatches are consecutive corpus
/// chunks.
pub fn train_online_vb(corpus: &BasketCorpus, config: &TrainConfig) -> Result<TopicModel> {
    Ok(train_online_vb_detailed(corpus, config)?.0)
}

/// Trainer returning the final epoch's per-basket gamma, for consistency
/// checks between training-time mixtures and fold-in.
pub(crate) fn train_online_vb_detailed(
    corpus: &BasketCorpus,
    config: &TrainConfig,
) -> Result<(TopicModel, Vec<Vec<f64>>)> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::invalid("cannot train on an empty corpus"));
    }
    let k = config.num_topics;
    let v = corpus.vocab_len();
    if v == 0 {
        return Err(Error::invalid("corpus has an empty vocabulary"));
    }
    if k > v {
        log::warn!("{k} topics over a vocabulary of only {v} products");
    }

    let d = corpus.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // Mean-1.0 draws with 10% spread, for both the topic parameters and the
    // per-basket local starting points.
    let init_dist = Gamma::new(100.0, 0.01).expect("fixed valid shape");
    let mut lambda: Vec<Vec<f64>> =
        (0..k).map(|_| (0..v).map(|_| init_dist.sample(&mut rng)).collect()).collect();

    let mut trace: Vec<f64> = Vec::new();
    let mut gammas: Vec<Vec<f64>> = vec![Vec::new(); d];
    let mut updates: u64 = 0;

    for _epoch in 0..config.max_epochs {
        for (bi, batch) in corpus.baskets().chunks(config.minibatch_size).enumerate() {
            // Expected log-topics under the current variational parameters.
            let exp_elog_beta: Vec<Vec<f64>> = lambda.iter().map(|row| dirichlet_expectation(row)).collect();

            let mut sstats = vec![vec![0.0f64; v]; k];
            for (di, basket) in batch.iter().enumerate() {
                let counts = basket.counts();
                let gamma_init: Vec<f64> = (0..k).map(|_| init_dist.sample(&mut rng)).collect();
                let gamma = e_step_basket(counts, &exp_elog_beta, config.alpha, gamma_init, |_| {});
                let e_theta = dirichlet_expectation(&gamma);
                for &(w, c) in counts {
                    let wi = w as usize;
                    let mut phinorm = PHI_FLOOR;
                    for t in 0..k {
                        phinorm += e_theta[t] * exp_elog_beta[t][wi];
                    }
                    for t in 0..k {
                        sstats[t][wi] += c as f64 * (e_theta[t] * exp_elog_beta[t][wi] / phinorm);
                    }
                }
                gammas[bi * config.minibatch_size + di] = gamma;
            }

            let rho = (config.learning_offset + updates as f64).powf(-config.decay).min(1.0);
            let scale = d as f64 / batch.len() as f64;
            for t in 0..k {
                for w in 0..v {
                    lambda[t][w] = (1.0 - rho) * lambda[t][w] + rho * (config.beta + scale * sstats[t][w]);
                }
            }
            updates += 1;
        }

        let phi = rows_to_phi(&lambda);
        let value = crate::metrics::log_perplexity_phi(&phi, config.alpha, corpus)?;
        trace.push(value);
        let n = trace.len();
        if n >= 2 {
            let prev = trace[n - 2];
            let rel = (trace[n - 1] - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
            if rel < config.convergence_tol {
                break;
            }
        }
    }

    let model = TopicModel {
        phi: rows_to_phi(&lambda),
        alpha: config.alpha,
        beta: config.beta,
        vocab: Arc::clone(corpus.vocab()),
        trace,
    };
    Ok((model, gammas))
}

/// Fits a topic model by collapsed Gibbs sampling over token assignments.
///
/// The conditional for one token is proportional to
/// (n_dk + alpha) * (n_kw + beta) / (n_k + V*beta) with the token removed
/// from the counts. Topics are estimated from counts averaged over the
/// post-burn-in sweeps. Intended as a small-scale cross-check; corpora over
/// [`GIBBS_TOKEN_LIMIT`] tokens are rejected.
pub fn train_gibbs(
    corpus: &BasketCorpus,
    config: &TrainConfig,
    burn_in: usize,
    samples: usize,
) -> Result<TopicModel> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::invalid("cannot train on an empty corpus"));
    }
    let tokens_total = corpus.token_total();
    if tokens_total > GIBBS_TOKEN_LIMIT {
        return Err(Error::invalid(format!(
            "corpus has {tokens_total} tokens; the Gibbs sampler is limited to {GIBBS_TOKEN_LIMIT}"
        )));
    }
    if samples == 0 {
        return Err(Error::invalid(format!(
            "burn-in {burn_in} must be less than total iterations {}",
            burn_in + samples
        )));
    }

    let k = config.num_topics;
    let v = corpus.vocab_len();
    let alpha = config.alpha;
    let beta = config.beta;
    let vbeta = v as f64 * beta;

    // Expanded token lists; dense count arrays.
    let docs: Vec<Vec<u32>> = corpus
        .baskets()
        .iter()
        .map(|b| {
            let mut t = Vec::with_capacity(b.token_count() as usize);
            for &(w, c) in b.counts() {
                t.extend(std::iter::repeat(w).take(c as usize));
            }
            t
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut n_dk = vec![vec![0u32; k]; docs.len()];
    let mut n_kw = vec![vec![0u32; v]; k];
    let mut n_k = vec![0u32; k];
    let mut z: Vec<Vec<u32>> = docs
        .iter()
        .map(|tokens| tokens.iter().map(|_| rng.random_range(0..k) as u32).collect())
        .collect();
    for (d, tokens) in docs.iter().enumerate() {
        for (n, &w) in tokens.iter().enumerate() {
            let t = z[d][n] as usize;
            n_dk[d][t] += 1;
            n_kw[t][w as usize] += 1;
            n_k[t] += 1;
        }
    }

    let mut avg_counts = vec![vec![0.0f64; v]; k];
    let mut weights = vec![0.0f64; k];
    for sweep in 0..(burn_in + samples) {
        for (d, tokens) in docs.iter().enumerate() {
            for (n, &w) in tokens.iter().enumerate() {
                let wi = w as usize;
                let old = z[d][n] as usize;
                n_dk[d][old] -= 1;
                n_kw[old][wi] -= 1;
                n_k[old] -= 1;
                for t in 0..k {
                    weights[t] = (n_dk[d][t] as f64 + alpha) * (n_kw[t][wi] as f64 + beta)
                        / (n_k[t] as f64 + vbeta);
                }
                let new = sample_weighted(&weights, &mut rng);
                z[d][n] = new as u32;
                n_dk[d][new] += 1;
                n_kw[new][wi] += 1;
                n_k[new] += 1;
            }
        }
        if sweep >= burn_in {
            for t in 0..k {
                for w in 0..v {
                    avg_counts[t][w] += n_kw[t][w] as f64;
                }
            }
        }
    }

    let s = samples as f64;
    let lambda: Vec<Vec<f64>> = avg_counts
        .iter()
        .map(|row| row.iter().map(|&c| beta + c / s).collect())
        .collect();
    Ok(TopicModel {
        phi: rows_to_phi(&lambda),
        alpha,
        beta,
        vocab: Arc::clone(corpus.vocab()),
        trace: Vec::new(),
    })
}

fn sample_weighted(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Writes a model in the `model-v1` binary layout.
pub fn write_model<W: Write>(model: &TopicModel, out: &mut W) -> Result<()> {
    let mut w = ByteWriter::new(out);
    w.magic(MODEL_FORMAT_VERSION)?;
    w.u64(model.num_topics() as u64)?;
    w.u64(model.vocab_len() as u64)?;
    w.f64(model.alpha)?;
    w.f64(model.beta)?;
    w.u64(model.vocab.hash())?;
    w.u64(model.trace.len() as u64)?;
    for &x in &model.trace {
        w.f64(x)?;
    }
    for row in &model.phi {
        for &x in row {
            w.f64(x)?;
        }
    }
    Ok(())
}

/// Reads a `model-v1` file against the vocabulary it was trained on.
pub fn read_model<R: Read>(input: &mut R, vocab: Arc<Vocabulary>) -> Result<TopicModel> {
    let mut r = ByteReader::new(input, "model-v1");
    r.expect_magic(MODEL_FORMAT_VERSION)?;
    let k = r.u64()? as usize;
    let v = r.u64()? as usize;
    let alpha = r.f64()?;
    let beta = r.f64()?;
    let hash = r.u64()?;
    if v != vocab.len() {
        return Err(Error::invalid(format!(
            "model was trained on a vocabulary of {v} products, supplied vocabulary has {}",
            vocab.len()
        )));
    }
    if hash != vocab.hash() {
        return Err(Error::invalid(
            "model vocabulary hash does not match the supplied vocabulary",
        ));
    }
    let n_trace = r.u64()? as usize;
    let mut trace = Vec::with_capacity(n_trace.min(1 << 20));
    for _ in 0..n_trace {
        trace.push(r.f64()?);
    }
    let mut phi = Vec::with_capacity(k.min(1 << 20));
    for _ in 0..k {
        let mut row = Vec::with_capacity(v);
        for _ in 0..v {
            row.push(r.f64()?);
        }
        phi.push(row);
    }
    TopicModel::from_phi(phi, alpha, beta, vocab, trace)
}
