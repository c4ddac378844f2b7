//! Synthetic corpus generation with retained ground truth.
//!
//! Baskets are produced by the standard topic-mixture process: each topic is
//! a Dirichlet draw over products, each basket draws a topic mixture, and
//! every token draws a topic then a product. The generator keeps every latent
//! draw so recovery tests can align fitted models against the truth.
//! Covariate injection adds seasonal dates and group-conditioned mixtures on
//! top of an existing synthetic corpus.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use crate::corpus::{Basket, BasketCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::serialize::{ByteReader, ByteWriter};

pub const TRUTH_FORMAT_VERSION: &str = "truth-v1";

/// Latent state retained from generation: true topics, per-basket mixtures
/// and per-token topic labels, plus the concentrations that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// K x V row-stochastic topic-product distributions.
    pub phi: Vec<Vec<f64>>,
    /// D x K row-stochastic basket mixtures.
    pub theta: Vec<Vec<f64>>,
    /// Per-basket token topic labels, length N_d each, in draw order.
    pub assignments: Vec<Vec<u32>>,
    pub alpha: f64,
    pub beta: f64,
}

impl GroundTruth {
    pub fn num_topics(&self) -> usize {
        self.phi.len()
    }

    pub fn vocab_len(&self) -> usize {
        self.phi.first().map_or(0, Vec::len)
    }

    pub fn num_baskets(&self) -> usize {
        self.theta.len()
    }

    /// Topic with the largest mixture weight in basket `d`; ties break to the
    /// lowest index.
    pub fn dominant_topic(&self, d: usize) -> usize {
        let row = &self.theta[d];
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        best
    }

    /// Checks row-stochasticity and label ranges.
    pub fn validate(&self) -> Result<()> {
        let k = self.num_topics();
        for (name, rows, width) in [("phi", &self.phi, self.vocab_len()), ("theta", &self.theta, k)] {
            for (i, row) in rows.iter().enumerate() {
                if row.len() != width {
                    return Err(Error::invalid(format!("{name} row {i} has length {}, expected {width}", row.len())));
                }
                if row.iter().any(|&x| !(x >= 0.0)) {
                    return Err(Error::invalid(format!("{name} row {i} has a negative or NaN entry")));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::invalid(format!("{name} row {i} sums to {sum}, expected 1")));
                }
            }
        }
        if self.assignments.len() != self.theta.len() {
            return Err(Error::invalid(format!(
                "{} assignment lists for {} baskets",
                self.assignments.len(),
                self.theta.len()
            )));
        }
        for (d, z) in self.assignments.iter().enumerate() {
            if z.iter().any(|&t| t as usize >= k) {
                return Err(Error::invalid(format!("basket {d} has a topic label outside [0, {k})")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        write_truth(self, &mut w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut r = std::io::BufReader::new(file);
        read_truth(&mut r)
    }
}

/// Basket token-count sampler. The default matches the filtered regime of
/// large baskets: 1 + Poisson(mean - 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BasketSizeSampler {
    Fixed(u32),
    ShiftedPoisson { mean: f64 },
}

impl Default for BasketSizeSampler {
    fn default() -> Self {
        BasketSizeSampler::ShiftedPoisson { mean: 25.0 }
    }
}

impl BasketSizeSampler {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<u32> {
        let n = match *self {
            BasketSizeSampler::Fixed(n) => n,
            BasketSizeSampler::ShiftedPoisson { mean } => {
                if !(mean >= 1.0) {
                    return Err(Error::invalid(format!("shifted Poisson mean must be ≥ 1, got {mean}")));
                }
                if mean == 1.0 {
                    1
                } else {
                    let pois = Poisson::new(mean - 1.0)
                        .map_err(|e| Error::invalid(format!("invalid Poisson rate: {e}")))?;
                    1 + pois.sample(rng) as u32
                }
            }
        };
        if n == 0 {
            return Err(Error::invalid("basket size sampler produced 0"));
        }
        Ok(n)
    }
}

/// One Dirichlet draw with parameter vector `params`, via normalized Gamma
/// variates. Resamples on the (astronomically rare) all-zero underflow.
fn sample_dirichlet(params: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if params.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::invalid("Dirichlet parameters must be positive"));
    }
    for _ in 0..100 {
        let mut draw: Vec<f64> = Vec::with_capacity(params.len());
        for &a in params {
            let gamma = Gamma::new(a, 1.0).map_err(|e| Error::invalid(format!("invalid Gamma shape {a}: {e}")))?;
            draw.push(gamma.sample(rng));
        }
        let sum: f64 = draw.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            for x in &mut draw {
                *x /= sum;
            }
            return Ok(draw);
        }
    }
    Err(Error::invalid("Dirichlet sampling underflowed repeatedly"))
}

fn sample_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
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

/// Draws K independent symmetric Dirichlet(beta) rows over V products.
pub fn sample_topics(k: usize, v: usize, beta: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    if k < 1 {
        return Err(Error::invalid("need at least one topic"));
    }
    if v < 2 {
        return Err(Error::invalid(format!("vocabulary size must be ≥ 2, got {v}")));
    }
    if !(beta > 0.0) {
        return Err(Error::invalid(format!("topic concentration must be positive, got {beta}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = vec![beta; v];
    (0..k).map(|_| sample_dirichlet(&params, &mut rng)).collect()
}

/// Samples a corpus of `d` baskets from fixed topics `phi`.
///
/// Per basket: a mixture draw from symmetric Dirichlet(alpha), a size draw,
/// then per token a topic label and a product. Every latent draw lands in the
/// returned [`GroundTruth`]; `beta` is carried through for the record only.
/// Baskets have no dates or customer ids until [`inject_covariates`].
pub fn sample_corpus(
    phi: &[Vec<f64>],
    d: usize,
    alpha: f64,
    beta: f64,
    basket_size: &BasketSizeSampler,
    seed: u64,
) -> Result<(BasketCorpus, GroundTruth)> {
    let (corpus, truth, _) = sample_corpus_with_tokens(phi, d, alpha, beta, basket_size, seed)?;
    Ok((corpus, truth))
}

/// Like [`sample_corpus`] but also returns per-basket product draws w_{d,n}
/// aligned with `GroundTruth::assignments`. Test-only visibility.
pub(crate) fn sample_corpus_with_tokens(
    phi: &[Vec<f64>],
    d: usize,
    alpha: f64,
    beta: f64,
    basket_size: &BasketSizeSampler,
    seed: u64,
) -> Result<(BasketCorpus, GroundTruth, Vec<Vec<u32>>)> {
    validate_phi(phi)?;
    let k = phi.len();
    let v = phi[0].len();
    if d < 1 {
        return Err(Error::invalid("need at least one basket"));
    }
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("mixture concentration must be positive, got {alpha}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha_vec = vec![alpha; k];
    let mut theta = Vec::with_capacity(d);
    let mut assignments = Vec::with_capacity(d);
    let mut tokens = Vec::with_capacity(d);
    let mut baskets = Vec::with_capacity(d);

    for i in 0..d {
        let mixture = sample_dirichlet(&alpha_vec, &mut rng)?;
        let n = basket_size.sample(&mut rng)?;
        let mut z = Vec::with_capacity(n as usize);
        let mut w = Vec::with_capacity(n as usize);
        let mut counts = vec![0u32; v];
        for _ in 0..n {
            let topic = sample_index(&mixture, &mut rng);
            let product = sample_index(&phi[topic], &mut rng);
            z.push(topic as u32);
            w.push(product as u32);
            counts[product] += 1;
        }
        let sparse: Vec<(u32, u32)> = counts
            .iter()
            .enumerate()
            .filter(|&(_, &c)| c > 0)
            .map(|(p, &c)| (p as u32, c))
            .collect();
        baskets.push(Basket::new(format!("b{i:06}"), None, None, sparse)?);
        theta.push(mixture);
        assignments.push(z);
        tokens.push(w);
    }

    let vocab = Arc::new(Vocabulary::from_products(
        (0..v).map(|p| format!("p{p:05}")).collect(),
    )?);
    let corpus = BasketCorpus::new(vocab, baskets)?;
    let truth = GroundTruth {
        phi: phi.to_vec(),
        theta,
        assignments,
        alpha,
        beta,
    };
    Ok((corpus, truth, tokens))
}

fn validate_phi(phi: &[Vec<f64>]) -> Result<()> {
    if phi.is_empty() {
        return Err(Error::invalid("need at least one topic row"));
    }
    let v = phi[0].len();
    if v < 2 {
        return Err(Error::invalid(format!("vocabulary size must be ≥ 2, got {v}")));
    }
    for (i, row) in phi.iter().enumerate() {
        if row.len() != v {
            return Err(Error::invalid(format!("topic row {i} has length {}, expected {v}", row.len())));
        }
        if row.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::invalid(format!("topic row {i} has a negative or NaN entry")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("topic row {i} sums to {sum}, expected 1")));
        }
    }
    Ok(())
}

/// Seasonal dating: baskets whose dominant true topic has a profile get their
/// month drawn in proportion to the profile's 12 multipliers; topics without
/// a profile date uniformly. Days are uniform within the month.
#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalOptions {
    pub year: i32,
    /// topic index -> 12 positive month multipliers (January first).
    pub profiles: BTreeMap<usize, Vec<f64>>,
}

/// One customer group: a label and the per-topic Dirichlet parameter vector
/// its members' basket mixtures are drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSpec {
    pub label: String,
    pub alpha: Vec<f64>,
}

/// Customer group injection: consecutive runs of baskets become customers,
/// customers rotate through groups, and every affected basket's mixture and
/// tokens are redrawn from the group's parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupOptions {
    pub groups: Vec<GroupSpec>,
    pub baskets_per_customer: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CovariateOptions {
    pub seasonal: Option<SeasonalOptions>,
    pub groups: Option<GroupOptions>,
}

/// A customer's group label, for the demographic sidecar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemographicAssignment {
    pub customer_id: String,
    pub group_label: String,
}

/// Overlays covariates on a synthetic corpus.
///
/// Group injection runs first (it redraws mixtures, so it changes dominant
/// topics), then seasonal dating reads the updated truth. The truth is
/// updated in place; basket sizes and ids are preserved.
pub fn inject_covariates(
    corpus: &BasketCorpus,
    truth: &mut GroundTruth,
    options: &CovariateOptions,
    seed: u64,
) -> Result<(BasketCorpus, Vec<DemographicAssignment>)> {
    let k = truth.num_topics();
    let d = corpus.len();
    if truth.num_baskets() != d {
        return Err(Error::invalid(format!(
            "truth covers {} baskets but corpus has {d}",
            truth.num_baskets()
        )));
    }
    if truth.vocab_len() != corpus.vocab_len() {
        return Err(Error::invalid(format!(
            "truth vocabulary size {} does not match corpus {}",
            truth.vocab_len(),
            corpus.vocab_len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut baskets = corpus.baskets().to_vec();
    let mut sidecar = Vec::new();

    if let Some(groups) = &options.groups {
        if groups.groups.is_empty() {
            return Err(Error::invalid("group injection needs at least one group"));
        }
        if groups.baskets_per_customer < 1 {
            return Err(Error::invalid("baskets_per_customer must be ≥ 1"));
        }
        for g in &groups.groups {
            if g.alpha.len() != k {
                return Err(Error::invalid(format!(
                    "group {:?} has {} topic parameters, expected {k}",
                    g.label,
                    g.alpha.len()
                )));
            }
            if g.alpha.iter().any(|&a| !(a > 0.0)) {
                return Err(Error::invalid(format!("group {:?} has a nonpositive parameter", g.label)));
            }
        }
        let bpc = groups.baskets_per_customer;
        let n_groups = groups.groups.len();
        let v = corpus.vocab_len();
        for (c, chunk) in (0..d).collect::<Vec<_>>().chunks(bpc).enumerate() {
            let group = &groups.groups[c % n_groups];
            let customer_id = format!("c{c:06}");
            sidecar.push(DemographicAssignment {
                customer_id: customer_id.clone(),
                group_label: group.label.clone(),
            });
            for &i in chunk {
                let mixture = sample_dirichlet(&group.alpha, &mut rng)?;
                let n = baskets[i].token_count();
                let mut z = Vec::with_capacity(n as usize);
                let mut counts = vec![0u32; v];
                for _ in 0..n {
                    let topic = sample_index(&mixture, &mut rng);
                    let product = sample_index(&truth.phi[topic], &mut rng);
                    z.push(topic as u32);
                    counts[product] += 1;
                }
                let sparse: Vec<(u32, u32)> = counts
                    .iter()
                    .enumerate()
                    .filter(|&(_, &c)| c > 0)
                    .map(|(p, &c)| (p as u32, c))
                    .collect();
                baskets[i] = Basket::new(
                    baskets[i].id.clone(),
                    baskets[i].date,
                    Some(customer_id.clone()),
                    sparse,
                )?;
                truth.theta[i] = mixture;
                truth.assignments[i] = z;
            }
        }
    }

    if let Some(seasonal) = &options.seasonal {
        for (&topic, profile) in &seasonal.profiles {
            if topic >= k {
                return Err(Error::invalid(format!(
                    "unknown topic index {topic} in seasonal profile (model has {k} topics)"
                )));
            }
            if profile.len() != 12 {
                return Err(Error::invalid(format!(
                    "seasonal profile for topic {topic} has {} entries, expected 12",
                    profile.len()
                )));
            }
            if profile.iter().any(|&m| !(m > 0.0)) {
                return Err(Error::invalid(format!(
                    "seasonal profile for topic {topic} has a nonpositive multiplier"
                )));
            }
        }
        let uniform = vec![1.0; 12];
        for (i, basket) in baskets.iter_mut().enumerate() {
            let dominant = truth.dominant_topic(i);
            let profile = seasonal.profiles.get(&dominant).unwrap_or(&uniform);
            let month = sample_index(profile, &mut rng) as u32 + 1;
            let day = rng.random_range(1..=days_in_month(seasonal.year, month));
            let date = NaiveDate::from_ymd_opt(seasonal.year, month, day)
                .ok_or_else(|| Error::invalid(format!("invalid date {}-{month}-{day}", seasonal.year)))?;
            basket.date = Some(date);
        }
    }

    let corpus = BasketCorpus::new(Arc::clone(corpus.vocab()), baskets)?;
    Ok((corpus, sidecar))
}

fn days_in_month(year: i32, month: u32) -> u32 {
    for d in (28..=31).rev() {
        if NaiveDate::from_ymd_opt(year, month, d).is_some() {
            return d;
        }
    }
    28
}

/// Writes the `customer_id,group_label` sidecar CSV.
pub fn write_demographic_sidecar<W: Write>(assignments: &[DemographicAssignment], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["customer_id", "group_label"]).map_err(csv_io)?;
    for a in assignments {
        w.write_record([&a.customer_id, &a.group_label]).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::invalid(format!("CSV write failed: {e}"))
}

/// Writes ground truth in the `truth-v1` binary layout.
pub fn write_truth<W: Write>(truth: &GroundTruth, out: &mut W) -> Result<()> {
    let mut w = ByteWriter::new(out);
    w.magic(TRUTH_FORMAT_VERSION)?;
    w.u64(truth.num_topics() as u64)?;
    w.u64(truth.vocab_len() as u64)?;
    w.u64(truth.num_baskets() as u64)?;
    w.f64(truth.alpha)?;
    w.f64(truth.beta)?;
    for row in &truth.phi {
        for &x in row {
            w.f64(x)?;
        }
    }
    for row in &truth.theta {
        for &x in row {
            w.f64(x)?;
        }
    }
    for z in &truth.assignments {
        w.u32(z.len() as u32)?;
        for &t in z {
            w.u32(t)?;
        }
    }
    Ok(())
}

/// Reads a `truth-v1` file and validates its invariants.
pub fn read_truth<R: Read>(input: &mut R) -> Result<GroundTruth> {
    let mut r = ByteReader::new(input, "truth-v1");
    r.expect_magic(TRUTH_FORMAT_VERSION)?;
    let k = r.u64()? as usize;
    let v = r.u64()? as usize;
    let d = r.u64()? as usize;
    let alpha = r.f64()?;
    let beta = r.f64()?;
    let mut read_matrix = |rows: usize, cols: usize| -> Result<Vec<Vec<f64>>> {
        let mut m = Vec::with_capacity(rows.min(1 << 20));
        for _ in 0..rows {
            let mut row = Vec::with_capacity(cols);
            for _ in 0..cols {
                row.push(r.f64()?);
            }
            m.push(row);
        }
        Ok(m)
    };
    let phi = read_matrix(k, v)?;
    let theta = read_matrix(d, k)?;
    let mut assignments = Vec::with_capacity(d.min(1 << 20));
    for _ in 0..d {
        let n = r.u32()? as usize;
        let mut z = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            z.push(r.u32()?);
        }
        assignments.push(z);
    }
    let truth = GroundTruth {
        phi,
        theta,
        assignments,
        alpha,
        beta,
    };
    truth.validate()?;
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Datelike;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn total_variation(p: &[f64], q: &[f64]) -> f64 {
        0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }

    #[test]
    fn topics_rows_are_stochastic() {
        let phi = sample_topics(4, 30, 0.05, 11).unwrap();
        assert_eq!(phi.len(), 4);
        for row in &phi {
            assert_eq!(row.len(), 30);
            assert!(row.iter().all(|&x| x >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn topics_deterministic_per_seed() {
        let a = sample_topics(3, 10, 0.1, 99).unwrap();
        let b = sample_topics(3, 10, 0.1, 99).unwrap();
        assert_eq!(a, b);
        let c = sample_topics(3, 10, 0.1, 100).unwrap();
        assert_ne!(a, c);
    }

    // Concentration limit: huge beta pushes every entry to 1/V.
    #[test]
    fn topics_concentrate_at_large_beta() {
        let phi = sample_topics(5, 2, 1e6, 3).unwrap();
        for row in &phi {
            assert!((row[0] - 0.5).abs() < 1e-2, "{row:?}");
            assert!((row[1] - 0.5).abs() < 1e-2, "{row:?}");
        }
    }

    // Smaller beta concentrates mass: mean max entry over many rows must be
    // larger at beta=0.01 than at beta=10.
    #[test]
    fn topics_sparser_at_small_beta() {
        let mean_max = |beta: f64, seed: u64| {
            let rows = sample_topics(1000, 100, beta, seed).unwrap();
            rows.iter()
                .map(|r| r.iter().cloned().fold(0.0, f64::max))
                .sum::<f64>()
                / rows.len() as f64
        };
        assert!(mean_max(0.01, 5) > mean_max(10.0, 5));
    }

    #[test]
    fn topics_reject_bad_parameters() {
        assert!(sample_topics(0, 10, 0.1, 0).is_err());
        assert!(sample_topics(2, 1, 0.1, 0).is_err());
        assert!(sample_topics(2, 10, 0.0, 0).is_err());
        assert!(sample_topics(2, 10, -1.0, 0).is_err());
    }

    #[test]
    fn single_topic_forces_assignment() {
        let phi = sample_topics(1, 10, 0.5, 7).unwrap();
        let (_, truth) = sample_corpus(&phi, 20, 0.1, 0.5, &BasketSizeSampler::default(), 8).unwrap();
        for row in &truth.theta {
            assert_eq!(row, &vec![1.0]);
        }
        for z in &truth.assignments {
            assert!(z.iter().all(|&t| t == 0));
        }
    }

    // One-hot topics emit their own index: product counts must equal the
    // per-topic assignment histogram exactly.
    #[test]
    fn one_hot_topics_emit_their_index() {
        let k = 4;
        let phi: Vec<Vec<f64>> = (0..k)
            .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let (corpus, truth) =
            sample_corpus(&phi, 50, 0.2, 0.1, &BasketSizeSampler::Fixed(30), 21).unwrap();
        for (basket, z) in corpus.baskets().iter().zip(&truth.assignments) {
            let mut hist = vec![0u32; k];
            for &t in z {
                hist[t as usize] += 1;
            }
            let mut counts = vec![0u32; k];
            for &(w, c) in basket.counts() {
                counts[w as usize] = c;
            }
            assert_eq!(counts, hist);
        }
    }

    // Law of large numbers: tokens assigned to topic 0 follow phi_0.
    #[test]
    fn topic_conditional_token_distribution_matches_phi() {
        let phi = sample_topics(2, 25, 0.2, 31).unwrap();
        let (_, truth, tokens) = sample_corpus_with_tokens(
            &phi,
            2000,
            0.1,
            0.2,
            &BasketSizeSampler::default(),
            32,
        )
        .unwrap();
        let mut counts = vec![0u64; 25];
        let mut total = 0u64;
        for (z, w) in truth.assignments.iter().zip(&tokens) {
            for (&t, &p) in z.iter().zip(w) {
                if t == 0 {
                    counts[p as usize] += 1;
                    total += 1;
                }
            }
        }
        assert!(total > 10_000, "need a large topic-0 sample, got {total}");
        let empirical: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
        let tv = total_variation(&empirical, &phi[0]);
        assert!(tv < 0.03, "total variation {tv}");
    }

    #[test]
    fn corpus_bit_identical_per_seed() {
        let phi = sample_topics(3, 15, 0.1, 1).unwrap();
        let make = || sample_corpus(&phi, 30, 0.1, 0.1, &BasketSizeSampler::default(), 77).unwrap();
        let (ca, ta) = make();
        let (cb, tb) = make();
        let mut bytes_a = Vec::new();
        let mut bytes_b = Vec::new();
        crate::corpus::write_corpus(&ca, &mut bytes_a).unwrap();
        crate::corpus::write_corpus(&cb, &mut bytes_b).unwrap();
        assert_eq!(bytes_a, bytes_b);
        let mut ta_bytes = Vec::new();
        let mut tb_bytes = Vec::new();
        write_truth(&ta, &mut ta_bytes).unwrap();
        write_truth(&tb, &mut tb_bytes).unwrap();
        assert_eq!(ta_bytes, tb_bytes);
    }

    // Mean mixture weight is 1/K under the symmetric prior. Var of a
    // Dirichlet(0.3*K) coordinate is (1/K)(1-1/K)/(K*0.3+1); 3 sigma bound.
    #[test]
    fn mixture_moments_match_prior() {
        let k = 4;
        let d = 3000;
        let alpha = 0.3;
        let phi = sample_topics(k, 20, 0.1, 2).unwrap();
        let (_, truth) = sample_corpus(&phi, d, alpha, 0.1, &BasketSizeSampler::Fixed(5), 3).unwrap();
        let var = (1.0 / k as f64) * (1.0 - 1.0 / k as f64) / (alpha * k as f64 + 1.0);
        let bound = 3.0 * (var / d as f64).sqrt();
        for j in 0..k {
            let mean: f64 = truth.theta.iter().map(|r| r[j]).sum::<f64>() / d as f64;
            assert!((mean - 1.0 / k as f64).abs() < bound, "topic {j} mean {mean}");
        }
    }

    #[test]
    fn assignment_lengths_match_token_counts() {
        let phi = sample_topics(3, 12, 0.1, 4).unwrap();
        let (corpus, truth) = sample_corpus(&phi, 40, 0.1, 0.1, &BasketSizeSampler::default(), 5).unwrap();
        for (b, z) in corpus.baskets().iter().zip(&truth.assignments) {
            assert_eq!(b.token_count() as usize, z.len());
        }
        truth.validate().unwrap();
    }

    #[test]
    fn zero_size_sampler_is_rejected() {
        let phi = sample_topics(2, 5, 0.1, 6).unwrap();
        let err = sample_corpus(&phi, 5, 0.1, 0.1, &BasketSizeSampler::Fixed(0), 7).unwrap_err();
        assert!(err.to_string().contains("basket size"), "{err}");
    }

    fn seasonal_only(profiles: BTreeMap<usize, Vec<f64>>) -> CovariateOptions {
        CovariateOptions {
            seasonal: Some(SeasonalOptions { year: 2014, profiles }),
            groups: None,
        }
    }

    // Uniform profiles leave the month histogram uniform: chi-square
    // goodness of fit on 11 degrees of freedom must not reject at p=0.01.
    #[test]
    fn uniform_profiles_date_uniformly() {
        let phi = sample_topics(3, 20, 0.1, 8).unwrap();
        let (corpus, mut truth) =
            sample_corpus(&phi, 5000, 0.1, 0.1, &BasketSizeSampler::Fixed(5), 9).unwrap();
        let profiles: BTreeMap<usize, Vec<f64>> = (0..3).map(|t| (t, vec![1.0; 12])).collect();
        let (dated, _) = inject_covariates(&corpus, &mut truth, &seasonal_only(profiles), 10).unwrap();
        let mut hist = [0u64; 12];
        for b in dated.baskets() {
            hist[b.date.unwrap().month0() as usize] += 1;
        }
        let expected = 5000.0 / 12.0;
        let stat: f64 = hist.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new(11.0).unwrap().cdf(stat);
        assert!(p > 0.01, "chi-square stat {stat}, p {p}");
    }

    // A 3x multiplier on two months must land at least twice the monthly
    // mean of dominant-topic baskets in each boosted month.
    #[test]
    fn boosted_months_attract_dominant_baskets() {
        let phi = sample_topics(3, 20, 0.1, 12).unwrap();
        let (corpus, mut truth) =
            sample_corpus(&phi, 4000, 0.1, 0.1, &BasketSizeSampler::Fixed(5), 13).unwrap();
        let mut profiles = BTreeMap::new();
        let mut boosted = vec![1.0; 12];
        boosted[5] = 3.0;
        boosted[6] = 3.0;
        profiles.insert(0usize, boosted);
        let (dated, _) = inject_covariates(&corpus, &mut truth, &seasonal_only(profiles), 14).unwrap();
        let mut hist = [0f64; 12];
        let mut count = 0.0;
        for (i, b) in dated.baskets().iter().enumerate() {
            if truth.dominant_topic(i) == 0 {
                hist[b.date.unwrap().month0() as usize] += 1.0;
                count += 1.0;
            }
        }
        let mean = count / 12.0;
        assert!(hist[5] >= 2.0 * mean, "June {} vs mean {mean}", hist[5]);
        assert!(hist[6] >= 2.0 * mean, "July {} vs mean {mean}", hist[6]);
    }

    #[test]
    fn unknown_profile_topic_is_rejected() {
        let phi = sample_topics(2, 10, 0.1, 15).unwrap();
        let (corpus, mut truth) =
            sample_corpus(&phi, 10, 0.1, 0.1, &BasketSizeSampler::Fixed(5), 16).unwrap();
        let mut profiles = BTreeMap::new();
        profiles.insert(5usize, vec![1.0; 12]);
        let err = inject_covariates(&corpus, &mut truth, &seasonal_only(profiles), 17).unwrap_err();
        assert!(err.to_string().contains("unknown topic index 5"), "{err}");
    }

    // Group injection: customers rotate through groups, mixtures are redrawn
    // from the group parameters, token counts are preserved.
    #[test]
    fn groups_redraw_mixtures_per_customer() {
        let phi = sample_topics(2, 10, 0.1, 18).unwrap();
        let (corpus, mut truth) =
            sample_corpus(&phi, 200, 0.1, 0.1, &BasketSizeSampler::Fixed(25), 19).unwrap();
        let before_sizes: Vec<u32> = corpus.baskets().iter().map(|b| b.token_count()).collect();
        let options = CovariateOptions {
            seasonal: None,
            groups: Some(GroupOptions {
                groups: vec![
                    GroupSpec { label: "a".into(), alpha: vec![5.0, 0.1] },
                    GroupSpec { label: "b".into(), alpha: vec![0.1, 5.0] },
                ],
                baskets_per_customer: 2,
            }),
        };
        let (injected, sidecar) = inject_covariates(&corpus, &mut truth, &options, 20).unwrap();
        assert_eq!(sidecar.len(), 100);
        assert!(sidecar.iter().step_by(2).all(|a| a.group_label == "a"));
        assert!(sidecar.iter().skip(1).step_by(2).all(|a| a.group_label == "b"));
        let after_sizes: Vec<u32> = injected.baskets().iter().map(|b| b.token_count()).collect();
        assert_eq!(before_sizes, after_sizes);
        // Group a is loaded on topic 0, group b on topic 1: the mean theta
        // of each group must tilt heavily toward its own topic.
        let mut mean_a = 0.0;
        let mut mean_b = 0.0;
        for (i, b) in injected.baskets().iter().enumerate() {
            let c: usize = b.customer_id.as_ref().unwrap()[1..].parse().unwrap();
            if c % 2 == 0 {
                mean_a += truth.theta[i][0] / 100.0;
            } else {
                mean_b += truth.theta[i][1] / 100.0;
            }
        }
        assert!(mean_a > 0.9, "group a mean topic-0 weight {mean_a}");
        assert!(mean_b > 0.9, "group b mean topic-1 weight {mean_b}");
        truth.validate().unwrap();
    }

    #[test]
    fn group_alpha_length_must_match_topics() {
        let phi = sample_topics(2, 10, 0.1, 22).unwrap();
        let (corpus, mut truth) =
            sample_corpus(&phi, 10, 0.1, 0.1, &BasketSizeSampler::Fixed(5), 23).unwrap();
        let options = CovariateOptions {
            seasonal: None,
            groups: Some(GroupOptions {
                groups: vec![GroupSpec { label: "a".into(), alpha: vec![1.0, 1.0, 1.0] }],
                baskets_per_customer: 1,
            }),
        };
        assert!(inject_covariates(&corpus, &mut truth, &options, 24).is_err());
    }

    #[test]
    fn truth_file_round_trip() {
        let phi = sample_topics(3, 8, 0.1, 25).unwrap();
        let (_, truth) = sample_corpus(&phi, 15, 0.1, 0.1, &BasketSizeSampler::default(), 26).unwrap();
        let mut buf = Vec::new();
        write_truth(&truth, &mut buf).unwrap();
        let loaded = read_truth(&mut buf.as_slice()).unwrap();
        assert_eq!(truth, loaded);
    }

    #[test]
    fn sidecar_has_header_and_rows() {
        let assignments = vec![
            DemographicAssignment { customer_id: "c000000".into(), group_label: "x".into() },
            DemographicAssignment { customer_id: "c000001".into(), group_label: "y".into() },
        ];
        let mut buf = Vec::new();
        write_demographic_sidecar(&assignments, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "customer_id,group_label\nc000000,x\nc000001,y\n");
    }
}
