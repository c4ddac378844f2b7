//! Transaction ingestion and the sparse basket corpus.
//!
//! Raw records are (basket, date, customer, product, quantity) rows. Building
//! a corpus filters unpopular products first, then small baskets, and encodes
//! every surviving basket as sparse counts over a shared vocabulary.
//! Quantities count as repeated tokens: a basket with 3 apples contributes
//! 3 tokens.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use chrono::{Datelike, NaiveDate};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::serialize::{self, ByteReader, ByteWriter};

pub const CORPUS_FORMAT_VERSION: &str = "corpus-v1";

/// One ingested transaction row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionRecord {
    pub basket_id: String,
    pub date: Option<NaiveDate>,
    pub customer_id: Option<String>,
    pub product_id: String,
    pub quantity: u32,
}

/// The full ingested record stream, order preserved.
#[derive(Debug, Clone, Default)]
pub struct RawTransactions {
    pub records: Vec<TransactionRecord>,
}

/// Input encodings understood by [`ingest_transactions`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceFormat {
    Csv,
    Jsonl,
}

impl std::str::FromStr for SourceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(SourceFormat::Csv),
            "jsonl" => Ok(SourceFormat::Jsonl),
            other => Err(Error::invalid(format!("unknown format {other:?}, expected csv or jsonl"))),
        }
    }
}

/// Thresholds for corpus construction. Defaults follow the large-retailer
/// regime: products selling more than 50,000 units and baskets of at least
/// 20 items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct FilterConfig {
    /// Products with total units <= this value are dropped.
    pub min_annual_units: u64,
    /// Baskets with fewer than this many surviving tokens are dropped.
    pub min_basket_size: u32,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_annual_units: 50_000,
            min_basket_size: 20,
        }
    }
}

/// Ordered product id <-> dense index mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    products: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn from_products(products: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(products.len());
        for (i, p) in products.iter().enumerate() {
            if index.insert(p.clone(), i as u32).is_some() {
                return Err(Error::invalid(format!("duplicate product id {p:?} in vocabulary")));
            }
        }
        Ok(Vocabulary { products, index })
    }

    /// Vocabulary size V.
    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    pub fn product(&self, idx: u32) -> Option<&str> {
        self.products.get(idx as usize).map(String::as_str)
    }

    pub fn index_of(&self, product_id: &str) -> Option<u32> {
        self.index.get(product_id).copied()
    }

    pub fn products(&self) -> &[String] {
        &self.products
    }

    /// Stable FNV-1a hash over the ordered product list; stored in model
    /// files so a model can be checked against the corpus it was trained on.
    pub fn hash(&self) -> u64 {
        let mut h = serialize::Fnv1a::new();
        for p in &self.products {
            h.update(p.as_bytes());
            h.update(&[0]);
        }
        h.finish()
    }
}

/// One basket: sparse product counts plus optional date and customer id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Basket {
    pub id: String,
    pub date: Option<NaiveDate>,
    pub customer_id: Option<String>,
    counts: Vec<(u32, u32)>,
    total: u32,
}

impl Basket {
    /// Builds a basket from (product index, count) pairs. Pairs are sorted by
    /// index; duplicate indices accumulate; zero counts are rejected.
    pub fn new(
        id: String,
        date: Option<NaiveDate>,
        customer_id: Option<String>,
        mut counts: Vec<(u32, u32)>,
    ) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::invalid(format!("basket {id:?} has no items")));
        }
        counts.sort_unstable_by_key(|&(w, _)| w);
        let mut merged: Vec<(u32, u32)> = Vec::with_capacity(counts.len());
        for (w, c) in counts {
            if c == 0 {
                return Err(Error::invalid(format!("basket {id:?} has a zero count for product index {w}")));
            }
            match merged.last_mut() {
                Some(last) if last.0 == w => last.1 += c,
                _ => merged.push((w, c)),
            }
        }
        let total = merged.iter().map(|&(_, c)| c).sum();
        Ok(Basket {
            id,
            date,
            customer_id,
            counts: merged,
            total,
        })
    }

    /// Sparse (product index, count) pairs, ascending by index.
    pub fn counts(&self) -> &[(u32, u32)] {
        &self.counts
    }

    /// N_d: total token count of the basket.
    pub fn token_count(&self) -> u32 {
        self.total
    }
}

/// A filtered, indexed corpus of baskets sharing one vocabulary.
#[derive(Debug, Clone)]
pub struct BasketCorpus {
    vocab: Arc<Vocabulary>,
    baskets: Vec<Basket>,
}

impl BasketCorpus {
    pub fn new(vocab: Arc<Vocabulary>, baskets: Vec<Basket>) -> Result<Self> {
        let v = vocab.len() as u32;
        for b in &baskets {
            if let Some(&(w, _)) = b.counts().iter().find(|&&(w, _)| w >= v) {
                return Err(Error::invalid(format!(
                    "basket {:?} references product index {w} outside vocabulary of size {v}",
                    b.id
                )));
            }
        }
        Ok(BasketCorpus { vocab, baskets })
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    /// Vocabulary size V.
    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    /// Number of baskets D.
    pub fn len(&self) -> usize {
        self.baskets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.baskets.is_empty()
    }

    pub fn baskets(&self) -> &[Basket] {
        &self.baskets
    }

    /// Total token count over all baskets.
    pub fn token_total(&self) -> u64 {
        self.baskets.iter().map(|b| b.token_count() as u64).sum()
    }

    /// Empirical marginal token probability per product, count_w / total.
    pub fn product_frequencies(&self) -> Vec<f64> {
        let mut counts = vec![0u64; self.vocab.len()];
        for b in &self.baskets {
            for &(w, c) in b.counts() {
                counts[w as usize] += c as u64;
            }
        }
        let total = counts.iter().sum::<u64>() as f64;
        counts.iter().map(|&c| c as f64 / total).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        write_corpus(self, &mut w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut r = std::io::BufReader::new(file);
        read_corpus(&mut r)
    }
}

/// Parses transaction rows from a byte stream.
///
/// CSV needs the header `basket_id,date,customer_id,product_id,quantity`;
/// JSONL expects one object per line with the same keys. Empty `customer_id`
/// and `date` values are allowed and ingested as absent.
pub fn ingest_transactions<R: Read>(source: R, format: SourceFormat) -> Result<RawTransactions> {
    match format {
        SourceFormat::Csv => ingest_csv(source),
        SourceFormat::Jsonl => ingest_jsonl(source),
    }
}

const CSV_COLUMNS: [&str; 5] = ["basket_id", "date", "customer_id", "product_id", "quantity"];

fn ingest_csv<R: Read>(source: R) -> Result<RawTransactions> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let headers = reader
        .headers()
        .map_err(|e| Error::parse(1, format!("invalid CSV header: {e}")))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        // Empty input: no header, no records.
        return Ok(RawTransactions::default());
    }
    let mut col = [usize::MAX; 5];
    for (want, slot) in CSV_COLUMNS.iter().zip(col.iter_mut()) {
        match headers.iter().position(|h| h == *want) {
            Some(i) => *slot = i,
            None => return Err(Error::parse(1, format!("missing column {want:?} in CSV header"))),
        }
    }

    let mut records = Vec::new();
    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                return Err(Error::parse(line, format!("malformed CSV row: {e}")));
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| row.get(col[i]).unwrap_or("");
        records.push(validate_record(
            line,
            field(0),
            field(1),
            field(2),
            field(3),
            field(4),
        )?);
    }
    Ok(RawTransactions { records })
}

#[derive(Deserialize)]
struct JsonRecord {
    basket_id: String,
    #[serde(default)]
    date: Option<String>,
    #[serde(default)]
    customer_id: Option<String>,
    product_id: String,
    quantity: i64,
}

fn ingest_jsonl<R: Read>(source: R) -> Result<RawTransactions> {
    let reader = BufReader::new(source);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = (i + 1) as u64;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(line_no, format!("malformed JSON object: {e}")))?;
        if rec.quantity < 0 || rec.quantity > u32::MAX as i64 {
            return Err(Error::parse(line_no, format!("quantity {} out of range", rec.quantity)));
        }
        records.push(validate_record(
            line_no,
            &rec.basket_id,
            rec.date.as_deref().unwrap_or(""),
            rec.customer_id.as_deref().unwrap_or(""),
            &rec.product_id,
            &rec.quantity.to_string(),
        )?);
    }
    Ok(RawTransactions { records })
}

fn validate_record(
    line: u64,
    basket_id: &str,
    date: &str,
    customer_id: &str,
    product_id: &str,
    quantity: &str,
) -> Result<TransactionRecord> {
    if basket_id.is_empty() {
        return Err(Error::parse(line, "basket_id must be nonempty"));
    }
    if product_id.is_empty() {
        return Err(Error::parse(line, "product_id must be nonempty"));
    }
    let quantity: u64 = quantity
        .parse()
        .map_err(|_| Error::parse(line, format!("invalid quantity {quantity:?}")))?;
    if quantity < 1 {
        return Err(Error::parse(line, "quantity must be ≥ 1"));
    }
    let quantity = u32::try_from(quantity)
        .map_err(|_| Error::parse(line, format!("quantity {quantity} out of range")))?;
    let date = if date.is_empty() {
        None
    } else {
        Some(
            NaiveDate::parse_from_str(date, "%Y-%m-%d")
                .map_err(|_| Error::parse(line, format!("invalid date {date:?}, expected YYYY-MM-DD")))?,
        )
    };
    let customer_id = if customer_id.is_empty() {
        None
    } else {
        Some(customer_id.to_string())
    };
    Ok(TransactionRecord {
        basket_id: basket_id.to_string(),
        date,
        customer_id,
        product_id: product_id.to_string(),
        quantity,
    })
}

/// Builds the filtered sparse corpus.
///
/// Products whose total units fall at or below `min_annual_units` are removed
/// first; baskets whose surviving token count falls below `min_basket_size`
/// are removed second. Baskets that lose every item are always dropped, since
/// a corpus basket must have at least one token. Repeated (basket, product)
/// records accumulate. The vocabulary keeps first-appearance order of the
/// surviving products, and each basket's date and customer id come from its
/// first record.
pub fn build_corpus(raw: &RawTransactions, filter: &FilterConfig) -> Result<BasketCorpus> {
    if raw.records.is_empty() {
        return Err(Error::invalid("no transaction records to build a corpus from"));
    }

    let mut unit_totals: HashMap<&str, u64> = HashMap::new();
    for r in &raw.records {
        *unit_totals.entry(r.product_id.as_str()).or_insert(0) += r.quantity as u64;
    }

    let mut vocab_products: Vec<String> = Vec::new();
    let mut vocab_index: HashMap<&str, u32> = HashMap::new();
    for r in &raw.records {
        if unit_totals[r.product_id.as_str()] > filter.min_annual_units
            && !vocab_index.contains_key(r.product_id.as_str())
        {
            vocab_index.insert(r.product_id.as_str(), vocab_products.len() as u32);
            vocab_products.push(r.product_id.clone());
        }
    }

    // Group records by basket in first-appearance order.
    let mut basket_order: Vec<&str> = Vec::new();
    let mut grouped: HashMap<&str, Vec<&TransactionRecord>> = HashMap::new();
    for r in &raw.records {
        grouped
            .entry(r.basket_id.as_str())
            .or_insert_with(|| {
                basket_order.push(r.basket_id.as_str());
                Vec::new()
            })
            .push(r);
    }

    let mut baskets = Vec::new();
    for id in basket_order {
        let recs = &grouped[id];
        let mut counts: HashMap<u32, u32> = HashMap::new();
        for r in recs {
            if let Some(&w) = vocab_index.get(r.product_id.as_str()) {
                *counts.entry(w).or_insert(0) += r.quantity;
            }
        }
        let total: u32 = counts.values().sum();
        if total == 0 || total < filter.min_basket_size {
            continue;
        }
        let counts: Vec<(u32, u32)> = counts.into_iter().collect();
        baskets.push(Basket::new(
            id.to_string(),
            recs[0].date,
            recs[0].customer_id.clone(),
            counts,
        )?);
    }

    if baskets.is_empty() {
        return Err(Error::invalid("empty corpus after filtering"));
    }
    let vocab = Arc::new(Vocabulary::from_products(vocab_products)?);
    BasketCorpus::new(vocab, baskets)
}

/// Splits a corpus into disjoint train/held-out parts by basket.
///
/// The held-out side gets round(holdout_fraction * D) baskets, kept within
/// [1, D-1] so neither side is empty. Both sides share the vocabulary, and
/// the same seed always produces the same split.
pub fn split_corpus(
    corpus: &BasketCorpus,
    holdout_fraction: f64,
    seed: u64,
) -> Result<(BasketCorpus, BasketCorpus)> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "holdout fraction must be in (0, 1), got {holdout_fraction}"
        )));
    }
    let d = corpus.len();
    if d < 2 {
        return Err(Error::invalid(format!("need at least 2 baskets to split, got {d}")));
    }
    let n_test = ((holdout_fraction * d as f64).round() as usize).clamp(1, d - 1);

    let mut order: Vec<usize> = (0..d).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut test_idx: Vec<usize> = order[..n_test].to_vec();
    let mut train_idx: Vec<usize> = order[n_test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();

    let pick = |idx: &[usize]| -> Result<BasketCorpus> {
        BasketCorpus::new(
            Arc::clone(&corpus.vocab),
            idx.iter().map(|&i| corpus.baskets[i].clone()).collect(),
        )
    };
    Ok((pick(&train_idx)?, pick(&test_idx)?))
}

/// Writes a corpus in the `corpus-v1` binary layout.
pub fn write_corpus<W: Write>(corpus: &BasketCorpus, out: &mut W) -> Result<()> {
    let mut w = ByteWriter::new(out);
    w.magic(CORPUS_FORMAT_VERSION)?;
    w.u64(corpus.vocab.len() as u64)?;
    for p in corpus.vocab.products() {
        w.string(p)?;
    }
    w.u64(corpus.baskets.len() as u64)?;
    for b in &corpus.baskets {
        w.string(&b.id)?;
        match b.date {
            Some(d) => {
                w.u8(1)?;
                w.i32(d.num_days_from_ce())?;
            }
            None => w.u8(0)?,
        }
        match &b.customer_id {
            Some(c) => {
                w.u8(1)?;
                w.string(c)?;
            }
            None => w.u8(0)?,
        }
        w.u32(b.counts.len() as u32)?;
        for &(idx, cnt) in &b.counts {
            w.u32(idx)?;
            w.u32(cnt)?;
        }
    }
    Ok(())
}

/// Reads a `corpus-v1` file.
pub fn read_corpus<R: Read>(input: &mut R) -> Result<BasketCorpus> {
    let mut r = ByteReader::new(input, "corpus-v1");
    r.expect_magic(CORPUS_FORMAT_VERSION)?;
    let v = r.u64()? as usize;
    let mut products = Vec::with_capacity(v.min(1 << 20));
    for _ in 0..v {
        products.push(r.string()?);
    }
    let vocab = Arc::new(Vocabulary::from_products(products)?);
    let d = r.u64()? as usize;
    let mut baskets = Vec::with_capacity(d.min(1 << 20));
    for _ in 0..d {
        let id = r.string()?;
        let date = match r.u8()? {
            0 => None,
            1 => Some(
                NaiveDate::from_num_days_from_ce_opt(r.i32()?)
                    .ok_or_else(|| r.corrupt("date out of range"))?,
            ),
            other => return Err(r.corrupt(format!("bad date tag {other}"))),
        };
        let customer_id = match r.u8()? {
            0 => None,
            1 => Some(r.string()?),
            other => return Err(r.corrupt(format!("bad customer tag {other}"))),
        };
        let nnz = r.u32()? as usize;
        let mut counts = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            let idx = r.u32()?;
            let cnt = r.u32()?;
            counts.push((idx, cnt));
        }
        baskets.push(Basket::new(id, date, customer_id, counts)?);
    }
    BasketCorpus::new(vocab, baskets)
}
