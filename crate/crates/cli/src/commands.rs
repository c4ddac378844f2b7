//! Subcommand implementations. Every run resolves its parameters up front,
//! writes its primary artifact, and drops a `<artifact>.config.json` with
//! the resolved configuration beside it.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::json;

use basket_topics::analysis::{
    customer_features, fit_demographic_model, label_baskets, predict_demographics,
    prevalence_index, read_demographics, write_cv_report, write_demographics, DemographicRecord,
    DemographicTask, PeriodKind, AGE_BANDS, GENDERS, REGIONS,
};
use basket_topics::corpus::{
    build_corpus, ingest_transactions, split_corpus, BasketCorpus, FilterConfig, SourceFormat,
    Vocabulary,
};
use basket_topics::error::{Error, Result};
use basket_topics::generator::{
    inject_covariates, sample_corpus, sample_topics, BasketSizeSampler, CovariateOptions,
    GroupOptions, GroupSpec, SeasonalOptions,
};
use basket_topics::inference::{train_gibbs, train_online_vb, TopicModel, TrainConfig};
use basket_topics::metrics::{log_perplexity, rank_products, relevance_table, topic_sizes};
use basket_topics::survey::{
    chance_percent, gen_intruder_task, gen_label_task, read_responses, read_tasks,
    score_responses, write_sheet, write_tasks, SurveyTask, INTRUDER_CHANCE, LABEL_CHANCE,
};

use crate::args::{
    Cli, Command, EvalArgs, IngestArgs, PredictArgs, RankArgs, SeasonalArgs, SimulateArgs,
    SurveyAction, SurveyGenArgs, SurveyScoreArgs, TopicsArgs, TrainArgs, TrainOpts,
};

/// Default directory for relative input/output paths.
pub const DATA_DIR_ENV: &str = "BASKET_TOPICS_DATA_DIR";

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Topics(a) => cmd_topics(a),
        Command::Rank(a) => cmd_rank(a),
        Command::Seasonal(a) => cmd_seasonal(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Survey(a) => match a.action {
            SurveyAction::Gen(g) => cmd_survey_gen(g),
            SurveyAction::Score(s) => cmd_survey_score(s),
        },
    }
}

fn resolve(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir).join(path),
        _ => path.to_path_buf(),
    }
}

fn open_input(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))
}

fn create_output(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::InvalidInput(format!("cannot create {}: {e}", path.display())))
}

/// Reattaches the file name to bare IO errors from the core readers.
fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Io(io) => Error::InvalidInput(format!("cannot access {}: {io}", path.display())),
        other => other,
    }
}

/// corpus.bin tagged "truth" becomes corpus.truth.bin; `ext` swaps the
/// extension instead of keeping it.
fn tagged_path(base: &Path, tag: &str, ext: Option<&str>) -> PathBuf {
    let stem = base
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let extension = match ext {
        Some(e) => Some(e.to_string()),
        None => base.extension().map(|e| e.to_string_lossy().into_owned()),
    };
    let name = match extension {
        Some(e) => format!("{stem}.{tag}.{e}"),
        None => format!("{stem}.{tag}"),
    };
    base.with_file_name(name)
}

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

fn write_run_config(primary_out: &Path, command: &str, params: serde_json::Value) -> Result<()> {
    let name = format!(
        "{}.config.json",
        primary_out
            .file_name()
            .map(|s| s.to_string_lossy())
            .unwrap_or_default()
    );
    let path = primary_out.with_file_name(name);
    let doc = json!({ "command": command, "params": params });
    let mut out = create_output(&path)?;
    serde_json::to_writer_pretty(&mut out, &doc)
        .map_err(|e| Error::InvalidInput(format!("JSON write failed: {e}")))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("CSV write failed: {e}"))
}

fn load_corpus(path: &Path) -> Result<BasketCorpus> {
    BasketCorpus::load(path).map_err(|e| with_path(e, path))
}

fn load_model(path: &Path, vocab: Arc<Vocabulary>) -> Result<TopicModel> {
    TopicModel::load(path, vocab).map_err(|e| with_path(e, path))
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let input = resolve(&args.input);
    let out = resolve(&args.out);
    let format_name = match &args.format {
        Some(f) => f.clone(),
        None => match input.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => "jsonl".to_string(),
            _ => "csv".to_string(),
        },
    };
    let format: SourceFormat = format_name.parse()?;
    let raw = ingest_transactions(open_input(&input)?, format)?;
    let filter = FilterConfig {
        min_annual_units: args.min_units,
        min_basket_size: args.min_basket,
    };
    let corpus = build_corpus(&raw, &filter)?;
    corpus.save(&out).map_err(|e| with_path(e, &out))?;
    println!(
        "corpus: {} baskets, {} products, {} tokens",
        corpus.len(),
        corpus.vocab_len(),
        corpus.token_total()
    );
    println!("wrote {}", out.display());

    let mut splits = serde_json::Value::Null;
    if let Some(fraction) = args.holdout {
        let (train, test) = split_corpus(&corpus, fraction, args.seed)?;
        let train_path = tagged_path(&out, "train", None);
        let test_path = tagged_path(&out, "test", None);
        train.save(&train_path).map_err(|e| with_path(e, &train_path))?;
        test.save(&test_path).map_err(|e| with_path(e, &test_path))?;
        println!("train split: {} baskets -> {}", train.len(), train_path.display());
        println!("held-out split: {} baskets -> {}", test.len(), test_path.display());
        splits = json!({ "train": path_str(&train_path), "test": path_str(&test_path) });
    }
    write_run_config(
        &out,
        "ingest",
        json!({
            "input": path_str(&input),
            "format": format_name,
            "filter": filter,
            "holdout": args.holdout,
            "seed": args.seed,
            "out": path_str(&out),
            "splits": splits,
        }),
    )
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let out = resolve(&args.out);
    let truth_out = match &args.truth_out {
        Some(p) => resolve(p),
        None => tagged_path(&out, "truth", None),
    };
    let sampler = match args.basket_size {
        Some(n) => BasketSizeSampler::Fixed(n),
        None => BasketSizeSampler::ShiftedPoisson { mean: args.mean_basket },
    };
    let phi = sample_topics(args.k, args.v, args.beta, args.seed)?;
    let (corpus, mut truth) =
        sample_corpus(&phi, args.d, args.alpha, args.beta, &sampler, args.seed)?;

    let mut options = CovariateOptions::default();
    if let Some(topic) = args.seasonal_topic {
        if args.seasonal_months.is_empty() {
            return Err(Error::InvalidInput(
                "--seasonal-topic needs at least one --seasonal-months value".into(),
            ));
        }
        let mut profile = vec![1.0; 12];
        for &m in &args.seasonal_months {
            if !(1..=12).contains(&m) {
                return Err(Error::InvalidInput(format!("month {m} out of range 1-12")));
            }
            profile[(m - 1) as usize] = args.seasonal_boost;
        }
        let mut profiles = BTreeMap::new();
        profiles.insert(topic, profile);
        options.seasonal = Some(SeasonalOptions { year: args.year, profiles });
    }
    if let Some(n) = args.groups {
        let domain: &[&str] = match args.attribute.as_str() {
            "age" => &AGE_BANDS,
            "region" => &REGIONS,
            _ => &GENDERS,
        };
        if n < 2 || n > domain.len() {
            return Err(Error::InvalidInput(format!(
                "--groups must lie in 2..={} for attribute {}, got {n}",
                domain.len(),
                args.attribute
            )));
        }
        // Group i is labeled with the attribute's i-th class and prefers
        // topic i mod K in its Dirichlet prior.
        let groups: Vec<GroupSpec> = (0..n)
            .map(|i| {
                let mut alpha = vec![args.alpha; args.k];
                alpha[i % args.k] *= args.group_boost;
                GroupSpec { label: domain[i].to_string(), alpha }
            })
            .collect();
        options.groups = Some(GroupOptions {
            groups,
            baskets_per_customer: args.baskets_per_customer,
        });
    }

    let (corpus, sidecar) = if options.seasonal.is_some() || options.groups.is_some() {
        inject_covariates(&corpus, &mut truth, &options, args.seed.wrapping_add(1))?
    } else {
        (corpus, Vec::new())
    };

    corpus.save(&out).map_err(|e| with_path(e, &out))?;
    truth.save(&truth_out).map_err(|e| with_path(e, &truth_out))?;
    println!(
        "simulated corpus: {} baskets, {} products, K={}",
        corpus.len(),
        corpus.vocab_len(),
        args.k
    );
    println!("wrote {}", out.display());
    println!("truth -> {}", truth_out.display());

    let mut demographics = serde_json::Value::Null;
    if args.groups.is_some() {
        let path = match &args.demographics_out {
            Some(p) => resolve(p),
            None => tagged_path(&out, "demographics", Some("csv")),
        };
        let records: Vec<DemographicRecord> = sidecar
            .iter()
            .map(|a| DemographicRecord {
                customer_id: a.customer_id.clone(),
                age_band: (args.attribute == "age").then(|| a.group_label.clone()),
                region: (args.attribute == "region").then(|| a.group_label.clone()),
                gender: (args.attribute == "gender").then(|| a.group_label.clone()),
            })
            .collect();
        write_demographics(&records, create_output(&path)?)?;
        println!("demographics: {} customers -> {}", records.len(), path.display());
        demographics = json!({ "attribute": args.attribute, "path": path_str(&path) });
    }

    write_run_config(
        &out,
        "simulate",
        json!({
            "k": args.k,
            "v": args.v,
            "d": args.d,
            "alpha": args.alpha,
            "beta": args.beta,
            "mean_basket": args.mean_basket,
            "basket_size": args.basket_size,
            "seed": args.seed,
            "seasonal_topic": args.seasonal_topic,
            "seasonal_months": args.seasonal_months,
            "seasonal_boost": args.seasonal_boost,
            "year": args.year,
            "groups": args.groups,
            "group_boost": args.group_boost,
            "baskets_per_customer": args.baskets_per_customer,
            "demographics": demographics,
            "out": path_str(&out),
            "truth_out": path_str(&truth_out),
        }),
    )
}

/// Library defaults for K, overridden by whichever flags were set.
fn build_config(k: usize, opts: &TrainOpts) -> Result<TrainConfig> {
    let mut config = TrainConfig::new(k);
    if let Some(v) = opts.alpha {
        config.alpha = v;
    }
    if let Some(v) = opts.beta {
        config.beta = v;
    }
    if let Some(v) = opts.max_epochs {
        config.max_epochs = v;
    }
    if let Some(v) = opts.minibatch {
        config.minibatch_size = v;
    }
    if let Some(v) = opts.learning_offset {
        config.learning_offset = v;
    }
    if let Some(v) = opts.decay {
        config.decay = v;
    }
    if let Some(v) = opts.tol {
        config.convergence_tol = v;
    }
    config.seed = opts.seed;
    config.validate()?;
    Ok(config)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let corpus_path = resolve(&args.corpus);
    let out = resolve(&args.out);
    let corpus = load_corpus(&corpus_path)?;
    let config = build_config(args.k, &args.opts)?;
    let model = match args.algorithm.as_str() {
        "gibbs" => train_gibbs(&corpus, &config, args.burn_in, args.samples)?,
        _ => train_online_vb(&corpus, &config)?,
    };
    model.save(&out).map_err(|e| with_path(e, &out))?;
    match model.trace.last() {
        Some(lp) => println!(
            "trained K={} ({}) in {} epochs; final train log-perplexity {lp:.6}",
            args.k,
            args.algorithm,
            model.trace.len()
        ),
        None => println!("trained K={} ({})", args.k, args.algorithm),
    }
    println!("wrote {}", out.display());
    write_run_config(
        &out,
        "train",
        json!({
            "corpus": path_str(&corpus_path),
            "algorithm": args.algorithm,
            "train": config,
            "burn_in": args.burn_in,
            "samples": args.samples,
            "out": path_str(&out),
        }),
    )
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let corpus_path = resolve(&args.corpus);
    let out = resolve(&args.out);
    let corpus = load_corpus(&corpus_path)?;
    let (train, test) = split_corpus(&corpus, args.holdout, args.opts.seed)?;

    struct Row {
        k: usize,
        train_lp: f64,
        test_lp: f64,
    }
    let mut rows: Vec<Row> = Vec::new();
    let mut configs: Vec<TrainConfig> = Vec::new();
    for &k in &args.k {
        let config = build_config(k, &args.opts)?;
        let model = train_online_vb(&train, &config)?;
        rows.push(Row {
            k,
            train_lp: log_perplexity(&model, &train)?,
            test_lp: log_perplexity(&model, &test)?,
        });
        configs.push(config);
    }
    let mut best = 0;
    for (i, r) in rows.iter().enumerate().skip(1) {
        if r.test_lp < rows[best].test_lp {
            best = i;
        }
    }

    let mut w = csv::Writer::from_writer(create_output(&out)?);
    w.write_record(["K", "train_log_perplexity", "test_log_perplexity", "selected"])
        .map_err(csv_err)?;
    for (i, r) in rows.iter().enumerate() {
        w.write_record([
            r.k.to_string(),
            r.train_lp.to_string(),
            r.test_lp.to_string(),
            if i == best { "*".to_string() } else { String::new() },
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    println!(
        "{:>6} {:>22} {:>22} {:>9}",
        "K", "train_log_perplexity", "test_log_perplexity", "selected"
    );
    for (i, r) in rows.iter().enumerate() {
        println!(
            "{:>6} {:>22.6} {:>22.6} {:>9}",
            r.k,
            r.train_lp,
            r.test_lp,
            if i == best { "*" } else { "" }
        );
    }
    println!(
        "selected K={} by minimum held-out log-perplexity",
        rows[best].k
    );
    println!("wrote {}", out.display());
    write_run_config(
        &out,
        "eval",
        json!({
            "corpus": path_str(&corpus_path),
            "k": args.k,
            "holdout": args.holdout,
            "train": configs,
            "out": path_str(&out),
        }),
    )
}

fn cmd_topics(args: TopicsArgs) -> Result<()> {
    let corpus_path = resolve(&args.corpus);
    let model_path = resolve(&args.model);
    let out = resolve(&args.out);
    let corpus = load_corpus(&corpus_path)?;
    let model = load_model(&model_path, Arc::clone(corpus.vocab()))?;
    let table = relevance_table(&model, &corpus, args.lambda, args.top)?;
    table.write_csv(create_output(&out)?)?;
    let sizes = topic_sizes(&model);
    for (k, products) in &table.topics {
        let names: Vec<&str> = products.iter().map(|p| p.product_id.as_str()).collect();
        println!("topic {k} (size {:.4}): {}", sizes[*k], names.join(", "));
    }
    println!("wrote {}", out.display());
    write_run_config(
        &out,
        "topics",
        json!({
            "model": path_str(&model_path),
            "corpus": path_str(&corpus_path),
            "lambda": args.lambda,
            "top": args.top,
            "out": path_str(&out),
        }),
    )
}

fn cmd_rank(args: RankArgs) -> Result<()> {
    let corpus_path = resolve(&args.corpus);
    let model_path = resolve(&args.model);
    let corpus = load_corpus(&corpus_path)?;
    let model = load_model(&model_path, Arc::clone(corpus.vocab()))?;
    let ranked = rank_products(&model, &corpus, args.topic, args.lambda, args.top)?;

    println!(
        "{:>5} {:<24} {:>12} {:>12} {:>10} {:>10}",
        "rank", "product_id", "p_wk", "p_w", "lift", "relevance"
    );
    for p in &ranked {
        println!(
            "{:>5} {:<24} {:>12.6} {:>12.6} {:>10.4} {:>10.4}",
            p.rank, p.product_id, p.p_wk, p.p_w, p.lift, p.relevance
        );
    }

    if let Some(out) = &args.out {
        let out = resolve(out);
        let mut w = csv::Writer::from_writer(create_output(&out)?);
        w.write_record(["rank", "product_id", "p_wk", "p_w", "lift", "relevance"])
            .map_err(csv_err)?;
        for p in &ranked {
            w.write_record([
                p.rank.to_string(),
                p.product_id.clone(),
                p.p_wk.to_string(),
                p.p_w.to_string(),
                p.lift.to_string(),
                p.relevance.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        println!("wrote {}", out.display());
        write_run_config(
            &out,
            "rank",
            json!({
                "model": path_str(&model_path),
                "corpus": path_str(&corpus_path),
                "topic": args.topic,
                "lambda": args.lambda,
                "top": args.top,
                "out": path_str(&out),
            }),
        )?;
    }
    Ok(())
}

fn cmd_seasonal(args: SeasonalArgs) -> Result<()> {
    let corpus_path = resolve(&args.corpus);
    let model_path = resolve(&args.model);
    let out = resolve(&args.out);
    let corpus = load_corpus(&corpus_path)?;
    let model = load_model(&model_path, Arc::clone(corpus.vocab()))?;
    let kind: PeriodKind = args.period.parse()?;
    let labeling = label_baskets(&model, &corpus)?;
    let prevalence = prevalence_index(&labeling, kind)?;
    prevalence.write_csv(create_output(&out)?)?;

    // Peak period per topic, as a quick scan of the full CSV.
    for k in 0..prevalence.num_topics {
        let peak = prevalence
            .periods
            .iter()
            .max_by(|a, b| a.indices[k].total_cmp(&b.indices[k]));
        if let Some(p) = peak {
            println!("topic {k}: peak {} {} (index {:.3})", kind, p.period, p.indices[k]);
        }
    }
    println!("wrote {}", out.display());
    write_run_config(
        &out,
        "seasonal",
        json!({
            "model": path_str(&model_path),
            "corpus": path_str(&corpus_path),
            "period": args.period,
            "out": path_str(&out),
        }),
    )
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let corpus_path = resolve(&args.corpus);
    let model_path = resolve(&args.model);
    let demo_path = resolve(&args.demographics);
    let out = resolve(&args.out);
    let corpus = load_corpus(&corpus_path)?;
    let model = load_model(&model_path, Arc::clone(corpus.vocab()))?;
    let features = customer_features(&model, &corpus)?;
    let records = read_demographics(open_input(&demo_path)?)?;
    let task: DemographicTask = args.task.parse()?;
    let fitted = fit_demographic_model(&features, &records, task, &args.grid, args.folds, args.seed)?;
    write_cv_report(&fitted.report, create_output(&out)?)?;

    println!(
        "task {task}: chose lambda {} by mean fold {}",
        fitted.lambda_reg, fitted.report.selection_metric
    );
    println!(
        "mean accuracy {:.4} (majority baseline {:.4})",
        fitted.report.mean_accuracy, fitted.report.mean_baseline
    );
    if let Some(auc) = fitted.report.mean_auc {
        println!("mean AUC {:.4}", auc);
    }

    let mut predictions = serde_json::Value::Null;
    if let Some(pred_out) = &args.predictions_out {
        let pred_out = resolve(pred_out);
        let preds = predict_demographics(&fitted, &features)?;
        let mut w = csv::Writer::from_writer(create_output(&pred_out)?);
        let mut header = vec!["customer_id".to_string(), "predicted".to_string()];
        header.extend(fitted.classes.iter().map(|c| format!("p_{c}")));
        w.write_record(&header).map_err(csv_err)?;
        for p in &preds {
            let mut rec = vec![p.customer_id.clone(), p.predicted.clone()];
            rec.extend(p.probabilities.iter().map(|x| x.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        println!("predictions: {} customers -> {}", preds.len(), pred_out.display());
        predictions = json!(path_str(&pred_out));
    }

    println!("wrote {}", out.display());
    write_run_config(
        &out,
        "predict",
        json!({
            "model": path_str(&model_path),
            "corpus": path_str(&corpus_path),
            "demographics": path_str(&demo_path),
            "task": args.task,
            "grid": args.grid,
            "folds": args.folds,
            "seed": args.seed,
            "out": path_str(&out),
            "predictions_out": predictions,
        }),
    )
}

fn cmd_survey_gen(args: SurveyGenArgs) -> Result<()> {
    let corpus_path = resolve(&args.corpus);
    let model_path = resolve(&args.model);
    let out = resolve(&args.out);
    if args.per_topic < 1 {
        return Err(Error::InvalidInput("--per-topic must be at least 1".into()));
    }
    let corpus = load_corpus(&corpus_path)?;
    let model = load_model(&model_path, Arc::clone(corpus.vocab()))?;
    let want_label = args.kind == "label" || args.kind == "both";
    let want_intruder = args.kind == "intruder" || args.kind == "both";

    let labels: Option<Vec<String>> = match &args.labels {
        Some(p) => {
            let path = resolve(p);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))?;
            let mut names: Vec<String> = text.lines().map(|l| l.trim().to_string()).collect();
            while names.last().is_some_and(|l| l.is_empty()) {
                names.pop();
            }
            Some(names)
        }
        None => None,
    };
    if want_label && labels.is_none() {
        return Err(Error::InvalidInput(
            "label tasks need --labels with one topic label per line".into(),
        ));
    }

    let k = model.num_topics();
    let mut tasks: Vec<SurveyTask> = Vec::new();
    let (mut n_label, mut n_intruder) = (0usize, 0usize);
    if want_label {
        let names = labels.as_ref().expect("checked above");
        for t in 0..k {
            for j in 0..args.per_topic {
                let seed = args.seed + (t * args.per_topic + j) as u64;
                tasks.push(SurveyTask::Label(gen_label_task(&model, &corpus, names, t, seed)?));
                n_label += 1;
            }
        }
    }
    if want_intruder {
        for t in 0..k {
            for j in 0..args.per_topic {
                let seed = args.seed + (t * args.per_topic + j) as u64;
                tasks.push(SurveyTask::Intruder(gen_intruder_task(&model, &corpus, t, seed)?));
                n_intruder += 1;
            }
        }
    }
    write_tasks(&tasks, create_output(&out)?)?;
    println!("wrote {} tasks -> {}", tasks.len(), out.display());
    if n_label > 0 {
        println!("label tasks: {n_label} (chance {})", chance_percent(LABEL_CHANCE));
    }
    if n_intruder > 0 {
        println!("intruder tasks: {n_intruder} (chance {})", chance_percent(INTRUDER_CHANCE));
    }
    write_run_config(
        &out,
        "survey-gen",
        json!({
            "model": path_str(&model_path),
            "corpus": path_str(&corpus_path),
            "kind": args.kind,
            "per_topic": args.per_topic,
            "labels": labels,
            "seed": args.seed,
            "out": path_str(&out),
        }),
    )
}

fn cmd_survey_score(args: SurveyScoreArgs) -> Result<()> {
    let tasks_path = resolve(&args.tasks);
    let responses_path = resolve(&args.responses);
    let out = resolve(&args.out);
    let tasks = read_tasks(open_input(&tasks_path)?)?;
    let responses = read_responses(open_input(&responses_path)?)?;
    let sheet = score_responses(&tasks, &responses)?;
    write_sheet(&sheet, create_output(&out)?)?;

    println!(
        "{:>9} {:>6} {:>6} {:>8} {:>11} {:>8} {:>12}",
        "kind", "topic", "n", "correct", "proportion", "chance", "p_value"
    );
    for s in &sheet.topics {
        println!(
            "{:>9} {:>6} {:>6} {:>8} {:>11.4} {:>8} {:>12.4e}",
            s.kind.to_string(),
            s.topic,
            s.n,
            s.correct,
            s.proportion,
            chance_percent(s.chance),
            s.p_value
        );
    }
    println!("wrote {}", out.display());
    write_run_config(
        &out,
        "survey-score",
        json!({
            "tasks": path_str(&tasks_path),
            "responses": path_str(&responses_path),
            "out": path_str(&out),
        }),
    )
}
