//! End-to-end checks of the binary: exit codes, artifact files, resolved
//! config sidecars, determinism, and the full simulate -> train -> analyze
//! pipelines.

use std::fs;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_basket-topics");

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("BASKET_TOPICS_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn assert_ok(o: &Output) {
    assert_eq!(code(o), 0, "stdout:\n{}\nstderr:\n{}", stdout(o), stderr(o));
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

const TRANSACTIONS: &str = "\
basket_id,date,customer_id,product_id,quantity
b1,2014-01-05,c1,apple,2
b1,2014-01-05,c1,bread,1
b2,2014-02-10,c2,apple,1
b2,2014-02-10,c2,milk,3
b3,2014-03-15,c1,bread,2
b3,2014-03-15,c1,milk,1
b4,2014-04-01,c2,apple,1
b4,2014-04-01,c2,bread,1
";

fn write_transactions(dir: &TempDir) -> String {
    let path = p(dir, "tx.csv");
    fs::write(&path, TRANSACTIONS).unwrap();
    path
}

/// simulate + train with fast small-corpus settings; returns (corpus, model).
fn simulate_and_train(dir: &TempDir, k: usize, v: usize, d: usize, extra: &[&str]) -> (String, String) {
    let corpus = p(dir, "sim.bin");
    let mut args = vec![
        "simulate",
        "--k",
    ];
    let k_s = k.to_string();
    let v_s = v.to_string();
    let d_s = d.to_string();
    args.push(&k_s);
    args.extend(["--v", &v_s, "--d", &d_s, "--beta", "0.2", "--seed", "11", "--out", &corpus]);
    args.extend_from_slice(extra);
    assert_ok(&run_in(dir.path(), &args));

    let model = p(dir, "model.bin");
    assert_ok(&run_in(
        dir.path(),
        &[
            "train",
            "--corpus",
            &corpus,
            "--k",
            &k_s,
            "--beta",
            "0.2",
            "--max-epochs",
            "200",
            "--learning-offset",
            "4",
            "--seed",
            "5",
            "--out",
            &model,
        ],
    ));
    (corpus, model)
}

#[test]
fn help_lists_every_subcommand() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), &["--help"]);
    assert_ok(&out);
    let text = stdout(&out);
    for cmd in [
        "ingest", "simulate", "train", "eval", "topics", "rank", "seasonal", "predict", "survey",
    ] {
        assert!(text.contains(cmd), "--help missing {cmd}:\n{text}");
    }
    assert!(text.contains("BASKET_TOPICS_DATA_DIR"), "{text}");
}

#[test]
fn subcommand_help_lists_flags() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), &["train", "--help"]);
    assert_ok(&out);
    let text = stdout(&out);
    for flag in [
        "--corpus",
        "--k",
        "--alpha",
        "--beta",
        "--max-epochs",
        "--minibatch",
        "--learning-offset",
        "--decay",
        "--tol",
        "--seed",
        "--algorithm",
        "--burn-in",
        "--samples",
        "--out",
    ] {
        assert!(text.contains(flag), "train --help missing {flag}:\n{text}");
    }
}

#[test]
fn missing_subcommand_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), &[]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn unknown_flag_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = run_in(dir.path(), &["train", "--corpus", "x", "--k", "2", "--out", "y", "--bogus"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(stderr(&out).contains("--bogus"), "{}", stderr(&out));
}

#[test]
fn ingest_builds_corpus_and_writes_config() {
    let dir = TempDir::new().unwrap();
    let input = write_transactions(&dir);
    let out_path = p(&dir, "corpus.bin");
    let out = run_in(
        dir.path(),
        &[
            "ingest", "--input", &input, "--min-units", "0", "--min-basket", "1", "--out",
            &out_path,
        ],
    );
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("4 baskets"), "{text}");
    assert!(text.contains("3 products"), "{text}");
    assert!(Path::new(&out_path).exists());

    let config_path = p(&dir, "corpus.bin.config.json");
    let config: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&config_path).unwrap()).unwrap();
    assert_eq!(config["command"], "ingest");
    assert_eq!(config["params"]["filter"]["min_basket_size"], 1);
}

#[test]
fn ingest_missing_input_names_the_path() {
    let dir = TempDir::new().unwrap();
    let out = run_in(
        dir.path(),
        &["ingest", "--input", "no-such-file.csv", "--out", "c.bin"],
    );
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("no-such-file.csv"), "{}", stderr(&out));
}

#[test]
fn ingest_split_is_deterministic() {
    let dir_a = TempDir::new().unwrap();
    let dir_b = TempDir::new().unwrap();
    for dir in [&dir_a, &dir_b] {
        let input = write_transactions(dir);
        let out_path = p(dir, "corpus.bin");
        assert_ok(&run_in(
            dir.path(),
            &[
                "ingest",
                "--input",
                &input,
                "--min-units",
                "0",
                "--min-basket",
                "1",
                "--holdout",
                "0.3",
                "--seed",
                "7",
                "--out",
                &out_path,
            ],
        ));
    }
    for name in ["corpus.train.bin", "corpus.test.bin"] {
        let a = fs::read(dir_a.path().join(name)).unwrap();
        let b = fs::read(dir_b.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let dir = TempDir::new().unwrap();
    for tag in ["a", "b"] {
        let out_path = p(&dir, &format!("{tag}.bin"));
        assert_ok(&run_in(
            dir.path(),
            &[
                "simulate", "--k", "3", "--v", "25", "--d", "80", "--seed", "42", "--out",
                &out_path,
            ],
        ));
    }
    assert_eq!(
        fs::read(dir.path().join("a.bin")).unwrap(),
        fs::read(dir.path().join("b.bin")).unwrap()
    );
    assert_eq!(
        fs::read(dir.path().join("a.truth.bin")).unwrap(),
        fs::read(dir.path().join("b.truth.bin")).unwrap()
    );

    let other = p(&dir, "c.bin");
    assert_ok(&run_in(
        dir.path(),
        &["simulate", "--k", "3", "--v", "25", "--d", "80", "--seed", "43", "--out", &other],
    ));
    assert_ne!(
        fs::read(dir.path().join("a.bin")).unwrap(),
        fs::read(dir.path().join("c.bin")).unwrap()
    );
}

#[test]
fn train_topics_rank_pipeline() {
    let dir = TempDir::new().unwrap();
    let (corpus, model) = simulate_and_train(&dir, 3, 30, 150, &[]);

    let config: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p(&dir, "model.bin.config.json")).unwrap())
            .unwrap();
    assert_eq!(config["command"], "train");
    assert_eq!(config["params"]["train"]["num_topics"], 3);
    assert_eq!(config["params"]["train"]["seed"], 5);

    let table = p(&dir, "topics.csv");
    let out = run_in(
        dir.path(),
        &["topics", "--model", &model, "--corpus", &corpus, "--out", &table],
    );
    assert_ok(&out);
    assert!(stdout(&out).contains("topic 0"), "{}", stdout(&out));
    let csv = fs::read_to_string(&table).unwrap();
    assert!(
        csv.starts_with("topic,rank,product_id,p_wk,p_w,lift,relevance"),
        "{csv}"
    );

    let out = run_in(
        dir.path(),
        &["rank", "--model", &model, "--corpus", &corpus, "--topic", "1", "--top", "5"],
    );
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("relevance"), "{text}");
    // Header plus five ranked rows.
    assert_eq!(text.lines().count(), 6, "{text}");
}

#[test]
fn piped_output_truncated_by_reader_exits_quietly() {
    let dir = TempDir::new().unwrap();
    let (corpus, model) = simulate_and_train(&dir, 3, 30, 150, &[]);

    // Close the read end before the table prints, like `rank ... | head -1`
    // after head exits. The process must either finish clean or die on
    // SIGPIPE; a panic surfacing as an internal error is a bug.
    let mut child = Command::new(BIN)
        .args(["rank", "--model", &model, "--corpus", &corpus, "--topic", "0", "--top", "30"])
        .current_dir(dir.path())
        .env_remove("BASKET_TOPICS_DATA_DIR")
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary spawns");
    drop(child.stdout.take());
    let out = child.wait_with_output().unwrap();

    let err = String::from_utf8_lossy(&out.stderr);
    assert!(!err.contains("panicked"), "{err}");
    assert!(!err.contains("internal error"), "{err}");
    #[cfg(unix)]
    {
        use std::os::unix::process::ExitStatusExt;
        // 13 is SIGPIPE; exit 0 covers the race where the table fit the
        // pipe buffer before the read end closed.
        assert!(
            out.status.code() == Some(0) || out.status.signal() == Some(13),
            "{:?}",
            out.status
        );
    }
}

#[test]
fn eval_flags_exactly_one_selected_row() {
    let dir = TempDir::new().unwrap();
    let corpus = p(&dir, "sim.bin");
    assert_ok(&run_in(
        dir.path(),
        &[
            "simulate", "--k", "2", "--v", "20", "--d", "120", "--beta", "0.2", "--seed", "3",
            "--out", &corpus,
        ],
    ));
    let sweep = p(&dir, "sweep.csv");
    let out = run_in(
        dir.path(),
        &[
            "eval",
            "--corpus",
            &corpus,
            "--k",
            "2,4",
            "--holdout",
            "0.25",
            "--beta",
            "0.2",
            "--max-epochs",
            "60",
            "--learning-offset",
            "4",
            "--seed",
            "9",
            "--out",
            &sweep,
        ],
    );
    assert_ok(&out);
    assert!(stdout(&out).contains("selected K="), "{}", stdout(&out));

    let csv = fs::read_to_string(&sweep).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "K,train_log_perplexity,test_log_perplexity,selected");
    assert_eq!(lines.len(), 3, "{csv}");
    let flagged = lines[1..].iter().filter(|l| l.ends_with(",*")).count();
    assert_eq!(flagged, 1, "{csv}");
}

#[test]
fn model_and_corpus_files_are_not_interchangeable() {
    let dir = TempDir::new().unwrap();
    let corpus = p(&dir, "sim.bin");
    assert_ok(&run_in(
        dir.path(),
        &["simulate", "--k", "2", "--v", "20", "--d", "40", "--seed", "1", "--out", &corpus],
    ));
    let out = run_in(
        dir.path(),
        &["topics", "--model", &corpus, "--corpus", &corpus, "--out", "t.csv"],
    );
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains("model-v1"), "{err}");
    assert!(err.contains("corpus-v1"), "{err}");
}

#[test]
fn seasonal_pipeline_emits_prevalence_csv() {
    let dir = TempDir::new().unwrap();
    let (corpus, model) = simulate_and_train(
        &dir,
        3,
        30,
        200,
        &["--seasonal-topic", "0", "--seasonal-months", "11,12", "--seasonal-boost", "3.0"],
    );
    let out_path = p(&dir, "prevalence.csv");
    let out = run_in(
        dir.path(),
        &[
            "seasonal", "--model", &model, "--corpus", &corpus, "--period", "month", "--out",
            &out_path,
        ],
    );
    assert_ok(&out);
    assert!(stdout(&out).contains("peak month"), "{}", stdout(&out));
    let csv = fs::read_to_string(&out_path).unwrap();
    assert!(csv.starts_with("topic,period,proportion,index"), "{csv}");
}

#[test]
fn predict_pipeline_reports_cross_validation() {
    let dir = TempDir::new().unwrap();
    let (corpus, model) = simulate_and_train(
        &dir,
        3,
        30,
        240,
        &["--groups", "2", "--baskets-per-customer", "4", "--attribute", "gender"],
    );
    let demographics = p(&dir, "sim.demographics.csv");
    assert!(Path::new(&demographics).exists(), "simulate should write the sidecar");

    let report = p(&dir, "cv.json");
    let predictions = p(&dir, "pred.csv");
    let out = run_in(
        dir.path(),
        &[
            "predict",
            "--model",
            &model,
            "--corpus",
            &corpus,
            "--demographics",
            &demographics,
            "--task",
            "gender",
            "--grid",
            "0.3,1.0",
            "--folds",
            "3",
            "--out",
            &report,
            "--predictions-out",
            &predictions,
        ],
    );
    assert_ok(&out);
    assert!(stdout(&out).contains("mean accuracy"), "{}", stdout(&out));

    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(doc["task"], "gender");
    assert_eq!(doc["folds"].as_array().unwrap().len(), 3);

    let pred_csv = fs::read_to_string(&predictions).unwrap();
    assert!(pred_csv.starts_with("customer_id,predicted,p_f,p_m"), "{pred_csv}");
    assert_eq!(pred_csv.lines().count(), 61, "60 customers plus header");
}

#[test]
fn survey_gen_and_score_round_trip() {
    let dir = TempDir::new().unwrap();
    let (corpus, model) = simulate_and_train(&dir, 4, 48, 260, &[]);
    let labels = p(&dir, "labels.txt");
    fs::write(&labels, "produce\ndairy\nbakery\nsnacks\n").unwrap();

    let tasks_path = p(&dir, "tasks.json");
    let out = run_in(
        dir.path(),
        &[
            "survey",
            "gen",
            "--model",
            &model,
            "--corpus",
            &corpus,
            "--kind",
            "both",
            "--per-topic",
            "2",
            "--labels",
            &labels,
            "--seed",
            "21",
            "--out",
            &tasks_path,
        ],
    );
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("wrote 16 tasks"), "{text}");
    assert!(text.contains("25.00%"), "{text}");
    assert!(text.contains("16.67%"), "{text}");

    // One correct and one wrong respondent per task.
    let tasks: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&tasks_path).unwrap()).unwrap();
    let mut responses = String::from("task_id,respondent_id,chosen_index\n");
    for task in tasks.as_array().unwrap() {
        let id = task["id"].as_str().unwrap();
        let answer = task["answer"].as_u64().unwrap() as usize;
        let choices = if task["type"] == "label" {
            task["options"].as_array().unwrap().len()
        } else {
            task["product_ids"].as_array().unwrap().len()
        };
        responses.push_str(&format!("{id},r1,{answer}\n"));
        responses.push_str(&format!("{id},r2,{}\n", (answer + 1) % choices));
    }
    let responses_path = p(&dir, "responses.csv");
    fs::write(&responses_path, responses).unwrap();

    let sheet_path = p(&dir, "sheet.json");
    let out = run_in(
        dir.path(),
        &[
            "survey",
            "score",
            "--tasks",
            &tasks_path,
            "--responses",
            &responses_path,
            "--out",
            &sheet_path,
        ],
    );
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("25.00%"), "{text}");
    assert!(text.contains("16.67%"), "{text}");

    let sheet: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&sheet_path).unwrap()).unwrap();
    let topics = sheet["topics"].as_array().unwrap();
    // 4 topics x 2 instruments, each half right.
    assert_eq!(topics.len(), 8);
    for t in topics {
        assert_eq!(t["n"], 4);
        assert_eq!(t["correct"], 2);
        assert_eq!(t["proportion"], 0.5);
    }
}

#[test]
fn data_dir_env_resolves_relative_paths() {
    let data_dir = TempDir::new().unwrap();
    let work_dir = TempDir::new().unwrap();
    let out = Command::new(BIN)
        .args(["simulate", "--k", "2", "--v", "20", "--d", "40", "--seed", "2", "--out", "sim.bin"])
        .current_dir(work_dir.path())
        .env("BASKET_TOPICS_DATA_DIR", data_dir.path())
        .output()
        .expect("binary runs");
    assert_ok(&out);
    assert!(data_dir.path().join("sim.bin").exists());
    assert!(data_dir.path().join("sim.truth.bin").exists());
    assert!(data_dir.path().join("sim.bin.config.json").exists());
    assert!(!work_dir.path().join("sim.bin").exists());
}
