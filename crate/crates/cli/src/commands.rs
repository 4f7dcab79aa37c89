use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use xnlu_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use xnlu_core::config::RunConfig;
use xnlu_core::corpus::{load_task_dataset, Example, LabelMaps, LabelSet, Splits, Vocab};
use xnlu_core::entropy::{entropy_report as build_entropy_report, EntropyTask};
use xnlu_core::explain::{explain as explain_utterance, render, ExplainFormat};
use xnlu_core::metrics::{evaluate, EvalReport};
use xnlu_core::model::{baseline_model, build_model, Model, ModelVariant, TaskKind};
use xnlu_core::trainer::{train as run_training, TrainEvent};
use xnlu_core::{Error, Result};

use crate::args::{EntropyArgs, EvalArgs, ExplainArgs, TrainArgs, DATA_ROOT_ENV};

/// Writes to stdout. A closed pipe (`xnlu ... | head`) ends the process
/// quietly instead of panicking like `println!`.
fn emit(text: &str) {
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            eprintln!("error[E_IO]: <stdout>: {e}");
            std::process::exit(1);
        }
        std::process::exit(0);
    }
}

macro_rules! outln {
    ($($arg:tt)*) => {
        emit(&(format!($($arg)*) + "\n"))
    };
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Explicit path first, then the fallback, then `$XNLU_DATA_ROOT` itself. A
/// relative path that does not exist is retried under the data root.
fn resolve_data_dir(explicit: Option<PathBuf>, fallback: Option<PathBuf>) -> Result<PathBuf> {
    let root = std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from);
    let dir = match explicit.or(fallback) {
        Some(dir) => dir,
        None => {
            return root.ok_or_else(|| Error::Usage(format!("no data directory: pass --data-dir or set {DATA_ROOT_ENV}")))
        }
    };
    if dir.is_relative() && !dir.exists() {
        if let Some(candidate) = root.map(|r| r.join(&dir)).filter(|p| p.exists()) {
            return Ok(candidate);
        }
    }
    Ok(dir)
}

fn apply_overrides(run: &mut RunConfig, a: &TrainArgs) {
    fn set<T: Copy>(slot: &mut T, value: Option<T>) {
        if let Some(v) = value {
            *slot = v;
        }
    }
    set(&mut run.task, a.task);
    set(&mut run.variant, a.variant);
    let t = &mut run.train;
    set(&mut t.epochs, a.epochs);
    set(&mut t.batch_size, a.batch_size);
    set(&mut t.learning_rate, a.learning_rate);
    set(&mut t.dropout, a.dropout);
    set(&mut t.seed, a.seed);
    set(&mut t.weights.intent, a.intent_weight);
    set(&mut t.weights.intent_binary, a.intent_binary_weight);
    set(&mut t.weights.slot_binary, a.slot_binary_weight);
    set(&mut t.weights.slot, a.slot_weight);
    set(&mut t.order, a.order);
    if a.clip_norm.is_some() {
        t.clip_norm = a.clip_norm;
    }
    if a.no_validate {
        t.validate = false;
    }
    let m = &mut run.model;
    set(&mut m.d_model, a.d_model);
    set(&mut m.n_layers, a.n_layers);
    set(&mut m.n_heads, a.n_heads);
    set(&mut m.ffn_dim, a.ffn_dim);
    set(&mut m.max_len, a.max_len);
    set(&mut m.head_dim, a.head_dim);
    set(&mut m.init_std, a.init_std);
    run.lowercase |= a.lowercase;
    if a.data_dir.is_some() {
        run.data_dir = a.data_dir.clone();
    }
    if a.out.is_some() {
        run.out = a.out.clone();
    }
}

fn new_model(run: &RunConfig, maps: &LabelMaps, vocab: &Vocab) -> Result<Model<f32>> {
    let build = match run.variant {
        ModelVariant::Explainable => build_model,
        ModelVariant::Baseline => baseline_model,
    };
    build(run.task, maps, run.model, vocab.len(), run.train.seed)
}

fn headline(report: &EvalReport) -> String {
    let mut parts = Vec::new();
    if let Some(a) = report.accuracy {
        parts.push(format!("accuracy {a:.2}"));
    }
    if let Some(s) = &report.slots {
        parts.push(format!("span F1 {:.2}", s.f1));
    }
    parts.join(", ")
}

fn score(report: &EvalReport) -> f64 {
    report.accuracy.unwrap_or(0.0) + report.slots.as_ref().map_or(0.0, |s| s.f1)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut run = match &a.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    apply_overrides(&mut run, &a);
    run.validate()?;
    let out = run
        .out
        .clone()
        .ok_or_else(|| Error::Usage("no output directory: pass --out or set `out` in the config".into()))?;
    let data_dir = resolve_data_dir(run.data_dir.clone(), None)?;
    run.data_dir = Some(data_dir.clone());

    let (splits, maps) = load_task_dataset(run.task, &data_dir)?;
    let vocab = Vocab::build(&splits.train, run.lowercase);
    if let Some(longest) = splits.train.iter().map(|e| e.tokens.len()).max() {
        if longest + 1 > run.model.max_len {
            return Err(Error::Config(format!(
                "longest training utterance has {longest} tokens; model.max_len must be at least {}",
                longest + 1
            )));
        }
    }
    let mut model = new_model(&run, &maps, &vocab)?;
    let census = model.census();
    outln!(
        "{} {} model: {} parameters (encoder {}, intent {}, slot {}); {} train / {} valid utterances; vocabulary {}",
        match run.variant {
            ModelVariant::Explainable => "explainable",
            ModelVariant::Baseline => "baseline",
        },
        run.task,
        census.total,
        census.encoder,
        census.intent,
        census.slot,
        splits.train.len(),
        splits.valid.len(),
        vocab.len()
    );

    fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
    let log_path = out.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| io_error(&log_path, e))?);
    let mut failure: Option<Error> = None;
    let mut best = f64::NEG_INFINITY;
    let epochs = run.train.epochs;
    let best_dir = out.join("best");

    run_training(&mut model, &splits.train, &splits.valid, &vocab, &maps, &run.train, |event, model| {
        let TrainEvent::Epoch { epoch, losses, valid } = event else {
            return ControlFlow::Continue(());
        };
        let mut line = format!(
            "epoch {}/{epochs}: loss {:.4} (intent {:.4}, intent binary {:.4}, slot binary {:.4}, slot {:.4})",
            epoch + 1,
            losses.total,
            losses.intent,
            losses.intent_binary,
            losses.slot_binary,
            losses.slot
        );
        if let Some(v) = valid {
            line.push_str(&format!("; valid {}", headline(v)));
        }
        outln!("{line}");
        let written = serde_json::to_writer(&mut log, event)
            .map_err(Error::from)
            .and_then(|()| writeln!(log).map_err(|e| io_error(&log_path, e)));
        if let Err(e) = written {
            failure = Some(e);
            return ControlFlow::Break(());
        }
        if let (true, Some(v)) = (a.keep_best, valid) {
            if score(v) > best {
                best = score(v);
                if let Err(e) = save_checkpoint(&best_dir, model, &run, &maps, &vocab) {
                    failure = Some(e);
                    return ControlFlow::Break(());
                }
            }
        }
        ControlFlow::Continue(())
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    log.flush().map_err(|e| io_error(&log_path, e))?;
    save_checkpoint(&out, &model, &run, &maps, &vocab)?;
    outln!("checkpoint written to {}", out.display());
    Ok(())
}

fn describe_difference(what: &str, ours: &LabelSet, theirs: &LabelSet) -> Option<String> {
    if ours == theirs {
        return None;
    }
    let missing: Vec<&str> = theirs.names().iter().filter(|n| ours.get(n).is_none()).map(String::as_str).collect();
    let extra: Vec<&str> = ours.names().iter().filter(|n| theirs.get(n).is_none()).map(String::as_str).collect();
    Some(if missing.is_empty() && extra.is_empty() {
        format!("{what} are ordered differently")
    } else {
        format!("{what}: dataset adds {missing:?}, lacks {extra:?}")
    })
}

/// Loads the checkpoint's task layout from the data directory and insists
/// that the training split yields the checkpoint's label maps.
fn load_matching(ckpt: &Checkpoint, data_dir: Option<PathBuf>) -> Result<Splits> {
    let run = &ckpt.config.run;
    let dir = resolve_data_dir(data_dir, run.data_dir.clone())?;
    let (splits, maps) = load_task_dataset(ckpt.config.spec.task, &dir)?;
    let ours = &ckpt.config.maps;
    let problems: Vec<String> = [
        describe_difference("intents", &ours.intents, &maps.intents),
        describe_difference("slot classes", &ours.slot_classes, &maps.slot_classes),
        describe_difference("BIO tags", &ours.bio, &maps.bio),
    ]
    .into_iter()
    .flatten()
    .collect();
    if !problems.is_empty() {
        return Err(Error::LabelMismatch(format!(
            "{} does not match the checkpoint: {}",
            dir.display(),
            problems.join("; ")
        )));
    }
    Ok(splits)
}

fn write_json(path: &Path, value: serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(&value)?;
    fs::write(path, text + "\n").map_err(|e| io_error(path, e))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.model)?;
    let splits = load_matching(&ckpt, a.data_dir)?;
    let examples = splits.get(a.split);
    let report = evaluate(&ckpt.model, examples, &ckpt.config.vocab, &ckpt.config.maps)?;
    if a.json {
        outln!("{}", serde_json::to_string(&report)?);
    } else {
        emit(&report.to_text());
    }
    if let Some(path) = &a.out {
        write_json(path, serde_json::to_value(&report)?)?;
    }
    Ok(())
}

fn read_inputs(a: &ExplainArgs) -> Result<Vec<String>> {
    let lines = match &a.file {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| io_error(path, e))?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(String::from)
            .collect(),
        None => a.input.clone(),
    };
    if lines.is_empty() {
        return Err(Error::Usage("nothing to explain: pass --input or --file".into()));
    }
    Ok(lines)
}

pub fn explain(a: ExplainArgs) -> Result<()> {
    let format: ExplainFormat = a.format.parse()?;
    let inputs = read_inputs(&a)?;
    let ckpt = load_checkpoint(&a.model)?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    for (i, text) in inputs.iter().enumerate() {
        let tokens: Vec<String> = text.split_whitespace().map(String::from).collect();
        let bundle = explain_utterance(&ckpt.model, &tokens, &ckpt.config.vocab, &ckpt.config.maps)?;
        let rendered = render(&bundle, format)?;
        match &a.out {
            Some(dir) => {
                let path = dir.join(format!("explanation-{}.{}", i + 1, format.extension()));
                fs::write(&path, &rendered).map_err(|e| io_error(&path, e))?;
                outln!("{}", path.display());
            }
            None => outln!("{rendered}"),
        }
    }
    Ok(())
}

fn entropy_tasks(task: TaskKind, requested: Option<EntropyTask>) -> Vec<EntropyTask> {
    match (requested, task) {
        (Some(t), _) => vec![t],
        (None, TaskKind::JointNlu) => vec![EntropyTask::Slot, EntropyTask::Intent],
        (None, other) => vec![EntropyTask::for_task(other)],
    }
}

pub fn entropy_report(a: EntropyArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.model)?;
    let splits = load_matching(&ckpt, a.data_dir)?;
    let examples: &[Example] = splits.get(a.split);
    let mut reports = Vec::new();
    for task in entropy_tasks(ckpt.config.spec.task, a.task) {
        reports.push(build_entropy_report(
            &ckpt.model,
            examples,
            &ckpt.config.vocab,
            &ckpt.config.maps,
            &a.topk,
            task,
        )?);
    }
    if a.json {
        outln!("{}", serde_json::to_string(&reports)?);
    } else {
        for r in &reports {
            emit(&r.to_text());
        }
    }
    if let Some(path) = &a.out {
        write_json(path, serde_json::to_value(&reports)?)?;
    }
    Ok(())
}
