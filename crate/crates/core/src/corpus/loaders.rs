use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::TaskKind;

use super::labels::{strip_bio, LabelMaps};
use super::Example;

/// Train / validation / test examples. Validation may be empty for corpora
/// that ship without one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub test: Vec<Example>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[Example] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "dev" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Usage(format!("unknown split `{other}` (expected train, valid or test)"))),
        }
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect())
}

/// Reads one split directory holding `seq.in`, `seq.out` and `label`.
pub fn read_nlu_split(dir: &Path) -> Result<Vec<Example>> {
    let files = ["seq.in", "seq.out", "label"].map(|f| dir.join(f));
    for f in &files {
        if !f.is_file() {
            return Err(Error::io(
                f,
                std::io::Error::new(std::io::ErrorKind::NotFound, "required file is missing"),
            ));
        }
    }
    let [tokens, tags, labels] = [&files[0], &files[1], &files[2]].map(|f| read_lines(f));
    let (tokens, tags, labels) = (tokens?, tags?, labels?);
    // Trailing blank lines are tolerated; a blank line anywhere else is an empty utterance.
    let trim = |mut v: Vec<String>| {
        while v.last().is_some_and(|l| l.trim().is_empty()) {
            v.pop();
        }
        v
    };
    let (tokens, tags, labels) = (trim(tokens), trim(tags), trim(labels));
    if tokens.len() != tags.len() || tokens.len() != labels.len() {
        return Err(Error::parse(
            dir,
            0,
            format!(
                "line counts differ: seq.in {}, seq.out {}, label {}",
                tokens.len(),
                tags.len(),
                labels.len()
            ),
        ));
    }
    let mut out = Vec::with_capacity(tokens.len());
    for (i, ((t, s), l)) in tokens.iter().zip(&tags).zip(&labels).enumerate() {
        let line = i + 1;
        let toks: Vec<String> = t.split_whitespace().map(String::from).collect();
        let bio: Vec<String> = s.split_whitespace().map(String::from).collect();
        if toks.is_empty() {
            return Err(Error::parse(&files[0], line, "empty utterance"));
        }
        if toks.len() != bio.len() {
            return Err(Error::parse(
                &files[1],
                line,
                format!("{} tags for {} tokens", bio.len(), toks.len()),
            ));
        }
        for tag in &bio {
            strip_bio(tag).map_err(|e| Error::parse(&files[1], line, e.to_string()))?;
        }
        let intent = l.trim();
        if intent.is_empty() {
            return Err(Error::parse(&files[2], line, "empty intent label"));
        }
        out.push(Example {
            tokens: toks,
            bio_tags: Some(bio),
            intent: Some(intent.to_string()),
        });
    }
    Ok(out)
}

/// Loads a joint NLU corpus laid out as `dir/{train,valid,test}/{seq.in,seq.out,label}`.
/// Label maps come from the training split.
pub fn load_nlu_dataset(dir: &Path) -> Result<(Splits, LabelMaps)> {
    let splits = Splits {
        train: read_nlu_split(&dir.join("train"))?,
        valid: read_nlu_split(&dir.join("valid"))?,
        test: read_nlu_split(&dir.join("test"))?,
    };
    let maps = LabelMaps::from_examples(&splits.train)?;
    Ok((splits, maps))
}

/// Reads CoNLL column format: first column token, last column BIO tag, blank
/// lines between sentences, `-DOCSTART-` lines ignored.
pub fn load_conll(path: &Path) -> Result<(Vec<Example>, LabelMaps)> {
    let lines = read_lines(path)?;
    let mut out = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut columns: Option<usize> = None;
    let flush = |tokens: &mut Vec<String>, tags: &mut Vec<String>, out: &mut Vec<Example>| {
        if !tokens.is_empty() {
            out.push(Example {
                tokens: std::mem::take(tokens),
                bio_tags: Some(std::mem::take(tags)),
                intent: None,
            });
        }
    };
    for (i, line) in lines.iter().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            flush(&mut tokens, &mut tags, &mut out);
            continue;
        }
        if cols[0] == "-DOCSTART-" {
            continue;
        }
        if cols.len() < 2 {
            return Err(Error::parse(path, i + 1, "expected at least a token and a tag column"));
        }
        match columns {
            None => columns = Some(cols.len()),
            Some(n) if n != cols.len() => {
                return Err(Error::parse(path, i + 1, format!("{} columns, expected {n}", cols.len())));
            }
            Some(_) => {}
        }
        let tag = cols[cols.len() - 1];
        strip_bio(tag).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        tokens.push(cols[0].to_string());
        tags.push(tag.to_string());
    }
    flush(&mut tokens, &mut tags, &mut out);
    let maps = LabelMaps::from_examples(&out)?;
    Ok((out, maps))
}

/// Reads `sentence<TAB>label` rows with labels 0 or 1. A leading header row is skipped.
pub fn load_sst2_tsv(path: &Path) -> Result<(Vec<Example>, LabelMaps)> {
    let lines = read_lines(path)?;
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((sentence, label)) = line.rsplit_once('\t') else {
            return Err(Error::parse(path, i + 1, "missing tab between sentence and label"));
        };
        let label = label.trim();
        if i == 0 && label.eq_ignore_ascii_case("label") {
            continue;
        }
        if label != "0" && label != "1" {
            return Err(Error::parse(path, i + 1, format!("label `{label}` is not 0 or 1")));
        }
        let tokens: Vec<String> = sentence.split_whitespace().map(String::from).collect();
        if tokens.is_empty() {
            return Err(Error::parse(path, i + 1, "empty sentence"));
        }
        out.push(Example {
            tokens,
            bio_tags: None,
            intent: Some(label.to_string()),
        });
    }
    let maps = LabelMaps::from_examples(&out)?;
    Ok((out, maps))
}

fn first_existing(dir: &Path, names: &[&str]) -> Option<PathBuf> {
    names.iter().map(|n| dir.join(n)).find(|p| p.is_file())
}

fn required(dir: &Path, names: &[&str]) -> Result<PathBuf> {
    first_existing(dir, names).ok_or_else(|| {
        Error::io(
            dir.join(names[0]),
            std::io::Error::new(std::io::ErrorKind::NotFound, "required file is missing"),
        )
    })
}

/// Loads the corpus layout matching a task kind:
///
/// * joint NLU: `train/`, `valid/`, `test/` directories of `seq.in`/`seq.out`/`label`
/// * token classification: `train.txt`, optional `valid.txt` (or `dev.txt`), `test.txt` in CoNLL format
/// * sentence classification: `train.tsv`, optional `dev.tsv` (or `valid.tsv`), `test.tsv`
pub fn load_task_dataset(kind: TaskKind, dir: &Path) -> Result<(Splits, LabelMaps)> {
    match kind {
        TaskKind::JointNlu => load_nlu_dataset(dir),
        TaskKind::TokenClassification => {
            let (train, maps) = load_conll(&required(dir, &["train.txt"])?)?;
            let valid = match first_existing(dir, &["valid.txt", "dev.txt"]) {
                Some(p) => load_conll(&p)?.0,
                None => Vec::new(),
            };
            let test = load_conll(&required(dir, &["test.txt"])?)?.0;
            Ok((Splits { train, valid, test }, maps))
        }
        TaskKind::SentenceClassification => {
            let (train, maps) = load_sst2_tsv(&required(dir, &["train.tsv"])?)?;
            let valid = match first_existing(dir, &["dev.tsv", "valid.tsv"]) {
                Some(p) => load_sst2_tsv(&p)?.0,
                None => Vec::new(),
            };
            let test = load_sst2_tsv(&required(dir, &["test.tsv"])?)?.0;
            Ok((Splits { train, valid, test }, maps))
        }
    }
}
