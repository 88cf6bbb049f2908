//! Utility corpus: (subset of the labeled training split, measured utility)
//! records and their line-oriented text file.
//!
//! ```text
//! # oneround utility corpus v1
//! # t<TAB>seed<TAB>utility<TAB>class histogram<TAB>sorted indices
//! 0<TAB>8137461922213350391<TAB>0.7833333333333333<TAB>4,6,3<TAB>0,3,7,...
//! ```

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const CORPUS_HEADER: &str = "# oneround utility corpus v1";
const COLUMNS: &str = "# t\tseed\tutility\tclass_histogram\tindices";

#[derive(Clone, Debug, PartialEq)]
pub struct SubsetSample {
    /// Draw number within the corpus.
    pub t: usize,
    /// Seed the proxy was trained with; replaying it reproduces `utility`.
    pub seed: u64,
    /// Sorted, duplicate-free rows of the labeled training split.
    pub indices: Vec<usize>,
    pub utility: f64,
    pub class_histogram: Vec<usize>,
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub fn format_sample(s: &SubsetSample) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}",
        s.t,
        s.seed,
        s.utility,
        join(&s.class_histogram),
        join(&s.indices)
    )
}

pub fn parse_sample(line: &str) -> std::result::Result<SubsetSample, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 5 {
        return Err(format!("expected 5 tab-separated fields, found {}", fields.len()));
    }
    let list = |s: &str, what: &str| -> std::result::Result<Vec<usize>, String> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',')
            .map(|v| v.parse().map_err(|_| format!("bad {what} entry {v:?}")))
            .collect()
    };
    let t = fields[0].parse().map_err(|_| format!("bad t {:?}", fields[0]))?;
    let seed = fields[1].parse().map_err(|_| format!("bad seed {:?}", fields[1]))?;
    let utility: f64 = fields[2].parse().map_err(|_| format!("bad utility {:?}", fields[2]))?;
    if !(0.0..=1.0).contains(&utility) {
        return Err(format!("utility {utility} outside [0, 1]"));
    }
    let class_histogram = list(fields[3], "histogram")?;
    let indices = list(fields[4], "index")?;
    if indices.is_empty() {
        return Err("empty subset".into());
    }
    if indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err("indices must be sorted and duplicate-free".into());
    }
    Ok(SubsetSample {
        t,
        seed,
        indices,
        utility,
        class_histogram,
    })
}

/// Append-only corpus writer.
pub struct CorpusWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

impl CorpusWriter {
    /// Start a fresh file, truncating anything already there.
    pub fn create(path: &Path) -> Result<Self> {
        let op = "corpus::create";
        let file = File::create(path).map_err(|e| Error::io(op, path, e))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{CORPUS_HEADER}\n{COLUMNS}").map_err(|e| Error::io(op, path, e))?;
        Ok(CorpusWriter {
            out,
            path: path.to_path_buf(),
        })
    }

    /// Continue an existing file.
    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io("corpus::append", path, e))?;
        Ok(CorpusWriter {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        })
    }

    pub fn write(&mut self, sample: &SubsetSample) -> Result<()> {
        writeln!(self.out, "{}", format_sample(sample))
            .map_err(|e| Error::io("corpus::write", &self.path, e))
    }

    /// Flush buffered records so an interrupted run keeps them.
    pub fn flush(&mut self) -> Result<()> {
        self.out
            .flush()
            .map_err(|e| Error::io("corpus::write", &self.path, e))
    }
}

pub fn read_corpus(path: &Path) -> Result<Vec<SubsetSample>> {
    const OP: &str = "corpus::read";
    let file = File::open(path).map_err(|e| Error::io(OP, path, e))?;
    let display = path.display().to_string();
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(OP, path, e))?;
        if line_no == 1 && line != CORPUS_HEADER {
            return Err(Error::Parse {
                op: OP,
                path: display,
                line: 1,
                msg: format!("missing header {CORPUS_HEADER:?}"),
            });
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let sample = parse_sample(&line).map_err(|msg| Error::Parse {
            op: OP,
            path: display.clone(),
            line: line_no,
            msg,
        })?;
        if sample.t != samples.len() {
            return Err(Error::Parse {
                op: OP,
                path: display,
                line: line_no,
                msg: format!("expected record t={}, found t={}", samples.len(), sample.t),
            });
        }
        samples.push(sample);
    }
    Ok(samples)
}
