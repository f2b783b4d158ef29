use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Example;
use crate::error::{Error, Result};
use crate::grammar::Grammar;

pub const DATASET_SCHEMA: &str = "ctxparse-dataset/1";

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    grammar: String,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub grammar: Grammar,
    /// Grammar location as written in the header, relative to the dataset file.
    pub grammar_ref: String,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        validate_examples(&self.grammar, &self.examples)
    }

    pub fn get(&self, id: usize) -> Option<&Example> {
        self.examples.iter().find(|e| e.id == id)
    }
}

pub fn validate_examples(grammar: &Grammar, examples: &[Example]) -> Result<()> {
    let mut seen = HashSet::new();
    for ex in examples {
        if !seen.insert(ex.id) {
            return Err(Error::InvalidExample {
                id: ex.id,
                reason: "duplicate id".into(),
            });
        }
        ex.validate(grammar)?;
    }
    Ok(())
}

/// Reads a dataset file: a header line naming the grammar, then one
/// example per line. Every example is validated against the grammar.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::Dataset(format!("{}: empty file", path.display())))?;
    let header: Header = serde_json::from_str(first)
        .map_err(|e| Error::Dataset(format!("{}: bad header: {e}", path.display())))?;
    if header.schema != DATASET_SCHEMA {
        return Err(Error::Dataset(format!(
            "{}: unsupported schema `{}`",
            path.display(),
            header.schema
        )));
    }
    let grammar_path = resolve(path, &header.grammar);
    let grammar = Grammar::from_file(&grammar_path)?;

    let mut examples = Vec::new();
    for (i, line) in lines {
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| Error::Dataset(format!("{}:{}: {e}", path.display(), i + 1)))?;
        let id = value.get("id").and_then(|v| v.as_u64());
        let ex: Example = serde_json::from_value(value).map_err(|e| match id {
            Some(id) => Error::InvalidExample {
                id: id as usize,
                reason: e.to_string(),
            },
            None => Error::Dataset(format!("{}:{}: {e}", path.display(), i + 1)),
        })?;
        examples.push(ex);
    }
    validate_examples(&grammar, &examples)?;
    Ok(Dataset {
        grammar,
        grammar_ref: header.grammar,
        examples,
    })
}

pub fn save_dataset(path: &Path, grammar_ref: &str, examples: &[Example]) -> Result<()> {
    let mut out = Vec::new();
    let header = Header {
        schema: DATASET_SCHEMA.into(),
        grammar: grammar_ref.into(),
    };
    let io = |e| Error::io(path, e);
    writeln!(
        out,
        "{}",
        serde_json::to_string(&header).expect("header serializes")
    )
    .map_err(io)?;
    for ex in examples {
        writeln!(
            out,
            "{}",
            serde_json::to_string(ex).expect("example serializes")
        )
        .map_err(io)?;
    }
    std::fs::write(path, out).map_err(io)
}

fn resolve(dataset: &Path, grammar_ref: &str) -> PathBuf {
    let g = Path::new(grammar_ref);
    if g.is_absolute() {
        return g.to_path_buf();
    }
    dataset.parent().unwrap_or(Path::new(".")).join(g)
}
