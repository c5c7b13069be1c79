//! Image-fixture files: one `<id>\t<v1>,<v2>,...` record per line, `#`
//! comments and blank lines ignored.

use std::fmt::Write as _;
use std::path::Path;

use crate::embedding::{check_dims, Embedding, TuningSet};
use crate::error::{Error, Result};

/// Reads `(ids, embeddings)` without the tuning-set checks.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Embedding>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, path)
}

pub fn load_image_fixtures(path: impl AsRef<Path>) -> Result<TuningSet> {
    let (ids, embeddings) = load_embeddings(path)?;
    TuningSet::new(embeddings, ids)
}

pub fn write_embeddings(
    path: impl AsRef<Path>,
    ids: &[String],
    embeddings: &[Embedding],
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (id, e) in ids.iter().zip(embeddings) {
        out.push_str(id);
        out.push('\t');
        for (i, v) in e.as_slice().iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{v}").expect("writing to a String cannot fail");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub(crate) fn parse_embeddings(text: &str, path: &Path) -> Result<(Vec<String>, Vec<Embedding>)> {
    let mut ids = Vec::new();
    let mut embeddings: Vec<Embedding> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, lineno, "expected <id>\\t<values>"))?;
        let id = id.trim();
        if id.is_empty() {
            return Err(Error::parse(path, lineno, "empty id"));
        }
        let values = values
            .split(',')
            .map(|v| {
                let x: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(path, lineno, format!("invalid number {v:?}")))?;
                if x.is_finite() {
                    Ok(x)
                } else {
                    Err(Error::parse(
                        path,
                        lineno,
                        format!("non-finite value {v:?}"),
                    ))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = embeddings.first() {
            check_dims(first.dim(), values.len())?;
        }
        embeddings
            .push(Embedding::new(values).map_err(|e| Error::parse(path, lineno, e.to_string()))?);
        ids.push(id.to_owned());
    }
    if embeddings.is_empty() {
        return Err(Error::EmptyFile(path.to_owned()));
    }
    Ok((ids, embeddings))
}
