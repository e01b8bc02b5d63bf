//! File ingestion: corpus (one sentence per line), STS TSV and probe TSV.

use anyhow::{bail, Context, Result};
use conrep_core::eval::{ProbeExample, StsExample};
use std::path::Path;

fn read_utf8(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    match String::from_utf8(bytes) {
        Ok(s) => Ok(s),
        Err(e) => bail!(
            "{}: invalid UTF-8 at byte offset {}",
            path.display(),
            e.utf8_error().valid_up_to()
        ),
    }
}

/// One sentence per line; blank lines skipped; CR/LF normalized.
pub fn parse_corpus(path: &Path) -> Result<Vec<String>> {
    let text = read_utf8(path)?;
    let sentences: Vec<String> = text
        .lines()
        .map(|l| l.trim_end_matches('\r').trim())
        .filter(|l| !l.is_empty())
        .map(|l| l.to_string())
        .collect();
    if sentences.is_empty() {
        bail!("{}: corpus file is empty", path.display());
    }
    Ok(sentences)
}

/// Tab-separated: sentence_a TAB sentence_b TAB gold-float.
pub fn parse_sts(path: &Path) -> Result<Vec<StsExample>> {
    let text = read_utf8(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            bail!("line {}: expected 3 fields, got {}", i + 1, fields.len());
        }
        let gold: f64 = fields[2]
            .parse()
            .with_context(|| format!("line {}: unparseable gold score {:?}", i + 1, fields[2]))?;
        out.push(StsExample {
            sentence_a: fields[0].to_string(),
            sentence_b: fields[1].to_string(),
            gold,
        });
    }
    if out.is_empty() {
        bail!("{}: STS file is empty", path.display());
    }
    Ok(out)
}

/// Tab-separated: integer-label TAB sentence.
pub fn parse_probe(path: &Path) -> Result<Vec<ProbeExample>> {
    let text = read_utf8(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            bail!("line {}: expected 2 fields, got {}", i + 1, fields.len());
        }
        let label: usize = fields[0]
            .parse()
            .with_context(|| format!("line {}: unparseable label {:?}", i + 1, fields[0]))?;
        out.push(ProbeExample {
            label,
            sentence: fields[1].to_string(),
        });
    }
    if out.is_empty() {
        bail!("{}: probe file is empty", path.display());
    }
    Ok(out)
}
