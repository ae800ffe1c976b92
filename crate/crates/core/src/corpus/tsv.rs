//! Corpus file format: UTF-8 TSV, one example per line, columns
//! `src \t mt \t pe \t mt_ext` (mt_ext may be empty). Lines starting with
//! `#` are comments.

use std::fs;
use std::path::Path;

use super::{ApeExample, CorpusError};

pub fn write_corpus(corpus: &[ApeExample]) -> String {
    let mut out = String::from("# src\tmt\tpe\tmt_ext\n");
    for ex in corpus {
        out.push_str(&ex.src.join(" "));
        out.push('\t');
        out.push_str(&ex.mt.join(" "));
        out.push('\t');
        out.push_str(&ex.pe.join(" "));
        out.push('\t');
        if let Some(ext) = &ex.mt_ext {
            out.push_str(&ext.join(" "));
        }
        out.push('\n');
    }
    out
}

pub fn write_corpus_file(path: &Path, corpus: &[ApeExample]) -> Result<(), CorpusError> {
    fs::write(path, write_corpus(corpus))?;
    Ok(())
}

pub fn read_corpus(text: &str) -> Result<Vec<ApeExample>, CorpusError> {
    let mut corpus = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim_end_matches('\r');
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = trimmed.split('\t').collect();
        if cols.len() != 4 {
            return Err(CorpusError::Data(format!(
                "line {}: expected 4 tab-separated columns, found {}",
                lineno + 1,
                cols.len()
            )));
        }
        let mt_ext = if cols[3].trim().is_empty() { None } else { Some(cols[3]) };
        let ex = ApeExample::from_texts(cols[0], cols[1], cols[2], mt_ext).map_err(|e| {
            CorpusError::Data(format!("line {}: {e}", lineno + 1))
        })?;
        corpus.push(ex);
    }
    Ok(corpus)
}

pub fn read_corpus_file(path: &Path) -> Result<Vec<ApeExample>, CorpusError> {
    read_corpus(&fs::read_to_string(path)?)
}
