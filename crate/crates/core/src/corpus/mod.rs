//! Data model, tokenization, synthetic corpus generation, the number
//! filter, and curriculum-stage input assembly.

pub mod grammar;
mod generate;
mod tsv;

pub use generate::{generate_synthetic_corpus, GeneratorConfig, NoiseProfile};
pub use grammar::{is_digit_run, Lexicon, NerTag, PosTag};
pub use tsv::{read_corpus, read_corpus_file, write_corpus, write_corpus_file};

use std::collections::HashMap;
use std::ops::Range;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("input is empty after trimming")]
    EmptyInput,
    #[error("stage {stage:?} requires the {segment} segment")]
    MissingSegment { stage: Stage, segment: &'static str },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("bad corpus data: {0}")]
    Data(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;
pub const UNK_ID: u32 = 5;
/// Ids below this are reserved.
pub const RESERVED_IDS: u32 = 6;

pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const SEP_TOKEN: &str = "<sep>";
pub const MASK_TOKEN: &str = "<mask>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token→id bijection with six reserved ids at the front.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocab {
    /// Builds a vocabulary from an iterator of tokens. Reserved tokens are
    /// always present at ids 0..6; duplicates and reserved strings in the
    /// input are ignored.
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Vocab {
        let mut id_to_token: Vec<String> = [
            PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, SEP_TOKEN, MASK_TOKEN, UNK_TOKEN,
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let mut token_to_id: HashMap<String, u32> = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        for tok in tokens {
            if !token_to_id.contains_key(tok) {
                token_to_id.insert(tok.to_string(), id_to_token.len() as u32);
                id_to_token.push(tok.to_string());
            }
        }
        Vocab { token_to_id, id_to_token }
    }

    /// The canonical vocabulary of the built-in synthetic grammar.
    pub fn synthetic() -> Vocab {
        Lexicon::builtin().vocab()
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token_of(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    /// Encoder vocabulary count (the MLM class count).
    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_reserved(&self, id: u32) -> bool {
        id < RESERVED_IDS
    }
}

/// Splits on whitespace and maps each token to its id; unknown tokens map
/// to `<unk>`.
pub fn tokenize(text: &str, vocab: &Vocab) -> Result<Vec<u32>, CorpusError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    Ok(trimmed
        .split_whitespace()
        .map(|tok| vocab.id_of(tok).unwrap_or(UNK_ID))
        .collect())
}

/// Inverse of [`tokenize`] for known ids; out-of-range ids render as `<unk>`.
pub fn detokenize(ids: &[u32], vocab: &Vocab) -> String {
    ids.iter()
        .map(|&id| vocab.token_of(id).unwrap_or(UNK_TOKEN))
        .collect::<Vec<_>>()
        .join(" ")
}

/// One (src, mt, pe, mt_ext) quadruple of whitespace tokens, the unit every
/// pipeline operates on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApeExample {
    pub src: Vec<String>,
    pub mt: Vec<String>,
    pub pe: Vec<String>,
    pub mt_ext: Option<Vec<String>>,
}

impl ApeExample {
    pub fn new(
        src: Vec<String>,
        mt: Vec<String>,
        pe: Vec<String>,
        mt_ext: Option<Vec<String>>,
    ) -> Result<ApeExample, CorpusError> {
        let ex = ApeExample { src, mt, pe, mt_ext };
        ex.validate()?;
        Ok(ex)
    }

    /// Tokenizes whitespace-separated text fields.
    pub fn from_texts(
        src: &str,
        mt: &str,
        pe: &str,
        mt_ext: Option<&str>,
    ) -> Result<ApeExample, CorpusError> {
        let toks = |s: &str| -> Result<Vec<String>, CorpusError> {
            let v: Vec<String> = s.split_whitespace().map(str::to_string).collect();
            if v.is_empty() {
                return Err(CorpusError::EmptyInput);
            }
            Ok(v)
        };
        ApeExample::new(
            toks(src)?,
            toks(mt)?,
            toks(pe)?,
            mt_ext.map(toks).transpose()?,
        )
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let mut fields: Vec<(&str, &[String])> =
            vec![("src", &self.src), ("mt", &self.mt), ("pe", &self.pe)];
        if let Some(ext) = &self.mt_ext {
            fields.push(("mt_ext", ext));
        }
        for (name, toks) in fields {
            if toks.is_empty() {
                return Err(CorpusError::Data(format!("{name} is empty")));
            }
            for t in toks {
                if t == SEP_TOKEN || t == MASK_TOKEN {
                    return Err(CorpusError::Data(format!(
                        "{name} contains reserved token {t}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Curriculum stages: each later stage assembles a richer encoder input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Step1,
    Step2,
    Step3,
    FineTune,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Step1, Stage::Step2, Stage::Step3, Stage::FineTune];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Step1 => "step1",
            Stage::Step2 => "step2",
            Stage::Step3 => "step3",
            Stage::FineTune => "finetune",
        }
    }
}

/// Index ranges of the non-separator segments inside the encoder input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentBounds {
    pub src: Range<usize>,
    pub mt: Option<Range<usize>>,
    pub mt_ext: Option<Range<usize>>,
}

/// Assembled encoder input and decoder target for one example and stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageInput {
    pub encoder_ids: Vec<u32>,
    pub decoder_target_ids: Vec<u32>,
    pub segment_bounds: SegmentBounds,
    pub stage: Stage,
}

/// Builds the staged encoder input:
/// Step1 `[src]`, Step2 `[src <sep> mt]`, Step3 and FineTune
/// `[src <sep> mt <sep> mt_ext]`. The decoder target is `<bos> pe <eos>`.
pub fn assemble_stage_input(
    example: &ApeExample,
    stage: Stage,
    vocab: &Vocab,
) -> Result<StageInput, CorpusError> {
    let ids = |toks: &[String]| -> Vec<u32> {
        toks.iter()
            .map(|t| vocab.id_of(t).unwrap_or(UNK_ID))
            .collect()
    };

    let src_ids = ids(&example.src);
    let mut encoder_ids = src_ids;
    let src_range = 0..encoder_ids.len();
    let mut mt_range = None;
    let mut ext_range = None;

    if matches!(stage, Stage::Step2 | Stage::Step3 | Stage::FineTune) {
        encoder_ids.push(SEP_ID);
        let start = encoder_ids.len();
        encoder_ids.extend(ids(&example.mt));
        mt_range = Some(start..encoder_ids.len());
    }
    if matches!(stage, Stage::Step3 | Stage::FineTune) {
        let ext = example.mt_ext.as_ref().ok_or(CorpusError::MissingSegment {
            stage,
            segment: "mt_ext",
        })?;
        encoder_ids.push(SEP_ID);
        let start = encoder_ids.len();
        encoder_ids.extend(ids(ext));
        ext_range = Some(start..encoder_ids.len());
    }

    let mut decoder_target_ids = Vec::with_capacity(example.pe.len() + 2);
    decoder_target_ids.push(BOS_ID);
    decoder_target_ids.extend(ids(&example.pe));
    decoder_target_ids.push(EOS_ID);

    Ok(StageInput {
        encoder_ids,
        decoder_target_ids,
        segment_bounds: SegmentBounds { src: src_range, mt: mt_range, mt_ext: ext_range },
        stage,
    })
}

/// Extracts the multiset of maximal ASCII digit runs from a token sequence.
fn digit_runs(tokens: &[String]) -> Vec<String> {
    let mut runs = Vec::new();
    for tok in tokens {
        let mut current = String::new();
        for ch in tok.chars() {
            if ch.is_ascii_digit() {
                current.push(ch);
            } else if !current.is_empty() {
                runs.push(std::mem::take(&mut current));
            }
        }
        if !current.is_empty() {
            runs.push(current);
        }
    }
    runs.sort_unstable();
    runs
}

/// Keeps an example iff src and pe contain the same multiset of numbers.
pub fn number_filter(example: &ApeExample) -> bool {
    digit_runs(&example.src) == digit_runs(&example.pe)
}
