//! The closed synthetic grammar behind the corpus generator.
//!
//! Two small parallel lexicons (a German-flavoured target side and an
//! English-flavoured source side) are paired one-to-one, so a "translation"
//! is a bijective token rename. Proper names, numbers, and punctuation map
//! to themselves. Every token carries a fixed POS and NER class, which makes
//! the tagging subtasks exactly learnable.

use std::collections::HashMap;
use std::sync::OnceLock;

use super::Vocab;

/// Part-of-speech classes. `Other` is the fallback for tokens outside the
/// lexicon (separators included).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PosTag {
    Det,
    Noun,
    Verb,
    Adj,
    Adp,
    Num,
    Punct,
    Propn,
    Other,
}

impl PosTag {
    pub const COUNT: usize = 9;

    pub fn id(self) -> u32 {
        match self {
            PosTag::Det => 0,
            PosTag::Noun => 1,
            PosTag::Verb => 2,
            PosTag::Adj => 3,
            PosTag::Adp => 4,
            PosTag::Num => 5,
            PosTag::Punct => 6,
            PosTag::Propn => 7,
            PosTag::Other => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PosTag::Det => "DET",
            PosTag::Noun => "NOUN",
            PosTag::Verb => "VERB",
            PosTag::Adj => "ADJ",
            PosTag::Adp => "ADP",
            PosTag::Num => "NUM",
            PosTag::Punct => "PUNCT",
            PosTag::Propn => "PROPN",
            PosTag::Other => "X",
        }
    }
}

/// Named-entity classes (`O` = outside any entity).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NerTag {
    O,
    Per,
    Loc,
}

impl NerTag {
    pub const COUNT: usize = 3;

    pub fn id(self) -> u32 {
        match self {
            NerTag::O => 0,
            NerTag::Per => 1,
            NerTag::Loc => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NerTag::O => "O",
            NerTag::Per => "PER",
            NerTag::Loc => "LOC",
        }
    }
}

/// Template slots the generator fills with lexicon draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) enum Slot {
    Det,
    Noun,
    Verb,
    Adj,
    Adp,
    PerName,
    LocName,
    Number,
    Punct,
}

/// (target word, source word, POS, NER) — the source column is the unique
/// counterpart of the target word.
type Entry = (&'static str, &'static str, PosTag, NerTag);

const ENTRIES: &[Entry] = &[
    // determiners
    ("der", "the", PosTag::Det, NerTag::O),
    ("die", "this", PosTag::Det, NerTag::O),
    ("das", "that", PosTag::Det, NerTag::O),
    ("ein", "a", PosTag::Det, NerTag::O),
    ("eine", "an", PosTag::Det, NerTag::O),
    // nouns
    ("hund", "dog", PosTag::Noun, NerTag::O),
    ("katze", "cat", PosTag::Noun, NerTag::O),
    ("haus", "house", PosTag::Noun, NerTag::O),
    ("baum", "tree", PosTag::Noun, NerTag::O),
    ("apfel", "apple", PosTag::Noun, NerTag::O),
    ("tisch", "table", PosTag::Noun, NerTag::O),
    ("brief", "letter", PosTag::Noun, NerTag::O),
    ("garten", "garden", PosTag::Noun, NerTag::O),
    ("fisch", "fish", PosTag::Noun, NerTag::O),
    ("vogel", "bird", PosTag::Noun, NerTag::O),
    ("stuhl", "chair", PosTag::Noun, NerTag::O),
    ("buch", "book", PosTag::Noun, NerTag::O),
    // verbs
    ("sieht", "sees", PosTag::Verb, NerTag::O),
    ("kauft", "buys", PosTag::Verb, NerTag::O),
    ("findet", "finds", PosTag::Verb, NerTag::O),
    ("liebt", "loves", PosTag::Verb, NerTag::O),
    ("baut", "builds", PosTag::Verb, NerTag::O),
    ("malt", "paints", PosTag::Verb, NerTag::O),
    ("sucht", "seeks", PosTag::Verb, NerTag::O),
    ("traegt", "carries", PosTag::Verb, NerTag::O),
    // adjectives
    ("gross", "big", PosTag::Adj, NerTag::O),
    ("klein", "small", PosTag::Adj, NerTag::O),
    ("rot", "red", PosTag::Adj, NerTag::O),
    ("alt", "old", PosTag::Adj, NerTag::O),
    ("neu", "new", PosTag::Adj, NerTag::O),
    ("schnell", "fast", PosTag::Adj, NerTag::O),
    // adpositions
    ("in", "inside", PosTag::Adp, NerTag::O),
    ("auf", "onto", PosTag::Adp, NerTag::O),
    ("bei", "near", PosTag::Adp, NerTag::O),
    // person names (map to themselves)
    ("anna", "anna", PosTag::Propn, NerTag::Per),
    ("bruno", "bruno", PosTag::Propn, NerTag::Per),
    ("clara", "clara", PosTag::Propn, NerTag::Per),
    ("david", "david", PosTag::Propn, NerTag::Per),
    ("emma", "emma", PosTag::Propn, NerTag::Per),
    // place names (map to themselves)
    ("berlin", "berlin", PosTag::Propn, NerTag::Loc),
    ("paris", "paris", PosTag::Propn, NerTag::Loc),
    ("rom", "rom", PosTag::Propn, NerTag::Loc),
    ("wien", "wien", PosTag::Propn, NerTag::Loc),
    ("oslo", "oslo", PosTag::Propn, NerTag::Loc),
    // numbers (map to themselves)
    ("2", "2", PosTag::Num, NerTag::O),
    ("3", "3", PosTag::Num, NerTag::O),
    ("5", "5", PosTag::Num, NerTag::O),
    ("7", "7", PosTag::Num, NerTag::O),
    ("12", "12", PosTag::Num, NerTag::O),
    ("30", "30", PosTag::Num, NerTag::O),
    ("100", "100", PosTag::Num, NerTag::O),
    // punctuation (maps to itself)
    (".", ".", PosTag::Punct, NerTag::O),
    (",", ",", PosTag::Punct, NerTag::O),
    ("!", "!", PosTag::Punct, NerTag::O),
];

/// Sentence templates with sampling weights. Weights need not sum to one.
pub(crate) const TEMPLATES: &[(&[Slot], f64)] = &[
    (
        &[Slot::Det, Slot::Noun, Slot::Verb, Slot::Det, Slot::Noun, Slot::Punct],
        0.30,
    ),
    (
        &[Slot::Det, Slot::Adj, Slot::Noun, Slot::Verb, Slot::Det, Slot::Noun, Slot::Punct],
        0.20,
    ),
    (
        &[Slot::PerName, Slot::Verb, Slot::Det, Slot::Noun, Slot::Punct],
        0.15,
    ),
    (
        &[Slot::Det, Slot::Noun, Slot::Verb, Slot::Number, Slot::Noun, Slot::Punct],
        0.10,
    ),
    (
        &[Slot::PerName, Slot::Verb, Slot::Det, Slot::Noun, Slot::Adp, Slot::LocName, Slot::Punct],
        0.15,
    ),
    (
        &[
            Slot::Det,
            Slot::Noun,
            Slot::Adp,
            Slot::LocName,
            Slot::Verb,
            Slot::Det,
            Slot::Adj,
            Slot::Noun,
            Slot::Punct,
        ],
        0.10,
    ),
];

/// Token lexicon: POS/NER lookup, the bijective target→source rename, and
/// the word pools the generator samples from.
pub struct Lexicon {
    target_info: HashMap<&'static str, (PosTag, NerTag)>,
    to_source: HashMap<&'static str, &'static str>,
    pools: HashMap<Slot, Vec<&'static str>>,
    target_words: Vec<&'static str>,
}

impl Lexicon {
    fn new() -> Self {
        let mut target_info = HashMap::new();
        let mut to_source = HashMap::new();
        let mut pools: HashMap<Slot, Vec<&'static str>> = HashMap::new();
        let mut target_words = Vec::new();
        for &(tgt, src, pos, ner) in ENTRIES {
            target_info.insert(tgt, (pos, ner));
            to_source.insert(tgt, src);
            target_words.push(tgt);
            let slot = match (pos, ner) {
                (PosTag::Det, _) => Slot::Det,
                (PosTag::Noun, _) => Slot::Noun,
                (PosTag::Verb, _) => Slot::Verb,
                (PosTag::Adj, _) => Slot::Adj,
                (PosTag::Adp, _) => Slot::Adp,
                (PosTag::Num, _) => Slot::Number,
                (PosTag::Punct, _) => Slot::Punct,
                (PosTag::Propn, NerTag::Per) => Slot::PerName,
                (PosTag::Propn, _) => Slot::LocName,
                (PosTag::Other, _) => unreachable!("lexicon entries carry concrete POS"),
            };
            pools.entry(slot).or_default().push(tgt);
        }
        Lexicon { target_info, to_source, pools, target_words }
    }

    /// Shared built-in lexicon.
    pub fn builtin() -> &'static Lexicon {
        static LEX: OnceLock<Lexicon> = OnceLock::new();
        LEX.get_or_init(Lexicon::new)
    }

    /// POS class of a token. Digit runs are `Num` even when the exact
    /// number is not in the lexicon; unknown tokens fall back to `Other`.
    pub fn pos_of(&self, token: &str) -> PosTag {
        if let Some(&(pos, _)) = self.target_info.get(token) {
            return pos;
        }
        if is_digit_run(token) {
            return PosTag::Num;
        }
        PosTag::Other
    }

    /// NER class of a token; unknown tokens are `O`.
    pub fn ner_of(&self, token: &str) -> NerTag {
        self.target_info.get(token).map_or(NerTag::O, |&(_, ner)| ner)
    }

    /// The unique source-side counterpart of a target token. Tokens outside
    /// the lexicon (and numbers) map to themselves.
    pub fn to_source<'a>(&'a self, target: &'a str) -> &'a str {
        self.to_source.get(target).copied().unwrap_or(target)
    }

    /// The canonical vocabulary over both lexicon sides, reserved tokens
    /// first, remaining tokens sorted for a stable id assignment.
    pub fn vocab(&self) -> Vocab {
        let mut words: Vec<&str> = Vec::new();
        for &(tgt, src, _, _) in ENTRIES {
            words.push(tgt);
            words.push(src);
        }
        words.sort_unstable();
        words.dedup();
        Vocab::from_tokens(words.iter().copied())
    }

    pub(crate) fn pool(&self, slot: Slot) -> &[&'static str] {
        &self.pools[&slot]
    }

    /// All target-side words, in lexicon order (used for noise draws).
    pub(crate) fn target_words(&self) -> &[&'static str] {
        &self.target_words
    }
}

/// True when the token is one maximal ASCII digit run (e.g. "30").
pub fn is_digit_run(token: &str) -> bool {
    !token.is_empty() && token.bytes().all(|b| b.is_ascii_digit())
}
