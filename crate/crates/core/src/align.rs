//! Deterministic word alignment and per-token label generation for the
//! auxiliary subtasks.
//!
//! The aligner pairs exact token matches first (leftmost to leftmost), then
//! greedily adds the highest character-trigram Dice matches above 0.5, ties
//! broken by the smallest (left, right) index pair. Both sides are consumed
//! as they are matched, so the result is a one-to-one partial matching and
//! in particular left-functional.
//!
//! Keep/Translate labels follow the alignment: an aligned token is `Keep`
//! iff the paired tokens are equal, and unaligned tokens default to
//! `Translate`.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    ApeExample, CorpusError, Lexicon, StageInput, Stage, MASK_ID, RESERVED_IDS, SEP_TOKEN,
};

/// Word alignment between two token sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    /// (left index, right index), sorted by left index.
    pub pairs: Vec<(usize, usize)>,
    pub left_len: usize,
    pub right_len: usize,
}

impl Alignment {
    pub fn right_of(&self, left: usize) -> Option<usize> {
        self.pairs.iter().find(|&&(l, _)| l == left).map(|&(_, r)| r)
    }

    pub fn left_of(&self, right: usize) -> Option<usize> {
        self.pairs.iter().find(|&&(_, r)| r == right).map(|&(l, _)| l)
    }
}

/// Keep/Translate tag. `Keep` means the token survives into the post-edit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KtTag {
    Keep,
    Translate,
}

impl KtTag {
    pub const COUNT: usize = 2;

    pub fn id(self) -> u32 {
        match self {
            KtTag::Keep => 0,
            KtTag::Translate => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KtTag::Keep => "Keep",
            KtTag::Translate => "Translate",
        }
    }
}

/// One Keep/Translate tag per token of the labeled side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KtLabels(pub Vec<KtTag>);

impl KtLabels {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.0.iter().map(|t| t.id()).collect()
    }
}

fn trigrams(token: &str) -> BTreeSet<(char, char, char)> {
    let chars: Vec<char> = token.chars().collect();
    chars.windows(3).map(|w| (w[0], w[1], w[2])).collect()
}

/// Character-trigram Dice similarity; tokens shorter than three characters
/// have no trigrams and score 0.
pub fn trigram_dice(a: &str, b: &str) -> f64 {
    let ta = trigrams(a);
    let tb = trigrams(b);
    if ta.is_empty() || tb.is_empty() {
        return 0.0;
    }
    let shared = ta.intersection(&tb).count();
    2.0 * shared as f64 / (ta.len() + tb.len()) as f64
}

const DICE_THRESHOLD: f64 = 0.5;

/// Greedy best-match word alignment: exact matches first, then trigram
/// Dice above 0.5.
pub fn align(left: &[String], right: &[String]) -> Alignment {
    let mut used_left = vec![false; left.len()];
    let mut used_right = vec![false; right.len()];
    let mut pairs = Vec::new();

    // exact phase: leftmost left token to leftmost unused equal right token
    for (l, ltok) in left.iter().enumerate() {
        for (r, rtok) in right.iter().enumerate() {
            if !used_right[r] && ltok == rtok {
                pairs.push((l, r));
                used_left[l] = true;
                used_right[r] = true;
                break;
            }
        }
    }

    // fuzzy phase: repeatedly take the highest-Dice unused pair; iteration
    // order makes the smallest (left, right) pair win ties
    let mut dice = vec![vec![0.0f64; right.len()]; left.len()];
    for (l, ltok) in left.iter().enumerate() {
        for (r, rtok) in right.iter().enumerate() {
            dice[l][r] = trigram_dice(ltok, rtok);
        }
    }
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for l in 0..left.len() {
            if used_left[l] {
                continue;
            }
            for r in 0..right.len() {
                if used_right[r] || dice[l][r] <= DICE_THRESHOLD {
                    continue;
                }
                if best.map_or(true, |(d, _, _)| dice[l][r] > d) {
                    best = Some((dice[l][r], l, r));
                }
            }
        }
        match best {
            Some((_, l, r)) => {
                pairs.push((l, r));
                used_left[l] = true;
                used_right[r] = true;
            }
            None => break,
        }
    }

    pairs.sort_unstable();
    Alignment { pairs, left_len: left.len(), right_len: right.len() }
}

/// Labels `mt` tokens against `pe`: aligned and equal → `Keep`, aligned but
/// different or unaligned → `Translate`. Also used for the `mt_ext`–`pe`
/// pair.
pub fn label_mt_against_pe(mt: &[String], pe: &[String]) -> KtLabels {
    let alignment = align(pe, mt);
    let mut labels = vec![KtTag::Translate; mt.len()];
    for &(pi, mj) in &alignment.pairs {
        if pe[pi] == mt[mj] {
            labels[mj] = KtTag::Keep;
        }
    }
    KtLabels(labels)
}

/// Projects `mt` labels onto `src` through the src–mt alignment; unaligned
/// src tokens get `Translate`.
pub fn project_labels_to_src(src: &[String], mt: &[String], mt_labels: &KtLabels) -> KtLabels {
    assert_eq!(mt_labels.len(), mt.len(), "mt label length mismatch");
    let alignment = align(src, mt);
    let mut labels = vec![KtTag::Translate; src.len()];
    for &(si, mj) in &alignment.pairs {
        labels[si] = mt_labels.0[mj];
    }
    KtLabels(labels)
}

/// Keep/Translate labels over the full Step3/FineTune encoder input:
/// projected src labels, mt labels, mt_ext labels, separators labeled
/// `Keep`. Output length is always n+m+l+2.
pub fn build_encoder_kt(example: &ApeExample) -> Result<KtLabels, CorpusError> {
    let ext = example.mt_ext.as_ref().ok_or(CorpusError::MissingSegment {
        stage: Stage::Step3,
        segment: "mt_ext",
    })?;
    let mt_labels = label_mt_against_pe(&example.mt, &example.pe);
    let src_labels = project_labels_to_src(&example.src, &example.mt, &mt_labels);
    let ext_labels = label_mt_against_pe(ext, &example.pe);

    let mut out = Vec::with_capacity(src_labels.len() + mt_labels.len() + ext_labels.len() + 2);
    out.extend_from_slice(&src_labels.0);
    out.push(KtTag::Keep); // separators are never edited
    out.extend_from_slice(&mt_labels.0);
    out.push(KtTag::Keep);
    out.extend_from_slice(&ext_labels.0);
    Ok(KtLabels(out))
}

/// Decoder-side labels over `pe`: a pe token is `Keep` iff its aligned mt
/// token equals it.
pub fn build_decoder_kt(mt: &[String], pe: &[String]) -> KtLabels {
    let alignment = align(pe, mt);
    let mut labels = vec![KtTag::Translate; pe.len()];
    for &(pi, mj) in &alignment.pairs {
        if pe[pi] == mt[mj] {
            labels[pi] = KtTag::Keep;
        }
    }
    KtLabels(labels)
}

/// POS ids by lexicon lookup; digit runs are NUM, unknown tokens (and
/// separators) fall back to the default class.
pub fn tag_pos(tokens: &[String]) -> Vec<u32> {
    let lex = Lexicon::builtin();
    tokens.iter().map(|t| lex.pos_of(t).id()).collect()
}

/// NER ids by lexicon lookup; unknown tokens are O.
pub fn tag_ner(tokens: &[String]) -> Vec<u32> {
    let lex = Lexicon::builtin();
    tokens.iter().map(|t| lex.ner_of(t).id()).collect()
}

/// A masked copy of the encoder input plus the positions and original ids
/// it must reconstruct.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlmMasking {
    pub input_ids: Vec<u32>,
    pub target_positions: Vec<usize>,
    pub target_ids: Vec<u32>,
}

/// Masks round(0.15·len) non-reserved positions with `<mask>`,
/// deterministically under `seed`.
pub fn mask_mlm(encoder_ids: &[u32], seed: u64) -> MlmMasking {
    let len = encoder_ids.len();
    let eligible: Vec<usize> = (0..len).filter(|&i| encoder_ids[i] >= RESERVED_IDS).collect();
    let want = (0.15 * len as f64).round() as usize;
    let count = want.min(eligible.len());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, eligible.len(), count);
    let mut target_positions: Vec<usize> = picked.iter().map(|i| eligible[i]).collect();
    target_positions.sort_unstable();

    let mut input_ids = encoder_ids.to_vec();
    let mut target_ids = Vec::with_capacity(count);
    for &p in &target_positions {
        target_ids.push(input_ids[p]);
        input_ids[p] = MASK_ID;
    }
    MlmMasking { input_ids, target_positions, target_ids }
}

/// Per-subtask label tensors for one FineTune example, aligned with the
/// encoder input and the pe sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskBatch {
    pub pos_tags: Vec<u32>,
    pub ner_tags: Vec<u32>,
    pub mlm: MlmMasking,
    pub kt_enc: KtLabels,
    pub kt_dec: KtLabels,
}

/// Builds all subtask labels for one example whose stage input carries all
/// three segments.
pub fn build_task_batch(
    example: &ApeExample,
    stage_input: &StageInput,
    mlm_seed: u64,
) -> Result<TaskBatch, CorpusError> {
    if stage_input.segment_bounds.mt_ext.is_none() {
        return Err(CorpusError::MissingSegment {
            stage: stage_input.stage,
            segment: "mt_ext",
        });
    }
    let ext = example.mt_ext.as_ref().expect("bounds imply mt_ext");

    let mut tokens: Vec<String> =
        Vec::with_capacity(example.src.len() + example.mt.len() + ext.len() + 2);
    tokens.extend(example.src.iter().cloned());
    tokens.push(SEP_TOKEN.to_string());
    tokens.extend(example.mt.iter().cloned());
    tokens.push(SEP_TOKEN.to_string());
    tokens.extend(ext.iter().cloned());
    debug_assert_eq!(tokens.len(), stage_input.encoder_ids.len());

    Ok(TaskBatch {
        pos_tags: tag_pos(&tokens),
        ner_tags: tag_ner(&tokens),
        mlm: mask_mlm(&stage_input.encoder_ids, mlm_seed),
        kt_enc: build_encoder_kt(example)?,
        kt_dec: build_decoder_kt(&example.mt, &example.pe),
    })
}

/// Class frequency counts per subtask, the input to the class-balanced
/// loss and the imbalance report.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TaskClassCounts {
    pub pos: Vec<u64>,
    pub ner: Vec<u64>,
    pub kt_enc: Vec<u64>,
    pub kt_dec: Vec<u64>,
}

impl TaskClassCounts {
    pub fn collect<'a>(batches: impl IntoIterator<Item = &'a TaskBatch>) -> TaskClassCounts {
        let mut counts = TaskClassCounts {
            pos: vec![0; crate::corpus::PosTag::COUNT],
            ner: vec![0; crate::corpus::NerTag::COUNT],
            kt_enc: vec![0; KtTag::COUNT],
            kt_dec: vec![0; KtTag::COUNT],
        };
        for b in batches {
            for &t in &b.pos_tags {
                counts.pos[t as usize] += 1;
            }
            for &t in &b.ner_tags {
                counts.ner[t as usize] += 1;
            }
            for t in &b.kt_enc.0 {
                counts.kt_enc[t.id() as usize] += 1;
            }
            for t in &b.kt_dec.0 {
                counts.kt_dec[t.id() as usize] += 1;
            }
        }
        counts
    }

    /// (minority, majority) count for a 1:x imbalance summary; zero-count
    /// classes are skipped.
    pub fn imbalance(counts: &[u64]) -> (u64, u64) {
        let present: Vec<u64> = counts.iter().copied().filter(|&c| c > 0).collect();
        let min = present.iter().copied().min().unwrap_or(0);
        let max = present.iter().copied().max().unwrap_or(0);
        (min, max)
    }
}

/// Label file: TSV mirror of the corpus with space-joined tag sequences in
/// columns `pos`, `ner`, `kt_enc`, `kt_dec`.
pub fn write_labels(batches: &[TaskBatch]) -> String {
    use crate::corpus::{NerTag, PosTag};
    let pos_names: Vec<&str> = (0..PosTag::COUNT as u32)
        .map(|i| pos_name_of_id(i))
        .collect();
    let ner_names = [NerTag::O.name(), NerTag::Per.name(), NerTag::Loc.name()];

    let mut out = String::from("# pos\tner\tkt_enc\tkt_dec\n");
    for b in batches {
        let pos: Vec<&str> = b.pos_tags.iter().map(|&t| pos_names[t as usize]).collect();
        let ner: Vec<&str> = b.ner_tags.iter().map(|&t| ner_names[t as usize]).collect();
        let kt_enc: Vec<&str> = b.kt_enc.0.iter().map(|t| t.name()).collect();
        let kt_dec: Vec<&str> = b.kt_dec.0.iter().map(|t| t.name()).collect();
        out.push_str(&pos.join(" "));
        out.push('\t');
        out.push_str(&ner.join(" "));
        out.push('\t');
        out.push_str(&kt_enc.join(" "));
        out.push('\t');
        out.push_str(&kt_dec.join(" "));
        out.push('\n');
    }
    out
}

fn pos_name_of_id(id: u32) -> &'static str {
    use crate::corpus::PosTag::*;
    for tag in [Det, Noun, Verb, Adj, Adp, Num, Punct, Propn, Other] {
        if tag.id() == id {
            return tag.name();
        }
    }
    "X"
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{assemble_stage_input, generate_synthetic_corpus, GeneratorConfig, Vocab};

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn exact_matches_align_crosswise() {
        let a = align(&toks("a b"), &toks("b a"));
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn unmatched_tokens_stay_unaligned() {
        let a = align(&toks("ab zz"), &toks("ab"));
        assert_eq!(a.pairs, vec![(0, 0)]);
    }

    #[test]
    fn dice_aligns_close_words() {
        // trigrams(haus) = {hau, aus}; trigrams(hause) = {hau, aus, use}
        // Dice = 2*2 / (2+3) = 0.8
        assert!((trigram_dice("haus", "hause") - 0.8).abs() < 1e-12);
        let a = align(&toks("haus katze"), &toks("hause"));
        assert_eq!(a.pairs, vec![(0, 0)]);
    }

    #[test]
    fn short_tokens_have_no_trigrams() {
        assert_eq!(trigram_dice("ab", "ab"), 0.0);
        assert_eq!(trigram_dice("ab", "abc"), 0.0);
    }

    #[test]
    fn exact_phase_consumes_leftmost_right_tokens() {
        // both "a"s on the left take the two right "a"s in order
        let a = align(&toks("a a"), &toks("a x a"));
        assert_eq!(a.pairs, vec![(0, 0), (1, 2)]);
    }

    #[test]
    fn mt_labeling_matches_the_rule() {
        assert_eq!(
            label_mt_against_pe(&toks("der hund"), &toks("der hund")).0,
            vec![KtTag::Keep, KtTag::Keep]
        );
        assert_eq!(
            label_mt_against_pe(&toks("der katz"), &toks("der hund")).0,
            vec![KtTag::Keep, KtTag::Translate]
        );
        assert_eq!(label_mt_against_pe(&toks("x"), &toks("y")).0, vec![KtTag::Translate]);
    }

    #[test]
    fn self_labeling_is_all_keep() {
        for sent in ["der hund sieht", "a", "x y z x y"] {
            let mt = toks(sent);
            assert!(label_mt_against_pe(&mt, &mt).0.iter().all(|&t| t == KtTag::Keep));
        }
    }

    #[test]
    fn projection_follows_the_alignment() {
        // src=[a,b], mt=[b] labeled Keep, alignment {(1,0)}
        let labels = project_labels_to_src(&toks("a b"), &toks("b"), &KtLabels(vec![KtTag::Keep]));
        assert_eq!(labels.0, vec![KtTag::Translate, KtTag::Keep]);

        // fully unaligned src defaults to Translate
        let labels =
            project_labels_to_src(&toks("q w e"), &toks("zzz"), &KtLabels(vec![KtTag::Keep]));
        assert_eq!(labels.0, vec![KtTag::Translate; 3]);
    }

    #[test]
    fn decoder_labels_cover_pe() {
        assert_eq!(
            build_decoder_kt(&toks("a"), &toks("a b")).0,
            vec![KtTag::Keep, KtTag::Translate]
        );
        let pe = toks("x y");
        assert!(build_decoder_kt(&pe, &pe).0.iter().all(|&t| t == KtTag::Keep));
        assert!(build_decoder_kt(&toks("q"), &toks("x y"))
            .0
            .iter()
            .all(|&t| t == KtTag::Translate));
    }

    #[test]
    fn encoder_labels_have_full_length_and_keep_separators() {
        let ex = ApeExample::from_texts(
            "the dog sees",
            "der hund sieht",
            "der hund sieht",
            Some("der hund malt"),
        )
        .unwrap();
        let labels = build_encoder_kt(&ex).unwrap();
        assert_eq!(labels.len(), 3 + 3 + 3 + 2);
        // separator slots
        assert_eq!(labels.0[3], KtTag::Keep);
        assert_eq!(labels.0[7], KtTag::Keep);
        // mt equals pe → all Keep in the mt block
        assert!(labels.0[4..7].iter().all(|&t| t == KtTag::Keep));
        // mt_ext differs in its last token
        assert_eq!(&labels.0[8..], &[KtTag::Keep, KtTag::Keep, KtTag::Translate]);
    }

    #[test]
    fn identity_example_is_all_keep() {
        let ex = ApeExample::from_texts(
            "der hund sieht",
            "der hund sieht",
            "der hund sieht",
            Some("der hund sieht"),
        )
        .unwrap();
        let labels = build_encoder_kt(&ex).unwrap();
        assert!(labels.0.iter().all(|&t| t == KtTag::Keep));
    }

    #[test]
    fn keep_count_bounded_by_shared_tokens() {
        let corpus = generate_synthetic_corpus(3, 50, &GeneratorConfig::ape()).unwrap();
        for ex in &corpus {
            let labels = label_mt_against_pe(&ex.mt, &ex.pe);
            let keeps = labels.0.iter().filter(|&&t| t == KtTag::Keep).count();
            // multiset intersection size
            let mut pe_counts = std::collections::HashMap::new();
            for t in &ex.pe {
                *pe_counts.entry(t.clone()).or_insert(0usize) += 1;
            }
            let mut shared = 0;
            for t in &ex.mt {
                if let Some(c) = pe_counts.get_mut(t) {
                    if *c > 0 {
                        *c -= 1;
                        shared += 1;
                    }
                }
            }
            assert!(keeps <= shared, "keeps {keeps} > shared {shared}");
        }
    }

    #[test]
    fn pos_ner_tagging_uses_the_lexicon() {
        use crate::corpus::{NerTag, PosTag};
        let tags = tag_pos(&toks("der hund 42 anna unknownword"));
        assert_eq!(
            tags,
            vec![
                PosTag::Det.id(),
                PosTag::Noun.id(),
                PosTag::Num.id(),
                PosTag::Propn.id(),
                PosTag::Other.id()
            ]
        );
        let ner = tag_ner(&toks("anna berlin hund"));
        assert_eq!(ner, vec![NerTag::Per.id(), NerTag::Loc.id(), NerTag::O.id()]);
    }

    #[test]
    fn mlm_masks_exactly_the_rounded_count() {
        let ids: Vec<u32> = (6..26).collect(); // len 20, all maskable
        let m = mask_mlm(&ids, 9);
        assert_eq!(m.target_positions.len(), 3); // round(0.15 * 20)
        assert_eq!(m.target_ids.len(), 3);
        for (&p, &t) in m.target_positions.iter().zip(&m.target_ids) {
            assert_eq!(m.input_ids[p], MASK_ID);
            assert_eq!(ids[p], t);
        }
        // unmasked positions are untouched
        for i in 0..ids.len() {
            if !m.target_positions.contains(&i) {
                assert_eq!(m.input_ids[i], ids[i]);
            }
        }
    }

    #[test]
    fn mlm_is_seed_deterministic_and_skips_reserved() {
        let ids = vec![6, 3, 7, 8, 3, 9, 10, 11, 12, 13, 14, 15, 16];
        let a = mask_mlm(&ids, 77);
        let b = mask_mlm(&ids, 77);
        assert_eq!(a, b);
        for &p in &a.target_positions {
            assert!(ids[p] >= RESERVED_IDS, "reserved position {p} masked");
        }
        assert_ne!(mask_mlm(&ids, 78).target_positions.len(), 0);
    }

    #[test]
    fn single_token_input_masks_nothing() {
        let m = mask_mlm(&[9], 1);
        assert!(m.target_positions.is_empty());
        assert_eq!(m.input_ids, vec![9]);
    }

    #[test]
    fn task_batch_lengths_line_up() {
        let vocab = Vocab::synthetic();
        let corpus = generate_synthetic_corpus(17, 20, &GeneratorConfig::ape()).unwrap();
        for (i, ex) in corpus.iter().enumerate() {
            let si = assemble_stage_input(ex, Stage::FineTune, &vocab).unwrap();
            let tb = build_task_batch(ex, &si, i as u64).unwrap();
            let enc_len = si.encoder_ids.len();
            assert_eq!(tb.pos_tags.len(), enc_len);
            assert_eq!(tb.ner_tags.len(), enc_len);
            assert_eq!(tb.kt_enc.len(), enc_len);
            assert_eq!(tb.kt_dec.len(), ex.pe.len());
            assert_eq!(tb.mlm.input_ids.len(), enc_len);
        }
    }

    #[test]
    fn class_counts_expose_imbalance() {
        let vocab = Vocab::synthetic();
        let corpus = generate_synthetic_corpus(23, 200, &GeneratorConfig::ape()).unwrap();
        let batches: Vec<TaskBatch> = corpus
            .iter()
            .enumerate()
            .map(|(i, ex)| {
                let si = assemble_stage_input(ex, Stage::FineTune, &vocab).unwrap();
                build_task_batch(ex, &si, i as u64).unwrap()
            })
            .collect();
        let counts = TaskClassCounts::collect(&batches);
        let (min_pos, max_pos) = TaskClassCounts::imbalance(&counts.pos);
        assert!(min_pos > 0 && max_pos > min_pos, "POS classes should be imbalanced");
        let (min_kt, max_kt) = TaskClassCounts::imbalance(&counts.kt_enc);
        assert!(min_kt > 0 && max_kt > min_kt);
        assert_eq!(counts.ner.iter().sum::<u64>(), counts.pos.iter().sum::<u64>());
    }

    #[test]
    fn label_file_has_four_columns_per_line() {
        let vocab = Vocab::synthetic();
        let corpus = generate_synthetic_corpus(29, 5, &GeneratorConfig::ape()).unwrap();
        let batches: Vec<TaskBatch> = corpus
            .iter()
            .enumerate()
            .map(|(i, ex)| {
                let si = assemble_stage_input(ex, Stage::FineTune, &vocab).unwrap();
                build_task_batch(ex, &si, i as u64).unwrap()
            })
            .collect();
        let text = write_labels(&batches);
        let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(lines.len(), 5);
        for line in lines {
            assert_eq!(line.split('\t').count(), 4);
        }
    }
}
