//! Synthetic corpus generation.
//!
//! `pe` comes from the template grammar, `src` is its bijective token
//! rename, and `mt` / `mt_ext` are independent noisy corruptions of `pe`.
//! Everything is a pure function of the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grammar::{Lexicon, Slot, TEMPLATES};
use super::{ApeExample, CorpusError};

/// Per-token edit rates used to corrupt `pe` into a simulated MT output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseProfile {
    pub substitution: f64,
    pub deletion: f64,
    pub insertion: f64,
}

impl NoiseProfile {
    pub fn new(substitution: f64, deletion: f64, insertion: f64) -> Result<Self, CorpusError> {
        for (name, r) in [
            ("substitution", substitution),
            ("deletion", deletion),
            ("insertion", insertion),
        ] {
            if !(0.0..=1.0).contains(&r) || r.is_nan() {
                return Err(CorpusError::Config(format!(
                    "{name} rate {r} outside [0, 1]"
                )));
            }
        }
        Ok(NoiseProfile { substitution, deletion, insertion })
    }

    /// Substitutions only; the normalized edit distance to `pe` then
    /// concentrates at `rate`.
    pub fn substitution_only(rate: f64) -> Result<Self, CorpusError> {
        NoiseProfile::new(rate, 0.0, 0.0)
    }

    pub fn clean() -> Self {
        NoiseProfile { substitution: 0.0, deletion: 0.0, insertion: 0.0 }
    }
}

/// What the generator produces per example.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorConfig {
    /// Noise turning `pe` into `mt`.
    pub noise: NoiseProfile,
    /// Noise for the external MT column; `None` leaves `mt_ext` empty.
    pub ext_noise: Option<NoiseProfile>,
}

impl GeneratorConfig {
    /// News-style pre-training data: mild MT noise, no external MT.
    pub fn news() -> Self {
        GeneratorConfig {
            noise: NoiseProfile { substitution: 0.08, deletion: 0.03, insertion: 0.03 },
            ext_noise: None,
        }
    }

    /// APE-style data: all four columns present.
    pub fn ape() -> Self {
        GeneratorConfig {
            noise: NoiseProfile { substitution: 0.12, deletion: 0.04, insertion: 0.04 },
            ext_noise: Some(NoiseProfile { substitution: 0.10, deletion: 0.05, insertion: 0.05 }),
        }
    }
}

fn pick_template(rng: &mut ChaCha8Rng) -> &'static [Slot] {
    let total: f64 = TEMPLATES.iter().map(|(_, w)| w).sum();
    let mut dart = rng.random::<f64>() * total;
    for (slots, w) in TEMPLATES {
        dart -= w;
        if dart <= 0.0 {
            return slots;
        }
    }
    TEMPLATES[TEMPLATES.len() - 1].0
}

fn sample_word(lex: &Lexicon, slot: Slot, rng: &mut ChaCha8Rng) -> &'static str {
    let pool = lex.pool(slot);
    pool[rng.random_range(0..pool.len())]
}

/// A random target word different from `avoid`.
fn sample_other_word(lex: &Lexicon, avoid: &str, rng: &mut ChaCha8Rng) -> &'static str {
    let words = lex.target_words();
    let i = rng.random_range(0..words.len());
    if words[i] != avoid {
        words[i]
    } else {
        words[(i + 1) % words.len()]
    }
}

fn corrupt(pe: &[String], noise: &NoiseProfile, lex: &Lexicon, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(pe.len() + 2);
    for tok in pe {
        if rng.random::<f64>() < noise.deletion {
            continue;
        }
        if rng.random::<f64>() < noise.substitution {
            out.push(sample_other_word(lex, tok, rng).to_string());
        } else {
            out.push(tok.clone());
        }
        if rng.random::<f64>() < noise.insertion {
            let words = lex.target_words();
            out.push(words[rng.random_range(0..words.len())].to_string());
        }
    }
    if out.is_empty() {
        let words = lex.target_words();
        out.push(words[rng.random_range(0..words.len())].to_string());
    }
    out
}

/// Generates `n_examples` quadruples, deterministically under `seed`.
pub fn generate_synthetic_corpus(
    seed: u64,
    n_examples: usize,
    config: &GeneratorConfig,
) -> Result<Vec<ApeExample>, CorpusError> {
    if n_examples == 0 {
        return Err(CorpusError::Config("n_examples must be >= 1".into()));
    }
    // re-validate rates so hand-built profiles are caught too
    NoiseProfile::new(config.noise.substitution, config.noise.deletion, config.noise.insertion)?;
    if let Some(e) = config.ext_noise {
        NoiseProfile::new(e.substitution, e.deletion, e.insertion)?;
    }

    let lex = Lexicon::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Vec::with_capacity(n_examples);
    for _ in 0..n_examples {
        let template = pick_template(&mut rng);
        let pe: Vec<String> = template
            .iter()
            .map(|&slot| sample_word(lex, slot, &mut rng).to_string())
            .collect();
        let src: Vec<String> = pe.iter().map(|t| lex.to_source(t).to_string()).collect();
        let mt = corrupt(&pe, &config.noise, lex, &mut rng);
        let mt_ext = config
            .ext_noise
            .as_ref()
            .map(|e| corrupt(&pe, e, lex, &mut rng));
        corpus.push(ApeExample::new(src, mt, pe, mt_ext)?);
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edit_distance(a: &[String], b: &[String]) -> usize {
        let mut prev: Vec<usize> = (0..=b.len()).collect();
        for (i, ta) in a.iter().enumerate() {
            let mut row = vec![i + 1];
            for (j, tb) in b.iter().enumerate() {
                let sub = prev[j] + usize::from(ta != tb);
                row.push(sub.min(prev[j + 1] + 1).min(row[j] + 1));
            }
            prev = row;
        }
        prev[b.len()]
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let cfg = GeneratorConfig::ape();
        let a = generate_synthetic_corpus(7, 100, &cfg).unwrap();
        let b = generate_synthetic_corpus(7, 100, &cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_corpus(8, 100, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_noise_copies_pe() {
        let cfg = GeneratorConfig {
            noise: NoiseProfile::clean(),
            ext_noise: Some(NoiseProfile::clean()),
        };
        for ex in generate_synthetic_corpus(3, 50, &cfg).unwrap() {
            assert_eq!(ex.mt, ex.pe);
            assert_eq!(ex.mt_ext.as_ref().unwrap(), &ex.pe);
        }
    }

    #[test]
    fn substitution_rate_matches_mean_edit_distance() {
        let cfg = GeneratorConfig {
            noise: NoiseProfile::substitution_only(0.2).unwrap(),
            ext_noise: None,
        };
        let corpus = generate_synthetic_corpus(11, 1000, &cfg).unwrap();
        let mean: f64 = corpus
            .iter()
            .map(|ex| edit_distance(&ex.mt, &ex.pe) as f64 / ex.pe.len() as f64)
            .sum::<f64>()
            / corpus.len() as f64;
        assert!((mean - 0.2).abs() < 0.05, "mean normalized edit distance {mean}");
    }

    #[test]
    fn src_is_the_token_rename_of_pe() {
        let lex = Lexicon::builtin();
        let corpus = generate_synthetic_corpus(5, 40, &GeneratorConfig::ape()).unwrap();
        for ex in &corpus {
            assert_eq!(ex.src.len(), ex.pe.len());
            for (s, p) in ex.src.iter().zip(&ex.pe) {
                assert_eq!(s, lex.to_source(p));
            }
        }
    }

    #[test]
    fn invalid_rates_are_config_errors() {
        assert!(NoiseProfile::new(1.5, 0.0, 0.0).is_err());
        assert!(NoiseProfile::new(0.0, -0.1, 0.0).is_err());
        assert!(NoiseProfile::new(0.0, 0.0, f64::NAN).is_err());
        assert!(generate_synthetic_corpus(1, 0, &GeneratorConfig::news()).is_err());
    }

    #[test]
    fn generated_examples_pass_the_number_filter() {
        // numbers map to themselves in src, so src and pe always agree
        let corpus = generate_synthetic_corpus(13, 300, &GeneratorConfig::ape()).unwrap();
        assert!(corpus.iter().all(super::super::number_filter));
    }
}
