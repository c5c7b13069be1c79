//! Initial hub-text candidates: ingest hypotheses produced by an external
//! inversion model (or take the best texts from a plain corpus) and pick the
//! one with the highest tuning-set objective.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{Objective, SimilarityConfig, TuningSet};
use crate::encoder::{require_vocab, TextEncoder, TokenSequence, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    InversionFile,
    CorpusFallback,
}

/// What to do with a hypothesis containing tokens outside the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnknownTokens {
    #[default]
    Strict,
    /// Drop the hypothesis and log it.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub text: String,
    pub tokens: TokenSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSet {
    pub hypotheses: Vec<Hypothesis>,
    pub provenance: Provenance,
}

impl HypothesisSet {
    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHypothesis {
    pub text: String,
    pub tokens: TokenSequence,
    pub score: f64,
}

fn tokenize_all<'a>(
    lines: impl Iterator<Item = &'a str>,
    vocab: &Vocabulary,
    mode: UnknownTokens,
) -> Result<Vec<Hypothesis>> {
    let mut out = Vec::new();
    for line in lines {
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        match vocab.tokenize(text) {
            Ok(tokens) => out.push(Hypothesis {
                text: text.to_owned(),
                tokens,
            }),
            Err(e @ Error::Tokenization { .. }) => match mode {
                UnknownTokens::Strict => return Err(e),
                UnknownTokens::Lenient => log::warn!("dropping hypothesis: {e}"),
            },
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// One hypothesis per non-blank line.
pub fn load_hypotheses(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    mode: UnknownTokens,
) -> Result<HypothesisSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let hypotheses = tokenize_all(text.lines(), vocab, mode)?;
    if hypotheses.is_empty() {
        return Err(Error::EmptyFile(path.to_owned()));
    }
    Ok(HypothesisSet {
        hypotheses,
        provenance: Provenance::InversionFile,
    })
}

/// `J` for every hypothesis, in set order.
pub fn score_hypotheses(
    set: &HypothesisSet,
    enc: &dyn TextEncoder,
    tuning: &TuningSet,
    cfg: &SimilarityConfig,
) -> Result<Vec<f64>> {
    score_sequences(
        set.hypotheses.iter().map(|h| h.tokens.clone()).collect(),
        enc,
        tuning,
        cfg,
    )
}

fn score_sequences(
    seqs: Vec<TokenSequence>,
    enc: &dyn TextEncoder,
    tuning: &TuningSet,
    cfg: &SimilarityConfig,
) -> Result<Vec<f64>> {
    if enc.dim() != tuning.dim() {
        return Err(Error::DimMismatch {
            expected: tuning.dim(),
            actual: enc.dim(),
        });
    }
    let objective = Objective::new(tuning, *cfg)?;
    enc.encode_sequences(&seqs)?
        .iter()
        .map(|e| objective.eval(e))
        .collect()
}

/// Arg-max of `J` over the set; ties go to the earliest hypothesis.
pub fn select_best_hypothesis(
    set: &HypothesisSet,
    enc: &dyn TextEncoder,
    tuning: &TuningSet,
    cfg: &SimilarityConfig,
) -> Result<ScoredHypothesis> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("hypothesis set is empty".into()));
    }
    let scores = score_hypotheses(set, enc, tuning, cfg)?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    let h = &set.hypotheses[best];
    Ok(ScoredHypothesis {
        text: h.text.clone(),
        tokens: h.tokens.clone(),
        score: scores[best],
    })
}

/// The `top_n` corpus texts by `J`, best first (stable on ties). `top_n` is
/// clamped to the corpus size.
pub fn corpus_fallback_init(
    corpus: &[String],
    enc: &dyn TextEncoder,
    tuning: &TuningSet,
    cfg: &SimilarityConfig,
    top_n: usize,
    mode: UnknownTokens,
) -> Result<Vec<ScoredHypothesis>> {
    if top_n == 0 {
        return Err(Error::InvalidArgument("top_n must be at least 1".into()));
    }
    let vocab = require_vocab(enc)?;
    let hypotheses = tokenize_all(corpus.iter().map(String::as_str), vocab, mode)?;
    if hypotheses.is_empty() {
        return Err(Error::InvalidArgument("corpus has no usable texts".into()));
    }
    let scores = score_sequences(
        hypotheses.iter().map(|h| h.tokens.clone()).collect(),
        enc,
        tuning,
        cfg,
    )?;
    let mut scored: Vec<ScoredHypothesis> = hypotheses
        .into_iter()
        .zip(scores)
        .map(|(h, score)| ScoredHypothesis {
            text: h.text,
            tokens: h.tokens,
            score,
        })
        .collect();
    scored.sort_by(|a, b| b.score.total_cmp(&a.score));
    scored.truncate(top_n);
    Ok(scored)
}

/// Wraps [`corpus_fallback_init`] output as a hypothesis set.
pub fn fallback_set(scored: &[ScoredHypothesis]) -> HypothesisSet {
    HypothesisSet {
        hypotheses: scored
            .iter()
            .map(|s| Hypothesis {
                text: s.text.clone(),
                tokens: s.tokens.clone(),
            })
            .collect(),
        provenance: Provenance::CorpusFallback,
    }
}
