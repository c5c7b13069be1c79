//! Synthetic fixtures built on [`ToyEncoder`].
//!
//! A random token sequence is planted as the hub. Each image is
//! `normalize(a * enc(hub) + b * enc(caption) + noise)` with `a > b`, so the
//! planted hub is closer to every image than that image's own caption.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::caption::{EvalPair, EvalRecord};
use crate::embedding::{normalize, Embedding, TuningSet};
use crate::encoder::{write_embeddings, TokenSequence, ToyEncoder, Vocabulary};
use crate::error::{Error, Result};
use crate::hub::standard_normal;
use crate::retrieval::QuerySet;

pub const HUMAN_SYSTEM: &str = "human";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyWorldConfig {
    pub vocab_size: usize,
    pub dim: usize,
    /// Seeds both the encoder and the fixture sampler.
    pub seed: u64,
    pub hub_len: usize,
    pub caption_len: usize,
    pub tuning_images: usize,
    pub eval_images: usize,
    /// Random texts added to the corpus besides the tuning captions.
    pub corpus_extra: usize,
    pub hypotheses: usize,
    pub hub_weight: f64,
    pub caption_weight: f64,
    /// Per-coordinate standard deviation of the image noise.
    pub noise: f64,
}

impl Default for ToyWorldConfig {
    fn default() -> Self {
        Self {
            vocab_size: 48,
            dim: 64,
            seed: 7,
            hub_len: 8,
            caption_len: 8,
            tuning_images: 64,
            eval_images: 200,
            corpus_extra: 64,
            hypotheses: 16,
            hub_weight: 1.2,
            caption_weight: 1.0,
            noise: 0.02,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyWorld {
    pub config: ToyWorldConfig,
    pub encoder: ToyEncoder,
    pub planted_hub: TokenSequence,
    pub tuning: TuningSet,
    pub tuning_captions: Vec<String>,
    /// Eval images with their captions under [`HUMAN_SYSTEM`].
    pub eval: Vec<EvalPair>,
    pub corpus: Vec<String>,
    /// Stand-in for inversion-model output.
    pub hypotheses: Vec<String>,
}

pub fn toy_vocabulary(size: usize) -> Result<Vocabulary> {
    Vocabulary::new((0..size).map(|i| format!("w{i:02}")).collect())
}

impl ToyWorld {
    pub fn generate(config: ToyWorldConfig) -> Result<Self> {
        let c = &config;
        if c.vocab_size == 0
            || c.hub_len == 0
            || c.caption_len == 0
            || c.tuning_images == 0
            || c.eval_images == 0
        {
            return Err(Error::InvalidArgument(
                "toy world sizes must be positive".into(),
            ));
        }
        if !(c.noise >= 0.0 && c.hub_weight.is_finite() && c.caption_weight.is_finite()) {
            return Err(Error::InvalidArgument(
                "toy world weights must be finite".into(),
            ));
        }
        let encoder = ToyEncoder::new(toy_vocabulary(c.vocab_size)?, c.dim, c.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let random_seq = |rng: &mut ChaCha8Rng, len: usize| {
            TokenSequence::new(
                (0..len)
                    .map(|_| rng.random_range(0..c.vocab_size as u32))
                    .collect(),
            )
        };
        let planted_hub = random_seq(&mut rng, c.hub_len)?;
        let hub_vec = encoder.encode(&planted_hub)?;

        let image_for = |rng: &mut ChaCha8Rng, caption: &TokenSequence| -> Result<Embedding> {
            let t = encoder.encode(caption)?;
            let raw: Vec<f64> = hub_vec
                .as_slice()
                .iter()
                .zip(t.as_slice())
                .map(|(h, t)| {
                    c.hub_weight * h + c.caption_weight * t + c.noise * standard_normal(rng)
                })
                .collect();
            normalize(&Embedding::new(raw)?)
        };

        let vocab = encoder_vocab(&encoder);
        let mut tuning_images = Vec::with_capacity(c.tuning_images);
        let mut tuning_captions = Vec::with_capacity(c.tuning_images);
        for _ in 0..c.tuning_images {
            let cap = random_seq(&mut rng, c.caption_len)?;
            tuning_images.push(image_for(&mut rng, &cap)?);
            tuning_captions.push(vocab.render(&cap));
        }
        let tuning = TuningSet::new(
            tuning_images,
            (0..c.tuning_images).map(|i| format!("t{i:04}")).collect(),
        )?;

        let mut eval = Vec::with_capacity(c.eval_images);
        for i in 0..c.eval_images {
            let cap = random_seq(&mut rng, c.caption_len)?;
            eval.push(EvalPair {
                image_id: format!("e{i:04}"),
                image: image_for(&mut rng, &cap)?,
                captions: BTreeMap::from([(HUMAN_SYSTEM.to_owned(), vocab.render(&cap))]),
            });
        }

        let mut corpus = tuning_captions.clone();
        for _ in 0..c.corpus_extra {
            corpus.push(vocab.render(&random_seq(&mut rng, c.caption_len)?));
        }
        let hypotheses = (0..c.hypotheses)
            .map(|_| random_seq(&mut rng, c.hub_len).map(|s| vocab.render(&s)))
            .collect::<Result<_>>()?;

        Ok(Self {
            config,
            encoder,
            planted_hub,
            tuning,
            tuning_captions,
            eval,
            corpus,
            hypotheses,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        encoder_vocab(&self.encoder)
    }

    pub fn planted_hub_text(&self) -> String {
        self.vocab().render(&self.planted_hub)
    }

    /// Eval captions as documents `d<i>`, eval images as queries `q<i>`.
    pub fn retrieval_docs(&self) -> Vec<(String, String)> {
        self.eval
            .iter()
            .enumerate()
            .map(|(i, p)| (format!("d{i:04}"), p.captions[HUMAN_SYSTEM].clone()))
            .collect()
    }

    pub fn queries(&self) -> QuerySet {
        let queries = self
            .eval
            .iter()
            .enumerate()
            .map(|(i, p)| (format!("q{i:04}"), p.image.clone()))
            .collect();
        let qrels = (0..self.eval.len())
            .map(|i| (format!("q{i:04}"), BTreeSet::from([format!("d{i:04}")])))
            .collect();
        QuerySet { queries, qrels }
    }

    /// Writes every fixture file into `dir`.
    pub fn write_fixtures(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        write("vocab.txt", lines(self.vocab().tokens()))?;
        write_embeddings(
            dir.join("tuning.tsv"),
            self.tuning.ids(),
            self.tuning.embeddings(),
        )?;
        write("corpus.txt", lines(&self.corpus))?;
        write("hypotheses.txt", lines(&self.hypotheses))?;

        let ids: Vec<String> = self.eval.iter().map(|p| p.image_id.clone()).collect();
        let images: Vec<Embedding> = self.eval.iter().map(|p| p.image.clone()).collect();
        write_embeddings(dir.join("eval_images.tsv"), &ids, &images)?;
        let mut jsonl = String::new();
        for p in &self.eval {
            let rec = EvalRecord {
                image_id: p.image_id.clone(),
                image_vec_ref: p.image_id.clone(),
                captions: p.captions.clone(),
            };
            jsonl.push_str(
                &serde_json::to_string(&rec).map_err(|e| Error::InvalidArgument(e.to_string()))?,
            );
            jsonl.push('\n');
        }
        write("eval.jsonl", jsonl)?;

        let docs = self.retrieval_docs();
        write(
            "docs.tsv",
            docs.iter().map(|(id, t)| format!("{id}\t{t}\n")).collect(),
        )?;
        let qs = self.queries();
        let qids: Vec<String> = qs.queries.iter().map(|(id, _)| id.clone()).collect();
        write_embeddings(dir.join("queries.tsv"), &qids, &images)?;
        write(
            "qrels.tsv",
            qs.qrels
                .iter()
                .flat_map(|(q, ds)| ds.iter().map(move |d| format!("{q}\t{d}\n")))
                .collect(),
        )?;
        write("planted_hub.txt", self.planted_hub_text() + "\n")
    }
}

fn encoder_vocab(enc: &ToyEncoder) -> &Vocabulary {
    crate::encoder::TextEncoder::vocab(enc).expect("toy encoder has a vocabulary")
}

fn lines(items: &[String]) -> String {
    items.iter().map(|s| format!("{s}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{objective, SimilarityConfig};

    #[test]
    fn deterministic() {
        let a = ToyWorld::generate(ToyWorldConfig::default()).unwrap();
        let b = ToyWorld::generate(ToyWorldConfig::default()).unwrap();
        assert_eq!(a.planted_hub, b.planted_hub);
        assert_eq!(a.tuning.embeddings(), b.tuning.embeddings());
        assert_eq!(a.corpus, b.corpus);
    }

    #[test]
    fn planted_hub_beats_captions_on_tuning_set() {
        let w = ToyWorld::generate(ToyWorldConfig::default()).unwrap();
        let cfg = SimilarityConfig::cosine();
        let hub = w.encoder.encode(&w.planted_hub).unwrap();
        let hub_score = objective(&hub, &w.tuning, &cfg).unwrap();
        for cap in &w.tuning_captions {
            let e = w.encoder.encode(&w.vocab().tokenize(cap).unwrap()).unwrap();
            assert!(objective(&e, &w.tuning, &cfg).unwrap() < hub_score);
        }
    }

    #[test]
    fn fixture_files() {
        let w = ToyWorld::generate(ToyWorldConfig {
            eval_images: 5,
            tuning_images: 4,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        w.write_fixtures(dir.path()).unwrap();
        let tuning = crate::encoder::load_image_fixtures(dir.path().join("tuning.tsv")).unwrap();
        assert_eq!(tuning.embeddings(), w.tuning.embeddings());
        let qrels = crate::retrieval::load_qrels(dir.path().join("qrels.tsv")).unwrap();
        assert_eq!(qrels.len(), 5);
        assert_eq!(
            Vocabulary::load(dir.path().join("vocab.txt")).unwrap(),
            *w.vocab()
        );
    }
}
