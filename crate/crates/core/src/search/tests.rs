use std::sync::atomic::{AtomicUsize, Ordering};

use super::*;
use crate::embedding::{objective, Embedding, SimilarityConfig, TuningSet};
use crate::encoder::{EncoderDescriptor, ToyEncoder, Vocabulary};

fn toy(vocab_size: usize, dim: usize, seed: u64) -> ToyEncoder {
    let vocab = Vocabulary::new((0..vocab_size).map(|i| format!("v{i:02}")).collect()).unwrap();
    ToyEncoder::new(vocab, dim, seed).unwrap()
}

fn random_tuning(dim: usize, n: usize, seed: u64) -> TuningSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..dim)
                .map(|_| crate::hub::standard_normal(&mut rng) + 0.3)
                .collect();
            Embedding::new(v).unwrap()
        })
        .collect();
    TuningSet::from_embeddings(rows).unwrap()
}

fn seq(ids: &[u32]) -> TokenSequence {
    TokenSequence::new(ids.to_vec()).unwrap()
}

fn entry(text: &str, score: f64) -> BeamEntry {
    BeamEntry {
        tokens: seq(&[0]),
        text: text.into(),
        score,
    }
}

/// Exhaustive J over every sequence of `length` tokens, scored on the same
/// precomputed path the search uses so equal sequences compare bit-equal.
fn enumerate_all(enc: &ToyEncoder, tuning: &TuningSet, length: usize) -> Vec<(Vec<u32>, f64)> {
    let v = enc.vocab().unwrap().len() as u32;
    let obj = Objective::new(tuning, SimilarityConfig::cosine()).unwrap();
    let total = (v as usize).pow(length as u32);
    (0..total)
        .map(|mut code| {
            let ids: Vec<u32> = (0..length)
                .map(|_| {
                    let id = (code % v as usize) as u32;
                    code /= v as usize;
                    id
                })
                .collect();
            let j = obj.eval(&enc.encode(&seq(&ids)).unwrap()).unwrap();
            (ids, j)
        })
        .collect()
}

#[test]
fn topk_examples() {
    let out = topk_select(vec![entry("a", 0.9), entry("b", 0.5), entry("c", 0.1)], 2);
    assert_eq!(
        out.iter().map(|e| e.text.as_str()).collect::<Vec<_>>(),
        ["a", "b"]
    );

    let out = topk_select(vec![entry("x", 0.5), entry("x", 0.5 + 1e-15)], 5);
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].score, 0.5 + 1e-15);

    let out = topk_select(vec![entry("ab", 0.5), entry("aa", 0.5)], 1);
    assert_eq!(out[0].text, "aa");
}

#[test]
fn shards_cover_vocabulary() {
    for (n, c) in [(10, 3), (3, 8), (1000, 32), (1, 1)] {
        let shards = vocab_shards(n, c);
        assert_eq!(shards.first().unwrap().start, 0);
        assert_eq!(shards.last().unwrap().end, n);
        assert!(shards.windows(2).all(|w| w[0].end == w[1].start));
        assert!(shards.iter().all(|s| !s.is_empty()));
    }
}

#[test]
fn full_shard_returns_everything() {
    let enc = toy(6, 16, 1);
    let t = random_tuning(16, 5, 2);
    let obj = Objective::new(&t, SimilarityConfig::cosine()).unwrap();
    let hits = score_candidates_parallel(&seq(&[0, 1, 2]), 1, 0..6, &enc, &obj, 10).unwrap();
    assert_eq!(hits.len(), 6);
    let mut tokens: Vec<u32> = hits.iter().map(|h| h.token).collect();
    tokens.sort();
    assert_eq!(tokens, (0..6).collect::<Vec<_>>());
    assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
}

#[test]
fn shard_merge_equals_sequential_scan() {
    let enc = toy(1000, 32, 3);
    let t = random_tuning(32, 20, 4);
    let obj = Objective::new(&t, SimilarityConfig::cosine()).unwrap();
    let base = seq(&[5, 17, 999, 3]);
    let vocab = enc.vocab().unwrap();

    let sequential = score_candidates_parallel(&base, 2, 0..1000, &enc, &obj, 5).unwrap();

    let parts = vocab_shards(1000, 8)
        .into_iter()
        .map(|s| score_candidates_parallel(&base, 2, s, &enc, &obj, 5).unwrap())
        .collect();
    assert_eq!(merge_shard_results(parts, &base, 2, vocab, 5), sequential);

    let seq1 = score_candidates_parallel(&base, 0, 0..1000, &enc, &obj, 1).unwrap();
    let parts = vec![
        score_candidates_parallel(&base, 0, 0..500, &enc, &obj, 1).unwrap(),
        score_candidates_parallel(&base, 0, 500..1000, &enc, &obj, 1).unwrap(),
    ];
    let merged = merge_shard_results(parts, &base, 0, vocab, 1);
    assert_eq!(merged[0].token, seq1[0].token);
    assert_eq!(merged[0].score.to_bits(), seq1[0].score.to_bits());
}

#[test]
fn worker_rejects_bad_position_and_shard() {
    let enc = toy(4, 8, 0);
    let t = random_tuning(8, 3, 0);
    let obj = Objective::new(&t, SimilarityConfig::cosine()).unwrap();
    assert!(score_candidates_parallel(&seq(&[0, 1]), 2, 0..4, &enc, &obj, 2).is_err());
    assert!(score_candidates_parallel(&seq(&[0, 1]), 0, 2..2, &enc, &obj, 2).is_err());
    assert!(score_candidates_parallel(&seq(&[0, 1]), 0, 0..5, &enc, &obj, 2).is_err());
}

#[test]
fn single_token_vocabulary_returns_init() {
    let enc = toy(1, 8, 0);
    let t = random_tuning(8, 4, 1);
    for len in [1, 3, 6] {
        let init = seq(&vec![0; len]);
        let r = beam_local_search(
            &init,
            &t,
            &enc,
            &SimilarityConfig::cosine(),
            &SearchConfig::with_k(3, 0),
        )
        .unwrap();
        assert_eq!(r.best.tokens, init);
        assert_eq!(r.substitutions_applied, 0);
        assert_eq!(r.best.score, r.initial.score);
    }
}

#[test]
fn global_optimum_is_a_fixed_point() {
    let enc = toy(2, 8, 9);
    let t = random_tuning(8, 6, 3);
    let all = enumerate_all(&enc, &t, 2);
    let (best_ids, best_j) =
        all.iter().cloned().fold(
            (vec![], f64::NEG_INFINITY),
            |a, b| if b.1 > a.1 { b } else { a },
        );
    let r = beam_local_search(
        &seq(&best_ids),
        &t,
        &enc,
        &SimilarityConfig::cosine(),
        &SearchConfig::with_k(2, 0),
    )
    .unwrap();
    assert_eq!(r.best.tokens.ids(), best_ids.as_slice());
    assert_eq!(r.best.score, best_j);
}

#[test]
fn small_space_reaches_local_optimum() {
    // |V| = 4, length 3: all 64 sequences enumerated.
    let enc = toy(4, 16, 0);
    let t = random_tuning(16, 10, 0);
    let all = enumerate_all(&enc, &t, 3);
    let score = |ids: &[u32]| all.iter().find(|(s, _)| s == ids).unwrap().1;

    let init = vec![3u32, 3, 3];
    let global_max = all
        .iter()
        .map(|(_, j)| *j)
        .fold(f64::NEG_INFINITY, f64::max);
    let local_optima: Vec<&Vec<u32>> = all
        .iter()
        .filter(|(ids, j)| {
            (0..3).all(|p| {
                (0..4u32).all(|v| {
                    let mut n = ids.clone();
                    n[p] = v;
                    score(&n) <= *j
                })
            })
        })
        .map(|(ids, _)| ids)
        .collect();

    let r = beam_local_search(
        &seq(&init),
        &t,
        &enc,
        &SimilarityConfig::cosine(),
        &SearchConfig::with_k(4, 0),
    )
    .unwrap();
    assert!(local_optima.contains(&&r.best.tokens.ids().to_vec()));
    assert_eq!(r.best.score, global_max);
    assert!(r.best.score >= r.initial.score);
    assert_eq!(r.best.score, score(r.best.tokens.ids()));
}

#[test]
fn result_is_one_substitution_local_optimum() {
    let enc = toy(10, 12, 4);
    let t = random_tuning(12, 8, 5);
    let cfg = SimilarityConfig::cosine();
    let r = beam_local_search(
        &seq(&[1, 2, 3, 4]),
        &t,
        &enc,
        &cfg,
        &SearchConfig::with_k(3, 7),
    )
    .unwrap();
    for p in 0..4 {
        for v in 0..10 {
            let n = r.best.tokens.substitute(p, v);
            let j = objective(&enc.encode(&n).unwrap(), &t, &cfg).unwrap();
            assert!(j <= r.best.score + 1e-12);
        }
    }
    assert!(r
        .trajectory
        .windows(2)
        .all(|w| w[1].best_score >= w[0].best_score));
    assert_eq!(r.trajectory.len(), r.iterations + 1);
    assert!(r.trajectory.iter().skip(1).all(|p| p.evaluations <= 3 * 10));
}

#[test]
fn worker_count_does_not_change_results() {
    let enc = toy(16, 24, 2);
    let t = random_tuning(24, 12, 8);
    let cfg = SimilarityConfig::cosine();
    let init = seq(&[0, 1, 2, 3, 4]);
    let runs: Vec<SearchReport> = [1, 2, 8]
        .into_iter()
        .map(|w| {
            let s = SearchConfig {
                workers: w,
                ..SearchConfig::with_k(4, 11)
            };
            beam_local_search(&init, &t, &enc, &cfg, &s).unwrap()
        })
        .collect();
    for r in &runs[1..] {
        assert_eq!(r.best, runs[0].best);
        assert_eq!(r.final_beam, runs[0].final_beam);
        assert_eq!(r.trajectory, runs[0].trajectory);
    }
}

#[test]
fn greedy_and_sweep_variants_terminate() {
    let enc = toy(8, 16, 1);
    let t = random_tuning(16, 6, 1);
    let cfg = SimilarityConfig::cosine();
    let init = seq(&[0, 0, 0, 0]);
    let g = beam_local_search(&init, &t, &enc, &cfg, &SearchConfig::greedy(0)).unwrap();
    assert_eq!(g.final_beam.len(), 1);
    let s = SearchConfig {
        sweep_all_positions: true,
        ..SearchConfig::with_k(3, 0)
    };
    let sw = beam_local_search(&init, &t, &enc, &cfg, &s).unwrap();
    assert!(sw.best.score >= sw.initial.score);
}

#[test]
fn invalid_beam_size_and_guard() {
    let enc = toy(8, 16, 1);
    let t = random_tuning(16, 6, 1);
    let cfg = SimilarityConfig::cosine();
    assert!(matches!(
        beam_local_search(&seq(&[0]), &t, &enc, &cfg, &SearchConfig::with_k(0, 0)),
        Err(Error::InvalidBeamSize(0))
    ));
    let s = SearchConfig {
        max_iterations: Some(1),
        ..SearchConfig::with_k(2, 0)
    };
    assert!(matches!(
        beam_local_search(&seq(&[0, 0, 0]), &t, &enc, &cfg, &s),
        Err(Error::TimeoutAbort { limit: 1 })
    ));
}

/// Fails the first `failures` encode calls that involve token 0.
struct Flaky {
    inner: ToyEncoder,
    failures: usize,
    seen: AtomicUsize,
}

impl TextEncoder for Flaky {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn vocab(&self) -> Option<&Vocabulary> {
        self.inner.vocab()
    }
    fn encode_sequences(&self, seqs: &[TokenSequence]) -> Result<Vec<Embedding>> {
        if seqs.iter().any(|s| s.ids().contains(&0))
            && self.seen.fetch_add(1, Ordering::SeqCst) < self.failures
        {
            return Err(Error::Remote("injected failure".into()));
        }
        self.inner.encode_sequences(seqs)
    }
    fn descriptor(&self) -> EncoderDescriptor {
        self.inner.descriptor()
    }
}

#[test]
fn failed_shard_is_retried_once() {
    let t = random_tuning(16, 6, 1);
    let cfg = SimilarityConfig::cosine();
    let init = seq(&[1, 2, 3]);
    let reference =
        beam_local_search(&init, &t, &toy(8, 16, 1), &cfg, &SearchConfig::with_k(2, 0)).unwrap();
    for workers in [1, 3] {
        let flaky = Flaky {
            inner: toy(8, 16, 1),
            failures: 1,
            seen: AtomicUsize::new(0),
        };
        let s = SearchConfig {
            workers,
            ..SearchConfig::with_k(2, 0)
        };
        let r = beam_local_search(&init, &t, &flaky, &cfg, &s).unwrap();
        assert_eq!(r.best, reference.best);

        let broken = Flaky {
            inner: toy(8, 16, 1),
            failures: usize::MAX,
            seen: AtomicUsize::new(0),
        };
        assert!(matches!(
            beam_local_search(&init, &t, &broken, &cfg, &s),
            Err(Error::WorkerFailure { .. })
        ));
    }
}

#[test]
fn beam_scores_match_direct_objective() {
    let enc = toy(12, 16, 6);
    let t = random_tuning(16, 9, 6);
    let cfg = SimilarityConfig::cosine();
    let r = beam_local_search(
        &seq(&[0, 1, 2, 3]),
        &t,
        &enc,
        &cfg,
        &SearchConfig::with_k(5, 3),
    )
    .unwrap();
    for e in &r.final_beam {
        let j = objective(&enc.encode(&e.tokens).unwrap(), &t, &cfg).unwrap();
        assert!((j - e.score).abs() < 1e-9);
        assert_eq!(e.text, enc.vocab().unwrap().render(&e.tokens));
    }
}
