use super::{EncoderDescriptor, EncoderKind, TextEncoder, TokenSequence, Vocabulary};
use crate::embedding::{norm, Embedding, NORM_TOLERANCE};
use crate::error::{Error, Result};

/// Deterministic stand-in for a real text encoder.
///
/// Every token id owns a pseudo-random unit vector derived from
/// `(seed, id)` with SplitMix64. A sequence is encoded as the normalised sum
/// of its token vectors, each weighted by `1 + sin(p + 1) / 2` for its
/// position `p`, so token order matters.
#[derive(Debug, Clone)]
pub struct ToyEncoder {
    vocab: Vocabulary,
    dim: usize,
    seed: u64,
    table: Vec<f64>,
}

impl ToyEncoder {
    pub fn new(vocab: Vocabulary, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "toy encoder dim must be positive".into(),
            ));
        }
        let mut table = Vec::with_capacity(vocab.len() * dim);
        for id in 0..vocab.len() as u64 {
            table.extend(token_vector(seed, id, dim));
        }
        Ok(Self {
            vocab,
            dim,
            seed,
            table,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Unit vector assigned to token `id`.
    pub fn token_vector(&self, id: u32) -> &[f64] {
        let start = id as usize * self.dim;
        &self.table[start..start + self.dim]
    }

    pub fn position_weight(position: usize) -> f64 {
        1.0 + 0.5 * ((position + 1) as f64).sin()
    }

    pub fn encode(&self, seq: &TokenSequence) -> Result<Embedding> {
        self.vocab.check(seq)?;
        let mut acc = vec![0.0; self.dim];
        for (p, &id) in seq.ids().iter().enumerate() {
            let w = Self::position_weight(p);
            for (a, t) in acc.iter_mut().zip(self.token_vector(id)) {
                *a += w * t;
            }
        }
        let n = norm(&acc);
        if n <= NORM_TOLERANCE {
            return Err(Error::ZeroNorm { norm: n });
        }
        acc.iter_mut().for_each(|a| *a /= n);
        Embedding::new(acc)
    }
}

impl TextEncoder for ToyEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn vocab(&self) -> Option<&Vocabulary> {
        Some(&self.vocab)
    }

    fn encode_sequences(&self, seqs: &[TokenSequence]) -> Result<Vec<Embedding>> {
        seqs.iter().map(|s| self.encode(s)).collect()
    }

    fn descriptor(&self) -> EncoderDescriptor {
        EncoderDescriptor {
            kind: EncoderKind::ToyHash,
            dim: self.dim,
            vocab_size: Some(self.vocab.len()),
            seed: Some(self.seed),
            model: None,
            endpoint: None,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit_interval(state: &mut u64) -> f64 {
    // 53 random mantissa bits, shifted into (0, 1].
    ((splitmix64(state) >> 11) as f64 + 1.0) / (1u64 << 53) as f64
}

fn token_vector(seed: u64, id: u64, dim: usize) -> Vec<f64> {
    let mut key = seed;
    let mut state = splitmix64(&mut key) ^ id.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    splitmix64(&mut state);
    let mut v: Vec<f64> = (0..dim)
        .map(|_| {
            let u1 = unit_interval(&mut state);
            let u2 = unit_interval(&mut state);
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect();
    let n = norm(&v);
    if n > NORM_TOLERANCE {
        v.iter_mut().for_each(|x| *x /= n);
    } else {
        v[0] = 1.0;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::cosine;

    fn encoder(size: usize, dim: usize, seed: u64) -> ToyEncoder {
        let vocab = Vocabulary::new((0..size).map(|i| format!("t{i}")).collect()).unwrap();
        ToyEncoder::new(vocab, dim, seed).unwrap()
    }

    #[test]
    fn deterministic() {
        let seq = TokenSequence::new(vec![3, 1, 4, 1, 5]).unwrap();
        let a = encoder(8, 32, 7).encode(&seq).unwrap();
        let b = encoder(8, 32, 7).encode(&seq).unwrap();
        assert_eq!(a, b);
        let c = encoder(8, 32, 8).encode(&seq).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn token_vectors_are_pinned() {
        // Values from an independent reimplementation of the hashing scheme.
        let cases: [(u64, u32, &[f64]); 2] = [
            (
                0,
                0,
                &[
                    -0.46257201346345417,
                    0.15670415819562963,
                    0.2540123699338834,
                    -0.8348345076032357,
                ],
            ),
            (
                3,
                5,
                &[
                    -0.12460110895619517,
                    -0.9550941505551508,
                    -0.26883029446515405,
                ],
            ),
        ];
        for (seed, id, want) in cases {
            let e = encoder(8, want.len(), seed);
            for (a, b) in e.token_vector(id).iter().zip(want) {
                assert!((a - b).abs() < 1e-12, "seed {seed} id {id}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn singleton_is_token_vector() {
        let e = encoder(8, 16, 3);
        let out = e.encode(&TokenSequence::new(vec![5]).unwrap()).unwrap();
        for (a, b) in out.as_slice().iter().zip(e.token_vector(5)) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn order_matters() {
        let e = encoder(8, 64, 0);
        let ab = e.encode(&TokenSequence::new(vec![0, 1]).unwrap()).unwrap();
        let ba = e.encode(&TokenSequence::new(vec![1, 0]).unwrap()).unwrap();
        assert!(cosine(&ab, &ba).unwrap() < 1.0 - 1e-6);
    }

    #[test]
    fn out_of_range_token() {
        let e = encoder(4, 8, 0);
        assert!(matches!(
            e.encode(&TokenSequence::new(vec![4]).unwrap()),
            Err(Error::TokenOutOfRange { .. })
        ));
    }

    #[test]
    fn dims_are_constant_and_finite() {
        let e = encoder(50, 24, 11);
        let mut state = 99u64;
        for _ in 0..100 {
            let len = 1 + (splitmix64(&mut state) % 12) as usize;
            let ids = (0..len)
                .map(|_| (splitmix64(&mut state) % 50) as u32)
                .collect();
            let out = e.encode(&TokenSequence::new(ids).unwrap()).unwrap();
            assert_eq!(out.dim(), 24);
            assert!(out.as_slice().iter().all(|v| v.is_finite()));
        }
    }
}
