//! Pairwise-mask secure aggregation over the ring Z/2^64.
//!
//! Parameters are encoded as fixed-point integers `round(x·2^f) mod 2^64`.
//! For every unordered participant pair `i < j` the simulator deals a seed
//! `s_ij`; client `i` adds `PRG(s_ij)` for every `j > i` and subtracts
//! `PRG(s_ji)` for every `j < i`. Summing all masked vectors cancels the masks
//! exactly, so the server learns only the modular sum.
//!
//! The PRG is [`CounterPrg`]: word `k` of the stream for seed `s` is the
//! SplitMix64 output `mix64(s + (k+1)·0x9E3779B97F4A7C15)`.
//!
//! There is no dropout recovery: if a masked participant fails to submit,
//! aggregation aborts and the caller must open a new session over survivors.
//!
//! Wire layout of a [`MaskedUpdate`] (all little-endian `u64`):
//! `round, client_id, length, fraction_bits, word[0], .., word[length-1]`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::ParamVec;
use crate::rng::{derive_seed, CounterPrg, Purpose};

pub const DEFAULT_FRACTION_BITS: u32 = 24;
pub const MIN_FRACTION_BITS: u32 = 8;
pub const MAX_FRACTION_BITS: u32 = 30;

/// Fixed-point encoding of a parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedVec {
    pub values: Vec<u64>,
    pub fraction_bits: u32,
}

fn check_bits(f: u32) -> Result<()> {
    if !(MIN_FRACTION_BITS..=MAX_FRACTION_BITS).contains(&f) {
        return Err(Error::Param(format!(
            "fraction_bits must be in [{MIN_FRACTION_BITS}, {MAX_FRACTION_BITS}], got {f}"
        )));
    }
    Ok(())
}

/// Encodes `x ↦ round(x·2^f) mod 2^64`. Requires `|x| < 2^(63-f)`.
pub fn quantize(vec: &ParamVec, fraction_bits: u32) -> Result<QuantizedVec> {
    quantize_values(&vec.values, fraction_bits)
}

/// [`quantize`] on a bare slice.
pub fn quantize_values(values: &[f64], fraction_bits: u32) -> Result<QuantizedVec> {
    check_bits(fraction_bits)?;
    let scale = (fraction_bits as f64).exp2();
    let limit = ((63 - fraction_bits) as f64).exp2();
    let values = values
        .iter()
        .enumerate()
        .map(|(index, &x)| {
            if !x.is_finite() || x.abs() >= limit {
                return Err(Error::Overflow { index, value: x });
            }
            Ok((x * scale).round() as i64 as u64)
        })
        .collect::<Result<_>>()?;
    Ok(QuantizedVec { values, fraction_bits })
}

/// Inverse of [`quantize`] into the given layout's values.
pub fn dequantize(q: &QuantizedVec, like: &ParamVec) -> Result<ParamVec> {
    like.with_values(decode_words(&q.values, q.fraction_bits, 1))
}

/// Decodes `q` and divides every coordinate by `divisor` (1 for plain decoding).
pub fn decode_words(words: &[u64], fraction_bits: u32, divisor: usize) -> Vec<f64> {
    let scale = (fraction_bits as f64).exp2();
    words
        .iter()
        .map(|&w| w as i64 as f64 / scale / divisor as f64)
        .collect()
}

/// Per-round masking state shared by the simulator and every participant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSession {
    pub round: u64,
    /// Sorted, unique.
    pub participants: Vec<usize>,
    /// Keyed by `(i, j)` with `i < j`.
    pub pair_seeds: BTreeMap<(usize, usize), u64>,
    pub fraction_bits: u32,
}

impl MaskSession {
    /// Deals pair seeds from `(master_seed, round, attempt, i, j)`. A retry after
    /// an abort uses a new `attempt` so its masks are fresh.
    pub fn new(master_seed: u64, round: u64, attempt: u64, participants: &[usize], fraction_bits: u32) -> Result<Self> {
        check_bits(fraction_bits)?;
        let mut ids = participants.to_vec();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != participants.len() {
            return Err(Error::Param("duplicate participant id".into()));
        }
        let session_key = derive_seed(master_seed, Purpose::MaskPair, round, attempt);
        let mut pair_seeds = BTreeMap::new();
        for (a, &i) in ids.iter().enumerate() {
            for &j in &ids[a + 1..] {
                pair_seeds.insert((i, j), derive_seed(session_key, Purpose::MaskPair, i as u64, j as u64));
            }
        }
        Ok(Self {
            round,
            participants: ids,
            pair_seeds,
            fraction_bits,
        })
    }

    pub fn contains(&self, client: usize) -> bool {
        self.participants.binary_search(&client).is_ok()
    }
}

/// One client's masked submission.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedUpdate {
    pub round: u64,
    pub client_id: usize,
    pub fraction_bits: u32,
    pub words: Vec<u64>,
}

impl MaskedUpdate {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 * (4 + self.words.len()));
        for h in [
            self.round,
            self.client_id as u64,
            self.words.len() as u64,
            self.fraction_bits as u64,
        ] {
            out.extend_from_slice(&h.to_le_bytes());
        }
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if !bytes.len().is_multiple_of(8) || bytes.len() < 32 {
            return Err(Error::ProtocolAbort(format!("malformed message of {} bytes", bytes.len())));
        }
        let words: Vec<u64> = bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let len = words[2] as usize;
        if words.len() != 4 + len {
            return Err(Error::ProtocolAbort(format!(
                "header announces {len} words, body has {}",
                words.len() - 4
            )));
        }
        Ok(Self {
            round: words[0],
            client_id: words[1] as usize,
            fraction_bits: words[3] as u32,
            words: words[4..].to_vec(),
        })
    }
}

/// Adds the client's pairwise masks to its quantized vector.
pub fn mask(qvec: &QuantizedVec, client_id: usize, session: &MaskSession) -> Result<MaskedUpdate> {
    if !session.contains(client_id) {
        return Err(Error::UnknownParticipant(client_id));
    }
    if qvec.fraction_bits != session.fraction_bits {
        return Err(Error::Param(format!(
            "vector uses {} fraction bits, session {}",
            qvec.fraction_bits, session.fraction_bits
        )));
    }
    let mut words = qvec.values.clone();
    for &other in &session.participants {
        if other == client_id {
            continue;
        }
        let (lo, hi) = if client_id < other { (client_id, other) } else { (other, client_id) };
        let prg = CounterPrg::new(session.pair_seeds[&(lo, hi)]);
        if client_id < other {
            for (w, m) in words.iter_mut().zip(prg.words(qvec.values.len())) {
                *w = w.wrapping_add(m);
            }
        } else {
            for (w, m) in words.iter_mut().zip(prg.words(qvec.values.len())) {
                *w = w.wrapping_sub(m);
            }
        }
    }
    Ok(MaskedUpdate {
        round: session.round,
        client_id,
        fraction_bits: session.fraction_bits,
        words,
    })
}

/// Modular sum of the masked submissions. Aborts unless exactly the session's
/// participants contributed, once each, for this round.
pub fn aggregate_masked(masked: &[MaskedUpdate], session: &MaskSession) -> Result<QuantizedVec> {
    let mut ids: Vec<usize> = masked.iter().map(|m| m.client_id).collect();
    ids.sort_unstable();
    if ids != session.participants {
        let missing: Vec<_> = session.participants.iter().filter(|p| !ids.contains(p)).collect();
        return Err(Error::ProtocolAbort(format!(
            "contributors {ids:?} do not match session participants {:?} (missing {missing:?})",
            session.participants
        )));
    }
    let len = masked.first().map_or(0, |m| m.words.len());
    let mut sum = vec![0u64; len];
    for m in masked {
        if m.round != session.round || m.fraction_bits != session.fraction_bits {
            return Err(Error::ProtocolAbort(format!("client {} submitted for a different session", m.client_id)));
        }
        if m.words.len() != len {
            return Err(Error::ProtocolAbort(format!("client {} sent {} words, expected {len}", m.client_id, m.words.len())));
        }
        for (s, w) in sum.iter_mut().zip(&m.words) {
            *s = s.wrapping_add(*w);
        }
    }
    Ok(QuantizedVec {
        values: sum,
        fraction_bits: session.fraction_bits,
    })
}

/// quantize → mask → aggregate → dequantize → divide by participant count.
/// `updates` pairs each client id with its parameter vector.
pub fn secure_mean(updates: &[(usize, ParamVec)], session: &MaskSession) -> Result<ParamVec> {
    let (_, first) = updates
        .first()
        .ok_or_else(|| Error::Param("secure_mean of an empty update list".into()))?;
    let masked = updates
        .iter()
        .map(|(id, v)| {
            if v.layout != first.layout {
                return Err(Error::Shape(format!("client {id} has a different parameter layout")));
            }
            mask(&quantize(v, session.fraction_bits)?, *id, session)
        })
        .collect::<Result<Vec<_>>>()?;
    let sum = aggregate_masked(&masked, session)?;
    first.with_values(decode_words(&sum.values, sum.fraction_bits, updates.len()))
}
