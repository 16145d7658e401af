//! Noiseless multi-access channel and chip erasures.

use std::io::{Read, Write};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::SparseCode;
use crate::error::{Error, Result};

/// Where a bit vector came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Random { seed: u64 },
    Explicit,
}

/// BPSK bits `b_k ∈ {-1, +1}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitVector {
    values: Vec<i8>,
    provenance: Provenance,
}

impl BitVector {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|&b| b != 1 && b != -1) {
            return Err(Error::invalid(format!(
                "bit {pos} has value {}, expected +1 or -1",
                values[pos]
            )));
        }
        Ok(BitVector {
            values,
            provenance: Provenance::Explicit,
        })
    }

    /// Uniform random bits.
    pub fn random(len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..len)
            .map(|_| if rng.random::<bool>() { 1 } else { -1 })
            .collect();
        BitVector {
            values,
            provenance: Provenance::Random { seed },
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn negated(&self) -> BitVector {
        BitVector {
            values: self.values.iter().map(|b| -b).collect(),
            provenance: Provenance::Explicit,
        }
    }

    pub fn write_json<W: Write>(&self, writer: W) -> serde_json::Result<()> {
        serde_json::to_writer(
            writer,
            &BitsFile {
                num_users: self.values.len(),
                bits: self.values.clone(),
            },
        )
    }

    pub fn read_json<R: Read>(reader: R) -> std::result::Result<BitVector, String> {
        let file: BitsFile = serde_json::from_reader(reader).map_err(|e| e.to_string())?;
        if file.bits.len() != file.num_users {
            return Err(format!(
                "header says K = {} but {} bits are listed",
                file.num_users,
                file.bits.len()
            ));
        }
        BitVector::new(file.bits).map_err(|e| e.to_string())
    }
}

impl std::ops::Index<usize> for BitVector {
    type Output = i8;

    fn index(&self, k: usize) -> &i8 {
        &self.values[k]
    }
}

#[derive(Serialize, Deserialize)]
struct BitsFile {
    #[serde(rename = "K")]
    num_users: usize,
    bits: Vec<i8>,
}

/// Chip signals `y_μ`, one per chip of the paired code.
///
/// After erasure surgery the signal only covers the surviving chips and
/// `erased` lists the original indices of the removed ones.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Signal {
    pub y: Vec<i32>,
    pub erased: Vec<usize>,
}

impl Signal {
    pub fn noiseless(y: Vec<i32>) -> Self {
        Signal { y, erased: Vec::new() }
    }

    pub fn num_chips(&self) -> usize {
        self.y.len()
    }

    pub fn negated(&self) -> Signal {
        Signal {
            y: self.y.iter().map(|v| -v).collect(),
            erased: self.erased.clone(),
        }
    }

    pub fn write_json<W: Write>(&self, writer: W) -> serde_json::Result<()> {
        serde_json::to_writer(
            writer,
            &SignalFile {
                num_chips: self.y.len(),
                y: self.y.clone(),
                erased: self.erased.clone(),
            },
        )
    }

    pub fn read_json<R: Read>(reader: R) -> std::result::Result<Signal, String> {
        let file: SignalFile = serde_json::from_reader(reader).map_err(|e| e.to_string())?;
        if file.y.len() != file.num_chips {
            return Err(format!(
                "header says M = {} but {} chip values are listed",
                file.num_chips,
                file.y.len()
            ));
        }
        Ok(Signal {
            y: file.y,
            erased: file.erased,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SignalFile {
    #[serde(rename = "M")]
    num_chips: usize,
    y: Vec<i32>,
    #[serde(default)]
    erased: Vec<usize>,
}

/// `y_μ = Σ_k s_μk b_k`, exact integer arithmetic.
pub fn transmit(code: &SparseCode, bits: &BitVector) -> Result<Signal> {
    if bits.len() != code.num_users() {
        return Err(Error::LengthMismatch {
            expected: code.num_users(),
            actual: bits.len(),
        });
    }
    let y = (0..code.num_chips())
        .map(|chip| {
            code.chip(chip)
                .map(|(user, sign)| i32::from(sign) * i32::from(bits[user]))
                .sum()
        })
        .collect();
    Ok(Signal::noiseless(y))
}

/// Deletes `round(fraction * M)` uniformly chosen chips from both the code
/// and the signal.
///
/// The result is a self-consistent smaller instance whose signal records the
/// original indices of the erased chips.
pub fn apply_erasure(
    code: &SparseCode,
    signal: &Signal,
    fraction: f64,
    seed: u64,
) -> Result<(SparseCode, Signal)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(format!(
            "erasure fraction must lie in [0, 1), got {fraction}"
        )));
    }
    if !signal.erased.is_empty() {
        return Err(Error::invalid("signal has already been through erasure"));
    }
    if signal.y.len() != code.num_chips() {
        return Err(Error::LengthMismatch {
            expected: code.num_chips(),
            actual: signal.y.len(),
        });
    }
    let m = code.num_chips();
    let count = (fraction * m as f64).round() as usize;
    if count == 0 {
        return Ok((code.clone(), signal.clone()));
    }
    if count >= m {
        return Err(Error::invalid(format!(
            "erasure fraction {fraction} would remove all {m} chips"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut erased = index::sample(&mut rng, m, count).into_vec();
    erased.sort_unstable();
    let reduced = code.remove_chips(&erased)?;
    let mut gone = vec![false; m];
    for &c in &erased {
        gone[c] = true;
    }
    let y = signal
        .y
        .iter()
        .zip(&gone)
        .filter(|(_, &g)| !g)
        .map(|(&v, _)| v)
        .collect();
    Ok((reduced, Signal { y, erased }))
}

/// Pairs a code read from disk with a signal that may have gone through
/// erasure: when the signal lists erased chips and covers only the
/// survivors, the same chips are cut from the code.
pub fn observed_instance(code: &SparseCode, signal: &Signal) -> Result<(SparseCode, Signal)> {
    if signal.erased.is_empty() {
        if signal.y.len() != code.num_chips() {
            return Err(Error::LengthMismatch {
                expected: code.num_chips(),
                actual: signal.y.len(),
            });
        }
        return Ok((code.clone(), signal.clone()));
    }
    let expected = code.num_chips().saturating_sub(signal.erased.len());
    if signal.y.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: signal.y.len(),
        });
    }
    Ok((code.remove_chips(&signal.erased)?, signal.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{degree_stats, sample_regular};

    fn three_chip_code() -> SparseCode {
        SparseCode::explicit(3, 3, &[(0, 0, 1), (1, 0, 1), (1, 1, 1), (2, 1, 1), (2, 2, -1)]).unwrap()
    }

    #[test]
    fn hand_evaluated_signal() {
        let bits = BitVector::new(vec![1, 1, -1]).unwrap();
        let signal = transmit(&three_chip_code(), &bits).unwrap();
        assert_eq!(signal.y, vec![1, 2, 2]);
        assert!(signal.erased.is_empty());
    }

    #[test]
    fn single_chip_identity() {
        let code = SparseCode::explicit(1, 1, &[(0, 0, 1)]).unwrap();
        let signal = transmit(&code, &BitVector::new(vec![1]).unwrap()).unwrap();
        assert_eq!(signal.y, vec![1]);
    }

    #[test]
    fn length_mismatch_rejected() {
        let bits = BitVector::new(vec![1, 1]).unwrap();
        assert!(matches!(
            transmit(&three_chip_code(), &bits),
            Err(Error::LengthMismatch { expected: 3, actual: 2 })
        ));
        assert!(BitVector::new(vec![1, 0]).is_err());
    }

    #[test]
    fn zero_erasure_is_identity() {
        let code = sample_regular(200, 1.0, 3.0, 4).unwrap();
        let signal = transmit(&code, &BitVector::random(200, 5)).unwrap();
        let (c2, s2) = apply_erasure(&code, &signal, 0.0, 6).unwrap();
        assert_eq!(c2, code);
        assert_eq!(s2, signal);
        assert!(apply_erasure(&code, &signal, 1.0, 6).is_err());
        assert!(apply_erasure(&code, &signal, -0.1, 6).is_err());
    }

    #[test]
    fn erasure_breaks_regularity_and_stays_consistent() {
        let code = sample_regular(2000, 1.0, 3.0, 4).unwrap();
        let bits = BitVector::random(2000, 5);
        let signal = transmit(&code, &bits).unwrap();
        let (c2, s2) = apply_erasure(&code, &signal, 0.1, 6).unwrap();
        assert_eq!(s2.erased.len(), 200);
        assert_eq!(c2.num_chips(), 1800);
        let stats = degree_stats(&c2);
        assert!(stats.user_hist[2] > 0);
        assert_eq!(transmit(&c2, &bits).unwrap().y, s2.y);
        // the file-side pairing reproduces the same instance
        let (c3, s3) = observed_instance(&code, &s2).unwrap();
        assert_eq!(c3, c2);
        assert_eq!(s3, s2);
    }

    #[test]
    fn signal_file_round_trip() {
        let s = Signal { y: vec![1, -2, 0], erased: vec![4] };
        let mut buf = Vec::new();
        s.write_json(&mut buf).unwrap();
        assert_eq!(std::str::from_utf8(&buf).unwrap(), r#"{"M":3,"y":[1,-2,0],"erased":[4]}"#);
        assert_eq!(Signal::read_json(&buf[..]).unwrap(), s);
    }
}
