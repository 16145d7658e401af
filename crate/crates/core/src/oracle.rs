//! Exhaustive ground truth for small instances.

use num_rational::Ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{BitVector, Signal};
use crate::ensemble::SparseCode;
use crate::error::{Error, Result};
use crate::ucp::{validate_instance, DecoderState, Status};

pub const DEFAULT_CAP: usize = 24;

/// Every bit vector that reproduces the signal, as bit masks
/// (bit `k` set means `b_k = +1`), in Gray-code visiting order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SolutionSet {
    num_users: usize,
    masks: Vec<u32>,
}

fn mask_of(bits: &[i8]) -> u32 {
    bits.iter()
        .enumerate()
        .filter(|(_, &b)| b == 1)
        .fold(0u32, |m, (k, _)| m | (1 << k))
}

impl SolutionSet {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn contains(&self, bits: &BitVector) -> bool {
        bits.len() == self.num_users && self.masks.contains(&mask_of(bits.values()))
    }

    pub fn solutions(&self) -> impl Iterator<Item = BitVector> + '_ {
        self.masks.iter().map(move |&m| {
            BitVector::new(
                (0..self.num_users)
                    .map(|k| if m >> k & 1 == 1 { 1 } else { -1 })
                    .collect(),
            )
            .expect("spins")
        })
    }

    /// The common value of `var` across all solutions, if they agree.
    pub fn agreed_value(&self, var: usize) -> Option<i8> {
        let first = self.masks.first()? >> var & 1;
        self.masks
            .iter()
            .all(|m| m >> var & 1 == first)
            .then_some(if first == 1 { 1 } else { -1 })
    }
}

/// Enumerates all `2^K` bit vectors in Gray-code order, keeping a running
/// count of chips whose value does not match.
pub fn enumerate_solutions(code: &SparseCode, signal: &Signal, cap: usize) -> Result<SolutionSet> {
    let k = code.num_users();
    let cap = cap.min(31);
    if k > cap {
        return Err(Error::TooLarge { users: k, cap });
    }
    if signal.y.len() != code.num_chips() {
        return Err(Error::LengthMismatch {
            expected: code.num_chips(),
            actual: signal.y.len(),
        });
    }
    let mut bits = vec![-1i32; k];
    let mut current: Vec<i32> = (0..code.num_chips())
        .map(|c| code.chip(c).map(|(_, s)| -i32::from(s)).sum())
        .collect();
    let mut mismatched = current
        .iter()
        .zip(&signal.y)
        .filter(|(a, b)| a != b)
        .count();
    let mut masks = Vec::new();
    let mut mask = 0u32;
    if mismatched == 0 {
        masks.push(mask);
    }
    for i in 1u64..(1u64 << k) {
        let flip = i.trailing_zeros() as usize;
        bits[flip] = -bits[flip];
        mask ^= 1 << flip;
        for (chip, sign) in code.user(flip) {
            let before = current[chip] == signal.y[chip];
            current[chip] += 2 * i32::from(sign) * bits[flip];
            let after = current[chip] == signal.y[chip];
            match (before, after) {
                (true, false) => mismatched += 1,
                (false, true) => mismatched -= 1,
                _ => {}
            }
        }
        if mismatched == 0 {
            masks.push(mask);
        }
    }
    Ok(SolutionSet { num_users: k, masks })
}

/// Outcome of replaying the decoder against the exhaustive solution set.
#[derive(Clone, Debug, PartialEq)]
pub struct VerificationReport {
    pub num_solutions: usize,
    pub status: Status,
    pub forced_steps: usize,
    /// First violated check as `(step, description)`; `None` means PASS.
    pub failure: Option<(usize, String)>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

/// Replays the decoder with `seed` and checks it against every solution:
/// each decimation before the first guess must match the value all
/// solutions agree on, a run without guesses must land on the unique
/// solution, and a run without contradictions must land in the set.
pub fn verify_deterministic_phase(
    code: &SparseCode,
    signal: &Signal,
    seed: u64,
    truth: Option<&BitVector>,
) -> Result<VerificationReport> {
    validate_instance(code, signal)?;
    let solutions = enumerate_solutions(code, signal, DEFAULT_CAP)?;
    let mut state = DecoderState::new(code, signal)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failure: Option<(usize, String)> = None;
    let mut forced_steps = 0usize;
    let mut guessed = false;
    let mut step = 0usize;

    if let Some(t) = truth {
        if !solutions.contains(t) {
            failure = Some((0, "transmitted bits are not a solution".into()));
        }
    }

    while let Some(d) = state.step(&mut rng) {
        step += 1;
        guessed |= d.guessed;
        if guessed || failure.is_some() {
            continue;
        }
        forced_steps += 1;
        match solutions.agreed_value(d.variable) {
            Some(v) if v == d.value => {}
            Some(v) => {
                failure = Some((
                    step,
                    format!("forced u{} = {} but every solution has {}", d.variable, d.value, v),
                ))
            }
            None => {
                failure = Some((
                    step,
                    format!("forced u{} = {} but solutions disagree on it", d.variable, d.value),
                ))
            }
        }
    }

    let estimate = BitVector::new(state.assignment().to_vec()).expect("complete run");
    let contradictions = state.contradictions();
    let status = if contradictions > 0 {
        Status::Approximate
    } else if state.guesses() == 0 {
        Status::UniqueJo
    } else {
        Status::JoWithGuesses
    };
    if failure.is_none() {
        if status == Status::UniqueJo && solutions.len() != 1 {
            failure = Some((
                step,
                format!("no guesses were made but {} solutions exist", solutions.len()),
            ));
        } else if contradictions == 0 && !solutions.contains(&estimate) {
            failure = Some((step, "contradiction-free estimate is not a solution".into()));
        }
    }
    Ok(VerificationReport {
        num_solutions: solutions.len(),
        status,
        forced_steps,
        failure,
    })
}

/// Probability that a degenerate chip of length `l` becomes extremal when one
/// of its variables, correctly assigned, is removed. Counted over all `2^l`
/// literal patterns.
pub fn z_factor_oracle(l: usize) -> Result<Ratio<i64>> {
    if !(2..=16).contains(&l) {
        return Err(Error::invalid(format!("clause length {l} outside 2..=16")));
    }
    let mut degenerate = 0i64;
    let mut hits = 0i64;
    for pattern in 0u32..(1 << l) {
        let y = 2 * pattern.count_ones() as i64 - l as i64;
        if y.abs() == l as i64 {
            continue;
        }
        degenerate += 1;
        for removed in 0..l {
            let literal = if pattern >> removed & 1 == 1 { 1 } else { -1 };
            if (y - literal).abs() == l as i64 - 1 {
                hits += 1;
            }
        }
    }
    // each degenerate pattern and each removed position weigh 1/(count) and 1/l
    Ok(Ratio::new(hits, degenerate * l as i64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instance_a_has_one_solution() {
        let code =
            SparseCode::explicit(3, 2, &[(0, 0, 1), (0, 1, 1), (0, 2, 1), (1, 0, 1), (1, 1, -1)]).unwrap();
        let set = enumerate_solutions(&code, &Signal::noiseless(vec![1, 0]), DEFAULT_CAP).unwrap();
        let sols: Vec<_> = set.solutions().map(|b| b.values().to_vec()).collect();
        assert_eq!(sols, vec![vec![1, 1, -1]]);
    }

    #[test]
    fn single_user_chip() {
        let code = SparseCode::explicit(1, 1, &[(0, 0, 1)]).unwrap();
        let set = enumerate_solutions(&code, &Signal::noiseless(vec![1]), DEFAULT_CAP).unwrap();
        let sols: Vec<_> = set.solutions().map(|b| b.values().to_vec()).collect();
        assert_eq!(sols, vec![vec![1]]);
    }

    #[test]
    fn degenerate_pair_has_two_solutions() {
        let code = SparseCode::explicit(2, 1, &[(0, 0, 1), (0, 1, 1)]).unwrap();
        let set = enumerate_solutions(&code, &Signal::noiseless(vec![0]), DEFAULT_CAP).unwrap();
        let mut sols: Vec<_> = set.solutions().map(|b| b.values().to_vec()).collect();
        sols.sort();
        assert_eq!(sols, vec![vec![-1, 1], vec![1, -1]]);
        assert_eq!(set.agreed_value(0), None);
    }

    #[test]
    fn cap_enforced() {
        let code = SparseCode::explicit(5, 1, &[]).unwrap();
        assert!(matches!(
            enumerate_solutions(&code, &Signal::noiseless(vec![0]), 4),
            Err(Error::TooLarge { users: 5, cap: 4 })
        ));
    }

    #[test]
    fn small_z_values() {
        assert_eq!(z_factor_oracle(2).unwrap(), Ratio::from_integer(1));
        assert_eq!(z_factor_oracle(3).unwrap(), Ratio::new(1, 3));
        assert_eq!(z_factor_oracle(4).unwrap(), Ratio::new(1, 7));
        assert!(z_factor_oracle(1).is_err());
        assert!(z_factor_oracle(17).is_err());
    }
}
