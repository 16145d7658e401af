//! Sparse random spreading codes.
//!
//! A code is a signed bipartite incidence between `K` users and `M` chips,
//! stored twice in compressed form: once grouped by chip and once grouped by
//! user. Two ensembles are provided. In the Poissonian ensemble every
//! (chip, user) pair carries an entry independently with probability `C/M`;
//! in the regular ensemble every user picks exactly `C` distinct chips
//! (fractional `C` mixes users of degree `floor(C)` and `floor(C) + 1`).
//! Either way the load is `beta = K / M` and the mean chip degree is
//! `L = C * beta`.

use std::io::{Read, Write};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which ensemble an instance was drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ensemble {
    Poisson,
    Regular,
    /// Built by hand from an explicit entry list.
    Explicit,
}

impl std::str::FromStr for Ensemble {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poisson" => Ok(Ensemble::Poisson),
            "regular" => Ok(Ensemble::Regular),
            "explicit" => Ok(Ensemble::Explicit),
            other => Err(Error::invalid(format!(
                "unknown ensemble '{other}' (expected poisson or regular)"
            ))),
        }
    }
}

impl std::fmt::Display for Ensemble {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Ensemble::Poisson => "poisson",
            Ensemble::Regular => "regular",
            Ensemble::Explicit => "explicit",
        })
    }
}

/// One nonzero code entry `s[chip][user] = sign`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Entry {
    pub chip: u32,
    pub user: u32,
    pub sign: i8,
}

/// Parameters an instance was generated with.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeMeta {
    pub ensemble: Ensemble,
    /// Nominal load as requested.
    pub load: f64,
    /// Nominal user degree `C`.
    pub degree: f64,
    pub seed: u64,
}

/// Signed sparse incidence of `K` users on `M` chips with chip-major and
/// user-major views of the same entry set.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCode {
    num_users: usize,
    num_chips: usize,
    meta: CodeMeta,
    chip_ptr: Vec<usize>,
    chip_users: Vec<u32>,
    chip_signs: Vec<i8>,
    user_ptr: Vec<usize>,
    user_chips: Vec<u32>,
    user_signs: Vec<i8>,
}

/// `M = round(K / beta)`, rejecting non-positive results.
pub fn chips_for_load(num_users: usize, load: f64) -> Result<usize> {
    if num_users == 0 {
        return Err(Error::invalid("number of users must be at least 1"));
    }
    if !(load.is_finite() && load > 0.0) {
        return Err(Error::invalid(format!("load must be positive, got {load}")));
    }
    let chips = (num_users as f64 / load).round();
    if chips < 1.0 {
        return Err(Error::invalid(format!(
            "K = {num_users} at load {load} rounds to zero chips"
        )));
    }
    Ok(chips as usize)
}

impl SparseCode {
    /// Builds a code from an arbitrary entry list.
    ///
    /// Rejects out-of-range indices, signs other than ±1 and duplicate
    /// (chip, user) pairs.
    pub fn from_entries(
        num_users: usize,
        num_chips: usize,
        entries: impl IntoIterator<Item = Entry>,
        meta: CodeMeta,
    ) -> Result<Self> {
        if num_users == 0 || num_chips == 0 {
            return Err(Error::invalid("a code needs at least one user and one chip"));
        }
        let mut entries: Vec<Entry> = entries.into_iter().collect();
        for e in &entries {
            if e.chip as usize >= num_chips || e.user as usize >= num_users {
                return Err(Error::MalformedInstance(format!(
                    "entry (chip {}, user {}) outside a {num_chips} x {num_users} code",
                    e.chip, e.user
                )));
            }
            if e.sign != 1 && e.sign != -1 {
                return Err(Error::MalformedInstance(format!(
                    "entry (chip {}, user {}) has sign {}, expected +1 or -1",
                    e.chip, e.user, e.sign
                )));
            }
        }
        entries.sort_unstable();
        if let Some(w) = entries
            .windows(2)
            .find(|w| w[0].chip == w[1].chip && w[0].user == w[1].user)
        {
            return Err(Error::MalformedInstance(format!(
                "duplicate entry for chip {} user {}",
                w[0].chip, w[0].user
            )));
        }

        let mut chip_ptr = vec![0usize; num_chips + 1];
        let mut user_ptr = vec![0usize; num_users + 1];
        for e in &entries {
            chip_ptr[e.chip as usize + 1] += 1;
            user_ptr[e.user as usize + 1] += 1;
        }
        for i in 0..num_chips {
            chip_ptr[i + 1] += chip_ptr[i];
        }
        for i in 0..num_users {
            user_ptr[i + 1] += user_ptr[i];
        }

        // entries are sorted by (chip, user): the chip view is a straight copy
        let chip_users = entries.iter().map(|e| e.user).collect();
        let chip_signs = entries.iter().map(|e| e.sign).collect();

        let mut fill = user_ptr.clone();
        let mut user_chips = vec![0u32; entries.len()];
        let mut user_signs = vec![0i8; entries.len()];
        for e in &entries {
            let slot = &mut fill[e.user as usize];
            user_chips[*slot] = e.chip;
            user_signs[*slot] = e.sign;
            *slot += 1;
        }

        Ok(SparseCode {
            num_users,
            num_chips,
            meta,
            chip_ptr,
            chip_users,
            chip_signs,
            user_ptr,
            user_chips,
            user_signs,
        })
    }

    /// Hand-built code tagged [`Ensemble::Explicit`], entries as `(chip, user, sign)`.
    pub fn explicit(num_users: usize, num_chips: usize, entries: &[(u32, u32, i8)]) -> Result<Self> {
        let meta = CodeMeta {
            ensemble: Ensemble::Explicit,
            load: num_users as f64 / num_chips.max(1) as f64,
            degree: entries.len() as f64 / num_users.max(1) as f64,
            seed: 0,
        };
        Self::from_entries(
            num_users,
            num_chips,
            entries.iter().map(|&(chip, user, sign)| Entry { chip, user, sign }),
            meta,
        )
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_chips(&self) -> usize {
        self.num_chips
    }

    pub fn num_entries(&self) -> usize {
        self.chip_users.len()
    }

    pub fn meta(&self) -> &CodeMeta {
        &self.meta
    }

    /// Actual users per chip, `K / M`.
    pub fn effective_load(&self) -> f64 {
        self.num_users as f64 / self.num_chips as f64
    }

    pub fn chip_degree(&self, chip: usize) -> usize {
        self.chip_ptr[chip + 1] - self.chip_ptr[chip]
    }

    pub fn user_degree(&self, user: usize) -> usize {
        self.user_ptr[user + 1] - self.user_ptr[user]
    }

    /// `(user, sign)` pairs on a chip, users ascending.
    pub fn chip(&self, chip: usize) -> impl ExactSizeIterator<Item = (usize, i8)> + '_ {
        let r = self.chip_ptr[chip]..self.chip_ptr[chip + 1];
        self.chip_users[r.clone()]
            .iter()
            .zip(&self.chip_signs[r])
            .map(|(&u, &s)| (u as usize, s))
    }

    /// `(chip, sign)` pairs of a user, chips ascending.
    pub fn user(&self, user: usize) -> impl ExactSizeIterator<Item = (usize, i8)> + '_ {
        let r = self.user_ptr[user]..self.user_ptr[user + 1];
        self.user_chips[r.clone()]
            .iter()
            .zip(&self.user_signs[r])
            .map(|(&c, &s)| (c as usize, s))
    }

    /// All entries sorted by (chip, user).
    pub fn entries(&self) -> impl Iterator<Item = Entry> + '_ {
        (0..self.num_chips).flat_map(move |chip| {
            self.chip(chip).map(move |(user, sign)| Entry {
                chip: chip as u32,
                user: user as u32,
                sign,
            })
        })
    }

    /// Entry set as seen from the user side, re-sorted by (chip, user).
    /// Equal to [`Self::entries`] for every well-formed code.
    pub fn entries_by_user(&self) -> Vec<Entry> {
        let mut out: Vec<Entry> = (0..self.num_users)
            .flat_map(|user| {
                self.user(user).map(move |(chip, sign)| Entry {
                    chip: chip as u32,
                    user: user as u32,
                    sign,
                })
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Deletes the listed chips and every entry on them; surviving chips are
    /// renumbered in their original order. The nominal load is updated to
    /// the new `K / M`.
    pub fn remove_chips(&self, chips: &[usize]) -> Result<SparseCode> {
        let mut removed = vec![false; self.num_chips];
        for &c in chips {
            if c >= self.num_chips {
                return Err(Error::MalformedInstance(format!(
                    "erased chip {c} outside a code with {} chips",
                    self.num_chips
                )));
            }
            if removed[c] {
                return Err(Error::MalformedInstance(format!("chip {c} erased twice")));
            }
            removed[c] = true;
        }
        let remaining = self.num_chips - chips.len();
        if remaining == 0 {
            return Err(Error::invalid("erasure removed every chip"));
        }
        let mut new_index = vec![u32::MAX; self.num_chips];
        let mut next = 0u32;
        for (c, &gone) in removed.iter().enumerate() {
            if !gone {
                new_index[c] = next;
                next += 1;
            }
        }
        let entries: Vec<Entry> = self
            .entries()
            .filter(|e| !removed[e.chip as usize])
            .map(|e| Entry {
                chip: new_index[e.chip as usize],
                ..e
            })
            .collect();
        let meta = CodeMeta {
            load: self.num_users as f64 / remaining as f64,
            ..self.meta.clone()
        };
        SparseCode::from_entries(self.num_users, remaining, entries, meta)
    }
}

fn check_degree(degree: f64) -> Result<()> {
    if degree.is_finite() && degree > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("degree C must be positive, got {degree}")))
    }
}

fn random_sign<R: Rng>(rng: &mut R) -> i8 {
    if rng.random::<bool>() {
        1
    } else {
        -1
    }
}

/// Poissonian ensemble: each (chip, user) entry present independently with
/// probability `C / M`, sign uniform.
///
/// Sampled user by user: the degree is drawn from `Binomial(M, C/M)` and the
/// chips as a uniform subset of that size, which is the same law.
pub fn sample_poissonian(num_users: usize, load: f64, degree: f64, seed: u64) -> Result<SparseCode> {
    let num_chips = chips_for_load(num_users, load)?;
    check_degree(degree)?;
    let p = degree / num_chips as f64;
    if p > 1.0 {
        return Err(Error::invalid(format!(
            "entry probability C/M = {degree}/{num_chips} exceeds 1"
        )));
    }
    let binomial = Binomial::new(num_chips as u64, p)
        .map_err(|e| Error::invalid(format!("binomial({num_chips}, {p}): {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity((num_users as f64 * degree * 1.1) as usize + 16);
    for user in 0..num_users {
        let d = binomial.sample(&mut rng) as usize;
        for chip in index::sample(&mut rng, num_chips, d) {
            entries.push(Entry {
                chip: chip as u32,
                user: user as u32,
                sign: random_sign(&mut rng),
            });
        }
    }
    let meta = CodeMeta {
        ensemble: Ensemble::Poisson,
        load,
        degree,
        seed,
    };
    SparseCode::from_entries(num_users, num_chips, entries, meta)
}

/// Number of users that get degree `floor(C) + 1` for a fractional `C`.
pub fn upper_degree_users(num_users: usize, degree: f64) -> usize {
    let frac = degree - degree.floor();
    (frac * num_users as f64).floor() as usize
}

/// Regular ensemble: every user transmits on exactly `C` distinct uniformly
/// chosen chips with uniform signs.
///
/// For fractional `C = n + f` the first `floor(f K)` users get degree `n + 1`
/// and the rest degree `n`.
pub fn sample_regular(num_users: usize, load: f64, degree: f64, seed: u64) -> Result<SparseCode> {
    let num_chips = chips_for_load(num_users, load)?;
    check_degree(degree)?;
    if degree.ceil() as usize > num_chips {
        return Err(Error::invalid(format!(
            "degree C = {degree} exceeds the number of chips M = {num_chips}"
        )));
    }
    let low = degree.floor() as usize;
    let n_high = upper_degree_users(num_users, degree);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(num_users * (low + 1));
    for user in 0..num_users {
        let d = if user < n_high { low + 1 } else { low };
        for chip in index::sample(&mut rng, num_chips, d) {
            entries.push(Entry {
                chip: chip as u32,
                user: user as u32,
                sign: random_sign(&mut rng),
            });
        }
    }
    let meta = CodeMeta {
        ensemble: Ensemble::Regular,
        load,
        degree,
        seed,
    };
    SparseCode::from_entries(num_users, num_chips, entries, meta)
}

/// Dispatches to the sampler for `ensemble`.
pub fn sample(ensemble: Ensemble, num_users: usize, load: f64, degree: f64, seed: u64) -> Result<SparseCode> {
    match ensemble {
        Ensemble::Poisson => sample_poissonian(num_users, load, degree, seed),
        Ensemble::Regular => sample_regular(num_users, load, degree, seed),
        Ensemble::Explicit => Err(Error::invalid("the explicit ensemble cannot be sampled")),
    }
}

/// Degree histograms of a code.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DegreeStats {
    /// `chip_hist[l]` = number of chips with `l` users.
    pub chip_hist: Vec<usize>,
    /// `user_hist[c]` = number of users on `c` chips.
    pub user_hist: Vec<usize>,
    pub mean_chip_degree: f64,
    pub mean_user_degree: f64,
    pub num_entries: usize,
}

fn histogram(degrees: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut hist = vec![0usize];
    for d in degrees {
        if d >= hist.len() {
            hist.resize(d + 1, 0);
        }
        hist[d] += 1;
    }
    hist
}

pub fn degree_stats(code: &SparseCode) -> DegreeStats {
    let chip_hist = histogram((0..code.num_chips()).map(|c| code.chip_degree(c)));
    let user_hist = histogram((0..code.num_users()).map(|u| code.user_degree(u)));
    let n = code.num_entries();
    DegreeStats {
        chip_hist,
        user_hist,
        mean_chip_degree: n as f64 / code.num_chips() as f64,
        mean_user_degree: n as f64 / code.num_users() as f64,
        num_entries: n,
    }
}

#[derive(Serialize, Deserialize)]
struct CodeFile {
    #[serde(rename = "K")]
    num_users: usize,
    #[serde(rename = "M")]
    num_chips: usize,
    beta: f64,
    #[serde(rename = "C")]
    degree: f64,
    ensemble: Ensemble,
    seed: u64,
    entries: Vec<(u32, u32, i8)>,
}

impl SparseCode {
    /// Writes the JSON code file; entries are sorted by (chip, user).
    pub fn write_json<W: Write>(&self, writer: W) -> serde_json::Result<()> {
        let file = CodeFile {
            num_users: self.num_users,
            num_chips: self.num_chips,
            beta: self.meta.load,
            degree: self.meta.degree,
            ensemble: self.meta.ensemble,
            seed: self.meta.seed,
            entries: self.entries().map(|e| (e.chip, e.user, e.sign)).collect(),
        };
        serde_json::to_writer(writer, &file)
    }

    pub fn to_json_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_json(&mut buf).expect("serializing to memory");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    /// Parses a JSON code file. The error string is meant for the user.
    pub fn read_json<R: Read>(reader: R) -> std::result::Result<SparseCode, String> {
        let file: CodeFile = serde_json::from_reader(reader).map_err(|e| e.to_string())?;
        let meta = CodeMeta {
            ensemble: file.ensemble,
            load: file.beta,
            degree: file.degree,
            seed: file.seed,
        };
        SparseCode::from_entries(
            file.num_users,
            file.num_chips,
            file.entries
                .into_iter()
                .map(|(chip, user, sign)| Entry { chip, user, sign }),
            meta,
        )
        .map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_poisson_code_has_two_chips() {
        for seed in 0..20 {
            let code = sample_poissonian(4, 2.0, 2.0, seed).unwrap();
            assert_eq!(code.num_chips(), 2);
            assert!(code.entries().all(|e| e.sign == 1 || e.sign == -1));
        }
    }

    #[test]
    fn poisson_edge_count_within_five_sigma() {
        let code = sample_poissonian(1000, 2.0, 3.0, 1).unwrap();
        let expected = 3000.0;
        let sigma = (3000.0f64 * (1.0 - 3.0 / 500.0)).sqrt();
        let n = code.num_entries() as f64;
        assert!((n - expected).abs() <= 5.0 * sigma, "edges {n}");
        let stats = degree_stats(&code);
        // chip degree mean has sigma / M spread
        assert!((stats.mean_chip_degree - 6.0).abs() <= 5.0 * sigma / 500.0);
    }

    #[test]
    fn regular_small_code() {
        let code = sample_regular(6, 2.0, 3.0, 9).unwrap();
        assert_eq!(code.num_chips(), 3);
        for u in 0..6 {
            let chips: Vec<usize> = code.user(u).map(|(c, _)| c).collect();
            assert_eq!(chips, vec![0, 1, 2]);
        }
        let stats = degree_stats(&code);
        assert_eq!(stats.user_hist, vec![0, 0, 0, 6]);
        assert_eq!(stats.num_entries, 18);
        assert_eq!(stats.mean_chip_degree, 6.0);
    }

    #[test]
    fn fractional_regular_degree_split() {
        let code = sample_regular(1000, 1.0, 2.5, 3).unwrap();
        let stats = degree_stats(&code);
        assert_eq!(stats.user_hist, vec![0, 0, 500, 500]);
    }

    #[test]
    fn empty_code_stats() {
        let code = SparseCode::explicit(3, 2, &[]).unwrap();
        let stats = degree_stats(&code);
        assert_eq!(stats.chip_hist, vec![2]);
        assert_eq!(stats.user_hist, vec![3]);
        assert_eq!(stats.num_entries, 0);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(sample_poissonian(4, 2.0, 3.0, 0).is_err()); // C/M = 1.5
        assert!(sample_regular(4, 2.0, 3.0, 0).is_err()); // C > M = 2
        assert!(sample_regular(1, 4.0, 1.0, 0).is_err()); // zero chips
        assert!(sample_poissonian(10, 0.0, 1.0, 0).is_err());
        assert!(sample_poissonian(10, 1.0, -1.0, 0).is_err());
        assert!(SparseCode::explicit(2, 1, &[(0, 0, 1), (0, 0, -1)]).is_err());
        assert!(SparseCode::explicit(2, 1, &[(0, 0, 2)]).is_err());
        assert!(SparseCode::explicit(2, 1, &[(1, 0, 1)]).is_err());
    }

    #[test]
    fn json_round_trip_is_stable() {
        let code = sample_regular(50, 1.5, 3.0, 11).unwrap();
        let text = code.to_json_string();
        let back = SparseCode::read_json(text.as_bytes()).unwrap();
        assert_eq!(back, code);
        assert_eq!(back.to_json_string(), text);
        assert!(text.starts_with(r#"{"K":50,"M":33,"beta":1.5,"C":3.0,"ensemble":"regular","seed":11,"entries":[["#));
    }

    #[test]
    fn remove_chips_renumbers() {
        let code = SparseCode::explicit(2, 3, &[(0, 0, 1), (1, 0, -1), (2, 1, 1)]).unwrap();
        let smaller = code.remove_chips(&[1]).unwrap();
        assert_eq!(smaller.num_chips(), 2);
        let e: Vec<_> = smaller.entries().map(|e| (e.chip, e.user, e.sign)).collect();
        assert_eq!(e, vec![(0, 0, 1), (1, 1, 1)]);
        assert_eq!(smaller.meta().load, 1.0);
    }
}
