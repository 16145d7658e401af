//! Unit clause propagation detector.
//!
//! A chip whose residual signal equals plus or minus its residual degree
//! forces every remaining incident bit; each forced bit is a unit clause.
//! The decoder repeatedly decimates a variable taken uniformly at random from
//! the unit-clause set, updates the residual signal of its chips and turns
//! chips that became extremal into new unit clauses. When the set runs dry it
//! guesses a uniformly random unassigned variable and sign. From the first
//! guess on, an incoming clause that disagrees with a stored one is counted
//! as a contradiction and discarded.
//!
//! `x_D` is the rescaled decimation time of the first guess and `x_C` of the
//! first contradiction; both default to 1 when the event never happens.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::channel::{BitVector, Signal};
use crate::ensemble::SparseCode;
use crate::error::{Error, Result};

const ABSENT: u32 = u32::MAX;

/// Aggregated unit clauses on one variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UnitClause {
    pub sign: i8,
    /// Number of agreeing clauses inserted.
    pub multiplicity: u32,
    /// Set once a clause of the opposite sign was offered.
    pub contradicted: bool,
}

/// What happened to an inserted clause.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Insertion {
    New,
    Repeat,
    /// Opposite sign to the stored record; the clause was dropped.
    Conflict,
}

/// The set of pending unit clauses, one record per represented variable.
#[derive(Clone, Debug)]
pub struct UnitClauseSet {
    records: Vec<Option<UnitClause>>,
    members: Vec<u32>,
    position: Vec<u32>,
    contradictions: u64,
}

impl UnitClauseSet {
    pub fn new(num_users: usize) -> Self {
        UnitClauseSet {
            records: vec![None; num_users],
            members: Vec::new(),
            position: vec![ABSENT; num_users],
            contradictions: 0,
        }
    }

    pub fn insert(&mut self, var: usize, sign: i8) -> Insertion {
        match &mut self.records[var] {
            Some(rec) if rec.sign == sign => {
                rec.multiplicity += 1;
                Insertion::Repeat
            }
            Some(rec) => {
                rec.contradicted = true;
                self.contradictions += 1;
                Insertion::Conflict
            }
            slot @ None => {
                *slot = Some(UnitClause {
                    sign,
                    multiplicity: 1,
                    contradicted: false,
                });
                self.position[var] = self.members.len() as u32;
                self.members.push(var as u32);
                Insertion::New
            }
        }
    }

    pub fn remove(&mut self, var: usize) -> Option<UnitClause> {
        let rec = self.records[var].take()?;
        let pos = self.position[var] as usize;
        self.members.swap_remove(pos);
        if let Some(&moved) = self.members.get(pos) {
            self.position[moved as usize] = pos as u32;
        }
        self.position[var] = ABSENT;
        Some(rec)
    }

    pub fn get(&self, var: usize) -> Option<UnitClause> {
        self.records[var]
    }

    /// Number of represented variables.
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Conflicting insertions seen so far.
    pub fn contradictions(&self) -> u64 {
        self.contradictions
    }

    /// Represented variables with their records, ascending by variable.
    pub fn records(&self) -> Vec<(usize, UnitClause)> {
        self.records
            .iter()
            .enumerate()
            .filter_map(|(v, r)| r.map(|r| (v, r)))
            .collect()
    }

    /// Uniform draw over represented variables.
    fn pick<R: Rng>(&self, rng: &mut R) -> Option<usize> {
        if self.members.is_empty() {
            None
        } else {
            Some(self.members[rng.random_range(0..self.members.len())] as usize)
        }
    }
}

/// Effect of a single decimation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StepEffect {
    pub new_clauses: usize,
    pub contradictions: usize,
}

/// Mutable decoder state over a borrowed instance.
#[derive(Clone, Debug)]
pub struct DecoderState<'a> {
    code: &'a SparseCode,
    residual: Vec<i32>,
    live_degree: Vec<u32>,
    retired: Vec<bool>,
    assignment: Vec<i8>,
    unassigned: Vec<u32>,
    unassigned_pos: Vec<u32>,
    clauses: UnitClauseSet,
    decimated: usize,
    first_guess: Option<usize>,
    first_contradiction: Option<usize>,
    guesses: usize,
}

/// Checks that every chip value is reachable: same parity as the degree and
/// no larger in magnitude.
pub fn validate_instance(code: &SparseCode, signal: &Signal) -> Result<()> {
    if signal.y.len() != code.num_chips() {
        return Err(Error::LengthMismatch {
            expected: code.num_chips(),
            actual: signal.y.len(),
        });
    }
    for (chip, &y) in signal.y.iter().enumerate() {
        let deg = code.chip_degree(chip) as i64;
        let y = i64::from(y);
        if (y - deg).rem_euclid(2) != 0 {
            return Err(Error::MalformedInstance(format!(
                "chip {chip} has signal {y} but degree {deg}: parity differs"
            )));
        }
        if y.abs() > deg {
            return Err(Error::MalformedInstance(format!(
                "chip {chip} has signal {y} but only {deg} users"
            )));
        }
    }
    Ok(())
}

impl<'a> DecoderState<'a> {
    /// Validates the instance and loads the initial unit clauses from every
    /// extremal chip.
    pub fn new(code: &'a SparseCode, signal: &Signal) -> Result<Self> {
        validate_instance(code, signal)?;
        let k = code.num_users();
        let m = code.num_chips();
        let mut state = DecoderState {
            code,
            residual: signal.y.clone(),
            live_degree: (0..m).map(|c| code.chip_degree(c) as u32).collect(),
            retired: vec![false; m],
            assignment: vec![0; k],
            unassigned: (0..k as u32).collect(),
            unassigned_pos: (0..k as u32).collect(),
            clauses: UnitClauseSet::new(k),
            decimated: 0,
            first_guess: None,
            first_contradiction: None,
            guesses: 0,
        };
        for chip in 0..m {
            state.check_extremal(chip);
        }
        Ok(state)
    }

    /// Retires `chip` and emits its unit clauses if it is extremal.
    fn check_extremal(&mut self, chip: usize) -> StepEffect {
        let deg = self.live_degree[chip] as i32;
        let y = self.residual[chip];
        let mut effect = StepEffect::default();
        if self.retired[chip] || deg == 0 || y.abs() != deg {
            return effect;
        }
        self.retired[chip] = true;
        let direction = y.signum() as i8;
        let code = self.code;
        for (user, sign) in code.chip(chip) {
            if self.assignment[user] != 0 {
                continue;
            }
            effect.new_clauses += 1;
            if self.clauses.insert(user, sign * direction) == Insertion::Conflict {
                effect.contradictions += 1;
                if self.first_contradiction.is_none() {
                    self.first_contradiction = Some(self.decimated);
                }
            }
        }
        effect
    }

    /// Fixes `var = value`, propagates it through the live chips of `var`
    /// and collects the unit clauses this creates.
    pub fn decimate(&mut self, var: usize, value: i8) -> Result<StepEffect> {
        if var >= self.assignment.len() {
            return Err(Error::invalid(format!("variable {var} out of range")));
        }
        if value != 1 && value != -1 {
            return Err(Error::invalid(format!("value {value} is not a spin")));
        }
        if self.assignment[var] != 0 {
            return Err(Error::AlreadyAssigned(var));
        }
        self.assignment[var] = value;
        self.clauses.remove(var);
        let pos = self.unassigned_pos[var] as usize;
        self.unassigned.swap_remove(pos);
        if let Some(&moved) = self.unassigned.get(pos) {
            self.unassigned_pos[moved as usize] = pos as u32;
        }
        self.unassigned_pos[var] = ABSENT;
        self.decimated += 1;

        let code = self.code;
        for (chip, sign) in code.user(var) {
            if self.retired[chip] {
                continue;
            }
            self.residual[chip] -= i32::from(sign) * i32::from(value);
            self.live_degree[chip] -= 1;
        }
        let mut effect = StepEffect::default();
        for (chip, _) in code.user(var) {
            let e = self.check_extremal(chip);
            effect.new_clauses += e.new_clauses;
            effect.contradictions += e.contradictions;
        }
        Ok(effect)
    }

    /// Decimation counter `X`.
    pub fn decimated(&self) -> usize {
        self.decimated
    }

    pub fn is_complete(&self) -> bool {
        self.unassigned.is_empty()
    }

    pub fn unit_clauses(&self) -> &UnitClauseSet {
        &self.clauses
    }

    pub fn assignment(&self) -> &[i8] {
        &self.assignment
    }

    pub fn residual_signal(&self, chip: usize) -> i32 {
        self.residual[chip]
    }

    pub fn residual_degree(&self, chip: usize) -> usize {
        self.live_degree[chip] as usize
    }

    /// Whether the chip still takes part in propagation.
    pub fn is_live(&self, chip: usize) -> bool {
        !self.retired[chip] && self.live_degree[chip] > 0
    }

    pub fn guesses(&self) -> usize {
        self.guesses
    }

    pub fn contradictions(&self) -> u64 {
        self.clauses.contradictions()
    }

    /// Performs one decimation: forced when a unit clause is pending,
    /// otherwise a guess. Returns `None` once every variable is assigned.
    pub fn step<R: Rng>(&mut self, rng: &mut R) -> Option<Decision> {
        if self.is_complete() {
            return None;
        }
        let (var, value, guessed) = match self.clauses.pick(rng) {
            Some(var) => {
                let sign = self.clauses.get(var).map(|r| r.sign).unwrap_or(1);
                (var, sign, false)
            }
            None => {
                if self.first_guess.is_none() {
                    self.first_guess = Some(self.decimated);
                }
                self.guesses += 1;
                let var = self.unassigned[rng.random_range(0..self.unassigned.len())] as usize;
                let value = if rng.random::<bool>() { 1 } else { -1 };
                (var, value, true)
            }
        };
        self.decimate(var, value)
            .expect("picked variables are always unassigned");
        Some(Decision {
            variable: var,
            value,
            guessed,
        })
    }
}

/// Forced unit clauses read off the extremal chips of an instance.
pub fn initial_unit_clauses(code: &SparseCode, signal: &Signal) -> Result<UnitClauseSet> {
    Ok(DecoderState::new(code, signal)?.clauses)
}

/// One decimation of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    pub variable: usize,
    pub value: i8,
    pub guessed: bool,
}

/// Decoder state after step `step`.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub x: f64,
    pub unit_clauses: usize,
    pub guesses: usize,
    pub contradictions: u64,
    /// Only known when the truth was supplied.
    pub bit_errors: Option<usize>,
    /// `None` on the initial row.
    pub decision: Option<Decision>,
}

/// How a run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Status {
    /// No guess was needed: the estimate is the unique consistent solution.
    #[serde(rename = "UNIQUE_JO")]
    UniqueJo,
    /// Guesses were needed but none led to a contradiction.
    #[serde(rename = "JO_WITH_GUESSES")]
    JoWithGuesses,
    /// At least one contradiction; the estimate does not reproduce the signal.
    #[serde(rename = "APPROXIMATE")]
    Approximate,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::UniqueJo => "UNIQUE_JO",
            Status::JoWithGuesses => "JO_WITH_GUESSES",
            Status::Approximate => "APPROXIMATE",
        })
    }
}

#[derive(Clone, Debug)]
pub struct DecodeResult {
    pub estimate: BitVector,
    pub x_d: f64,
    pub x_c: f64,
    pub guesses: usize,
    pub contradictions: u64,
    pub status: Status,
    pub ber: Option<f64>,
    pub trace: Option<Vec<TraceRow>>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct UcpOptions {
    pub seed: u64,
    pub record_trace: bool,
}

/// Decodes with trace recording off.
pub fn run_ucp(
    code: &SparseCode,
    signal: &Signal,
    seed: u64,
    truth: Option<&BitVector>,
) -> Result<DecodeResult> {
    run_ucp_with(
        code,
        signal,
        truth,
        UcpOptions {
            seed,
            record_trace: false,
        },
    )
}

/// Runs the decoder to completion (exactly `K` decimations).
pub fn run_ucp_with(
    code: &SparseCode,
    signal: &Signal,
    truth: Option<&BitVector>,
    options: UcpOptions,
) -> Result<DecodeResult> {
    if let Some(t) = truth {
        if t.len() != code.num_users() {
            return Err(Error::LengthMismatch {
                expected: code.num_users(),
                actual: t.len(),
            });
        }
    }
    let mut state = DecoderState::new(code, signal)?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let k = code.num_users();
    let mut errors = 0usize;
    let mut trace = options.record_trace.then(|| {
        let mut rows = Vec::with_capacity(k + 1);
        rows.push(TraceRow {
            step: 0,
            x: 0.0,
            unit_clauses: state.clauses.len(),
            guesses: 0,
            contradictions: state.contradictions(),
            bit_errors: truth.map(|_| 0),
            decision: None,
        });
        rows
    });

    while let Some(decision) = state.step(&mut rng) {
        if let Some(t) = truth {
            if t[decision.variable] != decision.value {
                errors += 1;
            }
        }
        if let Some(rows) = trace.as_mut() {
            rows.push(TraceRow {
                step: state.decimated,
                x: state.decimated as f64 / k as f64,
                unit_clauses: state.clauses.len(),
                guesses: state.guesses,
                contradictions: state.contradictions(),
                bit_errors: truth.map(|_| errors),
                decision: Some(decision),
            });
        }
    }

    let contradictions = state.contradictions();
    let status = if contradictions > 0 {
        Status::Approximate
    } else if state.guesses == 0 {
        Status::UniqueJo
    } else {
        Status::JoWithGuesses
    };
    let time = |event: Option<usize>| event.map_or(1.0, |x| x as f64 / k as f64);
    let estimate = BitVector::new(state.assignment.clone()).expect("all variables assigned");
    let ber = truth.map(|t| bit_error_rate(&estimate, t)).transpose()?;
    Ok(DecodeResult {
        x_d: time(state.first_guess),
        x_c: time(state.first_contradiction),
        guesses: state.guesses,
        contradictions,
        status,
        ber,
        estimate,
        trace,
    })
}

/// Fraction of positions where the two vectors differ.
pub fn bit_error_rate(estimate: &BitVector, truth: &BitVector) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            actual: estimate.len(),
        });
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let wrong = estimate
        .values()
        .iter()
        .zip(truth.values())
        .filter(|(a, b)| a != b)
        .count();
    Ok(wrong as f64 / truth.len() as f64)
}

#[derive(Serialize)]
struct ResultJson {
    #[serde(rename = "x_D")]
    x_d: f64,
    #[serde(rename = "x_C")]
    x_c: f64,
    guesses: usize,
    contradictions: u64,
    status: Status,
    ber: Option<f64>,
}

impl DecodeResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&ResultJson {
            x_d: self.x_d,
            x_c: self.x_c,
            guesses: self.guesses,
            contradictions: self.contradictions,
            status: self.status,
            ber: self.ber,
        })
        .expect("plain data serializes")
    }
}

/// Writes trace rows as CSV. `cum_bit_errors` is empty without a truth vector.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "step",
        "x",
        "unit_clause_count",
        "guesses_so_far",
        "contradictions_so_far",
        "cum_bit_errors",
    ])?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.x.to_string(),
            r.unit_clauses.to_string(),
            r.guesses.to_string(),
            r.contradictions.to_string(),
            r.bit_errors.map(|e| e.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::transmit;

    /// chip 0 = {u0}, chip 1 = {u0, u1}, chip 2 = {u1, -u2}
    fn three_chip() -> (SparseCode, Signal) {
        let code =
            SparseCode::explicit(3, 3, &[(0, 0, 1), (1, 0, 1), (1, 1, 1), (2, 1, 1), (2, 2, -1)]).unwrap();
        (code, Signal::noiseless(vec![1, 2, 2]))
    }

    /// chip A = {u0, u1, u2} with y = 1, chip B = {u0, -u1} with y = 0
    fn instance_a() -> (SparseCode, Signal) {
        let code =
            SparseCode::explicit(3, 2, &[(0, 0, 1), (0, 1, 1), (0, 2, 1), (1, 0, 1), (1, 1, -1)]).unwrap();
        (code, Signal::noiseless(vec![1, 0]))
    }

    #[test]
    fn initial_clauses_of_three_chip_instance() {
        let (code, signal) = three_chip();
        let set = initial_unit_clauses(&code, &signal).unwrap();
        let rec = |s, m| UnitClause {
            sign: s,
            multiplicity: m,
            contradicted: false,
        };
        assert_eq!(set.records(), vec![(0, rec(1, 2)), (1, rec(1, 2)), (2, rec(-1, 1))]);
        assert_eq!(set.contradictions(), 0);
    }

    #[test]
    fn degenerate_chip_gives_no_clause() {
        let code = SparseCode::explicit(2, 1, &[(0, 0, 1), (0, 1, 1)]).unwrap();
        let set = initial_unit_clauses(&code, &Signal::noiseless(vec![0])).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn extremal_chip_forces_all_users() {
        let code = SparseCode::explicit(3, 1, &[(0, 0, 1), (0, 1, -1), (0, 2, 1)]).unwrap();
        let set = initial_unit_clauses(&code, &Signal::noiseless(vec![3])).unwrap();
        let signs: Vec<i8> = set.records().iter().map(|(_, r)| r.sign).collect();
        assert_eq!(signs, vec![1, -1, 1]);
    }

    #[test]
    fn malformed_signals_rejected() {
        let code = SparseCode::explicit(2, 1, &[(0, 0, 1), (0, 1, 1)]).unwrap();
        assert!(matches!(
            initial_unit_clauses(&code, &Signal::noiseless(vec![1])),
            Err(Error::MalformedInstance(_))
        ));
        assert!(initial_unit_clauses(&code, &Signal::noiseless(vec![4])).is_err());
        assert!(initial_unit_clauses(&code, &Signal::noiseless(vec![0, 0])).is_err());
    }

    #[test]
    fn wrong_first_move_on_instance_a_contradicts() {
        let (code, signal) = instance_a();
        let mut state = DecoderState::new(&code, &signal).unwrap();
        let effect = state.decimate(0, -1).unwrap();
        assert_eq!(effect.contradictions, 1);
        assert_eq!(state.decimated(), 1);
        assert_eq!(state.first_contradiction, Some(1));
        let u1 = state.unit_clauses().get(1).unwrap();
        assert!(u1.contradicted);
        assert_eq!(state.unit_clauses().get(2).unwrap().sign, 1);
        assert!(matches!(state.decimate(0, 1), Err(Error::AlreadyAssigned(0))));
    }

    #[test]
    fn right_first_move_on_instance_a_propagates() {
        let (code, signal) = instance_a();
        let mut state = DecoderState::new(&code, &signal).unwrap();
        state.decimate(0, 1).unwrap();
        assert_eq!(state.unit_clauses().get(1).unwrap().sign, 1);
        state.decimate(1, 1).unwrap();
        assert_eq!(state.unit_clauses().get(2).unwrap().sign, -1);
        state.decimate(2, -1).unwrap();
        assert_eq!(state.assignment(), &[1, 1, -1]);
        assert_eq!(state.contradictions(), 0);
    }

    #[test]
    fn two_user_chip_after_one_decimation() {
        let code = SparseCode::explicit(2, 1, &[(0, 0, 1), (0, 1, 1)]).unwrap();
        let mut state = DecoderState::new(&code, &Signal::noiseless(vec![0])).unwrap();
        state.decimate(0, 1).unwrap();
        let rec = state.unit_clauses().get(1).unwrap();
        assert_eq!(rec.sign, -1);
    }

    #[test]
    fn three_chip_run_is_unique() {
        let (code, signal) = three_chip();
        let truth = BitVector::new(vec![1, 1, -1]).unwrap();
        for seed in 0..10 {
            let r = run_ucp(&code, &signal, seed, Some(&truth)).unwrap();
            assert_eq!(r.estimate.values(), &[1, 1, -1]);
            assert_eq!((r.x_d, r.x_c), (1.0, 1.0));
            assert_eq!(r.status, Status::UniqueJo);
            assert_eq!(r.ber, Some(0.0));
        }
    }

    #[test]
    fn degenerate_pair_needs_a_guess() {
        let code = SparseCode::explicit(2, 1, &[(0, 0, 1), (0, 1, 1)]).unwrap();
        let signal = Signal::noiseless(vec![0]);
        let truth = BitVector::new(vec![1, -1]).unwrap();
        let mut bers = Vec::new();
        for seed in 0..40 {
            let r = run_ucp(&code, &signal, seed, Some(&truth)).unwrap();
            assert_eq!(r.status, Status::JoWithGuesses);
            assert_eq!(r.guesses, 1);
            assert!(r.estimate.values() == [1, -1] || r.estimate.values() == [-1, 1]);
            bers.push(r.ber.unwrap());
        }
        assert!(bers.contains(&0.0) && bers.contains(&1.0));
    }

    #[test]
    fn ber_arithmetic() {
        let a = BitVector::new(vec![1, 1, -1]).unwrap();
        let b = BitVector::new(vec![1, -1, -1]).unwrap();
        assert_eq!(bit_error_rate(&a, &a).unwrap(), 0.0);
        assert_eq!(bit_error_rate(&a, &a.negated()).unwrap(), 1.0);
        assert!((bit_error_rate(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(bit_error_rate(&a, &BitVector::new(vec![1]).unwrap()).is_err());
    }

    #[test]
    fn trace_rows_and_csv() {
        let (code, signal) = three_chip();
        let truth = BitVector::new(vec![1, 1, -1]).unwrap();
        let r = run_ucp_with(
            &code,
            &signal,
            Some(&truth),
            UcpOptions {
                seed: 1,
                record_trace: true,
            },
        )
        .unwrap();
        let rows = r.trace.unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].unit_clauses, 3);
        assert_eq!(rows[3].unit_clauses, 0);
        let mut out = Vec::new();
        write_trace_csv(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with(
            "step,x,unit_clause_count,guesses_so_far,contradictions_so_far,cum_bit_errors\n0,0,3,0,0,0\n"
        ));
    }

    #[test]
    fn result_json_shape() {
        let (code, signal) = three_chip();
        let truth = transmit(&code, &BitVector::new(vec![1, 1, -1]).unwrap()).unwrap();
        assert_eq!(truth, signal);
        let r = run_ucp(&code, &signal, 0, None).unwrap();
        assert_eq!(
            r.to_json(),
            r#"{"x_D":1.0,"x_C":1.0,"guesses":0,"contradictions":0,"status":"UNIQUE_JO","ber":null}"#
        );
    }
}
