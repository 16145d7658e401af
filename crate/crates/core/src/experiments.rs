//! Seeded Monte Carlo batches, phase-diagram sweeps and comparison against
//! the mean-field prediction.
//!
//! Run `i` at a grid point uses seed `base ^ i`. The run index restarts at
//! every grid point, so each point can be reproduced on its own and
//! neighbouring points share random numbers.

use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::asymptotics::{self, IntegrationConfig, Termination};
use crate::channel::{apply_erasure, transmit, BitVector};
use crate::ensemble::{sample, Ensemble};
use crate::error::{Error, Result};
use crate::ucp::run_ucp;

/// Upper bound on `K * samples * grid points` for one batch.
pub const MAX_WORK: f64 = 2e10;

/// Inclusive arithmetic grid `start:stop:step`, or a single value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl GridRange {
    pub fn single(value: f64) -> Self {
        GridRange {
            start: value,
            stop: value,
            step: 1.0,
        }
    }

    /// Grid values, rounded to 12 decimals so that `0.1:0.3:0.1` yields
    /// exactly `[0.1, 0.2, 0.3]`.
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| ((self.start + i as f64 * self.step) * 1e12).round() / 1e12)
            .collect()
    }
}

impl FromStr for GridRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| {
            p.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::invalid(format!("'{p}' in range '{s}' is not a number")))
        };
        let range = match parts.as_slice() {
            [v] => GridRange::single(num(v)?),
            [a, b, c] => GridRange {
                start: num(a)?,
                stop: num(b)?,
                step: num(c)?,
            },
            _ => return Err(Error::invalid(format!("range '{s}' must be VALUE or START:STOP:STEP"))),
        };
        if range.step <= 0.0 {
            return Err(Error::invalid(format!("range '{s}' needs a positive step")));
        }
        if range.stop < range.start {
            return Err(Error::invalid(format!("range '{s}' is empty (stop < start)")));
        }
        Ok(range)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchConfig {
    pub ensemble: Ensemble,
    pub users: usize,
    pub loads: GridRange,
    pub degrees: GridRange,
    pub erasure: f64,
    pub samples: usize,
    pub seed: u64,
}

impl BatchConfig {
    fn validate(&self) -> Result<()> {
        if self.ensemble == Ensemble::Explicit {
            return Err(Error::invalid("batches need a random ensemble"));
        }
        if self.users == 0 {
            return Err(Error::invalid("number of users must be positive"));
        }
        if self.samples == 0 {
            return Err(Error::invalid("samples per point must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.erasure) {
            return Err(Error::invalid(format!(
                "erasure fraction must lie in [0, 1), got {}",
                self.erasure
            )));
        }
        let points = self.loads.values().len() * self.degrees.values().len();
        let work = self.users as f64 * self.samples as f64 * points as f64;
        if work > MAX_WORK {
            return Err(Error::ResourceLimit(format!(
                "K * samples * points = {work:.3e} exceeds {MAX_WORK:.0e}; shrink the grid or the sample count"
            )));
        }
        Ok(())
    }

    /// `(C, beta)` pairs, degree-major.
    pub fn grid(&self) -> Vec<(f64, f64)> {
        let loads = self.loads.values();
        self.degrees
            .values()
            .into_iter()
            .flat_map(|c| loads.iter().map(move |&b| (c, b)))
            .collect()
    }
}

/// Observables of one decoded instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOutcome {
    pub x_d: f64,
    pub x_c: f64,
    pub ber: f64,
    pub guesses: usize,
    pub contradictions: u64,
}

/// sample, transmit, erase, decode, with every stream derived from `seed`.
pub fn run_single(
    ensemble: Ensemble,
    users: usize,
    load: f64,
    degree: f64,
    erasure: f64,
    seed: u64,
) -> Result<RunOutcome> {
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let code_seed: u64 = seeds.random();
    let bits_seed: u64 = seeds.random();
    let erase_seed: u64 = seeds.random();
    let decode_seed: u64 = seeds.random();
    let code = sample(ensemble, users, load, degree, code_seed)?;
    let bits = BitVector::random(users, bits_seed);
    let signal = transmit(&code, &bits)?;
    let (code, signal) = apply_erasure(&code, &signal, erasure, erase_seed)?;
    let r = run_ucp(&code, &signal, decode_seed, Some(&bits))?;
    Ok(RunOutcome {
        x_d: r.x_d,
        x_c: r.x_c,
        ber: r.ber.unwrap_or(0.0),
        guesses: r.guesses,
        contradictions: r.contradictions,
    })
}

/// Median and quartiles, linear interpolation between order statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Quartiles {
        assert!(!values.is_empty(), "quartiles of an empty sample");
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Quartiles {
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
        }
    }
}

/// Aggregates over the runs at one `(C, beta)` point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchStats {
    pub degree: f64,
    pub load: f64,
    pub users: usize,
    pub samples: usize,
    pub x_d: Quartiles,
    pub x_c: Quartiles,
    pub ber: Quartiles,
    pub frac_guess: f64,
    pub frac_contra: f64,
}

impl BatchStats {
    pub fn from_runs(degree: f64, load: f64, users: usize, runs: &[RunOutcome]) -> Self {
        let col = |f: fn(&RunOutcome) -> f64| runs.iter().map(f).collect::<Vec<_>>();
        let n = runs.len() as f64;
        BatchStats {
            degree,
            load,
            users,
            samples: runs.len(),
            x_d: Quartiles::of(&col(|r| r.x_d)),
            x_c: Quartiles::of(&col(|r| r.x_c)),
            ber: Quartiles::of(&col(|r| r.ber)),
            frac_guess: runs.iter().filter(|r| r.guesses > 0).count() as f64 / n,
            frac_contra: runs.iter().filter(|r| r.contradictions > 0).count() as f64 / n,
        }
    }
}

pub const CSV_HEADER: [&str; 15] = [
    "C", "beta", "K", "samples", "xd_med", "xd_q1", "xd_q3", "xc_med", "xc_q1", "xc_q3", "ber_med", "ber_q1",
    "ber_q3", "frac_guess", "frac_contra",
];

fn stats_record(s: &BatchStats) -> Vec<String> {
    vec![
        s.degree.to_string(),
        s.load.to_string(),
        s.users.to_string(),
        s.samples.to_string(),
        s.x_d.median.to_string(),
        s.x_d.q1.to_string(),
        s.x_d.q3.to_string(),
        s.x_c.median.to_string(),
        s.x_c.q1.to_string(),
        s.x_c.q3.to_string(),
        s.ber.median.to_string(),
        s.ber.q1.to_string(),
        s.ber.q3.to_string(),
        s.frac_guess.to_string(),
        s.frac_contra.to_string(),
    ]
}

pub fn write_stats_csv<W: Write>(rows: &[BatchStats], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for s in rows {
        w.write_record(stats_record(s))?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every grid point of `config` and returns one row per `(C, beta)`,
/// degree-major. Runs execute on the current rayon pool; results are
/// reduced in run-index order.
pub fn run_batch(config: &BatchConfig) -> Result<Vec<BatchStats>> {
    config.validate()?;
    let grid = config.grid();
    let n = config.samples;
    let outcomes: Vec<RunOutcome> = (0..grid.len() * n)
        .into_par_iter()
        .map(|job| {
            let (degree, load) = grid[job / n];
            let seed = config.seed ^ (job % n) as u64;
            run_single(config.ensemble, config.users, load, degree, config.erasure, seed)
        })
        .collect::<Result<_>>()?;
    Ok(grid
        .iter()
        .zip(outcomes.chunks(n))
        .map(|(&(degree, load), runs)| BatchStats::from_runs(degree, load, config.users, runs))
        .collect())
}

/// First load, per degree, at which each regime boundary is crossed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Onsets {
    pub degree: f64,
    /// First beta with median `x_D < 1`.
    pub guesses: Option<f64>,
    /// First beta with median `x_C < 1`.
    pub contradictions: Option<f64>,
    /// First beta with median BER `> 0`.
    pub errors: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseDiagram {
    pub rows: Vec<BatchStats>,
    pub onsets: Vec<Onsets>,
}

/// Grid-resolution thresholds, no interpolation.
pub fn find_onsets(rows: &[BatchStats]) -> Vec<Onsets> {
    let mut out: Vec<Onsets> = Vec::new();
    for r in rows {
        if out.last().is_none_or(|o| o.degree != r.degree) {
            out.push(Onsets {
                degree: r.degree,
                guesses: None,
                contradictions: None,
                errors: None,
            });
        }
        let o = out.last_mut().expect("pushed above");
        if o.guesses.is_none() && r.x_d.median < 1.0 {
            o.guesses = Some(r.load);
        }
        if o.contradictions.is_none() && r.x_c.median < 1.0 {
            o.contradictions = Some(r.load);
        }
        if o.errors.is_none() && r.ber.median > 0.0 {
            o.errors = Some(r.load);
        }
    }
    out
}

pub fn sweep_phase_diagram(config: &BatchConfig) -> Result<PhaseDiagram> {
    let rows = run_batch(config)?;
    let onsets = find_onsets(&rows);
    Ok(PhaseDiagram { rows, onsets })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub stats: BatchStats,
    pub ode_x_d: f64,
    pub termination: Termination,
    /// `|ODE - empirical median|`.
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    /// Adjacent loads whose empirical medians differ by more than 0.3.
    pub jumps: Vec<(f64, f64)>,
    pub pass: bool,
}

/// Gap threshold between the mean-field and empirical `x_D`.
pub const MAX_GAP: f64 = 0.02;

/// Mean-field `x_D` against the empirical quartiles of the regular ensemble.
///
/// The report passes when, at every load where both values are below one,
/// the gap is at most [`MAX_GAP`] and the interquartile interval contains the
/// mean-field value.
pub fn compare_asymptotic_empirical(
    degree: f64,
    loads: GridRange,
    users: usize,
    samples: usize,
    seed: u64,
) -> Result<ComparisonReport> {
    if degree.fract() != 0.0 || degree < 1.0 {
        return Err(Error::invalid(format!("comparison needs an integer degree, got {degree}")));
    }
    let config = BatchConfig {
        ensemble: Ensemble::Regular,
        users,
        loads,
        degrees: GridRange::single(degree),
        erasure: 0.0,
        samples,
        seed,
    };
    let stats = run_batch(&config)?;
    let ode_config = IntegrationConfig {
        record: false,
        ..IntegrationConfig::default()
    };
    let odes: Vec<_> = stats
        .par_iter()
        .map(|s| asymptotics::solve(Ensemble::Regular, s.load, degree, None, ode_config))
        .collect::<Result<_>>()?;
    let rows: Vec<ComparisonRow> = stats
        .into_iter()
        .zip(odes)
        .map(|(stats, t)| ComparisonRow {
            gap: (t.x_d - stats.x_d.median).abs(),
            ode_x_d: t.x_d,
            termination: t.termination,
            stats,
        })
        .collect();
    let jumps = rows
        .windows(2)
        .filter(|w| (w[0].stats.x_d.median - w[1].stats.x_d.median).abs() > 0.3)
        .map(|w| (w[0].stats.load, w[1].stats.load))
        .collect();
    let pass = rows.iter().all(|r| {
        r.ode_x_d >= 1.0
            || r.stats.x_d.median >= 1.0
            || (r.gap <= MAX_GAP && r.stats.x_d.q1 <= r.ode_x_d && r.ode_x_d <= r.stats.x_d.q3)
    });
    Ok(ComparisonReport { rows, jumps, pass })
}

impl ComparisonReport {
    /// Batch columns followed by `ode_xd, termination, gap`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = CSV_HEADER.to_vec();
        header.extend(["ode_xd", "termination", "gap"]);
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = stats_record(&r.stats);
            let term = serde_json::to_value(r.termination).expect("unit enum");
            rec.push(r.ode_x_d.to_string());
            rec.push(term.as_str().unwrap_or_default().to_string());
            rec.push(r.gap.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
