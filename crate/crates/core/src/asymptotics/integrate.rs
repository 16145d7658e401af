//! Fixed-step RK4 with bisection refinement of the end of the deterministic
//! phase.

use std::io::Write;

use serde::Serialize;

use super::system::{MeanField, PoissonSystem, RegularFactors, RegularSystem};
use super::{default_lmax, poisson_initial_state, regular_initial_state, OdeParams, OdeState};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};

/// Densities below this are treated as a blown-up integration.
const NEGATIVE_TOLERANCE: f64 = -1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegrationConfig {
    pub dx: f64,
    pub root_tol: f64,
    /// Keep every accepted step in the trajectory.
    pub record: bool,
    /// Normalized gap below which a run without a root is flagged
    /// [`Termination::NearRoot`].
    pub near_root: f64,
    /// End the trajectory at the first root. When false, the root is still
    /// located but integration carries on to `1 - dx`; only the Poissonian
    /// system stays meaningful past it.
    pub stop_at_root: bool,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        IntegrationConfig {
            dx: 1e-4,
            root_tol: 1e-10,
            record: true,
            near_root: 1e-4,
            stop_at_root: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Termination {
    #[serde(rename = "ROOT_FOUND")]
    RootFound,
    #[serde(rename = "REACHED_ONE")]
    ReachedOne,
    /// No sign change, but the unit-clause set came within the near-root
    /// threshold of emptying: the parameters sit at the jump.
    #[serde(rename = "NEAR_ROOT")]
    NearRoot,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: f64,
    pub y: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub x_d: f64,
    pub termination: Termination,
    /// Smallest fraction of remaining users inside the unit-clause set,
    /// `(1 - x - omega_0) / (1 - x)`, over the accepted steps.
    pub min_gap: f64,
    num_omega: usize,
    params: OdeParams,
}

fn rk4_step<S: MeanField>(system: &S, x: f64, y: &[f64], h: f64, out: &mut [f64], work: &mut [Vec<f64>; 5]) {
    let [k1, k2, k3, k4, tmp] = work;
    system.rhs(x, y, k1);
    for i in 0..y.len() {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    system.rhs(x + 0.5 * h, tmp, k2);
    for i in 0..y.len() {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    system.rhs(x + 0.5 * h, tmp, k3);
    for i in 0..y.len() {
        tmp[i] = y[i] + h * k3[i];
    }
    system.rhs(x + h, tmp, k4);
    for i in 0..y.len() {
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Integrates from `initial` with classic RK4 at fixed step `dx`.
///
/// After each step the gap `g = omega_0 - (1 - x)` is checked; on a sign
/// change the step length is bisected (re-integrating from the last accepted
/// state) until `|g| <= root_tol`. Without a root the run stops at
/// `x = 1 - dx` and reports `x_D = 1`.
pub fn integrate<S: MeanField>(system: &S, initial: &OdeState, config: IntegrationConfig) -> Result<Trajectory> {
    if !(config.dx > 0.0 && config.dx <= 1e-3) {
        return Err(Error::invalid(format!("step dx must lie in (0, 1e-3], got {}", config.dx)));
    }
    if !(config.root_tol > 0.0 && config.root_tol <= 1e-6) {
        return Err(Error::invalid(format!(
            "root tolerance must lie in (0, 1e-6], got {}",
            config.root_tol
        )));
    }
    if initial.omega.len() != system.num_omega() || initial.lmax() != system.lmax() {
        return Err(Error::invalid("initial state does not match the system layout"));
    }

    let mut y = initial.to_vec();
    let n = y.len();
    let mut next = vec![0.0; n];
    let mut work: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; n]);
    let mut samples = Vec::new();
    let mut x = initial.x;
    let mut min_gap = f64::INFINITY;
    let traj = |samples: Vec<Sample>, x_d, termination, min_gap| Trajectory {
        samples,
        x_d,
        termination,
        min_gap,
        num_omega: system.num_omega(),
        params: system.params(),
    };

    if config.record {
        samples.push(Sample { x, y: y.clone() });
    }
    let mut root = None;
    if system.gap(x, &y) >= 0.0 {
        if config.stop_at_root {
            return Ok(traj(samples, x, Termination::RootFound, 0.0));
        }
        root = Some(x);
    }

    let steps = ((1.0 - x) / config.dx).round() as usize;
    for i in 1..steps {
        let x_next = initial.x + i as f64 * config.dx;
        if root.is_some() {
            rk4_step(system, x, &y, x_next - x, &mut next, &mut work);
        } else {
            match advance(system, x, &y, x_next - x, &mut next, &mut work, 0)? {
                Advance::Done => {
                    let g = system.gap(x_next, &next);
                    min_gap = min_gap.min(-g / (1.0 - x_next));
                }
                Advance::Crossed { x: xs, y: ys, h } => {
                    let (x_root, y_root) = bisect_root(system, xs, &ys, h, config.root_tol, &mut work);
                    if config.stop_at_root {
                        if config.record {
                            samples.push(Sample { x: x_root, y: y_root });
                        }
                        return Ok(traj(samples, x_root, Termination::RootFound, 0.0));
                    }
                    root = Some(x_root);
                    rk4_step(system, x, &y, x_next - x, &mut next, &mut work);
                }
            }
        }
        std::mem::swap(&mut y, &mut next);
        x = x_next;
        if config.record {
            samples.push(Sample { x, y: y.clone() });
        }
    }

    if let Some(x_root) = root {
        return Ok(traj(samples, x_root, Termination::RootFound, 0.0));
    }
    let termination = if min_gap < config.near_root {
        Termination::NearRoot
    } else {
        Termination::ReachedOne
    };
    Ok(traj(samples, 1.0, termination, min_gap))
}

/// Deepest step halving; a step of `dx / 2^MAX_SPLIT` is always taken.
const MAX_SPLIT: u32 = 30;

enum Advance {
    Done,
    /// The gap turned non-negative within the sub-step of length `h`
    /// starting at `(x, y)`.
    Crossed { x: f64, y: Vec<f64>, h: f64 },
}

/// One RK4 step of length `h`, halved recursively while it is long compared
/// with the system's relaxation time or would leave a density below
/// [`NEGATIVE_TOLERANCE`]. Near the end of the phase the clause-holding
/// populations decay at a rate inversely proportional to their total, so
/// the steps shrink geometrically towards the root.
fn advance<S: MeanField>(
    system: &S,
    x: f64,
    y: &[f64],
    h: f64,
    out: &mut [f64],
    work: &mut [Vec<f64>; 5],
    depth: u32,
) -> Result<Advance> {
    let stiff = h * system.stiffness(x, y) > 0.5;
    if !stiff || depth >= MAX_SPLIT {
        rk4_step(system, x, y, h, out, work);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                x: x + h,
                reason: "non-finite state; reduce the step".into(),
            });
        }
        if system.gap(x + h, out) >= 0.0 {
            return Ok(Advance::Crossed { x, y: y.to_vec(), h });
        }
        let Some(v) = out.iter().copied().find(|&v| v < NEGATIVE_TOLERANCE) else {
            return Ok(Advance::Done);
        };
        if depth >= MAX_SPLIT {
            return Err(Error::Integration {
                x: x + h,
                reason: format!("negative density {v:e}; reduce the step"),
            });
        }
    }
    let half = 0.5 * h;
    let mut mid = vec![0.0; y.len()];
    if let crossed @ Advance::Crossed { .. } = advance(system, x, y, half, &mut mid, work, depth + 1)? {
        return Ok(crossed);
    }
    advance(system, x + half, &mid, h - half, out, work, depth + 1)
}

/// Halving depth inside root refinement. States past the root legitimately
/// carry small negative densities, so the halving there is bounded.
const ROOT_SPLIT: u32 = 6;

/// [`rk4_step`] with the same halving as [`advance`] but without watching
/// the gap; used inside a step already known to contain the root.
fn propagate<S: MeanField>(
    system: &S,
    x: f64,
    y: &[f64],
    h: f64,
    out: &mut [f64],
    work: &mut [Vec<f64>; 5],
    depth: u32,
) {
    let stiff = h * system.stiffness(x, y) > 0.5;
    if depth >= ROOT_SPLIT || !stiff {
        rk4_step(system, x, y, h, out, work);
        if depth >= ROOT_SPLIT || out.iter().all(|&v| v >= NEGATIVE_TOLERANCE) {
            return;
        }
    }
    let half = 0.5 * h;
    let mut mid = vec![0.0; y.len()];
    propagate(system, x, y, half, &mut mid, work, depth + 1);
    propagate(system, x + half, &mid, h - half, out, work, depth + 1);
}

/// Bisects the step length `h` in `(0, h_max]` for `g = 0`, knowing
/// `g(x) < 0 <= g(x + h_max)`.
fn bisect_root<S: MeanField>(
    system: &S,
    x: f64,
    y: &[f64],
    h_max: f64,
    tol: f64,
    work: &mut [Vec<f64>; 5],
) -> (f64, Vec<f64>) {
    let mut lo = 0.0;
    let mut hi = h_max;
    let mut out = vec![0.0; y.len()];
    let mut best = (x + hi, {
        propagate(system, x, y, hi, &mut out, work, 0);
        out.clone()
    });
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        propagate(system, x, y, mid, &mut out, work, 0);
        let g = system.gap(x + mid, &out);
        best = (x + mid, out.clone());
        if g.abs() <= tol || hi - lo < f64::EPSILON * 4.0 {
            break;
        }
        if g < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    best
}

impl Trajectory {
    pub fn num_omega(&self) -> usize {
        self.num_omega
    }

    pub fn params(&self) -> OdeParams {
        self.params
    }

    pub fn state(&self, index: usize) -> OdeState {
        let s = &self.samples[index];
        OdeState::from_slice(s.x, &s.y, self.num_omega, self.params)
    }

    /// `omega_0` at sample `index`.
    pub fn omega0(&self, index: usize) -> f64 {
        self.samples[index].y[0]
    }

    /// `phi_l` at sample `index`.
    pub fn phi(&self, index: usize, l: usize) -> f64 {
        self.samples[index].y[self.num_omega + l - 2]
    }

    /// CSV with columns `x, omega_0, phi_2..phi_lmax`, followed by
    /// `omega_1..omega_C` for the regular system.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let lmax = self.params.lmax;
        let mut header = vec!["x".to_string(), "omega_0".to_string()];
        header.extend((2..=lmax).map(|l| format!("phi_{l}")));
        header.extend((1..self.num_omega).map(|c| format!("omega_{c}")));
        w.write_record(&header)?;
        for s in &self.samples {
            let mut row = vec![s.x.to_string(), s.y[0].to_string()];
            row.extend(s.y[self.num_omega..].iter().map(|v| v.to_string()));
            row.extend(s.y[1..self.num_omega].iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn result_json(&self) -> String {
        #[derive(Serialize)]
        struct Out {
            #[serde(rename = "x_D")]
            x_d: f64,
            termination: Termination,
            min_gap: f64,
        }
        serde_json::to_string(&Out {
            x_d: self.x_d,
            termination: self.termination,
            min_gap: self.min_gap,
        })
        .expect("plain data serializes")
    }
}

/// Builds the initial state for `ensemble`, integrates it and returns the
/// trajectory (samples omitted unless `config.record`).
pub fn solve(
    ensemble: Ensemble,
    load: f64,
    degree: f64,
    lmax: Option<usize>,
    config: IntegrationConfig,
) -> Result<Trajectory> {
    let lmax = lmax.unwrap_or_else(|| default_lmax(degree * load));
    match ensemble {
        Ensemble::Poisson => {
            let init = poisson_initial_state(load, degree, lmax)?;
            integrate(&PoissonSystem::for_state(&init), &init, config)
        }
        Ensemble::Regular => {
            let init = regular_initial_state(load, degree, lmax)?;
            integrate(&RegularSystem::for_state(&init, RegularFactors::Ensemble), &init, config)
        }
        Ensemble::Explicit => Err(Error::invalid("no mean-field system for explicit codes")),
    }
}

/// Predicted end of the deterministic phase, with default step and
/// tolerance.
pub fn find_xd(load: f64, degree: f64, ensemble: Ensemble) -> Result<f64> {
    let config = IntegrationConfig {
        record: false,
        ..IntegrationConfig::default()
    };
    Ok(solve(ensemble, load, degree, None, config)?.x_d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_coarse_steps() {
        let init = poisson_initial_state(2.0, 3.0, 31).unwrap();
        let sys = PoissonSystem::for_state(&init);
        let bad = IntegrationConfig {
            dx: 0.01,
            ..Default::default()
        };
        assert!(integrate(&sys, &init, bad).is_err());
        let bad = IntegrationConfig {
            root_tol: 1e-3,
            ..Default::default()
        };
        assert!(integrate(&sys, &init, bad).is_err());
    }

    #[test]
    fn poisson_root_is_refined() {
        let init = poisson_initial_state(1.0, 3.0, 30).unwrap();
        let sys = PoissonSystem::for_state(&init);
        let t = integrate(&sys, &init, IntegrationConfig::default()).unwrap();
        assert_eq!(t.termination, Termination::RootFound);
        assert!(t.x_d > 0.0 && t.x_d < 1.0);
        let last = t.samples.last().unwrap();
        assert!((sys.gap(last.x, &last.y)).abs() <= 1e-10);
        assert!(t.samples.windows(2).all(|w| w[0].x < w[1].x));
    }

    #[test]
    fn continues_past_the_root_on_request() {
        let init = poisson_initial_state(2.0, 3.0, 31).unwrap();
        let sys = PoissonSystem::for_state(&init);
        let stop = integrate(&sys, &init, IntegrationConfig::default()).unwrap();
        let cfg = IntegrationConfig {
            dx: 1e-3,
            stop_at_root: false,
            ..Default::default()
        };
        let full = integrate(&sys, &init, cfg).unwrap();
        assert_eq!(full.termination, Termination::RootFound);
        assert!((full.x_d - stop.x_d).abs() < 1e-9);
        assert!((full.samples.last().unwrap().x - 0.999).abs() < 1e-12);
    }

    #[test]
    fn initial_slope_matches_finite_difference() {
        let init = poisson_initial_state(2.0, 3.0, 31).unwrap();
        let sys = PoissonSystem::for_state(&init);
        let direct = -init.omega[0]
            * (2..=31)
                .map(|l| (l * (l - 1)) as f64 * super::super::z_factor(l).unwrap() * init.phi[l])
                .sum::<f64>();

        let h = 1e-6;
        let mut work: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; 31]);
        let y0 = init.to_vec();
        let mut y1 = y0.clone();
        let mut y2 = y0.clone();
        rk4_step(&sys, 0.0, &y0, h, &mut y1, &mut work);
        rk4_step(&sys, h, &y1, h, &mut y2, &mut work);
        // second-order one-sided difference
        let fd = (-3.0 * y0[0] + 4.0 * y1[0] - y2[0]) / (2.0 * h);
        assert!(((fd - direct) / direct).abs() < 1e-6, "{fd} vs {direct}");
    }

    #[test]
    fn csv_header_names() {
        let t = solve(Ensemble::Regular, 0.5, 3.0, None, IntegrationConfig::default()).unwrap();
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("x,omega_0,phi_2,phi_3,"));
        assert!(header.ends_with(",phi_30,omega_1,omega_2,omega_3"));
    }
}
