//! Right-hand sides of the mean-field equations.
//!
//! The flat state vector is `omega[0..n_omega]` followed by
//! `phi[2..=lmax]`.

use super::{z_factor, OdeParams, OdeState};

/// An autonomous-in-`x` mean-field system.
pub trait MeanField {
    /// Number of `omega` entries at the front of the flat state.
    fn num_omega(&self) -> usize;

    fn lmax(&self) -> usize;

    fn params(&self) -> OdeParams;

    /// Writes `dy/dx` into `dy`.
    fn rhs(&self, x: f64, y: &[f64], dy: &mut [f64]);

    /// `g(x) = omega_0 - (1 - x)`.
    fn gap(&self, x: f64, y: &[f64]) -> f64 {
        y[0] - (1.0 - x)
    }

    /// Fastest relaxation rate at `(x, y)`; the integrator keeps
    /// `step * rate` below one half.
    fn stiffness(&self, _x: f64, _y: &[f64]) -> f64 {
        0.0
    }
}

fn z_table(lmax: usize) -> Vec<f64> {
    // index up to lmax + 1 so that z[l + 1] is always readable
    let mut z = vec![0.0; lmax + 2];
    for (l, slot) in z.iter_mut().enumerate().skip(2) {
        *slot = z_factor(l).expect("l >= 2");
    }
    z
}

/// Shared chip-population update:
/// `dphi_l = rate * (-l phi_l + (l+1)(1 - z_{l+1}) phi_{l+1})`, the second
/// term absent at `l = lmax`.
fn chip_flow(phi: &[f64], z: &[f64], lmax: usize, rate: f64, dphi: &mut [f64]) {
    for l in 2..=lmax {
        let i = l - 2;
        let mut d = -(l as f64) * phi[i];
        if l < lmax {
            d += (l + 1) as f64 * (1.0 - z[l + 1]) * phi[i + 1];
        }
        dphi[i] = rate * d;
    }
}

/// `sum_l l (l-1) z_l phi_l`: unit clauses created per unit of `rate`.
fn clause_yield(phi: &[f64], z: &[f64], lmax: usize) -> f64 {
    (2..=lmax)
        .map(|l| (l * (l - 1)) as f64 * z[l] * phi[l - 2])
        .sum()
}

/// Poissonian ensemble: a decimated user sits on a chip of length `l` at a
/// rate proportional to `l / (1 - x)`, and new unit clauses hit users not yet
/// in the unit-clause set in proportion to their share of the remaining
/// users.
#[derive(Clone, Debug)]
pub struct PoissonSystem {
    params: OdeParams,
    z: Vec<f64>,
}

impl PoissonSystem {
    pub fn new(params: OdeParams) -> Self {
        PoissonSystem {
            z: z_table(params.lmax),
            params,
        }
    }

    pub fn for_state(state: &OdeState) -> Self {
        Self::new(state.params)
    }

    /// Derivative of a structured state.
    pub fn derivative(&self, state: &OdeState) -> OdeState {
        let y = state.to_vec();
        let mut dy = vec![0.0; y.len()];
        self.rhs(state.x, &y, &mut dy);
        OdeState::from_slice(state.x, &dy, 1, state.params)
    }
}

impl MeanField for PoissonSystem {
    fn num_omega(&self) -> usize {
        1
    }

    fn lmax(&self) -> usize {
        self.params.lmax
    }

    fn params(&self) -> OdeParams {
        self.params
    }

    fn rhs(&self, x: f64, y: &[f64], dy: &mut [f64]) {
        let t = 1.0 - x;
        let lmax = self.params.lmax;
        let (omega, phi) = y.split_at(1);
        let (domega, dphi) = dy.split_at_mut(1);
        chip_flow(phi, &self.z, lmax, 1.0 / t, dphi);
        domega[0] = -omega[0] / t * clause_yield(phi, &self.z, lmax) / t;
    }
}

/// How the regular system weighs decimations and new unit clauses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegularFactors {
    /// Degree-aware weights of the regular ensemble.
    Ensemble,
    /// Both weights forced to 1, which collapses `phi` and `omega_0` onto the
    /// Poissonian equations.
    Unit,
}

/// Regular ensemble with `C` edges per user.
///
/// A user holding `c` unit clauses keeps `C - c` edges in the residual
/// graph, so `omega_c` fixes the residual degree distribution. With
/// `s = sum_c (C - c) omega_c` residual edges and `n = sum_{c>=1} omega_c`
/// users in the unit-clause set:
///
/// * a decimation removes a uniform member of the set (`-omega_c / n`);
/// * it reaches chips through `d = sum_{c>=1} (C - c) omega_c / n` edges, so
///   the chip flow runs at `d / s` per unit length, written `e / (1 - x)`
///   with `e` the ratio of `d` to the mean residual degree `s / (1 - x)`;
/// * each new unit clause lands on a user of class `c` with probability
///   `(C - c) omega_c / s` and moves it to class `c + 1`.
#[derive(Clone, Debug)]
pub struct RegularSystem {
    params: OdeParams,
    degree: usize,
    z: Vec<f64>,
    factors: RegularFactors,
}

/// Intermediate weights of one regular right-hand-side evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct RegularWeights {
    /// Decimation weight relative to a uniformly chosen remaining user.
    pub e: f64,
    /// `f_c omega_c / (1 - x)`: share of new unit clauses landing in class `c`.
    pub landing: Vec<f64>,
    /// Unit clauses created per decimation.
    pub new_clauses: f64,
    /// Share of decimations taken from class `c` (zero at `c = 0`).
    pub removal: Vec<f64>,
}

impl RegularSystem {
    pub fn new(params: OdeParams, factors: RegularFactors) -> Self {
        let degree = params.degree as usize;
        RegularSystem {
            z: z_table(params.lmax),
            degree,
            params,
            factors,
        }
    }

    pub fn for_state(state: &OdeState, factors: RegularFactors) -> Self {
        Self::new(state.params, factors)
    }

    pub fn derivative(&self, state: &OdeState) -> OdeState {
        let y = state.to_vec();
        let mut dy = vec![0.0; y.len()];
        self.rhs(state.x, &y, &mut dy);
        OdeState::from_slice(state.x, &dy, self.degree + 1, state.params)
    }

    /// Evaluates the decimation and landing weights at `(x, y)`.
    pub fn weights(&self, x: f64, y: &[f64]) -> RegularWeights {
        let c_max = self.degree;
        let t = 1.0 - x;
        let omega: Vec<f64> = y[..=c_max].iter().map(|w| w.max(0.0)).collect();
        let phi = &y[c_max + 1..];
        let free_edges = |c: usize| (c_max - c) as f64;

        let members: f64 = omega[1..].iter().sum();
        let signed_members: f64 = y[1..=c_max].iter().sum();
        let removal: Vec<f64> = if signed_members > 0.0 && members > 0.0 {
            (0..=c_max)
                .map(|c| if c == 0 { 0.0 } else { omega[c] / members })
                .collect()
        } else if signed_members < 0.0 {
            // Overshoot past the end of the deterministic phase (integrator
            // stages only). A vanishing set consists of fresh single clauses,
            // so continue with that composition to keep the gap smooth.
            (0..=c_max).map(|c| if c == 1 { 1.0 } else { 0.0 }).collect()
        } else {
            vec![0.0; c_max + 1]
        };

        let (e, landing) = match self.factors {
            RegularFactors::Unit => (1.0, omega.iter().map(|w| w / t).collect()),
            RegularFactors::Ensemble => {
                let residual: f64 = (0..=c_max).map(|c| free_edges(c) * omega[c]).sum();
                if residual > 0.0 {
                    let reach: f64 = (1..=c_max).map(|c| free_edges(c) * removal[c]).sum();
                    let e = reach * t / residual;
                    let landing = (0..=c_max).map(|c| free_edges(c) * omega[c] / residual).collect();
                    (e, landing)
                } else {
                    (0.0, vec![0.0; c_max + 1])
                }
            }
        };
        let new_clauses = e / t * clause_yield(phi, &self.z, self.params.lmax);
        RegularWeights {
            e,
            landing,
            new_clauses,
            removal,
        }
    }
}

impl MeanField for RegularSystem {
    fn num_omega(&self) -> usize {
        self.degree + 1
    }

    fn lmax(&self) -> usize {
        self.params.lmax
    }

    fn params(&self) -> OdeParams {
        self.params
    }

    /// Members of the unit-clause set leave at rate `omega_c / n`.
    fn stiffness(&self, _x: f64, y: &[f64]) -> f64 {
        let members: f64 = y[1..=self.degree].iter().sum();
        if members > 0.0 {
            1.0 / members
        } else {
            0.0
        }
    }

    fn rhs(&self, x: f64, y: &[f64], dy: &mut [f64]) {
        let c_max = self.degree;
        let w = self.weights(x, y);
        let t = 1.0 - x;
        let (_, phi) = y.split_at(c_max + 1);
        let (domega, dphi) = dy.split_at_mut(c_max + 1);
        chip_flow(phi, &self.z, self.params.lmax, w.e / t, dphi);
        for c in 0..=c_max {
            let inflow = if c > 0 { w.landing[c - 1] } else { 0.0 };
            domega[c] = -w.removal[c] + (inflow - w.landing[c]) * w.new_clauses;
        }
    }
}
