//! Mean-field description of the deterministic phase of the decoder.
//!
//! Populations are tracked per user (`K`) and as functions of the rescaled
//! decimation time `x = X / K`:
//!
//! * `phi[l]`: degenerate residual chips of length `l` (`2 <= l <= l_max`);
//! * `omega[c]`: unassigned users holding `c` unit clauses. The Poissonian
//!   system only needs `omega[0]`, the regular one tracks `c = 0..=C`.
//!
//! The deterministic phase ends at the first `x_D` where every remaining
//! user is outside the unit-clause set, `omega[0](x_D) = 1 - x_D`.

mod integrate;
mod polynomial;
mod system;

pub use integrate::{find_xd, integrate, solve, IntegrationConfig, Sample, Termination, Trajectory};
pub use polynomial::{poisson_polynomial_solution, PolynomialSolution};
pub use system::{MeanField, PoissonSystem, RegularFactors, RegularSystem};

use num_rational::Ratio;

use crate::error::{Error, Result};

/// Probability that a degenerate chip of length `l` turns extremal when one
/// correctly assigned variable is removed: `2^(1-l) / (1 - 2^(1-l))`.
pub fn z_factor(l: usize) -> Result<f64> {
    if l < 2 {
        return Err(Error::invalid(format!("z is defined for l >= 2, got {l}")));
    }
    let p = 0.5f64.powi(l as i32 - 1);
    Ok(p / (1.0 - p))
}

/// [`z_factor`] in exact arithmetic, for `2 <= l <= 62`.
pub fn z_factor_exact(l: usize) -> Result<Ratio<i64>> {
    if !(2..=62).contains(&l) {
        return Err(Error::invalid(format!("exact z needs 2 <= l <= 62, got {l}")));
    }
    let p = Ratio::new(1i64, 1i64 << (l - 1));
    Ok(p / (Ratio::from_integer(1) - p))
}

/// Default chip-length cutoff: `max(ceil(L + 10 sqrt(L)), 30)`.
pub fn default_lmax(mean_chip_degree: f64) -> usize {
    let l = mean_chip_degree;
    ((l + 10.0 * l.sqrt()).ceil() as usize).max(30)
}

/// Ensemble parameters of a mean-field system.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdeParams {
    pub load: f64,
    pub degree: f64,
    pub lmax: usize,
}

impl OdeParams {
    /// Mean chip degree `L = C * beta`.
    pub fn mean_chip_degree(&self) -> f64 {
        self.degree * self.load
    }

    fn validate(&self) -> Result<()> {
        if !(self.load.is_finite() && self.load > 0.0) {
            return Err(Error::invalid(format!("load must be positive, got {}", self.load)));
        }
        if !(self.degree.is_finite() && self.degree > 0.0) {
            return Err(Error::invalid(format!("degree must be positive, got {}", self.degree)));
        }
        let l = self.mean_chip_degree();
        let need = l + 10.0 * l.sqrt();
        if (self.lmax as f64) < need {
            return Err(Error::invalid(format!(
                "l_max = {} is below L + 10 sqrt(L) = {need:.2}; the Poisson tail would be truncated",
                self.lmax
            )));
        }
        Ok(())
    }
}

/// Mean-field populations at time `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct OdeState {
    pub x: f64,
    /// Indexed by chip length; entries 0 and 1 stay zero.
    pub phi: Vec<f64>,
    /// Indexed by unit-clause multiplicity.
    pub omega: Vec<f64>,
    pub params: OdeParams,
}

impl OdeState {
    pub fn lmax(&self) -> usize {
        self.phi.len() - 1
    }

    /// `g(x) = omega_0 - (1 - x)`; negative while unit clauses remain.
    pub fn gap(&self) -> f64 {
        self.omega[0] - (1.0 - self.x)
    }

    /// Flat layout used by the integrator: `omega[..]` then `phi[2..=lmax]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.omega.clone();
        v.extend_from_slice(&self.phi[2..]);
        v
    }

    pub(crate) fn from_slice(x: f64, y: &[f64], num_omega: usize, params: OdeParams) -> Self {
        let mut phi = vec![0.0; 2];
        phi.extend_from_slice(&y[num_omega..]);
        OdeState {
            x,
            phi,
            omega: y[..num_omega].to_vec(),
            params,
        }
    }
}

/// `e^{-L} L^l / l!` for `l = 0..=lmax`.
fn poisson_pmf(mean: f64, lmax: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(lmax + 1);
    let mut term = (-mean).exp();
    p.push(term);
    for l in 1..=lmax {
        term *= mean / l as f64;
        p.push(term);
    }
    p
}

fn initial_phi(params: &OdeParams) -> Vec<f64> {
    let pmf = poisson_pmf(params.mean_chip_degree(), params.lmax);
    let mut phi = vec![0.0; params.lmax + 1];
    for l in 2..=params.lmax {
        phi[l] = pmf[l] * (1.0 - 0.5f64.powi(l as i32 - 1)) / params.load;
    }
    phi
}

/// `(1/beta) sum_{l=1}^{lmax} l 2^{1-l} e^{-L} L^l / l!`: unit clauses per
/// user revealed by initially extremal chips.
fn initial_clause_density(params: &OdeParams) -> f64 {
    let pmf = poisson_pmf(params.mean_chip_degree(), params.lmax);
    (1..=params.lmax)
        .map(|l| l as f64 * 0.5f64.powi(l as i32 - 1) * pmf[l])
        .sum::<f64>()
        / params.load
}

/// Poissonian initial condition: Poisson chip lengths thinned to their
/// degenerate fraction, and users outside every extremal chip.
pub fn poisson_initial_state(load: f64, degree: f64, lmax: usize) -> Result<OdeState> {
    let params = OdeParams { load, degree, lmax };
    params.validate()?;
    let omega0 = (-initial_clause_density(&params)).exp();
    Ok(OdeState {
        x: 0.0,
        phi: initial_phi(&params),
        omega: vec![omega0],
        params,
    })
}

/// Regular initial condition: the same chip populations, with unit-clause
/// multiplicities `Binomial(C, p)` where `p` is the chance that one of a
/// user's `C` edges lands on an extremal chip.
pub fn regular_initial_state(load: f64, degree: f64, lmax: usize) -> Result<OdeState> {
    let params = OdeParams { load, degree, lmax };
    params.validate()?;
    if degree.fract() != 0.0 {
        return Err(Error::invalid(format!(
            "the regular mean-field system needs an integer degree, got {degree}"
        )));
    }
    let c = degree as usize;
    let p = initial_clause_density(&params) / degree;
    let mut omega = Vec::with_capacity(c + 1);
    let mut binom = 1.0;
    for k in 0..=c {
        if k > 0 {
            binom = binom * (c - k + 1) as f64 / k as f64;
        }
        omega.push(binom * p.powi(k as i32) * (1.0 - p).powi((c - k) as i32));
    }
    Ok(OdeState {
        x: 0.0,
        phi: initial_phi(&params),
        omega,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_examples() {
        assert_eq!(z_factor(2).unwrap(), 1.0);
        assert!((z_factor(3).unwrap() - 1.0 / 3.0).abs() < 1e-16);
        assert_eq!(z_factor(10).unwrap(), 1.0 / 511.0);
        assert!(z_factor(1).is_err());
        assert_eq!(z_factor_exact(10).unwrap(), Ratio::new(1, 511));
    }

    #[test]
    fn poisson_initial_values() {
        let s = poisson_initial_state(2.0, 3.0, 31).unwrap();
        let phi2 = 4.5 * (-6.0f64).exp();
        assert!((s.phi[2] - phi2).abs() < 1e-15);
        assert!((phi2 - 0.011154).abs() < 1e-6);
        assert_eq!(s.phi[1], 0.0);
        let closed = (-3.0 * (-3.0f64).exp()).exp();
        assert!((s.omega[0] - closed).abs() < 1e-10);
        assert!((s.omega[0] - 0.86126).abs() < 1e-5);
    }

    #[test]
    fn regular_initial_values() {
        let s = regular_initial_state(2.0, 3.0, 31).unwrap();
        let p = (-3.0f64).exp();
        assert!((s.omega[0] - (1.0 - p).powi(3)).abs() < 1e-12);
        assert!((s.omega[0] - 0.857952).abs() < 1e-6);
        assert!((s.omega[3] - p.powi(3)).abs() < 1e-15);
        assert!((s.omega.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(regular_initial_state(2.0, 2.5, 31).is_err());
    }

    #[test]
    fn tail_check() {
        assert!(poisson_initial_state(2.0, 3.0, 20).is_err());
        assert_eq!(default_lmax(6.0), 31);
        assert_eq!(default_lmax(2.0), 30);
    }
}
