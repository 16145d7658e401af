//! Closed-form solution of the Poissonian system.
//!
//! With `t = 1 - x` the chip equations are triangular and every `phi_l` is a
//! polynomial in `t` of degrees `l..=l_max`. Coefficients are kept in the
//! monomial basis for evaluation and can be re-expanded in the homogeneous
//! basis `t^k x^(l_max - k)`.

use super::{poisson_initial_state, z_factor, OdeState};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct PolynomialSolution {
    lmax: usize,
    /// `mono[l][i]`: coefficient of `t^i` in `phi_l`, zero for `i < l`.
    mono: Vec<Vec<f64>>,
    z: Vec<f64>,
    ln_omega0_start: f64,
}

/// Solves the Poissonian chip equations exactly from the initial condition
/// at load `beta` and degree `C`.
pub fn poisson_polynomial_solution(load: f64, degree: f64, lmax: usize) -> Result<PolynomialSolution> {
    let init = poisson_initial_state(load, degree, lmax)?;
    PolynomialSolution::from_state(&init)
}

impl PolynomialSolution {
    pub fn from_state(init: &OdeState) -> Result<Self> {
        let lmax = init.lmax();
        let mut z = vec![0.0; lmax + 2];
        for (l, zl) in z.iter_mut().enumerate().skip(2) {
            *zl = z_factor(l)?;
        }
        let mut mono = vec![vec![0.0; lmax + 1]; lmax + 1];
        for l in (2..=lmax).rev() {
            if l < lmax {
                let a = (l + 1) as f64 * (1.0 - z[l + 1]);
                for i in l + 1..=lmax {
                    mono[l][i] = -a * mono[l + 1][i] / (i - l) as f64;
                }
            }
            let rest: f64 = mono[l][l + 1..].iter().sum();
            mono[l][l] = init.phi[l] - rest;
        }
        Ok(PolynomialSolution {
            lmax,
            mono,
            z,
            ln_omega0_start: init.omega[0].ln(),
        })
    }

    pub fn lmax(&self) -> usize {
        self.lmax
    }

    /// Coefficients of `t^i`, `i = 0..=l_max`, in `phi_l`.
    pub fn monomial_coefficients(&self, l: usize) -> &[f64] {
        &self.mono[l]
    }

    /// Coefficients `c_k` with `phi_l = sum_k c_k (1-x)^k x^(l_max-k)`.
    pub fn basis_coefficients(&self, l: usize) -> Vec<f64> {
        let n = self.lmax;
        let mut out = vec![0.0; n + 1];
        for i in l..=n {
            let a = self.mono[l][i];
            // t^i = t^i (t + x)^(n - i)
            let mut binom = 1.0;
            for k in i..=n {
                if k > i {
                    binom = binom * (n - k + 1) as f64 / (k - i) as f64;
                }
                out[k] += a * binom;
            }
        }
        out
    }

    /// `phi_l(x)`; zero outside `2..=l_max`.
    pub fn phi(&self, l: usize, x: f64) -> f64 {
        if !(2..=self.lmax).contains(&l) {
            return 0.0;
        }
        let t = 1.0 - x;
        self.mono[l].iter().rev().fold(0.0, |acc, &c| acc * t + c)
    }

    /// `phi_l(x)` summed in the homogeneous basis.
    pub fn phi_basis(&self, l: usize, x: f64) -> f64 {
        if !(2..=self.lmax).contains(&l) {
            return 0.0;
        }
        let t = 1.0 - x;
        self.basis_coefficients(l)
            .iter()
            .enumerate()
            .map(|(k, c)| c * t.powi(k as i32) * x.powi((self.lmax - k) as i32))
            .sum()
    }

    /// `omega_0(x)` from the exact integral of its logarithmic derivative.
    pub fn omega0(&self, x: f64) -> f64 {
        let t = 1.0 - x;
        let mut acc = 0.0;
        for l in 2..=self.lmax {
            let w = (l * (l - 1)) as f64 * self.z[l];
            for i in l..=self.lmax {
                let p = (i - 1) as i32;
                acc += w * self.mono[l][i] * (1.0 - t.powi(p)) / p as f64;
            }
        }
        (self.ln_omega0_start - acc).exp()
    }

    /// First root of `omega_0(x) = 1 - x` found by scanning with step `dx`
    /// and bisecting; `1.0` when there is none before `1 - dx`.
    pub fn x_d(&self, dx: f64) -> f64 {
        let g = |x: f64| self.omega0(x) - (1.0 - x);
        if g(0.0) >= 0.0 {
            return 0.0;
        }
        let steps = (1.0 / dx).round() as usize;
        let mut lo = 0.0;
        for i in 1..steps {
            let hi = i as f64 * dx;
            if g(hi) >= 0.0 {
                let (mut a, mut b) = (lo, hi);
                for _ in 0..100 {
                    let m = 0.5 * (a + b);
                    if g(m) < 0.0 {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                return 0.5 * (a + b);
            }
            lo = hi;
        }
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_initial_condition() {
        let init = poisson_initial_state(2.0, 3.0, 31).unwrap();
        let sol = PolynomialSolution::from_state(&init).unwrap();
        for l in 2..=31 {
            assert!((sol.phi(l, 0.0) - init.phi[l]).abs() < 1e-12);
        }
        assert!((sol.omega0(0.0) - init.omega[0]).abs() < 1e-15);
    }

    #[test]
    fn top_length_decays_as_power() {
        let sol = poisson_polynomial_solution(1.0, 3.0, 30).unwrap();
        let init = poisson_initial_state(1.0, 3.0, 30).unwrap();
        let x = 0.3;
        let expected = init.phi[30] * 0.7f64.powi(30);
        assert!((sol.phi(30, x) - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn bases_agree() {
        let sol = poisson_polynomial_solution(1.5, 3.0, 30).unwrap();
        for &x in &[0.0, 0.2, 0.5, 0.9] {
            for l in [2, 3, 7] {
                let a = sol.phi(l, x);
                let b = sol.phi_basis(l, x);
                assert!((a - b).abs() < 1e-9, "l={l} x={x}: {a} vs {b}");
            }
        }
    }
}
