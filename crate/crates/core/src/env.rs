//! The Lévy environment: a non-positive drift `-sigma` plus a finite
//! compound-Poisson jump measure with finitely many atoms.

use rand::Rng;

use crate::error::{Error, Result};

/// One atom `w * delta_z` of the jump measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub z: f64,
    pub w: f64,
}

/// Drift `sigma >= 0` and atomic jump measure `nu = sum w_i delta_{z_i}` on
/// `(-1, 1) \ {0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    sigma: f64,
    atoms: Vec<Atom>,
    lambda: f64,
}

/// The scalars `d_j`, `e_{k,j}`, `f_j`, `f_{k,j}` entering both ODE systems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeCoeffs {
    pub d_j: f64,
    pub e_kj: f64,
    pub f_j: f64,
    pub f_kj: f64,
}

impl Environment {
    pub fn new(sigma: f64, atoms: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::InvalidEnvironment(format!(
                "sigma must be finite and >= 0, got {sigma}"
            )));
        }
        let mut out = Vec::new();
        for (z, w) in atoms {
            if !(z > -1.0 && z < 1.0) {
                return Err(Error::InvalidEnvironment(format!(
                    "jump size {z} outside (-1, 1)"
                )));
            }
            if z == 0.0 {
                return Err(Error::InvalidEnvironment(
                    "jump size 0 has no effect and is rejected".into(),
                ));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidEnvironment(format!(
                    "atom weight must be finite and > 0, got {w}"
                )));
            }
            out.push(Atom { z, w });
        }
        let lambda = out.iter().map(|a| a.w).sum();
        Ok(Self {
            sigma,
            atoms: out,
            lambda,
        })
    }

    /// Environment without jumps.
    pub fn drift_only(sigma: f64) -> Result<Self> {
        Self::new(sigma, [])
    }

    /// `nu = lambda * delta_z`, the family used for the published table.
    pub fn single_atom(sigma: f64, z: f64, lambda: f64) -> Result<Self> {
        Self::new(sigma, [(z, lambda)])
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// `lambda = nu((-1, 1))`.
    pub fn total_mass(&self) -> f64 {
        self.lambda
    }

    /// `sum_i w_i z_i^p`.
    pub fn moment(&self, p: u32) -> f64 {
        self.atoms.iter().map(|a| a.w * a.z.powi(p as i32)).sum()
    }

    /// True when every atom is negative, so selection only ever favors type 1.
    pub fn is_one_sided(&self) -> bool {
        self.atoms.iter().all(|a| a.z < 0.0)
    }

    /// Branching coefficient `tau(i, j)`. Zero outside `i - 1 <= j <= 2i`;
    /// `i(i-1)` on the coalescence diagonal `j = i - 1`; otherwise
    /// `binom(i, j-i) * int (1+z)^(2i-j) (-z)^(j-i) nu(dz)`, which may be negative.
    pub fn tau(&self, i: usize, j: usize) -> f64 {
        if j + 1 < i || j > 2 * i {
            return 0.0;
        }
        if j + 1 == i {
            return (i * (i - 1)) as f64;
        }
        let up = (2 * i - j) as i32;
        let down = (j - i) as i32;
        let integral: f64 = self
            .atoms
            .iter()
            .map(|a| a.w * (1.0 + a.z).powi(up) * (-a.z).powi(down))
            .sum();
        binomial(i, j - i) * integral
    }

    /// Total exit rate `d_j = lambda + j(j-1) + j sigma` of a configuration with `j` lines.
    pub fn d(&self, j: usize) -> f64 {
        let j = j as f64;
        self.lambda + j * (j - 1.0) + j * self.sigma
    }

    pub fn ode_coeffs(&self, k: usize, j: usize) -> OdeCoeffs {
        let (kf, jf) = (k as f64, j as f64);
        OdeCoeffs {
            d_j: self.d(j),
            e_kj: (kf + 1.0) * kf - jf * (jf - 1.0),
            f_j: (jf - 1.0) * self.sigma,
            f_kj: (kf - 1.0 - jf) * self.sigma,
        }
    }

    /// Draws a jump size with probability `w_i / lambda`. Panics on an empty measure.
    pub fn sample_jump<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        assert!(self.lambda > 0.0, "no jumps to sample from");
        let mut u = rng.random::<f64>() * self.lambda;
        for a in &self.atoms {
            if u < a.w {
                return a.z;
            }
            u -= a.w;
        }
        self.atoms[self.atoms.len() - 1].z
    }
}

/// `binom(n, k)` as a float, exact for the sizes used here.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0;
    for t in 0..k {
        acc = acc * (n - t) as f64 / (t + 1) as f64;
    }
    acc.round()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table_env() -> Environment {
        Environment::single_atom(0.8, 0.1, 0.8).unwrap()
    }

    #[test]
    fn total_mass_examples() {
        assert_eq!(table_env().total_mass(), 0.8);
        assert_eq!(Environment::drift_only(0.8).unwrap().total_mass(), 0.0);
        let two = Environment::new(0.0, [(0.2, 0.3), (-0.4, 0.5)]).unwrap();
        assert!((two.total_mass() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn moment_examples() {
        assert!((table_env().moment(1) - 0.08).abs() < 1e-15);
        assert_eq!(table_env().moment(0), 0.8);
        let two = Environment::new(0.0, [(0.2, 0.3), (-0.4, 0.5)]).unwrap();
        assert!((two.moment(2) - 0.092).abs() < 1e-15);
    }

    #[test]
    fn tau_examples() {
        let env = table_env();
        assert_eq!(env.tau(2, 1), 2.0);
        assert_eq!(env.tau(1, 3), 0.0);
        assert!((env.tau(1, 1) - 0.88).abs() < 1e-14);
        assert!((env.tau(2, 3) + 0.176).abs() < 1e-14);
    }

    #[test]
    fn ode_coeff_examples() {
        let env = table_env();
        assert!((env.ode_coeffs(1, 1).d_j - 1.6).abs() < 1e-15);
        assert_eq!(env.ode_coeffs(3, 2).e_kj, 10.0);
        let flat = Environment::new(0.0, [(0.3, 1.0)]).unwrap();
        for j in 1..10 {
            assert_eq!(flat.ode_coeffs(10, j).f_j, 0.0);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Environment::new(-0.1, []).is_err());
        assert!(Environment::new(0.5, [(1.0, 0.5)]).is_err());
        assert!(Environment::new(0.5, [(-1.0, 0.5)]).is_err());
        assert!(Environment::new(0.5, [(0.0, 0.5)]).is_err());
        assert!(Environment::new(0.5, [(0.3, 0.0)]).is_err());
        assert!(Environment::new(f64::NAN, []).is_err());
    }

    #[test]
    fn tau_support_and_pure_coalescence() {
        let env = Environment::new(0.4, [(0.3, 0.7), (-0.6, 0.2)]).unwrap();
        let empty = Environment::drift_only(0.4).unwrap();
        for i in 1..=20 {
            for j in 1..=20 {
                if j > 2 * i || j + 1 < i {
                    assert_eq!(env.tau(i, j), 0.0);
                }
                if j + 1 != i {
                    assert_eq!(empty.tau(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn binomial_small_values() {
        assert_eq!(binomial(5, 2), 10.0);
        assert_eq!(binomial(10, 0), 1.0);
        assert_eq!(binomial(3, 4), 0.0);
        assert_eq!(binomial(40, 20), 137_846_528_820.0);
    }

    fn atom_strategy() -> impl Strategy<Value = (f64, f64)> {
        (-0.99f64..0.99, 0.01f64..3.0).prop_filter("nonzero jump", |(z, _)| z.abs() > 1e-3)
    }

    proptest! {
        #[test]
        fn tau_one_one_expands(sigma in 0.0f64..3.0, atoms in prop::collection::vec(atom_strategy(), 0..5)) {
            let env = Environment::new(sigma, atoms).unwrap();
            let expected = env.total_mass() + env.moment(1);
            prop_assert!((env.tau(1, 1) - expected).abs() < 1e-14 * (1.0 + expected.abs()));
        }

        #[test]
        fn moments_bounded_by_mass(atoms in prop::collection::vec(atom_strategy(), 0..5), p in 0u32..8) {
            let env = Environment::new(0.0, atoms).unwrap();
            prop_assert_eq!(env.moment(0), env.total_mass());
            prop_assert!(env.moment(p).abs() <= env.total_mass() + 1e-12);
        }
    }
}
