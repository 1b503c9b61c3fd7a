//! Ideal target gates used as oracles for designed pulses.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg;
use crate::operator::{OperatorMatrix, Role};
use crate::spin::MAX_SPINS;

/// 3-bit compression: swaps basis states |011⟩ and |100⟩.
pub fn ideal_comp_unitary(n_spins: usize) -> Result<OperatorMatrix> {
    if n_spins != 3 {
        return Err(Error::SpinCount { got: n_spins, max: 3 });
    }
    let mut u = linalg::zeros(8);
    for b in 0..8usize {
        let image = match b {
            0b011 => 0b100,
            0b100 => 0b011,
            other => other,
        };
        u[(image, b)] = C64::new(1.0, 0.0);
    }
    Ok(OperatorMatrix::from_trusted(u, Role::Propagator))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeVariant {
    PlainSwap,
    /// SWAP with a sign flip on |11⟩.
    PhaseVariant,
}

/// Polarization exchange between spins `a` and `b` of an `n_spins` register.
pub fn ideal_pe_unitary(variant: PeVariant, a: usize, b: usize, n_spins: usize) -> Result<OperatorMatrix> {
    if n_spins < 2 || n_spins > MAX_SPINS {
        return Err(Error::SpinCount {
            got: n_spins,
            max: MAX_SPINS,
        });
    }
    for i in [a, b] {
        if i >= n_spins {
            return Err(Error::SpinIndex { index: i, n_spins });
        }
    }
    if a == b {
        return Err(Error::InvalidSystem(format!("exchange pair must be distinct (got {a} twice)")));
    }
    let dim = 1usize << n_spins;
    let (sa, sb) = (n_spins - 1 - a, n_spins - 1 - b);
    let mut u = linalg::zeros(dim);
    for idx in 0..dim {
        let (ba, bb) = ((idx >> sa) & 1, (idx >> sb) & 1);
        let swapped = (idx & !(1 << sa) & !(1 << sb)) | (bb << sa) | (ba << sb);
        let sign = if variant == PeVariant::PhaseVariant && ba == 1 && bb == 1 {
            -1.0
        } else {
            1.0
        };
        u[(swapped, idx)] = C64::new(sign, 0.0);
    }
    Ok(OperatorMatrix::from_trusted(u, Role::Propagator))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{thermal_deviation_state, SpinSystem};

    fn diag_state(values: &[f64]) -> OperatorMatrix {
        let mut m = linalg::zeros(values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = C64::new(*v, 0.0);
        }
        OperatorMatrix::from_trusted(m, Role::State)
    }

    /// Population permutation oracle: ρ'_{π(b)} = ρ_b.
    fn permute(values: &[f64], perm: impl Fn(usize) -> usize) -> Vec<f64> {
        let mut out = vec![0.0; values.len()];
        for (b, v) in values.iter().enumerate() {
            out[perm(b)] = *v;
        }
        out
    }

    #[test]
    fn comp_maps_initial_to_target() {
        let u = ideal_comp_unitary(3).unwrap();
        let rho = diag_state(&[3.0, 1.0, 1.0, -1.0, 1.0, -1.0, -1.0, -3.0]);
        let out = rho.conjugated_by(&u);
        let expected = diag_state(&[3.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -3.0]);
        assert!(out.max_abs_diff(&expected) < 1e-12);
        assert!(out.conjugated_by(&u).max_abs_diff(&rho) < 1e-12);
        assert!(linalg::unitarity_deviation(u.matrix()) < 1e-12);
    }

    #[test]
    fn comp_triples_c1_polarization_at_equilibrium() {
        let eq = [6.0, -2.0, 4.0, -4.0, 4.0, -4.0, 2.0, -6.0];
        let oracle = permute(&eq, |b| match b {
            3 => 4,
            4 => 3,
            b => b,
        });
        assert_eq!(oracle, vec![6.0, -2.0, 4.0, 4.0, -4.0, -4.0, 2.0, -6.0]);
        let u = ideal_comp_unitary(3).unwrap();
        let out = diag_state(&eq).conjugated_by(&u);
        assert_eq!(out.real_diagonal(), oracle);

        let sys = SpinSystem::tce();
        let iz_c1 = sys.spin_operator(crate::spin::Axis::Z, 0).unwrap();
        let thermal = thermal_deviation_state(&sys).unwrap();
        let ratio = thermal.conjugated_by(&u).expectation(&iz_c1) / thermal.expectation(&iz_c1);
        assert!((ratio - 3.0).abs() < 1e-12);
    }

    #[test]
    fn comp_requires_three_spins() {
        assert!(ideal_comp_unitary(2).is_err());
    }

    #[test]
    fn pe_variants_differ_only_on_11() {
        let plain = ideal_pe_unitary(PeVariant::PlainSwap, 0, 1, 2).unwrap();
        let phased = ideal_pe_unitary(PeVariant::PhaseVariant, 0, 1, 2).unwrap();
        let diff = plain.matrix() - phased.matrix();
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == 3 && j == 3 { 2.0 } else { 0.0 };
                assert_eq!(diff[(i, j)], C64::new(expected, 0.0));
            }
        }
        let rho = diag_state(&[0.7, -0.1, 0.3, -0.9]);
        let a = rho.conjugated_by(&plain);
        let b = rho.conjugated_by(&phased);
        assert_eq!(a.real_diagonal(), vec![0.7, 0.3, -0.1, -0.9]);
        assert!(a.max_abs_diff(&b) < 1e-15);
    }

    #[test]
    fn pe_on_tce_equilibrium() {
        let sys = SpinSystem::tce();
        let u = ideal_pe_unitary(PeVariant::PhaseVariant, 1, 2, 3).unwrap();
        let out = thermal_deviation_state(&sys).unwrap().conjugated_by(&u);
        let got: Vec<f64> = out.real_diagonal().iter().map(|v| 2.0 * v).collect();
        assert_eq!(got, vec![6.0, 4.0, -2.0, -4.0, 4.0, 2.0, -4.0, -6.0]);
        assert!(linalg::unitarity_deviation(u.matrix()) < 1e-12);
    }

    #[test]
    fn pe_rejects_bad_pairs() {
        assert!(ideal_pe_unitary(PeVariant::PlainSwap, 1, 1, 3).is_err());
        assert!(ideal_pe_unitary(PeVariant::PlainSwap, 0, 3, 3).is_err());
    }
}
