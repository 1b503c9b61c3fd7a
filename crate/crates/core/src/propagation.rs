//! Piecewise-constant time evolution and the state-overlap fidelity.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, HermitianEigen};
use crate::operator::{OperatorMatrix, Role, HERMITIAN_TOL};
use crate::spin::ChannelControls;

/// Hard ceiling on the number of control points in one pulse.
pub const MAX_STEPS: usize = 5000;

/// Piecewise-constant multi-channel RF waveform. Amplitudes are Cartesian
/// (ux, uy) in Hz, stored step-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPulse {
    dt: f64,
    channels: Vec<String>,
    amplitudes: Vec<[f64; 2]>,
}

impl ControlPulse {
    pub fn new(dt: f64, channels: Vec<String>, amplitudes: Vec<[f64; 2]>) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidPulse(format!("dt must be positive, got {dt}")));
        }
        if channels.is_empty() {
            return Err(Error::InvalidPulse("pulse has no channels".into()));
        }
        for (i, c) in channels.iter().enumerate() {
            if channels[..i].contains(c) {
                return Err(Error::InvalidPulse(format!("duplicate channel `{c}`")));
            }
        }
        if amplitudes.len() % channels.len() != 0 {
            return Err(Error::InvalidPulse(format!(
                "{} amplitude pairs do not fill {} channels",
                amplitudes.len(),
                channels.len()
            )));
        }
        let steps = amplitudes.len() / channels.len();
        if steps == 0 || steps > MAX_STEPS {
            return Err(Error::InvalidPulse(format!(
                "step count must be in 1..={MAX_STEPS}, got {steps}"
            )));
        }
        if let Some(k) = amplitudes.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::NonFinite(format!(
                "amplitude at step {}, channel `{}`",
                k / channels.len(),
                channels[k % channels.len()]
            )));
        }
        Ok(Self {
            dt,
            channels,
            amplitudes,
        })
    }

    pub fn zeros(dt: f64, steps: usize, channels: Vec<String>) -> Result<Self> {
        let n = steps * channels.len();
        Self::new(dt, channels, vec![[0.0, 0.0]; n])
    }

    /// A constant (ux, uy) on every channel.
    pub fn constant(dt: f64, steps: usize, channels: Vec<String>, value: [f64; 2]) -> Result<Self> {
        let n = steps * channels.len();
        Self::new(dt, channels, vec![value; n])
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.amplitudes.len() / self.channels.len()
    }

    pub fn duration(&self) -> f64 {
        self.dt * self.steps() as f64
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel_index(&self, label: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == label)
    }

    pub fn get(&self, step: usize, channel: usize) -> [f64; 2] {
        self.amplitudes[step * self.channels.len() + channel]
    }

    pub fn set(&mut self, step: usize, channel: usize, value: [f64; 2]) {
        let n = self.channels.len();
        self.amplitudes[step * n + channel] = value;
    }

    pub fn amplitudes(&self) -> &[[f64; 2]] {
        &self.amplitudes
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut [[f64; 2]] {
        &mut self.amplitudes
    }

    /// Same waveform sampled on a different step length.
    pub fn with_dt(&self, dt: f64) -> Result<Self> {
        Self::new(dt, self.channels.clone(), self.amplitudes.clone())
    }

    /// `self` followed by `other`; both must share dt and channels.
    pub fn concat(&self, other: &ControlPulse) -> Result<Self> {
        if self.channels != other.channels {
            return Err(Error::InvalidPulse("channel lists differ".into()));
        }
        if (self.dt - other.dt).abs() > 1e-15 * self.dt {
            return Err(Error::InvalidPulse("step lengths differ".into()));
        }
        let mut amps = self.amplitudes.clone();
        amps.extend_from_slice(&other.amplitudes);
        Self::new(self.dt, self.channels.clone(), amps)
    }

    /// Largest √(ux²+uy²) on a channel.
    pub fn peak_amplitude(&self, channel: usize) -> f64 {
        (0..self.steps())
            .map(|j| {
                let [x, y] = self.get(j, channel);
                x.hypot(y)
            })
            .fold(0.0, f64::max)
    }
}

/// exp(-iH·dt) of a Hermitian step Hamiltonian via its eigendecomposition.
pub fn expm_step(h: &OperatorMatrix, dt: f64) -> Result<OperatorMatrix> {
    if !dt.is_finite() {
        return Err(Error::NonFinite("dt".into()));
    }
    let dev = linalg::hermitian_deviation(h.matrix());
    if dev > HERMITIAN_TOL * linalg::max_abs(h.matrix()).max(1.0) {
        return Err(Error::Property {
            property: "Hermitian",
            deviation: dev,
        });
    }
    let eig = HermitianEigen::new(h.matrix())?;
    Ok(OperatorMatrix::from_trusted(eig.exp_minus_i(dt), Role::Propagator))
}

/// Drift plus the control operators matched to a pulse's channel order.
#[derive(Debug, Clone)]
pub(crate) struct StepGenerator<'a> {
    pub drift: &'a CMat,
    pub controls: Vec<(&'a CMat, &'a CMat)>,
}

impl<'a> StepGenerator<'a> {
    pub fn new(drift: &'a OperatorMatrix, controls: &'a [ChannelControls], pulse: &ControlPulse) -> Result<Self> {
        let dim = drift.dim();
        let mut matched = Vec::with_capacity(pulse.n_channels());
        for label in pulse.channels() {
            let c = controls
                .iter()
                .find(|c| &c.label == label)
                .ok_or_else(|| Error::UnknownChannel(label.clone()))?;
            for op in [&c.hx, &c.hy] {
                if op.dim() != dim {
                    return Err(Error::Dimension {
                        expected: dim,
                        got: op.dim(),
                    });
                }
            }
            matched.push((c.hx.matrix(), c.hy.matrix()));
        }
        Ok(Self {
            drift: drift.matrix(),
            controls: matched,
        })
    }

    pub fn hamiltonian(&self, pulse: &ControlPulse, step: usize, rf_scale: &[f64]) -> CMat {
        let mut h = self.drift.clone();
        for (c, (hx, hy)) in self.controls.iter().enumerate() {
            let [ux, uy] = pulse.get(step, c);
            let s = rf_scale[c];
            if ux != 0.0 {
                h.zip_apply(*hx, |a, b| *a += b * (s * ux));
            }
            if uy != 0.0 {
                h.zip_apply(*hy, |a, b| *a += b * (s * uy));
            }
        }
        h
    }
}

/// Cached data for one step of a trajectory.
#[derive(Debug, Clone)]
pub struct StepData {
    pub eigen: HermitianEigen,
    pub propagator: CMat,
}

/// Forward evolution of a state under a pulse. `states[j]` is the state
/// after `j` steps, so `states[0]` is ρ₀.
#[derive(Debug, Clone)]
pub struct Trajectory {
    states: Vec<CMat>,
    steps: Vec<StepData>,
}

impl Trajectory {
    pub fn final_state(&self) -> OperatorMatrix {
        OperatorMatrix::from_trusted(self.states.last().expect("trajectory has ρ₀").clone(), Role::State)
    }

    pub fn final_matrix(&self) -> &CMat {
        self.states.last().expect("trajectory has ρ₀")
    }

    /// Retained states: every ρ_j with [`Retain::Full`], otherwise ρ₀ and
    /// the final state.
    pub fn states(&self) -> &[CMat] {
        &self.states
    }

    pub fn step_data(&self) -> &[StepData] {
        &self.steps
    }

    /// Propagators U_1..U_N when they were retained.
    pub fn propagators(&self) -> impl Iterator<Item = &CMat> {
        self.steps.iter().map(|s| &s.propagator)
    }
}

/// What [`propagate_with`] keeps in the returned trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Retain {
    /// Only ρ₀ and the final state.
    FinalOnly,
    /// Every intermediate state plus each step's eigendecomposition and propagator.
    Full,
}

fn check_rf_scale(rf_scale: &[f64], pulse: &ControlPulse) -> Result<()> {
    if rf_scale.len() != pulse.n_channels() {
        return Err(Error::Dimension {
            expected: pulse.n_channels(),
            got: rf_scale.len(),
        });
    }
    if rf_scale.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("rf_scale".into()));
    }
    Ok(())
}

pub(crate) fn propagate_raw(
    rho0: &CMat,
    pulse: &ControlPulse,
    generator: &StepGenerator<'_>,
    rf_scale: &[f64],
    retain: Retain,
) -> Result<Trajectory> {
    let n = pulse.steps();
    let full = retain == Retain::Full;
    let mut states = Vec::with_capacity(if full { n + 1 } else { 2 });
    let mut steps = Vec::with_capacity(if full { n } else { 0 });
    states.push(rho0.clone());
    let mut rho = rho0.clone();
    for j in 0..n {
        let h = generator.hamiltonian(pulse, j, rf_scale);
        let eigen = HermitianEigen::new(&h)?;
        let u = eigen.exp_minus_i(pulse.dt());
        rho = linalg::conjugate(&u, &rho);
        if full {
            states.push(rho.clone());
            steps.push(StepData { eigen, propagator: u });
        }
    }
    if !full {
        states.push(rho);
    }
    Ok(Trajectory { states, steps })
}

/// Evolves `rho0` through `pulse`. The step Hamiltonian is
/// H₀ + Σ_c s_c·(ux·Hx_c + uy·Hy_c) with `rf_scale` s_c given in the pulse's
/// channel order.
pub fn propagate(
    rho0: &OperatorMatrix,
    pulse: &ControlPulse,
    drift: &OperatorMatrix,
    controls: &[ChannelControls],
    rf_scale: &[f64],
) -> Result<Trajectory> {
    propagate_with(rho0, pulse, drift, controls, rf_scale, Retain::FinalOnly)
}

pub fn propagate_with(
    rho0: &OperatorMatrix,
    pulse: &ControlPulse,
    drift: &OperatorMatrix,
    controls: &[ChannelControls],
    rf_scale: &[f64],
    retain: Retain,
) -> Result<Trajectory> {
    if rho0.dim() != drift.dim() {
        return Err(Error::Dimension {
            expected: drift.dim(),
            got: rho0.dim(),
        });
    }
    check_rf_scale(rf_scale, pulse)?;
    let generator = StepGenerator::new(drift, controls, pulse)?;
    propagate_raw(rho0.matrix(), pulse, &generator, rf_scale, retain)
}

/// Normalized overlap Re Tr(target†·ρ) / (‖target‖·‖ρ‖).
pub fn fidelity(rho: &OperatorMatrix, target: &OperatorMatrix) -> Result<f64> {
    fidelity_raw(rho.matrix(), target.matrix())
}

pub(crate) fn fidelity_raw(rho: &CMat, target: &CMat) -> Result<f64> {
    if rho.nrows() != target.nrows() {
        return Err(Error::Dimension {
            expected: target.nrows(),
            got: rho.nrows(),
        });
    }
    let nr = linalg::frobenius_norm(rho);
    let nt = linalg::frobenius_norm(target);
    if nr == 0.0 || nt == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let overlap: C64 = linalg::inner(target, rho);
    Ok((overlap.re / (nr * nt)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{build_control_operators, build_drift_hamiltonian, single_spin_operator, thermal_deviation_state, Axis, Channel, Spin, SpinSystem};
    use std::f64::consts::TAU;

    fn one_spin(offset_hz: f64) -> SpinSystem {
        SpinSystem::new(
            vec![Spin {
                name: "A".into(),
                channel: "X".into(),
                offset_hz,
                weight: 1.0,
                t1_s: None,
                t2star_s: None,
            }],
            vec![],
            vec![Channel {
                name: "X".into(),
                max_rf_hz: 5000.0,
            }],
        )
        .unwrap()
    }

    fn op(axis: Axis) -> OperatorMatrix {
        single_spin_operator(axis, 0, 1).unwrap().with_role(Role::State).unwrap()
    }

    #[test]
    fn zero_hamiltonian_gives_identity() {
        let h = OperatorMatrix::hamiltonian(linalg::zeros(4)).unwrap();
        let u = expm_step(&h, 3.7).unwrap();
        assert!(linalg::max_abs(&(u.matrix() - linalg::identity(4))) < 1e-15);
    }

    #[test]
    fn quarter_turn_about_x() {
        // θ = 2π·2000·125 µs = π/2
        let h = single_spin_operator(Axis::X, 0, 1).unwrap().scaled(TAU * 2000.0).with_role(Role::Hamiltonian).unwrap();
        let u = expm_step(&h, 125e-6).unwrap();
        let out = op(Axis::Z).conjugated_by(&u);
        assert!(out.max_abs_diff(&op(Axis::Y).scaled(-1.0)) < 1e-12);
    }

    #[test]
    fn full_turn_about_z() {
        // 2π·100·10 ms = 2π
        let h = single_spin_operator(Axis::Z, 0, 1).unwrap().scaled(TAU * 100.0).with_role(Role::Hamiltonian).unwrap();
        let u = expm_step(&h, 0.01).unwrap();
        assert!(linalg::max_abs(&(u.matrix() + linalg::identity(2))) < 1e-12);
        assert!(op(Axis::X).conjugated_by(&u).max_abs_diff(&op(Axis::X)) < 1e-12);
    }

    #[test]
    fn expm_rejects_non_hermitian() {
        let mut m = linalg::zeros(2);
        m[(0, 1)] = C64::new(1.0, 0.0);
        let h = OperatorMatrix::observable(m);
        assert!(matches!(expm_step(&h, 1.0), Err(Error::Property { .. })));
    }

    #[test]
    fn constant_pulse_rotates_iz() {
        let sys = one_spin(0.0);
        let drift = build_drift_hamiltonian(&sys).unwrap();
        let ctl = build_control_operators(&sys).unwrap();
        let pulse = ControlPulse::constant(12.5e-6, 10, vec!["X".into()], [2000.0, 0.0]).unwrap();
        let traj = propagate(&op(Axis::Z), &pulse, &drift, &ctl, &[1.0]).unwrap();
        assert!(traj.final_state().max_abs_diff(&op(Axis::Y).scaled(-1.0)) < 1e-12);

        let off = propagate(&op(Axis::Z), &pulse, &drift, &ctl, &[0.0]).unwrap();
        assert!(off.final_state().max_abs_diff(&op(Axis::Z)) < 1e-15);
    }

    #[test]
    fn zero_pulse_leaves_tce_equilibrium() {
        let sys = SpinSystem::tce();
        let drift = build_drift_hamiltonian(&sys).unwrap();
        let ctl = build_control_operators(&sys).unwrap();
        let rho = thermal_deviation_state(&sys).unwrap();
        let pulse = ControlPulse::zeros(6e-6, 50, sys.channel_labels()).unwrap();
        let traj = propagate(&rho, &pulse, &drift, &ctl, &[1.0, 1.0]).unwrap();
        assert!(traj.final_state().max_abs_diff(&rho) < 1e-12);
    }

    #[test]
    fn propagate_checks_inputs() {
        let sys = SpinSystem::tce();
        let drift = build_drift_hamiltonian(&sys).unwrap();
        let ctl = build_control_operators(&sys).unwrap();
        let rho = thermal_deviation_state(&sys).unwrap();
        let pulse = ControlPulse::zeros(1e-6, 5, vec!["N".into()]).unwrap();
        assert!(matches!(propagate(&rho, &pulse, &drift, &ctl, &[1.0]), Err(Error::UnknownChannel(_))));
        let pulse = ControlPulse::zeros(1e-6, 5, vec!["C".into()]).unwrap();
        assert!(matches!(propagate(&rho, &pulse, &drift, &ctl, &[1.0, 1.0]), Err(Error::Dimension { .. })));
        let small = op(Axis::Z);
        assert!(matches!(propagate(&small, &pulse, &drift, &ctl, &[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn pulse_validation() {
        let ch = || vec!["C".to_string()];
        assert!(ControlPulse::new(0.0, ch(), vec![[0.0, 0.0]]).is_err());
        assert!(ControlPulse::new(1e-6, ch(), vec![]).is_err());
        assert!(ControlPulse::new(1e-6, ch(), vec![[f64::NAN, 0.0]]).is_err());
        assert!(ControlPulse::zeros(1e-6, MAX_STEPS, ch()).is_ok());
        assert!(ControlPulse::zeros(1e-6, MAX_STEPS + 1, ch()).is_err());
        assert!(ControlPulse::new(1e-6, vec!["C".into(), "C".into()], vec![[0.0, 0.0]; 2]).is_err());
    }

    #[test]
    fn fidelity_basics() {
        let x = op(Axis::X);
        let z = op(Axis::Z);
        assert!((fidelity(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!(fidelity(&z, &x).unwrap().abs() < 1e-15);
        assert!((fidelity(&x.scaled(3.0), &x.scaled(0.2)).unwrap() - 1.0).abs() < 1e-15);
        assert!((fidelity(&x.scaled(-1.0), &x).unwrap() + 1.0).abs() < 1e-15);
        let zero = OperatorMatrix::state(linalg::zeros(2)).unwrap();
        assert_eq!(fidelity(&zero, &x), Err(Error::ZeroNorm));
    }
}
