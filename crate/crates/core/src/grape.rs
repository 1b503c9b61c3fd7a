//! State-to-state GRAPE with an exact adjoint gradient.
//!
//! The objective is the weighted mean over an RF-scale ensemble of the
//! normalized overlap between the propagated and the target state. The
//! derivative of each step propagator is taken exactly in the eigenbasis of
//! the step Hamiltonian, so the gradient carries no Δt-dependent bias.

use std::f64::consts::TAU;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::operator::{OperatorMatrix, Role};
use crate::propagation::{self, ControlPulse, Retain, StepGenerator, Trajectory, MAX_STEPS};
use crate::spin::{build_control_operators, build_drift_hamiltonian, Axis, ChannelControls, SpinSystem};

const WEIGHT_SUM_TOL: f64 = 1e-12;
const DT_MATCH_TOL: f64 = 1e-9;

/// One RF-inhomogeneity scenario: a multiplicative scale per channel,
/// optionally with a carrier miscalibration per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleMember {
    pub rf_scale: Vec<f64>,
    pub weight: f64,
    /// Hz per channel; every offset on the channel drops by this amount.
    /// Empty means no miscalibration.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub carrier_offset_hz: Vec<f64>,
}

impl EnsembleMember {
    pub fn new(rf_scale: Vec<f64>, weight: f64) -> Self {
        Self {
            rf_scale,
            weight,
            carrier_offset_hz: Vec::new(),
        }
    }

    pub fn nominal(n_channels: usize) -> Self {
        Self::new(vec![1.0; n_channels], 1.0)
    }

    pub fn with_carrier_offsets(mut self, offsets_hz: Vec<f64>) -> Self {
        self.carrier_offset_hz = offsets_hz;
        self
    }

    fn has_carrier_offset(&self) -> bool {
        self.carrier_offset_hz.iter().any(|&o| o != 0.0)
    }
}

/// Equal-weight ensemble where every channel shares the same scale.
pub fn joint_scale_ensemble(scales: &[f64], n_channels: usize) -> Vec<EnsembleMember> {
    let w = 1.0 / scales.len() as f64;
    scales
        .iter()
        .map(|&s| EnsembleMember::new(vec![s; n_channels], w))
        .collect()
}

/// Default robust-phase ensemble: 0.95, 1.0 and 1.05 applied to all channels.
pub fn default_robust_ensemble(n_channels: usize) -> Vec<EnsembleMember> {
    joint_scale_ensemble(&[0.95, 1.0, 1.05], n_channels)
}

#[derive(Debug, Clone)]
pub struct GrapeProblem {
    system: SpinSystem,
    drift: OperatorMatrix,
    controls: Vec<ChannelControls>,
    rho0: OperatorMatrix,
    target: OperatorMatrix,
    duration: f64,
    steps: usize,
    ensemble: Vec<EnsembleMember>,
}

impl GrapeProblem {
    pub fn new(
        system: SpinSystem,
        rho0: OperatorMatrix,
        target: OperatorMatrix,
        duration: f64,
        steps: usize,
        ensemble: Vec<EnsembleMember>,
    ) -> Result<Self> {
        let drift = build_drift_hamiltonian(&system)?;
        let controls = build_control_operators(&system)?;
        let problem = Self {
            system,
            drift,
            controls,
            rho0,
            target,
            duration,
            steps,
            ensemble,
        };
        problem.validate()?;
        Ok(problem)
    }

    fn validate(&self) -> Result<()> {
        let dim = self.system.dim();
        for (what, op) in [("initial state", &self.rho0), ("target", &self.target)] {
            if op.dim() != dim {
                return Err(Error::InvalidProblem(format!(
                    "{what} has dimension {}, system needs {dim}",
                    op.dim()
                )));
            }
        }
        if linalg::frobenius_norm(self.rho0.matrix()) == 0.0 || linalg::frobenius_norm(self.target.matrix()) == 0.0 {
            return Err(Error::ZeroNorm);
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::InvalidProblem(format!("duration must be positive, got {}", self.duration)));
        }
        if self.steps == 0 || self.steps > MAX_STEPS {
            return Err(Error::InvalidProblem(format!(
                "steps must be in 1..={MAX_STEPS}, got {}",
                self.steps
            )));
        }
        if self.ensemble.is_empty() {
            return Err(Error::InvalidProblem("ensemble is empty".into()));
        }
        let n_ch = self.controls.len();
        let mut total = 0.0;
        for (k, m) in self.ensemble.iter().enumerate() {
            if m.rf_scale.len() != n_ch {
                return Err(Error::InvalidProblem(format!(
                    "ensemble member {k} has {} scales for {n_ch} channels",
                    m.rf_scale.len()
                )));
            }
            if m.rf_scale.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                return Err(Error::InvalidProblem(format!("ensemble member {k}: invalid rf_scale")));
            }
            if !(m.carrier_offset_hz.is_empty() || m.carrier_offset_hz.len() == n_ch) {
                return Err(Error::InvalidProblem(format!(
                    "ensemble member {k} has {} carrier offsets for {n_ch} channels",
                    m.carrier_offset_hz.len()
                )));
            }
            if m.carrier_offset_hz.iter().any(|o| !o.is_finite()) {
                return Err(Error::InvalidProblem(format!("ensemble member {k}: invalid carrier offset")));
            }
            if !(m.weight.is_finite() && m.weight > 0.0) {
                return Err(Error::InvalidProblem(format!("ensemble member {k}: weight must be positive")));
            }
            total += m.weight;
        }
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidProblem(format!("ensemble weights sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn system(&self) -> &SpinSystem {
        &self.system
    }

    pub fn drift(&self) -> &OperatorMatrix {
        &self.drift
    }

    pub fn controls(&self) -> &[ChannelControls] {
        &self.controls
    }

    pub fn initial_state(&self) -> &OperatorMatrix {
        &self.rho0
    }

    pub fn target(&self) -> &OperatorMatrix {
        &self.target
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.duration / self.steps as f64
    }

    pub fn ensemble(&self) -> &[EnsembleMember] {
        &self.ensemble
    }

    pub fn channels(&self) -> Vec<String> {
        self.controls.iter().map(|c| c.label.clone()).collect()
    }

    pub fn max_rf(&self) -> Vec<f64> {
        self.controls.iter().map(|c| c.max_rf_hz).collect()
    }

    /// Same problem on a modified spin system (drift and controls rebuilt).
    pub fn with_system(&self, system: SpinSystem) -> Result<Self> {
        Self::new(
            system,
            self.rho0.clone(),
            self.target.clone(),
            self.duration,
            self.steps,
            self.ensemble.clone(),
        )
    }

    pub fn with_duration(&self, duration: f64) -> Result<Self> {
        let mut p = self.clone();
        p.duration = duration;
        p.validate()?;
        Ok(p)
    }

    pub fn with_target(&self, target: OperatorMatrix) -> Result<Self> {
        let mut p = self.clone();
        p.target = target;
        p.validate()?;
        Ok(p)
    }

    pub fn with_ensemble(&self, ensemble: Vec<EnsembleMember>) -> Result<Self> {
        let mut p = self.clone();
        p.ensemble = ensemble;
        p.validate()?;
        Ok(p)
    }

    /// The problem restricted to unit RF scale on every channel.
    pub fn nominal_only(&self) -> Self {
        let mut p = self.clone();
        p.ensemble = vec![EnsembleMember::nominal(self.controls.len())];
        p
    }

    pub fn is_nominal_only(&self) -> bool {
        self.ensemble.len() == 1
            && self.ensemble[0].rf_scale.iter().all(|&s| s == 1.0)
            && !self.ensemble[0].has_carrier_offset()
    }

    /// Drift seen by one ensemble member: the nominal drift shifted by the
    /// member's carrier miscalibration.
    fn member_drift(&self, member: &EnsembleMember) -> OperatorMatrix {
        if !member.has_carrier_offset() {
            return self.drift.clone();
        }
        let mut h = self.drift.matrix().clone();
        for (ch, off) in self.controls.iter().zip(&member.carrier_offset_hz) {
            for i in self.system.spins_on_channel(&ch.label) {
                let iz = self.system.spin_operator(Axis::Z, i).expect("spin index in range");
                h -= iz.matrix() * C64::new(TAU * off, 0.0);
            }
        }
        OperatorMatrix::from_trusted(h, Role::Hamiltonian)
    }

    pub fn check_pulse(&self, pulse: &ControlPulse) -> Result<()> {
        let channels = self.channels();
        if pulse.channels() != channels.as_slice() {
            return Err(Error::InvalidPulse(format!(
                "pulse channels {:?} do not match problem channels {:?}",
                pulse.channels(),
                channels
            )));
        }
        if pulse.steps() != self.steps {
            return Err(Error::Dimension {
                expected: self.steps,
                got: pulse.steps(),
            });
        }
        if ((pulse.dt() - self.dt()) / self.dt()).abs() > DT_MATCH_TOL {
            return Err(Error::InvalidPulse(format!(
                "pulse dt {} s does not match problem dt {} s",
                pulse.dt(),
                self.dt()
            )));
        }
        Ok(())
    }

    /// Final state for a given per-channel RF scale.
    pub fn propagate(&self, pulse: &ControlPulse, rf_scale: &[f64]) -> Result<OperatorMatrix> {
        self.check_pulse(pulse)?;
        let traj = propagation::propagate(&self.rho0, pulse, &self.drift, &self.controls, rf_scale)?;
        Ok(traj.final_state())
    }

    /// Fidelity at a given per-channel RF scale.
    pub fn fidelity_at(&self, pulse: &ControlPulse, rf_scale: &[f64]) -> Result<f64> {
        propagation::fidelity(&self.propagate(pulse, rf_scale)?, &self.target)
    }

    /// Fidelity of each ensemble member, in ensemble order.
    pub fn member_fidelities(&self, pulse: &ControlPulse) -> Result<Vec<f64>> {
        self.check_pulse(pulse)?;
        self.ensemble
            .par_iter()
            .map(|m| {
                let drift = self.member_drift(m);
                let traj = propagation::propagate(&self.rho0, pulse, &drift, &self.controls, &m.rf_scale)?;
                propagation::fidelity(&traj.final_state(), &self.target)
            })
            .collect()
    }

    /// Weighted ensemble fidelity.
    pub fn fidelity(&self, pulse: &ControlPulse) -> Result<f64> {
        let f = self.member_fidelities(pulse)?;
        Ok(self.weighted(&f))
    }

    fn weighted(&self, values: &[f64]) -> f64 {
        self.ensemble.iter().zip(values).map(|(m, v)| m.weight * v).sum()
    }
}

/// Full forward evaluation kept around so the gradient can reuse it.
struct Evaluation {
    fidelity: f64,
    members: Vec<f64>,
    trajectories: Vec<Trajectory>,
}

fn evaluate(problem: &GrapeProblem, pulse: &ControlPulse) -> Result<Evaluation> {
    problem.check_pulse(pulse)?;
    let runs: Vec<(f64, Trajectory)> = problem
        .ensemble
        .par_iter()
        .map(|m| {
            let drift = problem.member_drift(m);
            let generator = StepGenerator::new(&drift, &problem.controls, pulse)?;
            let traj = propagation::propagate_raw(problem.rho0.matrix(), pulse, &generator, &m.rf_scale, Retain::Full)?;
            let f = propagation::fidelity_raw(traj.final_matrix(), problem.target.matrix())?;
            Ok((f, traj))
        })
        .collect::<Result<_>>()?;
    let (members, trajectories): (Vec<f64>, Vec<Trajectory>) = runs.into_iter().unzip();
    Ok(Evaluation {
        fidelity: problem.weighted(&members),
        members,
        trajectories,
    })
}

/// ∂Φ/∂u for one ensemble member, laid out like the pulse amplitudes.
fn member_gradient(
    problem: &GrapeProblem,
    pulse: &ControlPulse,
    generator: &StepGenerator<'_>,
    rf_scale: &[f64],
    traj: &Trajectory,
) -> Result<Vec<[f64; 2]>> {
    let n = pulse.steps();
    let n_ch = pulse.n_channels();
    let dt = pulse.dt();
    let states = traj.states();
    let steps = traj.step_data();
    let rho_t = &states[n];
    let target = problem.target.matrix();

    // Costate at T: derivative of Re⟨T,ρ⟩/(‖T‖‖ρ‖) with respect to ρ,
    // including the (analytically vanishing) norm term.
    let nt = linalg::frobenius_norm(target);
    let nr = linalg::frobenius_norm(rho_t);
    if nt == 0.0 || nr == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let phi = linalg::inner(target, rho_t).re / (nt * nr);
    let mut lambda: CMat = target * C64::new(1.0 / (nt * nr), 0.0) - rho_t * C64::new(phi / (nr * nr), 0.0);

    let mut grad = vec![[0.0; 2]; n * n_ch];
    for j in (0..n).rev() {
        let step = &steps[j];
        let v = &step.eigen.vectors;
        let u = &step.propagator;
        let rho_prev = &states[j];
        // M = V†·ρ_{j-1}·U†·λ_j·V ; R = V·(G ∘ Mᵀ)ᵀ·V† = V·(Gᵀ ∘ M)·V†
        let m = v.adjoint() * rho_prev * u.adjoint() * &lambda * v;
        let g = step.eigen.derivative_kernel(dt);
        let q = g.transpose().component_mul(&m);
        let r = v * q * v.adjoint();
        for (c, (hx, hy)) in generator.controls.iter().enumerate() {
            let s = rf_scale[c];
            let dx = 2.0 * s * linalg::trace_product(hx, &r).re;
            let dy = 2.0 * s * linalg::trace_product(hy, &r).re;
            grad[j * n_ch + c] = [dx, dy];
        }
        lambda = u.adjoint() * &lambda * u;
    }
    Ok(grad)
}

fn gradient_from(problem: &GrapeProblem, pulse: &ControlPulse, eval: &Evaluation) -> Result<Vec<[f64; 2]>> {
    let generator = StepGenerator::new(&problem.drift, &problem.controls, pulse)?;
    let per_member: Vec<Vec<[f64; 2]>> = problem
        .ensemble
        .par_iter()
        .zip(eval.trajectories.par_iter())
        // Only the control operators of the generator are used here; the
        // member's own drift is already folded into its trajectory.
        .map(|(m, traj)| member_gradient(problem, pulse, &generator, &m.rf_scale, traj))
        .collect::<Result<_>>()?;
    let mut total = vec![[0.0; 2]; pulse.amplitudes().len()];
    for (m, g) in problem.ensemble.iter().zip(&per_member) {
        for (t, gi) in total.iter_mut().zip(g) {
            t[0] += m.weight * gi[0];
            t[1] += m.weight * gi[1];
        }
    }
    Ok(total)
}

/// Analytic gradient of the ensemble fidelity with respect to every
/// (ux, uy) amplitude, in units of 1/Hz, laid out step-major like
/// [`ControlPulse::amplitudes`].
pub fn gradient(problem: &GrapeProblem, pulse: &ControlPulse) -> Result<Vec<[f64; 2]>> {
    let eval = evaluate(problem, pulse)?;
    gradient_from(problem, pulse, &eval)
}

/// Central-difference estimate of [`gradient`] with step `h` in Hz.
pub fn finite_difference_gradient(problem: &GrapeProblem, pulse: &ControlPulse, h: f64) -> Result<Vec<[f64; 2]>> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidProblem(format!("difference step must be positive, got {h}")));
    }
    let n_ch = pulse.n_channels();
    let mut out = vec![[0.0; 2]; pulse.steps() * n_ch];
    let mut p = pulse.clone();
    for step in 0..pulse.steps() {
        for c in 0..n_ch {
            let v = pulse.get(step, c);
            for comp in 0..2 {
                let mut shifted = |delta: f64| {
                    let mut w = v;
                    w[comp] += delta;
                    p.set(step, c, w);
                    problem.fidelity(&p)
                };
                let up = shifted(h)?;
                let down = shifted(-h)?;
                out[step * n_ch + c][comp] = (up - down) / (2.0 * h);
            }
            p.set(step, c, v);
        }
    }
    Ok(out)
}

/// Default amplitude range of [`init_random_pulse`], as a fraction of the cap.
pub const INIT_AMPLITUDE_FRACTION: f64 = 0.2;

/// Random starting pulse: per step and channel, amplitude uniform in
/// [0, 0.2·max_rf] and phase uniform in [0, 2π).
pub fn init_random_pulse(problem: &GrapeProblem, seed: u64) -> ControlPulse {
    init_random_pulse_scaled(problem, seed, INIT_AMPLITUDE_FRACTION)
}

/// As [`init_random_pulse`] with amplitudes uniform in [0, fraction·max_rf].
pub fn init_random_pulse_scaled(problem: &GrapeProblem, seed: u64, fraction: f64) -> ControlPulse {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let caps = problem.max_rf();
    let fraction = fraction.clamp(0.0, 1.0);
    let mut amps = Vec::with_capacity(problem.steps * caps.len());
    for _ in 0..problem.steps {
        for &cap in &caps {
            let a = fraction * cap * rng.random::<f64>();
            let phase = TAU * rng.random::<f64>();
            amps.push([a * phase.cos(), a * phase.sin()]);
        }
    }
    ControlPulse::new(problem.dt(), problem.channels(), amps).expect("problem dimensions are valid")
}

/// Radial projection onto the per-channel amplitude cap; phase is kept.
pub fn clamp(pulse: &ControlPulse, max_rf: &[f64]) -> ControlPulse {
    let mut out = pulse.clone();
    clamp_in_place(&mut out, max_rf);
    out
}

fn clamp_in_place(pulse: &mut ControlPulse, max_rf: &[f64]) {
    let n_ch = pulse.n_channels();
    for (k, p) in pulse.amplitudes_mut().iter_mut().enumerate() {
        let cap = max_rf[k % n_ch];
        let r = p[0].hypot(p[1]);
        if r > cap {
            let f = cap / r;
            p[0] *= f;
            p[1] *= f;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AscentOptions {
    pub max_iters: usize,
    pub target_fidelity: f64,
    /// Step ε in u ← u + ε·g. When unset, the first step is chosen so the
    /// largest amplitude change is `auto_step_hz`.
    pub initial_step: Option<f64>,
    pub auto_step_hz: f64,
    pub backtrack_factor: f64,
    pub growth_factor: f64,
    pub min_step: f64,
    pub direction: Direction,
    /// After an accepted trial, keep enlarging the step while the fidelity
    /// keeps rising.
    pub expand: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Plain gradient.
    Gradient,
    /// Polak–Ribière conjugate direction with automatic restarts.
    ConjugateGradient,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            target_fidelity: 0.999,
            initial_step: None,
            auto_step_hz: 50.0,
            backtrack_factor: 0.5,
            growth_factor: 1.5,
            min_step: 1e-6,
            direction: Direction::ConjugateGradient,
            expand: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    TargetReached,
    MaxIterations,
    StepTooSmall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscentReport {
    pub seed: Option<u64>,
    /// Ensemble fidelity before the first step and after every accepted one.
    pub history: Vec<f64>,
    pub final_fidelity: f64,
    pub member_fidelities: Vec<f64>,
    pub iterations: usize,
    pub rejected_trials: usize,
    pub termination: Termination,
}

impl AscentReport {
    pub fn is_monotonic(&self) -> bool {
        self.history.windows(2).all(|w| w[1] >= w[0])
    }
}

/// Monotonic ascent with backtracking. A trial step is accepted only if the
/// ensemble fidelity strictly increases; the step size then grows by
/// `growth_factor`, otherwise it shrinks by `backtrack_factor`.
pub fn ascend(
    problem: &GrapeProblem,
    pulse0: &ControlPulse,
    options: &AscentOptions,
) -> Result<(ControlPulse, AscentReport)> {
    validate_options(options)?;
    let caps = problem.max_rf();
    let mut pulse = clamp(pulse0, &caps);
    let mut eval = evaluate(problem, &pulse)?;
    let mut history = vec![eval.fidelity];
    let mut step = options.initial_step;
    let mut iterations = 0;
    let mut rejected = 0;
    // Previous gradient and search direction, for conjugate directions.
    let mut previous: Option<(Vec<[f64; 2]>, Vec<[f64; 2]>)> = None;

    let termination = 'outer: loop {
        if eval.fidelity >= options.target_fidelity {
            break Termination::TargetReached;
        }
        if iterations >= options.max_iters {
            break Termination::MaxIterations;
        }
        iterations += 1;
        let grad = gradient_from(problem, &pulse, &eval)?;
        let mut direction = match (&previous, options.direction) {
            (Some((g_prev, d_prev)), Direction::ConjugateGradient) => conjugate_direction(&grad, g_prev, d_prev),
            _ => grad.clone(),
        };
        let eps = step.get_or_insert_with(|| {
            let dmax = max_component(&direction);
            if dmax > 0.0 {
                options.auto_step_hz / dmax
            } else {
                1.0
            }
        });
        let mut restarted = options.direction == Direction::Gradient || previous.is_none();
        loop {
            if *eps < options.min_step {
                if restarted {
                    break 'outer Termination::StepTooSmall;
                }
                // Conjugate direction failed; fall back to the plain gradient once.
                direction = grad.clone();
                restarted = true;
                *eps = options.min_step.max(options.auto_step_hz / max_component(&direction).max(f64::MIN_POSITIVE));
            }
            let trial = take_step(&pulse, &direction, *eps, &caps);
            let trial_eval = evaluate(problem, &trial)?;
            if trial_eval.fidelity > eval.fidelity {
                let (mut best, mut best_eval) = (trial, trial_eval);
                if options.expand {
                    loop {
                        let longer = *eps * options.growth_factor;
                        let candidate = take_step(&pulse, &direction, longer, &caps);
                        let candidate_eval = evaluate(problem, &candidate)?;
                        if candidate_eval.fidelity > best_eval.fidelity {
                            *eps = longer;
                            best = candidate;
                            best_eval = candidate_eval;
                        } else {
                            break;
                        }
                    }
                } else {
                    *eps *= options.growth_factor;
                }
                pulse = best;
                eval = best_eval;
                history.push(eval.fidelity);
                break;
            }
            rejected += 1;
            *eps *= options.backtrack_factor;
        }
        previous = Some((grad, direction));
    };

    let report = AscentReport {
        seed: None,
        final_fidelity: eval.fidelity,
        member_fidelities: eval.members,
        history,
        iterations,
        rejected_trials: rejected,
        termination,
    };
    Ok((pulse, report))
}

fn max_component(v: &[[f64; 2]]) -> f64 {
    v.iter().fold(0.0_f64, |a, g| a.max(g[0].abs()).max(g[1].abs()))
}

fn dot(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x[0] * y[0] + x[1] * y[1]).sum()
}

/// Polak–Ribière+ direction; restarts with the gradient when the result is
/// not an ascent direction.
fn conjugate_direction(grad: &[[f64; 2]], g_prev: &[[f64; 2]], d_prev: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let denom = dot(g_prev, g_prev);
    if denom == 0.0 {
        return grad.to_vec();
    }
    let beta = ((dot(grad, grad) - dot(grad, g_prev)) / denom).max(0.0);
    let d: Vec<[f64; 2]> = grad
        .iter()
        .zip(d_prev)
        .map(|(g, p)| [g[0] + beta * p[0], g[1] + beta * p[1]])
        .collect();
    if dot(&d, grad) > 0.0 {
        d
    } else {
        grad.to_vec()
    }
}

fn take_step(pulse: &ControlPulse, direction: &[[f64; 2]], eps: f64, caps: &[f64]) -> ControlPulse {
    let mut trial = pulse.clone();
    for (a, d) in trial.amplitudes_mut().iter_mut().zip(direction) {
        a[0] += eps * d[0];
        a[1] += eps * d[1];
    }
    clamp_in_place(&mut trial, caps);
    trial
}

fn validate_options(o: &AscentOptions) -> Result<()> {
    let bad = |m: &str| Err(Error::InvalidProblem(format!("ascent options: {m}")));
    if !(o.backtrack_factor > 0.0 && o.backtrack_factor < 1.0) {
        return bad("backtrack_factor must be in (0, 1)");
    }
    if !(o.growth_factor >= 1.0 && o.growth_factor.is_finite()) {
        return bad("growth_factor must be >= 1");
    }
    if !(o.min_step >= 0.0 && o.min_step.is_finite()) {
        return bad("min_step must be non-negative");
    }
    if let Some(s) = o.initial_step {
        if !(s > 0.0 && s.is_finite()) {
            return bad("initial_step must be positive");
        }
    }
    if !(o.auto_step_hz > 0.0 && o.auto_step_hz.is_finite()) {
        return bad("auto_step_hz must be positive");
    }
    if !o.target_fidelity.is_finite() {
        return bad("target_fidelity must be finite");
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignOptions {
    /// Phase 1: nominal RF only.
    pub nominal: AscentOptions,
    /// Phase 2: the problem's full ensemble. Skipped when the ensemble is
    /// nominal-only.
    pub robust: AscentOptions,
    /// RF scales at which the selected pulse is probed after design.
    pub probe_scales: Vec<f64>,
    /// Amplitude range of the random starting pulses, as a fraction of the cap.
    /// Starts much weaker than the cap tend to settle on the plateau where
    /// the pulse does next to nothing.
    pub init_amplitude_fraction: f64,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            nominal: AscentOptions::default(),
            robust: AscentOptions {
                max_iters: 300,
                ..AscentOptions::default()
            },
            probe_scales: vec![0.941, 1.059],
            init_amplitude_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleProbe {
    pub rf_scale: f64,
    pub fidelity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub nominal_phase: AscentReport,
    pub robust_phase: Option<AscentReport>,
    pub nominal_fidelity: f64,
    /// Fidelity of each member of the problem's full ensemble.
    pub member_fidelities: Vec<f64>,
    pub worst_case: f64,
    pub probes: Vec<ScaleProbe>,
}

impl SeedOutcome {
    pub fn reports(&self) -> impl Iterator<Item = &AscentReport> {
        std::iter::once(&self.nominal_phase).chain(self.robust_phase.iter())
    }
}

#[derive(Debug, Clone)]
pub struct DesignOutcome {
    pub best: usize,
    pub pulse: ControlPulse,
    pub outcomes: Vec<SeedOutcome>,
}

impl DesignOutcome {
    pub fn best_outcome(&self) -> &SeedOutcome {
        &self.outcomes[self.best]
    }
}

fn design_one(problem: &GrapeProblem, options: &DesignOptions, seed: u64) -> Result<(ControlPulse, SeedOutcome)> {
    let nominal = problem.nominal_only();
    let start = init_random_pulse_scaled(problem, seed, options.init_amplitude_fraction);
    let (pulse, mut phase1) = ascend(&nominal, &start, &options.nominal)?;
    phase1.seed = Some(seed);
    let (pulse, phase2) = if problem.is_nominal_only() {
        (pulse, None)
    } else {
        let (p, mut r) = ascend(problem, &pulse, &options.robust)?;
        r.seed = Some(seed);
        (p, Some(r))
    };
    let members = problem.member_fidelities(&pulse)?;
    let worst_case = members.iter().copied().fold(f64::INFINITY, f64::min);
    let n_ch = problem.controls.len();
    let probes = options
        .probe_scales
        .iter()
        .map(|&s| {
            Ok(ScaleProbe {
                rf_scale: s,
                fidelity: problem.fidelity_at(&pulse, &vec![s; n_ch])?,
            })
        })
        .collect::<Result<_>>()?;
    let outcome = SeedOutcome {
        seed,
        nominal_fidelity: problem.fidelity_at(&pulse, &vec![1.0; n_ch])?,
        nominal_phase: phase1,
        robust_phase: phase2,
        member_fidelities: members,
        worst_case,
        probes,
    };
    Ok((pulse, outcome))
}

/// Two-phase design over several random starts. Each seed is first ascended
/// with nominal RF only, then re-ascended on the full ensemble; the pulse
/// with the best worst-case ensemble member wins.
pub fn design(problem: &GrapeProblem, options: &DesignOptions, seeds: &[u64]) -> Result<DesignOutcome> {
    if !(options.init_amplitude_fraction > 0.0 && options.init_amplitude_fraction <= 1.0) {
        return Err(Error::InvalidProblem("init_amplitude_fraction must be in (0, 1]".into()));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidProblem("at least one seed is required".into()));
    }
    let runs: Vec<(ControlPulse, SeedOutcome)> = seeds
        .par_iter()
        .map(|&s| design_one(problem, options, s))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (k, (_, o)) in runs.iter().enumerate() {
        if o.worst_case > runs[best].1.worst_case {
            best = k;
        }
    }
    let pulse = runs[best].0.clone();
    let outcomes = runs.into_iter().map(|(_, o)| o).collect();
    Ok(DesignOutcome { best, pulse, outcomes })
}
