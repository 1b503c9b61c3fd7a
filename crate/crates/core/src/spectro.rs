//! Simulated readout: hard 90° pulse, FID acquisition with per-spin T2*
//! decay, Fourier transform and line integration.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64 as C64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, HermitianEigen};
use crate::operator::{OperatorMatrix, Role};
use crate::propagation::{expm_step, ControlPulse};
use crate::spin::{self, build_drift_hamiltonian, thermal_deviation_state, Axis, SpinSystem};

pub const DEFAULT_DWELL_S: f64 = 200e-6;
pub const DEFAULT_POINTS: usize = 8192;
/// Readout about +y, which turns Iz into +Ix and gives absorptive lines.
pub const DEFAULT_READOUT_PHASE_DEG: f64 = 90.0;
/// Window margin beyond the outermost line, in linewidths 1/(π·T2*).
pub const DEFAULT_MARGIN_LINEWIDTHS: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionOptions {
    pub dwell_s: f64,
    pub points: usize,
    pub readout_phase_deg: f64,
    pub margin_linewidths: f64,
    /// Explicit windows; when absent they are derived from the system.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub windows: Option<Vec<IntegrationWindow>>,
}

impl Default for AcquisitionOptions {
    fn default() -> Self {
        Self {
            dwell_s: DEFAULT_DWELL_S,
            points: DEFAULT_POINTS,
            readout_phase_deg: DEFAULT_READOUT_PHASE_DEG,
            margin_linewidths: DEFAULT_MARGIN_LINEWIDTHS,
            windows: None,
        }
    }
}

impl AcquisitionOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.dwell_s.is_finite() && self.dwell_s > 0.0) {
            return Err(Error::InvalidAcquisition(format!("dwell must be positive, got {}", self.dwell_s)));
        }
        if self.points < 2 {
            return Err(Error::InvalidAcquisition(format!("need at least 2 points, got {}", self.points)));
        }
        if !self.readout_phase_deg.is_finite() {
            return Err(Error::InvalidAcquisition("readout phase must be finite".into()));
        }
        if !(self.margin_linewidths.is_finite() && self.margin_linewidths >= 0.0) {
            return Err(Error::InvalidAcquisition("window margin must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationWindow {
    pub label: String,
    pub f_lo: f64,
    pub f_hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidRecord {
    pub dwell: f64,
    pub observed_channel: String,
    pub samples: Vec<C64>,
}

impl FidRecord {
    pub fn new(dwell: f64, observed_channel: impl Into<String>, samples: Vec<C64>) -> Result<Self> {
        if !(dwell.is_finite() && dwell > 0.0) {
            return Err(Error::InvalidAcquisition(format!("dwell must be positive, got {dwell}")));
        }
        if samples.len() < 2 {
            return Err(Error::InvalidAcquisition("FID needs at least 2 points".into()));
        }
        if samples.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite("FID sample".into()));
        }
        Ok(Self {
            dwell,
            observed_channel: observed_channel.into(),
            samples,
        })
    }

    pub fn points(&self) -> usize {
        self.samples.len()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.points()).map(|k| k as f64 * self.dwell)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Hz relative to the carrier, strictly increasing.
    pub frequencies: Vec<f64>,
    pub values: Vec<C64>,
    pub windows: Vec<IntegrationWindow>,
    /// Half the time-zero sample's contribution to every bin. Removing it
    /// makes window sums follow the trapezoid rule in time.
    pub baseline: C64,
}

impl Spectrum {
    pub fn bin_width(&self) -> f64 {
        self.frequencies[1] - self.frequencies[0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Frequency of the bin with the largest magnitude.
    pub fn peak_frequency(&self) -> f64 {
        let k = (0..self.len())
            .max_by(|&a, &b| self.values[a].norm().total_cmp(&self.values[b].norm()))
            .unwrap_or(0);
        self.frequencies[k]
    }

    pub fn with_windows(mut self, windows: Vec<IntegrationWindow>) -> Result<Self> {
        check_windows(&self, &windows)?;
        self.windows = windows;
        Ok(self)
    }

    /// Σ Re(S − baseline)·Δf over the bins inside the window.
    pub fn window_integral(&self, window: &IntegrationWindow) -> f64 {
        let df = self.bin_width();
        self.frequencies
            .iter()
            .zip(&self.values)
            .filter(|(f, _)| **f >= window.f_lo && **f <= window.f_hi)
            .map(|(_, v)| (v - self.baseline).re)
            .sum::<f64>()
            * df
    }
}

fn check_windows(spectrum: &Spectrum, windows: &[IntegrationWindow]) -> Result<()> {
    let lo = spectrum.frequencies[0];
    let hi = spectrum.frequencies[spectrum.len() - 1];
    for w in windows {
        if !(w.f_lo.is_finite() && w.f_hi.is_finite() && w.f_lo < w.f_hi) {
            return Err(Error::InvalidAcquisition(format!("window `{}` has an empty range", w.label)));
        }
        if w.f_lo < lo || w.f_hi > hi {
            return Err(Error::InvalidAcquisition(format!(
                "window `{}` [{}, {}] Hz lies outside the spectral range [{lo}, {hi}] Hz",
                w.label, w.f_lo, w.f_hi
            )));
        }
    }
    for (i, a) in windows.iter().enumerate() {
        for b in &windows[i + 1..] {
            if a.f_lo <= b.f_hi && b.f_lo <= a.f_hi {
                return Err(Error::OverlappingWindows(a.label.clone(), b.label.clone()));
            }
        }
    }
    Ok(())
}

/// Ideal instantaneous 90° pulse on every spin of `channel`, about the
/// transverse axis at angle `phase` (radians) from x.
pub fn readout_90(rho: &OperatorMatrix, system: &SpinSystem, channel: &str, phase: f64) -> Result<OperatorMatrix> {
    system.require_channel(channel)?;
    if rho.dim() != system.dim() {
        return Err(Error::Dimension {
            expected: system.dim(),
            got: rho.dim(),
        });
    }
    let n = system.n_spins();
    let mut generator = linalg::zeros(system.dim());
    let (c, s) = (C64::new(phase.cos(), 0.0), C64::new(phase.sin(), 0.0));
    for i in system.spins_on_channel(channel) {
        generator += spin::spin_matrix(Axis::X, i, n) * c + spin::spin_matrix(Axis::Y, i, n) * s;
    }
    let u = HermitianEigen::new(&generator)?.exp_minus_i(FRAC_PI_2);
    Ok(OperatorMatrix::from_trusted(linalg::conjugate(&u, rho.matrix()), rho.role()))
}

fn t2star(system: &SpinSystem, i: usize) -> Result<f64> {
    let spin = &system.spins[i];
    spin.t2star_s
        .ok_or_else(|| Error::InvalidAcquisition(format!("spin `{}` has no t2star_s", spin.name)))
}

/// Samples s(t_k) = Σᵢ Tr((Ixⁱ + i·Iyⁱ)·ρ(t_k))·e^{−t_k/T2*ᵢ} over the spins
/// of `channel`, with ρ evolving freely under the drift Hamiltonian.
pub fn acquire(rho: &OperatorMatrix, system: &SpinSystem, channel: &str, dwell: f64, points: usize) -> Result<FidRecord> {
    system.require_channel(channel)?;
    let members = system.spins_on_channel(channel);
    if members.is_empty() {
        return Err(Error::EmptyChannel(channel.to_string()));
    }
    if !(dwell.is_finite() && dwell > 0.0) {
        return Err(Error::InvalidAcquisition(format!("dwell must be positive, got {dwell}")));
    }
    if points < 2 {
        return Err(Error::InvalidAcquisition(format!("need at least 2 points, got {points}")));
    }
    if rho.dim() != system.dim() {
        return Err(Error::Dimension {
            expected: system.dim(),
            got: rho.dim(),
        });
    }
    let n = system.n_spins();
    let raising: Vec<(CMat, f64)> = members
        .iter()
        .map(|&i| {
            let op = spin::spin_matrix(Axis::X, i, n) + spin::spin_matrix(Axis::Y, i, n) * C64::new(0.0, 1.0);
            Ok((op, t2star(system, i)?))
        })
        .collect::<Result<_>>()?;
    let step = expm_step(&build_drift_hamiltonian(system)?, dwell)?;
    let u = step.matrix();
    let u_dag = u.adjoint();
    let mut state = rho.matrix().clone();
    let mut samples = Vec::with_capacity(points);
    for k in 0..points {
        let t = k as f64 * dwell;
        let s: C64 = raising
            .iter()
            .map(|(op, t2)| linalg::trace_product(op, &state) * (-t / t2).exp())
            .sum();
        samples.push(s);
        state = u * &state * &u_dag;
    }
    FidRecord::new(dwell, channel, samples)
}

/// Unitary DFT of `samples` zero-padded to `len`, reordered so the axis
/// runs from −1/(2dt) upward.
fn centered_dft(samples: &[C64], len: usize, dt: f64) -> (Vec<f64>, Vec<C64>) {
    let mut buf = vec![C64::new(0.0, 0.0); len];
    buf[..samples.len()].copy_from_slice(samples);
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let norm = 1.0 / (len as f64).sqrt();
    let half = len / 2;
    let freqs = (0..len).map(|j| (j as f64 - half as f64) / (len as f64 * dt)).collect();
    let values = (0..len).map(|j| buf[(j + len - half) % len] * norm).collect();
    (freqs, values)
}

/// Zero-fill length used for an FID of `points` samples.
pub fn zero_filled_len(points: usize) -> usize {
    (2 * points).next_power_of_two()
}

pub fn to_spectrum(fid: &FidRecord) -> Spectrum {
    let len = zero_filled_len(fid.points());
    let (frequencies, values) = centered_dft(&fid.samples, len, fid.dwell);
    Spectrum {
        frequencies,
        values,
        windows: Vec::new(),
        baseline: fid.samples[0] * (0.5 / (len as f64).sqrt()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    X,
    Y,
}

/// DFT of one Cartesian component of a pulse channel, without zero-fill.
pub fn pulse_spectrum(pulse: &ControlPulse, channel: &str, component: Component) -> Result<Spectrum> {
    let c = pulse
        .channel_index(channel)
        .ok_or_else(|| Error::UnknownChannel(channel.to_string()))?;
    let k = match component {
        Component::X => 0,
        Component::Y => 1,
    };
    let samples: Vec<C64> = (0..pulse.steps()).map(|s| C64::new(pulse.get(s, c)[k], 0.0)).collect();
    let (frequencies, values) = centered_dft(&samples, samples.len().max(2), pulse.dt());
    Ok(Spectrum {
        frequencies,
        values,
        windows: Vec::new(),
        baseline: C64::new(0.0, 0.0),
    })
}

/// One window per spin on `channel`: the full first-order multiplet
/// (Σ|J|/2 either side of the offset) plus `margin_linewidths` linewidths.
pub fn default_windows(system: &SpinSystem, channel: &str, margin_linewidths: f64) -> Result<Vec<IntegrationWindow>> {
    system.require_channel(channel)?;
    let members = system.spins_on_channel(channel);
    if members.is_empty() {
        return Err(Error::EmptyChannel(channel.to_string()));
    }
    members
        .into_iter()
        .map(|i| {
            let spin = &system.spins[i];
            let multiplet: f64 = (0..system.n_spins())
                .filter(|&j| j != i)
                .map(|j| system.coupling(i, j).abs() / 2.0)
                .sum();
            let linewidth = 1.0 / (PI * t2star(system, i)?);
            let half = multiplet + margin_linewidths * linewidth;
            Ok(IntegrationWindow {
                label: spin.name.clone(),
                f_lo: spin.offset_hz - half,
                f_hi: spin.offset_hz + half,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinePolarization {
    pub label: String,
    pub integral: f64,
    pub reference_integral: f64,
    /// integral / reference_integral.
    pub polarization: f64,
}

/// Integrates each window on `spectrum` and on `reference`, reporting the
/// ratio.
pub fn integrate_lines(
    spectrum: &Spectrum,
    reference: &Spectrum,
    windows: &[IntegrationWindow],
) -> Result<Vec<LinePolarization>> {
    check_windows(spectrum, windows)?;
    check_windows(reference, windows)?;
    windows
        .iter()
        .map(|w| {
            let integral = spectrum.window_integral(w);
            let reference_integral = reference.window_integral(w);
            if reference_integral.abs() < 1e-300 || !reference_integral.is_finite() {
                return Err(Error::ZeroNorm);
            }
            Ok(LinePolarization {
                label: w.label.clone(),
                integral,
                reference_integral,
                polarization: integral / reference_integral,
            })
        })
        .collect()
}

/// Readout, acquisition and transform of one state, with windows attached.
pub fn observe(rho: &OperatorMatrix, system: &SpinSystem, channel: &str, options: &AcquisitionOptions) -> Result<(FidRecord, Spectrum)> {
    options.validate()?;
    let rho = match rho.role() {
        Role::State => rho.clone(),
        _ => rho.clone().with_role(Role::State)?,
    };
    let after = readout_90(&rho, system, channel, options.readout_phase_deg.to_radians())?;
    let fid = acquire(&after, system, channel, options.dwell_s, options.points)?;
    let windows = match &options.windows {
        Some(w) => w.clone(),
        None => default_windows(system, channel, options.margin_linewidths)?,
    };
    let spectrum = to_spectrum(&fid).with_windows(windows)?;
    Ok((fid, spectrum))
}

/// Line polarizations of `rho` in units of each spin's thermal
/// equilibrium polarization.
pub fn measure_polarizations(
    rho: &OperatorMatrix,
    system: &SpinSystem,
    channel: &str,
    options: &AcquisitionOptions,
) -> Result<Vec<LinePolarization>> {
    let (_, spectrum) = observe(rho, system, channel, options)?;
    let (_, reference) = observe(&thermal_deviation_state(system)?, system, channel, options)?;
    integrate_lines(&spectrum, &reference, &spectrum.windows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gates::{ideal_comp_unitary, ideal_pe_unitary, PeVariant};
    use crate::spin::{Channel, Spin};

    fn single_spin(offset_hz: f64, t2: f64) -> SpinSystem {
        SpinSystem::new(
            vec![Spin {
                name: "A".into(),
                channel: "X".into(),
                offset_hz,
                weight: 1.0,
                t1_s: None,
                t2star_s: Some(t2),
            }],
            vec![],
            vec![Channel {
                name: "X".into(),
                max_rf_hz: 1000.0,
            }],
        )
        .unwrap()
    }

    fn op(sys: &SpinSystem, axis: Axis, i: usize) -> OperatorMatrix {
        sys.spin_operator(axis, i).unwrap().with_role(Role::State).unwrap()
    }

    #[test]
    fn readout_rotation_convention() {
        let sys = single_spin(0.0, 1.0);
        let iz = op(&sys, Axis::Z, 0);
        let once = readout_90(&iz, &sys, "X", 0.0).unwrap();
        assert!(once.max_abs_diff(&op(&sys, Axis::Y, 0).scaled(-1.0)) < 1e-12);
        let twice = readout_90(&once, &sys, "X", 0.0).unwrap();
        assert!(twice.max_abs_diff(&iz.scaled(-1.0)) < 1e-12);
        let about_y = readout_90(&iz, &sys, "X", FRAC_PI_2).unwrap();
        assert!(about_y.max_abs_diff(&op(&sys, Axis::X, 0)) < 1e-12);
        assert!(matches!(readout_90(&iz, &sys, "Q", 0.0), Err(Error::UnknownChannel(_))));
    }

    #[test]
    fn carbon_readout_leaves_proton() {
        let sys = SpinSystem::tce();
        let izh = op(&sys, Axis::Z, 2);
        let out = readout_90(&izh, &sys, "C", 0.3).unwrap();
        assert!(out.max_abs_diff(&izh) < 1e-12);
    }

    #[test]
    fn longitudinal_state_gives_no_signal() {
        let sys = SpinSystem::tce();
        let fid = acquire(&thermal_deviation_state(&sys).unwrap(), &sys, "C", 1e-4, 64).unwrap();
        assert!(fid.samples.iter().all(|z| z.norm() < 1e-12));
        let spec = to_spectrum(&fid);
        assert!(spec.values.iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn single_spin_fid_closed_form() {
        let (nu, t2) = (123.4, 0.05);
        let sys = single_spin(nu, t2);
        let rho = readout_90(&op(&sys, Axis::Z, 0), &sys, "X", FRAC_PI_2).unwrap();
        let fid = acquire(&rho, &sys, "X", 1e-3, 200).unwrap();
        for (k, (t, s)) in fid.times().zip(&fid.samples).enumerate() {
            // Tr((Ix + iIy)·Ix) = 1/2 for one spin.
            let expected = C64::from_polar(0.5 * (-t / t2).exp(), 2.0 * PI * nu * t);
            assert!((s - expected).norm() < 1e-10, "sample {k}: {s} vs {expected}");
        }
        let spec = to_spectrum(&fid);
        assert!((spec.peak_frequency() - nu).abs() <= spec.bin_width());
    }

    #[test]
    fn lorentzian_full_width() {
        let t2 = 0.05;
        let sys = single_spin(-200.0, t2);
        let rho = readout_90(&op(&sys, Axis::Z, 0), &sys, "X", FRAC_PI_2).unwrap();
        let spec = to_spectrum(&acquire(&rho, &sys, "X", 2e-4, 8192).unwrap());
        let re: Vec<f64> = spec.values.iter().map(|v| (v - spec.baseline).re).collect();
        let k_max = (0..re.len()).max_by(|&a, &b| re[a].total_cmp(&re[b])).unwrap();
        let half = re[k_max] / 2.0;
        let crossing = |step: isize| {
            let mut k = k_max as isize;
            while re[(k + step) as usize] > half {
                k += step;
            }
            let (a, b) = (k as usize, (k + step) as usize);
            let frac = (re[a] - half) / (re[a] - re[b]);
            spec.frequencies[a] + frac * (spec.frequencies[b] - spec.frequencies[a])
        };
        let fwhm = crossing(1) - crossing(-1);
        let expected = 1.0 / (PI * t2);
        assert!((fwhm / expected - 1.0).abs() < 0.02, "{fwhm} vs {expected}");
    }

    #[test]
    fn dft_basics_and_parseval() {
        let zero = FidRecord::new(1e-3, "X", vec![C64::new(0.0, 0.0); 16]).unwrap();
        assert!(to_spectrum(&zero).values.iter().all(|z| z.norm() == 0.0));

        let (dt, n) = (1e-3, 256);
        let nu = 10.0 / (2.0 * n as f64 * dt) * 7.0;
        let tone: Vec<C64> = (0..n).map(|k| C64::from_polar(1.0, 2.0 * PI * nu * k as f64 * dt)).collect();
        let spec = to_spectrum(&FidRecord::new(dt, "X", tone.clone()).unwrap());
        assert!((spec.peak_frequency() - nu).abs() <= spec.bin_width());
        assert!((spec.frequencies[0] + 1.0 / (2.0 * dt)).abs() < 1e-9);
        assert!(spec.frequencies.windows(2).all(|w| w[1] > w[0]));

        let noise: Vec<C64> = (0..300).map(|k| C64::new((k as f64 * 0.37).sin(), (k as f64 * 1.3).cos())).collect();
        let energy: f64 = noise.iter().map(|z| z.norm_sqr()).sum();
        let spec = to_spectrum(&FidRecord::new(dt, "X", noise).unwrap());
        assert!((spec.energy() / energy - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fid_record_validation() {
        assert!(FidRecord::new(0.0, "X", vec![C64::new(0.0, 0.0); 4]).is_err());
        assert!(FidRecord::new(1.0, "X", vec![C64::new(0.0, 0.0)]).is_err());
        assert!(FidRecord::new(1.0, "X", vec![C64::new(f64::NAN, 0.0); 4]).is_err());
    }

    fn local_maxima(spec: &Spectrum, threshold_fraction: f64) -> Vec<f64> {
        let re: Vec<f64> = spec.values.iter().map(|v| (v - spec.baseline).re).collect();
        let top = re.iter().cloned().fold(0.0, f64::max);
        (1..re.len() - 1)
            .filter(|&k| re[k] > re[k - 1] && re[k] >= re[k + 1] && re[k] > threshold_fraction * top)
            .map(|k| spec.frequencies[k])
            .collect()
    }

    #[test]
    fn tce_carbon_multiplets() {
        let sys = SpinSystem::tce();
        let (_, spec) = observe(&thermal_deviation_state(&sys).unwrap(), &sys, "C", &AcquisitionOptions::default()).unwrap();
        let peaks = local_maxima(&spec, 0.2);
        let mut expected = Vec::new();
        for (center, j1, j2) in [(541.7, 103.1, 9.0), (-541.7, 103.1, 200.8)] {
            for s1 in [-0.5, 0.5] {
                for s2 in [-0.5, 0.5] {
                    expected.push(center + s1 * j1 + s2 * j2);
                }
            }
        }
        expected.sort_by(f64::total_cmp);
        assert_eq!(peaks.len(), 8, "{peaks:?}");
        for (p, e) in peaks.iter().zip(&expected) {
            assert!((p - e).abs() <= spec.bin_width(), "{p} vs {e}");
        }
    }

    fn carbon_polarizations(rho: &OperatorMatrix) -> Vec<f64> {
        let sys = SpinSystem::tce();
        measure_polarizations(rho, &sys, "C", &AcquisitionOptions::default())
            .unwrap()
            .into_iter()
            .map(|p| p.polarization)
            .collect()
    }

    #[test]
    fn reference_against_itself() {
        let sys = SpinSystem::tce();
        let p = carbon_polarizations(&thermal_deviation_state(&sys).unwrap());
        assert_eq!(p.len(), 2);
        for v in p {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ideal_gates_read_out() {
        let sys = SpinSystem::tce();
        let eq = thermal_deviation_state(&sys).unwrap();
        let pe = eq.conjugated_by(&ideal_pe_unitary(PeVariant::PhaseVariant, 1, 2, 3).unwrap());
        let p = carbon_polarizations(&pe);
        assert!((p[0] - 1.0).abs() < 0.02 && (p[1] - 4.0).abs() < 0.08, "{p:?}");
        let comp = eq.conjugated_by(&ideal_comp_unitary(3).unwrap());
        let p = carbon_polarizations(&comp);
        assert!((p[0] - 3.0).abs() < 0.06 && (p[1] + 1.0).abs() < 0.02, "{p:?}");
    }

    #[test]
    fn channel_integral_ignores_couplings() {
        let opts = AcquisitionOptions::default();
        let total = |sys: &SpinSystem| {
            let (_, spec) = observe(&thermal_deviation_state(sys).unwrap(), sys, "C", &opts).unwrap();
            spec.windows.iter().map(|w| spec.window_integral(w)).sum::<f64>()
        };
        let sys = SpinSystem::tce();
        let mut wide = sys.clone();
        wide.set_coupling("C1", "C2", 160.0).unwrap();
        wide.set_coupling("H", "C2", 260.0).unwrap();
        let (a, b) = (total(&sys), total(&wide));
        assert!((a / b - 1.0).abs() < 0.02, "{a} vs {b}");
    }

    #[test]
    fn overlapping_and_out_of_range_windows() {
        let sys = SpinSystem::tce();
        let (_, spec) = observe(&thermal_deviation_state(&sys).unwrap(), &sys, "C", &AcquisitionOptions::default()).unwrap();
        let w = |label: &str, lo, hi| IntegrationWindow {
            label: label.into(),
            f_lo: lo,
            f_hi: hi,
        };
        let overlapping = [w("a", 0.0, 100.0), w("b", 50.0, 200.0)];
        assert!(matches!(
            integrate_lines(&spec, &spec, &overlapping),
            Err(Error::OverlappingWindows(a, b)) if a == "a" && b == "b"
        ));
        assert!(integrate_lines(&spec, &spec, &[w("a", 0.0, 1e5)]).is_err());
        assert!(spec.clone().with_windows(vec![w("a", 10.0, 5.0)]).is_err());
    }

    #[test]
    fn default_windows_cover_multiplets() {
        let sys = SpinSystem::tce();
        let w = default_windows(&sys, "C", 0.0).unwrap();
        assert!((w[0].f_hi - (541.7 + (103.1 + 9.0) / 2.0)).abs() < 1e-9);
        assert!((w[1].f_lo - (-541.7 - (103.1 + 200.8) / 2.0)).abs() < 1e-9);
        assert!(matches!(default_windows(&sys, "P", 1.0), Err(Error::UnknownChannel(_))));
    }

    #[test]
    fn pulse_spectra() {
        let ch = vec!["C".to_string(), "H".to_string()];
        let zero = ControlPulse::zeros(1e-5, 64, ch.clone()).unwrap();
        assert!(pulse_spectrum(&zero, "C", Component::X).unwrap().values.iter().all(|z| z.norm() == 0.0));

        let constant = ControlPulse::constant(1e-5, 64, ch.clone(), [300.0, 0.0]).unwrap();
        let s = pulse_spectrum(&constant, "H", Component::X).unwrap();
        assert_eq!(s.peak_frequency(), 0.0);
        assert!(pulse_spectrum(&constant, "H", Component::Y).unwrap().energy() < 1e-20);
        assert!((s.frequencies[0] + 0.5 / 1e-5).abs() < 1e-6);

        let (dt, n, f) = (1e-5, 128usize, 16.0 / (128.0 * 1e-5));
        let mut amps = Vec::new();
        for k in 0..n {
            let v = 100.0 * (2.0 * PI * f * k as f64 * dt).cos();
            amps.push([v, 0.0]);
            amps.push([0.0, 0.0]);
        }
        let cosine = ControlPulse::new(dt, ch, amps).unwrap();
        let s = pulse_spectrum(&cosine, "C", Component::X).unwrap();
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s.values[b].norm().total_cmp(&s.values[a].norm()));
        let mut top = [s.frequencies[order[0]], s.frequencies[order[1]]];
        top.sort_by(f64::total_cmp);
        assert!((top[0] + f).abs() < 1e-6 && (top[1] - f).abs() < 1e-6, "{top:?}");
        assert!(matches!(pulse_spectrum(&cosine, "N", Component::X), Err(Error::UnknownChannel(_))));
    }
}
