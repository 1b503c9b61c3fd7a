//! Fidelity of a fixed pulse under single-parameter deviations of the
//! Hamiltonian and timing.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grape::GrapeProblem;
use crate::propagation::ControlPulse;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationKind {
    /// Scale every chemical-shift offset (B₀ change; J is field independent).
    B0Scale,
    /// Replace one J coupling (Hz). Target: `A-B`.
    JCoupling,
    /// Stretch the pulse in time.
    DurationScale,
    /// Carrier miscalibration (Hz) on a channel: every offset on it drops by
    /// the value. Target: channel label.
    ChannelOffset,
    /// Set the offset difference of a pair (Hz), keeping their mean. Target: `A-B`.
    PairLarmorDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviationSpec {
    pub kind: DeviationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl DeviationSpec {
    pub fn new(kind: DeviationKind, target: Option<&str>, value: f64) -> Self {
        Self {
            kind,
            target: target.map(str::to_string),
            value,
            label: None,
        }
    }

    pub fn labelled(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn display_label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        let kind = match self.kind {
            DeviationKind::B0Scale => "b0_scale",
            DeviationKind::JCoupling => "j_coupling",
            DeviationKind::DurationScale => "duration_scale",
            DeviationKind::ChannelOffset => "channel_offset",
            DeviationKind::PairLarmorDifference => "pair_larmor_difference",
        };
        match &self.target {
            Some(t) => format!("{kind}({t})"),
            None => kind.to_string(),
        }
    }

    fn require_target(&self) -> Result<&str> {
        self.target
            .as_deref()
            .ok_or_else(|| Error::InvalidDeviation(format!("{} needs a target", self.display_label())))
    }
}

/// Splits `A-B` (or `A,B`) into two spin indices of the problem's system.
fn resolve_pair(problem: &GrapeProblem, target: &str) -> Result<(usize, usize)> {
    let sys = problem.system();
    for (i, c) in target.char_indices() {
        if c == '-' || c == ',' {
            let (a, b) = (target[..i].trim(), target[i + 1..].trim());
            if let (Some(ia), Some(ib)) = (sys.spin_index(a), sys.spin_index(b)) {
                if ia == ib {
                    return Err(Error::InvalidDeviation(format!("pair `{target}` names one spin twice")));
                }
                return Ok((ia, ib));
            }
        }
    }
    Err(Error::InvalidDeviation(format!("`{target}` is not a pair of known spins")))
}

/// The value the deviation replaces, in the same units as `spec.value`.
pub fn nominal_value(problem: &GrapeProblem, spec: &DeviationSpec) -> Result<f64> {
    Ok(match spec.kind {
        DeviationKind::B0Scale | DeviationKind::DurationScale => 1.0,
        DeviationKind::ChannelOffset => {
            problem.system().require_channel(spec.require_target()?)?;
            0.0
        }
        DeviationKind::JCoupling => {
            let (a, b) = resolve_pair(problem, spec.require_target()?)?;
            problem.system().coupling(a, b)
        }
        DeviationKind::PairLarmorDifference => {
            let (a, b) = resolve_pair(problem, spec.require_target()?)?;
            let s = &problem.system().spins;
            (s[a].offset_hz - s[b].offset_hz).abs()
        }
    })
}

/// Returns a copy of `problem` with one parameter changed.
pub fn apply_deviation(problem: &GrapeProblem, spec: &DeviationSpec) -> Result<GrapeProblem> {
    if !spec.value.is_finite() {
        return Err(Error::InvalidDeviation(format!("{}: value must be finite", spec.display_label())));
    }
    let mut sys = problem.system().clone();
    match spec.kind {
        DeviationKind::B0Scale => {
            if spec.value <= 0.0 {
                return Err(Error::InvalidDeviation("b0_scale must be positive".into()));
            }
            for s in &mut sys.spins {
                s.offset_hz *= spec.value;
            }
        }
        DeviationKind::JCoupling => {
            let (a, b) = resolve_pair(problem, spec.require_target()?)?;
            let (na, nb) = (sys.spins[a].name.clone(), sys.spins[b].name.clone());
            sys.set_coupling(&na, &nb, spec.value)?;
        }
        DeviationKind::DurationScale => {
            if spec.value <= 0.0 {
                return Err(Error::InvalidDeviation("duration_scale must be positive".into()));
            }
            return problem.with_duration(problem.duration() * spec.value);
        }
        DeviationKind::ChannelOffset => {
            let channel = spec.require_target()?;
            sys.require_channel(channel)?;
            for s in sys.spins.iter_mut().filter(|s| s.channel == channel) {
                s.offset_hz -= spec.value;
            }
        }
        DeviationKind::PairLarmorDifference => {
            let (a, b) = resolve_pair(problem, spec.require_target()?)?;
            let (va, vb) = (sys.spins[a].offset_hz, sys.spins[b].offset_hz);
            let mean = 0.5 * (va + vb);
            let sign = if va >= vb { 1.0 } else { -1.0 };
            sys.spins[a].offset_hz = mean + sign * 0.5 * spec.value;
            sys.spins[b].offset_hz = mean - sign * 0.5 * spec.value;
        }
    }
    problem.with_system(sys)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub label: String,
    pub nominal: f64,
    pub deviated: f64,
    pub fidelity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    /// Row zero is the undeviated problem.
    pub rows: Vec<SensitivityRow>,
}

impl SensitivityReport {
    pub fn nominal_fidelity(&self) -> f64 {
        self.rows[0].fidelity
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("parameter,nominal,deviated,fidelity\n");
        for r in &self.rows {
            let label = if r.label.contains([',', '"']) {
                format!("\"{}\"", r.label.replace('"', "\"\""))
            } else {
                r.label.clone()
            };
            let _ = writeln!(out, "{label},{},{},{:.6}", r.nominal, r.deviated, r.fidelity);
        }
        out
    }
}

/// Nominal-RF fidelity of `pulse` on a (possibly deviated) problem. The
/// pulse is resampled onto the problem's step length so duration changes
/// stretch it.
fn nominal_fidelity(problem: &GrapeProblem, pulse: &ControlPulse) -> Result<f64> {
    let resampled = pulse.with_dt(problem.dt())?;
    problem.fidelity_at(&resampled, &vec![1.0; problem.controls().len()])
}

/// Evaluates `pulse` on the nominal problem and on each deviation.
pub fn scan(pulse: &ControlPulse, problem: &GrapeProblem, specs: &[DeviationSpec]) -> Result<SensitivityReport> {
    problem.check_pulse(pulse)?;
    let nominal = SensitivityRow {
        label: "nominal".into(),
        nominal: f64::NAN,
        deviated: f64::NAN,
        fidelity: nominal_fidelity(problem, pulse)?,
    };
    let rows: Vec<SensitivityRow> = specs
        .par_iter()
        .map(|spec| {
            let deviated = apply_deviation(problem, spec)?;
            Ok(SensitivityRow {
                label: spec.display_label(),
                nominal: nominal_value(problem, spec)?,
                deviated: spec.value,
                fidelity: nominal_fidelity(&deviated, pulse)?,
            })
        })
        .collect::<Result<_>>()?;
    let mut all = Vec::with_capacity(rows.len() + 1);
    all.push(nominal);
    all.extend(rows);
    Ok(SensitivityReport { rows: all })
}

/// The sixteen single-parameter deviations of the TCE compression-pulse
/// sensitivity table (eight parameters, two deviated values each).
pub fn tce_table_specs() -> Vec<DeviationSpec> {
    use DeviationKind::*;
    let proton_mhz = 600.55;
    let duration_ms = 13.0;
    vec![
        DeviationSpec::new(B0Scale, None, 606.13 / proton_mhz).labelled("B0 606.13 MHz"),
        DeviationSpec::new(B0Scale, None, 594.55 / proton_mhz).labelled("B0 594.55 MHz"),
        DeviationSpec::new(JCoupling, Some("H-C2"), 221.0).labelled("J(H,C2) 221 Hz"),
        DeviationSpec::new(JCoupling, Some("H-C2"), 180.0).labelled("J(H,C2) 180 Hz"),
        DeviationSpec::new(JCoupling, Some("C1-C2"), 113.0).labelled("J(C1,C2) 113 Hz"),
        DeviationSpec::new(JCoupling, Some("C1-C2"), 93.0).labelled("J(C1,C2) 93 Hz"),
        DeviationSpec::new(JCoupling, Some("H-C1"), 12.0).labelled("J(H,C1) 12 Hz"),
        DeviationSpec::new(JCoupling, Some("H-C1"), 5.0).labelled("J(H,C1) 5 Hz"),
        DeviationSpec::new(DurationScale, None, 13.2 / duration_ms).labelled("duration 13.2 ms"),
        DeviationSpec::new(DurationScale, None, 12.8 / duration_ms).labelled("duration 12.8 ms"),
        DeviationSpec::new(ChannelOffset, Some("H"), 20.0).labelled("H carrier +20 Hz"),
        DeviationSpec::new(ChannelOffset, Some("H"), -20.0).labelled("H carrier -20 Hz"),
        DeviationSpec::new(ChannelOffset, Some("C"), 20.0).labelled("C carrier +20 Hz"),
        DeviationSpec::new(ChannelOffset, Some("C"), -20.0).labelled("C carrier -20 Hz"),
        DeviationSpec::new(PairLarmorDifference, Some("C1-C2"), 1103.0).labelled("C1-C2 difference 1103 Hz"),
        DeviationSpec::new(PairLarmorDifference, Some("C1-C2"), 1063.0).labelled("C1-C2 difference 1063 Hz"),
    ]
}
