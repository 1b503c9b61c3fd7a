//! Text pulse format: `#key value` header lines followed by one CSV row per
//! step holding `amp_hz,phase_deg` for each channel.
//!
//! ```text
//! #format_version 1
//! #channels C,H
//! #steps 2
//! #dt_us 6
//! #max_rf_hz 2000,2000
//! 2000.00,0.000000,0.000000,0.000000
//! 1000.00,90.0000,500.000,180.000
//! ```

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::propagation::{ControlPulse, MAX_STEPS};

pub const FORMAT_VERSION: u32 = 1;
const SIGNIFICANT_DIGITS: i32 = 6;

/// A pulse together with the per-channel amplitude caps it was designed for.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseFile {
    pub pulse: ControlPulse,
    pub max_rf_hz: Vec<f64>,
}

/// Fixed-point text with `SIGNIFICANT_DIGITS` significant digits; zero is
/// written as `0.000000`.
fn format_significant(x: f64) -> String {
    if x == 0.0 {
        return format!("{:.*}", SIGNIFICANT_DIGITS as usize, 0.0);
    }
    let mut exp = x.abs().log10().floor() as i32;
    if x.abs() < 10f64.powi(exp) {
        exp -= 1;
    }
    loop {
        let decimals = (SIGNIFICANT_DIGITS - 1 - exp).max(0);
        let text = format!("{:.*}", decimals as usize, x);
        let rounded: f64 = text.parse().unwrap_or(x);
        if decimals > 0 && rounded.abs() >= 10f64.powi(exp + 1) {
            exp += 1;
            continue;
        }
        return text;
    }
}

fn polar(ux: f64, uy: f64) -> (String, String) {
    let amp = ux.hypot(uy);
    let amp_text = format_significant(amp);
    if amp_text.parse::<f64>().unwrap_or(0.0) == 0.0 {
        return (format_significant(0.0), format_significant(0.0));
    }
    let mut phase = uy.atan2(ux).to_degrees();
    if phase < 0.0 {
        phase += 360.0;
    }
    let mut phase_text = format_significant(phase);
    if phase_text.parse::<f64>().unwrap_or(0.0) >= 360.0 {
        phase_text = format_significant(0.0);
    }
    (amp_text, phase_text)
}

/// Twelve significant digits, then the shortest text that parses back.
fn format_dt_us(dt: f64) -> String {
    let rounded: f64 = format!("{:.11e}", dt * 1e6).parse().unwrap_or(dt * 1e6);
    format!("{rounded}")
}

impl PulseFile {
    pub fn new(pulse: ControlPulse, max_rf_hz: Vec<f64>) -> Result<Self> {
        if max_rf_hz.len() != pulse.n_channels() {
            return Err(Error::InvalidPulse(format!(
                "{} amplitude caps for {} channels",
                max_rf_hz.len(),
                pulse.n_channels()
            )));
        }
        if let Some(m) = max_rf_hz.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::InvalidPulse(format!("amplitude cap must be positive, got {m}")));
        }
        Ok(Self { pulse, max_rf_hz })
    }

    /// Canonical text form.
    pub fn to_text(&self) -> String {
        let p = &self.pulse;
        let mut out = String::new();
        let caps: Vec<String> = self.max_rf_hz.iter().map(|m| m.to_string()).collect();
        let _ = writeln!(out, "#format_version {FORMAT_VERSION}");
        let _ = writeln!(out, "#channels {}", p.channels().join(","));
        let _ = writeln!(out, "#steps {}", p.steps());
        let _ = writeln!(out, "#dt_us {}", format_dt_us(p.dt()));
        let _ = writeln!(out, "#max_rf_hz {}", caps.join(","));
        for step in 0..p.steps() {
            let fields: Vec<String> = (0..p.n_channels())
                .map(|c| {
                    let [ux, uy] = p.get(step, c);
                    let (a, ph) = polar(ux, uy);
                    format!("{a},{ph}")
                })
                .collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::PulseFormat { line, message };
        let mut version = None;
        let mut channels: Option<Vec<String>> = None;
        let mut steps = None;
        let mut dt_us = None;
        let mut caps: Option<Vec<f64>> = None;

        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).peekable();
        while let Some(&(no, line)) = lines.peek() {
            let Some(rest) = line.strip_prefix('#') else { break };
            lines.next();
            let (key, value) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
            let value = value.trim();
            let number = |v: &str| v.parse::<f64>().map_err(|_| err(no, format!("`{key}`: `{v}` is not a number")));
            let duplicate = || err(no, format!("duplicate header key `{key}`"));
            match key {
                "format_version" => {
                    if version.is_some() {
                        return Err(duplicate());
                    }
                    match value.parse::<u32>() {
                        Ok(FORMAT_VERSION) => version = Some(FORMAT_VERSION),
                        _ => return Err(err(no, format!("unsupported format_version `{value}`"))),
                    }
                }
                "channels" => {
                    if channels.is_some() {
                        return Err(duplicate());
                    }
                    let labels: Vec<String> = value.split(',').map(|s| s.trim().to_string()).collect();
                    if labels.iter().any(String::is_empty) {
                        return Err(err(no, "empty channel label".into()));
                    }
                    channels = Some(labels);
                }
                "steps" => {
                    if steps.is_some() {
                        return Err(duplicate());
                    }
                    let n: usize = value
                        .parse()
                        .map_err(|_| err(no, format!("`steps`: `{value}` is not a count")))?;
                    if n == 0 || n > MAX_STEPS {
                        return Err(err(no, format!("steps must be in 1..={MAX_STEPS}, got {n}")));
                    }
                    steps = Some(n);
                }
                "dt_us" => {
                    if dt_us.is_some() {
                        return Err(duplicate());
                    }
                    let v = number(value)?;
                    if !(v.is_finite() && v > 0.0) {
                        return Err(err(no, format!("dt_us must be positive, got {value}")));
                    }
                    dt_us = Some(v);
                }
                "max_rf_hz" => {
                    if caps.is_some() {
                        return Err(duplicate());
                    }
                    let values = value.split(',').map(|v| number(v.trim())).collect::<Result<Vec<f64>>>()?;
                    if values.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
                        return Err(err(no, "max_rf_hz values must be positive".into()));
                    }
                    caps = Some(values);
                }
                other => return Err(err(no, format!("unknown header key `{other}`"))),
            }
        }

        let header_end = lines.peek().map_or(text.lines().count() + 1, |&(no, _)| no);
        let missing = |key: &str| err(header_end, format!("header is missing `#{key}`"));
        version.ok_or_else(|| missing("format_version"))?;
        let channels = channels.ok_or_else(|| missing("channels"))?;
        let steps = steps.ok_or_else(|| missing("steps"))?;
        let dt_us = dt_us.ok_or_else(|| missing("dt_us"))?;
        let caps = caps.ok_or_else(|| missing("max_rf_hz"))?;
        if caps.len() != channels.len() {
            return Err(err(
                header_end,
                format!("{} max_rf_hz values for {} channels", caps.len(), channels.len()),
            ));
        }

        let width = 2 * channels.len();
        let mut amplitudes = Vec::with_capacity(steps * channels.len());
        let mut rows = 0;
        let mut last_line = header_end.saturating_sub(1);
        for (no, line) in lines {
            last_line = no;
            if line.is_empty() {
                continue;
            }
            if rows == steps {
                return Err(err(no, format!("extra body row; header declares {steps} steps")));
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != width {
                return Err(err(no, format!("expected {width} fields, found {}", fields.len())));
            }
            for (c, pair) in fields.chunks(2).enumerate() {
                let parse = |v: &str, what: &str| {
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| err(no, format!("channel `{}` {what}: `{v}` is not a number", channels[c])))
                };
                let amp = parse(pair[0], "amplitude")?;
                let phase = parse(pair[1], "phase")?;
                if amp < 0.0 {
                    return Err(err(no, format!("channel `{}` amplitude is negative", channels[c])));
                }
                if !(0.0..360.0).contains(&phase) {
                    return Err(err(no, format!("channel `{}` phase {phase} outside [0, 360)", channels[c])));
                }
                let rad = phase.to_radians();
                amplitudes.push([amp * rad.cos(), amp * rad.sin()]);
            }
            rows += 1;
        }
        if rows < steps {
            return Err(err(
                last_line + 1,
                format!("missing body row {} of {steps}", rows + 1),
            ));
        }
        let pulse = ControlPulse::new(dt_us * 1e-6, channels, amplitudes)
            .map_err(|e| err(header_end, e.to_string()))?;
        Self::new(pulse, caps)
    }
}
