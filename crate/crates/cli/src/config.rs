//! JSON configuration shared by every subcommand: the spin system, the
//! design problem, optimizer settings and acquisition parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use nmr_grape::expr::parse_state;
use nmr_grape::gates::{ideal_comp_unitary, ideal_pe_unitary, PeVariant};
use nmr_grape::grape::{default_robust_ensemble, joint_scale_ensemble, DesignOptions, EnsembleMember, GrapeProblem};
use nmr_grape::propagation::MAX_STEPS;
use nmr_grape::spectro::AcquisitionOptions;
use nmr_grape::spin::thermal_deviation_state;
use nmr_grape::{OperatorMatrix, SpinSystem};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub system: SpinSystem,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub optimizer: DesignOptions,
    #[serde(default)]
    pub acquisition: AcquisitionOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// `thermal` or an operator expression.
    #[serde(default = "thermal")]
    pub initial: String,
    pub target: TargetConfig,
    pub duration_s: f64,
    pub steps: usize,
    /// Explicit ensemble members. Mutually exclusive with `ensemble_scales`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<Vec<EnsembleMember>>,
    /// Equal-weight joint RF scales; `[1.0]` gives a nominal-only problem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble_scales: Option<Vec<f64>>,
}

fn thermal() -> String {
    "thermal".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    Comp,
    Pe,
}

/// Either an explicit target `expression` or the image of the initial state
/// under an ideal `gate`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<Gate>,
    /// Spins exchanged by the `pe` gate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<[String; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<PeVariant>,
}

fn invalid(key: &str, message: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("config key `{key}`: {message}"))
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let key = if path == "." { "<root>".to_string() } else { path };
            CliError::Validation(format!("config key `{key}`: {inner}"))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Checks everything that does not need the full problem built.
    pub fn validate(&self) -> Result<(), CliError> {
        self.system.validate().map_err(|e| invalid("system", e))?;
        let p = &self.problem;
        if !(p.duration_s.is_finite() && p.duration_s > 0.0) {
            return Err(invalid("problem.duration_s", format!("must be positive, got {}", p.duration_s)));
        }
        if p.steps == 0 || p.steps > MAX_STEPS {
            return Err(invalid("problem.steps", format!("must be in 1..={MAX_STEPS}, got {}", p.steps)));
        }
        if p.ensemble.is_some() && p.ensemble_scales.is_some() {
            return Err(invalid("problem.ensemble", "give either `ensemble` or `ensemble_scales`, not both"));
        }
        if let Some(scales) = &p.ensemble_scales {
            if scales.is_empty() || scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return Err(invalid("problem.ensemble_scales", "scales must be positive and non-empty"));
            }
        }
        let t = &p.target;
        match (&t.expression, t.gate) {
            (Some(_), Some(_)) => return Err(invalid("problem.target", "give either `expression` or `gate`, not both")),
            (None, None) => return Err(invalid("problem.target", "needs `expression` or `gate`")),
            (None, Some(Gate::Pe)) if t.pair.is_none() => {
                return Err(invalid("problem.target.pair", "the `pe` gate needs a spin pair"))
            }
            (_, Some(Gate::Comp)) if t.pair.is_some() || t.variant.is_some() => {
                return Err(invalid("problem.target", "`pair` and `variant` apply to the `pe` gate only"))
            }
            _ => {}
        }
        self.acquisition.validate().map_err(|e| invalid("acquisition", e))?;
        Ok(())
    }

    pub fn initial_state(&self) -> Result<OperatorMatrix, CliError> {
        if self.problem.initial.trim() == "thermal" {
            thermal_deviation_state(&self.system).map_err(|e| invalid("system", e))
        } else {
            parse_state(&self.problem.initial, &self.system).map_err(|e| invalid("problem.initial", e))
        }
    }

    pub fn target_state(&self, initial: &OperatorMatrix) -> Result<OperatorMatrix, CliError> {
        let t = &self.problem.target;
        if let Some(expr) = &t.expression {
            return parse_state(expr, &self.system).map_err(|e| invalid("problem.target.expression", e));
        }
        let n = self.system.n_spins();
        let u = match t.gate {
            Some(Gate::Comp) => ideal_comp_unitary(n).map_err(|e| invalid("problem.target.gate", e))?,
            Some(Gate::Pe) => {
                let pair = t.pair.as_ref().expect("validated");
                let idx = |name: &str| {
                    self.system
                        .require_spin(name)
                        .map_err(|e| invalid("problem.target.pair", e))
                };
                let variant = t.variant.unwrap_or(PeVariant::PhaseVariant);
                ideal_pe_unitary(variant, idx(&pair[0])?, idx(&pair[1])?, n)
                    .map_err(|e| invalid("problem.target.pair", e))?
            }
            None => unreachable!("validated"),
        };
        Ok(initial.conjugated_by(&u))
    }

    pub fn ensemble(&self) -> Vec<EnsembleMember> {
        let n = self.system.channels.len();
        match (&self.problem.ensemble, &self.problem.ensemble_scales) {
            (Some(members), _) => members.clone(),
            (None, Some(scales)) => joint_scale_ensemble(scales, n),
            (None, None) => default_robust_ensemble(n),
        }
    }

    pub fn build_problem(&self) -> Result<GrapeProblem, CliError> {
        let rho0 = self.initial_state()?;
        let target = self.target_state(&rho0)?;
        GrapeProblem::new(
            self.system.clone(),
            rho0,
            target,
            self.problem.duration_s,
            self.problem.steps,
            self.ensemble(),
        )
        .map_err(|e| invalid("problem", e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"{
        "system": {
            "spins": [
                {"name": "A", "channel": "X", "offset_hz": 10.0},
                {"name": "B", "channel": "X", "offset_hz": -10.0}
            ],
            "couplings": [{"a": "A", "b": "B", "j_hz": 50.0}],
            "channels": [{"name": "X", "max_rf_hz": 1000.0}]
        },
        "problem": {
            "target": {"gate": "pe", "pair": ["A", "B"]},
            "duration_s": 0.001,
            "steps": 10
        }
    }"#;

    fn err(text: &str) -> String {
        match Config::from_json(text) {
            Err(CliError::Validation(m)) => m,
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_builds() {
        let c = Config::from_json(MINIMAL).unwrap();
        assert_eq!(c.problem.initial, "thermal");
        let p = c.build_problem().unwrap();
        assert_eq!(p.ensemble().len(), 3);
        assert_eq!(p.steps(), 10);
    }

    #[test]
    fn type_errors_name_the_key() {
        let m = err(&MINIMAL.replace("\"steps\": 10", "\"steps\": \"ten\""));
        assert!(m.contains("problem.steps") && m.contains("line"), "{m}");
        let m = err(&MINIMAL.replace("\"offset_hz\": -10.0", "\"offset_hz\": true"));
        assert!(m.contains("system.spins[1].offset_hz"), "{m}");
        let m = err(&MINIMAL.replace("\"duration_s\"", "\"duration\""));
        assert!(m.contains("problem") && m.contains("duration"), "{m}");
    }

    #[test]
    fn semantic_errors_name_the_key() {
        assert!(err(&MINIMAL.replace("0.001", "-1")).contains("problem.duration_s"));
        assert!(err(&MINIMAL.replace("\"steps\": 10", "\"steps\": 5001")).contains("problem.steps"));
        assert!(err(&MINIMAL.replace("\"gate\": \"pe\", \"pair\": [\"A\", \"B\"]", "\"gate\": \"pe\"")).contains("problem.target.pair"));
        assert!(err(&MINIMAL.replace("\"b\": \"B\"", "\"b\": \"Q\"")).contains("system"));
    }

    #[test]
    fn bad_expressions_surface_on_build() {
        let c = Config::from_json(&MINIMAL.replace(
            "{\"gate\": \"pe\", \"pair\": [\"A\", \"B\"]}",
            "{\"expression\": \"Iz(A)+Iq(B)\"}",
        ))
        .unwrap();
        match c.build_problem() {
            Err(CliError::Validation(m)) => assert!(m.contains("problem.target.expression") && m.contains("position 7"), "{m}"),
            other => panic!("{other:?}"),
        }
    }
}
