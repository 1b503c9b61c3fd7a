//! Spin-½ operator algebra and the Hamiltonians of a described spin system.
//!
//! Basis ordering: the spin at list position `k` owns bit `n-1-k` of the
//! computational-basis index (first spin is the most significant bit), and a
//! bit value of 0 is spin-up, the +½ eigenstate of Iz.

use std::f64::consts::TAU;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::operator::{OperatorMatrix, Role};

pub const MAX_SPINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'x' | 'X' => Some(Axis::X),
            'y' | 'Y' => Some(Axis::Y),
            'z' | 'Z' => Some(Axis::Z),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spin {
    pub name: String,
    pub channel: String,
    /// Rotating-frame offset from the channel carrier.
    pub offset_hz: f64,
    /// Relative equilibrium polarization.
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t2star_s: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coupling {
    pub a: String,
    pub b: String,
    pub j_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Channel {
    pub name: String,
    pub max_rf_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinSystem {
    pub spins: Vec<Spin>,
    #[serde(default)]
    pub couplings: Vec<Coupling>,
    pub channels: Vec<Channel>,
}

impl SpinSystem {
    /// Validates and returns the system.
    pub fn new(spins: Vec<Spin>, couplings: Vec<Coupling>, channels: Vec<Channel>) -> Result<Self> {
        let system = Self {
            spins,
            couplings,
            channels,
        };
        system.validate()?;
        Ok(system)
    }

    /// The ¹³C₂-trichloroethylene system: carbons C1, C2 on channel `C`,
    /// proton H on channel `H`, equilibrium weights 1:1:4.
    pub fn tce() -> Self {
        let spin = |name: &str, channel: &str, offset_hz: f64, weight: f64, t1_s: f64, t2star_s: f64| Spin {
            name: name.into(),
            channel: channel.into(),
            offset_hz,
            weight,
            t1_s: Some(t1_s),
            t2star_s: Some(t2star_s),
        };
        let coupling = |a: &str, b: &str, j_hz: f64| Coupling {
            a: a.into(),
            b: b.into(),
            j_hz,
        };
        Self {
            spins: vec![
                spin("C1", "C", 541.7, 1.0, 29.2, 0.230),
                spin("C2", "C", -541.7, 1.0, 17.3, 0.440),
                spin("H", "H", 0.0, 4.0, 2.67, 0.200),
            ],
            couplings: vec![
                coupling("H", "C2", 200.8),
                coupling("C1", "C2", 103.1),
                coupling("C1", "H", 9.0),
            ],
            channels: vec![
                Channel {
                    name: "C".into(),
                    max_rf_hz: 2000.0,
                },
                Channel {
                    name: "H".into(),
                    max_rf_hz: 2000.0,
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.spins.len();
        if n == 0 || n > MAX_SPINS {
            return Err(Error::SpinCount { got: n, max: MAX_SPINS });
        }
        if self.channels.is_empty() {
            return Err(Error::InvalidSystem("at least one channel is required".into()));
        }
        for (i, ch) in self.channels.iter().enumerate() {
            if self.channels[..i].iter().any(|c| c.name == ch.name) {
                return Err(Error::InvalidSystem(format!("duplicate channel `{}`", ch.name)));
            }
            if !(ch.max_rf_hz.is_finite() && ch.max_rf_hz > 0.0) {
                return Err(Error::InvalidSystem(format!(
                    "channel `{}`: max_rf_hz must be positive",
                    ch.name
                )));
            }
        }
        for (i, spin) in self.spins.iter().enumerate() {
            if self.spins[..i].iter().any(|s| s.name == spin.name) {
                return Err(Error::InvalidSystem(format!("duplicate spin `{}`", spin.name)));
            }
            if self.channel(&spin.channel).is_none() {
                return Err(Error::InvalidSystem(format!(
                    "spin `{}` refers to unknown channel `{}`",
                    spin.name, spin.channel
                )));
            }
            if !spin.offset_hz.is_finite() || !spin.weight.is_finite() {
                return Err(Error::InvalidSystem(format!(
                    "spin `{}`: offset and weight must be finite",
                    spin.name
                )));
            }
            for (what, t) in [("t1_s", spin.t1_s), ("t2star_s", spin.t2star_s)] {
                if let Some(t) = t {
                    if !(t.is_finite() && t > 0.0) {
                        return Err(Error::InvalidSystem(format!(
                            "spin `{}`: {what} must be positive",
                            spin.name
                        )));
                    }
                }
            }
        }
        for (k, c) in self.couplings.iter().enumerate() {
            let a = self.require_spin(&c.a)?;
            let b = self.require_spin(&c.b)?;
            if a == b {
                return Err(Error::InvalidSystem(format!("spin `{}` coupled to itself", c.a)));
            }
            if !c.j_hz.is_finite() {
                return Err(Error::InvalidSystem(format!("coupling {}-{}: J must be finite", c.a, c.b)));
            }
            let duplicate = self.couplings[..k].iter().any(|o| {
                (o.a == c.a && o.b == c.b) || (o.a == c.b && o.b == c.a)
            });
            if duplicate {
                return Err(Error::InvalidSystem(format!("coupling {}-{} listed twice", c.a, c.b)));
            }
        }
        Ok(())
    }

    pub fn n_spins(&self) -> usize {
        self.spins.len()
    }

    pub fn dim(&self) -> usize {
        1 << self.spins.len()
    }

    pub fn spin_index(&self, name: &str) -> Option<usize> {
        self.spins.iter().position(|s| s.name == name)
    }

    pub fn require_spin(&self, name: &str) -> Result<usize> {
        self.spin_index(name).ok_or_else(|| Error::UnknownSpin(name.to_string()))
    }

    pub fn channel(&self, name: &str) -> Option<&Channel> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn require_channel(&self, name: &str) -> Result<&Channel> {
        self.channel(name).ok_or_else(|| Error::UnknownChannel(name.to_string()))
    }

    pub fn channel_labels(&self) -> Vec<String> {
        self.channels.iter().map(|c| c.name.clone()).collect()
    }

    pub fn max_rf(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.max_rf_hz).collect()
    }

    /// Indices of the spins driven by `channel`.
    pub fn spins_on_channel(&self, channel: &str) -> Vec<usize> {
        self.spins
            .iter()
            .enumerate()
            .filter(|(_, s)| s.channel == channel)
            .map(|(i, _)| i)
            .collect()
    }

    /// Scalar coupling between two spins (symmetric, zero on the diagonal
    /// and for unlisted pairs).
    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let (a, b) = (&self.spins[i].name, &self.spins[j].name);
        self.couplings
            .iter()
            .find(|c| (&c.a == a && &c.b == b) || (&c.a == b && &c.b == a))
            .map_or(0.0, |c| c.j_hz)
    }

    /// Sets J between two named spins, adding the pair if absent.
    pub fn set_coupling(&mut self, a: &str, b: &str, j_hz: f64) -> Result<()> {
        let ia = self.require_spin(a)?;
        let ib = self.require_spin(b)?;
        if ia == ib {
            return Err(Error::InvalidSystem(format!("spin `{a}` coupled to itself")));
        }
        match self
            .couplings
            .iter_mut()
            .find(|c| (c.a == a && c.b == b) || (c.a == b && c.b == a))
        {
            Some(c) => c.j_hz = j_hz,
            None => self.couplings.push(Coupling {
                a: a.into(),
                b: b.into(),
                j_hz,
            }),
        }
        Ok(())
    }

    /// I{axis} of spin `index` in this system's Hilbert space.
    pub fn spin_operator(&self, axis: Axis, index: usize) -> Result<OperatorMatrix> {
        single_spin_operator(axis, index, self.n_spins())
    }
}

fn half_pauli(axis: Axis) -> CMat {
    let z = C64::new(0.0, 0.0);
    let h = C64::new(0.5, 0.0);
    let ih = C64::new(0.0, 0.5);
    match axis {
        Axis::X => CMat::from_row_slice(2, 2, &[z, h, h, z]),
        Axis::Y => CMat::from_row_slice(2, 2, &[z, -ih, ih, z]),
        Axis::Z => CMat::from_row_slice(2, 2, &[h, z, z, -h]),
    }
}

pub(crate) fn spin_matrix(axis: Axis, spin_index: usize, n_spins: usize) -> CMat {
    let mut out = CMat::identity(1, 1);
    for k in 0..n_spins {
        let factor = if k == spin_index {
            half_pauli(axis)
        } else {
            linalg::identity(2)
        };
        out = linalg::kron(&out, &factor);
    }
    out
}

/// Spin-½ operator I{axis} acting on one spin of an `n_spins` register.
pub fn single_spin_operator(axis: Axis, spin_index: usize, n_spins: usize) -> Result<OperatorMatrix> {
    if n_spins == 0 || n_spins > MAX_SPINS {
        return Err(Error::SpinCount {
            got: n_spins,
            max: MAX_SPINS,
        });
    }
    if spin_index >= n_spins {
        return Err(Error::SpinIndex {
            index: spin_index,
            n_spins,
        });
    }
    Ok(OperatorMatrix::from_trusted(
        spin_matrix(axis, spin_index, n_spins),
        Role::Observable,
    ))
}

/// Diagonal of Iz for spin `index`: +½ where its bit is 0.
fn iz_diagonal(index: usize, n_spins: usize) -> impl Iterator<Item = f64> {
    let shift = n_spins - 1 - index;
    (0..1usize << n_spins).map(move |b| if (b >> shift) & 1 == 0 { 0.5 } else { -0.5 })
}

/// Weak-coupling drift Hamiltonian 2π[Σ νᵢ Izⁱ + Σ_{i<j} Jᵢⱼ Izⁱ Izʲ] in rad/s.
pub fn build_drift_hamiltonian(system: &SpinSystem) -> Result<OperatorMatrix> {
    system.validate()?;
    let n = system.n_spins();
    let dim = system.dim();
    let z: Vec<Vec<f64>> = (0..n).map(|i| iz_diagonal(i, n).collect()).collect();
    let mut diag = vec![0.0; dim];
    for i in 0..n {
        let nu = system.spins[i].offset_hz;
        for (d, zi) in diag.iter_mut().zip(&z[i]) {
            *d += nu * zi;
        }
        for j in (i + 1)..n {
            let jij = system.coupling(i, j);
            if jij != 0.0 {
                for b in 0..dim {
                    diag[b] += jij * z[i][b] * z[j][b];
                }
            }
        }
    }
    let mut h = linalg::zeros(dim);
    for (b, d) in diag.into_iter().enumerate() {
        h[(b, b)] = C64::new(TAU * d, 0.0);
    }
    Ok(OperatorMatrix::from_trusted(h, Role::Hamiltonian))
}

/// Per-channel control Hamiltonians. `hx` and `hy` already include the 2π
/// factor, so multiplying by an amplitude in Hz gives rad/s.
#[derive(Debug, Clone)]
pub struct ChannelControls {
    pub label: String,
    pub max_rf_hz: f64,
    pub hx: OperatorMatrix,
    pub hy: OperatorMatrix,
}

pub fn build_control_operators(system: &SpinSystem) -> Result<Vec<ChannelControls>> {
    system.validate()?;
    let n = system.n_spins();
    system
        .channels
        .iter()
        .map(|ch| {
            let members = system.spins_on_channel(&ch.name);
            if members.is_empty() {
                return Err(Error::EmptyChannel(ch.name.clone()));
            }
            let sum = |axis| {
                let mut m = linalg::zeros(system.dim());
                for &i in &members {
                    m += spin_matrix(axis, i, n);
                }
                OperatorMatrix::from_trusted(m * C64::new(TAU, 0.0), Role::Hamiltonian)
            };
            Ok(ChannelControls {
                label: ch.name.clone(),
                max_rf_hz: ch.max_rf_hz,
                hx: sum(Axis::X),
                hy: sum(Axis::Y),
            })
        })
        .collect()
}

/// High-temperature equilibrium deviation Σ wᵢ Izⁱ.
pub fn thermal_deviation_state(system: &SpinSystem) -> Result<OperatorMatrix> {
    system.validate()?;
    let n = system.n_spins();
    let mut diag = vec![0.0; system.dim()];
    for (i, spin) in system.spins.iter().enumerate() {
        for (d, zi) in diag.iter_mut().zip(iz_diagonal(i, n)) {
            *d += spin.weight * zi;
        }
    }
    let mut m = linalg::zeros(system.dim());
    for (b, d) in diag.into_iter().enumerate() {
        m[(b, b)] = C64::new(d, 0.0);
    }
    Ok(OperatorMatrix::from_trusted(m, Role::State))
}
