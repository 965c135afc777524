//! Domain types shared by every other module, plus the JSON configuration
//! schema and its validation.
//!
//! Internal units are micrometres and seconds throughout: diffusion
//! coefficients in µm²/s, densities in µm⁻³, rates in 1/s. SI values are
//! accepted only at the configuration boundary.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multiplier taking a diffusion coefficient from m²/s to µm²/s.
pub const M2_TO_UM2: f64 = 1e12;

/// The fluid: diffusion coefficient and first-order degradation rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Medium {
    /// Diffusion coefficient, µm²/s.
    pub diffusion: f64,
    /// Degradation rate k_d, 1/s. Zero disables degradation.
    pub degradation: f64,
}

impl Medium {
    pub fn new(diffusion: f64, degradation: f64) -> Result<Self> {
        if !(diffusion.is_finite() && diffusion > 0.0) {
            return Err(Error::config(
                "medium.D",
                format!("diffusion coefficient must be positive, got {diffusion}"),
            ));
        }
        if !(degradation.is_finite() && degradation >= 0.0) {
            return Err(Error::config(
                "medium.k_d_per_s",
                format!("degradation rate must be non-negative, got {degradation}"),
            ));
        }
        Ok(Self {
            diffusion,
            degradation,
        })
    }

    /// Builds a medium from the molecule half-life, k_d = ln 2 / half-life.
    pub fn from_half_life(diffusion: f64, half_life: f64) -> Result<Self> {
        if !(half_life > 0.0) {
            return Err(Error::config("medium.half_life", "half-life must be positive"));
        }
        Self::new(diffusion, std::f64::consts::LN_2 / half_life)
    }

    /// Half-life of a messenger molecule; `None` without degradation.
    pub fn half_life(&self) -> Option<f64> {
        (self.degradation > 0.0).then(|| std::f64::consts::LN_2 / self.degradation)
    }

    /// Probability that a molecule has not degraded after `t` seconds.
    pub fn survival(&self, t: f64) -> f64 {
        (-self.degradation * t).exp()
    }

    pub fn without_degradation(&self) -> Self {
        Self {
            degradation: 0.0,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReceiverKind {
    /// Captures every molecule that reaches its surface.
    Absorbing,
    /// Transparent sphere counting the molecules currently inside.
    Passive,
}

impl ReceiverKind {
    pub fn name(self) -> &'static str {
        match self {
            ReceiverKind::Absorbing => "absorbing",
            ReceiverKind::Passive => "passive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Receiver {
    pub kind: ReceiverKind,
    /// Radius r_r, µm.
    pub radius: f64,
}

impl Receiver {
    pub fn new(kind: ReceiverKind, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::config(
                "receiver.r_r_um",
                format!("receiver radius must be positive, got {radius}"),
            ));
        }
        Ok(Self { kind, radius })
    }

    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.radius.powi(3)
    }
}

/// Transmitter deployment. `max_radius` only bounds simulated fields; the
/// analytic expressions integrate to infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    /// Transmitter density λ_a, µm⁻³.
    pub density: f64,
    /// Truncation radius for sampled fields, µm.
    pub max_radius: f64,
}

impl Deployment {
    pub fn new(density: f64, max_radius: f64, receiver_radius: f64) -> Result<Self> {
        if !(density.is_finite() && density > 0.0) {
            return Err(Error::config(
                "deployment.lambda_per_um3",
                format!("transmitter density must be positive, got {density}"),
            ));
        }
        if !(max_radius.is_finite() && max_radius > receiver_radius) {
            return Err(Error::config(
                "deployment.R_max_um",
                format!(
                    "truncation radius {max_radius} must exceed the receiver radius {receiver_radius}"
                ),
            ));
        }
        Ok(Self {
            density,
            max_radius,
        })
    }

    pub fn with_density(&self, density: f64) -> Self {
        Self { density, ..*self }
    }
}

/// Where the transmitted bits come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BitSource {
    /// A fixed, known sequence b_1..b_n.
    Explicit(Vec<bool>),
    /// `len` i.i.d. bits drawn with the protocol's bit-1 prior.
    Iid { len: usize },
}

impl BitSource {
    pub fn len(&self) -> usize {
        match self {
            BitSource::Explicit(bits) => bits.len(),
            BitSource::Iid { len } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// ON/OFF keying: a bit-1 releases `molecules` at the start of its interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionProtocol {
    /// N_tx, molecules per bit-1 pulse.
    pub molecules: u64,
    /// T_b, s.
    pub bit_interval: f64,
    /// T_ss, s.
    pub sample_interval: f64,
    pub bits: BitSource,
    /// Prior probability of a bit-1; P0 = 1 - P1.
    pub p1: f64,
}

impl EmissionProtocol {
    pub fn p0(&self) -> f64 {
        1.0 - self.p1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetectorMode {
    #[serde(rename = "fixed")]
    FixedThreshold,
    /// Decision feedback: threshold applied to N[j] - N[j-1].
    #[serde(rename = "dfd")]
    Dfd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub mode: DetectorMode,
    /// N_th. At least 1 for the fixed detector; any integer for DFD.
    pub threshold: i64,
}

impl DetectorSpec {
    pub fn new(mode: DetectorMode, threshold: i64) -> Result<Self> {
        if mode == DetectorMode::FixedThreshold && threshold < 1 {
            return Err(Error::config(
                "detector.N_th",
                format!("fixed-threshold detector needs N_th >= 1, got {threshold}"),
            ));
        }
        Ok(Self { mode, threshold })
    }

    pub fn fixed(threshold: i64) -> Result<Self> {
        Self::new(DetectorMode::FixedThreshold, threshold)
    }

    pub fn dfd(threshold: i64) -> Self {
        Self {
            mode: DetectorMode::Dfd,
            threshold,
        }
    }
}

/// A fully validated experiment in internal units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub medium: Medium,
    pub receiver: Receiver,
    pub deployment: Deployment,
    pub protocol: EmissionProtocol,
    pub detector: DetectorSpec,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Reads and validates a JSON configuration file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawConfig = serde_json::from_str(text)?;
        validate(&raw)
    }

    /// The raw form of this configuration, expressed in µm²/s.
    pub fn to_raw(&self) -> RawConfig {
        let (bits, n_bits) = match &self.protocol.bits {
            BitSource::Explicit(bits) => (Some(bits.iter().map(|&b| u8::from(b)).collect()), None),
            BitSource::Iid { len } => (None, Some(*len)),
        };
        RawConfig {
            medium: RawMedium {
                d_m2_per_s: None,
                d_um2_per_s: Some(self.medium.diffusion),
                k_d_per_s: self.medium.degradation,
            },
            receiver: RawReceiver {
                kind: self.receiver.kind,
                r_r_um: self.receiver.radius,
            },
            deployment: RawDeployment {
                lambda_per_um3: self.deployment.density,
                r_max_um: self.deployment.max_radius,
            },
            protocol: RawProtocol {
                n_tx: self.protocol.molecules,
                t_b_s: self.protocol.bit_interval,
                t_ss_s: Some(self.protocol.sample_interval),
                bits,
                n_bits,
                p1: Some(self.protocol.p1),
            },
            detector: Some(RawDetector {
                mode: self.detector.mode,
                n_th: self.detector.threshold,
            }),
            seed: Some(self.seed),
        }
    }

    /// Single-line JSON of the resolved configuration.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_raw()).expect("config serializes")
    }
}

/// The on-disk JSON schema, before unit conversion and validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub medium: RawMedium,
    pub receiver: RawReceiver,
    pub deployment: RawDeployment,
    pub protocol: RawProtocol,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<RawDetector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMedium {
    #[serde(rename = "D_m2_per_s", default, skip_serializing_if = "Option::is_none")]
    pub d_m2_per_s: Option<f64>,
    #[serde(rename = "D_um2_per_s", default, skip_serializing_if = "Option::is_none")]
    pub d_um2_per_s: Option<f64>,
    #[serde(default)]
    pub k_d_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawReceiver {
    pub kind: ReceiverKind,
    pub r_r_um: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDeployment {
    pub lambda_per_um3: f64,
    #[serde(rename = "R_max_um")]
    pub r_max_um: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawProtocol {
    #[serde(rename = "N_tx")]
    pub n_tx: u64,
    #[serde(rename = "T_b_s")]
    pub t_b_s: f64,
    /// Defaults to the bit interval.
    #[serde(rename = "T_ss_s", default, skip_serializing_if = "Option::is_none")]
    pub t_ss_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bits: Option<Vec<u8>>,
    /// Sequence length when `bits` is absent (i.i.d. bits). Defaults to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_bits: Option<usize>,
    #[serde(rename = "P1", default, skip_serializing_if = "Option::is_none")]
    pub p1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDetector {
    pub mode: DetectorMode,
    #[serde(rename = "N_th")]
    pub n_th: i64,
}

/// Converts a raw configuration to internal units and checks every
/// invariant, reporting the first violation.
pub fn validate(raw: &RawConfig) -> Result<ExperimentConfig> {
    let diffusion = match (raw.medium.d_m2_per_s, raw.medium.d_um2_per_s) {
        (Some(si), None) => si * M2_TO_UM2,
        (None, Some(um)) => um,
        (Some(_), Some(_)) => {
            return Err(Error::config(
                "medium.D",
                "give exactly one of D_m2_per_s and D_um2_per_s",
            ))
        }
        (None, None) => {
            return Err(Error::config(
                "medium.D",
                "missing diffusion coefficient (D_m2_per_s or D_um2_per_s)",
            ))
        }
    };
    let medium = Medium::new(diffusion, raw.medium.k_d_per_s)?;
    let receiver = Receiver::new(raw.receiver.kind, raw.receiver.r_r_um)?;
    let deployment = Deployment::new(
        raw.deployment.lambda_per_um3,
        raw.deployment.r_max_um,
        receiver.radius,
    )?;

    let p = &raw.protocol;
    if p.n_tx < 1 {
        return Err(Error::config("protocol.N_tx", "need at least one molecule per pulse"));
    }
    if !(p.t_b_s.is_finite() && p.t_b_s > 0.0) {
        return Err(Error::config(
            "protocol.T_b_s",
            format!("bit interval must be positive, got {}", p.t_b_s),
        ));
    }
    let sample_interval = p.t_ss_s.unwrap_or(p.t_b_s);
    if !(sample_interval.is_finite() && sample_interval > 0.0) {
        return Err(Error::config(
            "protocol.T_ss_s",
            format!("sampling interval must be positive, got {sample_interval}"),
        ));
    }
    if sample_interval > p.t_b_s {
        return Err(Error::config(
            "protocol.T_ss_s",
            format!(
                "sampling interval exceeds bit interval ({sample_interval} s > {} s)",
                p.t_b_s
            ),
        ));
    }
    let p1 = p.p1.unwrap_or(0.5);
    if !(0.0..=1.0).contains(&p1) {
        return Err(Error::config("protocol.P1", format!("prior must lie in [0, 1], got {p1}")));
    }
    let bits = match (&p.bits, p.n_bits) {
        (Some(_), Some(_)) => {
            return Err(Error::config("protocol.bits", "give either bits or n_bits, not both"))
        }
        (Some(list), None) => {
            if let Some(bad) = list.iter().find(|&&b| b > 1) {
                return Err(Error::config(
                    "protocol.bits",
                    format!("bits must be 0 or 1, found {bad}"),
                ));
            }
            BitSource::Explicit(list.iter().map(|&b| b == 1).collect())
        }
        (None, n) => BitSource::Iid { len: n.unwrap_or(1) },
    };
    if bits.is_empty() {
        return Err(Error::config("protocol.bits", "bit sequence is empty"));
    }
    let protocol = EmissionProtocol {
        molecules: p.n_tx,
        bit_interval: p.t_b_s,
        sample_interval,
        bits,
        p1,
    };

    let detector = match &raw.detector {
        Some(d) => DetectorSpec::new(d.mode, d.n_th)?,
        None => DetectorSpec::fixed(1)?,
    };

    Ok(ExperimentConfig {
        medium,
        receiver,
        deployment,
        protocol,
        detector,
        seed: raw.seed.unwrap_or(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw() -> RawConfig {
        serde_json::from_str(
            r#"{
                "medium": {"D_m2_per_s": 80e-12, "k_d_per_s": 0.0},
                "receiver": {"kind": "absorbing", "r_r_um": 5.0},
                "deployment": {"lambda_per_um3": 1e-4, "R_max_um": 50.0},
                "protocol": {"N_tx": 10000, "T_b_s": 0.2, "T_ss_s": 0.01, "bits": [1, 0, 1, 0]},
                "detector": {"mode": "fixed", "N_th": 3},
                "seed": 7
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn si_diffusion_is_converted_to_um2_per_s() {
        let cfg = validate(&raw()).unwrap();
        let d = cfg.medium.diffusion;
        assert!((d - 80.0).abs() <= 80.0 * f64::EPSILON, "{d}");
        assert_eq!(cfg.protocol.bits, BitSource::Explicit(vec![true, false, true, false]));
        assert_eq!(cfg.protocol.p1, 0.5);
    }

    #[test]
    fn zero_degradation_is_valid() {
        let cfg = validate(&raw()).unwrap();
        assert_eq!(cfg.medium.degradation, 0.0);
        assert_eq!(cfg.medium.half_life(), None);
    }

    #[test]
    fn sampling_longer_than_bit_is_rejected() {
        let mut r = raw();
        r.protocol.t_b_s = 0.2;
        r.protocol.t_ss_s = Some(0.3);
        let err = validate(&r).unwrap_err();
        assert!(
            err.to_string().contains("sampling interval exceeds bit interval"),
            "{err}"
        );
    }

    #[test]
    fn rejects_bad_radius_and_density() {
        let mut r = raw();
        r.receiver.r_r_um = 0.0;
        assert!(matches!(
            validate(&r),
            Err(Error::Config { field: "receiver.r_r_um", .. })
        ));
        let mut r = raw();
        r.deployment.lambda_per_um3 = -1e-4;
        assert!(matches!(
            validate(&r),
            Err(Error::Config { field: "deployment.lambda_per_um3", .. })
        ));
        let mut r = raw();
        r.deployment.r_max_um = 5.0;
        assert!(validate(&r).is_err());
    }

    #[test]
    fn fixed_detector_needs_positive_threshold_but_dfd_does_not() {
        assert!(DetectorSpec::fixed(0).is_err());
        assert!(DetectorSpec::new(DetectorMode::Dfd, -3).is_ok());
    }

    #[test]
    fn half_life_relation() {
        let m = Medium::from_half_life(80.0, 2.0).unwrap();
        assert!((m.degradation - std::f64::consts::LN_2 / 2.0).abs() < 1e-15);
        assert!((m.half_life().unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn validation_is_idempotent() {
        let once = validate(&raw()).unwrap();
        let twice = validate(&once.to_raw()).unwrap();
        assert_eq!(once, twice);
        let reparsed = ExperimentConfig::from_json(&once.to_json()).unwrap();
        assert_eq!(once, reparsed);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"medium": {"D_um2_per_s": 80, "bogus": 1},
            "receiver": {"kind": "passive", "r_r_um": 5},
            "deployment": {"lambda_per_um3": 1e-4, "R_max_um": 50},
            "protocol": {"N_tx": 1, "T_b_s": 0.1}}"#;
        assert!(matches!(ExperimentConfig::from_json(text), Err(Error::Json(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn power_of_ten_conversion_within_one_ulp(mantissa in 1u32..10_000, exp in -14i32..-8) {
                let si = f64::from(mantissa) * 10f64.powi(exp);
                let mut r = raw();
                r.medium.d_m2_per_s = Some(si);
                let got = validate(&r).unwrap().medium.diffusion;
                let want = si * 1e12;
                prop_assert!((got - want).abs() <= want * f64::EPSILON);
            }

            #[test]
            fn validate_round_trips(d in 1.0f64..2000.0, kd in 0.0f64..5.0, rr in 0.5f64..20.0,
                                    lam in 1e-7f64..1e-2, n in 1u64..100_000, p1 in 0.0f64..1.0) {
                let mut r = raw();
                r.medium = RawMedium { d_m2_per_s: None, d_um2_per_s: Some(d), k_d_per_s: kd };
                r.receiver.r_r_um = rr;
                r.deployment = RawDeployment { lambda_per_um3: lam, r_max_um: rr * 10.0 };
                r.protocol.n_tx = n;
                r.protocol.p1 = Some(p1);
                let once = validate(&r).unwrap();
                prop_assert_eq!(validate(&once.to_raw()).unwrap(), once);
            }
        }
    }
}
