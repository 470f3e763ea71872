//! Run configuration: everything a command needs, so that a run is a pure
//! function of its configuration. The SHA-256 digest of the canonical JSON
//! (output directory excluded) tags every artifact.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chaos::Region;
use crate::error::{invalid, Error, Result};
use crate::field::{admissible_schedule, build_ladder, GridSpec, ShellLadder};
use crate::kernels::{DecayingPart, KernelSpec, MollifierKind, Remainder};
use crate::spectral::{check_positive_definite, standard_grid, Certificate, SpectralProfile};

/// Largest configuration document accepted, in bytes.
pub const MAX_CONFIG_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub dimension: usize,
    pub lambda2: f64,
    /// Integral scale `R`.
    pub scale: f64,
    #[serde(default = "zero")]
    pub remainder: Remainder,
}

fn zero() -> Remainder {
    Remainder::Zero
}

/// Grid without its dimension, which comes from the kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    pub length: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Vec<f64>>,
}

/// Either an explicit decreasing list, or admissible halving from `first`
/// (default `R / 8`) down to the grid resolution, optionally capped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilons: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shells: Option<usize>,
    /// Extra mollifier kinds whose resolution limit the schedule must meet.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub also_resolve: Vec<MollifierKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZetaConfig {
    pub p: Vec<f64>,
    /// Block sides; default halving from `R / 4`, at most five, none below eight cells.
    pub scales: Option<Vec<f64>>,
}

impl Default for ZetaConfig {
    fn default() -> Self {
        Self {
            p: vec![0.5, 1.0, 2.0, 3.0],
            scales: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScaleInvarianceConfig {
    pub c: f64,
    /// Cube side; default half the largest admissible side.
    pub side: Option<f64>,
}

impl Default for ScaleInvarianceConfig {
    fn default() -> Self {
        Self { c: 0.5, side: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegeneracyConfig {
    pub alpha: f64,
    /// Default `[0, 1]^d`.
    pub region: Option<Region>,
    /// One row per value; default the kernel's own `lambda2`.
    pub lambda2: Option<Vec<f64>>,
}

impl Default for DegeneracyConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            region: None,
            lambda2: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DissipationConfig {
    /// Ball radii; default `R * 2^-k` for `k = 1..4`.
    pub radii: Option<Vec<f64>>,
    pub mean: f64,
    /// Ball centers per axis.
    pub per_axis: usize,
}

impl Default for DissipationConfig {
    fn default() -> Self {
        Self {
            radii: None,
            mean: 1.0,
            per_axis: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MrwConfig {
    pub times: Vec<f64>,
    pub substeps: usize,
}

impl Default for MrwConfig {
    fn default() -> Self {
        Self {
            times: vec![0.25, 0.5, 1.0],
            substeps: 1024,
        }
    }
}

/// Parameters of the `estimate` reports.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateConfig {
    pub zeta: ZetaConfig,
    pub scale_invariance: ScaleInvarianceConfig,
    pub degeneracy: DegeneracyConfig,
    pub dissipation: DissipationConfig,
    pub mrw: MrwConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kernel: KernelConfig,
    pub mollifier: MollifierKind,
    pub grid: GridConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default = "default_replicas")]
    pub replicas: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default)]
    pub estimate: EstimateConfig,
}

fn default_replicas() -> u32 {
    100
}

impl RunConfig {
    /// Parses and validates everything except the grid, which is checked
    /// after the positivity gate so that a `d = 4` kernel fails at the gate.
    pub fn from_json(text: &str) -> Result<Self> {
        if text.len() > MAX_CONFIG_BYTES {
            return invalid("configuration exceeds 1 MiB");
        }
        let c: Self = serde_json::from_str(text)?;
        c.kernel()?;
        if c.replicas == 0 {
            return invalid("replicas must be positive");
        }
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn kernel(&self) -> Result<KernelSpec> {
        let k = &self.kernel;
        KernelSpec::new(k.dimension, k.lambda2, k.scale, k.remainder.clone())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let d = self.kernel.dimension;
        let origin = self.grid.origin.clone().unwrap_or_else(|| vec![0.0; d]);
        GridSpec::with_origin(d, self.grid.n, self.grid.length, origin)
    }

    /// Hex SHA-256 of the canonical JSON with the output directory removed.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Resolved scale schedule.
    pub fn epsilons(&self) -> Result<Vec<f64>> {
        let s = &self.schedule;
        if let Some(e) = &s.epsilons {
            if s.first.is_some() || s.shells.is_some() {
                return invalid("give either an explicit schedule or first/shells, not both");
            }
            return Ok(e.clone());
        }
        let grid = self.grid()?;
        let mut kinds = vec![self.mollifier];
        kinds.extend(s.also_resolve.iter().copied());
        let first = s.first.unwrap_or(self.kernel.scale / 8.0);
        let mut eps = admissible_schedule(first, &grid, &kinds)?;
        if let Some(k) = s.shells {
            if k == 0 {
                return invalid("schedule needs at least one shell");
            }
            eps.truncate(k);
        }
        Ok(eps)
    }

    /// Spectral positivity gate, then the ladder.
    pub fn ladder(&self) -> Result<ShellLadder> {
        let kernel = self.kernel()?;
        positivity_gate(&kernel)?;
        let grid = self.grid()?;
        build_ladder(&kernel, self.mollifier, &self.epsilons()?, &grid)
    }
}

/// Certifies the kernel's spectrum nonnegative on the standard grid. A
/// constant tail of `g` is a point mass at the origin and only needs a sign.
pub fn positivity_gate(kernel: &KernelSpec) -> Result<SpectralProfile> {
    let atom = kernel.remainder_tail();
    if atom < 0.0 {
        return Err(Error::NotPositiveDefinite(format!("negative spectral atom {atom} from the tail of g")));
    }
    let body = DecayingPart(kernel);
    let profile = check_positive_definite(&body, kernel.dimension, &standard_grid(kernel.scale))?;
    match profile.certificate {
        Certificate::NonnegativeOnGrid => Ok(profile),
        c => Err(Error::NotPositiveDefinite(format!(
            "d = {} kernel certified {c:?}",
            kernel.dimension
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "kernel": {"dimension": 1, "lambda2": 0.5, "scale": 1.0},
        "mollifier": "gaussian",
        "grid": {"n": 1024, "length": 4.0},
        "replicas": 1,
        "seed": 7
    }"#;

    #[test]
    fn digest_ignores_output_and_tracks_content() {
        let a = RunConfig::from_json(MINIMAL).unwrap();
        let mut b = a.clone();
        b.output = Some("elsewhere".into());
        assert_eq!(a.digest(), b.digest());
        b.seed = 8;
        assert_ne!(a.digest(), b.digest());
        let back = RunConfig::from_json(&a.to_json()).unwrap();
        assert_eq!(back.digest(), a.digest());
    }

    #[test]
    fn validation_and_gate() {
        let critical = MINIMAL.replace("\"lambda2\": 0.5", "\"lambda2\": 2.0");
        assert!(matches!(RunConfig::from_json(&critical), Err(Error::Invalid(_))));
        let four = MINIMAL.replace("\"dimension\": 1", "\"dimension\": 4");
        let c = RunConfig::from_json(&four).unwrap();
        assert!(matches!(c.ladder(), Err(Error::NotPositiveDefinite(_))));
        assert!(RunConfig::from_json(&MINIMAL.replace("\"seed\"", "\"sede\"")).is_err());
        let shifted = |v: f64| {
            MINIMAL.replace("\"scale\": 1.0}", &format!("\"scale\": 1.0, \"remainder\": {{\"kind\": \"constant\", \"value\": {v}}}}}"))
        };
        assert!(RunConfig::from_json(&shifted(0.1)).unwrap().ladder().is_ok());
        let negative = RunConfig::from_json(&shifted(-0.1)).unwrap();
        assert!(matches!(negative.ladder(), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn default_schedule_halves_from_an_eighth_of_r() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        let e = c.epsilons().unwrap();
        assert_eq!(e[0], 0.125);
        assert!(e.windows(2).all(|w| (w[1] / w[0] - 0.5).abs() < 1e-15));
        assert!(c.ladder().is_ok());
    }
}
