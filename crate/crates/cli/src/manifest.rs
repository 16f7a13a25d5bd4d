//! Versioned experiment manifests. Unknown keys are hard errors so that a
//! run directory always reproduces exactly what was asked.

use serde::{Deserialize, Serialize};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub version: u32,
    pub command: String,
    /// Deformation box half-width (the embedding scale is 1/n).
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples: u64,
    /// Uniform mass for deform-massive / massive environments.
    #[serde(default)]
    pub mass: f64,
    /// Uniform standard deviation for the stochastic flows.
    #[serde(default = "default_one")]
    pub sigma: f64,
    /// Gaussian scale for the iid environment of fk-window.
    #[serde(default)]
    pub t_shift: f64,
    /// Environment kind for fk-window: critical | massive | iid | shifted.
    #[serde(default = "default_environment")]
    pub environment: String,
    /// Uniform angle shift for the shifted environment.
    #[serde(default)]
    pub shift: f64,
    #[serde(default)]
    pub horizon: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_one_usize")]
    pub store_every: usize,
    #[serde(default = "default_one_usize")]
    pub refresh_every: usize,
    #[serde(default = "default_tol")]
    pub residual_tol: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Number of independent stochastic runs (seeds).
    #[serde(default = "default_one_usize")]
    pub runs: usize,
    /// Box sizes for fk-window.
    #[serde(default)]
    pub sizes: Vec<usize>,
    /// Surrogate half-width and disk radii for energy-profile.
    #[serde(default = "default_surrogate")]
    pub surrogate_halfwidth: usize,
    #[serde(default)]
    pub radii: Vec<f64>,
    /// Snapshot path consumed by `validate`.
    #[serde(default)]
    pub snapshot: String,
}

fn default_samples() -> u64 {
    10_000
}
fn default_environment() -> String {
    "critical".into()
}
fn default_one() -> f64 {
    1.0
}
fn default_one_usize() -> usize {
    1
}
fn default_steps() -> usize {
    64
}
fn default_tol() -> f64 {
    1e-6
}
fn default_kappa() -> f64 {
    0.9
}
fn default_surrogate() -> usize {
    96
}

impl ExperimentManifest {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let m: ExperimentManifest = toml::from_str(text)?;
        if m.version != MANIFEST_VERSION {
            anyhow::bail!("unsupported manifest version {}", m.version);
        }
        if m.n == 0 {
            anyhow::bail!("n must be positive");
        }
        Ok(m)
    }

    pub fn emit(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_identity() {
        let m = ExperimentManifest {
            version: 1,
            command: "deform-massive".into(),
            n: 8,
            seed: 7,
            samples: 100,
            mass: 0.25,
            sigma: 1.0,
            t_shift: 0.0,
            environment: "critical".into(),
            shift: 0.0,
            horizon: 0.125,
            steps: 64,
            store_every: 8,
            refresh_every: 1,
            residual_tol: 1e-6,
            kappa: 0.9,
            runs: 1,
            sizes: vec![16, 32],
            surrogate_halfwidth: 96,
            radii: vec![8.0, 24.0],
            snapshot: String::new(),
        };
        let text = m.emit();
        let m2 = ExperimentManifest::parse(&text).unwrap();
        assert_eq!(m, m2);
        assert_eq!(text, m2.emit());
    }

    #[test]
    fn unknown_keys_are_errors() {
        let text = "version = 1\ncommand = \"validate\"\nn = 4\nbogus = 3\n";
        assert!(ExperimentManifest::parse(text).is_err());
    }

    #[test]
    fn bad_version_rejected() {
        let text = "version = 9\ncommand = \"validate\"\nn = 4\n";
        assert!(ExperimentManifest::parse(text).is_err());
    }
}
