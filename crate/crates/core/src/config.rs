//! JSON experiment configuration and its translation into library objects.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::advect::{Characteristics, Diagnostic, EntropyFunction, InverseRoute};
use crate::circulation::{KelvinData, Loop};
use crate::error::Error;
use crate::fields::{catalog_field, FieldJet, FieldKind};
use crate::flow::{make_driver, BrownianDriver, ChannelSpec, FlowModel, Scheme};
use crate::kiw::{Convention, Diffusion, Modulation, SemimartingaleForm};

/// A catalog reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldRef {
    pub name: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub drift: FieldRef,
    #[serde(default)]
    pub noise: Vec<FieldRef>,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
}

fn default_scheme() -> Scheme {
    Scheme::StratonovichHeun
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    pub form: FieldRef,
    pub channel: usize,
    #[serde(default)]
    pub modulation: Option<Modulation>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KiwMode {
    #[default]
    Residual,
    Duality,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KFormConfig {
    /// Checked against the degree of `k0` when given.
    #[serde(default)]
    pub degree: Option<usize>,
    pub k0: FieldRef,
    /// `G`; zero when absent.
    #[serde(default)]
    pub drift: Option<FieldRef>,
    #[serde(default)]
    pub diffusions: Vec<DiffusionConfig>,
    pub convention: Convention,
    #[serde(default)]
    pub mode: KiwMode,
    pub seeds: Vec<Vec<f64>>,
    #[serde(default = "default_test_seed")]
    pub test_seed: u64,
}

fn default_test_seed() -> u64 {
    7
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvectConfig {
    #[serde(default)]
    pub density: Option<FieldRef>,
    #[serde(default)]
    pub scalar: Option<FieldRef>,
    #[serde(default)]
    pub entropy: EntropyFunction,
    #[serde(default)]
    pub magnetic: Option<FieldRef>,
    #[serde(default)]
    pub route: InverseRoute,
    #[serde(default = "default_grid_nodes")]
    pub grid_nodes: usize,
    pub diagnostics: Vec<Diagnostic>,
    /// Grid steps at which diagnostics are recorded; default `0, L/4, .., L`.
    #[serde(default)]
    pub checkpoints: Option<Vec<usize>>,
    /// Points for the pointwise checks of the `diagnostics` command.
    #[serde(default)]
    pub probes: Vec<Vec<f64>>,
}

fn default_grid_nodes() -> usize {
    crate::advect::DEFAULT_NODES_PER_AXIS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    pub center: Vec<f64>,
    pub radius: f64,
    pub nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KelvinConfig {
    pub v0: FieldRef,
    #[serde(default)]
    pub forcing: Option<FieldRef>,
    #[serde(rename = "loop")]
    pub loop_: LoopConfig,
    #[serde(default)]
    pub route: InverseRoute,
    #[serde(default)]
    pub checkpoints: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiamondConfig {
    pub b: FieldRef,
    pub a: FieldRef,
    pub u: FieldRef,
    #[serde(default = "default_grid_nodes")]
    pub grid_nodes: usize,
}

/// Acceptance thresholds; absent entries are not checked.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default)]
    pub max_residual: Option<f64>,
    #[serde(default)]
    pub min_slope: Option<f64>,
    #[serde(default)]
    pub max_relative_drift: Option<f64>,
    #[serde(default)]
    pub max_defect: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub t_final: f64,
    pub dt: f64,
    #[serde(default = "default_levels")]
    pub levels: u32,
    pub n_paths: usize,
    pub seed: u64,
    pub flow: FlowConfig,
    /// Channel map; default makes all K and flow channels independent.
    #[serde(default)]
    pub channels: Option<ChannelSpec>,
    #[serde(default)]
    pub kform: Option<KFormConfig>,
    #[serde(default)]
    pub advect: Option<AdvectConfig>,
    #[serde(default)]
    pub kelvin: Option<KelvinConfig>,
    #[serde(default)]
    pub diamond: Option<DiamondConfig>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Seed points whose flow is written to `flow.bin` on every run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dump_flow: Option<Vec<Vec<f64>>>,
}

fn default_levels() -> u32 {
    1
}

/// A configuration problem, naming the offending key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(key: &str, e: impl std::fmt::Display) -> ConfigError {
    ConfigError(format!("{key}: {e}"))
}

pub fn field(key: &str, r: &FieldRef, n: usize) -> Result<FieldJet, ConfigError> {
    catalog_field(&r.name, &r.params, n).map_err(|e| bad(key, e))
}

fn expect_kind(key: &str, f: &FieldJet, kind: FieldKind) -> Result<(), ConfigError> {
    if f.kind() != kind {
        return Err(bad(key, format!("expected a {kind:?} field, got {:?}", f.kind())));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self, ConfigError> {
        let c: Self = serde_json::from_slice(bytes).map_err(|e| ConfigError(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(1..=3).contains(&self.n) {
            return Err(bad("n", format!("dimension must be 1, 2 or 3, got {}", self.n)));
        }
        if self.levels == 0 {
            return Err(bad("levels", "at least one level required"));
        }
        if self.n_paths == 0 {
            return Err(bad("n_paths", "at least one path required"));
        }
        make_driver(self.seed, self.t_final, self.dt, 1, ChannelSpec::shared(0)).map_err(|e| bad("dt", e))?;
        self.model()?;
        self.channel_spec()?;
        if let Some(k) = &self.kform {
            self.semimartingale()?;
            for (i, s) in k.seeds.iter().enumerate() {
                if s.len() != self.n {
                    return Err(bad(&format!("kform.seeds[{i}]"), format!("expected {} coordinates", self.n)));
                }
            }
            if k.seeds.is_empty() {
                return Err(bad("kform.seeds", "at least one seed point required"));
            }
        }
        if let Some(a) = &self.advect {
            self.advect_fields()?;
            if a.grid_nodes == 0 {
                return Err(bad("advect.grid_nodes", "must be positive"));
            }
            for (i, p) in a.probes.iter().enumerate() {
                if p.len() != self.n {
                    return Err(bad(&format!("advect.probes[{i}]"), format!("expected {} coordinates", self.n)));
                }
            }
        }
        if self.kelvin.is_some() {
            self.kelvin_data()?;
            self.kelvin_loop()?;
        }
        if self.diamond.is_some() {
            self.diamond_fields()?;
        }
        if let Some(points) = &self.dump_flow {
            if points.is_empty() {
                return Err(bad("dump_flow", "at least one seed point required"));
            }
            for (i, p) in points.iter().enumerate() {
                if p.len() != self.n {
                    return Err(bad(&format!("dump_flow[{i}]"), format!("expected {} coordinates", self.n)));
                }
            }
        }
        Ok(())
    }

    pub fn model(&self) -> Result<FlowModel, ConfigError> {
        let drift = field("flow.drift", &self.flow.drift, self.n)?;
        let noise = self
            .flow
            .noise
            .iter()
            .enumerate()
            .map(|(j, r)| field(&format!("flow.noise[{j}]"), r, self.n))
            .collect::<Result<Vec<_>, _>>()?;
        FlowModel::new(drift, noise, self.flow.scheme).map_err(|e| bad("flow", e))
    }

    fn k_channel_count(&self) -> usize {
        self.kform.as_ref().map_or(0, |k| {
            k.diffusions
                .iter()
                .flat_map(|d| std::iter::once(d.channel).chain(d.modulation.map(|m| m.channel)))
                .map(|c| c + 1)
                .max()
                .unwrap_or(0)
        })
    }

    pub fn channel_spec(&self) -> Result<ChannelSpec, ConfigError> {
        let spec = match &self.channels {
            Some(s) => s.clone(),
            None => ChannelSpec::independent(self.k_channel_count(), self.flow.noise.len()),
        };
        if spec.flow_channels.len() < self.flow.noise.len() {
            return Err(bad("channels.flow_channels", "one channel per noise field required"));
        }
        if spec.k_channels.len() < self.k_channel_count() {
            return Err(bad("channels.k_channels", "fewer K channels than the diffusions use"));
        }
        Ok(spec)
    }

    /// Driver at the base step with the configured seed.
    pub fn driver(&self) -> Result<BrownianDriver, ConfigError> {
        make_driver(self.seed, self.t_final, self.dt, self.n_paths, self.channel_spec()?).map_err(|e| bad("dt", e))
    }

    pub fn semimartingale(&self) -> Result<SemimartingaleForm, ConfigError> {
        let k = self.kform.as_ref().ok_or_else(|| bad("kform", "section missing"))?;
        let k0 = field("kform.k0", &k.k0, self.n)?;
        let degree = k0.kind().degree().ok_or_else(|| bad("kform.k0", "not a scalar or k-form"))?;
        if let Some(d) = k.degree {
            if d != degree {
                return Err(bad("kform.degree", format!("{d} does not match k0 of degree {degree}")));
            }
        }
        let drift = match &k.drift {
            Some(r) => field("kform.drift", r, self.n)?,
            None => FieldJet::zero(k0.kind(), self.n),
        };
        let diffusions = k
            .diffusions
            .iter()
            .enumerate()
            .map(|(i, d)| {
                Ok(Diffusion {
                    form: field(&format!("kform.diffusions[{i}].form"), &d.form, self.n)?,
                    channel: d.channel,
                    modulation: d.modulation,
                })
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;
        SemimartingaleForm::new(k0, drift, diffusions, k.convention).map_err(|e| bad("kform", e))
    }

    pub fn characteristics(&self, route: InverseRoute) -> Result<Arc<Characteristics>, ConfigError> {
        Ok(Arc::new(Characteristics::new(self.model()?, Arc::new(self.driver()?), route)))
    }

    /// `(density, scalar, magnetic potential)` initial data.
    #[allow(clippy::type_complexity)]
    pub fn advect_fields(&self) -> Result<(Option<FieldJet>, Option<FieldJet>, Option<FieldJet>), ConfigError> {
        let a = self.advect.as_ref().ok_or_else(|| bad("advect", "section missing"))?;
        let get = |key: &str, r: &Option<FieldRef>| r.as_ref().map(|r| field(key, r, self.n)).transpose();
        let d = get("advect.density", &a.density)?;
        let s = get("advect.scalar", &a.scalar)?;
        let m = get("advect.magnetic", &a.magnetic)?;
        if let Some(s) = &s {
            expect_kind("advect.scalar", s, FieldKind::Scalar)?;
        }
        if let Some(m) = &m {
            expect_kind("advect.magnetic", m, FieldKind::KForm(1))?;
        }
        for (i, diag) in a.diagnostics.iter().enumerate() {
            let key = format!("advect.diagnostics[{i}]");
            let ok = match diag {
                Diagnostic::TotalMass => d.is_some(),
                Diagnostic::EntropyIntegral => d.is_some() && s.is_some(),
                Diagnostic::MagneticHelicity => m.is_some() && self.n == 3,
            };
            if !ok {
                return Err(bad(&key, format!("{} lacks its input fields", diag.name())));
            }
        }
        Ok((d, s, m))
    }

    pub fn kelvin_data(&self) -> Result<KelvinData, ConfigError> {
        let k = self.kelvin.as_ref().ok_or_else(|| bad("kelvin", "section missing"))?;
        let v0 = field("kelvin.v0", &k.v0, self.n)?;
        expect_kind("kelvin.v0", &v0, FieldKind::KForm(1))?;
        let forcing = match &k.forcing {
            Some(r) => {
                let f = field("kelvin.forcing", r, self.n)?;
                expect_kind("kelvin.forcing", &f, FieldKind::KForm(1))?;
                Some(f)
            }
            None => None,
        };
        KelvinData::new(v0, forcing).map_err(|e| bad("kelvin", e))
    }

    pub fn kelvin_loop(&self) -> Result<Loop, ConfigError> {
        let k = self.kelvin.as_ref().ok_or_else(|| bad("kelvin", "section missing"))?;
        if k.loop_.center.len() != self.n {
            return Err(bad("kelvin.loop.center", format!("expected {} coordinates", self.n)));
        }
        Loop::circle(&k.loop_.center, k.loop_.radius, k.loop_.nodes).map_err(|e| bad("kelvin.loop", e))
    }

    pub fn diamond_fields(&self) -> Result<(FieldJet, FieldJet, FieldJet), ConfigError> {
        let d = self.diamond.as_ref().ok_or_else(|| bad("diamond", "section missing"))?;
        Ok((
            field("diamond.b", &d.b, self.n)?,
            field("diamond.a", &d.a, self.n)?,
            field("diamond.u", &d.u, self.n)?,
        ))
    }
}

impl From<ConfigError> for Error {
    fn from(e: ConfigError) -> Self {
        Error::Invalid(e.0)
    }
}
