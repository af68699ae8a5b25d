//! The run configuration: one JSON document covering every pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bilinear::OpenLoopConfig;
use crate::edmd::DataGenConfig;
use crate::error::{Error, Result};
use crate::lifting::{ProbeConfig, SamplingBox};
use crate::mpc::{ClosedLoopConfig, MpcConfig};
use crate::plant::{Limits, PlantParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LiftingConfig {
    /// Highest derivative order kept in the basis.
    pub rho: usize,
    pub probe_points: usize,
    pub probe_seed: u64,
}

impl Default for LiftingConfig {
    fn default() -> Self {
        let p = ProbeConfig::new(SamplingBox::tractor_trailer_states(&Limits::default()));
        LiftingConfig {
            rho: 2,
            probe_points: p.points,
            probe_seed: p.seed,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EdmdConfig {
    /// Absolute ridge; `null` selects the trace-relative default.
    pub ridge: Option<f64>,
    /// Held-out trajectories for the validation report.
    pub validation_trajectories: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingConfig {
    /// Built-in reference profile name (`parking`, `straight`).
    pub reference: String,
    /// Spacing of the nodes the reference is interpolated between (s).
    pub coarse_dt: f64,
    pub closed_loop: ClosedLoopConfig,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        TrackingConfig {
            reference: "parking".into(),
            coarse_dt: 0.5,
            closed_loop: ClosedLoopConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Vehicle geometry; slip is set per experiment, so `mu` and `kappa`
    /// must stay 1 here.
    pub plant: PlantParams,
    pub limits: Limits,
    pub data: DataGenConfig,
    pub lifting: LiftingConfig,
    pub edmd: EdmdConfig,
    pub openloop: OpenLoopConfig,
    pub mpc: MpcConfig,
    pub tracking: TrackingConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            plant: PlantParams::default(),
            limits: Limits::default(),
            data: DataGenConfig::default(),
            lifting: LiftingConfig::default(),
            edmd: EdmdConfig {
                ridge: None,
                validation_trajectories: 200,
            },
            openloop: OpenLoopConfig::default(),
            mpc: MpcConfig::default(),
            tracking: TrackingConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Replaces the data seed and derives the evaluation seed from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.seed = seed;
        self.openloop.seed = seed.wrapping_add(1);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        if self.plant.mu != 1.0 || self.plant.kappa != 1.0 {
            return Err(Error::Config(
                "plant.mu and plant.kappa must be 1; set slip under data, openloop or tracking".into(),
            ));
        }
        self.limits.validate()?;
        self.data.validate()?;
        self.mpc.validate()?;
        if (self.data.ts - self.mpc.ts).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "data.ts = {} and mpc.ts = {} must agree",
                self.data.ts, self.mpc.ts
            )));
        }
        if self.mpc.limits != self.limits {
            return Err(Error::Config("mpc.limits must equal limits".into()));
        }
        if self.lifting.probe_points < 2 {
            return Err(Error::Config("lifting.probe_points must be at least 2".into()));
        }
        if self.edmd.ridge.is_some_and(|r| !(r >= 0.0 && r.is_finite())) {
            return Err(Error::Config("edmd.ridge must be finite and non-negative".into()));
        }
        if self.edmd.validation_trajectories == 0 {
            return Err(Error::Config("edmd.validation_trajectories must be positive".into()));
        }
        if !(self.tracking.coarse_dt > self.mpc.ts) {
            return Err(Error::Config("tracking.coarse_dt must exceed the sampling time".into()));
        }
        Ok(())
    }

    pub fn probe(&self) -> ProbeConfig {
        let mut p = ProbeConfig::new(SamplingBox::tractor_trailer_states(&self.limits));
        p.points = self.lifting.probe_points;
        p.seed = self.lifting.probe_seed;
        p
    }

    /// First 16 hex digits of the SHA-256 of the compact JSON form, with the
    /// output directory left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    /// `kbmpc <version> config <hash>`, the provenance line of emitted files.
    pub fn provenance(&self) -> String {
        format!("kbmpc {} config {}", crate::TOOL_VERSION, self.hash())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
