//! Training data from the slip plant.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::plant::{rk4_step, sample_control, sample_state, Control, Limits, PlantParams, State, N_INPUT, N_STATE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataGenConfig {
    pub trajectories: usize,
    pub steps: usize,
    pub ts: f64,
    pub seed: u64,
    /// `μ` is drawn once per trajectory from this interval.
    pub mu_range: [f64; 2],
    pub kappa: f64,
    /// Half-width of the square position workspace (m).
    pub workspace: f64,
}

impl Default for DataGenConfig {
    fn default() -> Self {
        DataGenConfig {
            trajectories: 2000,
            steps: 40,
            ts: 0.05,
            seed: 1,
            mu_range: [0.97, 0.99],
            kappa: 0.94,
            workspace: 10.0,
        }
    }
}

impl DataGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trajectories == 0 || self.steps == 0 {
            return Err(Error::invalid("data generation needs at least one trajectory and one step"));
        }
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(Error::invalid(format!("sampling time must be positive, got {}", self.ts)));
        }
        let [lo, hi] = self.mu_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.5) || !(self.kappa > 0.0 && self.kappa <= 1.5) {
            return Err(Error::invalid("slip parameters out of range"));
        }
        if !(self.workspace > 0.0 && self.workspace.is_finite()) {
            return Err(Error::invalid("workspace must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub ts: f64,
    pub trajectories: usize,
    pub steps: usize,
    pub seed: u64,
    pub mu_range: [f64; 2],
    pub kappa: f64,
    pub workspace: f64,
    pub geometry: PlantParams,
    pub tool_version: String,
    pub config_hash: Option<String>,
}

/// Trajectories of the slip plant, stored trajectory by trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    /// `μ` of each trajectory.
    pub mu: Vec<f64>,
    /// `steps + 1` states per trajectory.
    pub states: Vec<State>,
    /// `steps` inputs per trajectory.
    pub controls: Vec<Control>,
}

impl Dataset {
    pub fn trajectories(&self) -> usize {
        self.mu.len()
    }

    pub fn steps(&self) -> usize {
        self.meta.steps
    }

    /// Number of transitions `(x_k, u_k, x_{k+1})`.
    pub fn len(&self) -> usize {
        self.trajectories() * self.steps()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn trajectory(&self, i: usize) -> (&[State], &[Control]) {
        let s = self.steps();
        (&self.states[i * (s + 1)..(i + 1) * (s + 1)], &self.controls[i * s..(i + 1) * s])
    }

    pub fn transitions(&self) -> impl Iterator<Item = (State, Control, State)> + '_ {
        (0..self.trajectories()).flat_map(move |i| {
            let (xs, us) = self.trajectory(i);
            us.iter().enumerate().map(move |(k, u)| (xs[k], *u, xs[k + 1]))
        })
    }

    /// Trajectories `range` as a new dataset.
    pub fn subset(&self, range: std::ops::Range<usize>) -> Dataset {
        let s = self.steps();
        Dataset {
            meta: DatasetMeta {
                trajectories: range.len(),
                ..self.meta.clone()
            },
            mu: self.mu[range.clone()].to_vec(),
            states: self.states[range.start * (s + 1)..range.end * (s + 1)].to_vec(),
            controls: self.controls[range.start * s..range.end * s].to_vec(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut payload = Vec::with_capacity(self.trajectories() * (1 + (self.steps() + 1) * N_STATE + self.steps() * N_INPUT));
        for i in 0..self.trajectories() {
            let (xs, us) = self.trajectory(i);
            payload.push(self.mu[i]);
            for x in xs {
                payload.extend(x.to_array());
            }
            for u in us {
                payload.extend(u.to_array());
            }
        }
        container::write_file(path, &FileHeader::new(&self.meta), &payload)
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let (h, payload): (FileHeader, Vec<f64>) = container::read_file(path)?;
        let bad = |reason: &str| Error::ModelFormat {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if h.kind != "dataset" {
            return Err(bad("not a dataset file"));
        }
        let meta = h.meta;
        let per = 1 + (meta.steps + 1) * N_STATE + meta.steps * N_INPUT;
        if payload.len() != per * meta.trajectories {
            return Err(bad("payload size does not match the declared dimensions"));
        }
        let mut mu = Vec::with_capacity(meta.trajectories);
        let mut states = Vec::with_capacity(meta.trajectories * (meta.steps + 1));
        let mut controls = Vec::with_capacity(meta.trajectories * meta.steps);
        for chunk in payload.chunks_exact(per) {
            mu.push(chunk[0]);
            let (xs, us) = chunk[1..].split_at((meta.steps + 1) * N_STATE);
            states.extend(xs.chunks_exact(N_STATE).map(State::from_slice));
            controls.extend(us.chunks_exact(N_INPUT).map(Control::from_slice));
        }
        Ok(Dataset {
            meta,
            mu,
            states,
            controls,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileHeader {
    kind: String,
    meta: DatasetMeta,
}

impl FileHeader {
    fn new(meta: &DatasetMeta) -> Self {
        FileHeader {
            kind: "dataset".into(),
            meta: meta.clone(),
        }
    }
}

/// Simulates `cfg.trajectories` random trajectories. Trajectory `i` draws from
/// its own random stream, so the result does not depend on the thread count.
pub fn generate_dataset(cfg: &DataGenConfig, geometry: &PlantParams, limits: &Limits, config_hash: Option<&str>) -> Result<Dataset> {
    cfg.validate()?;
    geometry.validate()?;
    limits.validate()?;
    let trajs: Vec<(f64, Vec<State>, Vec<Control>)> = (0..cfg.trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let mu = rng.gen_range(cfg.mu_range[0]..=cfg.mu_range[1]);
            let p = geometry.with_slip(mu, cfg.kappa);
            let mut x = sample_state(&mut rng, limits, cfg.workspace);
            let mut xs = Vec::with_capacity(cfg.steps + 1);
            let mut us = Vec::with_capacity(cfg.steps);
            xs.push(x);
            for _ in 0..cfg.steps {
                let u = sample_control(&mut rng, limits);
                x = rk4_step(&x, &u, &p, cfg.ts);
                us.push(u);
                xs.push(x);
            }
            (mu, xs, us)
        })
        .collect();

    let mut ds = Dataset {
        meta: DatasetMeta {
            ts: cfg.ts,
            trajectories: cfg.trajectories,
            steps: cfg.steps,
            seed: cfg.seed,
            mu_range: cfg.mu_range,
            kappa: cfg.kappa,
            workspace: cfg.workspace,
            geometry: geometry.nominal(),
            tool_version: crate::TOOL_VERSION.into(),
            config_hash: config_hash.map(str::to_owned),
        },
        mu: Vec::with_capacity(cfg.trajectories),
        states: Vec::with_capacity(cfg.trajectories * (cfg.steps + 1)),
        controls: Vec::with_capacity(cfg.trajectories * cfg.steps),
    };
    for (mu, xs, us) in trajs {
        ds.mu.push(mu);
        ds.states.extend(xs);
        ds.controls.extend(us);
    }
    Ok(ds)
}
