//! The pipeline stages behind the command-line subcommands. Every stage reads
//! its inputs from disk, writes its artifacts to an output directory and
//! stamps them with the tool version and the configuration hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bilinear::{
    evaluate_open_loop, predict, sample_rollout, write_open_loop_csv, BilinearModel, ErrorMetrics, PredictContext,
    Variant,
};
use crate::config::RunConfig;
use crate::edmd::{self, generate_dataset, DataGenConfig, Dataset, Validation};
use crate::error::{Error, Result};
use crate::lifting::{build_basis, LiftingBasis, ManifestEntry};
use crate::mpc::{
    closed_loop, BilinearPredictor, ControllerKind, NominalPredictor, Predictor, TimingSummary, TrackingSummary,
};
use crate::plant::{
    generate_reference, read_reference_csv, tractor_trailer_system, write_reference_csv, Output, Reference,
    ReferenceProfile,
};

pub const DATASET_FILE: &str = "dataset.bin";
pub const MODEL_FILE: &str = "model.bin";
pub const MANIFEST_FILE: &str = "basis_manifest.json";
pub const VALIDATION_FILE: &str = "validation.json";
pub const OPENLOOP_CSV: &str = "openloop.csv";
pub const OPENLOOP_JSON: &str = "openloop_summary.json";
pub const ROLLOUT_CSV: &str = "openloop_rollout.csv";
pub const REFERENCE_CSV: &str = "reference.csv";
pub const TRACKING_JSON: &str = "tracking_summary.json";
pub const TIMING_JSON: &str = "timing.json";
pub const SUMMARY_JSON: &str = "summary.json";

/// JSON body with the provenance fields in front.
#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    tool_version: &'a str,
    config_hash: String,
    #[serde(flatten)]
    body: &'a T,
}

fn write_json<T: Serialize>(path: &Path, cfg: &RunConfig, body: &T) -> Result<()> {
    let doc = Stamped {
        tool_version: crate::TOOL_VERSION,
        config_hash: cfg.hash(),
        body,
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn basis_for(cfg: &RunConfig) -> Result<LiftingBasis> {
    let sys = tractor_trailer_system(&cfg.plant.nominal());
    build_basis(&sys, cfg.lifting.rho, &cfg.probe())
}

/// Simulates the training set and writes it to `out/dataset.bin`.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    ensure_dir(out)?;
    let ds = generate_dataset(&cfg.data, &cfg.plant, &cfg.limits, Some(&cfg.hash()))?;
    let path = out.join(DATASET_FILE);
    ds.save(&path)?;
    log::info!("wrote {} transitions to {}", ds.len(), path.display());
    Ok(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifyReport {
    pub rho: usize,
    pub basis_size: usize,
    pub raw_candidates: usize,
    pub manifest_hash: String,
    pub ridge: f64,
    pub transitions: usize,
    pub validation: Validation,
}

#[derive(Serialize)]
struct ManifestDoc<'a> {
    rho: usize,
    manifest_hash: String,
    observables: &'a [ManifestEntry],
}

/// Held-out trajectories drawn from a seed disjoint from the training seed.
fn validation_config(cfg: &RunConfig) -> DataGenConfig {
    DataGenConfig {
        trajectories: cfg.edmd.validation_trajectories,
        seed: cfg.data.seed ^ 0x9E37_79B9_7F4A_7C15,
        ..cfg.data.clone()
    }
}

/// Fits the bilinear model on `dataset` and writes the model, the basis
/// manifest and a held-out validation report.
pub fn cmd_identify(cfg: &RunConfig, dataset: &Path, out: &Path) -> Result<IdentifyReport> {
    ensure_dir(out)?;
    let ds = Dataset::load(dataset)?;
    if (ds.meta.ts - cfg.data.ts).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "dataset sampling time {} differs from the configured {}",
            ds.meta.ts, cfg.data.ts
        )));
    }
    if ds.meta.geometry != cfg.plant.nominal() {
        return Err(Error::Config("dataset geometry differs from the configured plant".into()));
    }
    let basis = basis_for(cfg)?;
    let acc = edmd::accumulate(&ds, &basis)?;
    let ridge = acc.effective_ridge(cfg.edmd.ridge);
    let g = acc.solve(Some(ridge))?;
    let model = BilinearModel::from_blocks(&g, basis.n_u(), basis.n_y(), ds.meta.ts, basis.rho(), basis.manifest_hash())?;
    model.save(&out.join(MODEL_FILE), Some(&cfg.hash()))?;

    let manifest = basis.manifest();
    write_json(
        &out.join(MANIFEST_FILE),
        cfg,
        &ManifestDoc {
            rho: basis.rho(),
            manifest_hash: basis.manifest_hash(),
            observables: &manifest,
        },
    )?;

    let held_out = generate_dataset(&validation_config(cfg), &cfg.plant, &cfg.limits, Some(&cfg.hash()))?;
    let report = IdentifyReport {
        rho: basis.rho(),
        basis_size: basis.n(),
        raw_candidates: basis.raw_count(),
        manifest_hash: basis.manifest_hash(),
        ridge,
        transitions: ds.len(),
        validation: edmd::validate(&model, &basis, &held_out)?,
    };
    write_json(&out.join(VALIDATION_FILE), cfg, &report)?;
    log::info!(
        "basis N = {}, held-out one-step position RMS {:.3e} m",
        report.basis_size,
        report.validation.one_step_rms_position
    );
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantErrors {
    pub variant: Variant,
    #[serde(flatten)]
    pub errors: ErrorMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopSummary {
    pub rollouts: usize,
    pub steps: usize,
    pub control_scale: f64,
    pub mean: Vec<VariantErrors>,
    /// Every channel ranks KBM < LKBM < min(NM, LLNM). `None` unless all four
    /// variants were evaluated.
    pub ordering_holds: Option<bool>,
}

impl OpenLoopSummary {
    pub fn of(&self, v: Variant) -> Option<&ErrorMetrics> {
        self.mean.iter().find(|e| e.variant == v).map(|e| &e.errors)
    }
}

fn ordering_holds(s: &OpenLoopSummary) -> Option<bool> {
    let (kbm, lkbm, nm, llnm) = (
        s.of(Variant::Kbm)?.as_array(),
        s.of(Variant::Lkbm)?.as_array(),
        s.of(Variant::Nm)?.as_array(),
        s.of(Variant::Llnm)?.as_array(),
    );
    Some((0..4).all(|c| kbm[c] < lkbm[c] && lkbm[c] < nm[c].min(llnm[c])))
}

fn load_model(cfg: &RunConfig, model: &Path) -> Result<(LiftingBasis, BilinearModel)> {
    let basis = basis_for(cfg)?;
    let m = BilinearModel::load_for_basis(model, &basis)?;
    if (m.ts - cfg.data.ts).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "model sampling time {} differs from the configured {}",
            m.ts, cfg.data.ts
        )));
    }
    Ok((basis, m))
}

/// Evaluates the open-loop predictors on random rollouts. With
/// `debug_rollout`, also writes the outputs of every variant on that rollout.
pub fn cmd_eval_openloop(
    cfg: &RunConfig,
    model: &Path,
    out: &Path,
    variants: &[Variant],
    debug_rollout: Option<usize>,
) -> Result<OpenLoopSummary> {
    ensure_dir(out)?;
    if variants.is_empty() {
        return Err(Error::invalid("no predictor variants selected"));
    }
    let (basis, model) = load_model(cfg, model)?;
    let ctx = PredictContext::new(&model, &basis, &cfg.plant)?;
    let report = evaluate_open_loop(&ctx, &cfg.openloop, &cfg.limits, variants)?;
    write_open_loop_csv(&report, &out.join(OPENLOOP_CSV), Some(&cfg.provenance()))?;
    let mut summary = OpenLoopSummary {
        rollouts: report.rollouts,
        steps: report.steps,
        control_scale: cfg.openloop.control_scale,
        mean: report
            .mean
            .iter()
            .map(|(v, e)| VariantErrors {
                variant: *v,
                errors: *e,
            })
            .collect(),
        ordering_holds: None,
    };
    summary.ordering_holds = ordering_holds(&summary);
    write_json(&out.join(OPENLOOP_JSON), cfg, &summary)?;

    if let Some(r) = debug_rollout {
        let roll = sample_rollout(&cfg.openloop, &cfg.limits, ctx.nominal(), model.ts, r);
        let mut text = format!("# {}\n", cfg.provenance());
        text.push_str("source,step");
        for n in Output::NAMES {
            text.push(',');
            text.push_str(n);
        }
        text.push('\n');
        let mut push = |source: &str, k: usize, y: &Output| {
            text.push_str(&format!("{source},{k}"));
            for v in y.0 {
                text.push_str(&format!(",{v}"));
            }
            text.push('\n');
        };
        for (k, y) in roll.truth.iter().enumerate() {
            push("truth", k + 1, y);
        }
        for v in variants {
            for (k, y) in predict(*v, &roll.init, &roll.controls, &ctx)?.iter().enumerate() {
                push(v.name(), k, y);
            }
        }
        let path = out.join(ROLLOUT_CSV);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// LMPC minus K-BMPC mean error per channel.
    pub delta_e_x0y0: f64,
    pub delta_e_x1y1: f64,
    pub delta_e_theta0: f64,
    pub delta_e_theta1: f64,
    /// `cost(LMPC) / cost(K-BMPC) − 1`.
    pub relative_cost_increase: f64,
    pub kbmpc_better_trailer: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackReport {
    pub reference: String,
    pub steps: usize,
    pub runs: Vec<TrackingSummary>,
    pub comparison: Option<Comparison>,
}

impl TrackReport {
    pub fn run(&self, kind: ControllerKind) -> Option<&TrackingSummary> {
        self.runs.iter().find(|r| r.controller == kind)
    }
}

/// The configured built-in reference, or the CSV at `path`.
pub fn load_reference(cfg: &RunConfig, path: Option<&Path>) -> Result<(String, Reference)> {
    match path {
        Some(p) => Ok((p.display().to_string(), read_reference_csv(p)?)),
        None => {
            let name = &cfg.tracking.reference;
            let profile = ReferenceProfile::by_name(name)
                .ok_or_else(|| Error::Config(format!("unknown reference profile {name:?} (parking, straight)")))?;
            let r = generate_reference(&profile, &cfg.plant, cfg.tracking.coarse_dt, cfg.mpc.ts)?;
            Ok((name.clone(), r))
        }
    }
}

/// Runs the selected controllers on the reference against the slip plant.
/// Writes one log CSV per controller, the reference, the summary and the
/// (non-reproducible) timing file. `model` is needed only for K-BMPC.
pub fn cmd_track(
    cfg: &RunConfig,
    model: Option<&Path>,
    reference: Option<&Path>,
    controllers: &[ControllerKind],
    out: &Path,
) -> Result<(TrackReport, Vec<TimingSummary>)> {
    ensure_dir(out)?;
    if controllers.is_empty() {
        return Err(Error::invalid("no controller selected"));
    }
    let (name, reference) = load_reference(cfg, reference)?;
    write_reference_csv(&reference, &out.join(REFERENCE_CSV), Some(&cfg.provenance()))?;
    let loaded = match (controllers.contains(&ControllerKind::Kbmpc), model) {
        (true, Some(p)) => Some(load_model(cfg, p)?),
        (true, None) => return Err(Error::invalid("K-BMPC needs a model file")),
        (false, _) => None,
    };

    let mut runs = Vec::new();
    let mut timings = Vec::new();
    for kind in controllers {
        let log = match kind {
            ControllerKind::Kbmpc => {
                let (basis, model) = loaded.as_ref().expect("loaded above");
                let pred = BilinearPredictor::new(model, basis)?;
                run_closed_loop(cfg, *kind, &pred, &reference)?
            }
            ControllerKind::Lmpc => {
                let pred = NominalPredictor::new(&cfg.plant, cfg.mpc.ts)?;
                run_closed_loop(cfg, *kind, &pred, &reference)?
            }
        };
        log.write_csv(&out.join(format!("tracking_{kind}.csv")), Some(&cfg.provenance()))?;
        let s = log.summary(&cfg.mpc)?;
        log::info!(
            "{kind}: mean trailer position error {:.4} m, mean cost {:.4}",
            s.mean_errors.e_x1y1,
            s.mean_cost
        );
        runs.push(s);
        timings.push(log.timing());
    }
    let comparison = match (
        runs.iter().find(|r| r.controller == ControllerKind::Kbmpc),
        runs.iter().find(|r| r.controller == ControllerKind::Lmpc),
    ) {
        (Some(k), Some(l)) => Some(Comparison {
            delta_e_x0y0: l.mean_errors.e_x0y0 - k.mean_errors.e_x0y0,
            delta_e_x1y1: l.mean_errors.e_x1y1 - k.mean_errors.e_x1y1,
            delta_e_theta0: l.mean_errors.e_theta0 - k.mean_errors.e_theta0,
            delta_e_theta1: l.mean_errors.e_theta1 - k.mean_errors.e_theta1,
            relative_cost_increase: l.mean_cost / k.mean_cost - 1.0,
            kbmpc_better_trailer: k.mean_errors.e_x1y1 < l.mean_errors.e_x1y1,
        }),
        _ => None,
    };
    let report = TrackReport {
        reference: name,
        steps: reference.len() - 1,
        runs,
        comparison,
    };
    write_json(&out.join(TRACKING_JSON), cfg, &report)?;
    write_json(&out.join(TIMING_JSON), cfg, &TimingDoc { runs: &timings })?;
    Ok((report, timings))
}

#[derive(Serialize)]
struct TimingDoc<'a> {
    runs: &'a [TimingSummary],
}

fn run_closed_loop(
    cfg: &RunConfig,
    kind: ControllerKind,
    pred: &dyn Predictor,
    reference: &Reference,
) -> Result<crate::mpc::TrackingLog> {
    closed_loop(kind, pred, &cfg.plant, reference, &cfg.mpc, &cfg.tracking.closed_loop)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoSummary {
    pub identify: IdentifyReport,
    pub openloop: OpenLoopSummary,
    pub tracking: TrackReport,
}

/// generate → identify → eval-openloop → track (both controllers). The
/// summary holds no wall-clock data, so repeated runs give identical bytes.
pub fn cmd_demo(cfg: &RunConfig, out: &Path) -> Result<DemoSummary> {
    let dataset = cmd_generate(cfg, out)?;
    let identify = cmd_identify(cfg, &dataset, out)?;
    let model = out.join(MODEL_FILE);
    let openloop = cmd_eval_openloop(cfg, &model, out, &Variant::ALL, None)?;
    let (tracking, _) = cmd_track(cfg, Some(&model), None, &[ControllerKind::Kbmpc, ControllerKind::Lmpc], out)?;
    let summary = DemoSummary {
        identify,
        openloop,
        tracking,
    };
    write_json(&out.join(SUMMARY_JSON), cfg, &summary)?;
    Ok(summary)
}
