//! Open-loop predictors and their error metrics.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::BilinearModel;
use crate::error::{Error, Result};
use crate::lie::ControlAffineSystem;
use crate::lifting::LiftingBasis;
use crate::plant::{
    output_map, rk4_step, sample_control, sample_state, tractor_trailer_system, wrap_angle, Control, Limits, Output,
    PlantParams, State, N_OUTPUT,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// The lifted bilinear model.
    Kbm,
    /// The bilinear model linearized once at the initial point.
    Lkbm,
    /// The slip-free plant integrated with RK4.
    Nm,
    /// The slip-free plant linearized once at the initial point.
    Llnm,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Kbm, Variant::Lkbm, Variant::Nm, Variant::Llnm];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Kbm => "kbm",
            Variant::Lkbm => "lkbm",
            Variant::Nm => "nm",
            Variant::Llnm => "llnm",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown predictor variant {s:?} (kbm, lkbm, nm, llnm)")))
    }
}

/// Everything the four predictors need.
pub struct PredictContext<'a> {
    pub model: &'a BilinearModel,
    pub basis: &'a LiftingBasis,
    nominal: PlantParams,
    system: ControlAffineSystem,
}

impl<'a> PredictContext<'a> {
    pub fn nominal(&self) -> &PlantParams {
        &self.nominal
    }

    pub fn new(model: &'a BilinearModel, basis: &'a LiftingBasis, geometry: &PlantParams) -> Result<Self> {
        model.check_basis(basis)?;
        if model.n_y() != N_OUTPUT || model.m() != 2 {
            return Err(Error::dim("model outputs", N_OUTPUT, model.n_y()));
        }
        let nominal = geometry.nominal();
        Ok(PredictContext {
            model,
            basis,
            nominal,
            system: tractor_trailer_system(&nominal),
        })
    }
}

fn lifted_output(model: &BilinearModel, z: &DVector<f64>) -> Output {
    let y = model.output(z);
    Output(std::array::from_fn(|i| y[i]))
}

/// Outputs at steps `0..=controls.len()`.
pub fn predict(variant: Variant, init: &State, controls: &[Control], ctx: &PredictContext) -> Result<Vec<Output>> {
    if !init.is_finite() || controls.iter().any(|u| !u.omega.is_finite() || !u.a.is_finite()) {
        return Err(Error::invalid("predictor inputs must be finite"));
    }
    let ts = ctx.model.ts;
    let mut out = Vec::with_capacity(controls.len() + 1);
    match variant {
        Variant::Kbm => {
            let mut z = ctx.basis.eval_psi_x(&init.to_array());
            out.push(lifted_output(ctx.model, &z));
            for u in controls {
                z = ctx.model.step(&z, &u.to_array());
                out.push(lifted_output(ctx.model, &z));
            }
        }
        Variant::Lkbm => {
            let mut z = ctx.basis.eval_psi_x(&init.to_array());
            out.push(lifted_output(ctx.model, &z));
            let u0 = controls.first().copied().unwrap_or_default().to_array();
            let lin = ctx.model.linearize(&z, &u0);
            for u in controls {
                z = lin.step(&z, &u.to_array());
                out.push(lifted_output(ctx.model, &z));
            }
        }
        Variant::Nm => {
            let mut x = *init;
            out.push(output_map(&x, &ctx.nominal));
            for u in controls {
                x = rk4_step(&x, u, &ctx.nominal, ts);
                out.push(output_map(&x, &ctx.nominal));
            }
        }
        Variant::Llnm => {
            let x0 = DVector::from_column_slice(&init.to_array());
            let u0 = controls.first().copied().unwrap_or_default();
            let u0v = DVector::from_column_slice(&u0.to_array());
            let (f0, jx, ju) = ctx.system.linearize(x0.as_slice(), u0v.as_slice());
            let mut dx = DVector::zeros(x0.len());
            out.push(output_map(init, &ctx.nominal));
            for u in controls {
                let du = DVector::from_column_slice(&u.to_array()) - &u0v;
                let rate = &f0 + &jx * &dx + &ju * du;
                dx += rate * ts;
                out.push(output_map(&State::from_slice((&x0 + &dx).as_slice()), &ctx.nominal));
            }
        }
    }
    Ok(out)
}

pub const CHANNELS: [&str; 4] = ["e_x0y0", "e_x1y1", "e_theta0", "e_theta1"];

/// Mean position (Euclidean) and heading (wrapped absolute) errors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub e_x0y0: f64,
    pub e_x1y1: f64,
    pub e_theta0: f64,
    pub e_theta1: f64,
}

impl ErrorMetrics {
    pub fn as_array(&self) -> [f64; 4] {
        [self.e_x0y0, self.e_x1y1, self.e_theta0, self.e_theta1]
    }

    fn from_array(a: [f64; 4]) -> Self {
        ErrorMetrics {
            e_x0y0: a[0],
            e_x1y1: a[1],
            e_theta0: a[2],
            e_theta1: a[3],
        }
    }

    fn pointwise(t: &Output, p: &Output) -> [f64; 4] {
        [
            (t.x0() - p.x0()).hypot(t.y0() - p.y0()),
            (t.x1() - p.x1()).hypot(t.y1() - p.y1()),
            wrap_angle(t.theta0() - p.theta0()).abs(),
            wrap_angle(t.theta1() - p.theta1()).abs(),
        ]
    }
}

/// Averages the per-step errors over every entry of the two sequences.
pub fn error_metrics(truth: &[Output], pred: &[Output]) -> Result<ErrorMetrics> {
    if truth.len() != pred.len() {
        return Err(Error::dim("error metrics", truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return Err(Error::invalid("error metrics of empty trajectories"));
    }
    let mut acc = [0.0; 4];
    for (t, p) in truth.iter().zip(pred) {
        for (a, e) in acc.iter_mut().zip(ErrorMetrics::pointwise(t, p)) {
            *a += e;
        }
    }
    Ok(ErrorMetrics::from_array(acc.map(|a| a / truth.len() as f64)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpenLoopConfig {
    pub rollouts: usize,
    pub steps: usize,
    pub seed: u64,
    pub mu_range: [f64; 2],
    pub kappa: f64,
    /// Half-width of the square position workspace (m).
    pub workspace: f64,
    /// Inputs are drawn independently at every step, uniformly inside the
    /// input limits scaled by this factor.
    pub control_scale: f64,
}

impl Default for OpenLoopConfig {
    fn default() -> Self {
        OpenLoopConfig {
            rollouts: 1000,
            steps: 20,
            seed: 0x0E7A1,
            mu_range: [0.97, 0.99],
            kappa: 0.94,
            workspace: 10.0,
            control_scale: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopReport {
    pub rollouts: usize,
    pub steps: usize,
    /// Mean over rollouts and steps `1..=steps`, per variant.
    pub mean: Vec<(Variant, ErrorMetrics)>,
    /// Mean over rollouts at each horizon step `1..=steps`, per variant.
    pub per_step: Vec<(Variant, Vec<ErrorMetrics>)>,
}

impl OpenLoopReport {
    pub fn mean_of(&self, v: Variant) -> Option<ErrorMetrics> {
        self.mean.iter().find(|(w, _)| *w == v).map(|(_, e)| *e)
    }
}

/// One random open-loop experiment: slip, initial state, inputs and the true
/// outputs at steps `1..=steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub mu: f64,
    pub init: State,
    pub controls: Vec<Control>,
    pub truth: Vec<Output>,
}

/// Rollout `index` of the evaluation; each index draws from its own stream.
pub fn sample_rollout(cfg: &OpenLoopConfig, limits: &Limits, geometry: &PlantParams, ts: f64, index: usize) -> Rollout {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let mu = rng.gen_range(cfg.mu_range[0]..=cfg.mu_range[1]);
    let truth_p = geometry.with_slip(mu, cfg.kappa);
    let init = sample_state(&mut rng, limits, cfg.workspace);
    let scaled = Limits {
        omega_max: limits.omega_max * cfg.control_scale,
        a_max: limits.a_max * cfg.control_scale,
        ..*limits
    };
    let controls: Vec<Control> = (0..cfg.steps).map(|_| sample_control(&mut rng, &scaled)).collect();
    let mut x = init;
    let mut truth = Vec::with_capacity(cfg.steps);
    for u in &controls {
        x = rk4_step(&x, u, &truth_p, ts);
        truth.push(output_map(&x, &truth_p));
    }
    Rollout {
        mu,
        init,
        controls,
        truth,
    }
}

/// Random rollouts from the training distribution against the slip plant.
pub fn evaluate_open_loop(
    ctx: &PredictContext,
    cfg: &OpenLoopConfig,
    limits: &Limits,
    variants: &[Variant],
) -> Result<OpenLoopReport> {
    if cfg.rollouts == 0 || cfg.steps == 0 {
        return Err(Error::invalid("open-loop evaluation needs rollouts and steps"));
    }
    if !(cfg.control_scale > 0.0 && cfg.control_scale <= 1.0) {
        return Err(Error::invalid("control_scale must lie in (0, 1]"));
    }
    let per_rollout: Vec<Result<Vec<Vec<[f64; 4]>>>> = (0..cfg.rollouts)
        .into_par_iter()
        .map(|r| {
            let roll = sample_rollout(cfg, limits, &ctx.nominal, ctx.model.ts, r);
            let (x0, controls, truth) = (roll.init, roll.controls, roll.truth);
            variants
                .iter()
                .map(|v| {
                    let pred = predict(*v, &x0, &controls, ctx)?;
                    Ok(truth
                        .iter()
                        .zip(&pred[1..])
                        .map(|(t, p)| ErrorMetrics::pointwise(t, p))
                        .collect())
                })
                .collect()
        })
        .collect();

    let mut sums = vec![vec![[0.0; 4]; cfg.steps]; variants.len()];
    for r in per_rollout {
        for (vi, steps) in r?.into_iter().enumerate() {
            for (k, e) in steps.into_iter().enumerate() {
                for c in 0..4 {
                    sums[vi][k][c] += e[c];
                }
            }
        }
    }
    let n = cfg.rollouts as f64;
    let mut mean = Vec::new();
    let mut per_step = Vec::new();
    for (v, s) in variants.iter().zip(sums) {
        let curve: Vec<ErrorMetrics> = s.iter().map(|e| ErrorMetrics::from_array(e.map(|x| x / n))).collect();
        let mut tot = [0.0; 4];
        for e in &curve {
            for (t, x) in tot.iter_mut().zip(e.as_array()) {
                *t += x;
            }
        }
        mean.push((*v, ErrorMetrics::from_array(tot.map(|t| t / cfg.steps as f64))));
        per_step.push((*v, curve));
    }
    Ok(OpenLoopReport {
        rollouts: cfg.rollouts,
        steps: cfg.steps,
        mean,
        per_step,
    })
}

/// Rows `variant,channel,mean_error,horizon_step`: one per horizon step, then
/// the horizon mean with `horizon_step = all`.
pub fn write_open_loop_csv(report: &OpenLoopReport, path: &Path, provenance: Option<&str>) -> Result<()> {
    let mut s = String::new();
    if let Some(p) = provenance {
        s.push_str(&format!("# {p}\n"));
    }
    s.push_str("variant,channel,mean_error,horizon_step\n");
    for (v, curve) in &report.per_step {
        for (k, e) in curve.iter().enumerate() {
            for (c, x) in CHANNELS.iter().zip(e.as_array()) {
                s.push_str(&format!("{v},{c},{x:e},{}\n", k + 1));
            }
        }
    }
    for (v, e) in &report.mean {
        for (c, x) in CHANNELS.iter().zip(e.as_array()) {
            s.push_str(&format!("{v},{c},{x:e},all\n"));
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn out(x0: f64, y0: f64, th0: f64) -> Output {
        Output([x0, y0, th0, 0.0, 0.0, 0.0, x0 - 7.0, y0])
    }

    #[test]
    fn metrics_of_identical_and_offset_trajectories() {
        let a = vec![out(0.0, 0.0, 0.1), out(1.0, 2.0, 0.3)];
        assert_eq!(error_metrics(&a, &a).unwrap(), ErrorMetrics::default());
        let mut p = a.clone();
        for y in &mut p {
            y.0[0] += 1.0;
        }
        let e = error_metrics(&a, &p).unwrap();
        assert_eq!(e.e_x0y0, 1.0);
        assert_eq!((e.e_x1y1, e.e_theta0, e.e_theta1), (0.0, 0.0, 0.0));
        assert!(error_metrics(&a, &p[..1]).is_err());
    }

    #[test]
    fn heading_error_wraps() {
        let e = error_metrics(&[out(0.0, 0.0, 3.1)], &[out(0.0, 0.0, -3.1)]).unwrap();
        assert!((e.e_theta0 - (std::f64::consts::TAU - 6.2)).abs() < 1e-12);
    }

    #[test]
    fn variant_names_parse() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("nmpc".parse::<Variant>().is_err());
    }
}
