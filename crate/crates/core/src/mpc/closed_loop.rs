//! Closed-loop simulation against the slip plant.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{mpc_step, ConstraintSet, IterationState, MpcConfig, Predictor};
use crate::bilinear::{error_metrics, ErrorMetrics};
use crate::error::{Error, Result};
use crate::plant::{check_limits, output_map, rk4_step, wrap_angle, Control, Output, PlantParams, Reference, State};
use crate::qp::QpStatus;

pub const LOG_HEADER: &str = "t,x0,y0,theta0,theta1,tan_phi,v,x1,y1,omega,a,\
ref_x0,ref_y0,ref_theta0,ref_theta1,ref_tan_phi,ref_v,ref_x1,ref_y1,cost,inner_iters,solve_time_us,qp_status";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Kbmpc,
    Lmpc,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Kbmpc => "kbmpc",
            ControllerKind::Lmpc => "lmpc",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kbmpc" => Ok(ControllerKind::Kbmpc),
            "lmpc" => Ok(ControllerKind::Lmpc),
            _ => Err(Error::invalid(format!("unknown controller {s:?} (kbmpc, lmpc)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClosedLoopConfig {
    /// Slip of the simulated plant.
    pub mu: f64,
    pub kappa: f64,
    /// Measure wall-clock solve time. When off, logged times are zero and
    /// the log is reproducible byte for byte.
    pub record_timing: bool,
}

impl Default for ClosedLoopConfig {
    fn default() -> Self {
        ClosedLoopConfig {
            mu: 0.98,
            kappa: 0.94,
            record_timing: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub state: State,
    pub output: Output,
    pub control: Control,
    pub reference: Output,
    /// Stage cost `(y − r)ᵀQ(y − r) + uᵀRu` with wrapped heading errors.
    pub cost: f64,
    pub inner_iters: usize,
    pub solve_time_us: u64,
    pub qp_status: QpStatus,
    pub fallback: bool,
    pub predicted_violation: f64,
    pub du_norms: Vec<f64>,
    pub costs_at_zero: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackingLog {
    pub controller: ControllerKind,
    pub rows: Vec<LogRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingSummary {
    pub controller: ControllerKind,
    pub steps: usize,
    pub mean_errors: ErrorMetrics,
    pub mean_cost: f64,
    pub fallbacks: usize,
    /// Largest `|u| − limit` over all applied inputs (≤ 0 when satisfied).
    pub max_input_violation: f64,
    /// Largest output-limit excess of the true plant.
    pub max_output_violation: f64,
    /// Largest output-limit excess of the outputs the QPs predicted.
    pub max_predicted_violation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub controller: ControllerKind,
    pub mean_solve_time_us: f64,
    pub max_solve_time_us: u64,
}

impl TrackingLog {
    pub fn metrics(&self) -> Result<ErrorMetrics> {
        let truth: Vec<Output> = self.rows.iter().map(|r| r.output).collect();
        let refs: Vec<Output> = self.rows.iter().map(|r| r.reference).collect();
        error_metrics(&truth, &refs)
    }

    pub fn mean_cost(&self) -> f64 {
        self.rows.iter().map(|r| r.cost).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn summary(&self, cfg: &MpcConfig) -> Result<TrackingSummary> {
        let lim = &cfg.limits;
        let mut input = f64::NEG_INFINITY;
        let mut output = f64::NEG_INFINITY;
        for r in &self.rows {
            let m = check_limits(&r.output, &r.control, lim);
            input = input.max(-m.input_min());
            output = output.max(-m.output_min());
        }
        Ok(TrackingSummary {
            controller: self.controller,
            steps: self.rows.len(),
            mean_errors: self.metrics()?,
            mean_cost: self.mean_cost(),
            fallbacks: self.rows.iter().filter(|r| r.fallback).count(),
            max_input_violation: input,
            max_output_violation: output,
            max_predicted_violation: self
                .rows
                .iter()
                .map(|r| r.predicted_violation)
                .fold(f64::NEG_INFINITY, f64::max),
        })
    }

    pub fn timing(&self) -> TimingSummary {
        let n = self.rows.len().max(1) as f64;
        TimingSummary {
            controller: self.controller,
            mean_solve_time_us: self.rows.iter().map(|r| r.solve_time_us as f64).sum::<f64>() / n,
            max_solve_time_us: self.rows.iter().map(|r| r.solve_time_us).max().unwrap_or(0),
        }
    }

    /// Writes the log CSV; `provenance` becomes a leading `#` line.
    pub fn write_csv(&self, path: &Path, provenance: Option<&str>) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let res = (|| -> std::io::Result<()> {
            if let Some(p) = provenance {
                writeln!(w, "# {p}")?;
            }
            writeln!(w, "{LOG_HEADER}")?;
            for r in &self.rows {
                write!(w, "{}", r.t)?;
                for v in r.output.0 {
                    write!(w, ",{v}")?;
                }
                write!(w, ",{},{}", r.control.omega, r.control.a)?;
                for v in r.reference.0 {
                    write!(w, ",{v}")?;
                }
                writeln!(w, ",{},{},{},{}", r.cost, r.inner_iters, r.solve_time_us, r.qp_status)?;
            }
            w.flush()
        })();
        res.map_err(|e| Error::io(path, e))
    }
}

fn stage_cost(y: &Output, r: &Output, u: &Control, cfg: &MpcConfig) -> f64 {
    let mut c = 0.0;
    for i in 0..y.0.len() {
        let mut e = y.0[i] - r.0[i];
        if i == 2 || i == 3 {
            e = wrap_angle(e);
        }
        c += cfg.q[i] * e * e;
    }
    c + cfg.r[0] * u.omega * u.omega + cfg.r[1] * u.a * u.a
}

/// Tracks `reference` with `pred` on the plant with geometry `geometry` and
/// the slip of `cl`, starting from the state encoded in the first reference
/// output. Steps where the QP fails hold the previous input and are flagged.
pub fn closed_loop(
    controller: ControllerKind,
    pred: &dyn Predictor,
    geometry: &PlantParams,
    reference: &Reference,
    cfg: &MpcConfig,
    cl: &ClosedLoopConfig,
) -> Result<TrackingLog> {
    cfg.validate()?;
    let true_plant = &geometry.with_slip(cl.mu, cl.kappa);
    true_plant.validate()?;
    if reference.len() < 2 {
        return Err(Error::invalid("reference needs at least two samples"));
    }
    if (reference.ts - cfg.ts).abs() > 1e-12 {
        return Err(Error::invalid(format!(
            "reference sampling time {} differs from controller sampling time {}",
            reference.ts, cfg.ts
        )));
    }
    let cons = ConstraintSet::tractor_trailer(&cfg.limits, cfg.horizon);
    let mut x = State::from_slice(&reference.outputs[0].0[..6]);
    let mut warm = IterationState::initial(pred.lift(&x), DVector::zeros(pred.input_dim()), cfg.horizon);
    let steps = reference.len() - 1;
    let mut rows = Vec::with_capacity(steps);
    for k in 0..steps {
        let refs = reference.window(k, cfg.horizon);
        let start = Instant::now();
        let (u, next, diag) = mpc_step(pred, &x, &refs, cfg, &cons, &warm)?;
        let elapsed = if cl.record_timing { start.elapsed().as_micros() as u64 } else { 0 };
        let y = output_map(&x, true_plant);
        rows.push(LogRow {
            t: k as f64 * cfg.ts,
            state: x,
            output: y,
            control: u,
            reference: refs[0],
            cost: stage_cost(&y, &refs[0], &u, cfg),
            inner_iters: diag.iterations,
            solve_time_us: elapsed,
            qp_status: diag.qp_status,
            fallback: diag.fallback,
            predicted_violation: diag.predicted_violation,
            du_norms: diag.du_norms,
            costs_at_zero: diag.costs_at_zero,
        });
        warm = next;
        x = rk4_step(&x, &u, true_plant, cfg.ts);
        if !x.is_finite() {
            return Err(Error::Numerical(format!("closed-loop state diverged at step {k}")));
        }
    }
    Ok(TrackingLog { controller, rows })
}
