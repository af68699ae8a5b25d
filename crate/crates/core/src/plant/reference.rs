//! Reference trajectories: coarse nominal rollouts linearly interpolated to the
//! control sampling grid, plus the CSV exchange format.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{output_map, rk4_step, Control, Output, PlantParams, State, N_OUTPUT};
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "t,x0,y0,theta0,theta1,tan_phi,v,x1,y1";

/// Constant input held for `duration` seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration: f64,
    pub omega: f64,
    pub a: f64,
}

impl Segment {
    pub const fn new(duration: f64, omega: f64, a: f64) -> Self {
        Segment { duration, omega, a }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceProfile {
    pub name: String,
    pub initial: State,
    pub segments: Vec<Segment>,
}

impl ReferenceProfile {
    /// Straight driving at constant speed `v` for `duration` seconds.
    pub fn straight(v: f64, duration: f64) -> Self {
        ReferenceProfile {
            name: "straight".into(),
            initial: State { v, ..Default::default() },
            segments: vec![Segment::new(duration, 0.0, 0.0)],
        }
    }

    /// Forward start, a long left arc, counter-steer to straighten, then a
    /// stop and a straight reversing leg.
    pub fn parking() -> Self {
        ReferenceProfile {
            name: "parking".into(),
            initial: State {
                x0: -5.0,
                y0: -8.0,
                ..Default::default()
            },
            segments: PARKING_SEGMENTS.to_vec(),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "parking" => Some(Self::parking()),
            "straight" => Some(Self::straight(0.8, 10.0)),
            _ => None,
        }
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    fn control_at(&self, t: f64) -> Control {
        let mut acc = 0.0;
        for s in &self.segments {
            acc += s.duration;
            if t < acc {
                return Control::new(s.omega, s.a);
            }
        }
        let last = self.segments.last().expect("non-empty profile");
        Control::new(last.omega, last.a)
    }
}

const PARKING_SEGMENTS: [Segment; 12] = [
    Segment::new(1.0, 0.0, 0.8),
    Segment::new(1.0, 0.0, 0.0),
    Segment::new(0.5, 1.2, 0.0),
    Segment::new(11.5, 0.0, 0.0),
    Segment::new(0.5, -1.6, 0.0),
    Segment::new(2.5, 0.0, 0.0),
    Segment::new(0.5, 0.4, 0.0),
    Segment::new(2.0, 0.0, 0.0),
    Segment::new(1.0, 0.0, -0.8),
    Segment::new(1.0, 0.0, -0.6),
    Segment::new(4.0, 0.0, 0.0),
    Segment::new(1.0, 0.0, 0.6),
];

/// A sampled output trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Reference {
    pub ts: f64,
    pub outputs: Vec<Output>,
    /// Coarse nodes and the inputs applied after each of them (the last node
    /// has no input). Empty for references loaded from CSV.
    pub coarse: Vec<(State, Option<Control>)>,
}

impl Reference {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// `n + 1` outputs starting at step `k`, holding the terminal output past
    /// the end.
    pub fn window(&self, k: usize, n: usize) -> Vec<Output> {
        let last = self.outputs.len() - 1;
        (k..=k + n).map(|i| self.outputs[i.min(last)]).collect()
    }
}

/// Simulates the slip-free plant under `profile` at `coarse_dt`, then
/// linearly interpolates all output channels onto the `ts` grid.
pub fn generate_reference(profile: &ReferenceProfile, p: &PlantParams, coarse_dt: f64, ts: f64) -> Result<Reference> {
    if !(ts > 0.0 && coarse_dt > ts) {
        return Err(Error::invalid(format!("need coarse_dt > ts > 0, got {coarse_dt}, {ts}")));
    }
    if profile.segments.is_empty() {
        return Err(Error::invalid("reference profile has no segments"));
    }
    if profile
        .segments
        .iter()
        .any(|s| !(s.duration > 0.0) || !s.omega.is_finite() || !s.a.is_finite())
    {
        return Err(Error::invalid("reference segments need positive durations and finite inputs"));
    }
    if !profile.initial.is_finite() {
        return Err(Error::invalid("reference initial state is not finite"));
    }
    let n_coarse = (profile.duration() / coarse_dt + 1e-9).floor() as usize;
    if n_coarse < 1 {
        return Err(Error::invalid("reference profile spans fewer than two coarse nodes"));
    }
    let nominal = p.nominal();
    let substeps = (coarse_dt / ts).ceil() as usize;
    let h = coarse_dt / substeps as f64;

    let mut coarse = Vec::with_capacity(n_coarse + 1);
    let mut x = profile.initial;
    for i in 0..n_coarse {
        let u = profile.control_at((i as f64 + 0.5) * coarse_dt);
        coarse.push((x, Some(u)));
        for _ in 0..substeps {
            x = rk4_step(&x, &u, &nominal, h);
        }
    }
    coarse.push((x, None));

    let nodes: Vec<Output> = coarse.iter().map(|(s, _)| output_map(s, &nominal)).collect();
    let t_end = n_coarse as f64 * coarse_dt;
    let n_fine = (t_end / ts + 1e-9).floor() as usize;
    let outputs = (0..=n_fine)
        .map(|j| {
            let t = j as f64 * ts;
            let pos = (t / coarse_dt).min(n_coarse as f64);
            let i = (pos.floor() as usize).min(n_coarse - 1);
            let w = pos - i as f64;
            let (a, b) = (&nodes[i].0, &nodes[i + 1].0);
            Output(std::array::from_fn(|c| a[c] + w * (b[c] - a[c])))
        })
        .collect();
    Ok(Reference { ts, outputs, coarse })
}

/// Writes the reference CSV. `provenance`, when given, is emitted as a leading
/// `#` comment line.
pub fn write_reference_csv(reference: &Reference, path: &Path, provenance: Option<&str>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let res = (|| -> std::io::Result<()> {
        if let Some(p) = provenance {
            writeln!(w, "# {p}")?;
        }
        writeln!(w, "{CSV_HEADER}")?;
        for (k, y) in reference.outputs.iter().enumerate() {
            write!(w, "{}", k as f64 * reference.ts)?;
            for v in y.0 {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

pub fn read_reference_csv(path: &Path) -> Result<Reference> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header_seen = false;
    let mut times = Vec::new();
    let mut outputs = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        if !header_seen {
            if line != CSV_HEADER {
                return Err(Error::invalid(format!("{}: unexpected header {line:?}", path.display())));
            }
            header_seen = true;
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        if vals.len() != N_OUTPUT + 1 {
            return Err(Error::invalid(format!(
                "{}:{}: expected {} columns, got {}",
                path.display(),
                lineno + 1,
                N_OUTPUT + 1,
                vals.len()
            )));
        }
        times.push(vals[0]);
        outputs.push(Output(std::array::from_fn(|c| vals[c + 1])));
    }
    if outputs.is_empty() {
        return Err(Error::invalid(format!("{}: reference has no rows", path.display())));
    }
    let ts = if times.len() >= 2 { times[1] - times[0] } else { 0.0 };
    Ok(Reference {
        ts,
        outputs,
        coarse: Vec::new(),
    })
}
