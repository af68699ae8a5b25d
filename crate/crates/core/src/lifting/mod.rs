//! Derivative-based lifting functions.
//!
//! The lifted state is the output map followed by the deduplicated Lie
//! derivative chains of every output row and every state row, truncated at
//! depth `rho`:
//!
//! * output chains start from the drift/control split of `ḣ_i`,
//!   `[∇h_i·f, ∇h_i·g_1, …, ∇h_i·g_m]`;
//! * state chains start from the row itself, `[f_i, g_{1,i}, …, g_{m,i}]`;
//! * each further level applies [`expand_level`], so element `l` of one level
//!   produces elements `(m+1)l … (m+1)l+m` of the next.
//!
//! Candidates that vanish or duplicate an earlier observable on a fixed set of
//! probe states are dropped. Constants are always dropped; their effect is
//! carried by the input column of the regression.

mod truncation;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lie::{expand_level, ControlAffineSystem, Expr, ScalarField, Tape};
use crate::plant::Limits;

pub use truncation::{estimate_f_max, truncation_error_bound, DerivativeChains};

/// Axis-aligned box of states (and optionally inputs) used for probing and
/// sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SamplingBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::dim("sampling box", lo.len(), hi.len()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a <= b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::invalid("sampling box needs finite lo <= hi"));
        }
        Ok(SamplingBox { lo, hi })
    }

    /// Positions in `[-10, 10]²`, headings in `[-π, π]`, steering and speed
    /// within their limits.
    pub fn tractor_trailer_states(lim: &Limits) -> Self {
        use std::f64::consts::PI;
        SamplingBox {
            lo: vec![-10.0, -10.0, -PI, -PI, -lim.tan_phi_max, -lim.v_max],
            hi: vec![10.0, 10.0, PI, PI, lim.tan_phi_max, lim.v_max],
        }
    }

    pub fn tractor_trailer_inputs(lim: &Limits) -> Self {
        SamplingBox {
            lo: vec![-lim.omega_max, -lim.a_max],
            hi: vec![lim.omega_max, lim.a_max],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&a, &b)| if a == b { a } else { rng.gen_range(a..=b) })
            .collect()
    }
}

/// Controls how candidate observables are fingerprinted and pruned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub points: usize,
    pub seed: u64,
    pub zero_tol: f64,
    pub dup_tol: f64,
    pub bounds: SamplingBox,
}

impl ProbeConfig {
    pub fn new(bounds: SamplingBox) -> Self {
        ProbeConfig {
            points: 64,
            seed: 0x5EED_0F_B45E5,
            zero_tol: 1e-10,
            dup_tol: 1e-10,
            bounds,
        }
    }

    fn probe_points(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.points).map(|_| self.bounds.sample(&mut rng)).collect()
    }
}

/// Which chain an observable came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Seed {
    /// Output row `i` itself (the mandatory prefix).
    Output(usize),
    /// Derivative chain of output row `i`.
    OutputChain(usize),
    /// Derivative chain of state row `i`.
    StateChain(usize),
}

impl std::fmt::Display for Seed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Seed::Output(i) => write!(f, "h[{i}]"),
            Seed::OutputChain(i) => write!(f, "dh[{i}]"),
            Seed::StateChain(i) => write!(f, "F[{i}]"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: Seed,
    /// Chain depth; `None` for the output prefix.
    pub level: Option<usize>,
    /// Base-`(m+1)` digits of the index within the level; digit 0 is the
    /// drift direction, digit `j` the `j`-th control field.
    pub path: Vec<usize>,
}

impl Provenance {
    /// Flat index within the level, `Σ digit·(m+1)^k`.
    pub fn index_in_level(&self, m: usize) -> usize {
        self.path.iter().fold(0, |acc, d| acc * (m + 1) + d)
    }
}

#[derive(Clone, Debug)]
pub struct Observable {
    pub field: ScalarField,
    pub provenance: Provenance,
    pub fingerprint: Vec<f64>,
}

/// One row of the basis manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub seed: String,
    pub level: Option<usize>,
    pub path: Vec<usize>,
    pub fingerprint_hash: String,
}

/// The retained observables `ψ_x`, compiled for evaluation.
#[derive(Clone, Debug)]
pub struct LiftingBasis {
    observables: Vec<Observable>,
    rho: usize,
    n_x: usize,
    n_u: usize,
    n_y: usize,
    raw_count: usize,
    tape: Tape,
}

/// Every candidate in construction order, before pruning.
pub fn raw_candidates(sys: &ControlAffineSystem, rho: usize) -> Vec<(ScalarField, Provenance)> {
    let m = sys.n_u();
    let mut out: Vec<(ScalarField, Provenance)> = sys
        .output()
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let p = Provenance {
                seed: Seed::Output(i),
                level: None,
                path: vec![],
            };
            (h.clone(), p)
        })
        .collect();

    let mut push_chain = |seed: Seed, level0: Vec<ScalarField>| {
        let mut paths: Vec<Vec<usize>> = (0..=m).map(|j| vec![j]).collect();
        let mut fields = level0;
        for level in 0..=rho {
            for (f, path) in fields.iter().zip(&paths) {
                out.push((
                    f.clone(),
                    Provenance {
                        seed,
                        level: Some(level),
                        path: path.clone(),
                    },
                ));
            }
            if level < rho {
                fields = expand_level(&fields, sys);
                paths = paths
                    .iter()
                    .flat_map(|p| {
                        (0..=m).map(move |j| {
                            let mut q = p.clone();
                            q.push(j);
                            q
                        })
                    })
                    .collect();
            }
        }
    };

    for (i, h) in sys.output().iter().enumerate() {
        push_chain(Seed::OutputChain(i), expand_level(std::slice::from_ref(h), sys));
    }
    for i in 0..sys.n_x() {
        let mut level0 = vec![sys.drift()[i].clone()];
        level0.extend((0..m).map(|j| sys.control(j)[i].clone()));
        push_chain(Seed::StateChain(i), level0);
    }
    out
}

/// Writes `[z; u_1 z; …; u_m z; u]` into `out`, which must have length
/// `(m+1)·len(z) + m`.
pub fn stack_features(z: &[f64], u: &[f64], out: &mut [f64]) {
    let n = z.len();
    assert_eq!(out.len(), (u.len() + 1) * n + u.len(), "feature buffer length");
    out[..n].copy_from_slice(z);
    for (j, &uj) in u.iter().enumerate() {
        let blk = &mut out[(j + 1) * n..(j + 2) * n];
        for (o, zi) in blk.iter_mut().zip(z) {
            *o = uj * zi;
        }
    }
    out[(u.len() + 1) * n..].copy_from_slice(u);
}

fn same(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(1.0))
}

/// Builds the truncated, deduplicated basis of depth `rho`.
pub fn build_basis(sys: &ControlAffineSystem, rho: usize, probe: &ProbeConfig) -> Result<LiftingBasis> {
    if probe.points == 0 {
        return Err(Error::invalid("probe configuration needs at least one sample point"));
    }
    if probe.bounds.dim() != sys.n_x() {
        return Err(Error::dim("probe box", sys.n_x(), probe.bounds.dim()));
    }
    let raw = raw_candidates(sys, rho);
    let raw_count = raw.len();
    let points = probe.probe_points();

    let exprs: Vec<Expr> = raw.iter().map(|(f, _)| f.expr().clone()).collect();
    let tape = Tape::compile(&exprs, sys.n_x());
    let mut values = vec![vec![0.0; points.len()]; raw.len()];
    let mut scratch = Vec::new();
    let mut buf = vec![0.0; raw.len()];
    for (p, x) in points.iter().enumerate() {
        tape.eval_into(x, &mut scratch, &mut buf);
        for (c, v) in buf.iter().enumerate() {
            values[c][p] = *v;
        }
    }

    let n_y = sys.n_y();
    let mut observables: Vec<Observable> = Vec::new();
    for (c, ((field, provenance), fp)) in raw.into_iter().zip(values).enumerate() {
        if fp.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("observable {c} is not finite on the probe set")));
        }
        if c >= n_y {
            let max = fp.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let constant = fp.iter().all(|v| (v - fp[0]).abs() <= probe.zero_tol * fp[0].abs().max(1.0));
            if max < probe.zero_tol
                || constant
                || observables.iter().any(|o| same(&o.fingerprint, &fp, probe.dup_tol)) {
                continue;
            }
        }
        observables.push(Observable {
            field,
            provenance,
            fingerprint: fp,
        });
    }

    let exprs: Vec<Expr> = observables.iter().map(|o| o.field.expr().clone()).collect();
    let tape = Tape::compile(&exprs, sys.n_x());
    Ok(LiftingBasis {
        observables,
        rho,
        n_x: sys.n_x(),
        n_u: sys.n_u(),
        n_y,
        raw_count,
        tape,
    })
}

impl LiftingBasis {
    /// Lifted dimension `N`.
    pub fn n(&self) -> usize {
        self.observables.len()
    }

    pub fn rho(&self) -> usize {
        self.rho
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    /// Candidate count before pruning.
    pub fn raw_count(&self) -> usize {
        self.raw_count
    }

    pub fn observables(&self) -> &[Observable] {
        &self.observables
    }

    /// Length of `ψ(x,u)`: `(m+1)N + m`.
    pub fn feature_dim(&self) -> usize {
        (self.n_u + 1) * self.n() + self.n_u
    }

    pub fn eval_psi_x_into(&self, x: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) {
        self.tape.eval_into(x, scratch, out);
    }

    /// `ψ_x(x)`.
    pub fn eval_psi_x(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_vec(self.tape.eval(x))
    }

    /// `[ψ_x; u_1 ψ_x; …; u_m ψ_x; u_1; …; u_m]` given `ψ_x` already evaluated.
    pub fn features_from_lifted(&self, z: &[f64], u: &[f64], out: &mut [f64]) {
        stack_features(z, u, out)
    }

    /// `ψ(x, u)` in the fixed block layout matching `[A, H_1, …, H_m, B]`.
    pub fn eval_psi(&self, x: &[f64], u: &[f64]) -> DVector<f64> {
        let z = self.tape.eval(x);
        let mut out = vec![0.0; self.feature_dim()];
        self.features_from_lifted(&z, u, &mut out);
        DVector::from_vec(out)
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        self.observables
            .iter()
            .enumerate()
            .map(|(index, o)| {
                let mut h = Sha256::new();
                for v in &o.fingerprint {
                    h.update(v.to_le_bytes());
                }
                ManifestEntry {
                    index,
                    seed: o.provenance.seed.to_string(),
                    level: o.provenance.level,
                    path: o.provenance.path.clone(),
                    fingerprint_hash: hex::encode(&h.finalize()[..8]),
                }
            })
            .collect()
    }

    /// SHA-256 of the JSON manifest, hex encoded.
    pub fn manifest_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.manifest()).expect("manifest serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
