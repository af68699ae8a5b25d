//! Discrete-time lifted bilinear model `z⁺ = Az + Bu + Σ_j u_j H_j z`,
//! `y = Cz`, its linearization about an estimate, and open-loop predictors.

mod predict;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::lifting::LiftingBasis;

pub use predict::{
    error_metrics, evaluate_open_loop, predict, sample_rollout, write_open_loop_csv, ErrorMetrics, OpenLoopConfig,
    OpenLoopReport, PredictContext, Rollout, Variant, CHANNELS,
};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct BilinearModel {
    pub ts: f64,
    pub rho: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub h: Vec<DMatrix<f64>>,
    pub c: DMatrix<f64>,
    /// Manifest hash of the basis the model was fit over.
    pub basis_hash: String,
}

/// `Â`, `B̂` and the constant `-Σ û_j H_j ẑ` of the model linearized at
/// `(ẑ, û)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedStep {
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub residual_base: DVector<f64>,
}

impl LinearizedStep {
    /// `Â z + B̂ u + residual_base`.
    pub fn step(&self, z: &DVector<f64>, u: &[f64]) -> DVector<f64> {
        &self.a_hat * z + &self.b_hat * DVector::from_column_slice(u) + &self.residual_base
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelHeader {
    kind: String,
    version: u32,
    ts: f64,
    n: usize,
    m: usize,
    n_y: usize,
    rho: usize,
    basis_manifest_hash: String,
    layout: String,
    tool_version: String,
    config_hash: Option<String>,
}

const LAYOUT: &str = "A,H1..Hm,B,C row-major";

fn push_row_major(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        out.extend(m.row(r).iter());
    }
}

fn take_row_major(src: &mut std::slice::Iter<'_, f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_iterator(rows, cols, src.by_ref().take(rows * cols).copied())
}

impl BilinearModel {
    /// Splits a regression matrix `G = [A, H_1, …, H_m, B]` and appends the
    /// identity-prefix output selector.
    pub fn from_blocks(g: &DMatrix<f64>, m: usize, n_y: usize, ts: f64, rho: usize, basis_hash: String) -> Result<Self> {
        let n = g.nrows();
        if g.ncols() != (m + 1) * n + m {
            return Err(Error::dim("regression matrix columns", (m + 1) * n + m, g.ncols()));
        }
        if n_y > n {
            return Err(Error::dim("output dimension", n, n_y));
        }
        let a = g.columns(0, n).into_owned();
        let h = (0..m).map(|j| g.columns((j + 1) * n, n).into_owned()).collect();
        let b = g.columns((m + 1) * n, m).into_owned();
        let mut c = DMatrix::zeros(n_y, n);
        c.fill_diagonal(1.0);
        Ok(BilinearModel {
            ts,
            rho,
            a,
            b,
            h,
            c,
            basis_hash,
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }

    /// `Az + Bu + Σ_j u_j H_j z`.
    pub fn step(&self, z: &DVector<f64>, u: &[f64]) -> DVector<f64> {
        let mut out = &self.a * z + &self.b * DVector::from_column_slice(u);
        for (hj, uj) in self.h.iter().zip(u) {
            out.gemv(*uj, hj, z, 1.0);
        }
        out
    }

    pub fn output(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.c * z
    }

    pub fn linearize(&self, z_hat: &DVector<f64>, u_hat: &[f64]) -> LinearizedStep {
        let mut a_hat = self.a.clone();
        let mut b_hat = self.b.clone();
        let mut residual_base = DVector::zeros(self.n());
        for (j, (hj, uj)) in self.h.iter().zip(u_hat).enumerate() {
            a_hat += hj * *uj;
            let hz = hj * z_hat;
            residual_base.axpy(-*uj, &hz, 1.0);
            let mut col = b_hat.column_mut(j);
            col += &hz;
        }
        LinearizedStep {
            a_hat,
            b_hat,
            residual_base,
        }
    }

    pub fn save(&self, path: &Path, config_hash: Option<&str>) -> Result<()> {
        let header = ModelHeader {
            kind: "model".into(),
            version: MODEL_FORMAT_VERSION,
            ts: self.ts,
            n: self.n(),
            m: self.m(),
            n_y: self.n_y(),
            rho: self.rho,
            basis_manifest_hash: self.basis_hash.clone(),
            layout: LAYOUT.into(),
            tool_version: crate::TOOL_VERSION.into(),
            config_hash: config_hash.map(str::to_owned),
        };
        let mut payload = Vec::new();
        push_row_major(&mut payload, &self.a);
        for hj in &self.h {
            push_row_major(&mut payload, hj);
        }
        push_row_major(&mut payload, &self.b);
        push_row_major(&mut payload, &self.c);
        container::write_file(path, &header, &payload)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, payload): (ModelHeader, Vec<f64>) = container::read_file(path)?;
        let bad = |reason: String| Error::ModelFormat {
            path: path.to_path_buf(),
            reason,
        };
        if h.kind != "model" {
            return Err(bad(format!("expected a model file, found {:?}", h.kind)));
        }
        if h.version != MODEL_FORMAT_VERSION {
            return Err(bad(format!("unsupported model version {}", h.version)));
        }
        if h.layout != LAYOUT {
            return Err(bad(format!("unknown layout {:?}", h.layout)));
        }
        let (n, m, ny) = (h.n, h.m, h.n_y);
        if payload.len() != n * n * (m + 1) + n * m + ny * n {
            return Err(bad("payload size does not match the declared dimensions".into()));
        }
        let mut it = payload.iter();
        let a = take_row_major(&mut it, n, n);
        let hs = (0..m).map(|_| take_row_major(&mut it, n, n)).collect();
        let b = take_row_major(&mut it, n, m);
        let c = take_row_major(&mut it, ny, n);
        Ok(BilinearModel {
            ts: h.ts,
            rho: h.rho,
            a,
            b,
            h: hs,
            c,
            basis_hash: h.basis_manifest_hash,
        })
    }

    /// Loads a model and checks that it was fit over `basis`.
    pub fn load_for_basis(path: &Path, basis: &LiftingBasis) -> Result<Self> {
        let model = Self::load(path)?;
        model.check_basis(basis)?;
        Ok(model)
    }

    pub fn check_basis(&self, basis: &LiftingBasis) -> Result<()> {
        let hash = basis.manifest_hash();
        if hash != self.basis_hash || basis.n() != self.n() {
            return Err(Error::BasisMismatch {
                file: self.basis_hash.clone(),
                basis: hash,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(n: usize, m: usize, seed: u64) -> BilinearModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mat = |r, c| DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
        let g = mat(n, (m + 1) * n + m);
        BilinearModel::from_blocks(&g, m, 2.min(n), 0.05, 1, "h".into()).unwrap()
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn step_special_cases() {
        let model = random_model(5, 2, 1);
        let z = DVector::from_fn(5, |i, _| i as f64 - 2.0);
        assert_eq!(model.step(&z, &[0.0, 0.0]), &model.a * &z);
        let zero = DVector::zeros(5);
        assert_eq!(model.step(&zero, &[0.3, -1.0]), &model.b * DVector::from_column_slice(&[0.3, -1.0]));
    }

    #[test]
    fn step_matches_termwise_oracle() {
        let model = random_model(6, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = rand_vec(&mut rng, 6);
        let u = [0.7, -0.2];
        let got = model.step(&z, &u);
        for i in 0..6 {
            let mut want = 0.0;
            for k in 0..6 {
                want += model.a[(i, k)] * z[k] + u[0] * model.h[0][(i, k)] * z[k] + u[1] * model.h[1][(i, k)] * z[k];
            }
            want += model.b[(i, 0)] * u[0] + model.b[(i, 1)] * u[1];
            assert!((got[i] - want).abs() < 1e-13);
        }
    }

    #[test]
    fn linearization_is_tangent() {
        let model = random_model(7, 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = rand_vec(&mut rng, 7);
        let u = [0.4, 1.3];
        let lin = model.linearize(&z, &u);
        let diff = (lin.step(&z, &u) - model.step(&z, &u)).amax();
        assert!(diff < 1e-12, "{diff}");

        let at_zero_u = model.linearize(&z, &[0.0, 0.0]);
        assert_eq!(at_zero_u.a_hat, model.a);
        assert!(at_zero_u.residual_base.iter().all(|v| *v == 0.0));
        let at_zero_z = model.linearize(&DVector::zeros(7), &u);
        assert_eq!(at_zero_z.b_hat, model.b);
    }

    #[test]
    fn linearization_error_is_second_order() {
        let model = random_model(6, 2, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = rand_vec(&mut rng, 6);
        let u = [0.2, -0.5];
        let dz = rand_vec(&mut rng, 6);
        let du = [0.3, 0.8];
        let lin = model.linearize(&z, &u);
        let gap = |s: f64| {
            let zz = &z + &dz * s;
            let uu = [u[0] + s * du[0], u[1] + s * du[1]];
            (model.step(&zz, &uu) - lin.step(&zz, &uu)).norm()
        };
        let slope = (gap(0.1) / gap(0.05)).log2();
        assert!((1.8..=2.2).contains(&slope), "{slope}");
    }

    #[test]
    fn save_load_round_trip() {
        let model = random_model(4, 2, 8);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/model.bin");
        model.save(&path, Some("cfg")).unwrap();
        let back = BilinearModel::load(&path).unwrap();
        assert_eq!(back, model);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(BilinearModel::load(&path).is_err());
    }
}
