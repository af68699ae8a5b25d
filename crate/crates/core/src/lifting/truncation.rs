//! Truncated Taylor prediction along the state derivative chains, and the
//! remainder bound that goes with it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SamplingBox;
use crate::error::{Error, Result};
use crate::lie::{expand_level, ControlAffineSystem, Expr, ScalarField, Tape};

/// State derivative chains `F_{i,l}^{(n)}` for `n = 0..=max_level`, compiled
/// together.
///
/// With the input held constant, the `n`-th time derivative of `F_i` is
/// `Σ_l F_{i,l}^{(n)}(x) Π_d w_d`, where the `d` run over the base-`(m+1)`
/// digits of `l` and `w_0 = 1`, `w_j = u_j`.
#[derive(Clone, Debug)]
pub struct DerivativeChains {
    n_x: usize,
    n_u: usize,
    max_level: usize,
    tape: Tape,
    // offsets[i][n]: start of level n of row i in the tape outputs
    offsets: Vec<Vec<usize>>,
}

impl DerivativeChains {
    pub fn new(sys: &ControlAffineSystem, max_level: usize) -> Self {
        let (n_x, m) = (sys.n_x(), sys.n_u());
        let mut roots: Vec<Expr> = Vec::new();
        let mut offsets = Vec::with_capacity(n_x);
        for i in 0..n_x {
            let mut level: Vec<ScalarField> = vec![sys.drift()[i].clone()];
            level.extend((0..m).map(|j| sys.control(j)[i].clone()));
            let mut offs = Vec::with_capacity(max_level + 1);
            for n in 0..=max_level {
                offs.push(roots.len());
                roots.extend(level.iter().map(|f| f.expr().clone()));
                if n < max_level {
                    level = expand_level(&level, sys);
                }
            }
            offsets.push(offs);
        }
        DerivativeChains {
            n_x,
            n_u: m,
            max_level,
            tape: Tape::compile(&roots, n_x),
            offsets,
        }
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    /// Digit weights for every index of `level`.
    fn weights(&self, level: usize, u: &[f64]) -> Vec<f64> {
        let mut w = vec![1.0];
        for _ in 0..=level {
            w = w
                .iter()
                .flat_map(|&p| std::iter::once(p).chain(u.iter().map(move |&uj| p * uj)))
                .collect();
        }
        w
    }

    /// `out[n][i] = F_i^{(n)}(x, u)` for `n = 0..=max_level`.
    pub fn total_derivatives(&self, x: &[f64], u: &[f64]) -> Vec<Vec<f64>> {
        assert_eq!(u.len(), self.n_u, "input dimension");
        let vals = self.tape.eval(x);
        (0..=self.max_level)
            .map(|n| {
                let w = self.weights(n, u);
                (0..self.n_x)
                    .map(|i| {
                        let off = self.offsets[i][n];
                        w.iter().enumerate().map(|(l, wl)| wl * vals[off + l]).sum()
                    })
                    .collect()
            })
            .collect()
    }

    /// One step of `x + Σ_{n=0}^{rho} F^{(n)}(x,u) ts^{n+1}/(n+1)!`.
    pub fn taylor_step(&self, x: &[f64], u: &[f64], ts: f64, rho: usize) -> Vec<f64> {
        assert!(rho <= self.max_level, "chains too short for order {rho}");
        let d = self.total_derivatives(x, u);
        let mut out = x.to_vec();
        let mut coef = ts;
        for (n, dn) in d.iter().enumerate().take(rho + 1) {
            if n > 0 {
                coef *= ts / (n + 1) as f64;
            }
            for (o, v) in out.iter_mut().zip(dn) {
                *o += coef * v;
            }
        }
        out
    }
}

/// Samples `|F_i^{(order)}(x,u)|` over the boxes and returns the per-row
/// maximum scaled by `1 + inflation`.
pub fn estimate_f_max(
    chains: &DerivativeChains,
    order: usize,
    states: &SamplingBox,
    inputs: &SamplingBox,
    samples: usize,
    seed: u64,
    inflation: f64,
) -> Result<Vec<f64>> {
    if order > chains.max_level {
        return Err(Error::invalid(format!(
            "derivative order {order} exceeds chain depth {}",
            chains.max_level
        )));
    }
    if states.dim() != chains.n_x || inputs.dim() != chains.n_u {
        return Err(Error::dim("sampling box", chains.n_x + chains.n_u, states.dim() + inputs.dim()));
    }
    if samples == 0 || !(inflation >= 0.0) {
        return Err(Error::invalid("need at least one sample and a non-negative inflation"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max = vec![0.0f64; chains.n_x];
    for _ in 0..samples {
        let x = states.sample(&mut rng);
        let u = inputs.sample(&mut rng);
        let d = chains.total_derivatives(&x, &u);
        for (m, v) in max.iter_mut().zip(&d[order]) {
            *m = m.max(v.abs());
        }
    }
    Ok(max.into_iter().map(|m| m * (1.0 + inflation)).collect())
}

/// `(k·ts)^{rho+1}/(rho+1)! · f_max_i` for every state row.
pub fn truncation_error_bound(rho: usize, k: usize, ts: f64, f_max: &[f64]) -> Vec<f64> {
    let t = k as f64 * ts;
    let scale = (1..=rho + 1).fold(1.0, |acc, j| acc * t / j as f64);
    f_max.iter().map(|f| scale * f).collect()
}
