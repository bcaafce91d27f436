//! The observation map: x = tanh(A_c·c + A_sc·s_c + A_si·s_i) + noise.
//! Noise is re-derivable from the sample id, so re-rendering the same
//! latents reproduces the observation bit-for-bit. The affine mix is
//! injective in the concept for fixed styles, which keeps the concept
//! recoverable by inverting the tanh and solving the linear system.

use crate::error::{CoreError, Result};
use crate::linalg::{ridge_solve, Matrix};
use crate::rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub concept: usize,
    pub style_cross: usize,
    pub style_intra: usize,
    pub observed: usize,
}

impl Dims {
    pub fn latent_total(&self) -> usize {
        self.concept + self.style_cross + self.style_intra
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderParams {
    pub dims: Dims,
    pub a_concept: Matrix,
    pub a_style_cross: Matrix,
    pub a_style_intra: Matrix,
    /// Base seed of the per-sample noise streams.
    pub noise_seed: u64,
}

impl RenderParams {
    /// Random mixing matrices with per-channel gains. Entries are
    /// N(0, gain²/fan_in) so each channel's contribution scales with its
    /// gain independent of latent dimension.
    pub fn random(dims: Dims, gain_c: f64, gain_sc: f64, gain_si: f64, seed: u64) -> Self {
        let mut r = rng::stream(seed, 0x52_45_4e);
        let mut mat = |rows: usize, cols: usize, gain: f64| {
            let std = gain / (cols as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| rng::normal(&mut r) * std)
        };
        RenderParams {
            dims,
            a_concept: mat(dims.observed, dims.concept, gain_c),
            a_style_cross: mat(dims.observed, dims.style_cross, gain_sc),
            a_style_intra: mat(dims.observed, dims.style_intra, gain_si),
            noise_seed: rng::mix(seed, 0x4e_4f_49),
        }
    }

    fn check_dims(&self, c: &[f64], sc: &[f64], si: &[f64]) -> Result<()> {
        if c.len() != self.dims.concept
            || sc.len() != self.dims.style_cross
            || si.len() != self.dims.style_intra
        {
            return Err(CoreError::shape(
                "render",
                format!(
                    "latents of ({}, {}, {})",
                    self.dims.concept, self.dims.style_cross, self.dims.style_intra
                ),
                format!("({}, {}, {})", c.len(), sc.len(), si.len()),
            ));
        }
        Ok(())
    }

    /// The affine mix before the nonlinearity.
    pub fn premix(&self, c: &[f64], sc: &[f64], si: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(c, sc, si)?;
        let d = self.dims.observed;
        let mut z = vec![0.0; d];
        for r in 0..d {
            let mut acc = 0.0;
            for (j, &v) in c.iter().enumerate() {
                acc += self.a_concept.get(r, j) * v;
            }
            for (j, &v) in sc.iter().enumerate() {
                acc += self.a_style_cross.get(r, j) * v;
            }
            for (j, &v) in si.iter().enumerate() {
                acc += self.a_style_intra.get(r, j) * v;
            }
            z[r] = acc;
        }
        Ok(z)
    }

    /// Renders latents to an observation. Noise is Gaussian with the
    /// given sigma, deterministic per sample id.
    pub fn render(
        &self,
        c: &[f64],
        sc: &[f64],
        si: &[f64],
        noise_sigma: f64,
        id: u64,
    ) -> Result<Vec<f64>> {
        let mut x = self.premix(c, sc, si)?;
        for v in &mut x {
            *v = v.tanh();
        }
        if noise_sigma > 0.0 {
            let mut nrng = rng::stream(self.noise_seed, id);
            for v in &mut x {
                *v += noise_sigma * rng::normal(&mut nrng);
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::non_finite("render"));
        }
        Ok(x)
    }

    /// All three mixing matrices side by side: (d_x × d_latent).
    pub fn stacked(&self) -> Matrix {
        let d = self.dims.observed;
        let total = self.dims.latent_total();
        let mut m = Matrix::zeros(d, total);
        for r in 0..d {
            let mut col = 0;
            for j in 0..self.dims.concept {
                m.set(r, col, self.a_concept.get(r, j));
                col += 1;
            }
            for j in 0..self.dims.style_cross {
                m.set(r, col, self.a_style_cross.get(r, j));
                col += 1;
            }
            for j in 0..self.dims.style_intra {
                m.set(r, col, self.a_style_intra.get(r, j));
                col += 1;
            }
        }
        m
    }

    /// Recovers (concept, cross style, intra style) from an observation
    /// by inverting the tanh and ridge-solving the linear system.
    pub fn recover(&self, x: &[f64], ridge: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        if x.len() != self.dims.observed {
            return Err(CoreError::shape(
                "recover",
                format!("{} observed", self.dims.observed),
                format!("{}", x.len()),
            ));
        }
        let z: Vec<f64> = x
            .iter()
            .map(|&v| v.clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh())
            .collect();
        let a = self.stacked();
        let sol = ridge_solve(&a, &z, ridge)?;
        let c = sol[..self.dims.concept].to_vec();
        let sc = sol[self.dims.concept..self.dims.concept + self.dims.style_cross].to_vec();
        let si = sol[self.dims.concept + self.dims.style_cross..].to_vec();
        Ok((c, sc, si))
    }
}
