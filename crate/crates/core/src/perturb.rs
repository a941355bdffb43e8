//! Low-rank spectral perturbation of the density matrix.
//!
//! A perturbation `φ ∈ ℝᵏ` moves the rescaled top-k spectrum in log
//! coordinates, `λ̄ → softmax(θ̄ + φ)`, and leaves the eigenvectors and the
//! rest of the spectrum alone. The change `δ = softmax(θ̄ + φ) − λ̄` sums to
//! zero. In `ρ` the kept eigenvalues carry total mass `s = Σᵢ≤ₖ λᵢ`, so they
//! become `s · softmax(θ̄ + φ)`: the perturbed density matrix
//! `ρ + s Ū diag(δ) Ūᵀ` keeps unit trace and stays positive semidefinite.
//! The perturbed propagation operator is
//!
//! ```text
//! I − tr(L) ρ(φ) = Ã − tr(L) s Ū diag(δ) Ūᵀ
//! ```
//!
//! which is applied in `O(knd)` without forming a dense matrix. A basis with
//! `mass = 1` applies `δ` to `ρ` unscaled instead.
//!
//! Perturbations are drawn as `φ = exp(−θ̄/2) ∘ ϕ ∘ ε` with `ϕ = r·sigmoid(ξ)`
//! and `ε` uniform on `[−½, ½]ᵏ` or standard normal. The `exp(−θ̄/2)` factor
//! makes the draws isotropic with respect to the Bures metric on the
//! spectrum.

use std::str::FromStr;

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::sparsela::{spmm, SparseSym};
use crate::spectral::SpectralBasis;
use crate::{Dense, Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NoiseKind {
    #[default]
    Uniform,
    Gaussian,
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "gaussian" => Ok(Self::Gaussian),
            other => Err(Error::Argument(format!("unknown noise kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationParams {
    /// Unconstrained shape parameters; `ϕ = radius · sigmoid(ξ)`.
    pub xi: Vec<f64>,
    pub radius: f64,
    /// Draws per optimization step.
    pub draws: usize,
    pub noise: NoiseKind,
}

impl PerturbationParams {
    /// Shape parameters start at `ξ = 0`, i.e. `ϕ = radius / 2`.
    ///
    /// A zero radius is accepted and switches the perturbation off.
    pub fn new(k: usize, radius: f64, draws: usize, noise: NoiseKind) -> Result<Self> {
        if k == 0 {
            return Err(Error::Argument("rank k must be at least 1".into()));
        }
        if draws == 0 {
            return Err(Error::Argument(
                "need at least one perturbation draw".into(),
            ));
        }
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::Argument(format!(
                "radius must be finite and >= 0, got {radius}"
            )));
        }
        Ok(Self {
            xi: vec![0.0; k],
            radius,
            draws,
            noise,
        })
    }

    pub fn k(&self) -> usize {
        self.xi.len()
    }

    /// `ϕ = radius · sigmoid(ξ)`.
    pub fn shape(&self) -> Vec<f64> {
        self.xi.iter().map(|&x| self.radius * sigmoid(x)).collect()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `m × k` independent noise entries drawn from `rng`.
pub fn draw_noise_with(rng: &mut impl Rng, k: usize, m: usize, kind: NoiseKind) -> Dense {
    let mut out = Dense::zeros(m, k);
    // Row-major fill so that row `j` is the `j`-th draw in stream order.
    for j in 0..m {
        for i in 0..k {
            out[(j, i)] = match kind {
                NoiseKind::Uniform => rng.random::<f64>() - 0.5,
                NoiseKind::Gaussian => StandardNormal.sample(rng),
            };
        }
    }
    out
}

/// `m × k` noise matrix; each row is one draw of `ε`.
pub fn draw_noise(k: usize, m: usize, kind: NoiseKind, seed: u64) -> Dense {
    draw_noise_with(&mut ChaCha8Rng::seed_from_u64(seed), k, m, kind)
}

/// `φᵢ = exp(−θ̄ᵢ/2) · radius·sigmoid(ξᵢ) · εᵢ`.
pub fn perturbation_vector(
    params: &PerturbationParams,
    theta_bar: &[f64],
    noise: &[f64],
) -> Vec<f64> {
    assert_eq!(params.k(), theta_bar.len(), "ξ and θ̄ differ in length");
    assert_eq!(noise.len(), theta_bar.len(), "noise and θ̄ differ in length");
    params
        .shape()
        .iter()
        .zip(theta_bar)
        .zip(noise)
        .map(|((s, t), e)| (-t / 2.0).exp() * s * e)
        .collect()
}

fn softmax(s: &[f64]) -> Vec<f64> {
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Perturbed top-k spectrum `softmax(θ̄ + φ)`.
pub fn perturbed_spectrum(theta_bar: &[f64], phi: &[f64]) -> Vec<f64> {
    let s: Vec<f64> = theta_bar.iter().zip(phi).map(|(t, p)| t + p).collect();
    softmax(&s)
}

/// `δ = softmax(θ̄ + φ) − λ̄`. Exactly zero when `φ` is.
pub fn spectrum_delta(theta_bar: &[f64], lambda_bar: &[f64], phi: &[f64]) -> Vec<f64> {
    assert_eq!(theta_bar.len(), lambda_bar.len());
    assert_eq!(theta_bar.len(), phi.len());
    if phi.iter().all(|&p| p == 0.0) {
        return vec![0.0; phi.len()];
    }
    perturbed_spectrum(theta_bar, phi)
        .iter()
        .zip(lambda_bar)
        .map(|(p, l)| p - l)
        .collect()
}

fn check_dims(a: &SparseSym, basis: &SpectralBasis, delta: &[f64], x: &Dense) -> Result<()> {
    if basis.n() != a.n() || x.nrows() != a.n() {
        return Err(Error::Argument(format!(
            "dimension mismatch: operator {}, basis {}, input {} rows",
            a.n(),
            basis.n(),
            x.nrows()
        )));
    }
    if delta.len() != basis.k {
        return Err(Error::Argument(format!(
            "δ has length {}, basis rank is {}",
            delta.len(),
            basis.k
        )));
    }
    Ok(())
}

/// `ÃX − c Ū diag(δ) ŪᵀX` with `c` the basis' correction scale. With
/// `δ = 0` this is exactly `ÃX`.
pub fn apply_perturbed_propagation(
    a_tilde: &SparseSym,
    basis: &SpectralBasis,
    delta: &[f64],
    x: &Dense,
) -> Result<Dense> {
    check_dims(a_tilde, basis, delta, x)?;
    let mut out = spmm(a_tilde, x)?;
    if delta.iter().all(|&d| d == 0.0) {
        return Ok(out);
    }
    let mut proj = basis.u_bar.tr_mul(x);
    for (j, d) in delta.iter().enumerate() {
        let mut row = proj.row_mut(j);
        row *= -basis.correction_scale() * d;
    }
    out.gemm(1.0, &basis.u_bar, &proj, 1.0);
    Ok(out)
}

/// Gradient of a loss with respect to `δ` through one application
/// `Y = ÃX − c Ū diag(δ) ŪᵀX`, given `g = ∂ℓ/∂Y`:
/// `∂ℓ/∂δⱼ = −c Σ (Ūᵀg)ⱼ,· (ŪᵀX)ⱼ,·`.
pub fn propagation_delta_grad(basis: &SpectralBasis, x: &Dense, g: &Dense) -> Vec<f64> {
    let ux = basis.u_bar.tr_mul(x);
    let ug = basis.u_bar.tr_mul(g);
    (0..basis.k)
        .map(|j| -basis.correction_scale() * ux.row(j).dot(&ug.row(j)))
        .collect()
}

/// Chain `∂ℓ/∂δ` back to `∂ℓ/∂ξ` for one draw `noise`.
pub fn xi_gradient(
    params: &PerturbationParams,
    theta_bar: &[f64],
    noise: &[f64],
    grad_delta: &[f64],
) -> Vec<f64> {
    let phi = perturbation_vector(params, theta_bar, noise);
    let p = perturbed_spectrum(theta_bar, &phi);
    let pg: f64 = p.iter().zip(grad_delta).map(|(a, b)| a * b).sum();
    (0..params.k())
        .map(|i| {
            let grad_phi = p[i] * (grad_delta[i] - pg);
            let s = sigmoid(params.xi[i]);
            let dphi_dxi = (-theta_bar[i] / 2.0).exp() * params.radius * s * (1.0 - s) * noise[i];
            grad_phi * dphi_dxi
        })
        .collect()
}

/// Dense `ρ + mass · Ū diag(δ) Ūᵀ`. Test scale.
pub fn perturbed_density_dense(basis: &SpectralBasis, rho: &Dense, delta: &[f64]) -> Dense {
    let scaled = Dense::from_fn(basis.n(), basis.k, |i, j| {
        basis.u_bar[(i, j)] * delta[j] * basis.mass
    });
    let mut out = rho.clone();
    out.gemm(1.0, &scaled, &basis.u_bar.transpose(), 1.0);
    out
}

/// Smallest eigenvalue of a dense symmetric matrix, for checking how far a
/// perturbed density matrix strays from positive semidefiniteness.
pub fn min_eigenvalue(m: &Dense) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}
