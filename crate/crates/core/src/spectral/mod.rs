//! Spectral tools for graph density matrices.
//!
//! The density matrix of a graph is `ρ = L / tr(L)` with `L = I − Ã`. Its
//! rank-k Bures projection keeps the top-k eigenpairs and rescales the kept
//! eigenvalues to sum to one; [`SpectralBasis`] stores that projection along
//! with `θ̄ = log λ̄`, `tr(L)` and the mass `Σᵢ≤ₖ λᵢ` of the kept eigenvalues
//! in `ρ`, which is everything the perturbation needs.

mod lanczos;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::SymmetricEigen;

use crate::sparsela::{density_matrix, laplacian_of, SparseSym};
use crate::{Dense, Error, Result};

pub use lanczos::topk_eigs;

/// Default residual tolerance for [`topk_eigs`].
pub const DEFAULT_EIG_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralBasis {
    pub k: usize,
    /// `n × k`, orthonormal columns.
    pub u_bar: Dense,
    /// Rescaled top-k spectrum; positive, non-increasing, sums to one.
    pub lambda_bar: Vec<f64>,
    pub theta_bar: Vec<f64>,
    /// `tr(L)` of the Laplacian the density matrix came from.
    pub trace_l: f64,
    /// Sum of the kept eigenvalues of `ρ` before rescaling. A change `δ` of
    /// the rescaled spectrum moves `ρ` by `mass · Ū diag(δ) Ūᵀ`.
    pub mass: f64,
}

impl SpectralBasis {
    /// Top-k Bures projection of the density matrix of `a_tilde`.
    pub fn from_normalized_adjacency(
        a_tilde: &SparseSym,
        k: usize,
        tol: f64,
        seed: u64,
    ) -> Result<Self> {
        let (l, trace) = laplacian_of(a_tilde)?;
        let rho = density_matrix(&l, trace);
        let (values, vectors) = topk_eigs(&rho, k, tol, seed)?;
        lowrank_project(&values, &vectors, k, trace)
    }

    pub fn n(&self) -> usize {
        self.u_bar.nrows()
    }

    /// Factor `c` of the propagation change `−c Ū diag(δ) Ūᵀ`:
    /// `tr(L) · mass`.
    pub fn correction_scale(&self) -> f64 {
        self.trace_l * self.mass
    }

    /// Text artifact: a `k n trace_L mass` header, the `λ̄` line, then the
    /// `n` rows of `Ū`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{} {} {} {}",
            self.k,
            self.n(),
            self.trace_l,
            self.mass
        )
        .unwrap();
        let line = |vals: &mut dyn Iterator<Item = f64>| {
            vals.map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
        };
        writeln!(out, "{}", line(&mut self.lambda_bar.iter().copied())).unwrap();
        for i in 0..self.n() {
            writeln!(out, "{}", line(&mut self.u_bar.row(i).iter().copied())).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Parse {
            path: "<basis>".into(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty artifact"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 {
            return Err(bad(1, "header must be `k n trace_L mass`"));
        }
        let k: usize = h[0].parse().map_err(|_| bad(1, "bad k"))?;
        let n: usize = h[1].parse().map_err(|_| bad(1, "bad n"))?;
        let trace_l: f64 = h[2].parse().map_err(|_| bad(1, "bad trace_L"))?;
        let mass: f64 = h[3].parse().map_err(|_| bad(1, "bad mass"))?;
        let floats = |line: usize, s: &str, want: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = s
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad(line, "bad number")))
                .collect::<Result<_>>()?;
            if v.len() != want {
                return Err(bad(
                    line,
                    &format!("expected {want} values, found {}", v.len()),
                ));
            }
            Ok(v)
        };
        let (_, lam) = lines
            .next()
            .ok_or_else(|| bad(2, "missing spectrum line"))?;
        let lambda_bar = floats(2, lam, k)?;
        let mut u_bar = Dense::zeros(n, k);
        for i in 0..n {
            let (idx, row) = lines
                .next()
                .ok_or_else(|| bad(i + 3, "missing eigenvector row"))?;
            for (j, v) in floats(idx + 1, row, k)?.into_iter().enumerate() {
                u_bar[(i, j)] = v;
            }
        }
        let theta_bar = lambda_bar.iter().map(|l| l.ln()).collect();
        Ok(Self {
            k,
            u_bar,
            lambda_bar,
            theta_bar,
            trace_l,
            mass,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Rank-k Bures projection of a density matrix given its (partial)
/// spectrum in non-increasing order: keep the first `k` pairs and rescale the
/// kept eigenvalues to unit sum. The sum before rescaling is kept as `mass`.
pub fn lowrank_project(
    values: &[f64],
    vectors: &Dense,
    k: usize,
    trace_l: f64,
) -> Result<SpectralBasis> {
    if k == 0 || k > values.len() || k > vectors.ncols() {
        return Err(Error::Argument(format!(
            "rank {k} not available from {} eigenpairs",
            values.len().min(vectors.ncols())
        )));
    }
    let kept = &values[..k];
    if kept.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Argument("eigenvalues must be non-increasing".into()));
    }
    if !(kept[k - 1] > 0.0) {
        return Err(Error::Numerical(format!(
            "rank deficient: eigenvalue {k} is {}",
            kept[k - 1]
        )));
    }
    let total: f64 = kept.iter().sum();
    let lambda_bar: Vec<f64> = kept.iter().map(|l| l / total).collect();
    let theta_bar = lambda_bar.iter().map(|l| l.ln()).collect();
    Ok(SpectralBasis {
        k,
        u_bar: vectors.columns(0, k).into_owned(),
        lambda_bar,
        theta_bar,
        trace_l,
        mass: total,
    })
}

fn check_density(rho: &Dense, which: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if !rho.is_square() {
        return Err(Error::Domain(format!("{which} is not square")));
    }
    if (rho - rho.transpose()).abs().max() > 1e-10 {
        return Err(Error::Domain(format!("{which} is not symmetric")));
    }
    if (rho.trace() - 1.0).abs() > 1e-8 {
        return Err(Error::Domain(format!("{which} has trace {}", rho.trace())));
    }
    let eig = SymmetricEigen::new(rho.clone());
    let min = eig.eigenvalues.min();
    if min < -1e-10 {
        return Err(Error::Domain(format!("{which} has eigenvalue {min}")));
    }
    Ok(eig)
}

fn psd_sqrt(eig: &SymmetricEigen<f64, nalgebra::Dyn>) -> Dense {
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * Dense::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Bures distance `√(2(1 − tr √(ρ₁^{1/2} ρ₂ ρ₁^{1/2})))` between two dense
/// density matrices. Test-scale only.
pub fn bures_distance(rho1: &Dense, rho2: &Dense) -> Result<f64> {
    if rho1.shape() != rho2.shape() {
        return Err(Error::Argument("density matrices differ in size".into()));
    }
    let e1 = check_density(rho1, "first density matrix")?;
    check_density(rho2, "second density matrix")?;
    let s = psd_sqrt(&e1);
    let inner = &s * rho2 * &s;
    let inner = (&inner + inner.transpose()) * 0.5;
    let fidelity: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    Ok((2.0 * (1.0 - fidelity)).max(0.0).sqrt())
}

/// Hellinger distance `√Σ(√pᵢ − √qᵢ)²`, the commuting case of the Bures
/// distance.
pub fn hellinger_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Traces of the diagonal Bures metric blocks for a spectrum `λ`.
#[derive(Clone, Debug, PartialEq)]
pub struct BuresTraces {
    /// `tr G(λ) = ¼ (1ᵀλ⁻¹)(1ᵀλ)`.
    pub spectrum: f64,
    /// `tr G(uᵢ) = ½ Σⱼ (λᵢ − λⱼ)² / (λᵢ + λⱼ)`.
    pub per_vector: Vec<f64>,
    /// `tr G(U) = Σᵢ tr G(uᵢ)`.
    pub vectors: f64,
}

pub fn bures_trace_diagnostics(lambda: &[f64]) -> Result<BuresTraces> {
    if lambda.is_empty() {
        return Err(Error::Domain("empty spectrum".into()));
    }
    if let Some(bad) = lambda.iter().find(|&&l| !(l > 0.0)) {
        return Err(Error::Domain(format!("nonpositive eigenvalue {bad}")));
    }
    let total: f64 = lambda.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "spectrum sums to {total}, expected 1"
        )));
    }
    let per_vector: Vec<f64> = lambda
        .iter()
        .map(|&li| {
            0.5 * lambda
                .iter()
                .map(|&lj| (li - lj).powi(2) / (li + lj))
                .sum::<f64>()
        })
        .collect();
    let inv_sum: f64 = lambda.iter().map(|l| 1.0 / l).sum();
    Ok(BuresTraces {
        spectrum: 0.25 * inv_sum * total,
        vectors: per_vector.iter().sum(),
        per_vector,
    })
}

/// Von Neumann entropy of the sharpened spectrum `λ^ω / Σ λ^ω`, with
/// `0 log 0 = 0`.
///
/// # Panics
/// If `λ` has a negative entry or sums to zero, or `ω < 1`.
pub fn von_neumann_entropy(lambda: &[f64], omega: f64) -> f64 {
    assert!(omega >= 1.0, "omega must be >= 1");
    assert!(
        lambda.iter().all(|&l| l >= 0.0),
        "spectrum must be non-negative"
    );
    let max = lambda.iter().cloned().fold(0.0, f64::max);
    assert!(max > 0.0, "spectrum must have positive mass");
    let powered: Vec<f64> = lambda.iter().map(|l| (l / max).powf(omega)).collect();
    let z: f64 = powered.iter().sum();
    -powered
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|q| {
            let p = q / z;
            p * p.ln()
        })
        .sum::<f64>()
}
