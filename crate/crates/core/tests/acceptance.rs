//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL`/`SKIP`
//! line with the measured quantity.
//!
//! Checks that need the citation datasets look for containers under
//! `$FBGCN_DATA/{cora,citeseer,pubmed}` (default: `data/` at the workspace
//! root) and report `SKIP` when they are missing.

use std::io::Write;
use std::path::PathBuf;

use nalgebra::{DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use fbgcn::gcnnet::{
    backward, forward, masked_xent, train, DropoutMasks, GcnModel, ModelKind, Propagation,
    TrainConfig,
};
use fbgcn::geometry::{
    embedding_observed_fim, extrinsic_fim_weights, kl_stress, phi_scores, EmbeddingProblem,
    FimInput,
};
use fbgcn::graphstore::{load_dataset, synthetic_graph, Dataset, SyntheticKind};
use fbgcn::perturb::{
    apply_perturbed_propagation, draw_noise, min_eigenvalue, perturbation_vector,
    perturbed_density_dense, spectrum_delta, xi_gradient, NoiseKind, PerturbationParams,
};
use fbgcn::proximity::highorder_preprocess;
use fbgcn::sparsela::{
    density_matrix, laplacian_of, renormalize_adjacency, sparsity, spmm, CsrMatrix, SparseSym,
};
use fbgcn::spectral::{
    bures_distance, bures_trace_diagnostics, hellinger_distance, lowrank_project,
    von_neumann_entropy, SpectralBasis,
};
use fbgcn::Dense;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
    /// The stated claim is false; the detail carries the evidence. The
    /// surrounding test asserts the evidence and the corrected statement.
    Refuted(String),
}

fn report(name: &str, outcome: Outcome) {
    let (tag, detail, failed) = match &outcome {
        Outcome::Pass(d) => ("PASS", d, false),
        Outcome::Fail(d) => ("FAIL", d, true),
        Outcome::Skip(d) => ("SKIP", d, false),
        Outcome::Refuted(d) => ("FAIL: claim refuted", d, false),
    };
    // Written to the raw handle so the line shows up without --nocapture.
    let mut out = std::io::stdout().lock();
    writeln!(out, "acceptance [{tag}] {name}: {detail}").unwrap();
    out.flush().unwrap();
    assert!(!failed, "{name}: {detail}");
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

/// `‖a − b‖∞ / ‖b‖∞`.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let den = b.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

fn data_root() -> PathBuf {
    std::env::var_os("FBGCN_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn fixture(name: &str) -> Option<Dataset> {
    let dir = data_root().join(name);
    dir.join("meta.txt")
        .exists()
        .then(|| load_dataset(&dir).expect("fixture must load"))
}

fn random_spectrum(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n)
        .map(|_| -(rng.random::<f64>().max(1e-300)).ln())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Dense {
    let g = Dense::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

fn density_from(u: &Dense, spectrum: &[f64]) -> Dense {
    let d = Dense::from_diagonal(&DVector::from_column_slice(spectrum));
    let m = u * d * u.transpose();
    (&m + m.transpose()) * 0.5
}

/// Dense eigendecomposition with eigenvalues in non-increasing order.
fn sorted_eig(m: &Dense) -> (Vec<f64>, Dense) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = Dense::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

const TABLE1: [(&str, usize, usize, usize, &str, f64); 3] = [
    ("cora", 2708, 5278, 78, "0.18%", 0.0996),
    ("citeseer", 3327, 4552, 438, "0.11%", 0.0301),
    ("pubmed", 19717, 44324, 1, "0.03%", 0.0331),
];

#[test]
fn dataset_statistics() {
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, nodes, links, comps, sp, _) in TABLE1 {
        let Some(ds) = fixture(name) else {
            lines.push(format!("{name} missing"));
            continue;
        };
        let s = ds.stats();
        let got = format!("{:.2}%", 100.0 * s.sparsity);
        let good = s.nodes == nodes && s.links == links && s.components == comps && got == sp;
        ok &= good;
        lines.push(format!(
            "{name} {} {} {} {got}",
            s.nodes, s.links, s.components
        ));
    }
    let outcome = if lines.iter().all(|l| l.ends_with("missing")) {
        Outcome::Skip(format!(
            "no dataset containers under {}",
            data_root().display()
        ))
    } else {
        check(ok, lines.join("; "))
    };
    report("dataset statistics", outcome);
}

#[test]
fn proximity_sparsity() {
    let mut lines = Vec::new();
    let mut ok = true;
    let mut any = false;
    for (name, .., target) in TABLE1 {
        let Some(ds) = fixture(name) else { continue };
        any = true;
        let p = highorder_preprocess(&ds.adjacency, 5, 1e-4).unwrap();
        let s = sparsity(&p);
        ok &= (s - target).abs() <= 0.003;
        lines.push(format!(
            "{name} {:.2}% (target {:.2}% ± 0.30)",
            100.0 * s,
            100.0 * target
        ));
    }
    let outcome = if any {
        check(ok, lines.join("; "))
    } else {
        Outcome::Skip(format!(
            "no dataset containers under {}",
            data_root().display()
        ))
    };
    report("order-5 proximity sparsity", outcome);
}

#[test]
fn training_reproduction() {
    let Some(cora) = fixture("cora") else {
        report(
            "canonical-split training",
            Outcome::Skip(format!(
                "cora container not found under {}",
                data_root().display()
            )),
        );
        return;
    };
    let split = cora
        .canonical_split
        .clone()
        .expect("cora has a canonical split");
    let seeds = 10u64;
    let mean_acc = |model: ModelKind, highorder: Option<(usize, f64)>| -> f64 {
        (0..seeds)
            .map(|seed| {
                let cfg = TrainConfig {
                    model,
                    highorder,
                    seed,
                    ..TrainConfig::default()
                };
                train(&cora, &split, &cfg).unwrap().test_acc
            })
            .sum::<f64>()
            / seeds as f64
            * 100.0
    };
    let gcn = mean_acc(ModelKind::Gcn, None);
    let fisher = mean_acc(ModelKind::FisherGcn, None);
    let gcn_t = mean_acc(ModelKind::Gcn, Some((5, 1e-4)));
    let fisher_t = mean_acc(ModelKind::FisherGcn, Some((5, 1e-4)));
    let ok = (80.4..=82.4).contains(&gcn) && fisher >= gcn && fisher_t >= gcn_t;
    report(
        "canonical-split training",
        check(
            ok,
            format!("GCN {gcn:.2}, FisherGCN {fisher:.2}, GCN^T {gcn_t:.2}, FisherGCN^T {fisher_t:.2} over {seeds} seeds"),
        ),
    );
}

struct GradInstance {
    a: SparseSym,
    x: CsrMatrix,
    labels: Vec<Option<usize>>,
    train: Vec<usize>,
    basis: SpectralBasis,
    params: PerturbationParams,
    noise: Dense,
    masks: Vec<DropoutMasks>,
    model: GcnModel,
}

impl GradInstance {
    fn new(rep: u64) -> Self {
        let n = 10;
        let k = 3;
        let draws = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + rep);
        let g = synthetic_graph(SyntheticKind::TwoBlocks, n, rep).unwrap();
        let a = renormalize_adjacency(&g.adjacency);
        let basis = SpectralBasis::from_normalized_adjacency(&a, k, 1e-12, rep).unwrap();
        let x = CsrMatrix::from_dense(&Dense::from_fn(n, 6, |_, _| {
            if rng.random::<f64>() < 0.4 {
                0.0
            } else {
                rng.random::<f64>()
            }
        }));
        let mut params = PerturbationParams::new(k, 0.5, draws, NoiseKind::Uniform).unwrap();
        params.xi = (0..k).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let noise = draw_noise(k, draws, NoiseKind::Uniform, rep);
        let masks = (0..draws)
            .map(|_| DropoutMasks::sample(&mut rng, x.nnz(), n, 5, 0.5))
            .collect();
        let model = GcnModel::new(6, 5, 2, rng.random(), rng.random());
        let labels = g.labels.clone();
        let train = vec![0, 2, 4, 5, 7, 9];
        Self {
            a,
            x,
            labels,
            train,
            basis,
            params,
            noise,
            masks,
            model,
        }
    }

    fn deltas(&self, params: &PerturbationParams) -> Vec<Vec<f64>> {
        (0..params.draws)
            .map(|b| {
                let eps: Vec<f64> = self.noise.row(b).iter().copied().collect();
                let phi = perturbation_vector(params, &self.basis.theta_bar, &eps);
                spectrum_delta(&self.basis.theta_bar, &self.basis.lambda_bar, &phi)
            })
            .collect()
    }

    fn loss(&self, model: &GcnModel, params: &PerturbationParams) -> f64 {
        let deltas = self.deltas(params);
        deltas
            .iter()
            .zip(&self.masks)
            .map(|(d, m)| {
                let prop = Propagation::Perturbed {
                    a_tilde: &self.a,
                    basis: &self.basis,
                    delta: d,
                };
                let c = forward(model, &self.x, prop, Some(m)).unwrap();
                masked_xent(&c.logits, &self.labels, &self.train).unwrap()
            })
            .sum::<f64>()
            / deltas.len() as f64
    }

    /// Analytic `(∂W1, ∂W2, ∂ξ)` of the branch-averaged loss.
    fn gradients(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let m = self.params.draws as f64;
        let mut g1 = vec![0.0; self.model.w1.len()];
        let mut g2 = vec![0.0; self.model.w2.len()];
        let mut gx = vec![0.0; self.params.k()];
        for (b, (d, mask)) in self
            .deltas(&self.params)
            .iter()
            .zip(&self.masks)
            .enumerate()
        {
            let prop = Propagation::Perturbed {
                a_tilde: &self.a,
                basis: &self.basis,
                delta: d,
            };
            let c = forward(&self.model, &self.x, prop, Some(mask)).unwrap();
            let (_, gr) = backward(&self.model, &c, prop, &self.labels, &self.train).unwrap();
            let eps: Vec<f64> = self.noise.row(b).iter().copied().collect();
            let xi = xi_gradient(
                &self.params,
                &self.basis.theta_bar,
                &eps,
                gr.delta.as_ref().unwrap(),
            );
            for (acc, v) in g1.iter_mut().zip(gr.w1.iter()) {
                *acc += v / m;
            }
            for (acc, v) in g2.iter_mut().zip(gr.w2.iter()) {
                *acc += v / m;
            }
            for (acc, v) in gx.iter_mut().zip(xi) {
                *acc += v / m;
            }
        }
        (g1, g2, gx)
    }
}

#[test]
fn backward_gradients_match_finite_differences() {
    let h = 1e-5;
    let mut worst = [0.0f64; 3];
    for rep in 0..20 {
        let t = GradInstance::new(rep);
        let (g1, g2, gx) = t.gradients();
        let fd_weights = |layer: usize| -> Vec<f64> {
            let len = if layer == 1 {
                t.model.w1.len()
            } else {
                t.model.w2.len()
            };
            (0..len)
                .map(|i| {
                    let mut up = t.model.clone();
                    let mut dn = t.model.clone();
                    if layer == 1 {
                        up.w1.as_mut_slice()[i] += h;
                        dn.w1.as_mut_slice()[i] -= h;
                    } else {
                        up.w2.as_mut_slice()[i] += h;
                        dn.w2.as_mut_slice()[i] -= h;
                    }
                    (t.loss(&up, &t.params) - t.loss(&dn, &t.params)) / (2.0 * h)
                })
                .collect()
        };
        let fd_xi: Vec<f64> = (0..t.params.k())
            .map(|i| {
                let mut up = t.params.clone();
                let mut dn = t.params.clone();
                up.xi[i] += h;
                dn.xi[i] -= h;
                (t.loss(&t.model, &up) - t.loss(&t.model, &dn)) / (2.0 * h)
            })
            .collect();
        worst[0] = worst[0].max(rel_err(&g1, &fd_weights(1)));
        worst[1] = worst[1].max(rel_err(&g2, &fd_weights(2)));
        worst[2] = worst[2].max(rel_err(&gx, &fd_xi));
    }
    report(
        "backward gradients vs finite differences",
        check(
            worst.iter().all(|&e| e <= 1e-5),
            format!(
                "max rel err W1 {:.1e}, W2 {:.1e}, xi {:.1e} over 20 instances (tol 1e-5)",
                worst[0], worst[1], worst[2]
            ),
        ),
    );
}

#[test]
fn lowrank_projection_is_bures_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 6;
    let mut violations = 0usize;
    let mut candidates = 0usize;
    for _ in 0..50 {
        let u = random_orthogonal(&mut rng, n);
        let lam = random_spectrum(&mut rng, n);
        let rho = density_from(&u, &lam);
        let (vals, vecs) = sorted_eig(&rho);
        for k in 1..=3 {
            let b = lowrank_project(&vals, &vecs, k, 1.0).unwrap();
            let mut sel = vec![0.0; n];
            sel[..k].copy_from_slice(&b.lambda_bar);
            let best = bures_distance(&rho, &density_from(&vecs, &sel)).unwrap();
            // Every k-subset of the eigenbasis with the matching rescaled weights.
            for mask in 0u32..(1 << n) {
                if mask.count_ones() as usize != k {
                    continue;
                }
                let total: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| vals[i]).sum();
                let w: Vec<f64> = (0..n)
                    .map(|i| {
                        if mask >> i & 1 == 1 {
                            vals[i] / total
                        } else {
                            0.0
                        }
                    })
                    .collect();
                candidates += 1;
                if bures_distance(&rho, &density_from(&vecs, &w)).unwrap() < best - 1e-12 {
                    violations += 1;
                }
            }
            // Random rank-k density matrices, in and out of the eigenbasis.
            for trial in 0..40 {
                let basis = if trial % 2 == 0 {
                    vecs.clone()
                } else {
                    random_orthogonal(&mut rng, n)
                };
                let mut w = vec![0.0; n];
                let r = random_spectrum(&mut rng, k);
                w[..k].copy_from_slice(&r);
                candidates += 1;
                if bures_distance(&rho, &density_from(&basis, &w)).unwrap() < best - 1e-12 {
                    violations += 1;
                }
            }
        }
    }
    let mut hell_err = 0.0f64;
    for _ in 0..200 {
        let u = random_orthogonal(&mut rng, n);
        let p = random_spectrum(&mut rng, n);
        let q = random_spectrum(&mut rng, n);
        let bd = bures_distance(&density_from(&u, &p), &density_from(&u, &q)).unwrap();
        hell_err = hell_err.max((bd - hellinger_distance(&p, &q)).abs());
    }
    report(
        "rank-k projection optimality and Hellinger agreement",
        check(
            violations == 0 && hell_err <= 1e-12,
            format!("{violations} of {candidates} candidates closer than the projection; max |Bures − Hellinger| {hell_err:.1e}"),
        ),
    );
}

/// The stated bounds `tr G(uᵢ) ≤ ½` and `tr G(U) ≤ n/2` do not hold for
/// general spectra: with λ = (0.98, 0.01, 0.01),
/// `tr G(u₁) = ½ · 2 · 0.97²/0.99 ≈ 0.950`. This check reports how often
/// they are violated, confirms the counterexample, and asserts the bounds
/// that do hold: `tr G(uᵢ) ≤ ½ Σⱼ |λᵢ − λⱼ|`, `tr G(U) ≤ n − 1` and
/// `tr G(λ) ≥ n²/4` with equality at the uniform spectrum.
#[test]
fn bures_trace_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut stated_vec, mut stated_sum, mut weaker, mut cs) = (0usize, 0usize, 0usize, 0usize);
    for _ in 0..1000 {
        let n = rng.random_range(2..=30);
        let lam = random_spectrum(&mut rng, n);
        let t = bures_trace_diagnostics(&lam).unwrap();
        let nf = n as f64;
        stated_vec += usize::from(t.per_vector.iter().any(|&v| v > 0.5 + 1e-12));
        stated_sum += usize::from(t.vectors > nf / 2.0 + 1e-12);
        let abs_dev = |i: usize| lam.iter().map(|l| (lam[i] - l).abs()).sum::<f64>() / 2.0;
        weaker += usize::from(
            (0..n).any(|i| t.per_vector[i] > abs_dev(i) + 1e-12) || t.vectors > nf - 1.0 + 1e-12,
        );
        cs += usize::from(t.spectrum < nf * nf / 4.0 * (1.0 - 1e-12));
    }
    let mut eq_err = 0.0f64;
    for n in 1..=40 {
        let t = bures_trace_diagnostics(&vec![1.0 / n as f64; n]).unwrap();
        eq_err = eq_err.max((t.spectrum - (n * n) as f64 / 4.0).abs());
    }
    let counter = bures_trace_diagnostics(&[0.98, 0.01, 0.01]).unwrap();
    let expected = 0.97f64 * 0.97 / 0.99;
    let refuted = (counter.per_vector[0] - expected).abs() < 1e-12 && counter.per_vector[0] > 0.5;

    assert_eq!(weaker, 0, "corrected trace bounds violated");
    assert_eq!(cs, 0, "Cauchy-Schwarz bound violated");
    assert!(eq_err <= 1e-9);
    assert!(refuted);
    report(
        "Bures metric trace bounds",
        Outcome::Refuted(format!(
            "tr G(λ) ≥ n²/4 holds on 1000/1000 spectra (uniform equality error {eq_err:.1e}); \
             tr G(u_i) ≤ 1/2 violated on {stated_vec}/1000 and tr G(U) ≤ n/2 on {stated_sum}/1000; \
             counterexample λ = (0.98, 0.01, 0.01) gives tr G(u_1) = {:.4}; \
             corrected bounds ½Σ|λi−λj| and n−1 hold on 1000/1000",
            counter.per_vector[0]
        )),
    );
}

#[test]
fn extrinsic_information_closed_form() {
    let mut worst = 0.0f64;
    let mut min_eig = f64::INFINITY;
    for rep in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + rep);
        let n = 8;
        let g = synthetic_graph(SyntheticKind::TwoBlocks, n, 50 + rep).unwrap();
        let a = renormalize_adjacency(&g.adjacency);
        let basis = SpectralBasis::from_normalized_adjacency(&a, 3, 1e-12, rep).unwrap();
        let ad = a.to_dense();
        let x = Dense::from_fn(n, 4, |_, _| rng.random::<f64>());
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let nodes: Vec<usize> = (0..n).collect();
        let model = GcnModel::new(4, 5, 3, rng.random(), rng.random());
        let dir: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        let input = FimInput {
            a_tilde: &ad,
            features: &x,
            labels: &labels,
            nodes: &nodes,
        };
        let scores = phi_scores(&model, &input, &basis, &dir).unwrap();

        let h = 1e-5;
        let logp = |s: f64, i: usize| {
            let phi: Vec<f64> = dir.iter().map(|d| d * s).collect();
            let delta = spectrum_delta(&basis.theta_bar, &basis.lambda_bar, &phi);
            let prop = Propagation::Perturbed {
                a_tilde: &a,
                basis: &basis,
                delta: &delta,
            };
            let xs = CsrMatrix::from_dense(&x);
            let c = forward(&model, &xs, prop, None).unwrap();
            let l = vec![Some(labels[i])];
            let row = Dense::from_fn(1, 3, |_, j| c.logits[(i, j)]);
            -masked_xent(&row, &l, &[0]).unwrap()
        };
        let fd: Vec<f64> = nodes
            .iter()
            .map(|&i| (logp(h, i) - logp(-h, i)) / (2.0 * h))
            .collect();
        worst = worst.max(rel_err(&scores, &fd));
        for layer in [1, 2] {
            let gw = extrinsic_fim_weights(&model, &input, layer).unwrap();
            let e = SymmetricEigen::new(gw.clone()).eigenvalues.min()
                / gw.abs().max().max(f64::MIN_POSITIVE);
            min_eig = min_eig.min(e);
        }
    }
    report(
        "extrinsic Fisher information closed form",
        check(
            worst <= 1e-4 && min_eig >= -1e-10,
            format!("max rel err of per-node scores {worst:.1e} (tol 1e-4); min relative eigenvalue of weight FIM {min_eig:.1e}"),
        ),
    );
}

#[test]
fn embedding_information_is_hessian() {
    let mut worst = 0.0f64;
    let h = 1e-4;
    for rep in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + rep);
        let n = 6;
        let mut w = Dense::from_fn(n, n, |i, j| if i == j { 0.0 } else { rng.random::<f64>() });
        for i in 0..n {
            let s = w.row(i).sum();
            let mut r = w.row_mut(i);
            r /= s;
        }
        let y = Dense::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let prob = EmbeddingProblem::new(w, y).unwrap();
        for k in 0..2 {
            let analytic = embedding_observed_fim(&prob, k);
            let f = |a: usize, sa: f64, b: usize, sb: f64| {
                let mut q = prob.clone();
                q.y[(a, k)] += sa;
                q.y[(b, k)] += sb;
                kl_stress(&q)
            };
            let num = Dense::from_fn(n, n, |a, b| {
                (f(a, h, b, h) - f(a, h, b, -h) - f(a, -h, b, h) + f(a, -h, b, -h)) / (4.0 * h * h)
            });
            worst = worst.max(rel_err(analytic.as_slice(), num.as_slice()));
        }
    }
    let two = EmbeddingProblem::new(
        Dense::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        Dense::from_row_slice(2, 2, &[0.4, -1.3, -0.7, 2.1]),
    )
    .unwrap();
    let two_max = (0..2)
        .map(|k| embedding_observed_fim(&two, k).abs().max())
        .fold(0.0, f64::max);
    report(
        "embedding observed Fisher information",
        check(
            worst <= 1e-4 && two_max < 1e-14,
            format!("max rel err vs numerical Hessian {worst:.1e} (tol 1e-4); two-node block max |entry| {two_max:.1e}"),
        ),
    );
}

#[test]
fn perturbation_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = synthetic_graph(SyntheticKind::TwoBlocks, 24, 3).unwrap();
    let a = renormalize_adjacency(&g.adjacency);
    let (l, tr) = laplacian_of(&a).unwrap();
    let rho = density_matrix(&l, tr).to_dense();
    let basis = SpectralBasis::from_normalized_adjacency(&a, 6, 1e-12, 0).unwrap();
    let mut trace_err = 0.0f64;
    let mut lambda_min = f64::INFINITY;
    for _ in 0..1000 {
        let mut p =
            PerturbationParams::new(6, rng.random::<f64>() * 2.0, 1, NoiseKind::Gaussian).unwrap();
        p.xi = (0..6)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * 3.0)
            .collect();
        let eps: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
        let phi = perturbation_vector(&p, &basis.theta_bar, &eps);
        let delta = spectrum_delta(&basis.theta_bar, &basis.lambda_bar, &phi);
        let m = perturbed_density_dense(&basis, &rho, &delta);
        trace_err = trace_err.max((m.trace() - 1.0).abs());
        lambda_min = lambda_min.min(min_eigenvalue(&m));
    }

    // Zero perturbation: forward pass and full training replay plain GCN bit for bit.
    let x = g.features.row_normalized();
    let model = GcnModel::new(24, 8, 2, 1, 2);
    let masks = DropoutMasks::sample(&mut rng, x.nnz(), 24, 8, 0.5);
    let zero = vec![0.0; 6];
    let plain = forward(&model, &x, Propagation::Plain(&a), Some(&masks))
        .unwrap()
        .logits;
    let pert = forward(
        &model,
        &x,
        Propagation::Perturbed {
            a_tilde: &a,
            basis: &basis,
            delta: &zero,
        },
        Some(&masks),
    )
    .unwrap()
    .logits;
    let split = fbgcn::graphstore::Split {
        train: vec![0, 1, 2, 12, 13, 14],
        valid: (3..8).chain(15..20).collect(),
        test: (8..12).chain(20..24).collect(),
    };
    let base = TrainConfig {
        hidden: 8,
        max_epochs: 40,
        k: 6,
        ..TrainConfig::default()
    };
    let gcn = train(&g, &split, &base).unwrap();
    let fisher = train(
        &g,
        &split,
        &TrainConfig {
            model: ModelKind::FisherGcn,
            radius: 0.0,
            draws: 1,
            ..base.clone()
        },
    )
    .unwrap();
    let bitwise = plain == pert && gcn.history == fisher.history && gcn.model.w1 == fisher.model.w1;

    let mut prop_err = 0.0f64;
    for (n, seed) in [(10, 1u64), (30, 2), (50, 3)] {
        let gg = synthetic_graph(SyntheticKind::TwoBlocks, n, seed).unwrap();
        let aa = renormalize_adjacency(&gg.adjacency);
        let (ll, tt) = laplacian_of(&aa).unwrap();
        let rr = density_matrix(&ll, tt).to_dense();
        let (vals, vecs) = sorted_eig(&rr);
        let bb = lowrank_project(&vals, &vecs, 5, tt).unwrap();
        for _ in 0..10 {
            let mut p = PerturbationParams::new(5, 0.5, 1, NoiseKind::Uniform).unwrap();
            p.xi = (0..5).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let eps: Vec<f64> = (0..5).map(|_| rng.random::<f64>() - 0.5).collect();
            let delta = spectrum_delta(
                &bb.theta_bar,
                &bb.lambda_bar,
                &perturbation_vector(&p, &bb.theta_bar, &eps),
            );
            let xx = Dense::from_fn(n, 7, |_, _| rng.sample::<f64, _>(StandardNormal));
            let fast = apply_perturbed_propagation(&aa, &bb, &delta, &xx).unwrap();
            let oracle =
                (Dense::identity(n, n) - perturbed_density_dense(&bb, &rr, &delta) * tt) * &xx;
            prop_err = prop_err.max((fast - oracle).abs().max());
        }
        let zero_fast =
            apply_perturbed_propagation(&aa, &bb, &[0.0; 5], &Dense::identity(n, n)).unwrap();
        prop_err = prop_err.max(
            (zero_fast - spmm(&aa, &Dense::identity(n, n)).unwrap())
                .abs()
                .max(),
        );
    }
    report(
        "perturbation invariants",
        check(
            trace_err <= 1e-12 && bitwise && prop_err < 1e-10,
            format!("max |tr ρ(φ) − 1| {trace_err:.1e} over 1000 draws (min eigenvalue {lambda_min:.1e}); zero-perturbation replay bitwise: {bitwise}; max propagation error vs dense {prop_err:.1e}"),
        ),
    );
}

#[test]
fn entropy_is_monotone_in_sharpening() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let omegas = [1.0, 1.5, 2.0, 4.0, 8.0];
    let mut bad = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..=50);
        let lam = random_spectrum(&mut rng, n);
        let h: Vec<f64> = omegas
            .iter()
            .map(|&w| von_neumann_entropy(&lam, w))
            .collect();
        if h.windows(2).any(|p| p[1] > p[0] + 1e-12) {
            bad += 1;
        }
    }
    report(
        "entropy monotonicity",
        check(
            bad == 0,
            format!("{bad} of 100 spectra with increasing entropy over ω ∈ {omegas:?}"),
        ),
    );
}
