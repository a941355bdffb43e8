//! GCN and FisherGCN training loops.
//!
//! Each epoch evaluates `M` branches (one for plain GCN), each with its own
//! dropout masks and, for FisherGCN, its own noise draw `ε`. The branch
//! losses and gradients are averaged in branch order; the weights take one
//! Adam descent step and the perturbation shape `ξ` one Adam ascent step.
//!
//! Randomness comes from two independent streams seeded from the run seed:
//! one yields a dropout seed per branch, the other the noise. A FisherGCN
//! run with `M = 1` and zero radius therefore replays plain GCN exactly.

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    adam_step, backward, forward, masked_accuracy, masked_xent, Adam, DropoutMasks, GcnModel,
    Gradients, Propagation,
};
use crate::graphstore::{Dataset, Split};
use crate::perturb::{
    draw_noise_with, perturbation_vector, spectrum_delta, xi_gradient, NoiseKind,
    PerturbationParams,
};
use crate::proximity::highorder_preprocess;
use crate::sparsela::{renormalize_adjacency, CsrMatrix, SparseSym};
use crate::spectral::{SpectralBasis, DEFAULT_EIG_TOL};
use crate::{Dense, Error, Result};

const WARMUP: usize = 100;
const SHORT_WINDOW: usize = 10;
const LONG_WINDOW: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Gcn,
    FisherGcn,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(Self::Gcn),
            "fishergcn" => Ok(Self::FisherGcn),
            other => Err(Error::Argument(format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub hidden: usize,
    pub dropout: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Perturbation draws per epoch (FisherGCN only).
    pub draws: usize,
    pub radius: f64,
    pub k: usize,
    pub noise: NoiseKind,
    pub model: ModelKind,
    /// `(order, threshold)` of the random-walk proximity preprocessing.
    pub highorder: Option<(usize, f64)>,
    pub early_stopping: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            hidden: 64,
            dropout: 0.5,
            weight_decay: 5e-4,
            max_epochs: 500,
            draws: 5,
            radius: 0.1,
            k: 10,
            noise: NoiseKind::Uniform,
            model: ModelKind::Gcn,
            highorder: None,
            early_stopping: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        if self.hidden == 0 || self.max_epochs == 0 {
            return bad("hidden size and epoch count must be positive".into());
        }
        if self.draws == 0 {
            return bad("need at least one perturbation draw".into());
        }
        if self.model == ModelKind::FisherGcn && self.k == 0 {
            return bad("rank k must be at least 1".into());
        }
        if !(self.radius >= 0.0) {
            return bad(format!("radius must be >= 0, got {}", self.radius));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

impl fmt::Display for EpochMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:.6} {:.6} {:.6}",
            self.epoch, self.train_loss, self.val_loss, self.val_acc
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    EarlyStopping,
    MaxEpochs,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::EarlyStopping => "early_stopping",
            StopReason::MaxEpochs => "max_epochs",
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub history: Vec<EpochMetrics>,
    pub test_loss: f64,
    pub test_acc: f64,
    pub stop: StopReason,
    pub model: GcnModel,
    /// Final perturbation shape parameters (FisherGCN only).
    pub xi: Option<Vec<f64>>,
}

impl TrainResult {
    pub fn epochs(&self) -> usize {
        self.history.len()
    }
}

/// Loss and accuracy on `nodes` with the unperturbed operator and no dropout.
pub fn evaluate(
    model: &GcnModel,
    features: &CsrMatrix,
    a_tilde: &SparseSym,
    labels: &[Option<usize>],
    nodes: &[usize],
) -> Result<(f64, f64)> {
    let cache = forward(model, features, Propagation::Plain(a_tilde), None)?;
    Ok((
        masked_xent(&cache.logits, labels, nodes)?,
        masked_accuracy(&cache.logits, labels, nodes)?,
    ))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn should_stop(history: &[EpochMetrics]) -> bool {
    if history.len() < WARMUP {
        return false;
    }
    let tail = |w: usize| &history[history.len() - w..];
    let loss = |h: &[EpochMetrics]| mean(&h.iter().map(|m| m.val_loss).collect::<Vec<_>>());
    let acc = |h: &[EpochMetrics]| mean(&h.iter().map(|m| m.val_acc).collect::<Vec<_>>());
    let (short, long) = (tail(SHORT_WINDOW), tail(LONG_WINDOW));
    loss(short) > loss(long) && acc(short) < acc(long)
}

/// Seeds drawn once per run, in a fixed order independent of the model.
struct RunSeeds {
    w1: u64,
    w2: u64,
    dropout: u64,
    noise: u64,
    eigs: u64,
}

impl RunSeeds {
    fn new(seed: u64) -> Self {
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        Self {
            w1: master.next_u64(),
            w2: master.next_u64(),
            dropout: master.next_u64(),
            noise: master.next_u64(),
            eigs: master.next_u64(),
        }
    }
}

/// Train on `ds` with the propagation operator built from the config:
/// the renormalized adjacency, or its random-walk proximity version.
/// FisherGCN computes its spectral basis from that operator first.
pub fn train(ds: &Dataset, split: &Split, cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    let a_op = match cfg.highorder {
        Some((order, threshold)) => highorder_preprocess(&ds.adjacency, order, threshold)?,
        None => renormalize_adjacency(&ds.adjacency),
    };
    let basis = match cfg.model {
        ModelKind::Gcn => None,
        ModelKind::FisherGcn => Some(SpectralBasis::from_normalized_adjacency(
            &a_op,
            cfg.k,
            DEFAULT_EIG_TOL,
            RunSeeds::new(cfg.seed).eigs,
        )?),
    };
    train_with_operator(ds, split, cfg, &a_op, basis.as_ref())
}

struct Branch {
    loss: f64,
    grads: Gradients,
    xi: Option<Vec<f64>>,
}

/// Train with a given normalized operator and, for FisherGCN, a spectral
/// basis of that operator.
pub fn train_with_operator(
    ds: &Dataset,
    split: &Split,
    cfg: &TrainConfig,
    a_op: &SparseSym,
    basis: Option<&SpectralBasis>,
) -> Result<TrainResult> {
    cfg.validate()?;
    split.validate(ds.n())?;
    if split.train.is_empty() || split.valid.is_empty() || split.test.is_empty() {
        return Err(Error::Config(
            "train, validation and test sets must be non-empty".into(),
        ));
    }
    if a_op.n() != ds.n() {
        return Err(Error::Argument(
            "operator size differs from the dataset".into(),
        ));
    }
    let fisher = cfg.model == ModelKind::FisherGcn;
    let basis = match (fisher, basis) {
        (true, Some(b)) => {
            if b.n() != ds.n() || b.k != cfg.k {
                return Err(Error::Argument(format!(
                    "spectral basis is {}×{}, expected {}×{}",
                    b.n(),
                    b.k,
                    ds.n(),
                    cfg.k
                )));
            }
            Some(b)
        }
        (true, None) => return Err(Error::Argument("FisherGCN needs a spectral basis".into())),
        (false, _) => None,
    };

    let features = ds.features.row_normalized();
    let labels = &ds.labels;
    let seeds = RunSeeds::new(cfg.seed);
    let mut model = GcnModel::new(
        ds.num_features(),
        cfg.hidden,
        ds.num_classes,
        seeds.w1,
        seeds.w2,
    );
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seeds.dropout);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seeds.noise);
    let mut params = match basis {
        Some(b) => Some(PerturbationParams::new(
            b.k, cfg.radius, cfg.draws, cfg.noise,
        )?),
        None => None,
    };
    let mut xi_adam = Adam::new(cfg.k);
    let branches = if fisher { cfg.draws } else { 1 };
    let n = ds.n();
    let hidden = cfg.hidden;

    let mut history = Vec::new();
    let mut stop = StopReason::MaxEpochs;
    for epoch in 1..=cfg.max_epochs {
        let branch_seeds: Vec<u64> = (0..branches).map(|_| dropout_rng.next_u64()).collect();
        let noise = params
            .as_ref()
            .map(|p| draw_noise_with(&mut noise_rng, p.k(), branches, p.noise));

        let outcomes: Vec<Result<Branch>> = (0..branches)
            .into_par_iter()
            .map(|b| {
                let masks = (cfg.dropout > 0.0).then(|| {
                    let mut rng = ChaCha8Rng::seed_from_u64(branch_seeds[b]);
                    DropoutMasks::sample(&mut rng, features.nnz(), n, hidden, cfg.dropout)
                });
                let (Some(basis), Some(params), Some(noise)) =
                    (basis, params.as_ref(), noise.as_ref())
                else {
                    let prop = Propagation::Plain(a_op);
                    let cache = forward(&model, &features, prop, masks.as_ref())?;
                    let (loss, grads) = backward(&model, &cache, prop, labels, &split.train)?;
                    return Ok(Branch {
                        loss,
                        grads,
                        xi: None,
                    });
                };
                let eps: Vec<f64> = noise.row(b).iter().copied().collect();
                let phi = perturbation_vector(params, &basis.theta_bar, &eps);
                let delta = spectrum_delta(&basis.theta_bar, &basis.lambda_bar, &phi);
                let prop = Propagation::Perturbed {
                    a_tilde: a_op,
                    basis,
                    delta: &delta,
                };
                let cache = forward(&model, &features, prop, masks.as_ref())?;
                let (loss, grads) = backward(&model, &cache, prop, labels, &split.train)?;
                let gd = grads
                    .delta
                    .as_deref()
                    .expect("perturbed propagation yields ∂δ");
                let xi = xi_gradient(params, &basis.theta_bar, &eps, gd);
                Ok(Branch {
                    loss,
                    grads,
                    xi: Some(xi),
                })
            })
            .collect();

        let mut loss = 0.0;
        let mut g1 = Dense::zeros(model.w1.nrows(), model.w1.ncols());
        let mut g2 = Dense::zeros(model.w2.nrows(), model.w2.ncols());
        let mut gxi = vec![0.0; cfg.k];
        for outcome in outcomes {
            let br = outcome?;
            loss += br.loss;
            g1 += &br.grads.w1;
            g2 += &br.grads.w2;
            if let Some(x) = br.xi {
                for (acc, v) in gxi.iter_mut().zip(x) {
                    *acc += v;
                }
            }
        }
        let scale = 1.0 / branches as f64;
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                msg: format!("training loss is {loss}"),
            });
        }
        let grads = Gradients {
            w1: g1 * scale,
            w2: g2 * scale,
            delta: None,
        };
        adam_step(&mut model, &grads, cfg.lr, cfg.weight_decay).map_err(|e| Error::Diverged {
            epoch,
            msg: e.to_string(),
        })?;
        if let Some(p) = params.as_mut() {
            let ascent: Vec<f64> = gxi.iter().map(|g| -g * scale).collect();
            xi_adam.step(&mut p.xi, &ascent, cfg.lr);
        }

        let (val_loss, val_acc) = evaluate(&model, &features, a_op, labels, &split.valid)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                msg: format!("validation loss is {val_loss}"),
            });
        }
        history.push(EpochMetrics {
            epoch,
            train_loss: loss,
            val_loss,
            val_acc,
        });
        if cfg.early_stopping && should_stop(&history) {
            stop = StopReason::EarlyStopping;
            break;
        }
    }

    let (test_loss, test_acc) = evaluate(&model, &features, a_op, labels, &split.test)?;
    Ok(TrainResult {
        history,
        test_loss,
        test_acc,
        stop,
        model,
        xi: params.map(|p| p.xi),
    })
}
