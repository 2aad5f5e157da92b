//! Short-budget candidate training, producing the fitness signal.

use rand::seq::SliceRandom as _;

use crate::genome::Genome;
use crate::netbuilder::{build, BuildError, Network};
use crate::optim::AdamLookahead;
use crate::rng::{derive_seed, rng_for};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, TensorError};

use thiserror::Error;

use super::augment::augment;
use super::loss::{apply_loss, LossKind};
use super::metrics::{auc, confusion_and_metrics, Metrics, MetricsError};
use super::{DataError, Sample};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("training and validation sets must be non-empty")]
    EmptyDataset,
    #[error("samples have differing extents: {0:?} vs {1:?}")]
    MixedExtents((usize, usize), (usize, usize)),
}

/// Training configuration. The defaults are the desk-scale settings; paper
/// scale raises `epochs` to 1000.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
    pub lr_base: f64,
    pub lr_quad: f64,
    pub threshold: f64,
    pub augment: bool,
    pub base_channels: usize,
    pub in_channels: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 4,
            loss: LossKind::default(),
            lr_base: crate::layers::LR_BASE,
            lr_quad: crate::layers::LR_QUAD,
            threshold: 0.5,
            augment: true,
            base_channels: 8,
            in_channels: 1,
        }
    }
}

/// Trained candidate with its validation metrics. `fitness` is the
/// validation F1 at the configured threshold; diverged candidates carry
/// fitness 0 and zeroed metrics instead of failing the search.
pub struct TrainOutcome<T: Scalar> {
    pub network: Network<T>,
    pub metrics: Metrics,
    pub fitness: f64,
    pub diverged: bool,
}

/// Train one genome and score it on the validation split. Deterministic in
/// `(genome, cfg, seed)`: initialization, shuffling and augmentation all
/// derive from the seed.
pub fn train_candidate<T: Scalar>(
    genome: &Genome,
    train: &[Sample<T>],
    val: &[Sample<T>],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome<T>, TrainError> {
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut network = build::<T>(genome, cfg.base_channels, cfg.in_channels, derive_seed(seed, "build"))?;

    let init: Vec<Tensor<T>> = network.params().iter().map(|p| p.value.clone()).collect();
    let mut opt = AdamLookahead::new(&init);
    drop(init);
    let lrs = network.lrs(cfg.lr_base, cfg.lr_quad);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_for(seed, &format!("shuffle:{epoch}")));
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<Sample<T>> = chunk
                .iter()
                .map(|&i| {
                    if cfg.augment {
                        augment(&train[i], &mut rng_for(seed, &format!("aug:{epoch}:{i}")))
                    } else {
                        train[i].clone()
                    }
                })
                .collect();
            let (x, y) = stack_batch(&batch)?;
            let mut tape = Tape::new();
            let pass = match network.forward(&mut tape, x, true) {
                Ok(p) => p,
                Err(BuildError::Tensor(TensorError::NonFinite { .. })) => {
                    return Ok(diverged_outcome(network))
                }
                Err(e) => return Err(e.into()),
            };
            let target = tape.leaf(y, false);
            let loss = match apply_loss(&mut tape, cfg.loss, pass.output, target) {
                Ok(l) => l,
                Err(TensorError::NonFinite { .. }) => return Ok(diverged_outcome(network)),
                Err(e) => return Err(e.into()),
            };
            tape.backward(loss)?;
            let grads: Vec<Tensor<T>> = pass
                .param_vars
                .iter()
                .map(|v| tape.grad(*v).expect("trainable leaf has gradient").clone())
                .collect();
            if grads.iter().any(|g| !g.is_finite()) {
                return Ok(diverged_outcome(network));
            }
            let mut values: Vec<&mut Tensor<T>> =
                network.params_mut().iter_mut().map(|p| &mut p.value).collect();
            opt.step(&mut values, &grads, &lrs)?;
        }
    }

    match evaluate_network(&network, val, cfg.threshold) {
        Ok(metrics) => {
            let fitness = metrics.f1.unwrap_or(0.0);
            Ok(TrainOutcome { network, metrics, fitness, diverged: false })
        }
        Err(TrainError::Build(BuildError::Tensor(TensorError::NonFinite { .. }))) => {
            Ok(diverged_outcome(network))
        }
        Err(e) => Err(e),
    }
}

fn diverged_outcome<T: Scalar>(network: Network<T>) -> TrainOutcome<T> {
    TrainOutcome { network, metrics: Metrics::zeroed(), fitness: 0.0, diverged: true }
}

/// Micro-averaged metrics over every validation pixel, with AUC pooled
/// across images.
pub fn evaluate_network<T: Scalar>(
    network: &Network<T>,
    val: &[Sample<T>],
    threshold: f64,
) -> Result<Metrics, TrainError> {
    if val.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut scores: Vec<T> = Vec::new();
    let mut labels: Vec<bool> = Vec::new();
    let mut valid: Vec<bool> = Vec::new();
    for s in val {
        let mut tape = Tape::new();
        let (x, _) = stack_batch(std::slice::from_ref(s))?;
        let pass = network.forward(&mut tape, x, false)?;
        scores.extend_from_slice(tape.value(pass.output).data());
        labels.extend(s.mask_bool());
        match s.fov_bool() {
            Some(f) => valid.extend(f),
            None => valid.extend(std::iter::repeat_n(true, s.h() * s.w())),
        }
    }
    let mut metrics = confusion_and_metrics(&scores, &labels, Some(&valid), threshold)?;
    metrics.auc = auc(&scores, &labels, Some(&valid)).ok();
    Ok(metrics)
}

/// Stack samples into `[B, 1, H, W]` image and target tensors.
pub fn stack_batch<T: Scalar>(batch: &[Sample<T>]) -> Result<(Tensor<T>, Tensor<T>), TrainError> {
    let (h, w) = (batch[0].h(), batch[0].w());
    let mut xs = Vec::with_capacity(batch.len() * h * w);
    let mut ys = Vec::with_capacity(batch.len() * h * w);
    for s in batch {
        if (s.h(), s.w()) != (h, w) {
            return Err(TrainError::MixedExtents((h, w), (s.h(), s.w())));
        }
        xs.extend_from_slice(s.image.data());
        ys.extend_from_slice(s.mask.data());
    }
    Ok((
        Tensor::new(vec![batch.len(), 1, h, w], xs)?,
        Tensor::new(vec![batch.len(), 1, h, w], ys)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::Genome;
    use crate::segtrain::synth::synth_vessels;

    fn quick_cfg() -> TrainConfig {
        TrainConfig { epochs: 2, base_channels: 4, ..TrainConfig::default() }
    }

    #[test]
    fn zero_epochs_scores_untrained_network() {
        let data = synth_vessels::<f64>(6, 32, 5).unwrap();
        let (train, val) = data.split_at(4);
        let genome = Genome::baseline(2, 5).unwrap();
        let cfg = TrainConfig { epochs: 0, ..quick_cfg() };
        let out = train_candidate(&genome, train, val, &cfg, 1).unwrap();
        assert!(!out.diverged);
        let direct = evaluate_network(&out.network, val, 0.5).unwrap();
        assert_eq!(out.metrics, direct);
    }

    #[test]
    fn same_seed_same_fitness() {
        let data = synth_vessels::<f64>(6, 32, 6).unwrap();
        let (train, val) = data.split_at(4);
        let genome = Genome::baseline(2, 5).unwrap();
        let a = train_candidate(&genome, train, val, &quick_cfg(), 9).unwrap();
        let b = train_candidate(&genome, train, val, &quick_cfg(), 9).unwrap();
        assert!((a.fitness - b.fitness).abs() < 1e-7);
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn desk_scale_baseline_learns() {
        // all-conventional depth-2 net reaches a usable F1 on synthetic data
        let data = synth_vessels::<f64>(24, 32, 7).unwrap();
        let (train, val) = data.split_at(18);
        let genome = Genome::baseline(2, 5).unwrap();
        let cfg = TrainConfig { epochs: 12, base_channels: 8, ..TrainConfig::default() };
        let mut f1s: Vec<f64> = (0..3)
            .map(|s| train_candidate(&genome, train, val, &cfg, s).unwrap().fitness)
            .collect();
        f1s.sort_by(f64::total_cmp);
        assert!(f1s[1] > 0.6, "median F1 over 3 seeds was {:?}", f1s);
    }

    #[test]
    fn empty_dataset_is_error() {
        let data = synth_vessels::<f64>(2, 32, 8).unwrap();
        let genome = Genome::baseline(2, 5).unwrap();
        assert!(matches!(
            train_candidate(&genome, &[], &data, &quick_cfg(), 1),
            Err(TrainError::EmptyDataset)
        ));
    }
}
