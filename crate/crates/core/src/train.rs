//! Mini-batch training with augmentation and best-validation-AUC checkpoint
//! selection, plus batch inference over bundle splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::data::{augment, normalize, AugmentConfig, DatasetBundle, Split};
use crate::error::{Error, Result};
use crate::exec::Backend;
use crate::metrics::{roc_auc, Prediction, PredictionSet};
use crate::nn::{cross_entropy_loss, softmax, CnnModel, ForwardTrace, Gradients};
use crate::optim::{AdamW, AdamWConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optim: AdamWConfig,
    pub augment: AugmentConfig,
    pub backend: Backend,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 128,
            seed: 0,
            optim: AdamWConfig::default(),
            augment: AugmentConfig::default(),
            backend: Backend::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Checkpoint of the epoch with the highest validation AUC (earliest on ties).
    pub best: Checkpoint,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        log_csv(&self.log)
    }
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,train_loss,val_auc\n");
    for e in log {
        s.push_str(&format!("{},{:.6},{:.6}\n", e.epoch, e.train_loss, e.val_auc));
    }
    s
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ p))
}

/// Shuffled order of `indices` for `epoch`, reseeded from the master seed.
pub fn epoch_order(indices: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut order = indices.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(
        seed,
        &[0xE90C, epoch as u64],
    )));
    order
}

/// Forward, loss and backward for one mini-batch. Returns the mean loss and
/// the summed (already 1/B-scaled) parameter gradients.
pub fn batch_gradients(
    model: &CnnModel<f32>,
    images: &[Tensor<f32>],
    labels: &[u8],
    backend: Backend,
) -> Result<(f32, Gradients<f32>)> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("cross-entropy over an empty batch".into()));
    }
    let traces: Vec<ForwardTrace<f32>> = backend.try_map(images, |img| model.forward(img).map(|(_, t)| t))?;
    let mut logits = Vec::with_capacity(traces.len() * 2);
    for t in &traces {
        logits.extend_from_slice(t.logits.data());
    }
    let logits = Tensor::new(&[traces.len(), 2], logits)?;
    let (loss, dlogits) = cross_entropy_loss(&logits, labels)?;
    let items: Vec<(&ForwardTrace<f32>, &[f32])> = traces.iter().zip(dlogits.data().chunks_exact(2)).collect();
    let grads = backend.chunked_reduce(
        &items,
        Gradients::zeros,
        |acc, (trace, d)| {
            let d = Tensor::new(&[2], d.to_vec())?;
            model.backward_into(trace, &d, acc)
        },
        |acc, part| acc.add_assign(&part),
    )?;
    Ok((loss, grads))
}

/// Softmax class-1 probabilities for the given records; predicted label is
/// the logit argmax (ties to class 0).
pub fn predict(
    model: &CnnModel<f32>,
    bundle: &DatasetBundle,
    indices: &[usize],
    backend: Backend,
) -> Result<PredictionSet> {
    bundle.require_cnn_frames()?;
    let rows = backend.try_map(indices, |&i| {
        let logits = model.logits(&normalize(bundle.frame(i))?)?;
        let l = logits.data();
        let p = softmax(l)[1] as f64;
        let r = &bundle.records()[i];
        Ok(Prediction {
            id: r.id.clone(),
            p_pos: p,
            predicted: u8::from(l[1] > l[0]),
            truth: r.label,
        })
    })?;
    Ok(PredictionSet::new(rows))
}

pub fn train(bundle: &DatasetBundle, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(bundle, config, |_| {})
}

pub fn train_with_progress(
    bundle: &DatasetBundle,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if config.epochs == 0 {
        return Err(Error::InvalidArgument("epochs must be at least 1".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    config.augment.validate()?;
    bundle.require_cnn_frames()?;
    let train_idx = bundle.indices(Split::Train);
    let val_idx = bundle.indices(Split::Val);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "bundle needs train and val records ({} train, {} val)",
            train_idx.len(),
            val_idx.len()
        )));
    }

    let backend = config.backend;
    let mut model = CnnModel::<f32>::new(config.seed);
    let mut opt = AdamW::new(config.optim, &model)?;
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<Checkpoint> = None;

    for epoch in 1..=config.epochs {
        let order = epoch_order(&train_idx, config.seed, epoch);
        let mut loss_sum = 0.0f64;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let positions: Vec<(usize, usize)> = batch
                .iter()
                .enumerate()
                .map(|(k, &i)| (b * config.batch_size + k, i))
                .collect();
            let images = backend.try_map(&positions, |&(pos, i)| {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, &[epoch as u64, pos as u64]));
                augment(&normalize(bundle.frame(i))?, &config.augment, &mut rng)
            })?;
            let labels: Vec<u8> = batch.iter().map(|&i| bundle.records()[i].label).collect();
            let (loss, grads) = batch_gradients(&model, &images, &labels, backend)?;
            opt.step(&mut model, &grads)?;
            loss_sum += loss as f64 * batch.len() as f64;
        }
        let val = predict(&model, bundle, &val_idx, backend)?;
        let val_auc = roc_auc(&val.scores(), &val.truths())?;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / train_idx.len() as f64,
            val_auc,
        };
        on_epoch(&entry);
        log.push(entry);
        if best.as_ref().is_none_or(|b| val_auc > b.header.val_auc) {
            best = Some(Checkpoint::new(
                model.clone(),
                config.seed,
                epoch,
                val_auc,
                Some(config.optim),
            ));
        }
    }
    Ok(TrainOutcome {
        best: best.expect("at least one epoch ran"),
        log,
    })
}
