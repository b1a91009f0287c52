use rand::seq::SliceRandom;
use rand::Rng;
use radreg_nn::{state_dict, Adam, AdamConfig, Linear, Module, Pass, Tensor};

use crate::augment::{augment, AugmentationProfile};
use crate::data::{DatasetIndex, Split};
use crate::error::{Error, Result};
use crate::region::{AnatomicalRegion, NUM_REGIONS};
use crate::rng;
use crate::train::{cosine_lr, images_to_tensor, Encoder, EncoderCheckpoint, ImageBank, TrainConfig, EVAL_CHUNK};

/// Row-wise softmax in double precision.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let exp: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Mean cross-entropy over the batch and its gradient with respect to the
/// logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let n = logits.batch();
    if logits.shape().len() != 2 || labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "cross-entropy on logits {:?} with {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let classes = logits.shape()[1];
    let mut grad = Tensor::zeros(&[n, classes]);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::InvalidClass(y));
        }
        let p = softmax(logits.item(i));
        loss -= p[y].max(f64::MIN_POSITIVE).ln();
        for (k, g) in grad.item_mut(i).iter_mut().enumerate() {
            let target = if k == y { 1.0 } else { 0.0 };
            *g = ((p[k] - target) / n as f64) as f32;
        }
    }
    Ok((loss / n as f64, grad))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Single fully connected layer on top of a frozen encoder.
#[derive(Debug, Clone)]
pub struct LinearHead {
    pub linear: Linear,
    pub epochs_trained: usize,
}

impl LinearHead {
    pub fn new(embedding_width: usize, rng: &mut impl Rng) -> Self {
        LinearHead {
            linear: Linear::new("head", embedding_width, NUM_REGIONS, true, rng),
            epochs_trained: 0,
        }
    }

    pub fn logits(&mut self, embeddings: &Tensor) -> Result<Tensor> {
        Ok(self.linear.forward(embeddings, Pass::EVAL)?)
    }

    /// Per-row softmax probabilities.
    pub fn probabilities(&mut self, embeddings: &Tensor) -> Result<Vec<Vec<f64>>> {
        let logits = self.logits(embeddings)?;
        Ok((0..logits.batch()).map(|i| softmax(logits.item(i))).collect())
    }

    pub fn predict(&mut self, embeddings: &Tensor) -> Result<Vec<AnatomicalRegion>> {
        Ok(self
            .probabilities(embeddings)?
            .iter()
            .map(|p| AnatomicalRegion::from_code(argmax(p)).expect("14 outputs"))
            .collect())
    }
}

/// Frozen-encoder embeddings of a labelled image set. Each copy holds one
/// embedding per image; augmented copies are drawn per image id, so a
/// subset's copies equal the corresponding rows of the full set.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    pub ids: Vec<String>,
    pub labels: Vec<AnatomicalRegion>,
    pub copies: Vec<Tensor>,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn width(&self) -> usize {
        self.copies.first().and_then(|t| t.shape().get(1).copied()).unwrap_or(0)
    }

    /// The first copy (the un-augmented view for [`embed_bank`]).
    pub fn primary(&self) -> &Tensor {
        &self.copies[0]
    }

    pub fn subset(&self, indices: &[usize]) -> EmbeddingSet {
        let copies = self
            .copies
            .iter()
            .map(|t| {
                let d = t.shape()[1];
                let data = indices.iter().flat_map(|&i| t.item(i).iter().copied()).collect();
                Tensor::from_vec(&[indices.len(), d], data).expect("sizes agree")
            })
            .collect();
        EmbeddingSet {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            copies,
        }
    }

    pub fn with_labels(&self, labels: Vec<AnatomicalRegion>) -> EmbeddingSet {
        assert_eq!(labels.len(), self.len());
        EmbeddingSet {
            labels,
            ..self.clone()
        }
    }
}

/// Evaluation-mode embeddings of the bank's images, one copy.
pub fn embed_bank(encoder: &mut Encoder, bank: &ImageBank) -> Result<EmbeddingSet> {
    let images: Vec<&_> = bank.images().iter().collect();
    Ok(EmbeddingSet {
        ids: bank.ids().to_vec(),
        labels: bank.labels().to_vec(),
        copies: vec![encoder.encode_images(&images)?],
    })
}

/// `copies` augmented views per image, each drawn from the stream of
/// `(seed, id, copy)`.
pub fn embed_augmented(
    encoder: &mut Encoder,
    bank: &ImageBank,
    profile: &AugmentationProfile,
    copies: usize,
    seed: u64,
) -> Result<EmbeddingSet> {
    let size = encoder.model().input_size;
    let mut out = Vec::with_capacity(copies);
    for copy in 0..copies {
        let mut parts = Vec::new();
        for start in (0..bank.len()).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(bank.len());
            let views: Vec<_> = (start..end)
                .map(|i| {
                    let mut rng = rng::record_stream(seed, bank.id(i), copy as u64);
                    augment(bank.image(i), &mut rng, profile, (size, size))
                })
                .collect();
            let refs: Vec<&_> = views.iter().collect();
            parts.push(encoder.forward(&images_to_tensor(&refs, size), Pass::EVAL)?);
        }
        let refs: Vec<&Tensor> = parts.iter().collect();
        out.push(if refs.is_empty() {
            Tensor::zeros(&[0, encoder.embedding_width()])
        } else {
            Tensor::cat(&refs)?
        });
    }
    Ok(EmbeddingSet {
        ids: bank.ids().to_vec(),
        labels: bank.labels().to_vec(),
        copies: out,
    })
}

/// Fraction of rows whose argmax matches the label.
pub fn head_accuracy(head: &mut LinearHead, set: &EmbeddingSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptySplit("embedding set".into()));
    }
    let predicted = head.predict(set.primary())?;
    let correct = predicted.iter().zip(&set.labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / set.len() as f64)
}

fn mean_loss(head: &mut LinearHead, set: &EmbeddingSet) -> Result<f64> {
    let logits = head.logits(set.primary())?;
    let labels: Vec<usize> = set.labels.iter().map(|l| l.code()).collect();
    Ok(softmax_cross_entropy(&logits, &labels)?.0)
}

/// A fitted head and its validation history.
#[derive(Debug, Clone)]
pub struct LinearEvalOutcome {
    pub head: LinearHead,
    /// Validation accuracy after each epoch (empty without a validation set).
    pub val_accuracy: Vec<f64>,
    /// Epoch (1-based) whose head was kept.
    pub best_epoch: usize,
    pub train_loss: Vec<f64>,
}

/// Optimisation steps per epoch and the number of epochs actually run.
pub(crate) fn epoch_plan(samples: usize, config: &TrainConfig) -> (usize, usize) {
    let per_epoch = samples.div_ceil(config.batch_size).max(1);
    let epochs = config.epochs.max(config.min_steps.div_ceil(per_epoch));
    (per_epoch, epochs)
}

/// Trains a linear head on precomputed embeddings. Every step picks, for each
/// image in the batch, one of its augmented copies at random. With a
/// validation set, the head of the best validation epoch is returned and
/// training stops after `early_stopping_patience` epochs without progress.
pub fn fit_linear_head(train: &EmbeddingSet, val: Option<&EmbeddingSet>, config: &TrainConfig) -> Result<LinearEvalOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySplit("embedding set".into()));
    }
    let mut rng = rng::stream(config.seed, &[0x11ea7]);
    let mut head = LinearHead::new(train.width(), &mut rng);
    let mut adam = Adam::new(AdamConfig {
        weight_decay: config.weight_decay as f32,
        ..AdamConfig::default()
    });
    let (per_epoch, epochs) = epoch_plan(train.len(), config);
    let total = (per_epoch * epochs) as u64;
    let width = train.width();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, f64, LinearHead, usize)> = None;
    let mut val_accuracy = Vec::new();
    let mut train_loss = Vec::new();
    let mut stale = 0;
    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut data = Vec::with_capacity(batch.len() * width);
            for &i in batch {
                let copy = rng.random_range(0..train.copies.len());
                data.extend_from_slice(train.copies[copy].item(i));
            }
            let x = Tensor::from_vec(&[batch.len(), width], data)?;
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i].code()).collect();
            let logits = head.linear.forward(&x, Pass::TRAIN)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NaNLoss {
                    epoch,
                    step: adam.steps_taken() as usize,
                });
            }
            epoch_loss += loss * batch.len() as f64;
            radreg_nn::zero_grads(head.linear.params_mut());
            head.linear.backward(&grad, false)?;
            let lr = cosine_lr(config.learning_rate, adam.steps_taken(), total);
            adam.step(head.linear.params_mut(), lr as f32);
        }
        train_loss.push(epoch_loss / train.len() as f64);
        head.epochs_trained = epoch;
        let Some(val) = val else { continue };
        let acc = head_accuracy(&mut head, val)?;
        let loss = mean_loss(&mut head, val)?;
        val_accuracy.push(acc);
        let improved = best.as_ref().is_none_or(|(a, l, _, _)| acc > *a || (acc == *a && loss < *l));
        if improved {
            best = Some((acc, loss, head.clone(), epoch));
            stale = 0;
        } else {
            stale += 1;
            if config.early_stopping_patience.is_some_and(|p| stale >= p) {
                break;
            }
        }
    }
    let (head, best_epoch) = match best {
        Some((_, _, h, e)) => (h, e),
        None => {
            let e = head.epochs_trained;
            (head, e)
        }
    };
    Ok(LinearEvalOutcome {
        head,
        val_accuracy,
        best_epoch,
        train_loss,
    })
}

/// Linear evaluation of a frozen encoder: embeds `labeled` with
/// `config.embedding_copies` augmented copies under `config.augmentation`,
/// fits the head and verifies that no encoder parameter or buffer changed.
pub fn train_linear_head(
    checkpoint: &mut EncoderCheckpoint,
    labeled: &ImageBank,
    val: Option<&ImageBank>,
    config: &TrainConfig,
) -> Result<LinearEvalOutcome> {
    let before = state_dict(checkpoint.encoder.params());
    let train = embed_augmented(
        &mut checkpoint.encoder,
        labeled,
        &config.augmentation,
        config.embedding_copies,
        config.seed,
    )?;
    let val = val.map(|v| embed_bank(&mut checkpoint.encoder, v)).transpose()?;
    let outcome = fit_linear_head(&train, val.as_ref(), config)?;
    if state_dict(checkpoint.encoder.params()) != before {
        return Err(Error::BackboneMutated);
    }
    Ok(outcome)
}

/// Labelled-subset budget for `fraction` of `n` images.
pub fn label_budget(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).round() as usize
}

/// Positions (into `labels`) of a stratified labelled subset.
///
/// Each class is shuffled with the seed; image `j` of a class of size `n_c`
/// gets the key `(j + 0.5) / n_c`, so every class is drawn at the same pace.
/// The first image of every class comes first, then the rest by key (ties by
/// region code). The subset is the prefix of length `round(fraction * N)`,
/// which makes subsets nested across fractions for one seed.
pub fn subsample_indices(labels: &[AnatomicalRegion], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("label fraction must lie in (0, 1], got {fraction}")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_REGIONS];
    for (i, l) in labels.iter().enumerate() {
        by_class[l.code()].push(i);
    }
    let classes = by_class.iter().filter(|c| !c.is_empty()).count();
    let budget = label_budget(fraction, labels.len());
    if budget < classes {
        return Err(Error::FractionTooSmall {
            fraction,
            budget,
            classes,
        });
    }
    let mut firsts = Vec::new();
    let mut rest = Vec::new();
    for (code, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut rng::stream(seed, &[0x5ab5, code as u64]));
        let n = members.len() as f64;
        for (j, &i) in members.iter().enumerate() {
            let key = (j as f64 + 0.5) / n;
            if j == 0 { &mut firsts } else { &mut rest }.push((key, code, i));
        }
    }
    let by_key = |a: &(f64, usize, usize), b: &(f64, usize, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    firsts.sort_by(by_key);
    rest.sort_by(by_key);
    let mut picked: Vec<usize> = firsts.into_iter().chain(rest).take(budget).map(|(_, _, i)| i).collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Stratified labelled subset of the training split of `index`.
pub fn subsample_labels(index: &DatasetIndex, fraction: f64, seed: u64) -> Result<DatasetIndex> {
    let train: Vec<_> = index.split_records(Split::Train).cloned().collect();
    let labels: Vec<_> = train.iter().map(|r| r.training_view().label).collect();
    let picked = subsample_indices(&labels, fraction, seed)?;
    DatasetIndex::new(picked.into_iter().map(|i| train[i].clone()).collect())
}
