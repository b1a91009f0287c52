use log::info;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use radreg_nn::{zero_grads, Adam, AdamConfig, Module, Param, Pass};

use crate::augment::augment;
use crate::error::{Error, Result};
use crate::rng;
use crate::train::linear::{epoch_plan, softmax_cross_entropy};
use crate::train::pretrain::check_memory;
use crate::train::{
    cosine_lr, embed_bank, head_accuracy, images_to_tensor, EncoderCheckpoint, EpochRecord, ImageBank, LinearHead, Method, TrainConfig,
};

/// Number of validation checks spread over a baseline run.
const VAL_CHECKS: usize = 30;

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub checkpoint: EncoderCheckpoint,
    pub head: LinearHead,
    pub curve: Vec<EpochRecord>,
    /// `(epoch, accuracy)` at each validation check.
    pub val_accuracy: Vec<(usize, f64)>,
}

/// End-to-end supervised training of a randomly initialised encoder and a
/// linear head on the labelled subset only. With a validation set the
/// best-scoring snapshot is returned.
pub fn train_supervised_baseline(labeled: &ImageBank, val: Option<&ImageBank>, config: &TrainConfig) -> Result<BaselineOutcome> {
    config.validate()?;
    if labeled.is_empty() {
        return Err(Error::EmptySplit("labelled subset".into()));
    }
    let mut checkpoint = EncoderCheckpoint::untrained(Method::Supervised, config.clone());
    let mut head = LinearHead::new(checkpoint.encoder.embedding_width(), &mut rng::stream(config.seed, &[0x11ea7]));
    let batch_size = config.batch_size.min(labeled.len());
    check_memory(config, batch_size)?;
    let (per_epoch, epochs) = epoch_plan(labeled.len(), &TrainConfig { batch_size, ..config.clone() });
    let total = (per_epoch * epochs) as u64;
    let check_every = epochs.div_ceil(VAL_CHECKS).max(1);
    let mut adam = Adam::new(AdamConfig {
        weight_decay: config.weight_decay as f32,
        ..AdamConfig::default()
    });
    let size = config.model.input_size;
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let mut curve = Vec::new();
    let mut val_accuracy = Vec::new();
    let mut best: Option<(f64, EncoderCheckpoint, LinearHead)> = None;
    for epoch in 1..=epochs {
        order.shuffle(&mut rng::stream(config.seed, &[0xba5e, epoch as u64]));
        let lr_start = cosine_lr(config.learning_rate, adam.steps_taken(), total);
        let mut sum = 0.0;
        for (step, batch) in order.chunks(batch_size).enumerate() {
            let views: Vec<_> = batch
                .par_iter()
                .map(|&i| {
                    let mut r = rng::record_stream(config.seed, labeled.id(i), epoch as u64);
                    augment(labeled.image(i), &mut r, &config.augmentation, (size, size))
                })
                .collect();
            let refs: Vec<&_> = views.iter().collect();
            let labels: Vec<usize> = batch.iter().map(|&i| labeled.label(i).code()).collect();
            let mut params: Vec<&mut Param> = checkpoint.encoder.params_mut();
            params.extend(head.linear.params_mut());
            zero_grads(params);
            let emb = checkpoint.encoder.forward(&images_to_tensor(&refs, size), Pass::TRAIN)?;
            let logits = head.linear.forward(&emb, Pass::TRAIN)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NaNLoss { epoch, step });
            }
            sum += loss * batch.len() as f64;
            let g = head.linear.backward(&grad, false)?;
            checkpoint.encoder.backward(&g)?;
            let lr = cosine_lr(config.learning_rate, adam.steps_taken(), total);
            let mut params: Vec<&mut Param> = checkpoint.encoder.params_mut();
            params.extend(head.linear.params_mut());
            adam.step(params, lr as f32);
        }
        curve.push(EpochRecord {
            epoch,
            loss: sum / labeled.len() as f64,
            learning_rate: lr_start,
        });
        checkpoint.epoch = epoch;
        head.epochs_trained = epoch;
        if let Some(val) = val.filter(|_| epoch % check_every == 0 || epoch == epochs) {
            let set = embed_bank(&mut checkpoint.encoder, val)?;
            let acc = head_accuracy(&mut head, &set)?;
            info!("baseline epoch {epoch}/{epochs}: loss {:.4}, val {:.3}", curve[epoch - 1].loss, acc);
            val_accuracy.push((epoch, acc));
            if best.as_ref().is_none_or(|(a, _, _)| acc > *a) {
                best = Some((acc, checkpoint.clone(), head.clone()));
            }
        }
    }
    let (checkpoint, head) = match best {
        Some((_, c, h)) => (c, h),
        None => (checkpoint, head),
    };
    Ok(BaselineOutcome {
        checkpoint,
        head,
        curve,
        val_accuracy,
    })
}
