use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use radreg_nn::{zero_grads, Adam, AdamConfig, Mlp, Module, Param, Pass, Tensor};
use serde::{Deserialize, Serialize};

use crate::augment::make_view_pair;
use crate::error::{Error, Result};
use crate::rng;
use crate::ssl::{
    byol_symmetric, nt_xent_grad, predict_byol, project, standard_pairing, supcon_loss_grad, view_labels, ContrastiveBatch, EmaState,
    Projections,
};
use crate::train::{cosine_lr, images_to_tensor, Encoder, EncoderCheckpoint, ImageBank, Method, ModelConfig, TargetInit, TrainConfig};

/// Mean training loss of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub checkpoint: EncoderCheckpoint,
    pub curve: Vec<EpochRecord>,
    /// Moving-average target encoder (BYOL only).
    pub target: Option<Encoder>,
    /// Online-to-target parameter distance before the first and after the
    /// last step (BYOL only).
    pub target_distance: Option<(f64, f64)>,
    /// Checkpoints written during the run, the final one last.
    pub saved: Vec<PathBuf>,
}

/// Rough activation footprint of a recorded forward/backward pass over
/// `views` images: about ten floats per stage-one channel and input pixel.
pub fn estimate_activation_bytes(model: ModelConfig, views: usize) -> u64 {
    (views * 10 * model.base_width * model.input_size * model.input_size * 4) as u64
}

pub(crate) fn check_memory(config: &TrainConfig, views: usize) -> Result<()> {
    if let Some(limit) = config.memory_limit_bytes {
        let estimate = estimate_activation_bytes(config.model, views);
        if estimate > limit {
            return Err(Error::OutOfMemoryHint {
                batch: views,
                estimate_mb: estimate >> 20,
                limit_mb: limit >> 20,
            });
        }
    }
    Ok(())
}

pub(crate) fn to_tensor(rows: usize, cols: usize, data: &[f64]) -> Tensor {
    Tensor::from_vec(&[rows, cols], data.iter().map(|v| *v as f32).collect()).expect("sizes agree")
}

fn projections(t: &Tensor) -> Result<Projections> {
    Projections::from_f32(t.batch(), t.item_len(), t.data())
}

/// Euclidean distance between two parameter lists (buffers excluded).
pub fn parameter_distance(a: Vec<&Param>, b: Vec<&Param>) -> f64 {
    a.iter()
        .zip(&b)
        .filter(|(p, _)| p.is_trainable())
        .flat_map(|(p, q)| p.value.iter().zip(&q.value))
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Online network of one objective plus whatever extra state it trains.
struct Learner {
    method: Method,
    encoder: Encoder,
    projector: Mlp,
    predictor: Option<Mlp>,
    target: Option<(Encoder, Mlp, EmaState)>,
}

impl Learner {
    fn new(method: Method, config: &TrainConfig, total_steps: u64) -> Self {
        let seed = config.seed;
        let encoder = Encoder::new(config.model, &mut rng::stream(seed, &[0xe4c]));
        let width = encoder.embedding_width();
        let head = config.ssl.projection;
        let projector = Mlp::new("projector", width, head.hidden, head.output, &mut rng::stream(seed, &[0x960]));
        let (predictor, target) = if method == Method::Byol {
            let p = config.ssl.predictor;
            let predictor = Mlp::new("predictor", head.output, p.hidden, p.output, &mut rng::stream(seed, &[0x93e]));
            let (t_enc, t_proj) = match config.ssl.target_init {
                TargetInit::Copy => (encoder.clone(), projector.clone()),
                TargetInit::Independent => (
                    Encoder::new(config.model, &mut rng::stream(seed, &[0x7a9, 1])),
                    Mlp::new("projector", width, head.hidden, head.output, &mut rng::stream(seed, &[0x7a9, 2])),
                ),
            };
            (Some(predictor), Some((t_enc, t_proj, EmaState::new(config.ssl.tau_base, total_steps))))
        } else {
            (None, None)
        };
        Learner {
            method,
            encoder,
            projector,
            predictor,
            target,
        }
    }

    fn trainable(&mut self) -> Vec<&mut Param> {
        let mut params = self.encoder.params_mut();
        params.extend(self.projector.params_mut());
        if let Some(p) = self.predictor.as_mut() {
            params.extend(p.params_mut());
        }
        params
    }

    fn target_distance(&self) -> Option<f64> {
        self.target.as_ref().map(|(enc, proj, _)| {
            let mut online = self.encoder.params();
            online.extend(self.projector.params());
            let mut target = enc.params();
            target.extend(proj.params());
            parameter_distance(online, target)
        })
    }

    /// Forward, loss and backward for `2B` views laid out as
    /// `[view a of every source, view b of every source]`.
    fn step(&mut self, views: &Tensor, labels: &[crate::AnatomicalRegion], config: &TrainConfig) -> Result<f64> {
        let sources = views.batch() / 2;
        let emb = self.encoder.forward(views, Pass::TRAIN)?;
        let z = project(&mut self.projector, &emb, Pass::TRAIN)?;
        let dim = z.item_len();
        let (loss, grad_z) = match self.method {
            Method::Simclr => {
                let batch = ContrastiveBatch::new(projections(&z)?, standard_pairing(sources), config.ssl.temperature)?;
                let g = nt_xent_grad(&batch)?;
                (g.loss, to_tensor(2 * sources, dim, &g.grad))
            }
            Method::Supcon => {
                let g = supcon_loss_grad(&projections(&z)?, &view_labels(labels), config.ssl.supcon_temperature)?;
                (g.loss, to_tensor(2 * sources, dim, &g.grad))
            }
            Method::Byol => {
                let predictor = self.predictor.as_mut().expect("byol learner has a predictor");
                let q = predict_byol(predictor, &z, Pass::TRAIN)?;
                let (t_enc, t_proj, _) = self.target.as_mut().expect("byol learner has a target");
                let no_grad = Pass { train: true, record: false };
                let t = t_enc.forward(views, no_grad)?;
                let t = project(t_proj, &t, no_grad)?;
                let half = |x: &Tensor, i: usize| projections(&x.slice_batch(i * sources, (i + 1) * sources));
                let (loss, g1, g2) = byol_symmetric(&half(&q, 0)?, &half(&t, 1)?, &half(&q, 1)?, &half(&t, 0)?)?;
                let qdim = q.item_len();
                let grad_q = Tensor::cat(&[&to_tensor(sources, qdim, &g1), &to_tensor(sources, qdim, &g2)])?;
                (loss, predictor.backward(&grad_q, false)?)
            }
            Method::Supervised => unreachable!("rejected before training"),
        };
        if loss.is_finite() {
            let grad_emb = self.projector.backward(&grad_z, false)?;
            self.encoder.backward(&grad_emb)?;
        }
        Ok(loss)
    }

    fn update_target(&mut self) -> Result<()> {
        if let Some((t_enc, t_proj, ema)) = self.target.as_mut() {
            let mut target = t_enc.params_mut();
            target.extend(t_proj.params_mut());
            let mut online = self.encoder.params();
            online.extend(self.projector.params());
            ema.update(target, online)?;
        }
        Ok(())
    }
}

/// Self-supervised pretraining of a fresh encoder on `train` with the
/// selected objective. Labels are read only by the supervised contrastive
/// objective. With `out_dir`, checkpoints are written every
/// `checkpoint_every` epochs and at the end, along with a loss curve CSV.
pub fn pretrain(method: Method, train: &ImageBank, config: &TrainConfig, out_dir: Option<&Path>) -> Result<PretrainOutcome> {
    if !Method::PRETRAINING.contains(&method) {
        return Err(Error::InvalidConfig(format!("`{method}` is not a pretraining objective")));
    }
    config.validate()?;
    if train.len() < 2 {
        return Err(Error::EmptySplit("train".into()));
    }
    let batch_size = config.batch_size.min(train.len());
    check_memory(config, 2 * batch_size)?;
    let per_epoch = train.len() / batch_size;
    let total = (per_epoch * config.epochs) as u64;
    let mut learner = Learner::new(method, config, total);
    let initial_distance = learner.target_distance();
    let mut adam = Adam::new(AdamConfig {
        weight_decay: config.weight_decay as f32,
        ..AdamConfig::default()
    });
    let size = config.model.input_size;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    let mut saved = Vec::new();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng::stream(config.seed, &[0x0bd, epoch as u64]));
        let mut sum = 0.0;
        let lr_start = cosine_lr(config.learning_rate, adam.steps_taken(), total);
        for (step, batch) in order.chunks_exact(batch_size).enumerate() {
            let pairs: Vec<_> = batch
                .par_iter()
                .map(|&i| {
                    let mut r = rng::record_stream(config.seed, train.id(i), epoch as u64);
                    make_view_pair(train.image(i), &mut r, &config.augmentation, (size, size))
                })
                .collect();
            let views: Vec<&_> = pairs.iter().map(|p| &p.0).chain(pairs.iter().map(|p| &p.1)).collect();
            let labels: Vec<_> = batch.iter().map(|&i| train.label(i)).collect();
            zero_grads(learner.trainable());
            let loss = learner.step(&images_to_tensor(&views, size), &labels, config)?;
            if !loss.is_finite() {
                return Err(Error::NaNLoss { epoch, step });
            }
            sum += loss;
            let lr = cosine_lr(config.learning_rate, adam.steps_taken(), total);
            adam.step(learner.trainable(), lr as f32);
            learner.update_target()?;
        }
        let record = EpochRecord {
            epoch,
            loss: sum / per_epoch as f64,
            learning_rate: lr_start,
        };
        info!("{method} epoch {epoch}/{}: loss {:.5}", config.epochs, record.loss);
        curve.push(record);
        if let Some(dir) = out_dir {
            let last = epoch == config.epochs;
            if last || config.checkpoint_every.is_some_and(|e| e > 0 && epoch % e == 0) {
                let name = if last { format!("{method}.ckpt") } else { format!("{method}-epoch{epoch:04}.ckpt") };
                let path = dir.join(name);
                EncoderCheckpoint::new(method, epoch, config.clone(), learner.encoder.clone()).save(&path)?;
                saved.push(path);
            }
        }
    }
    if let Some(dir) = out_dir {
        write_curve_csv(&dir.join(format!("{method}-loss.csv")), &curve)?;
    }
    let final_distance = learner.target_distance();
    Ok(PretrainOutcome {
        checkpoint: EncoderCheckpoint::new(method, config.epochs, config.clone(), learner.encoder),
        curve,
        target: learner.target.map(|(enc, _, _)| enc),
        target_distance: initial_distance.zip(final_distance),
        saved,
    })
}

pub fn write_curve_csv(path: &Path, curve: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in curve {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::{render_synthetic, SyntheticConfig};
    use crate::region::AnatomicalRegion;
    use crate::train::ModelConfig;

    pub(crate) fn tiny_bank(per_class: usize) -> ImageBank {
        let config = SyntheticConfig {
            image_size: 32,
            ..SyntheticConfig::default()
        };
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        let mut images = Vec::new();
        for region in AnatomicalRegion::ALL {
            for i in 0..per_class {
                ids.push(format!("{}-{i}", region.name()));
                labels.push(region);
                images.push(render_synthetic(&config, region, i).image);
            }
        }
        ImageBank::new(ids, labels, images)
    }

    fn tiny_config(method: Method) -> TrainConfig {
        let mut c = TrainConfig::pretrain(method);
        c.model = ModelConfig {
            input_size: 32,
            base_width: 4,
        };
        c.epochs = 2;
        c.batch_size = 16;
        c.ssl.projection.hidden = 32;
        c.ssl.projection.output = 16;
        c.ssl.predictor.hidden = 32;
        c.ssl.predictor.output = 16;
        c.checkpoint_every = Some(1);
        c
    }

    #[test]
    fn every_objective_runs_and_saves_a_loadable_checkpoint() {
        let bank = tiny_bank(3);
        for method in Method::PRETRAINING {
            let dir = tempfile::tempdir().unwrap();
            let out = pretrain(method, &bank, &tiny_config(method), Some(dir.path())).unwrap();
            assert_eq!(out.curve.len(), 2);
            assert!(out.curve.iter().all(|r| r.loss.is_finite()));
            assert_eq!(out.saved.len(), 2);
            let back = EncoderCheckpoint::load(out.saved.last().unwrap()).unwrap();
            assert_eq!(back.method(), method);
            assert_eq!(back.epoch, 2);
            assert!(dir.path().join(format!("{method}-loss.csv")).exists());
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let bank = tiny_bank(2);
        let config = tiny_config(Method::Simclr);
        let a = pretrain(Method::Simclr, &bank, &config, None).unwrap();
        let b = pretrain(Method::Simclr, &bank, &config, None).unwrap();
        assert!((a.curve[1].loss - b.curve[1].loss).abs() < 1e-5);
    }

    #[test]
    fn moving_average_target_approaches_online_network() {
        let bank = tiny_bank(2);
        let mut config = tiny_config(Method::Byol);
        config.ssl.target_init = TargetInit::Independent;
        config.ssl.tau_base = 0.9;
        config.epochs = 3;
        let out = pretrain(Method::Byol, &bank, &config, None).unwrap();
        let (before, after) = out.target_distance.unwrap();
        assert!(after > 0.0);
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn supervised_is_not_a_pretraining_objective() {
        let bank = tiny_bank(1);
        assert!(matches!(
            pretrain(Method::Supervised, &bank, &tiny_config(Method::Simclr), None),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn oversized_batches_get_a_hint() {
        let bank = tiny_bank(2);
        let mut config = tiny_config(Method::Simclr);
        config.memory_limit_bytes = Some(1 << 20);
        assert!(matches!(pretrain(Method::Simclr, &bank, &config, None), Err(Error::OutOfMemoryHint { .. })));
    }
}
