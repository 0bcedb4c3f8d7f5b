use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::AdamState;
use super::{lr_at, TrainConfig, TrainError};
use crate::data::{horizontal_flip, LabelMaps, Sample};
use crate::model::{
    forward_tape, loss_parts, multitask_loss, Batch, ModelError, PogarsConfig, PogarsParams,
};
use crate::scalar::Scalar;
use crate::tensor::Tape;

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// multi-task loss, sample mean over the epoch
    pub total: f64,
    pub group: f64,
    pub action: f64,
    /// group accuracy of the predictions made while training the epoch
    pub train_acc: f64,
}

/// The training set plus the mirrored copy of every sample.
pub fn augment_with_flips(samples: &[Sample]) -> Vec<Sample> {
    let maps = LabelMaps;
    samples
        .iter()
        .cloned()
        .chain(samples.iter().map(|s| horizontal_flip(s, &maps)))
        .collect()
}

/// Shuffle generator: its own stream so data order and init vary independently.
pub(crate) fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

pub(crate) fn check_samples(samples: &[Sample], cfg: &PogarsConfig) -> Result<(), TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    for s in samples {
        if s.persons.len() != cfg.persons {
            return Err(ModelError::PersonCount {
                id: s.id.clone(),
                expected: cfg.persons,
                found: s.persons.len(),
            }
            .into());
        }
        if s.frames() != cfg.frames {
            return Err(ModelError::FrameCount {
                id: s.id.clone(),
                expected: cfg.frames,
                found: s.frames(),
            }
            .into());
        }
        if cfg.ball_enabled && s.ball.is_none() {
            return Err(ModelError::SampleWithoutBall(s.id.clone()).into());
        }
    }
    Ok(())
}

pub(crate) fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Single-threaded minibatch trainer with ADAM and step decay.
#[derive(Debug, Clone)]
pub struct Trainer<S: Scalar = f32> {
    pub model: PogarsConfig,
    pub config: TrainConfig,
    pub params: PogarsParams<S>,
    pub adam: AdamState<S>,
    pub(crate) rng: ChaCha8Rng,
    pub epochs_done: usize,
    pub history: Vec<EpochStats>,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(model: PogarsConfig, config: TrainConfig) -> Result<Self, TrainError> {
        model.validate()?;
        config.validate()?;
        let params = PogarsParams::init(&model, config.seed)?;
        let adam = AdamState::new(&params);
        let rng = shuffle_rng(config.seed);
        Ok(Trainer {
            model,
            config,
            params,
            adam,
            rng,
            epochs_done: 0,
            history: Vec::new(),
        })
    }

    /// Runs one epoch over `train_set` as given (augment beforehand).
    pub fn run_epoch(&mut self, train_set: &[Sample]) -> Result<EpochStats, TrainError> {
        check_samples(train_set, &self.model)?;
        let epoch = self.epochs_done;
        let lr = lr_at(epoch, &self.config);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut self.rng);

        let (mut total, mut group, mut action) = (0.0, 0.0, 0.0);
        let mut correct = 0usize;
        for chunk in order.chunks(self.config.batch_size) {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch = Batch::<S>::from_samples(&samples, &self.model)?;
            self.params.zero_grads();
            let mut tape = Tape::new();
            let bound = self.params.bind(&mut tape);
            let vars = forward_tape(&mut tape, &bound, &self.model, &batch)?;
            let loss = multitask_loss(
                &mut tape,
                vars.group_logits,
                vars.action_logits,
                &batch.group_labels,
                &batch.action_labels,
                self.config.alpha,
            )?;
            let parts = loss_parts(&tape, &loss, self.config.alpha);
            let weight = chunk.len() as f64;
            total += parts.total * weight;
            group += parts.group * weight;
            action += parts.action * weight;
            let logits = tape.value(vars.group_logits);
            let classes = self.model.group_classes;
            correct += logits
                .values()
                .chunks(classes)
                .zip(&batch.group_labels)
                .filter(|(row, &y)| argmax(row) == y)
                .count();
            let mut grads = tape.backward(loss.total)?;
            self.params.accumulate_grads(&bound, &mut grads)?;
            self.adam.step(&mut self.params, lr)?;
        }
        self.params.zero_grads();
        let n = train_set.len() as f64;
        let stats = EpochStats {
            epoch,
            lr,
            total: total / n,
            group: group / n,
            action: action / n,
            train_acc: correct as f64 / n,
        };
        self.epochs_done += 1;
        self.history.push(stats);
        log::info!(
            "epoch {epoch}: lr {lr:e} L_MT {:.5} L_GA {:.5} L_IA {:.5} acc {:.4}",
            stats.total,
            stats.group,
            stats.action,
            stats.train_acc
        );
        Ok(stats)
    }

    /// Trains for `config.epochs` epochs, applying the augmentation policy.
    /// `on_epoch` sees each epoch's stats and may stop early by returning false.
    pub fn fit(
        &mut self,
        samples: &[Sample],
        mut on_epoch: impl FnMut(&EpochStats) -> bool,
    ) -> Result<&[EpochStats], TrainError> {
        check_samples(samples, &self.model)?;
        let owned;
        let train_set = if self.config.augment {
            owned = augment_with_flips(samples);
            &owned[..]
        } else {
            samples
        };
        while self.epochs_done < self.config.epochs {
            let stats = self.run_epoch(train_set)?;
            if !on_epoch(&stats) {
                break;
            }
        }
        if !self.params.all_finite() {
            return Err(TrainError::NonFinite("parameters".into()));
        }
        Ok(&self.history)
    }
}
