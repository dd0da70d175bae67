//! Minibatch training of the joint objective with Adam.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::corpus::DialogueRecord;
use crate::error::{Error, Result};
use crate::model::{DialogueStep, Model};
use crate::params::AdamState;
use crate::tape::Gradients;
use crate::tensor::Tensor;

/// One unit of gradient work: a dialogue and the seed of its dropout masks.
#[derive(Clone, Copy, Debug)]
pub struct StepJob<'a> {
    pub dialogue: &'a DialogueRecord,
    pub dropout_seed: u64,
}

/// Computes per-dialogue gradients for a batch. Results come back in job
/// order, so the reduction is deterministic however the work is scheduled.
pub trait BatchExecutor {
    fn run(&self, model: &Model, jobs: &[StepJob<'_>]) -> Vec<Result<DialogueStep>>;
}

/// Runs the batch on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl BatchExecutor for Sequential {
    fn run(&self, model: &Model, jobs: &[StepJob<'_>]) -> Vec<Result<DialogueStep>> {
        jobs.iter()
            .map(|j| model.step(j.dialogue, Some(j.dropout_seed)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean joint objective over the dialogues that were trained on.
    pub objective: f64,
    pub generation: f64,
    pub classification: f64,
    /// Fraction of dialogues whose predicted emotion matched the gold label.
    pub emotion_accuracy: f64,
    pub dialogues: usize,
    pub skipped: usize,
}

pub struct Trainer {
    pub model: Model,
    pub adam: AdamState,
    rng: ChaCha8Rng,
    epoch: usize,
}

/// Averages gradients in order; missing entries count as zero.
pub fn average_gradients(parts: &[Gradients]) -> Gradients {
    let mut out = Gradients::new();
    let n = parts.len() as f64;
    for g in parts {
        for (name, t) in g {
            match out.get_mut(name) {
                Some(acc) => {
                    for (a, b) in acc.values_mut().iter_mut().zip(t.values()) {
                        *a += b;
                    }
                }
                None => {
                    out.insert(name.clone(), t.clone());
                }
            }
        }
    }
    for t in out.values_mut() {
        let scaled: Tensor = t.map(|v| v / n);
        *t = scaled;
    }
    out
}

impl Trainer {
    pub fn new(model: Model) -> Self {
        let adam = AdamState::new(&model.params);
        let rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ 0x7261_696e);
        Trainer {
            model,
            adam,
            rng,
            epoch: 0,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.model.config
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// One pass over `corpus` in a shuffled order. Malformed dialogues are
    /// skipped and counted; any other error ends the epoch.
    pub fn train_epoch<E: BatchExecutor + ?Sized>(
        &mut self,
        corpus: &[DialogueRecord],
        executor: &E,
    ) -> Result<EpochLog> {
        if corpus.is_empty() {
            return Err(Error::Contract("training corpus is empty".into()));
        }
        let max_turns = self.model.config.max_turns;
        let mut order: Vec<usize> = Vec::with_capacity(corpus.len());
        let mut skipped = 0;
        for (i, d) in corpus.iter().enumerate() {
            match d.validate(max_turns) {
                Ok(()) => order.push(i),
                Err(e) => {
                    log::warn!("skipping dialogue {i}: {e}");
                    skipped += 1;
                }
            }
        }
        order.shuffle(&mut self.rng);

        let mut sums = EpochLog {
            epoch: self.epoch + 1,
            ..EpochLog::default()
        };
        let mut correct = 0usize;
        for batch in order.chunks(self.model.config.batch_size) {
            let jobs: Vec<StepJob<'_>> = batch
                .iter()
                .map(|&i| StepJob {
                    dialogue: &corpus[i],
                    dropout_seed: self.rng.next_u64(),
                })
                .collect();
            let results = executor.run(&self.model, &jobs);
            let mut grads = Vec::with_capacity(results.len());
            for (job, r) in batch.iter().zip(results) {
                match r {
                    Ok(step) => {
                        sums.objective += step.values.total;
                        sums.generation += step.values.generation;
                        sums.classification += step.values.classification;
                        if corpus[*job].response_emotion == Some(step.predicted) {
                            correct += 1;
                        }
                        sums.dialogues += 1;
                        grads.push(step.grads);
                    }
                    Err(e @ Error::MalformedRecord { .. }) => {
                        log::warn!("skipping dialogue {job}: {e}");
                        skipped += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
            if grads.is_empty() {
                continue;
            }
            let mean = average_gradients(&grads);
            self.adam
                .step(&mut self.model.params, &mean, &self.model.config.adam)?;
        }
        self.epoch += 1;
        let n = sums.dialogues.max(1) as f64;
        Ok(EpochLog {
            objective: sums.objective / n,
            generation: sums.generation / n,
            classification: sums.classification / n,
            emotion_accuracy: correct as f64 / n,
            skipped,
            ..sums
        })
    }
}

/// Builds a model from `corpus` and trains it for `config.epochs` epochs.
pub fn train(corpus: &[DialogueRecord], config: TrainConfig) -> Result<(Model, Vec<EpochLog>)> {
    let epochs = config.epochs;
    let mut trainer = Trainer::new(Model::from_corpus(corpus, config)?);
    let mut log = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        log.push(trainer.train_epoch(corpus, &Sequential)?);
    }
    Ok((trainer.model, log))
}
