use hgnn_core::model::DialogueStep;
use hgnn_core::{BatchExecutor, Model, Result, StepJob};
use rayon::prelude::*;

/// Computes the gradients of a batch on the rayon pool, one tape per
/// dialogue. Results keep job order, so training stays deterministic.
#[derive(Clone, Copy, Debug, Default)]
pub struct RayonExecutor;

impl BatchExecutor for RayonExecutor {
    fn run(&self, model: &Model, jobs: &[StepJob<'_>]) -> Vec<Result<DialogueStep>> {
        jobs.par_iter()
            .map(|j| model.step(j.dialogue, Some(j.dropout_seed)))
            .collect()
    }
}
