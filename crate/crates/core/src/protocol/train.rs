use super::inference::{evaluate, EvalOptions};
use super::round::{run_training_round, RoundRecord};
use super::schedule::schedule_minibatches;
use super::{Dataset, Split, TrainingConfig, TrainingState};
use crate::error::Result;

/// Trains for `config.rounds` rounds and returns every round's record.
pub fn train<D: Dataset + ?Sized>(
    config: TrainingConfig,
    dataset: &D,
) -> Result<(TrainingState, Vec<RoundRecord>)> {
    let mut records = Vec::with_capacity(config.rounds);
    let state = train_with(config, dataset, |_, r| {
        records.push(r.clone());
        Ok(())
    })?;
    Ok((state, records))
}

/// Like [`train`], handing each record to `on_round` as soon as the round
/// (and its validation pass, on evaluation rounds) completes.
pub fn train_with<D, F>(
    config: TrainingConfig,
    dataset: &D,
    mut on_round: F,
) -> Result<TrainingState>
where
    D: Dataset + ?Sized,
    F: FnMut(&TrainingState, &RoundRecord) -> Result<()>,
{
    let mut state = TrainingState::new(config, dataset.observation_len(), dataset.classes())?;
    if state.config.rounds == 0 {
        return Ok(state);
    }
    let schedule = schedule_minibatches(
        state.config.seed,
        dataset.len(Split::Train),
        state.config.batch,
        state.config.rounds,
    )?;
    let has_validation = dataset.len(Split::Validation) > 0;
    for (k0, batch) in schedule.iter().enumerate() {
        let k = k0 + 1;
        let mut record = run_training_round(&mut state, dataset, batch, k)?;
        if has_validation && k % state.config.eval_every == 0 {
            let opts = EvalOptions {
                split: Split::Validation,
                nodes: state.config.nodes,
                snr_db: state.config.val_snr_db,
                seed: state.config.seed,
                max_samples: None,
            };
            record.val_accuracy = Some(evaluate(&state, dataset, &opts)?.accuracy);
        }
        on_round(&state, &record)?;
    }
    Ok(state)
}
