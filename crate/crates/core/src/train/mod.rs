//! Losses, optimizer, training loops, transfer and evaluation.

mod ablation;
mod adam;
mod adapters;
mod checkpoint;
mod eval;
mod loop_;
mod loss;
mod transfer;

pub use ablation::{ablation_run, AblationFlag, AblationRow, AblationSetup, AblationTable};
pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use adapters::{
    adapt_entailment, adapt_storycloze, EntailmentLabel, EntailmentRecord, StoryRecord,
};
pub use checkpoint::{Checkpoint, TrainingMeta, CHECKPOINT_VERSION};
pub use eval::{
    evaluate, evaluate_binary, group_questions, score_question, summarize, ChoiceScorer,
    EvalReport, FixedScorer, Question, QuestionOutcome, LOW_MARGIN,
};
pub use loop_::{train_stream, EpochLog, EvalSet, TrainConfig, TrainOutcome};
pub use loss::{bce_loss, bce_loss_on_tape, PROB_CLAMP};
pub use transfer::transfer_load;
