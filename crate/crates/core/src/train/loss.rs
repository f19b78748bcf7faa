use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f64 = 1e-7;

/// Binary cross-entropy of probability `p` against label `y`.
pub fn bce_loss(p: f64, y: u8) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if y == 1 {
        -libm::log(p)
    } else {
        -libm::log(1.0 - p)
    }
}

/// [`bce_loss`] recorded on the tape; returns a `[1]` loss.
pub fn bce_loss_on_tape(tape: &mut Tape, p: Var, y: u8) -> Result<Var> {
    let p = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let target = if y == 1 {
        p
    } else {
        let shape = tape.value(p).shape().to_vec();
        let one = tape.constant(Tensor::filled(&shape, 1.0));
        tape.sub(one, p)?
    };
    let ln = tape.ln(target)?;
    let neg = tape.scale(ln, -1.0)?;
    tape.reshape(neg, &[1])
}
