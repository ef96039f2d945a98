//! Reconstruction and adversarial objectives, all in minimization form.
//! Expectations are means over the minibatch.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Probabilities are clamped to `[LOG_CLAMP, 1 - LOG_CLAMP]` before logs.
pub const LOG_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GanLoss {
    /// Generator minimizes `log(1 - D(G(s)))`.
    Minimax,
    /// Generator minimizes `-log D(G(s))`.
    NonSaturating,
}

impl GanLoss {
    pub fn as_str(self) -> &'static str {
        match self {
            GanLoss::Minimax => "minimax",
            GanLoss::NonSaturating => "nonsaturating",
        }
    }
}

impl fmt::Display for GanLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GanLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minimax" => Ok(GanLoss::Minimax),
            "nonsaturating" | "non-saturating" => Ok(GanLoss::NonSaturating),
            other => Err(Error::InvalidArgument(format!(
                "unknown GAN loss `{other}` (expected minimax or nonsaturating)"
            ))),
        }
    }
}

/// Mean of squared differences over all elements.
pub fn mse_loss<T: Real>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.mean(sq))
}

fn mean_log<T: Real>(tape: &mut Tape<T>, p: Var, complement: bool) -> Result<Var> {
    let clamped = tape.clamp(p, LOG_CLAMP, 1.0 - LOG_CLAMP);
    let arg = if complement {
        let neg = tape.scale(clamped, -1.0);
        tape.offset(neg, 1.0)
    } else {
        clamped
    };
    let logs = tape.ln(arg)?;
    Ok(tape.mean(logs))
}

/// `-mean(log d_real) - mean(log(1 - d_fake))`.
pub fn d_loss<T: Real>(tape: &mut Tape<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    let real = mean_log(tape, d_real, false)?;
    let fake = mean_log(tape, d_fake, true)?;
    let s = tape.add(real, fake)?;
    Ok(tape.scale(s, -1.0))
}

/// Adversarial term plus `lambda_mse · mse(pred, target)`.
pub fn g_loss<T: Real>(
    tape: &mut Tape<T>,
    d_fake: Var,
    pred: Var,
    target: Var,
    lambda_mse: f64,
    variant: GanLoss,
) -> Result<Var> {
    if !(lambda_mse >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda_mse must be >= 0, got {lambda_mse}"
        )));
    }
    let adv = match variant {
        GanLoss::Minimax => mean_log(tape, d_fake, true)?,
        GanLoss::NonSaturating => {
            let l = mean_log(tape, d_fake, false)?;
            tape.scale(l, -1.0)
        }
    };
    let mse = mse_loss(tape, pred, target)?;
    let weighted = tape.scale(mse, lambda_mse);
    tape.add(adv, weighted)
}
