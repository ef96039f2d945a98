//! Merging two same-shape feature tensors: the sequential gating unit and
//! the max / average / concatenate ensemble baselines.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{conv2d, ConvVars};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum MergeMode {
    #[default]
    Sgu,
    Max,
    Average,
    Concat,
}

impl MergeMode {
    pub const ALL: [MergeMode; 4] = [
        MergeMode::Sgu,
        MergeMode::Max,
        MergeMode::Average,
        MergeMode::Concat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MergeMode::Sgu => "sgu",
            MergeMode::Max => "max",
            MergeMode::Average => "average",
            MergeMode::Concat => "concat",
        }
    }
}

impl fmt::Display for MergeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MergeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgu" => Ok(MergeMode::Sgu),
            "max" => Ok(MergeMode::Max),
            "average" | "avg" => Ok(MergeMode::Average),
            "concat" => Ok(MergeMode::Concat),
            other => Err(Error::InvalidArgument(format!(
                "unknown merge mode `{other}` (expected sgu, max, average or concat)"
            ))),
        }
    }
}

/// The two gate convolutions of an SGU, both applied to the active input.
#[derive(Clone, Copy, Debug)]
pub struct SguVars {
    pub gate_a: ConvVars,
    pub gate_p: ConvVars,
}

#[derive(Clone, Copy, Debug)]
pub enum MergeVars {
    Sgu(SguVars),
    /// 1x1 projection from `2c` back to `c` channels.
    Projection(ConvVars),
}

/// `f = σ(gate_a(x_a)) ⊙ x_a + σ(gate_p(x_a)) ⊙ x_p`.
///
/// The active input `x_a` decides both what it contributes itself and what
/// passes through from the passive input `x_p`.
pub fn sgu<T: Real>(tape: &mut Tape<T>, x_a: Var, x_p: Var, p: &SguVars) -> Result<Var> {
    let (sa, sp) = (tape.shape(x_a), tape.shape(x_p));
    if sa != sp {
        return Err(Error::ShapeMismatch {
            op: "sgu",
            left: sa,
            right: sp,
        });
    }
    let za = conv2d(tape, x_a, &p.gate_a)?;
    let ga = tape.sigmoid(za)?;
    let zp = conv2d(tape, x_a, &p.gate_p)?;
    let gp = tape.sigmoid(zp)?;
    let own = tape.mul(ga, x_a)?;
    let passed = tape.mul(gp, x_p)?;
    tape.add(own, passed)
}

/// Combines a new feature with the accumulated one; `x_new` is the active
/// input and wins max ties.
pub fn merge<T: Real>(
    tape: &mut Tape<T>,
    mode: MergeMode,
    x_new: Var,
    x_prev: Var,
    params: Option<&MergeVars>,
) -> Result<Var> {
    let (sn, sp) = (tape.shape(x_new), tape.shape(x_prev));
    if sn != sp {
        return Err(Error::ShapeMismatch {
            op: "merge",
            left: sn,
            right: sp,
        });
    }
    match (mode, params) {
        (MergeMode::Max, _) => tape.max(x_new, x_prev),
        (MergeMode::Average, _) => {
            let s = tape.add(x_new, x_prev)?;
            Ok(tape.scale(s, 0.5))
        }
        (MergeMode::Sgu, Some(MergeVars::Sgu(p))) => sgu(tape, x_new, x_prev, p),
        (MergeMode::Concat, Some(MergeVars::Projection(p))) => {
            let cat = tape.concat_channels(x_new, x_prev)?;
            conv2d(tape, cat, p)
        }
        (mode, _) => Err(Error::InvalidArgument(format!(
            "merge mode `{mode}` requires its parameters"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ConvGeometry, ConvParams};
    use crate::tensor::{Shape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_gates(tape: &mut Tape<f64>, c: usize, bias: f64) -> SguVars {
        let mut p = ConvParams::<f64>::zeros(c, c, ConvGeometry::same3x3());
        p.bias = Tensor::full(Shape::new(1, c, 1, 1), bias);
        SguVars {
            gate_a: p.bind(tape, false),
            gate_p: p.bind(tape, false),
        }
    }

    #[test]
    fn zero_gates_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::randn(Shape::new(2, 3, 4, 5), 1.0, &mut rng));
        let b = tape.constant(Tensor::randn(Shape::new(2, 3, 4, 5), 1.0, &mut rng));
        let p = zero_gates(&mut tape, 3, 0.0);
        let f = sgu(&mut tape, a, b, &p).unwrap();
        let avg = merge(&mut tape, MergeMode::Average, a, b, None).unwrap();
        assert_eq!(tape.value(f).data(), tape.value(avg).data());
    }

    #[test]
    fn saturated_gates_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::randn(Shape::new(1, 2, 4, 4), 1.0, &mut rng));
        let b = tape.constant(Tensor::randn(Shape::new(1, 2, 4, 4), 1.0, &mut rng));
        let p = zero_gates(&mut tape, 2, 1e4);
        let f = sgu(&mut tape, a, b, &p).unwrap();
        let s = tape.add(a, b).unwrap();
        for (x, y) in tape.value(f).data().iter().zip(tape.value(s).data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn max_and_average_elementwise() {
        let mut tape = Tape::<f64>::new();
        let t = |v: &[f64]| Tensor::from_vec(Shape::new(1, 1, 1, 2), v.to_vec()).unwrap();
        let a = tape.constant(t(&[1.0, 5.0]));
        let b = tape.constant(t(&[4.0, 2.0]));
        let m = merge(&mut tape, MergeMode::Max, a, b, None).unwrap();
        assert_eq!(tape.value(m).data(), &[4.0, 5.0]);
        let avg = merge(&mut tape, MergeMode::Average, a, a, None).unwrap();
        assert_eq!(tape.value(avg).data(), tape.value(a).data());
    }

    #[test]
    fn missing_params_rejected() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(Shape::new(1, 1, 2, 2)));
        assert!(merge(&mut tape, MergeMode::Sgu, a, a, None).is_err());
        assert!(merge(&mut tape, MergeMode::Concat, a, a, None).is_err());
        let b = tape.constant(Tensor::zeros(Shape::new(1, 2, 2, 2)));
        assert!(merge(&mut tape, MergeMode::Max, a, b, None).is_err());
    }

    #[test]
    fn mode_parse_round_trip() {
        for m in MergeMode::ALL {
            assert_eq!(m.as_str().parse::<MergeMode>().unwrap(), m);
        }
        assert!("mean".parse::<MergeMode>().is_err());
    }
}
