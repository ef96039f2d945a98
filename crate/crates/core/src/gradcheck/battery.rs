//! The double-precision gradient-check battery: every differentiable tape
//! operation on several shapes, the losses, the merge units, a tiny generator
//! in every merge mode and the discriminator.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{CustomBackward, Tape, Var};
use crate::ensemble::{merge, MergeMode, MergeVars, SguVars};
use crate::error::Result;
use crate::gradcheck::{grad_check_inputs, GradCheckReport};
use crate::losses::{d_loss, g_loss, mse_loss, GanLoss};
use crate::model::{BoundParams, Discriminator, Generator, SgenConfig};
use crate::nn::{conv2d, deconv2d, global_avg_pool, ConvGeometry, ConvVars};
use crate::tensor::{Shape, Tensor};

/// Tolerance for single operations.
pub const OP_TOLERANCE: f64 = 1e-5;
/// Tolerance for composed models.
pub const MODEL_TOLERANCE: f64 = 1e-4;

const OP_EPS: f64 = 1e-3;
const MODEL_EPS: f64 = 3e-4;

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub tolerance: f64,
    pub report: GradCheckReport,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.report.checked > 0 && self.report.max_relative_error < self.tolerance
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<34} max_rel={:.3e} tol={:.0e} checked={} skipped={}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.report.max_relative_error,
            self.tolerance,
            self.report.checked,
            self.report.skipped_kinks
        )
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(shape: Shape, seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut rng(seed))
}

fn uniform(shape: Shape, lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    Tensor::rand_uniform(shape, lo, hi, &mut rng(seed))
}

/// Reduces `y` to a scalar with fixed pseudo-random weights so that every
/// output element gets a distinct upstream gradient.
fn weighted_sum(tape: &mut Tape<f64>, y: Var) -> Result<Var> {
    let shape = tape.shape(y);
    let w = uniform(shape, -1.5, 1.5, 0xC0FFEE ^ shape.numel() as u64);
    let wv = tape.constant(w);
    let m = tape.mul(y, wv)?;
    Ok(tape.sum(m))
}

fn check<F>(out: &mut Vec<CheckOutcome>, name: String, tolerance: f64, eps: f64, inputs: &[Tensor<f64>], build: F) -> Result<()>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let report = grad_check_inputs(build, inputs, eps)?;
    out.push(CheckOutcome {
        name,
        tolerance,
        report,
    });
    Ok(())
}

const SHAPES: [Shape; 3] = [Shape::new(1, 1, 3, 3), Shape::new(2, 3, 4, 5), Shape::new(1, 2, 8, 8)];

type Unary = fn(&mut Tape<f64>, Var) -> Result<Var>;
type BinaryFn = fn(&mut Tape<f64>, Var, Var) -> Result<Var>;

fn elementwise(out: &mut Vec<CheckOutcome>) -> Result<()> {
    let unary: [(&str, Unary, (f64, f64)); 11] = [
        ("scale", |t, x| Ok(t.scale(x, -1.7)), (-2.0, 2.0)),
        ("offset", |t, x| Ok(t.offset(x, 0.3)), (-2.0, 2.0)),
        ("relu", |t, x| t.relu(x), (-2.0, 2.0)),
        ("lrelu", |t, x| t.lrelu(x, 0.2), (-2.0, 2.0)),
        ("sigmoid", |t, x| t.sigmoid(x), (-3.0, 3.0)),
        ("tanh", |t, x| t.tanh(x), (-2.0, 2.0)),
        ("ln", |t, x| t.ln(x), (0.5, 2.0)),
        ("clamp", |t, x| Ok(t.clamp(x, -0.5, 0.5)), (-1.0, 1.0)),
        ("sum", |t, x| Ok(t.sum(x)), (-2.0, 2.0)),
        ("mean", |t, x| Ok(t.mean(x)), (-2.0, 2.0)),
        ("global_avg_pool", global_avg_pool, (-2.0, 2.0)),
    ];
    for (name, op, (lo, hi)) in unary {
        for (i, &shape) in SHAPES.iter().enumerate() {
            let x = uniform(shape, lo, hi, 10 + i as u64);
            check(out, format!("{name} {shape}"), OP_TOLERANCE, OP_EPS, &[x], |t, v| {
                let y = op(t, v[0])?;
                weighted_sum(t, y)
            })?;
        }
    }
    let binary: [(&str, BinaryFn); 5] = [
        ("add", |t, a, b| t.add(a, b)),
        ("sub", |t, a, b| t.sub(a, b)),
        ("mul", |t, a, b| t.mul(a, b)),
        ("max", |t, a, b| t.max(a, b)),
        ("concat_channels", |t, a, b| t.concat_channels(a, b)),
    ];
    for (name, op) in binary {
        for (i, &shape) in SHAPES.iter().enumerate() {
            let a = randn(shape, 20 + i as u64);
            let b = randn(shape, 30 + i as u64);
            check(out, format!("{name} {shape}"), OP_TOLERANCE, OP_EPS, &[a, b], |t, v| {
                let y = op(t, v[0], v[1])?;
                weighted_sum(t, y)
            })?;
        }
    }
    Ok(())
}

fn conv_vars(v: &[Var], geometry: ConvGeometry) -> ConvVars {
    ConvVars {
        weight: v[1],
        bias: v[2],
        geometry,
    }
}

fn convolutions(out: &mut Vec<CheckOutcome>) -> Result<()> {
    let cases = [
        ("same3x3", ConvGeometry::same3x3()),
        ("pointwise", ConvGeometry::pointwise()),
        ("pool2", ConvGeometry::pooling(2)?),
        ("pool4", ConvGeometry::pooling(4)?),
        ("pool2-truncating", ConvGeometry::pooling(2)?.truncating()),
    ];
    let shapes = [Shape::new(1, 2, 8, 8), Shape::new(2, 1, 4, 8), Shape::new(1, 3, 8, 4)];
    for (name, g) in cases {
        for (i, &xs) in shapes.iter().enumerate() {
            let out_c = 2;
            let x = randn(xs, 40 + i as u64);
            let w = randn(Shape::new(out_c, xs.c(), g.kernel, g.kernel), 50 + i as u64);
            let b = randn(Shape::new(1, out_c, 1, 1), 60 + i as u64);
            check(out, format!("conv2d {name} {xs}"), OP_TOLERANCE, OP_EPS, &[x, w, b], |t, v| {
                let y = conv2d(t, v[0], &conv_vars(v, g))?;
                weighted_sum(t, y)
            })?;
        }
    }
    let cases = [
        ("same3x3", ConvGeometry::same3x3()),
        ("pool2", ConvGeometry::pooling(2)?),
        ("pool4", ConvGeometry::pooling(4)?),
    ];
    let shapes = [Shape::new(1, 2, 2, 2), Shape::new(2, 1, 1, 3), Shape::new(1, 3, 3, 2)];
    for (name, g) in cases {
        for (i, &xs) in shapes.iter().enumerate() {
            let out_c = 2;
            let x = randn(xs, 70 + i as u64);
            let w = randn(Shape::new(xs.c(), out_c, g.kernel, g.kernel), 80 + i as u64);
            let b = randn(Shape::new(1, out_c, 1, 1), 90 + i as u64);
            check(out, format!("deconv2d {name} {xs}"), OP_TOLERANCE, OP_EPS, &[x, w, b], |t, v| {
                let y = deconv2d(t, v[0], &conv_vars(v, g))?;
                weighted_sum(t, y)
            })?;
        }
    }
    Ok(())
}

fn losses(out: &mut Vec<CheckOutcome>) -> Result<()> {
    for (i, &shape) in SHAPES.iter().enumerate() {
        let p = randn(shape, 100 + i as u64);
        let q = randn(shape, 110 + i as u64);
        check(out, format!("mse_loss {shape}"), OP_TOLERANCE, OP_EPS, &[p, q], |t, v| {
            mse_loss(t, v[0], v[1])
        })?;
    }
    for (i, n) in [1usize, 3, 8].into_iter().enumerate() {
        let shape = Shape::new(n, 1, 1, 1);
        let real = uniform(shape, 0.05, 0.95, 120 + i as u64);
        let fake = uniform(shape, 0.05, 0.95, 130 + i as u64);
        check(out, format!("d_loss {shape}"), OP_TOLERANCE, OP_EPS, &[real, fake], |t, v| {
            d_loss(t, v[0], v[1])
        })?;
        for variant in [GanLoss::Minimax, GanLoss::NonSaturating] {
            let d = uniform(shape, 0.05, 0.95, 140 + i as u64);
            let img = Shape::new(n, 3, 4, 4);
            let p = randn(img, 150 + i as u64);
            let q = randn(img, 160 + i as u64);
            check(out, format!("g_loss {variant} {shape}"), OP_TOLERANCE, OP_EPS, &[d, p, q], |t, v| {
                g_loss(t, v[0], v[1], v[2], 0.1, variant)
            })?;
        }
    }
    Ok(())
}

fn merges(out: &mut Vec<CheckOutcome>) -> Result<()> {
    let c = 4;
    let xs = Shape::new(1, c, 8, 8);
    let gate = Shape::new(c, c, 3, 3);
    let bias = Shape::new(1, c, 1, 1);
    let g = ConvGeometry::same3x3();
    let inputs = vec![
        randn(xs, 200),
        randn(xs, 201),
        uniform(gate, -0.3, 0.3, 202),
        uniform(bias, -0.5, 0.5, 203),
        uniform(gate, -0.3, 0.3, 204),
        uniform(bias, -0.5, 0.5, 205),
    ];
    check(out, format!("sgu {xs}"), OP_TOLERANCE, OP_EPS, &inputs, |t, v| {
        let p = SguVars {
            gate_a: ConvVars { weight: v[2], bias: v[3], geometry: g },
            gate_p: ConvVars { weight: v[4], bias: v[5], geometry: g },
        };
        let y = merge(t, MergeMode::Sgu, v[0], v[1], Some(&MergeVars::Sgu(p)))?;
        weighted_sum(t, y)
    })?;
    for mode in [MergeMode::Max, MergeMode::Average] {
        check(out, format!("merge {mode} {xs}"), OP_TOLERANCE, OP_EPS, &inputs[..2], |t, v| {
            let y = merge(t, mode, v[0], v[1], None)?;
            weighted_sum(t, y)
        })?;
    }
    let proj = vec![
        randn(xs, 210),
        randn(xs, 211),
        randn(Shape::new(c, 2 * c, 1, 1), 212),
        randn(bias, 213),
    ];
    check(out, format!("merge concat {xs}"), OP_TOLERANCE, OP_EPS, &proj, |t, v| {
        let p = ConvVars { weight: v[2], bias: v[3], geometry: ConvGeometry::pointwise() };
        let y = merge(t, MergeMode::Concat, v[0], v[1], Some(&MergeVars::Projection(p)))?;
        weighted_sum(t, y)
    })?;
    Ok(())
}

/// Checks with respect to the input and every parameter of a model.
fn model_check<F>(out: &mut Vec<CheckOutcome>, name: String, input: Tensor<f64>, params: Vec<(String, Tensor<f64>)>, forward: F) -> Result<()>
where
    F: Fn(&mut Tape<f64>, Var, &BoundParams) -> Result<Var>,
{
    let names: Vec<String> = params.iter().map(|(n, _)| n.clone()).collect();
    let mut inputs = vec![input];
    inputs.extend(params.into_iter().map(|(_, t)| t));
    check(out, name, MODEL_TOLERANCE, MODEL_EPS, &inputs, |t, v| {
        let bound = BoundParams::from_pairs(names.iter().cloned().zip(v[1..].iter().copied()));
        let y = forward(t, v[0], &bound)?;
        weighted_sum(t, y)
    })
}

fn models(out: &mut Vec<CheckOutcome>) -> Result<()> {
    for (i, mode) in MergeMode::ALL.into_iter().enumerate() {
        let cfg = SgenConfig::tiny(2, 2, mode);
        let gen = Generator::new(&cfg)?;
        let mut r = rng(300 + i as u64);
        let store = gen.init_params::<f64, _>(&mut r)?;
        // Push weights away from zero so that no path is dead and gates are
        // not saturated at their near-zero initialization.
        let params = store
            .iter()
            .map(|(n, t)| (n.to_string(), t.map(|v| v + 0.3 * (v.signum() + 0.1))))
            .collect();
        let s = uniform(Shape::new(1, 3, 16, 16), -1.0, 1.0, 310 + i as u64);
        model_check(out, format!("generator N=2 {mode}"), s, params, |t, x, b| {
            Ok(gen.forward(t, x, b)?.output)
        })?;
    }
    let cfg = SgenConfig::tiny(2, 2, MergeMode::Sgu);
    let disc = Discriminator::new(&cfg)?;
    for (i, shape) in [Shape::new(2, 3, 16, 16), Shape::new(1, 3, 20, 24)].into_iter().enumerate() {
        let store = disc.init_params::<f64, _>(&mut rng(400 + i as u64))?;
        let params = store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
        let x = uniform(shape, -1.0, 1.0, 410 + i as u64);
        model_check(out, format!("discriminator {shape}"), x, params, |t, x, b| disc.forward(t, x, b))?;
    }
    Ok(())
}

/// Squaring with a deliberately wrong derivative (`x` instead of `2x`).
struct BrokenSquare;

impl CustomBackward<f64> for BrokenSquare {
    fn backward(&self, inputs: &[&Tensor<f64>], _output: &Tensor<f64>, grad_out: &[f64]) -> Vec<Vec<f64>> {
        vec![inputs[0].data().iter().zip(grad_out).map(|(x, g)| x * g).collect()]
    }
}

/// A check that must fail: proves the battery detects a corrupted backward rule.
pub fn faulty_fixture() -> Result<CheckOutcome> {
    let mut out = Vec::new();
    let x = randn(Shape::new(1, 2, 3, 3), 500);
    check(&mut out, "fixture: corrupted square backward".into(), OP_TOLERANCE, OP_EPS, &[x], |t, v| {
        let xv = t.value(v[0]);
        let sq = xv.map(|a| a * a);
        let y = t.custom(&[v[0]], sq, Box::new(BrokenSquare));
        weighted_sum(t, y)
    })?;
    Ok(out.remove(0))
}

/// Runs every check of the battery.
pub fn run_battery() -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    elementwise(&mut out)?;
    convolutions(&mut out)?;
    losses(&mut out)?;
    merges(&mut out)?;
    models(&mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_fails() {
        let f = faulty_fixture().unwrap();
        assert!(!f.passed(), "{f}");
        assert!(f.to_string().starts_with("FAIL"));
    }
}
