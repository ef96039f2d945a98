use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::ensemble::{merge, MergeMode, MergeVars, SguVars};
use crate::error::{Error, Result};
use crate::model::params::{BoundParams, LayerSpec, ParamStore};
use crate::model::SgenConfig;
use crate::nn::{conv2d, deconv2d, ConvGeometry};
use crate::tensor::Real;

/// Initialization gain of SGU gate convolutions: near zero, so training
/// starts at the average-ensemble operating point.
const GATE_INIT_GAIN: f64 = 0.01;

/// Parameters at one merge site, depending on the merge mode.
#[derive(Clone, Debug, PartialEq)]
pub enum MergeSite {
    Sgu { gate_a: LayerSpec, gate_p: LayerSpec },
    Max,
    Average,
    Concat { proj: LayerSpec },
}

impl MergeSite {
    fn new(mode: MergeMode, stage: &str, level: usize, channels: usize) -> Self {
        match mode {
            MergeMode::Sgu => {
                let gate = |g: &str| {
                    LayerSpec::conv(
                        format!("sgu.{stage}.{level}.{g}"),
                        channels,
                        channels,
                        ConvGeometry::same3x3(),
                    )
                    .with_gain(GATE_INIT_GAIN)
                };
                MergeSite::Sgu {
                    gate_a: gate("gate_a"),
                    gate_p: gate("gate_p"),
                }
            }
            MergeMode::Max => MergeSite::Max,
            MergeMode::Average => MergeSite::Average,
            MergeMode::Concat => MergeSite::Concat {
                proj: LayerSpec::conv(
                    format!("cat.{stage}.{level}.proj"),
                    2 * channels,
                    channels,
                    ConvGeometry::pointwise(),
                ),
            },
        }
    }

    pub fn layers(&self) -> Vec<&LayerSpec> {
        match self {
            MergeSite::Sgu { gate_a, gate_p } => vec![gate_a, gate_p],
            MergeSite::Concat { proj } => vec![proj],
            MergeSite::Max | MergeSite::Average => Vec::new(),
        }
    }

    fn bind(&self, bound: &BoundParams) -> Result<Option<MergeVars>> {
        Ok(match self {
            MergeSite::Sgu { gate_a, gate_p } => Some(MergeVars::Sgu(SguVars {
                gate_a: gate_a.bind(bound)?,
                gate_p: gate_p.bind(bound)?,
            })),
            MergeSite::Concat { proj } => Some(MergeVars::Projection(proj.bind(bound)?)),
            MergeSite::Max | MergeSite::Average => None,
        })
    }
}

/// Intermediate features of one generator pass, indexed from level 1 at
/// position 0.
#[derive(Clone, Debug)]
pub struct GeneratorTrace {
    /// `x_k`, at spatial size `/2^k`.
    pub trunk: Vec<Var>,
    /// `X_k`, all at `/2^(N+1)`.
    pub base_encoders: Vec<Var>,
    /// `X̂_k`.
    pub merged_encoders: Vec<Var>,
    /// `Y_k`, at `/2^(N+1-k)`.
    pub base_decoders: Vec<Var>,
    /// `Ŷ_k`, at `/2^(N-k)`.
    pub merged_decoders: Vec<Var>,
    /// `G(s)`, same shape as the input.
    pub output: Var,
}

/// The sequential gating ensemble generator for a given configuration.
#[derive(Clone, Debug)]
pub struct Generator {
    n_levels: usize,
    slope: f64,
    mode: MergeMode,
    stem: LayerSpec,
    trunk: Vec<LayerSpec>,
    base_enc: Vec<LayerSpec>,
    enc_merge: Vec<MergeSite>,
    base_dec: Vec<LayerSpec>,
    dec_merge: Vec<MergeSite>,
    up: Vec<LayerSpec>,
    out: LayerSpec,
}

impl Generator {
    pub fn new(cfg: &SgenConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_levels;
        let (base, mid) = (cfg.base_channels, cfg.bottleneck_channels);
        let width = |k: usize| base << (k - 1);
        let pool2 = ConvGeometry::pooling(2)?;

        let stem = LayerSpec::conv("enc.trunk.0", 3, base, ConvGeometry::same3x3());
        let mut trunk = Vec::with_capacity(n);
        let mut base_enc = Vec::with_capacity(n);
        let mut base_dec = Vec::with_capacity(n);
        let mut up = Vec::with_capacity(n);
        for k in 1..=n {
            let in_c = if k == 1 { base } else { width(k - 1) };
            trunk.push(LayerSpec::conv(format!("enc.trunk.{k}"), in_c, width(k), pool2));
            base_enc.push(LayerSpec::conv(
                format!("enc.base.{k}"),
                width(k),
                mid,
                ConvGeometry::pooling(1 << (n - k + 1))?,
            ));
            base_dec.push(LayerSpec::deconv(
                format!("dec.base.{k}"),
                mid,
                mid,
                ConvGeometry::pooling(1 << k)?,
            ));
            up.push(LayerSpec::deconv(format!("dec.up.{k}"), mid, mid, pool2));
        }
        let enc_merge = (2..=n)
            .map(|k| MergeSite::new(cfg.merge_mode, "enc", k, mid))
            .collect();
        let dec_merge = (2..=n)
            .map(|k| MergeSite::new(cfg.merge_mode, "dec", k, mid))
            .collect();
        let out = LayerSpec::conv("out.conv", mid, 3, ConvGeometry::same3x3());

        Ok(Generator {
            n_levels: n,
            slope: cfg.lrelu_slope,
            mode: cfg.merge_mode,
            stem,
            trunk,
            base_enc,
            enc_merge,
            base_dec,
            dec_merge,
            up,
            out,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn merge_mode(&self) -> MergeMode {
        self.mode
    }

    pub fn divisor(&self) -> usize {
        1 << (self.n_levels + 1)
    }

    /// Every layer in parameter order.
    pub fn layers(&self) -> Vec<&LayerSpec> {
        let mut v = vec![&self.stem];
        v.extend(&self.trunk);
        v.extend(&self.base_enc);
        v.extend(self.enc_merge.iter().flat_map(MergeSite::layers));
        v.extend(&self.base_dec);
        v.extend(self.dec_merge.iter().flat_map(MergeSite::layers));
        v.extend(&self.up);
        v.push(&self.out);
        v
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    pub fn init_params<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        for layer in self.layers() {
            layer.init(&mut store, rng)?;
        }
        Ok(store)
    }

    /// Checks that `store` holds exactly this model's parameters.
    pub fn check_params<T: Real>(&self, store: &ParamStore<T>) -> Result<()> {
        let layers = self.layers();
        for layer in &layers {
            layer.check(store)?;
        }
        if store.len() != 2 * layers.len() {
            let extra = store
                .names()
                .find(|n| !layers.iter().any(|l| *n == l.weight_name() || *n == l.bias_name()))
                .unwrap_or("?");
            return Err(Error::InvalidArgument(format!(
                "parameter `{extra}` does not belong to this generator"
            )));
        }
        Ok(())
    }

    pub fn check_input_dims(&self, h: usize, w: usize) -> Result<()> {
        let d = self.divisor();
        if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
            return Err(Error::InvalidShape {
                op: "generator",
                msg: format!(
                    "input {h}x{w} must have height and width divisible by 2^(N+1) = {d} (N = {})",
                    self.n_levels
                ),
            });
        }
        Ok(())
    }

    /// Runs the generator on `s` of shape `(n, 3, h, w)`.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        s: Var,
        params: &BoundParams,
    ) -> Result<GeneratorTrace> {
        let shape = tape.shape(s);
        if shape.c() != 3 {
            return Err(Error::InvalidShape {
                op: "generator",
                msg: format!("expected 3 input channels, got {shape}"),
            });
        }
        self.check_input_dims(shape.h(), shape.w())?;
        let n = self.n_levels;
        let slope = self.slope;

        let conv_lrelu = |tape: &mut Tape<T>, x: Var, layer: &LayerSpec| -> Result<Var> {
            let y = conv2d(tape, x, &layer.bind(params)?)?;
            tape.lrelu(y, slope)
        };
        let deconv_relu = |tape: &mut Tape<T>, x: Var, layer: &LayerSpec| -> Result<Var> {
            let y = deconv2d(tape, x, &layer.bind(params)?)?;
            tape.relu(y)
        };

        // Encoder trunk: x_1 = lrelu(conv_2(lrelu(conv_1(s)))), x_k = lrelu(conv_2(x_{k-1})).
        let stem = conv_lrelu(tape, s, &self.stem)?;
        let mut trunk = Vec::with_capacity(n);
        let mut prev = stem;
        for layer in &self.trunk {
            prev = conv_lrelu(tape, prev, layer)?;
            trunk.push(prev);
        }

        // Base encoders X_k = lrelu(conv_{2^(N-k+1)}(x_k)), all at /2^(N+1).
        let base_encoders = trunk
            .iter()
            .zip(&self.base_enc)
            .map(|(&x, layer)| conv_lrelu(tape, x, layer))
            .collect::<Result<Vec<_>>>()?;

        // Bottom-up: the higher-level X_k is the active input.
        let mut merged_encoders = vec![base_encoders[0]];
        for (k, site) in self.enc_merge.iter().enumerate() {
            let vars = site.bind(params)?;
            let acc = *merged_encoders.last().expect("non-empty");
            let m = merge(tape, self.mode, base_encoders[k + 1], acc, vars.as_ref())?;
            merged_encoders.push(m);
        }

        // Base decoders Y_k = relu(deconv_{2^k}(X̂_{N-k+1})).
        let base_decoders = self
            .base_dec
            .iter()
            .enumerate()
            .map(|(k, layer)| deconv_relu(tape, merged_encoders[n - 1 - k], layer))
            .collect::<Result<Vec<_>>>()?;

        // Top-down: Ŷ_1 = relu(deconv_2(Y_1)); Ŷ_k = relu(deconv_2(merge(Y_k, Ŷ_{k-1}))),
        // with the lower-level Y_k active.
        let mut merged_decoders = Vec::with_capacity(n);
        merged_decoders.push(deconv_relu(tape, base_decoders[0], &self.up[0])?);
        for (k, site) in self.dec_merge.iter().enumerate() {
            let vars = site.bind(params)?;
            let acc = *merged_decoders.last().expect("non-empty");
            let m = merge(tape, self.mode, base_decoders[k + 1], acc, vars.as_ref())?;
            merged_decoders.push(deconv_relu(tape, m, &self.up[k + 1])?);
        }

        let last = *merged_decoders.last().expect("non-empty");
        let logits = conv2d(tape, last, &self.out.bind(params)?)?;
        let output = tape.tanh(logits)?;

        Ok(GeneratorTrace {
            trunk,
            base_encoders,
            merged_encoders,
            base_decoders,
            merged_decoders,
            output,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(cfg: &SgenConfig, h: usize, w: usize) -> (Tape<f32>, GeneratorTrace) {
        let g = Generator::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = g.init_params::<f32, _>(&mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape, false);
        let s = tape.constant(Tensor::rand_uniform(Shape::new(1, 3, h, w), -1.0, 1.0, &mut rng));
        let trace = g.forward(&mut tape, s, &bound).unwrap();
        (tape, trace)
    }

    #[test]
    fn feature_shapes_follow_levels() {
        let cfg = SgenConfig::tiny(3, 4, MergeMode::Sgu);
        let (tape, tr) = run(&cfg, 128, 96);
        assert_eq!(tape.shape(tr.output), Shape::new(1, 3, 128, 96));
        for (k, &x) in tr.trunk.iter().enumerate() {
            let f = 2 << k;
            assert_eq!(tape.shape(x), Shape::new(1, 4 << k, 128 / f, 96 / f));
        }
        for &x in tr.base_encoders.iter().chain(&tr.merged_encoders) {
            assert_eq!(tape.shape(x), Shape::new(1, 4, 8, 6));
        }
        for (k, &y) in tr.base_decoders.iter().enumerate() {
            let f = 16 >> (k + 1);
            assert_eq!(tape.shape(y), Shape::new(1, 4, 128 / f, 96 / f));
        }
        assert_eq!(tape.shape(tr.merged_decoders[0]), Shape::new(1, 4, 32, 24));
        assert!(tape.value(tr.output).data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn parameter_names_unique_and_named() {
        let g = Generator::new(&SgenConfig::tiny(3, 4, MergeMode::Sgu)).unwrap();
        let p = g.init_params::<f32, _>(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(p.contains("enc.trunk.1.weight"));
        assert!(p.contains("sgu.enc.2.gate_a.weight"));
        assert!(p.contains("sgu.dec.3.gate_p.bias"));
        assert_eq!(p.num_elements(), g.param_count());
        g.check_params(&p).unwrap();
    }

    #[test]
    fn indivisible_input_names_divisor() {
        let g = Generator::new(&SgenConfig::tiny(3, 2, MergeMode::Max)).unwrap();
        let err = g.check_input_dims(100, 96).unwrap_err().to_string();
        assert!(err.contains("16"), "{err}");
    }

    #[test]
    fn check_params_rejects_other_mode() {
        let sgu = Generator::new(&SgenConfig::tiny(2, 2, MergeMode::Sgu)).unwrap();
        let max = Generator::new(&SgenConfig::tiny(2, 2, MergeMode::Max)).unwrap();
        let p = sgu.init_params::<f32, _>(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(max.check_params(&p).is_err());
        let q = max.init_params::<f32, _>(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(sgu.check_params(&q).is_err());
    }
}
