use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::params::{BoundParams, LayerSpec, ParamStore};
use crate::model::SgenConfig;
use crate::nn::{conv2d, global_avg_pool, ConvGeometry};
use crate::tensor::Real;

/// Smallest accepted spatial size: four stride-2 layers leave at least 1x1.
pub const MIN_DISC_INPUT: usize = 16;

/// Fully convolutional discriminator: four stride-2 convolutions with leaky
/// relu, a 1x1 convolution to one channel, global average pooling and a
/// sigmoid. Accepts any input of at least 16x16.
#[derive(Clone, Debug)]
pub struct Discriminator {
    slope: f64,
    convs: Vec<LayerSpec>,
    head: LayerSpec,
}

impl Discriminator {
    pub fn new(cfg: &SgenConfig) -> Result<Self> {
        cfg.validate()?;
        let geometry = ConvGeometry::pooling(2)?.truncating();
        let mut in_c = 3;
        let mut convs = Vec::with_capacity(4);
        for k in 0..4 {
            let out_c = cfg.disc_channels << k;
            convs.push(LayerSpec::conv(format!("disc.conv.{}", k + 1), in_c, out_c, geometry));
            in_c = out_c;
        }
        let head = LayerSpec::conv("disc.head", in_c, 1, ConvGeometry::pointwise());
        Ok(Discriminator {
            slope: cfg.lrelu_slope,
            convs,
            head,
        })
    }

    pub fn layers(&self) -> Vec<&LayerSpec> {
        self.convs.iter().chain(std::iter::once(&self.head)).collect()
    }

    pub fn init_params<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        for layer in self.layers() {
            layer.init(&mut store, rng)?;
        }
        Ok(store)
    }

    /// Probability that each sample is real, shape `(n, 1, 1, 1)`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var, params: &BoundParams) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.c() != 3 || shape.h() < MIN_DISC_INPUT || shape.w() < MIN_DISC_INPUT {
            return Err(Error::InvalidShape {
                op: "discriminator",
                msg: format!(
                    "expected (n, 3, h, w) with h, w >= {MIN_DISC_INPUT}, got {shape}"
                ),
            });
        }
        let mut h = x;
        for layer in &self.convs {
            let y = conv2d(tape, h, &layer.bind(params)?)?;
            h = tape.lrelu(y, self.slope)?;
        }
        let logits = conv2d(tape, h, &self.head.bind(params)?)?;
        let pooled = global_avg_pool(tape, logits)?;
        tape.sigmoid(pooled)
    }
}
