use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use indexmap::IndexMap;
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{fan_in_std, ConvGeometry, ConvVars};
use crate::tensor::{Real, Shape, Tensor};

/// Ordered map from hierarchical parameter name to tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    params: IndexMap<String, Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        self.params.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Records every parameter as a tape leaf with an empty gradient buffer,
    /// so a backward pass on the tape sees only this tape's contributions.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| {
                let mut leaf = t.clone();
                leaf.clear_grad();
                let v = tape.leaf(leaf.with_requires_grad(requires_grad));
                (name.clone(), v)
            })
            .collect();
        BoundParams { vars }
    }

    /// Adds the gradients accumulated on `tape` into each parameter's buffer.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, bound: &BoundParams) -> Result<()> {
        for (name, &var) in &bound.vars {
            let t = self.get_mut(name)?;
            match tape.grad(var) {
                Some(g) => t.accumulate_grad(g)?,
                None => t.accumulate_grad(&vec![T::zero(); t.numel()])?,
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.values_mut().for_each(Tensor::zero_grad);
    }

    pub fn clear_grads(&mut self) {
        self.params.values_mut().for_each(Tensor::clear_grad);
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Applies `f` to every value in place.
    pub fn map_values(&mut self, f: impl Fn(T) -> T) {
        for t in self.params.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = f(*v));
        }
    }

    /// Hash over names, shapes and the exact bits of every value.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (name, t) in &self.params {
            name.hash(&mut h);
            t.shape().hash(&mut h);
            for v in t.data() {
                v.as_f64().to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Parameter name → tape variable for one forward pass.
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, Var)>,
        S: Into<String>,
    {
        BoundParams {
            vars: pairs.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Deconv,
}

/// Description of one convolution or transposed convolution and its
/// `name.weight` / `name.bias` parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: ConvGeometry,
    /// Multiplier on the fan-in initialization std.
    pub init_gain: f64,
}

impl LayerSpec {
    pub fn conv(name: impl Into<String>, in_c: usize, out_c: usize, geometry: ConvGeometry) -> Self {
        LayerSpec {
            name: name.into(),
            kind: LayerKind::Conv,
            in_channels: in_c,
            out_channels: out_c,
            geometry,
            init_gain: 1.0,
        }
    }

    pub fn deconv(name: impl Into<String>, in_c: usize, out_c: usize, geometry: ConvGeometry) -> Self {
        LayerSpec {
            kind: LayerKind::Deconv,
            ..Self::conv(name, in_c, out_c, geometry)
        }
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.init_gain = gain;
        self
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn weight_shape(&self) -> Shape {
        let k = self.geometry.kernel;
        match self.kind {
            LayerKind::Conv => Shape::new(self.out_channels, self.in_channels, k, k),
            LayerKind::Deconv => Shape::new(self.in_channels, self.out_channels, k, k),
        }
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(1, self.out_channels, 1, 1)
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().numel() + self.out_channels
    }

    /// Gaussian weights with std `sqrt(2 / (in · k · k))` times the gain,
    /// for convolutions and transposed convolutions alike; zero bias.
    pub fn init<T: Real, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        let std = fan_in_std(self.in_channels, self.geometry.kernel) * self.init_gain;
        store.insert(self.weight_name(), Tensor::randn(self.weight_shape(), std, rng))?;
        store.insert(self.bias_name(), Tensor::zeros(self.bias_shape()))
    }

    pub fn bind(&self, bound: &BoundParams) -> Result<ConvVars> {
        Ok(ConvVars {
            weight: bound.get(&self.weight_name())?,
            bias: bound.get(&self.bias_name())?,
            geometry: self.geometry,
        })
    }

    /// Checks that `store` holds this layer's tensors with the right shapes.
    pub fn check<T: Real>(&self, store: &ParamStore<T>) -> Result<()> {
        for (name, shape) in [
            (self.weight_name(), self.weight_shape()),
            (self.bias_name(), self.bias_shape()),
        ] {
            let t = store.get(&name)?;
            if t.shape() != shape {
                return Err(Error::InvalidShape {
                    op: "parameters",
                    msg: format!("`{name}` has shape {} but the model expects {shape}", t.shape()),
                });
            }
        }
        Ok(())
    }
}
