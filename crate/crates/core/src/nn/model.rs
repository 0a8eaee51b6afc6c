use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{no_grad, Real, Tensor, Var};

use super::blocks::{gated_block_forward, lstm_forward, GatedLayer, LstmVars, TfilmLayer};
use super::{Family, ModelError, ModelSpec, TfilmVariant};

#[derive(Clone, Debug)]
pub(crate) struct TfilmSlots {
    pub w_ih: usize,
    pub w_hh: usize,
    pub b_ih: usize,
    pub b_hh: usize,
    pub projection: Option<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub(crate) struct LayerSlots {
    pub in_channels: usize,
    pub dilation: usize,
    pub conv_w: usize,
    pub conv_b: usize,
    pub mix_w: usize,
    pub mix_b: usize,
    pub tfilm: Option<TfilmSlots>,
}

#[derive(Clone, Debug)]
pub(crate) enum Layout {
    Gcn { layers: Vec<LayerSlots>, out_w: usize, out_b: usize },
    Lstm { w_ih: usize, w_hh: usize, b_ih: usize, b_hh: usize, out_w: usize, out_b: usize },
}

/// An instantiated network: spec, named weights, and where each weight sits.
#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    names: Vec<String>,
    params: Vec<Tensor<f32>>,
    layout: Layout,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.names == other.names && self.params == other.params
    }
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    fan_in: Vec<usize>,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>, fan_in: usize) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.fan_in.push(fan_in);
        self.names.len() - 1
    }
}

fn describe(spec: &ModelSpec) -> Result<(Builder, Layout), ModelError> {
    spec.validate()?;
    let mut b = Builder { names: Vec::new(), shapes: Vec::new(), fan_in: Vec::new() };
    let layout = match spec.family {
        Family::Lstm => {
            let h = spec.hidden_size.unwrap_or(0);
            Layout::Lstm {
                w_ih: b.push("lstm.w_ih".into(), vec![4 * h, 1], h),
                w_hh: b.push("lstm.w_hh".into(), vec![4 * h, h], h),
                b_ih: b.push("lstm.b_ih".into(), vec![4 * h], h),
                b_hh: b.push("lstm.b_hh".into(), vec![4 * h], h),
                out_w: b.push("output.weight".into(), vec![1, h], h),
                out_b: b.push("output.bias".into(), vec![1], h),
            }
        }
        Family::Gcn | Family::Gcntf => {
            let c = spec.channels;
            let mut layers = Vec::with_capacity(spec.layers);
            for (i, dilation) in spec.dilations().into_iter().enumerate() {
                let in_channels = if i == 0 { 1 } else { c };
                let conv_w = b.push(
                    format!("layers.{i}.conv.weight"),
                    vec![2 * c, in_channels, spec.kernel_size],
                    in_channels * spec.kernel_size,
                );
                let conv_b = b.push(format!("layers.{i}.conv.bias"), vec![2 * c], in_channels * spec.kernel_size);
                let tfilm = spec.has_tfilm().then(|| TfilmSlots {
                    w_ih: b.push(format!("layers.{i}.tfilm.w_ih"), vec![4 * c, c], c),
                    w_hh: b.push(format!("layers.{i}.tfilm.w_hh"), vec![4 * c, c], c),
                    b_ih: b.push(format!("layers.{i}.tfilm.b_ih"), vec![4 * c], c),
                    b_hh: b.push(format!("layers.{i}.tfilm.b_hh"), vec![4 * c], c),
                    projection: (spec.tfilm_variant == TfilmVariant::Projected).then(|| {
                        (
                            b.push(format!("layers.{i}.tfilm.proj.weight"), vec![2 * c, c], c),
                            b.push(format!("layers.{i}.tfilm.proj.bias"), vec![2 * c], c),
                        )
                    }),
                });
                let mix_w = b.push(format!("layers.{i}.mix.weight"), vec![c, c, 1], c);
                let mix_b = b.push(format!("layers.{i}.mix.bias"), vec![c], c);
                layers.push(LayerSlots { in_channels, dilation, conv_w, conv_b, mix_w, mix_b, tfilm });
            }
            let out_w = b.push("output.weight".into(), vec![1, spec.layers * c, 1], spec.layers * c);
            let out_b = b.push("output.bias".into(), vec![1], spec.layers * c);
            Layout::Gcn { layers, out_w, out_b }
        }
    };
    Ok((b, layout))
}

impl Model {
    /// Builds a model with weights and biases drawn uniformly from
    /// ±1/√fan_in (recurrent cells use their hidden width). LSTM forget gates
    /// start with a bias of one.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self, ModelError> {
        let (builder, layout) = describe(&spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(builder.names.len());
        for ((name, shape), &fan_in) in builder.names.iter().zip(&builder.shapes).zip(&builder.fan_in) {
            let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
            let n: usize = shape.iter().product();
            let mut data: Vec<f32> = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
            if name.ends_with("b_ih") || name.ends_with("b_hh") {
                let h = n / 4;
                let forget = if name.ends_with("b_ih") { 1.0 } else { 0.0 };
                data[h..2 * h].iter_mut().for_each(|v| *v = forget);
            }
            params.push(Tensor::new(shape.clone(), data)?);
        }
        Ok(Model { spec, names: builder.names, params, layout })
    }

    /// All weights zero.
    pub fn zeros(spec: ModelSpec) -> Result<Self, ModelError> {
        let (builder, layout) = describe(&spec)?;
        let params = builder.shapes.iter().map(|s| Tensor::zeros(s.clone())).collect();
        Ok(Model { spec, names: builder.names, params, layout })
    }

    /// Rebuilds a model from named tensors, checking names and shapes.
    pub fn from_named(spec: ModelSpec, named: Vec<(String, Tensor<f32>)>) -> Result<Self, ModelError> {
        let mut model = Model::zeros(spec)?;
        let mut lookup: std::collections::HashMap<String, Tensor<f32>> = named.into_iter().collect();
        for (name, slot) in model.names.iter().zip(model.params.iter_mut()) {
            let t = lookup.remove(name).ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            if t.shape() != slot.shape() {
                return Err(ModelError::ParamShape {
                    name: name.clone(),
                    expected: slot.shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
            *slot = t;
        }
        if let Some(extra) = lookup.keys().next() {
            return Err(ModelError::InvalidSpec(format!("unexpected parameter `{extra}`")));
        }
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<f32>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<f32>] {
        &mut self.params
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<f32>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.params[i])
    }

    /// Count of instantiated weight entries.
    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Weights as graph leaves in element type `T`.
    pub fn vars<T: Real>(&self, requires_grad: bool) -> Vec<Var<T>> {
        self.params.iter().map(|p| Var::leaf(p.cast::<T>(), requires_grad)).collect()
    }

    /// Full-sequence forward pass of `x` (`[1×L]`) using `params` from
    /// [`Model::vars`]. Returns `[1×L]`.
    pub fn forward<T: Real>(&self, params: &[Var<T>], x: &Var<T>) -> Result<Var<T>, ModelError> {
        if params.len() != self.params.len() {
            return Err(ModelError::InvalidSpec(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                params.len()
            )));
        }
        if x.shape().len() != 2 || x.shape()[0] != 1 {
            return Err(ModelError::InvalidSpec(format!("model input must be [1×L], got {:?}", x.shape())));
        }
        match &self.layout {
            Layout::Lstm { w_ih, w_hh, b_ih, b_hh, out_w, out_b } => {
                let vars =
                    LstmVars { w_ih: &params[*w_ih], w_hh: &params[*w_hh], b_ih: &params[*b_ih], b_hh: &params[*b_hh] };
                let (hseq, _) = lstm_forward(x, &vars)?;
                let y = params[*out_w].matmul(&hseq)?.add(&params[*out_b])?;
                Ok(y.add(x)?)
            }
            Layout::Gcn { layers, out_w, out_b } => {
                let mut h = x.clone();
                let mut skips = Vec::with_capacity(layers.len());
                for slots in layers {
                    let layer = self.bind(params, slots);
                    let (residual, skip) = gated_block_forward(&h, &layer)?;
                    skips.push(skip);
                    h = residual;
                }
                let stacked = Var::concat(&skips, 0)?;
                Ok(stacked.conv1d_causal(&params[*out_w], &params[*out_b], 1)?)
            }
        }
    }

    fn bind<'a, T: Real>(&self, params: &'a [Var<T>], s: &LayerSlots) -> GatedLayer<'a, T> {
        GatedLayer {
            dilation: s.dilation,
            conv_w: &params[s.conv_w],
            conv_b: &params[s.conv_b],
            mix_w: &params[s.mix_w],
            mix_b: &params[s.mix_b],
            tfilm: s.tfilm.as_ref().map(|t| TfilmLayer {
                block_size: self.spec.tfilm_block_size.unwrap_or(1),
                variant: self.spec.tfilm_variant,
                w_ih: &params[t.w_ih],
                w_hh: &params[t.w_hh],
                b_ih: &params[t.b_ih],
                b_hh: &params[t.b_hh],
                projection: t.projection.map(|(w, b)| (&params[w], &params[b])),
            }),
        }
    }

    /// Gradient-free forward over a whole signal.
    pub fn infer(&self, input: &[f32]) -> Result<Vec<f32>, ModelError> {
        no_grad(|| {
            let params = self.vars::<f32>(false);
            let x = Var::constant(Tensor::new(vec![1, input.len()], input.to_vec())?);
            Ok(self.forward(&params, &x)?.value().clone().into_data())
        })
    }
}
