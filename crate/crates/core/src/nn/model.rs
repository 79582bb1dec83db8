use rand::Rng;

use super::graph::Graph;
use super::layers::{Activation, Dense, EdgeConv, Layer, LayerCache, Linear};
use super::{NnError, Tensor};
use crate::Scalar;

/// A trunk of layers followed by zero or more parallel heads. Without heads
/// the trunk output is the single model output.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel<T> {
    input_width: usize,
    trunk: Vec<Layer<T>>,
    heads: Vec<Vec<Layer<T>>>,
}

/// Activations kept by [`GnnModel::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    trunk: Vec<LayerCache<T>>,
    heads: Vec<Vec<LayerCache<T>>>,
    trunk_output: (usize, usize),
    outputs: Vec<(usize, usize)>,
}

/// Parameter gradients, one buffer per parameter tensor in model order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &GnnModel<T>) -> Self {
        Self {
            tensors: model
                .params()
                .iter()
                .map(|p| vec![T::zero(); p.len()])
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        self.tensors
            .iter_mut()
            .flat_map(|t| t.iter_mut())
            .for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().flatten().all(|v| *v == T::zero())
    }

    pub fn shapes(&self) -> Vec<usize> {
        self.tensors.iter().map(Vec::len).collect()
    }
}

fn run_layers<'g, T: Scalar>(
    layers: &[Layer<T>],
    mut x: Tensor<T>,
    mut level: Option<&'g Graph<T>>,
    caches: &mut Vec<LayerCache<T>>,
) -> Result<(Tensor<T>, Option<&'g Graph<T>>), NnError> {
    for layer in layers {
        let (y, cache, next) = layer.forward(&x, level)?;
        caches.push(cache);
        x = y;
        level = next;
    }
    Ok((x, level))
}

fn back_layers<T: Scalar>(
    layers: &[Layer<T>],
    caches: &[LayerCache<T>],
    mut grad: Tensor<T>,
) -> Result<(Tensor<T>, Vec<Vec<T>>), NnError> {
    let mut per_layer: Vec<Vec<Vec<T>>> = vec![Vec::new(); layers.len()];
    for (i, (layer, cache)) in layers.iter().zip(caches).enumerate().rev() {
        let (dx, g) = layer.backward(cache, &grad)?;
        per_layer[i] = g;
        grad = dx;
    }
    Ok((grad, per_layer.into_iter().flatten().collect()))
}

impl<T: Scalar> GnnModel<T> {
    pub fn builder(input_width: usize) -> ModelBuilder {
        ModelBuilder::new(input_width)
    }

    pub(crate) fn from_parts(
        input_width: usize,
        trunk: Vec<Layer<T>>,
        heads: Vec<Vec<Layer<T>>>,
    ) -> Self {
        Self {
            input_width,
            trunk,
            heads,
        }
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn trunk(&self) -> &[Layer<T>] {
        &self.trunk
    }

    pub fn heads(&self) -> &[Vec<Layer<T>>] {
        &self.heads
    }

    pub fn heads_mut(&mut self) -> &mut [Vec<Layer<T>>] {
        &mut self.heads
    }

    pub fn num_outputs(&self) -> usize {
        self.heads.len().max(1)
    }

    fn all_layers(&self) -> impl Iterator<Item = &Layer<T>> {
        self.trunk.iter().chain(self.heads.iter().flatten())
    }

    pub fn params(&self) -> Vec<&[T]> {
        self.all_layers().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.trunk
            .iter_mut()
            .chain(self.heads.iter_mut().flatten())
            .flat_map(Layer::params_mut)
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// Architecture fingerprint: one line per layer with its dimensions.
    pub fn signature(&self) -> Vec<String> {
        let describe = |l: &Layer<T>| match l {
            Layer::Dense(d) => format!(
                "dense {}->{} {:?}",
                d.linear.input(),
                d.linear.output(),
                d.activation
            ),
            Layer::EdgeConv(c) => format!(
                "edge_conv edge={:?} mlp={:?} residual={} self_loops={}",
                c.edge_width,
                c.mlp
                    .iter()
                    .map(|l| (l.input(), l.output()))
                    .collect::<Vec<_>>(),
                c.residual,
                c.self_loops
            ),
            Layer::MaxPoolGroups => "max_pool".to_string(),
            Layer::EdgeReadout => "edge_readout".to_string(),
        };
        let mut out = vec![format!("input {}", self.input_width)];
        out.extend(self.trunk.iter().map(describe));
        for (i, h) in self.heads.iter().enumerate() {
            out.push(format!("head {i}"));
            out.extend(h.iter().map(describe));
        }
        out
    }

    pub fn forward(&self, graph: &Graph<T>) -> Result<(Vec<Tensor<T>>, ForwardCache<T>), NnError> {
        graph.validate()?;
        if graph.vertex_features.cols() != self.input_width {
            return Err(NnError::Contract(format!(
                "model expects vertex width {}, graph has {}",
                self.input_width,
                graph.vertex_features.cols()
            )));
        }
        if !graph.vertex_features.is_finite() {
            return Err(NnError::Contract("non-finite vertex features".into()));
        }
        let mut trunk_caches = Vec::with_capacity(self.trunk.len());
        let (z, level) = run_layers(
            &self.trunk,
            graph.vertex_features.clone(),
            Some(graph),
            &mut trunk_caches,
        )?;
        let trunk_output = (z.rows(), z.cols());
        let mut outputs = Vec::new();
        let mut head_caches = Vec::new();
        if self.heads.is_empty() {
            outputs.push(z);
        } else {
            for head in &self.heads {
                let mut caches = Vec::with_capacity(head.len());
                let (y, _) = run_layers(head, z.clone(), level, &mut caches)?;
                outputs.push(y);
                head_caches.push(caches);
            }
        }
        let shapes = outputs.iter().map(|o| (o.rows(), o.cols())).collect();
        Ok((
            outputs,
            ForwardCache {
                trunk: trunk_caches,
                heads: head_caches,
                trunk_output,
                outputs: shapes,
            },
        ))
    }

    /// Forward pass without keeping the cache.
    pub fn predict(&self, graph: &Graph<T>) -> Result<Vec<Tensor<T>>, NnError> {
        self.forward(graph).map(|(o, _)| o)
    }

    /// Gradients of a scalar loss given `d loss / d output` for every output.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        output_grads: &[Tensor<T>],
    ) -> Result<Gradients<T>, NnError> {
        if output_grads.len() != cache.outputs.len() {
            return Err(NnError::Contract(format!(
                "{} output gradients for {} outputs",
                output_grads.len(),
                cache.outputs.len()
            )));
        }
        for (g, &(r, c)) in output_grads.iter().zip(&cache.outputs) {
            if g.rows() != r || g.cols() != c {
                return Err(NnError::Contract(format!(
                    "output gradient {}x{} does not match output {r}x{c}",
                    g.rows(),
                    g.cols()
                )));
            }
        }
        let (rows, cols) = cache.trunk_output;
        let (trunk_grad, head_params) = if self.heads.is_empty() {
            (output_grads[0].clone(), Vec::new())
        } else {
            let mut acc = Tensor::zeros(rows, cols);
            let mut params = Vec::new();
            for ((head, caches), g) in self.heads.iter().zip(&cache.heads).zip(output_grads) {
                let (dz, p) = back_layers(head, caches, g.clone())?;
                for (a, &b) in acc.data_mut().iter_mut().zip(dz.data()) {
                    *a += b;
                }
                params.push(p);
            }
            (acc, params)
        };
        let (_, mut tensors) = back_layers(&self.trunk, &cache.trunk, trunk_grad)?;
        tensors.extend(head_params.into_iter().flatten());
        Ok(Gradients { tensors })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum LayerSpec {
    EdgeConv {
        edge_width: Option<usize>,
        widths: Vec<usize>,
        residual: bool,
        self_loops: bool,
    },
    Dense {
        output: usize,
        activation: Activation,
    },
    MaxPool,
    EdgeReadout,
}

/// How to fill parameters when building a model.
pub enum Init<'a, R: Rng + ?Sized> {
    Zeros,
    Random(&'a mut R),
}

#[derive(Debug, Clone)]
pub struct ModelBuilder {
    input: usize,
    trunk: Vec<LayerSpec>,
    heads: Vec<Vec<LayerSpec>>,
    self_loops: bool,
}

impl ModelBuilder {
    pub fn new(input: usize) -> Self {
        Self {
            input,
            trunk: Vec::new(),
            heads: Vec::new(),
            self_loops: true,
        }
    }

    /// Applies to edge-conv layers added afterwards.
    pub fn self_loops(mut self, enabled: bool) -> Self {
        self.self_loops = enabled;
        self
    }

    fn push(mut self, spec: LayerSpec) -> Self {
        match self.heads.last_mut() {
            Some(h) => h.push(spec),
            None => self.trunk.push(spec),
        }
        self
    }

    /// Plain EdgeConv with a `h` of hidden widths `widths` (each linear + ReLU).
    pub fn edge_conv(self, widths: &[usize]) -> Self {
        let self_loops = self.self_loops;
        self.push(LayerSpec::EdgeConv {
            edge_width: None,
            widths: widths.to_vec(),
            residual: false,
            self_loops,
        })
    }

    /// EdgeConv-E consuming edge attributes of width `edge_width`.
    pub fn edge_conv_e(self, widths: &[usize], edge_width: usize) -> Self {
        let self_loops = self.self_loops;
        self.push(LayerSpec::EdgeConv {
            edge_width: Some(edge_width),
            widths: widths.to_vec(),
            residual: false,
            self_loops,
        })
    }

    /// Marks the most recent edge conv as residual (additive skip).
    pub fn residual(mut self) -> Self {
        let list = self.heads.last_mut().unwrap_or(&mut self.trunk);
        if let Some(LayerSpec::EdgeConv { residual, .. }) = list.last_mut() {
            *residual = true;
        }
        self
    }

    pub fn dense(self, output: usize, activation: Activation) -> Self {
        self.push(LayerSpec::Dense { output, activation })
    }

    pub fn max_pool(self) -> Self {
        self.push(LayerSpec::MaxPool)
    }

    pub fn edge_readout(self) -> Self {
        self.push(LayerSpec::EdgeReadout)
    }

    /// Starts a new parallel head; following layers go into it.
    pub fn head(mut self) -> Self {
        self.heads.push(Vec::new());
        self
    }

    pub fn build<T: Scalar, R: Rng + ?Sized>(self, mut init: Init<'_, R>) -> Result<GnnModel<T>, NnError> {
        let mut make = |i: usize, o: usize| match &mut init {
            Init::Zeros => Linear::zeros(i, o),
            Init::Random(rng) => Linear::random(i, o, *rng),
        };
        let mut build_list = |specs: &[LayerSpec], mut width: usize| {
            let mut layers = Vec::new();
            for spec in specs {
                match spec {
                    LayerSpec::EdgeConv {
                        edge_width,
                        widths,
                        residual,
                        self_loops,
                    } => {
                        if widths.is_empty() {
                            return Err(NnError::Contract("edge conv needs a hidden width".into()));
                        }
                        let mut input = 2 * width + edge_width.unwrap_or(0);
                        let mut mlp = Vec::new();
                        for &w in widths {
                            mlp.push(make(input, w));
                            input = w;
                        }
                        if *residual && input != width {
                            return Err(NnError::Contract(format!(
                                "residual edge conv maps {width} -> {input}"
                            )));
                        }
                        layers.push(Layer::EdgeConv(EdgeConv {
                            mlp,
                            edge_width: *edge_width,
                            residual: *residual,
                            self_loops: *self_loops,
                        }));
                        width = input;
                    }
                    LayerSpec::Dense { output, activation } => {
                        layers.push(Layer::Dense(Dense {
                            linear: make(width, *output),
                            activation: *activation,
                        }));
                        width = *output;
                    }
                    LayerSpec::MaxPool => layers.push(Layer::MaxPoolGroups),
                    LayerSpec::EdgeReadout => {
                        layers.push(Layer::EdgeReadout);
                        width *= 2;
                    }
                }
            }
            Ok((layers, width))
        };
        let (trunk, width) = build_list(&self.trunk, self.input)?;
        let mut heads = Vec::new();
        for h in &self.heads {
            heads.push(build_list(h, width)?.0);
        }
        Ok(GnnModel::from_parts(self.input, trunk, heads))
    }
}
