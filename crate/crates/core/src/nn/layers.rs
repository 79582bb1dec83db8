use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Neighborhoods};
use super::{NnError, Tensor};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply<T: Scalar>(self, t: &mut Tensor<T>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => t.data_mut().iter_mut().for_each(|v| {
                if *v < T::zero() {
                    *v = T::zero()
                }
            }),
            Activation::Sigmoid => t
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = sigmoid(*v)),
        }
    }

    /// Multiplies `grad` by the derivative, expressed through the output.
    fn backprop<T: Scalar>(self, output: &Tensor<T>, grad: &mut Tensor<T>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => {
                for (g, &y) in grad.data_mut().iter_mut().zip(output.data()) {
                    if y <= T::zero() {
                        *g = T::zero();
                    }
                }
            }
            Activation::Sigmoid => {
                for (g, &y) in grad.data_mut().iter_mut().zip(output.data()) {
                    *g *= y * (T::one() - y);
                }
            }
        }
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Fully-connected transform `y = x W + b`, `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(input, output),
            bias: vec![T::zero(); output],
        }
    }

    /// He-uniform weights, zero bias.
    pub fn random<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let limit = (6.0 / input.max(1) as f64).sqrt();
        let data = (0..input * output)
            .map(|_| T::lit(rng.random_range(-limit..limit)))
            .collect();
        Self {
            weight: Tensor::from_vec(input, output, data),
            bias: vec![T::zero(); output],
        }
    }

    pub fn input(&self) -> usize {
        self.weight.rows()
    }

    pub fn output(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub linear: Linear<T>,
    pub activation: Activation,
}

/// EdgeConv layer: `x_v <- max_{v' in N(v)} h([x_v, x_v' - x_v (, e_vv')])`
/// with `h` a stack of linear + ReLU transforms. `edge_width` is `None` for
/// the plain variant and `Some(Fe)` when edge attributes are concatenated.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeConv<T> {
    pub mlp: Vec<Linear<T>>,
    pub edge_width: Option<usize>,
    pub residual: bool,
    pub self_loops: bool,
}

impl<T: Scalar> EdgeConv<T> {
    pub fn vertex_width(&self) -> usize {
        (self.mlp[0].input() - self.edge_width.unwrap_or(0)) / 2
    }

    pub fn output_width(&self) -> usize {
        self.mlp.last().map_or(0, Linear::output)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    EdgeConv(EdgeConv<T>),
    Dense(Dense<T>),
    /// Element-wise max over each vertex group; switches to the pooled level.
    MaxPoolGroups,
    /// Turns vertex rows into edge rows `[x_dst, x_src - x_dst]`.
    EdgeReadout,
}

#[derive(Debug, Clone)]
pub(crate) enum LayerCache<T> {
    Dense {
        input: Tensor<T>,
        output: Tensor<T>,
    },
    EdgeConv {
        input_rows: usize,
        width: usize,
        nbrs: Neighborhoods,
        activations: Vec<Tensor<T>>,
        argmax: Vec<usize>,
    },
    MaxPool {
        input_rows: usize,
        argmax: Vec<usize>,
    },
    EdgeReadout {
        input_rows: usize,
        edges: Vec<(usize, usize)>,
    },
}

fn need_level<'g, T>(level: Option<&'g Graph<T>>, what: &str) -> Result<&'g Graph<T>, NnError> {
    level.ok_or_else(|| NnError::Contract(format!("{what} needs a graph level but none is active")))
}

impl<T: Scalar> Layer<T> {
    pub(crate) fn params(&self) -> Vec<&[T]> {
        match self {
            Layer::Dense(d) => vec![d.linear.weight.data(), &d.linear.bias],
            Layer::EdgeConv(c) => c
                .mlp
                .iter()
                .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
                .collect(),
            _ => Vec::new(),
        }
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        match self {
            Layer::Dense(d) => vec![d.linear.weight.data_mut(), &mut d.linear.bias],
            Layer::EdgeConv(c) => c
                .mlp
                .iter_mut()
                .flat_map(|l| [l.weight.data_mut(), &mut l.bias])
                .collect(),
            _ => Vec::new(),
        }
    }

    pub(crate) fn forward<'g>(
        &self,
        x: &Tensor<T>,
        level: Option<&'g Graph<T>>,
    ) -> Result<(Tensor<T>, LayerCache<T>, Option<&'g Graph<T>>), NnError> {
        match self {
            Layer::Dense(d) => {
                if x.cols() != d.linear.input() {
                    return Err(NnError::Contract(format!(
                        "dense layer expects width {}, got {}",
                        d.linear.input(),
                        x.cols()
                    )));
                }
                let mut y = x.affine(&d.linear.weight, &d.linear.bias);
                d.activation.apply(&mut y);
                let cache = LayerCache::Dense {
                    input: x.clone(),
                    output: y.clone(),
                };
                Ok((y, cache, level))
            }
            Layer::EdgeConv(conv) => {
                let graph = need_level(level, "edge conv")?;
                let (y, cache) = edge_conv_forward(conv, x, graph)?;
                Ok((y, cache, level))
            }
            Layer::MaxPoolGroups => {
                let graph = need_level(level, "max pool")?;
                let (y, cache) = maxpool_forward(x, graph)?;
                Ok((y, cache, graph.pooled.as_deref()))
            }
            Layer::EdgeReadout => {
                let graph = need_level(level, "edge readout")?;
                if graph.num_vertices() != x.rows() {
                    return Err(NnError::Contract("edge readout row mismatch".into()));
                }
                let f = x.cols();
                let mut y = Tensor::zeros(graph.edges.len(), 2 * f);
                for (e, &(s, d)) in graph.edges.iter().enumerate() {
                    let row = y.row_mut(e);
                    let (xd, xs) = (x.row(d), x.row(s));
                    for c in 0..f {
                        row[c] = xd[c];
                        row[f + c] = xs[c] - xd[c];
                    }
                }
                let cache = LayerCache::EdgeReadout {
                    input_rows: x.rows(),
                    edges: graph.edges.clone(),
                };
                Ok((y, cache, level))
            }
        }
    }

    /// Returns the input gradient and the parameter gradients in
    /// [`Layer::params`] order.
    pub(crate) fn backward(
        &self,
        cache: &LayerCache<T>,
        dy: &Tensor<T>,
    ) -> Result<(Tensor<T>, Vec<Vec<T>>), NnError> {
        match (self, cache) {
            (Layer::Dense(d), LayerCache::Dense { input, output }) => {
                check_shape(dy, output.rows(), output.cols())?;
                let mut dz = dy.clone();
                d.activation.backprop(output, &mut dz);
                let mut dw = vec![T::zero(); d.linear.input() * d.linear.output()];
                input.tmul_acc(&dz, &mut dw);
                let db = column_sums(&dz);
                Ok((dz.mul_t(&d.linear.weight), vec![dw, db]))
            }
            (
                Layer::EdgeConv(conv),
                LayerCache::EdgeConv {
                    input_rows,
                    width,
                    nbrs,
                    activations,
                    argmax,
                },
            ) => {
                let out_w = conv.output_width();
                check_shape(dy, *input_rows, out_w)?;
                let n_msg = nbrs.len();
                let mut da = Tensor::zeros(n_msg, out_w);
                for v in 0..*input_rows {
                    for c in 0..out_w {
                        let m = argmax[v * out_w + c];
                        let g = dy.get(v, c);
                        da.set(m, c, da.get(m, c) + g);
                    }
                }
                let mut grads = vec![Vec::new(); 2 * conv.mlp.len()];
                for (l, lin) in conv.mlp.iter().enumerate().rev() {
                    Activation::Relu.backprop(&activations[l + 1], &mut da);
                    let mut dw = vec![T::zero(); lin.input() * lin.output()];
                    activations[l].tmul_acc(&da, &mut dw);
                    grads[2 * l] = dw;
                    grads[2 * l + 1] = column_sums(&da);
                    da = da.mul_t(&lin.weight);
                }
                let f = *width;
                let mut dx = Tensor::zeros(*input_rows, f);
                for (m, inc) in nbrs.incoming.iter().enumerate() {
                    let v = nbrs.dst[m];
                    let g = da.row(m);
                    for c in 0..f {
                        let rel = g[f + c];
                        dx.set(v, c, dx.get(v, c) + g[c] - rel);
                        dx.set(inc.src, c, dx.get(inc.src, c) + rel);
                    }
                }
                if conv.residual {
                    for (d, &g) in dx.data_mut().iter_mut().zip(dy.data()) {
                        *d += g;
                    }
                }
                Ok((dx, grads))
            }
            (Layer::MaxPoolGroups, LayerCache::MaxPool { input_rows, argmax }) => {
                let cols = dy.cols();
                let mut dx = Tensor::zeros(*input_rows, cols);
                for g in 0..dy.rows() {
                    for c in 0..cols {
                        let v = argmax[g * cols + c];
                        dx.set(v, c, dx.get(v, c) + dy.get(g, c));
                    }
                }
                Ok((dx, Vec::new()))
            }
            (Layer::EdgeReadout, LayerCache::EdgeReadout { input_rows, edges }) => {
                let f = dy.cols() / 2;
                let mut dx = Tensor::zeros(*input_rows, f);
                for (e, &(s, d)) in edges.iter().enumerate() {
                    let g = dy.row(e);
                    for c in 0..f {
                        dx.set(d, c, dx.get(d, c) + g[c] - g[f + c]);
                        dx.set(s, c, dx.get(s, c) + g[f + c]);
                    }
                }
                Ok((dx, Vec::new()))
            }
            _ => Err(NnError::Contract("cache does not match layer".into())),
        }
    }
}

fn check_shape<T: Scalar>(t: &Tensor<T>, rows: usize, cols: usize) -> Result<(), NnError> {
    if t.rows() != rows || t.cols() != cols {
        return Err(NnError::Contract(format!(
            "gradient shape {}x{} does not match output {rows}x{cols}",
            t.rows(),
            t.cols()
        )));
    }
    Ok(())
}

fn column_sums<T: Scalar>(t: &Tensor<T>) -> Vec<T> {
    let mut out = vec![T::zero(); t.cols()];
    for r in 0..t.rows() {
        for (o, &v) in out.iter_mut().zip(t.row(r)) {
            *o += v;
        }
    }
    out
}

fn edge_conv_forward<T: Scalar>(
    conv: &EdgeConv<T>,
    x: &Tensor<T>,
    graph: &Graph<T>,
) -> Result<(Tensor<T>, LayerCache<T>), NnError> {
    let f = x.cols();
    if x.rows() != graph.num_vertices() {
        return Err(NnError::Contract(format!(
            "{} feature rows for {} vertices",
            x.rows(),
            graph.num_vertices()
        )));
    }
    let fe = conv.edge_width.unwrap_or(0);
    let edge_features = match conv.edge_width {
        Some(width) => {
            let ef = graph.edge_features.as_ref().ok_or_else(|| {
                NnError::Contract("edge conv with edge attributes needs edge_features".into())
            })?;
            if ef.cols() != width || ef.rows() != graph.edges.len() {
                return Err(NnError::Contract(format!(
                    "edge features {}x{} do not match {} edges of width {width}",
                    ef.rows(),
                    ef.cols(),
                    graph.edges.len()
                )));
            }
            Some(ef)
        }
        None => None,
    };
    if conv.mlp[0].input() != 2 * f + fe {
        return Err(NnError::Contract(format!(
            "edge conv expects message width {}, got 2*{f}+{fe}",
            conv.mlp[0].input()
        )));
    }
    let nbrs = Neighborhoods::build(graph.num_vertices(), &graph.edges, conv.self_loops)?;
    let mut msgs = Tensor::zeros(nbrs.len(), 2 * f + fe);
    for (m, inc) in nbrs.incoming.iter().enumerate() {
        let v = nbrs.dst[m];
        let row = msgs.row_mut(m);
        let (xv, xs) = (x.row(v), x.row(inc.src));
        for c in 0..f {
            row[c] = xv[c];
            row[f + c] = xs[c] - xv[c];
        }
        if let (Some(ef), Some(e)) = (edge_features, inc.edge) {
            row[2 * f..].copy_from_slice(ef.row(e));
        }
    }
    let mut activations = vec![msgs];
    for lin in &conv.mlp {
        let mut z = activations
            .last()
            .expect("non-empty")
            .affine(&lin.weight, &lin.bias);
        Activation::Relu.apply(&mut z);
        activations.push(z);
    }
    let h = activations.last().expect("non-empty");
    let out_w = h.cols();
    let mut y = Tensor::zeros(x.rows(), out_w);
    let mut argmax = vec![0usize; x.rows() * out_w];
    for v in 0..x.rows() {
        let (lo, hi) = (nbrs.offsets[v], nbrs.offsets[v + 1]);
        for c in 0..out_w {
            let mut best = lo;
            let mut best_val = h.get(lo, c);
            for m in lo + 1..hi {
                let val = h.get(m, c);
                if val > best_val {
                    best = m;
                    best_val = val;
                }
            }
            y.set(v, c, best_val);
            argmax[v * out_w + c] = best;
        }
    }
    if conv.residual {
        if out_w != f {
            return Err(NnError::Contract("residual needs equal widths".into()));
        }
        for (o, &i) in y.data_mut().iter_mut().zip(x.data()) {
            *o += i;
        }
    }
    let cache = LayerCache::EdgeConv {
        input_rows: x.rows(),
        width: f,
        nbrs,
        activations,
        argmax,
    };
    Ok((y, cache))
}

fn maxpool_forward<T: Scalar>(
    x: &Tensor<T>,
    graph: &Graph<T>,
) -> Result<(Tensor<T>, LayerCache<T>), NnError> {
    let groups = graph
        .vertex_groups
        .as_ref()
        .ok_or_else(|| NnError::Contract("max pool needs vertex_groups".into()))?;
    if groups.len() != x.rows() {
        return Err(NnError::Contract("group labels do not cover all rows".into()));
    }
    let n_groups = graph.num_groups();
    let cols = x.cols();
    let mut filled = vec![false; n_groups];
    let mut y = Tensor::zeros(n_groups, cols);
    let mut argmax = vec![0usize; n_groups * cols];
    for (v, &g) in groups.iter().enumerate() {
        let row = x.row(v);
        if !filled[g] {
            filled[g] = true;
            y.row_mut(g).copy_from_slice(row);
            argmax[g * cols..(g + 1) * cols].fill(v);
            continue;
        }
        for c in 0..cols {
            if row[c] > y.get(g, c) {
                y.set(g, c, row[c]);
                argmax[g * cols + c] = v;
            }
        }
    }
    if let Some(g) = filled.iter().position(|f| !f) {
        return Err(NnError::Contract(format!("group {g} is empty")));
    }
    Ok((
        y,
        LayerCache::MaxPool {
            input_rows: x.rows(),
            argmax,
        },
    ))
}
