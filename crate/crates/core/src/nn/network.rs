//! Layered feed-forward network split into a feature extractor and a classifier.
//!
//! Layers `[0, split_index)` form the extractor; `[split_index, len)` form the
//! classifier, whose last layer is the affine head producing `num_classes`
//! logits. Forward passes over any contiguous layer range share one code path,
//! so running the extractor and then the classifier performs exactly the same
//! float operations as a full forward pass.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Affine { input: usize, output: usize },
    Relu,
    Flatten,
}

/// Weight `[output, input]` and bias `[output]` of one affine layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Affine {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.rows()] {
            return Err(shape_err(
                "affine parameters",
                "weight [out,in] and bias [out]",
                format!("{:?} / {:?}", weight.shape(), bias.shape()),
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn output(&self) -> usize {
        self.weight.rows()
    }

    pub fn input(&self) -> usize {
        self.weight.cols()
    }

    fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(vec![output, input]),
            bias: Tensor::zeros(vec![output]),
        }
    }
}

/// Ordered layer list, split point and class count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    layers: Vec<Layer>,
    split_index: usize,
    num_classes: usize,
}

impl NetworkSpec {
    pub fn new(layers: Vec<Layer>, split_index: usize, num_classes: usize) -> Result<Self> {
        if split_index == 0 || split_index >= layers.len() {
            return Err(Error::Config(format!(
                "split index {split_index} must lie in 1..{}",
                layers.len()
            )));
        }
        let widths = stack_widths(&layers)?;
        let out = *widths.last().expect("non-empty");
        if out != num_classes {
            return Err(Error::Config(format!(
                "network emits {out} outputs but num_classes is {num_classes}"
            )));
        }
        if !matches!(layers.last(), Some(Layer::Affine { .. })) {
            return Err(Error::Config("last layer must be the affine head".into()));
        }
        Ok(Self {
            layers,
            split_index,
            num_classes,
        })
    }

    /// `affine(d0→64) relu affine(64→32) relu | affine(32→16) relu affine(16→k)`.
    pub fn default_mlp(input_dim: usize, num_classes: usize) -> Result<Self> {
        Self::mlp(input_dim, &[64, 32, 16], num_classes, 4)
    }

    /// An `affine relu` block per hidden width, then an affine head.
    pub fn mlp(
        input_dim: usize,
        hidden: &[usize],
        num_classes: usize,
        split_index: usize,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(2 * hidden.len() + 1);
        let mut width = input_dim;
        for &h in hidden {
            layers.push(Layer::Affine {
                input: width,
                output: h,
            });
            layers.push(Layer::Relu);
            width = h;
        }
        layers.push(Layer::Affine {
            input: width,
            output: num_classes,
        });
        Self::new(layers, split_index, num_classes)
    }

    /// Same layers, different split point.
    pub fn with_split(&self, split_index: usize) -> Result<Self> {
        Self::new(self.layers.clone(), split_index, self.num_classes)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn split_index(&self) -> usize {
        self.split_index
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_width(&self) -> usize {
        stack_widths(&self.layers).expect("validated")[0]
    }

    /// Width of the embeddings produced at the split.
    pub fn embedding_width(&self) -> usize {
        self.width_at(self.split_index)
    }

    /// Width of the activations entering layer `index` (`index == len` gives the output width).
    pub fn width_at(&self, index: usize) -> usize {
        stack_widths(&self.layers).expect("validated")[index]
    }

    pub fn extractor_range(&self) -> Range<usize> {
        0..self.split_index
    }

    pub fn classifier_range(&self) -> Range<usize> {
        self.split_index..self.layers.len()
    }

    pub fn full_range(&self) -> Range<usize> {
        0..self.layers.len()
    }
}

/// Activation widths before each layer plus the final output width.
pub fn stack_widths(layers: &[Layer]) -> Result<Vec<usize>> {
    let first = layers
        .iter()
        .find_map(|l| match l {
            Layer::Affine { input, .. } => Some(*input),
            _ => None,
        })
        .ok_or_else(|| Error::Config("layer stack needs at least one affine layer".into()))?;
    let mut widths = Vec::with_capacity(layers.len() + 1);
    let mut width = first;
    widths.push(width);
    for (i, layer) in layers.iter().enumerate() {
        if let Layer::Affine { input, output } = *layer {
            if input != width {
                return Err(shape_err(format!("layer {i} (affine)"), width, input));
            }
            if output == 0 {
                return Err(Error::Config(format!("layer {i} has zero output width")));
            }
            width = output;
        }
        widths.push(width);
    }
    Ok(widths)
}

/// Per-layer parameters; `None` for parameter-free layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    layers: Vec<Option<Affine>>,
}

impl Parameters {
    pub fn from_layers(layers: Vec<Option<Affine>>) -> Self {
        Self { layers }
    }

    pub fn empty() -> Self {
        Self { layers: Vec::new() }
    }

    /// Uniform Glorot initialisation with `a = sqrt(6 / (fan_in + fan_out))`; biases start at zero.
    pub fn init<R: Rng + ?Sized>(layers: &[Layer], rng: &mut R) -> Self {
        let layers = layers
            .iter()
            .map(|layer| match *layer {
                Layer::Affine { input, output } => {
                    let a = (6.0 / (input + output) as f64).sqrt();
                    let w = (0..input * output)
                        .map(|_| rng.random_range(-a..a))
                        .collect();
                    Some(Affine {
                        weight: Tensor::matrix(output, input, w).expect("sized"),
                        bias: Tensor::zeros(vec![output]),
                    })
                }
                _ => None,
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(layers: &[Layer]) -> Self {
        let layers = layers
            .iter()
            .map(|layer| match *layer {
                Layer::Affine { input, output } => Some(Affine::zeros(input, output)),
                _ => None,
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| l.as_ref().map(|a| Affine::zeros(a.input(), a.output())))
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Option<Affine>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Option<Affine>] {
        &mut self.layers
    }

    pub fn affine(&self, layer: usize) -> Option<&Affine> {
        self.layers.get(layer).and_then(Option::as_ref)
    }

    pub fn affine_mut(&mut self, layer: usize) -> Option<&mut Affine> {
        self.layers.get_mut(layer).and_then(Option::as_mut)
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Total scalar count over all weights and biases.
    pub fn scalar_count(&self) -> usize {
        self.layers
            .iter()
            .flatten()
            .map(|a| a.weight.len() + a.bias.len())
            .sum()
    }

    /// Every scalar in layer order, weight before bias.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flatten()
            .flat_map(|a| a.weight.data().iter().chain(a.bias.data()).copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers.iter_mut().flatten().flat_map(|a| {
            let Affine { weight, bias } = a;
            weight
                .data_mut()
                .iter_mut()
                .chain(bias.data_mut().iter_mut())
        })
    }

    /// Checks that every affine layer of `layers` has a correctly shaped entry.
    pub fn check_against(&self, layers: &[Layer]) -> Result<()> {
        if self.layers.len() != layers.len() {
            return Err(shape_err(
                "parameter layer count",
                layers.len(),
                self.layers.len(),
            ));
        }
        for (i, (layer, p)) in layers.iter().zip(&self.layers).enumerate() {
            match (layer, p) {
                (Layer::Affine { input, output }, Some(a)) => {
                    if a.weight.shape() != [*output, *input] || a.bias.shape() != [*output] {
                        return Err(shape_err(
                            format!("layer {i} parameters"),
                            format!("[{output}, {input}]"),
                            format!("{:?}", a.weight.shape()),
                        ));
                    }
                }
                (Layer::Affine { .. }, None) => {
                    return Err(shape_err(format!("layer {i}"), "affine parameters", "none"))
                }
                (_, Some(_)) => {
                    return Err(shape_err(format!("layer {i}"), "no parameters", "affine"))
                }
                (_, None) => {}
            }
        }
        Ok(())
    }

    /// Layer indices carrying parameters in `range`: the extractor/classifier partition.
    pub fn parameter_layers(&self, range: Range<usize>) -> Vec<usize> {
        range.filter(|&i| self.affine(i).is_some()).collect()
    }

    /// `self += alpha * other`, restricted to layers present in both.
    pub fn add_scaled(&mut self, alpha: f64, other: &Parameters) {
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some(a), Some(b)) = (mine, theirs) {
                for (x, y) in a.weight.data_mut().iter_mut().zip(b.weight.data()) {
                    *x += alpha * y;
                }
                for (x, y) in a.bias.data_mut().iter_mut().zip(b.bias.data()) {
                    *x += alpha * y;
                }
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in self.values_mut() {
            *v *= alpha;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    /// Euclidean distance between two parameter sets of identical shape.
    pub fn distance(&self, other: &Parameters) -> f64 {
        self.values()
            .zip(other.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Copies the parameters of the layers in `range` from `other`.
    pub fn copy_range_from(&mut self, other: &Parameters, range: Range<usize>) {
        for i in range {
            self.layers[i] = other.layers[i].clone();
        }
    }
}

/// Inputs seen by each layer of a forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    range: Range<usize>,
    layers: Vec<Layer>,
    inputs: Vec<Tensor>,
    output_shape: Vec<usize>,
}

impl ForwardCache {
    pub fn range(&self) -> Range<usize> {
        self.range.clone()
    }

    pub fn batch(&self) -> usize {
        self.output_shape.first().copied().unwrap_or(0)
    }
}

fn affine_forward(a: &Affine, x: &Tensor, layer: usize) -> Result<Tensor> {
    let (n_in, n_out) = (a.input(), a.output());
    if x.shape().len() != 2 || x.cols() != n_in {
        return Err(shape_err(
            format!("layer {layer} (affine) input"),
            format!("[batch, {n_in}]"),
            format!("{:?}", x.shape()),
        ));
    }
    let batch = x.rows();
    let w = a.weight.data();
    let b = a.bias.data();
    let mut out = vec![0.0; batch * n_out];
    for r in 0..batch {
        let xr = x.row(r);
        let yr = &mut out[r * n_out..(r + 1) * n_out];
        for (o, y) in yr.iter_mut().enumerate() {
            let wr = &w[o * n_in..(o + 1) * n_in];
            let mut acc = 0.0;
            for (wi, xi) in wr.iter().zip(xr) {
                acc += wi * xi;
            }
            *y = acc + b[o];
        }
    }
    Tensor::matrix(batch, n_out, out)
}

/// Runs layers `range` of the stack on `x`, returning the output and a cache.
pub fn forward_layers(
    layers: &[Layer],
    params: &Parameters,
    range: Range<usize>,
    x: &Tensor,
) -> Result<(Tensor, ForwardCache)> {
    if range.end > layers.len() || params.len() != layers.len() {
        return Err(shape_err(
            "layer range",
            layers.len(),
            range.end.max(params.len()),
        ));
    }
    let mut inputs = Vec::with_capacity(range.len());
    let mut current = x.clone();
    for i in range.clone() {
        let next = match layers[i] {
            Layer::Affine { .. } => {
                let a = params
                    .affine(i)
                    .ok_or_else(|| shape_err(format!("layer {i}"), "affine parameters", "none"))?;
                affine_forward(a, &current, i)?
            }
            Layer::Relu => {
                let mut t = current.clone();
                for v in t.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                t
            }
            Layer::Flatten => current.flatten_2d(),
        };
        inputs.push(std::mem::replace(&mut current, next));
    }
    let cache = ForwardCache {
        range,
        layers: layers.to_vec(),
        inputs,
        output_shape: current.shape().to_vec(),
    };
    Ok((current, cache))
}

/// Reverse-mode pass through the layers recorded in `cache`.
///
/// Returns gradients shaped like `params` (zero outside the cached range) and
/// the gradient with respect to the range's input.
pub fn backward_layers(
    layers: &[Layer],
    params: &Parameters,
    cache: &ForwardCache,
    upstream: &Tensor,
) -> Result<(Parameters, Tensor)> {
    if cache.layers.as_slice() != layers {
        return Err(Error::StaleCache(
            "cache was produced by a different network".into(),
        ));
    }
    if upstream.shape() != cache.output_shape.as_slice() {
        return Err(Error::StaleCache(format!(
            "upstream gradient shape {:?} does not match cached output {:?}",
            upstream.shape(),
            cache.output_shape
        )));
    }
    let mut grads = params.zeros_like();
    let mut g = upstream.clone();
    for (offset, i) in cache.range.clone().enumerate().rev() {
        let input = &cache.inputs[offset];
        g = match layers[i] {
            Layer::Affine { .. } => {
                let a = params
                    .affine(i)
                    .ok_or_else(|| Error::StaleCache(format!("layer {i} lost its parameters")))?;
                if input.cols() != a.input() {
                    return Err(Error::StaleCache(format!(
                        "layer {i} input width changed since the forward pass"
                    )));
                }
                let (n_in, batch) = (a.input(), input.rows());
                let ga = grads.affine_mut(i).expect("zeros_like keeps layout");
                let w = a.weight.data();
                let mut dx = vec![0.0; batch * n_in];
                {
                    let dw = ga.weight.data_mut();
                    for r in 0..batch {
                        let gr = g.row(r);
                        let xr = input.row(r);
                        for (o, &go) in gr.iter().enumerate() {
                            let dwr = &mut dw[o * n_in..(o + 1) * n_in];
                            for (d, xi) in dwr.iter_mut().zip(xr) {
                                *d += go * xi;
                            }
                        }
                    }
                }
                {
                    let db = ga.bias.data_mut();
                    for r in 0..batch {
                        for (d, go) in db.iter_mut().zip(g.row(r)) {
                            *d += go;
                        }
                    }
                }
                for r in 0..batch {
                    let gr = g.row(r);
                    let dxr = &mut dx[r * n_in..(r + 1) * n_in];
                    for (o, &go) in gr.iter().enumerate() {
                        let wr = &w[o * n_in..(o + 1) * n_in];
                        for (d, wi) in dxr.iter_mut().zip(wr) {
                            *d += go * wi;
                        }
                    }
                }
                Tensor::matrix(batch, n_in, dx)?
            }
            Layer::Relu => {
                let mut t = g.clone();
                for (gv, xv) in t.data_mut().iter_mut().zip(input.data()) {
                    if *xv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                t
            }
            Layer::Flatten => Tensor::new(input.shape().to_vec(), g.into_data())?,
        };
    }
    Ok((grads, g))
}

pub fn forward_extractor(params: &Parameters, spec: &NetworkSpec, x: &Tensor) -> Result<Tensor> {
    Ok(forward_layers(spec.layers(), params, spec.extractor_range(), x)?.0)
}

pub fn forward_classifier(params: &Parameters, spec: &NetworkSpec, u: &Tensor) -> Result<Tensor> {
    if u.cols() != spec.embedding_width() {
        return Err(shape_err(
            "classifier input",
            spec.embedding_width(),
            u.cols(),
        ));
    }
    Ok(forward_layers(spec.layers(), params, spec.classifier_range(), u)?.0)
}

/// Logits of the unsplit network.
pub fn forward_full(params: &Parameters, spec: &NetworkSpec, x: &Tensor) -> Result<Tensor> {
    Ok(forward_layers(spec.layers(), params, spec.full_range(), x)?.0)
}

/// Backward pass for a cache produced on `spec`'s layers.
pub fn backward(
    params: &Parameters,
    spec: &NetworkSpec,
    cache: &ForwardCache,
    upstream: &Tensor,
) -> Result<(Parameters, Tensor)> {
    backward_layers(spec.layers(), params, cache, upstream)
}

/// Index of the largest entry; ties resolve to the smallest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows of `x` whose predicted class matches `labels`.
pub fn accuracy(
    params: &Parameters,
    spec: &NetworkSpec,
    x: &Tensor,
    labels: &[usize],
) -> Result<f64> {
    accuracy_layers(spec.layers(), params, spec.full_range(), x, labels)
}

/// Accuracy of the sub-network `range` of a layer stack.
pub fn accuracy_layers(
    layers: &[Layer],
    params: &Parameters,
    range: Range<usize>,
    x: &Tensor,
    labels: &[usize],
) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("accuracy over zero samples".into()));
    }
    let logits = forward_layers(layers, params, range, x)?.0;
    let hits = labels
        .iter()
        .enumerate()
        .filter(|(r, &y)| argmax(logits.row(*r)) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}
