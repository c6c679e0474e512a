//! Sequential model: layer list, parameters, forward and backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dropout::dropout_mask;
use crate::error::{NnError, Result};
use crate::layer::{Activation, LayerSpec};
use crate::ops::{self, ConvGeom, PoolGeom};
use crate::real::Real;
use crate::tensor::Tensor;

/// Activations retained by a training forward pass for the following
/// backward pass. `activations[0]` is the batch, `activations[i + 1]` the
/// output of layer `i`.
#[derive(Clone, Debug)]
struct Trace<T> {
    activations: Vec<Tensor<T>>,
    masks: Vec<Option<Tensor<T>>>,
}

#[derive(Clone, Debug)]
pub struct ModelGraph<T = f32> {
    layers: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    output_shapes: Vec<Vec<usize>>,
    params: Vec<Tensor<T>>,
    // Per layer: index of its weight tensor in `params`; the bias follows.
    slots: Vec<Option<usize>>,
    seed: u64,
    trace: Option<Trace<T>>,
}

impl<T: Real> ModelGraph<T> {
    /// Builds the graph and draws Glorot-uniform weights (zero biases) from `seed`.
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let (output_shapes, param_shapes) = propagate_shapes(&input_shape, &layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut slots = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            match &param_shapes[i] {
                Some((wshape, bshape)) => {
                    let input = layer_input(&input_shape, &output_shapes, i);
                    let (fan_in, fan_out) = layer.fans(input).expect("parameterised layer");
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let n: usize = wshape.iter().product();
                    let data = (0..n)
                        .map(|_| T::of_f64(rng.gen_range(-limit..limit)))
                        .collect();
                    slots.push(Some(params.len()));
                    params.push(Tensor::new(wshape.clone(), data)?);
                    params.push(Tensor::zeros(bshape.clone()));
                }
                None => slots.push(None),
            }
        }
        Ok(Self {
            layers,
            input_shape,
            output_shapes,
            params,
            slots,
            seed,
            trace: None,
        })
    }

    /// Reassembles a graph around existing parameters, checking every shape.
    pub fn from_parts(
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        seed: u64,
        params: Vec<Tensor<T>>,
    ) -> Result<Self> {
        let (output_shapes, param_shapes) = propagate_shapes(&input_shape, &layers)?;
        let expected: Vec<&Vec<usize>> = param_shapes
            .iter()
            .flatten()
            .flat_map(|(w, b)| [w, b])
            .collect();
        if expected.len() != params.len() {
            return Err(NnError::Parameters(format!(
                "expected {} tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (shape, p) in expected.iter().zip(&params) {
            if shape.as_slice() != p.shape() {
                return Err(NnError::Mismatch {
                    left: shape.to_vec(),
                    right: p.shape().to_vec(),
                });
            }
        }
        let mut slots = Vec::with_capacity(layers.len());
        let mut next = 0;
        for shapes in &param_shapes {
            if shapes.is_some() {
                slots.push(Some(next));
                next += 2;
            } else {
                slots.push(None);
            }
        }
        Ok(Self {
            layers,
            input_shape,
            output_shapes,
            params,
            slots,
            seed,
            trace: None,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Output extents of every layer, batch axis excluded.
    pub fn output_shapes(&self) -> &[Vec<usize>] {
        &self.output_shapes
    }

    pub fn output_shape(&self) -> &[usize] {
        self.output_shapes.last().unwrap_or(&self.input_shape)
    }

    pub fn layer_input_shape(&self, index: usize) -> &[usize] {
        layer_input(&self.input_shape, &self.output_shapes, index)
    }

    pub fn layer_param_count(&self, index: usize) -> usize {
        self.layers[index].param_count(self.layer_input_shape(index))
    }

    pub fn param_count(&self) -> usize {
        (0..self.layers.len())
            .map(|i| self.layer_param_count(i))
            .sum()
    }

    /// Flat parameter list: weight then bias for each parameterised layer.
    pub fn parameters(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn layer_params(&self, index: usize) -> Option<(&Tensor<T>, &Tensor<T>)> {
        self.slots[index].map(|s| (&self.params[s], &self.params[s + 1]))
    }

    pub fn layer_params_mut(&mut self, index: usize) -> Option<(&mut Tensor<T>, &mut Tensor<T>)> {
        let s = self.slots[index]?;
        let (w, b) = self.params[s..s + 2].split_at_mut(1);
        Some((&mut w[0], &mut b[0]))
    }

    /// Copy of the graph in another precision (trace dropped).
    pub fn cast<U: Real>(&self) -> ModelGraph<U> {
        ModelGraph {
            layers: self.layers.clone(),
            input_shape: self.input_shape.clone(),
            output_shapes: self.output_shapes.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
            slots: self.slots.clone(),
            seed: self.seed,
            trace: None,
        }
    }

    /// Inference forward pass: dropout is the identity and nothing is retained.
    pub fn infer(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut acts = self.run::<ChaCha8Rng>(batch, None, false, self.layers.len())?;
        Ok(acts.0.pop().expect("at least the input"))
    }

    /// Forward pass. With `training` set, dropout masks are drawn from `rng`
    /// and all activations are retained for [`ModelGraph::backward`].
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        batch: &Tensor<T>,
        training: bool,
        rng: &mut R,
    ) -> Result<Tensor<T>> {
        if !training {
            self.trace = None;
            return self.infer(batch);
        }
        let (activations, masks) = self.run(batch, Some(rng), true, self.layers.len())?;
        let out = activations.last().expect("at least the input").clone();
        self.trace = Some(Trace {
            activations,
            masks,
        });
        Ok(out)
    }

    /// Output of layer `index` for `batch` in inference mode.
    pub fn layer_output(&self, batch: &Tensor<T>, index: usize) -> Result<Tensor<T>> {
        if index >= self.layers.len() {
            return Err(NnError::Parameters(format!(
                "layer index {index} out of range for {} layers",
                self.layers.len()
            )));
        }
        let mut acts = self.run::<ChaCha8Rng>(batch, None, false, index + 1)?;
        Ok(acts.0.pop().expect("at least the input"))
    }

    /// Gradients of every parameter tensor given `dL/d(output)`; consumes
    /// the trace retained by the last training forward pass.
    pub fn backward(&mut self, loss_gradient: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.backward_impl(loss_gradient, false).map(|(g, _)| g)
    }

    /// Like [`ModelGraph::backward`] but also returns `dL/d(input)`.
    pub fn backward_with_input(
        &mut self,
        loss_gradient: &Tensor<T>,
    ) -> Result<(Vec<Tensor<T>>, Tensor<T>)> {
        let (g, dx) = self.backward_impl(loss_gradient, true)?;
        Ok((g, dx.expect("input gradient requested")))
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<usize> {
        let shape = batch.shape();
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            let mut expected = vec![shape.first().copied().unwrap_or(0)];
            expected.extend_from_slice(&self.input_shape);
            return Err(NnError::ShapeMismatch {
                layer: 0,
                expected,
                actual: shape.to_vec(),
            });
        }
        Ok(shape[0])
    }

    #[allow(clippy::type_complexity)]
    fn run<R: Rng + ?Sized>(
        &self,
        batch: &Tensor<T>,
        mut rng: Option<&mut R>,
        retain: bool,
        upto: usize,
    ) -> Result<(Vec<Tensor<T>>, Vec<Option<Tensor<T>>>)> {
        let n = self.check_batch(batch)?;
        let mut acts = vec![batch.clone()];
        let mut masks = Vec::new();
        for i in 0..upto {
            let x = acts.last().expect("non-empty");
            let (y, mask) = self.layer_forward(i, n, x, rng.as_deref_mut())?;
            let mut expected = vec![n];
            expected.extend_from_slice(&self.output_shapes[i]);
            if y.shape() != expected.as_slice() {
                return Err(NnError::ShapeMismatch {
                    layer: i,
                    expected,
                    actual: y.shape().to_vec(),
                });
            }
            if !retain {
                acts.clear();
            }
            acts.push(y);
            masks.push(mask);
        }
        Ok((acts, masks))
    }

    fn conv_geom(&self, index: usize) -> Option<ConvGeom> {
        let input = self.layer_input_shape(index);
        match &self.layers[index] {
            LayerSpec::Conv1D {
                kernel, filters, ..
            } => Some(ConvGeom {
                h: 1,
                w: input[0],
                cin: input[1],
                kh: 1,
                kw: *kernel,
                cout: *filters,
            }),
            LayerSpec::Conv2D {
                kernel: (kh, kw),
                filters,
                ..
            } => Some(ConvGeom {
                h: input[0],
                w: input[1],
                cin: input[2],
                kh: *kh,
                kw: *kw,
                cout: *filters,
            }),
            _ => None,
        }
    }

    fn pool_geom(&self, index: usize) -> Option<PoolGeom> {
        let input = self.layer_input_shape(index);
        match &self.layers[index] {
            LayerSpec::MaxPool1D => Some(PoolGeom {
                h: 1,
                w: input[0],
                c: input[1],
                ph: 1,
                pw: 2,
            }),
            LayerSpec::MaxPool2D => Some(PoolGeom {
                h: input[0],
                w: input[1],
                c: input[2],
                ph: 2,
                pw: 2,
            }),
            _ => None,
        }
    }

    fn out_tensor(&self, index: usize, n: usize, data: Vec<T>) -> Result<Tensor<T>> {
        let mut shape = vec![n];
        shape.extend_from_slice(&self.output_shapes[index]);
        Tensor::new(shape, data)
    }

    fn layer_forward<R: Rng + ?Sized>(
        &self,
        i: usize,
        n: usize,
        x: &Tensor<T>,
        rng: Option<&mut R>,
    ) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        let layer = &self.layers[i];
        match layer {
            LayerSpec::Conv1D { activation, .. } | LayerSpec::Conv2D { activation, .. } => {
                let g = self.conv_geom(i).expect("conv layer");
                let (w, b) = self.layer_params(i).expect("conv params");
                let mut y = vec![T::zero(); n * g.out_len()];
                for (xi, yi) in x
                    .data()
                    .chunks_exact(g.in_len())
                    .zip(y.chunks_exact_mut(g.out_len()))
                {
                    ops::conv_forward(&g, xi, w.data(), b.data(), *activation, yi);
                }
                Ok((self.out_tensor(i, n, y)?, None))
            }
            LayerSpec::MaxPool1D | LayerSpec::MaxPool2D => {
                let g = self.pool_geom(i).expect("pool layer");
                let mut y = vec![T::zero(); n * g.out_len()];
                for (xi, yi) in x
                    .data()
                    .chunks_exact(g.in_len())
                    .zip(y.chunks_exact_mut(g.out_len()))
                {
                    ops::pool_forward(&g, xi, yi);
                }
                Ok((self.out_tensor(i, n, y)?, None))
            }
            LayerSpec::Flatten => Ok((self.out_tensor(i, n, x.data().to_vec())?, None)),
            LayerSpec::Dense { units, activation } => {
                let n_in = self.layer_input_shape(i)[0];
                let (w, b) = self.layer_params(i).expect("dense params");
                let mut y = vec![T::zero(); n * units];
                ops::dense_forward(n_in, *units, x.data(), w.data(), b.data(), *activation, &mut y);
                Ok((self.out_tensor(i, n, y)?, None))
            }
            LayerSpec::Dropout { rate } => match rng {
                Some(rng) if *rate > 0.0 => {
                    let mask: Tensor<T> = dropout_mask(x.shape(), *rate, rng)?;
                    let y = x
                        .data()
                        .iter()
                        .zip(mask.data())
                        .map(|(&a, &m)| a * m)
                        .collect();
                    Ok((self.out_tensor(i, n, y)?, Some(mask)))
                }
                _ => Ok((x.clone(), None)),
            },
        }
    }

    fn backward_impl(
        &mut self,
        loss_gradient: &Tensor<T>,
        want_input: bool,
    ) -> Result<(Vec<Tensor<T>>, Option<Tensor<T>>)> {
        let trace = self.trace.take().ok_or(NnError::NoTrace)?;
        let out = trace.activations.last().expect("non-empty");
        if loss_gradient.shape() != out.shape() {
            return Err(NnError::Mismatch {
                left: out.shape().to_vec(),
                right: loss_gradient.shape().to_vec(),
            });
        }
        let n = out.shape()[0];
        let mut grads: Vec<Tensor<T>> = self
            .params
            .iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect();
        let mut dy: Vec<f64> = loss_gradient.to_f64_vec();

        for i in (0..self.layers.len()).rev() {
            let x = &trace.activations[i];
            let y = &trace.activations[i + 1];
            let need_dx = i > 0 || want_input;
            let act = self.layers[i].activation();
            if act != Activation::None {
                for (d, &yv) in dy.iter_mut().zip(y.data()) {
                    *d *= act.derivative_from_output(yv.as_f64());
                }
            }
            dy = match &self.layers[i] {
                LayerSpec::Conv1D { .. } | LayerSpec::Conv2D { .. } => {
                    let g = self.conv_geom(i).expect("conv layer");
                    let slot = self.slots[i].expect("conv params");
                    let w = self.params[slot].data();
                    let mut dw = vec![0f64; g.k_len() * g.cout];
                    let mut db = vec![0f64; g.cout];
                    let mut dx = if need_dx {
                        vec![0f64; n * g.in_len()]
                    } else {
                        Vec::new()
                    };
                    for b in 0..n {
                        let xi = &x.data()[b * g.in_len()..(b + 1) * g.in_len()];
                        let dzi = &dy[b * g.out_len()..(b + 1) * g.out_len()];
                        let dxi = if need_dx {
                            Some(&mut dx[b * g.in_len()..(b + 1) * g.in_len()])
                        } else {
                            None
                        };
                        ops::conv_backward(&g, xi, w, dzi, &mut dw, &mut db, dxi);
                    }
                    write_f64(&mut grads[slot], &dw);
                    write_f64(&mut grads[slot + 1], &db);
                    dx
                }
                LayerSpec::MaxPool1D | LayerSpec::MaxPool2D => {
                    let g = self.pool_geom(i).expect("pool layer");
                    let mut dx = vec![0f64; n * g.in_len()];
                    for b in 0..n {
                        ops::pool_backward(
                            &g,
                            &x.data()[b * g.in_len()..(b + 1) * g.in_len()],
                            &dy[b * g.out_len()..(b + 1) * g.out_len()],
                            &mut dx[b * g.in_len()..(b + 1) * g.in_len()],
                        );
                    }
                    dx
                }
                LayerSpec::Flatten => dy,
                LayerSpec::Dense { units, .. } => {
                    let n_in = x.shape()[1];
                    let slot = self.slots[i].expect("dense params");
                    let (head, tail) = grads.split_at_mut(slot + 1);
                    let mut dx = if need_dx {
                        vec![0f64; n * n_in]
                    } else {
                        Vec::new()
                    };
                    ops::dense_backward(
                        n_in,
                        *units,
                        x.data(),
                        self.params[slot].data(),
                        &dy,
                        head[slot].data_mut(),
                        tail[0].data_mut(),
                        need_dx.then_some(dx.as_mut_slice()),
                    );
                    dx
                }
                LayerSpec::Dropout { .. } => match &trace.masks[i] {
                    Some(mask) => dy
                        .iter()
                        .zip(mask.data())
                        .map(|(&d, &m)| d * m.as_f64())
                        .collect(),
                    None => dy,
                },
            };
        }

        let input_grad = if want_input {
            Some(Tensor::new(
                trace.activations[0].shape().to_vec(),
                dy.into_iter().map(T::of_f64).collect(),
            )?)
        } else {
            None
        };
        Ok((grads, input_grad))
    }
}

fn write_f64<T: Real>(dst: &mut Tensor<T>, src: &[f64]) {
    for (d, &s) in dst.data_mut().iter_mut().zip(src) {
        *d = T::of_f64(s);
    }
}

fn layer_input<'a>(input: &'a [usize], outputs: &'a [Vec<usize>], index: usize) -> &'a [usize] {
    if index == 0 {
        input
    } else {
        &outputs[index - 1]
    }
}

#[allow(clippy::type_complexity)]
fn propagate_shapes(
    input_shape: &[usize],
    layers: &[LayerSpec],
) -> Result<(Vec<Vec<usize>>, Vec<Option<(Vec<usize>, Vec<usize>)>>)> {
    if input_shape.is_empty() || input_shape.contains(&0) {
        return Err(NnError::InvalidLayer {
            layer: 0,
            kind: "Input",
            input: input_shape.to_vec(),
            reason: "extents must be positive".into(),
        });
    }
    let mut outputs: Vec<Vec<usize>> = Vec::with_capacity(layers.len());
    let mut params = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let input = layer_input(input_shape, &outputs, i).to_vec();
        params.push(layer.param_shapes(&input));
        outputs.push(layer.output_shape(i, &input)?);
    }
    Ok((outputs, params))
}
