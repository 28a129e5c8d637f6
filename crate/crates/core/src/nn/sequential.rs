use super::layers::Cache;
use super::{Layer, Loss, NnError, Parameterized, Tensor};

/// An ordered layer stack with a declared per-sample input shape.
///
/// [`forward`](Sequential::forward) records a tape that
/// [`backward`](Sequential::backward) consumes; [`predict`](Sequential::predict)
/// evaluates the same arithmetic without recording.
#[derive(Debug, Clone)]
pub struct Sequential {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    tape: Option<Vec<Cache>>,
}

impl PartialEq for Sequential {
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape && self.layers == other.layers
    }
}

impl Sequential {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self, NnError> {
        let seq = Sequential { input_shape, layers, tape: None };
        seq.shapes()?;
        Ok(seq)
    }

    /// Per-sample shapes at every boundary, input first.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>, NnError> {
        let mut shapes = vec![self.input_shape.clone()];
        for (index, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().unwrap())
                .map_err(|message| NnError::LayerShape { index, layer: layer.describe(), message })?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.shapes().expect("validated at construction").pop().unwrap()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn has_tape(&self) -> bool {
        self.tape.is_some()
    }

    fn check_input(&self, x: &Tensor) -> Result<(), NnError> {
        if x.shape().len() != self.input_shape.len() + 1 || x.sample_shape() != self.input_shape.as_slice() {
            let layer = self.layers.first().map(Layer::describe).unwrap_or_else(|| "identity".into());
            return Err(NnError::LayerShape {
                index: 0,
                layer,
                message: format!(
                    "expected batched input (N, {}), got {:?}",
                    self.input_shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", "),
                    x.shape()
                ),
            });
        }
        Ok(())
    }

    /// Evaluate the stack on a batch and record the graph for `backward`.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor, NnError> {
        self.check_input(x)?;
        let mut tape = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (next, cache) = layer.forward(&cur, true);
            tape.push(cache.expect("recording forward returns a cache"));
            cur = next;
        }
        self.tape = Some(tape);
        Ok(cur)
    }

    /// Evaluate without recording. Bit-identical to `forward`.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur, false).0;
        }
        Ok(cur)
    }

    /// Back-propagate a loss produced from the last `forward` output,
    /// accumulating into every parameter's gradient.
    pub fn backward(&mut self, loss: &Loss) -> Result<(), NnError> {
        self.backward_from(loss.grad(), false).map(|_| ())
    }

    /// Back-propagate an upstream gradient w.r.t. this stack's output. Returns
    /// the gradient w.r.t. the input when `need_input_grad` is set. Consumes
    /// the tape.
    pub fn backward_from(&mut self, grad_output: &Tensor, need_input_grad: bool) -> Result<Option<Tensor>, NnError> {
        let tape = self.tape.take().ok_or(NnError::NoRecordedGraph)?;
        let mut grad = grad_output.clone();
        let n = self.layers.len();
        for (i, (layer, cache)) in self.layers.iter_mut().zip(tape.iter()).enumerate().rev() {
            if i == n - 1 {
                let expected = layer.forward_shape_of(cache);
                if grad.shape() != expected.as_slice() {
                    return Err(NnError::ShapeMismatch {
                        context: "upstream gradient".into(),
                        expected,
                        actual: grad.shape().to_vec(),
                    });
                }
            }
            let need = i > 0 || need_input_grad;
            match layer.backward(cache, &grad, need) {
                Some(g) => grad = g,
                None => return Ok(None),
            }
        }
        Ok(Some(grad))
    }

    /// Split into `(layers[..index], layers[index..])`.
    pub fn split_at(mut self, index: usize) -> Result<(Sequential, Sequential), NnError> {
        if index > self.layers.len() {
            return Err(NnError::InvalidShape(format!(
                "split index {index} beyond {} layers",
                self.layers.len()
            )));
        }
        let shapes = self.shapes()?;
        let back_layers = self.layers.split_off(index);
        let front = Sequential { input_shape: self.input_shape, layers: self.layers, tape: None };
        let back = Sequential { input_shape: shapes[index].clone(), layers: back_layers, tape: None };
        Ok((front, back))
    }

    /// Compose two stacks; `back` must accept what `front` produces.
    pub fn concat(front: Sequential, back: Sequential) -> Result<Sequential, NnError> {
        let mid = front.output_shape();
        if mid != back.input_shape {
            return Err(NnError::ShapeMismatch {
                context: "concatenating stacks".into(),
                expected: mid,
                actual: back.input_shape,
            });
        }
        let mut layers = front.layers;
        layers.extend(back.layers);
        Sequential::new(front.input_shape, layers)
    }
}

impl Layer {
    /// Batched output shape implied by a cache (used to validate upstream
    /// gradients).
    fn forward_shape_of(&self, cache: &Cache) -> Vec<usize> {
        let input = match cache {
            Cache::Input(x) => x.shape().to_vec(),
            Cache::Argmax { input_shape, .. } => input_shape.clone(),
            Cache::Output(y) => return y.shape().to_vec(),
            Cache::Shape(s) => s.clone(),
        };
        let mut out = vec![input[0]];
        out.extend(self.output_shape(&input[1..]).expect("cache came from a valid forward"));
        out
    }
}

impl Parameterized for Sequential {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }
}
