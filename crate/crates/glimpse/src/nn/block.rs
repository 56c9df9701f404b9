//! Residual blocks and stacks of them, with explicit training tapes.

use ndarray::{Array1, Array2, Array4};

use super::{ConvLayer, Scalar, Scratch};

/// Activation applied after the residual addition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply<T: Scalar>(self, a: &mut Array4<T>) {
        match self {
            Activation::Relu => {
                for v in a.iter_mut() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            }
            Activation::Sigmoid => {
                for v in a.iter_mut() {
                    *v = T::one() / (T::one() + (-*v).exp());
                }
            }
        }
    }

    /// `d ⊙ act'(z)` expressed through the activation *output*.
    fn backprop<T: Scalar>(self, out: &Array4<T>, d: &Array4<T>) -> Array4<T> {
        let mut dz = d.clone();
        match self {
            Activation::Relu => {
                for (g, &o) in dz.iter_mut().zip(out.iter()) {
                    if o <= T::zero() {
                        *g = T::zero();
                    }
                }
            }
            Activation::Sigmoid => {
                for (g, &o) in dz.iter_mut().zip(out.iter()) {
                    *g = *g * o * (T::one() - o);
                }
            }
        }
        dz
    }
}

/// Two 3×3 convolutions passed by a skip connection; the first convolution
/// carries any stride/channel change, mirrored on the skip path by a 1×1
/// projection. Post-activation convention: `act(conv2(relu(conv1(x))) + skip(x))`.
#[derive(Debug, Clone)]
pub struct ResBlock<T> {
    pub conv1: ConvLayer<T>,
    pub conv2: ConvLayer<T>,
    pub proj: Option<ConvLayer<T>>,
    pub out_act: Activation,
}

/// Intermediate activations one block needs for its backward pass. The block
/// input is *not* stored here — the stack owns the chain of block inputs.
pub struct BlockTape<T> {
    /// Post-ReLU output of conv1.
    a1: Array4<T>,
}

impl<T: Scalar> ResBlock<T> {
    pub fn out_channels(&self) -> usize {
        self.conv2.out_channels()
    }

    pub fn layers(&self) -> impl Iterator<Item = &ConvLayer<T>> {
        [&self.conv1, &self.conv2].into_iter().chain(self.proj.as_ref())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut ConvLayer<T>> {
        [&mut self.conv1, &mut self.conv2].into_iter().chain(self.proj.as_mut())
    }

    pub fn forward(&self, x: &Array4<T>, scratch: &mut Scratch<T>) -> (Array4<T>, BlockTape<T>) {
        let mut a1 = self.conv1.forward(x, scratch);
        Activation::Relu.apply(&mut a1);
        let mut out = self.conv2.forward(&a1, scratch);
        match &self.proj {
            Some(p) => {
                let skip = p.forward(x, scratch);
                out += &skip;
            }
            None => out += x,
        }
        self.out_act.apply(&mut out);
        (out, BlockTape { a1 })
    }

    /// Inference-only forward.
    pub fn forward_eval(&self, x: &Array4<T>, scratch: &mut Scratch<T>) -> Array4<T> {
        self.forward(x, scratch).0
    }

    /// `x` is the block input the forward pass saw, `out` its output.
    pub fn backward(
        &self,
        x: &Array4<T>,
        tape: &BlockTape<T>,
        out: &Array4<T>,
        dout: &Array4<T>,
        grads: &mut GradStore<T>,
        scratch: &mut Scratch<T>,
    ) -> Array4<T> {
        let dz = self.out_act.backprop(out, dout);
        let mut da = self.conv2.backward(&tape.a1, &dz, grads.layer_mut(self.conv2.id), scratch);
        // ReLU mask via the cached post-activation values.
        for (g, &a) in da.iter_mut().zip(tape.a1.iter()) {
            if a <= T::zero() {
                *g = T::zero();
            }
        }
        let mut dx = self.conv1.backward(x, &da, grads.layer_mut(self.conv1.id), scratch);
        match &self.proj {
            Some(p) => {
                let dskip = p.backward(x, &dz, grads.layer_mut(p.id), scratch);
                dx += &dskip;
            }
            None => dx += &dz,
        }
        dx
    }
}

/// A sequence of residual blocks (the encoder or the decoder).
#[derive(Debug, Clone)]
pub struct BlockStack<T> {
    pub blocks: Vec<ResBlock<T>>,
}

/// Forward tape of a stack: `inputs[i]` is the input of block `i`;
/// `inputs[blocks.len()]` is the stack output.
pub struct StackTape<T> {
    pub inputs: Vec<Array4<T>>,
    tapes: Vec<BlockTape<T>>,
}

impl<T: Scalar> StackTape<T> {
    pub fn output(&self) -> &Array4<T> {
        self.inputs.last().unwrap()
    }
}

impl<T: Scalar> BlockStack<T> {
    pub fn layers(&self) -> impl Iterator<Item = &ConvLayer<T>> {
        self.blocks.iter().flat_map(|b| b.layers())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut ConvLayer<T>> {
        self.blocks.iter_mut().flat_map(|b| b.layers_mut())
    }

    pub fn forward_train(&self, x: Array4<T>, scratch: &mut Scratch<T>) -> StackTape<T> {
        let mut inputs = Vec::with_capacity(self.blocks.len() + 1);
        let mut tapes = Vec::with_capacity(self.blocks.len());
        inputs.push(x);
        for block in &self.blocks {
            let (out, tape) = block.forward(inputs.last().unwrap(), scratch);
            inputs.push(out);
            tapes.push(tape);
        }
        StackTape { inputs, tapes }
    }

    pub fn forward_eval(&self, x: &Array4<T>, scratch: &mut Scratch<T>) -> Array4<T> {
        let mut cur = None;
        for block in &self.blocks {
            let next = block.forward_eval(cur.as_ref().unwrap_or(x), scratch);
            cur = Some(next);
        }
        cur.unwrap_or_else(|| x.clone())
    }

    /// Returns the gradient with respect to the stack input.
    pub fn backward(
        &self,
        tape: &StackTape<T>,
        dout: Array4<T>,
        grads: &mut GradStore<T>,
        scratch: &mut Scratch<T>,
    ) -> Array4<T> {
        let mut d = dout;
        for (i, block) in self.blocks.iter().enumerate().rev() {
            d = block.backward(
                &tape.inputs[i],
                &tape.tapes[i],
                &tape.inputs[i + 1],
                &d,
                grads,
                scratch,
            );
        }
        d
    }
}

/// Gradient buffers for one convolution layer.
#[derive(Debug, Clone)]
pub struct LayerGrads<T> {
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Scalar> LayerGrads<T> {
    pub fn zeros_like(layer: &ConvLayer<T>) -> Self {
        Self { w: Array2::zeros(layer.w.dim()), b: Array1::zeros(layer.b.len()) }
    }
}

/// Gradients for a whole model, indexed by layer id. Chunk-local stores are
/// summed in a fixed order, which keeps training bitwise deterministic under
/// any worker count.
#[derive(Debug, Clone)]
pub struct GradStore<T> {
    layers: Vec<LayerGrads<T>>,
}

impl<T: Scalar> GradStore<T> {
    pub fn zeros_for<'a>(layers: impl Iterator<Item = &'a ConvLayer<T>>) -> Self
    where
        T: 'a,
    {
        let mut by_id: Vec<Option<LayerGrads<T>>> = Vec::new();
        for layer in layers {
            if by_id.len() <= layer.id {
                by_id.resize_with(layer.id + 1, || None);
            }
            by_id[layer.id] = Some(LayerGrads::zeros_like(layer));
        }
        Self { layers: by_id.into_iter().map(|g| g.expect("gap in layer ids")).collect() }
    }

    pub fn layer_mut(&mut self, id: usize) -> &mut LayerGrads<T> {
        &mut self.layers[id]
    }

    pub fn layer(&self, id: usize) -> &LayerGrads<T> {
        &self.layers[id]
    }

    pub fn add_assign(&mut self, other: &GradStore<T>) {
        assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}
