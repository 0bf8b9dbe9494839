//! The fixed three-block CNN: `[conv3×3 → ReLU → maxpool2×2] × 3 → FC → ReLU → FC`.
//!
//! | layer | output       | params  |
//! |-------|--------------|---------|
//! | conv1 | 16×32×32     | 160     |
//! | conv2 | 32×16×16     | 4,640   |
//! | conv3 | 64×8×8       | 18,496  |
//! | fc1   | 64           | 262,208 |
//! | fc2   | 2            | 130     |

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, maxpool2x2, maxpool2x2_backward, relu,
    relu_backward, ConvLayer, DenseLayer, PoolIndices,
};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const INPUT_SIZE: usize = 64;
pub const NUM_CLASSES: usize = 2;
pub const CONV_CHANNELS: [usize; 3] = [16, 32, 64];
pub const HIDDEN: usize = 64;
pub const FLAT: usize = 64 * 8 * 8;
pub const TOTAL_PARAMS: usize = 285_634;

/// Parameter tensor names in storage, optimizer and checkpoint order.
pub const PARAM_NAMES: [&str; 10] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "conv3.weight",
    "conv3.bias",
    "fc1.weight",
    "fc1.bias",
    "fc2.weight",
    "fc2.bias",
];

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

/// All learnable tensors of the network. Used both for the parameters
/// themselves and for their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Layers<T = f32> {
    pub conv1: ConvLayer<T>,
    pub conv2: ConvLayer<T>,
    pub conv3: ConvLayer<T>,
    pub fc1: DenseLayer<T>,
    pub fc2: DenseLayer<T>,
}

impl<T: Scalar> Layers<T> {
    pub fn zeros() -> Self {
        let [c1, c2, c3] = CONV_CHANNELS;
        Self {
            conv1: ConvLayer::zeros(1, c1),
            conv2: ConvLayer::zeros(c1, c2),
            conv3: ConvLayer::zeros(c2, c3),
            fc1: DenseLayer::zeros(FLAT, HIDDEN),
            fc2: DenseLayer::zeros(HIDDEN, NUM_CLASSES),
        }
    }

    pub fn tensors(&self) -> [&Tensor<T>; 10] {
        [
            &self.conv1.weight,
            &self.conv1.bias,
            &self.conv2.weight,
            &self.conv2.bias,
            &self.conv3.weight,
            &self.conv3.bias,
            &self.fc1.weight,
            &self.fc1.bias,
            &self.fc2.weight,
            &self.fc2.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 10] {
        [
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.conv3.weight,
            &mut self.conv3.bias,
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.fc2.weight,
            &mut self.fc2.bias,
        ]
    }

    /// Per-layer parameter counts, conv1..fc2.
    pub fn layer_param_counts(&self) -> [usize; 5] {
        [
            self.conv1.param_count(),
            self.conv2.param_count(),
            self.conv3.param_count(),
            self.fc1.param_count(),
            self.fc2.param_count(),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layer_param_counts().iter().sum()
    }

    pub fn add_assign(&mut self, other: &Layers<T>) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b).expect("identical architecture");
        }
    }

    pub fn cast<U: Scalar>(&self) -> Layers<U> {
        Layers {
            conv1: ConvLayer {
                weight: self.conv1.weight.cast(),
                bias: self.conv1.bias.cast(),
            },
            conv2: ConvLayer {
                weight: self.conv2.weight.cast(),
                bias: self.conv2.bias.cast(),
            },
            conv3: ConvLayer {
                weight: self.conv3.weight.cast(),
                bias: self.conv3.bias.cast(),
            },
            fc1: DenseLayer {
                weight: self.fc1.weight.cast(),
                bias: self.fc1.bias.cast(),
            },
            fc2: DenseLayer {
                weight: self.fc2.weight.cast(),
                bias: self.fc2.bias.cast(),
            },
        }
    }
}

/// Parameter gradients, shaped like the parameters.
pub type Gradients<T = f32> = Layers<T>;

#[derive(Debug, Clone)]
pub struct CnnModel<T = f32> {
    layers: Layers<T>,
    // Identifies the current parameter values; changes on every mutable borrow.
    stamp: u64,
}

impl<T: Scalar> PartialEq for CnnModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Activations retained by [`CnnModel::forward`] for the backward pass and Grad-CAM.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T = f32> {
    pub input: Tensor<T>,
    pub act1: Tensor<T>,
    pub pool1: Tensor<T>,
    pub idx1: PoolIndices,
    pub act2: Tensor<T>,
    pub pool2: Tensor<T>,
    pub idx2: PoolIndices,
    pub act3: Tensor<T>,
    /// Output of the last conv block, `64×8×8`; flattened into fc1.
    pub pool3: Tensor<T>,
    pub idx3: PoolIndices,
    pub hidden: Tensor<T>,
    pub logits: Tensor<T>,
    stamp: u64,
}

impl<T: Scalar> CnnModel<T> {
    /// Kaiming-uniform weights and zero biases from a seeded ChaCha8 stream.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [c1, c2, c3] = CONV_CHANNELS;
        Self::from_layers(Layers {
            conv1: ConvLayer::kaiming(1, c1, &mut rng),
            conv2: ConvLayer::kaiming(c1, c2, &mut rng),
            conv3: ConvLayer::kaiming(c2, c3, &mut rng),
            fc1: DenseLayer::kaiming(FLAT, HIDDEN, &mut rng),
            fc2: DenseLayer::kaiming(HIDDEN, NUM_CLASSES, &mut rng),
        })
    }

    pub fn zeros() -> Self {
        Self::from_layers(Layers::zeros())
    }

    /// Wraps existing tensors after checking them against the fixed architecture.
    pub fn try_from_layers(layers: Layers<T>) -> Result<Self> {
        let reference = Layers::<T>::zeros();
        for ((name, got), want) in PARAM_NAMES.iter().zip(layers.tensors()).zip(reference.tensors()) {
            if got.shape() != want.shape() {
                return Err(Error::InvalidShape(format!(
                    "{name}: expected {:?}, got {:?}",
                    want.shape(),
                    got.shape()
                )));
            }
        }
        Ok(Self::from_layers(layers))
    }

    fn from_layers(layers: Layers<T>) -> Self {
        Self {
            layers,
            stamp: fresh_stamp(),
        }
    }

    pub fn layers(&self) -> &Layers<T> {
        &self.layers
    }

    /// Mutable access to the parameters. Invalidates outstanding traces.
    pub fn layers_mut(&mut self) -> &mut Layers<T> {
        self.stamp = fresh_stamp();
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.param_count()
    }

    pub fn cast<U: Scalar>(&self) -> CnnModel<U> {
        CnnModel::from_layers(self.layers.cast())
    }

    pub fn forward(&self, image: &Tensor<T>) -> Result<(Tensor<T>, ForwardTrace<T>)> {
        image.expect_shape(&[1, INPUT_SIZE, INPUT_SIZE], "model input")?;
        let l = &self.layers;
        let act1 = relu(&conv2d_forward(image, &l.conv1)?);
        let (pool1, idx1) = maxpool2x2(&act1)?;
        let act2 = relu(&conv2d_forward(&pool1, &l.conv2)?);
        let (pool2, idx2) = maxpool2x2(&act2)?;
        let act3 = relu(&conv2d_forward(&pool2, &l.conv3)?);
        let (pool3, idx3) = maxpool2x2(&act3)?;
        let flat = pool3.clone().reshape(&[FLAT])?;
        let hidden = relu(&dense_forward(&flat, &l.fc1)?);
        let logits = dense_forward(&hidden, &l.fc2)?;
        logits.check_finite("logits")?;
        let trace = ForwardTrace {
            input: image.clone(),
            act1,
            pool1,
            idx1,
            act2,
            pool2,
            idx2,
            act3,
            pool3,
            idx3,
            hidden,
            logits: logits.clone(),
            stamp: self.stamp,
        };
        Ok((logits, trace))
    }

    /// Logits only; same arithmetic as [`CnnModel::forward`].
    pub fn logits(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(image).map(|(logits, _)| logits)
    }

    /// Softmax probability of class 1.
    pub fn positive_probability(&self, image: &Tensor<T>) -> Result<T> {
        let logits = self.logits(image)?;
        Ok(super::loss::softmax(logits.data())[1])
    }

    fn check_trace(&self, trace: &ForwardTrace<T>) -> Result<()> {
        if trace.stamp != self.stamp {
            return Err(Error::InvalidState(
                "trace was produced by different model parameters".into(),
            ));
        }
        Ok(())
    }

    pub fn backward(&self, trace: &ForwardTrace<T>, dlogits: &Tensor<T>) -> Result<Gradients<T>> {
        let mut grads = Gradients::zeros();
        self.backward_into(trace, dlogits, &mut grads)?;
        Ok(grads)
    }

    /// Adds this sample's parameter gradients into `grads`.
    pub fn backward_into(&self, trace: &ForwardTrace<T>, dlogits: &Tensor<T>, grads: &mut Gradients<T>) -> Result<()> {
        self.check_trace(trace)?;
        if dlogits.len() != NUM_CLASSES {
            return Err(Error::InvalidShape(format!(
                "dlogits must have {NUM_CLASSES} entries, got {}",
                dlogits.len()
            )));
        }
        let l = &self.layers;
        let dlogits = dlogits.clone().reshape(&[NUM_CLASSES])?;
        let mut dhidden = dense_backward(&trace.hidden, &l.fc2, &dlogits, &mut grads.fc2)?;
        relu_backward(&trace.hidden, &mut dhidden)?;
        let flat = trace.pool3.clone().reshape(&[FLAT])?;
        let dflat = dense_backward(&flat, &l.fc1, &dhidden, &mut grads.fc1)?;
        let dpool3 = dflat.reshape(trace.pool3.shape())?;

        let mut dact3 = maxpool2x2_backward(&dpool3, &trace.idx3)?;
        relu_backward(&trace.act3, &mut dact3)?;
        let mut dpool2 = Tensor::zeros(trace.pool2.shape());
        conv2d_backward(&trace.pool2, &l.conv3, &dact3, &mut grads.conv3, Some(&mut dpool2))?;

        let mut dact2 = maxpool2x2_backward(&dpool2, &trace.idx2)?;
        relu_backward(&trace.act2, &mut dact2)?;
        let mut dpool1 = Tensor::zeros(trace.pool1.shape());
        conv2d_backward(&trace.pool1, &l.conv2, &dact2, &mut grads.conv2, Some(&mut dpool1))?;

        let mut dact1 = maxpool2x2_backward(&dpool1, &trace.idx1)?;
        relu_backward(&trace.act1, &mut dact1)?;
        conv2d_backward(&trace.input, &l.conv1, &dact1, &mut grads.conv1, None)?;
        Ok(())
    }

    /// Gradient of `dlogits · logits` with respect to the last conv block
    /// output (`64×8×8`), without touching parameter gradients.
    pub fn feature_gradient(&self, trace: &ForwardTrace<T>, dlogits: &[T]) -> Result<Tensor<T>> {
        self.check_trace(trace)?;
        if dlogits.len() != NUM_CLASSES {
            return Err(Error::InvalidShape(format!(
                "dlogits must have {NUM_CLASSES} entries, got {}",
                dlogits.len()
            )));
        }
        let l = &self.layers;
        let w2 = l.fc2.weight.data();
        let dhidden: Vec<T> = (0..HIDDEN)
            .map(|m| {
                if trace.hidden.data()[m] <= T::zero() {
                    return T::zero();
                }
                (0..NUM_CLASSES).fold(T::zero(), |a, k| a + w2[k * HIDDEN + m] * dlogits[k])
            })
            .collect();
        let mut dflat = vec![T::zero(); FLAT];
        for (row, &g) in l.fc1.weight.data().chunks_exact(FLAT).zip(&dhidden) {
            if g == T::zero() {
                continue;
            }
            for (d, &w) in dflat.iter_mut().zip(row) {
                *d = *d + w * g;
            }
        }
        Tensor::new(trace.pool3.shape(), dflat)
    }
}

impl<T: Scalar> ForwardTrace<T> {
    /// Shapes of the per-block outputs: three pooled conv maps, the
    /// flattened features, the hidden layer and the logits.
    pub fn output_shapes(&self) -> Vec<Vec<usize>> {
        vec![
            self.pool1.shape().to_vec(),
            self.pool2.shape().to_vec(),
            self.pool3.shape().to_vec(),
            vec![self.pool3.len()],
            self.hidden.shape().to_vec(),
            self.logits.shape().to_vec(),
        ]
    }
}
