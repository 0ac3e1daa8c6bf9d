use ndarray::{Array1, Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{shape_err, Architecture, Conv2d, Mlp, Model, Parameter, Relu};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnnConfig {
    /// Input height and width.
    pub input: [usize; 2],
    pub in_channels: usize,
    pub channels: [usize; 3],
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// Hidden widths of the MLP head.
    pub hidden: [usize; 2],
    pub seed: u64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            input: [64, 64],
            in_channels: 2,
            channels: [16, 32, 64],
            kernel: 3,
            stride: 2,
            padding: 0,
            hidden: [64, 32],
            seed: 0,
        }
    }
}

/// Three conv → relu stages, flatten, and an MLP head ending in 2 outputs.
#[derive(Debug, Clone)]
pub struct CnnModel {
    pub convs: Vec<Conv2d>,
    relus: Vec<Relu>,
    pub head: Mlp,
    config: CnnConfig,
    feature_shape: [usize; 3],
    batch: usize,
}

impl CnnModel {
    pub fn new(config: CnnConfig) -> crate::Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut convs = Vec::new();
        let (mut c, [mut h, mut w]) = (config.in_channels, config.input);
        for &out in &config.channels {
            let conv = Conv2d::new(c, out, config.kernel, config.stride, config.padding, &mut rng);
            (h, w) = conv.output_hw(h, w).ok_or_else(|| {
                shape_err("cnn", "input large enough for three convolutions", format!("{:?}", config.input))
            })?;
            c = out;
            convs.push(conv);
        }
        let flat = c * h * w;
        let head = Mlp::new(&[flat, config.hidden[0], config.hidden[1], 2], &mut rng);
        Ok(CnnModel {
            convs,
            relus: vec![Relu::default(); 3],
            head,
            config,
            feature_shape: [c, h, w],
            batch: 0,
        })
    }

    pub fn config(&self) -> CnnConfig {
        self.config
    }

    pub fn flat_features(&self) -> usize {
        self.feature_shape.iter().product()
    }
}

fn relu4(relu: &mut Relu, x: Array4<f64>) -> Array4<f64> {
    let shape = x.raw_dim();
    let n = x.len();
    let flat = x.into_shape_with_order((1, n)).expect("contiguous");
    relu.forward(&flat).into_shape_with_order(shape).expect("same size")
}

fn relu4_back(relu: &mut Relu, g: Array4<f64>) -> Result<Array4<f64>> {
    let shape = g.raw_dim();
    let n = g.len();
    let flat = g.into_shape_with_order((1, n)).expect("contiguous");
    Ok(relu.backward(&flat)?.into_shape_with_order(shape).expect("same size"))
}

impl Model for CnnModel {
    type Input = Array4<f64>;

    fn forward(&mut self, images: &Array4<f64>) -> Result<Array2<f64>> {
        let (b, c, h, w) = images.dim();
        if c != self.config.in_channels || [h, w] != self.config.input {
            return Err(shape_err(
                "cnn",
                format!("B×{}×{}×{}", self.config.in_channels, self.config.input[0], self.config.input[1]),
                format!("{:?}", images.shape()),
            ));
        }
        let mut x = images.as_standard_layout().into_owned();
        for (conv, relu) in self.convs.iter_mut().zip(self.relus.iter_mut()) {
            x = relu4(relu, conv.forward(&x)?);
        }
        self.batch = b;
        let flat = x.as_standard_layout().into_owned().into_shape_with_order((b, self.flat_features())).expect("sizes agree");
        self.head.forward(&flat)
    }

    fn backward(&mut self, grad_out: &Array2<f64>) -> Result<()> {
        let g = self.head.backward(grad_out)?;
        let [c, h, w] = self.feature_shape;
        let mut g = g.into_shape_with_order((self.batch, c, h, w)).expect("sizes agree");
        for i in (0..3).rev() {
            g = relu4_back(&mut self.relus[i], g)?;
            g = self.convs[i].backward(&g)?;
        }
        Ok(())
    }

    fn set_training(&mut self, _training: bool) {}

    fn params(&self) -> Vec<&Parameter> {
        let mut out: Vec<&Parameter> = self.convs.iter().flat_map(|c| c.params()).collect();
        out.extend(self.head.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out: Vec<&mut Parameter> = self.convs.iter_mut().flat_map(|c| c.params_mut()).collect();
        out.extend(self.head.params_mut());
        out
    }

    fn buffers(&self) -> Vec<&Array1<f64>> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Array1<f64>> {
        Vec::new()
    }

    fn architecture(&self) -> Architecture {
        Architecture::Cnn(self.config)
    }
}
