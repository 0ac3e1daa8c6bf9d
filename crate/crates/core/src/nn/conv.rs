use ndarray::{s, Array2, Array4, Axis};
use rand::Rng;

use super::{shape_err, Parameter};
use crate::{Error, Result};

/// 2D convolution over B×C×H×W batches, computed as a matrix product with
/// unfolded input patches.
#[derive(Debug, Clone)]
pub struct Conv2d {
    /// out × (in·k·k), patch order (channel, row, column).
    pub w: Parameter,
    pub b: Parameter,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    cache: Option<(Vec<Array2<f64>>, [usize; 4])>,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(kernel >= 1 && stride >= 1, "kernel and stride must be positive");
        let fan_in = in_channels * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Conv2d {
            w: Parameter::uniform(out_channels, fan_in, bound, rng),
            b: Parameter::uniform(1, out_channels, bound, rng),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    /// Output spatial size for an `h × w` input, if the kernel fits.
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let span = |n: usize| {
            let padded = n + 2 * self.padding;
            (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
        };
        Some((span(h)?, span(w)?))
    }

    fn unfold(&self, img: ndarray::ArrayView3<f64>, ho: usize, wo: usize) -> Array2<f64> {
        let (c, h, w) = img.dim();
        let k = self.kernel;
        let mut cols = Array2::zeros((c * k * k, ho * wo));
        for ch in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ch * k + ki) * k + kj;
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                cols[[row, oy * wo + ox]] = img[[ch, iy as usize, ix as usize]];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn fold(&self, cols: &Array2<f64>, c: usize, h: usize, w: usize, ho: usize, wo: usize) -> ndarray::Array3<f64> {
        let k = self.kernel;
        let mut img = ndarray::Array3::zeros((c, h, w));
        for ch in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ch * k + ki) * k + kj;
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                img[[ch, iy as usize, ix as usize]] += cols[[row, oy * wo + ox]];
                            }
                        }
                    }
                }
            }
        }
        img
    }

    pub fn forward(&mut self, x: &Array4<f64>) -> Result<Array4<f64>> {
        let (b, c, h, w) = x.dim();
        if c != self.in_channels {
            return Err(shape_err("conv2d", format!("{} input channels", self.in_channels), format!("{:?}", x.shape())));
        }
        let (ho, wo) = self
            .output_hw(h, w)
            .ok_or_else(|| shape_err("conv2d", format!("spatial size ≥ {}", self.kernel), format!("{:?}", x.shape())))?;
        let mut out = Array4::zeros((b, self.out_channels, ho, wo));
        let mut cached = Vec::with_capacity(b);
        let bias = self.b.value.t();
        for i in 0..b {
            let cols = self.unfold(x.index_axis(Axis(0), i), ho, wo);
            let y = self.w.value.dot(&cols) + &bias;
            out.slice_mut(s![i, .., .., ..])
                .assign(&y.into_shape_with_order((self.out_channels, ho, wo)).expect("sizes agree"));
            cached.push(cols);
        }
        self.cache = Some((cached, [b, c, h, w]));
        Ok(out)
    }

    pub fn backward(&mut self, g: &Array4<f64>) -> Result<Array4<f64>> {
        let (cols, [b, c, h, w]) = self.cache.as_ref().ok_or(Error::BackwardWithoutForward("conv2d"))?;
        let (ho, wo) = self.output_hw(*h, *w).expect("checked in forward");
        if g.dim() != (*b, self.out_channels, ho, wo) {
            return Err(shape_err(
                "conv2d",
                format!("{:?}", (*b, self.out_channels, ho, wo)),
                format!("{:?}", g.shape()),
            ));
        }
        let mut dx = Array4::zeros((*b, *c, *h, *w));
        for i in 0..*b {
            let gi = g
                .index_axis(Axis(0), i)
                .to_owned()
                .into_shape_with_order((self.out_channels, ho * wo))
                .expect("sizes agree");
            self.w.grad += &gi.dot(&cols[i].t());
            self.b.grad += &gi.sum_axis(Axis(1)).insert_axis(Axis(0));
            let dcols = self.w.value.t().dot(&gi);
            dx.slice_mut(s![i, .., .., ..]).assign(&self.fold(&dcols, *c, *h, *w, ho, wo));
        }
        Ok(dx)
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.w, &mut self.b]
    }
}
