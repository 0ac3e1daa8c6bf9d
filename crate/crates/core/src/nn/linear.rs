use ndarray::{Array2, Axis};
use rand::Rng;

use super::{shape_err, Parameter};
use crate::{Error, Result};

/// `y = x·Wᵀ + b` with `W` of shape out×in.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Parameter,
    pub b: Parameter,
    input: Option<Array2<f64>>,
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        Linear {
            w: Parameter::uniform(d_out, d_in, bound, rng),
            b: Parameter::uniform(1, d_out, bound, rng),
            input: None,
        }
    }

    pub fn d_in(&self) -> usize {
        self.w.value.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.w.value.nrows()
    }

    pub(crate) fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.d_in() {
            return Err(shape_err("linear", format!("N×{}", self.d_in()), format!("{:?}", x.shape())));
        }
        Ok(x.dot(&self.w.value.t()) + &self.b.value)
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.forward_owned(x.clone())
    }

    pub fn forward_owned(&mut self, x: Array2<f64>) -> Result<Array2<f64>> {
        let y = self.apply(&x)?;
        self.input = Some(x);
        Ok(y)
    }

    pub fn backward(&mut self, g: &Array2<f64>) -> Result<Array2<f64>> {
        let x = self.input.as_ref().ok_or(Error::BackwardWithoutForward("linear"))?;
        if g.dim() != (x.nrows(), self.d_out()) {
            return Err(shape_err("linear", format!("{}×{}", x.nrows(), self.d_out()), format!("{:?}", g.shape())));
        }
        self.w.grad += &g.t().dot(x);
        self.b.grad += &g.sum_axis(Axis(0)).insert_axis(Axis(0));
        Ok(g.dot(&self.w.value))
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.w, &mut self.b]
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Array2<bool>>,
}

impl Relu {
    pub fn forward(&mut self, x: &Array2<f64>) -> Array2<f64> {
        self.forward_owned(x.clone())
    }

    pub fn forward_owned(&mut self, mut x: Array2<f64>) -> Array2<f64> {
        self.mask = Some(x.mapv(|v| v > 0.0));
        x.mapv_inplace(|v| v.max(0.0));
        x
    }

    pub fn backward(&mut self, g: &Array2<f64>) -> Result<Array2<f64>> {
        let mask = self.mask.as_ref().ok_or(Error::BackwardWithoutForward("relu"))?;
        if mask.dim() != g.dim() {
            return Err(shape_err("relu", format!("{:?}", mask.shape()), format!("{:?}", g.shape())));
        }
        let mut out = g.clone();
        ndarray::Zip::from(&mut out).and(mask).for_each(|o, &m| {
            if !m {
                *o = 0.0
            }
        });
        Ok(out)
    }
}

/// Affine layers with relu between them and a linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    relus: Vec<Relu>,
}

impl Mlp {
    /// `widths = [d_in, h1, ..., d_out]`.
    pub fn new(widths: &[usize], rng: &mut impl Rng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        let layers: Vec<Linear> = widths.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect();
        let relus = vec![Relu::default(); layers.len() - 1];
        Mlp { layers, relus }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].d_in()];
        w.extend(self.layers.iter().map(|l| l.d_out()));
        w
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for i in 0..=last {
            h = self.layers[i].forward(&h).map_err(|e| rename(e, "mlp"))?;
            if i < last {
                h = self.relus[i].forward(&h);
            }
        }
        Ok(h)
    }

    pub fn backward(&mut self, g: &Array2<f64>) -> Result<Array2<f64>> {
        let mut g = g.clone();
        for i in (0..self.layers.len()).rev() {
            if i < self.relus.len() {
                g = self.relus[i].backward(&g)?;
            }
            g = self.layers[i].backward(&g).map_err(|e| rename(e, "mlp"))?;
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// Attribute a shape error to the enclosing layer.
pub(crate) fn rename(e: Error, layer: &'static str) -> Error {
    match e {
        Error::ShapeMismatch { expected, got, .. } => Error::ShapeMismatch { layer, expected, got },
        Error::BackwardWithoutForward(_) => Error::BackwardWithoutForward(layer),
        other => other,
    }
}
