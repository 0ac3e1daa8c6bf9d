use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linear::rename;
use super::{shape_err, Linear, Parameter};
use crate::graph::Adjacency;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

/// `m_v = mean({x_v} ∪ {x_u : u ∈ N(v)})`.
pub fn aggregate_mean(x: &Array2<f64>, adj: &Adjacency) -> Array2<f64> {
    let (n, d) = x.dim();
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let mut out = Array2::<f64>::zeros((n, d));
    let dst = out.as_slice_mut().expect("fresh array");
    for v in 0..n {
        let row = &mut dst[v * d..(v + 1) * d];
        row.copy_from_slice(&src[v * d..(v + 1) * d]);
        for &u in adj.neighbours(v) {
            let u = u as usize;
            for (o, s) in row.iter_mut().zip(&src[u * d..(u + 1) * d]) {
                *o += s;
            }
        }
        let inv = 1.0 / (adj.degree(v) + 1) as f64;
        row.iter_mut().for_each(|o| *o *= inv);
    }
    out
}

/// Adjoint of [`aggregate_mean`] (the adjacency is symmetric).
fn aggregate_mean_adjoint(g: &Array2<f64>, adj: &Adjacency) -> Array2<f64> {
    let (n, d) = g.dim();
    let mut scaled = g.as_standard_layout().into_owned();
    for (v, mut row) in scaled.rows_mut().into_iter().enumerate() {
        let inv = 1.0 / (adj.degree(v) + 1) as f64;
        row.mapv_inplace(|x| x * inv);
    }
    let src = scaled.as_slice().expect("standard layout");
    let mut out = Array2::<f64>::zeros((n, d));
    let dst = out.as_slice_mut().expect("fresh array");
    for v in 0..n {
        let row = &mut dst[v * d..(v + 1) * d];
        row.copy_from_slice(&src[v * d..(v + 1) * d]);
        for &u in adj.neighbours(v) {
            let u = u as usize;
            for (o, s) in row.iter_mut().zip(&src[u * d..(u + 1) * d]) {
                *o += s;
            }
        }
    }
    out
}

/// Mean-aggregator graph convolution `σ(W · mean({h_v} ∪ N(v)) + b)`.
#[derive(Debug, Clone)]
pub struct SageLayer {
    pub lin: Linear,
    pub activation: Activation,
    cache: Option<(Adjacency, (usize, usize), Option<Array2<f64>>)>,
}

impl SageLayer {
    pub fn new(d_in: usize, d_out: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        SageLayer {
            lin: Linear::new(d_in, d_out, rng),
            activation,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<f64>, adj: &Adjacency) -> Result<Array2<f64>> {
        if x.nrows() != adj.num_nodes() {
            return Err(shape_err("sage", format!("{} nodes", adj.num_nodes()), format!("{} rows", x.nrows())));
        }
        let m = aggregate_mean(x, adj);
        let z = self.lin.forward_owned(m).map_err(|e| rename(e, "sage"))?;
        let (out, mask) = match self.activation {
            Activation::Relu => (z.mapv(|v| v.max(0.0)), Some(z)),
            Activation::Identity => (z, None),
        };
        self.cache = Some((adj.clone(), out.dim(), mask));
        Ok(out)
    }

    pub fn backward(&mut self, g: &Array2<f64>) -> Result<Array2<f64>> {
        let (adj, dim, z) = self.cache.as_ref().ok_or(Error::BackwardWithoutForward("sage"))?;
        if g.dim() != *dim {
            return Err(shape_err("sage", format!("{dim:?}"), format!("{:?}", g.shape())));
        }
        let mut gz = g.clone();
        if let Some(z) = z {
            ndarray::Zip::from(&mut gz).and(z).for_each(|o, &zv| {
                if zv <= 0.0 {
                    *o = 0.0
                }
            });
        }
        let gm = self.lin.backward(&gz).map_err(|e| rename(e, "sage"))?;
        Ok(aggregate_mean_adjoint(&gm, adj))
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.lin.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.lin.params_mut()
    }
}
