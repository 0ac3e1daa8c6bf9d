use ndarray::{Array1, Array2};

use super::{shape_err, Parameter};
use crate::{Error, Result};

/// Per-feature normalisation over the rows of a batch.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub training: bool,
    cache: Option<(Array2<f64>, Array1<f64>, bool)>,
}

impl BatchNorm1d {
    pub fn new(d: usize) -> Self {
        BatchNorm1d {
            gamma: Parameter::new(Array2::ones((1, d))),
            beta: Parameter::new(Array2::zeros((1, d))),
            running_mean: Array1::zeros(d),
            running_var: Array1::ones(d),
            momentum: 0.1,
            eps: 1e-5,
            training: true,
            cache: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward(&mut self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let (n, d) = x.dim();
        if d != self.dim() {
            return Err(shape_err("batchnorm", format!("N×{}", self.dim()), format!("{:?}", x.shape())));
        }
        let x = x.as_standard_layout();
        let rows = || x.as_slice().expect("standard layout").chunks_exact(d.max(1));
        let (mean, var) = if self.training {
            if n < 2 {
                return Err(Error::InvalidInput(format!(
                    "batchnorm: training mode needs at least 2 rows, got {n}"
                )));
            }
            let mut mean = Array1::<f64>::zeros(d);
            for row in rows() {
                mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
            }
            mean /= n as f64;
            let mut var = Array1::<f64>::zeros(d);
            for row in rows() {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            var /= n as f64;
            let unbiased = &var * (n as f64 / (n - 1) as f64);
            let m = self.momentum;
            self.running_mean = &self.running_mean * (1.0 - m) + &mean * m;
            self.running_var = &self.running_var * (1.0 - m) + &unbiased * m;
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let (mu, is) = (mean.as_slice().unwrap(), inv_std.as_slice().unwrap());
        let gamma = self.gamma.value.as_slice().expect("1×d");
        let beta = self.beta.value.as_slice().expect("1×d");
        let mut xhat = vec![0.0; n * d];
        let mut out = vec![0.0; n * d];
        for ((row, hr), or) in rows().zip(xhat.chunks_exact_mut(d.max(1))).zip(out.chunks_exact_mut(d.max(1))) {
            for j in 0..d {
                let h = (row[j] - mu[j]) * is[j];
                hr[j] = h;
                or[j] = h * gamma[j] + beta[j];
            }
        }
        let xhat = Array2::from_shape_vec((n, d), xhat).expect("n×d values");
        self.cache = Some((xhat, inv_std, self.training));
        Ok(Array2::from_shape_vec((n, d), out).expect("n×d values"))
    }

    pub fn backward(&mut self, g: &Array2<f64>) -> Result<Array2<f64>> {
        let (xhat, inv_std, training) = self.cache.as_ref().ok_or(Error::BackwardWithoutForward("batchnorm"))?;
        if g.dim() != xhat.dim() {
            return Err(shape_err("batchnorm", format!("{:?}", xhat.shape()), format!("{:?}", g.shape())));
        }
        let (n, d) = g.dim();
        let g = g.as_standard_layout();
        let gs = g.as_slice().expect("standard layout");
        let hs = xhat.as_slice().expect("standard layout");
        let mut sum_g = vec![0.0; d];
        let mut sum_gh = vec![0.0; d];
        for (gr, hr) in gs.chunks_exact(d.max(1)).zip(hs.chunks_exact(d.max(1))) {
            for j in 0..d {
                sum_g[j] += gr[j];
                sum_gh[j] += gr[j] * hr[j];
            }
        }
        let gamma = self.gamma.value.as_slice().expect("1×d").to_vec();
        for j in 0..d {
            self.gamma.grad[[0, j]] += sum_gh[j];
            self.beta.grad[[0, j]] += sum_g[j];
        }
        let is = inv_std.as_slice().expect("contiguous");
        let mut out = vec![0.0; n * d];
        if !training {
            for (gr, or) in gs.chunks_exact(d.max(1)).zip(out.chunks_exact_mut(d.max(1))) {
                for j in 0..d {
                    or[j] = gr[j] * gamma[j] * is[j];
                }
            }
        } else {
            // dxhat = g·γ, so its column sums are γ·sum_g and γ·sum_gh.
            let nf = n as f64;
            let rows = gs.chunks_exact(d.max(1)).zip(hs.chunks_exact(d.max(1)));
            for ((gr, hr), or) in rows.zip(out.chunks_exact_mut(d.max(1))) {
                for j in 0..d {
                    let dh = gr[j] * gamma[j];
                    or[j] = (dh * nf - gamma[j] * sum_g[j] - hr[j] * gamma[j] * sum_gh[j]) * is[j] / nf;
                }
            }
        }
        Ok(Array2::from_shape_vec((n, d), out).expect("n×d values"))
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.gamma, &mut self.beta]
    }
}
