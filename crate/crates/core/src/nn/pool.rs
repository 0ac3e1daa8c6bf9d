use ndarray::Array2;

use super::shape_err;
use crate::{Error, Result};

/// Per-graph elementwise maximum over nodes.
#[derive(Debug, Clone, Default)]
pub struct GlobalMaxPool {
    cache: Option<(usize, Vec<usize>)>,
}

impl GlobalMaxPool {
    /// `offsets[g]..offsets[g + 1]` are the rows of graph `g`. Ties go to
    /// the first row.
    pub fn forward(&mut self, x: &Array2<f64>, offsets: &[usize]) -> Result<Array2<f64>> {
        let (n, d) = x.dim();
        if offsets.len() < 2 || offsets[0] != 0 || *offsets.last().unwrap() != n {
            return Err(shape_err("max_pool", format!("offsets spanning 0..{n}"), format!("{offsets:?}")));
        }
        let b = offsets.len() - 1;
        let mut out = Array2::zeros((b, d));
        let mut argmax = vec![0usize; b * d];
        for g in 0..b {
            let (start, end) = (offsets[g], offsets[g + 1]);
            if end <= start {
                return Err(Error::InvalidInput(format!("max_pool: graph {g} has no nodes")));
            }
            for j in 0..d {
                let mut best = start;
                for i in start + 1..end {
                    if x[[i, j]] > x[[best, j]] {
                        best = i;
                    }
                }
                out[[g, j]] = x[[best, j]];
                argmax[g * d + j] = best;
            }
        }
        self.cache = Some((n, argmax));
        Ok(out)
    }

    pub fn backward(&mut self, g: &Array2<f64>) -> Result<Array2<f64>> {
        let (n, argmax) = self.cache.as_ref().ok_or(Error::BackwardWithoutForward("max_pool"))?;
        let d = g.ncols();
        if g.len() != argmax.len() {
            return Err(shape_err("max_pool", format!("{} values", argmax.len()), format!("{:?}", g.shape())));
        }
        let mut out = Array2::zeros((*n, d));
        for ((b, j), v) in g.indexed_iter() {
            out[[argmax[b * d + j], j]] += v;
        }
        Ok(out)
    }
}
