use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Squared error scaled by `1 / (1 + exp(a·(c − l)))`, which damps residuals
/// below `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShrinkageCfg {
    pub a: f64,
    pub c: f64,
}

impl Default for ShrinkageCfg {
    fn default() -> Self {
        ShrinkageCfg { a: 10.0, c: 0.2 }
    }
}

impl ShrinkageCfg {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) || !(self.c >= 0.0) || !self.a.is_finite() || !self.c.is_finite() {
            return Err(Error::InvalidInput(format!("shrinkage needs a > 0 and c >= 0, got {self:?}")));
        }
        Ok(())
    }

    /// Loss of one absolute residual.
    pub fn element(&self, l: f64) -> f64 {
        l * l / (1.0 + (self.a * (self.c - l)).exp())
    }

    /// d(element)/dl.
    pub fn element_grad(&self, l: f64) -> f64 {
        let s = 1.0 / (1.0 + (self.a * (self.c - l)).exp());
        2.0 * l * s + self.a * l * l * s * (1.0 - s)
    }
}

/// Mean shrinkage loss over all entries and its gradient w.r.t. `pred`.
pub fn shrinkage_loss(pred: &Array2<f64>, target: &Array2<f64>, cfg: &ShrinkageCfg) -> Result<(f64, Array2<f64>)> {
    if pred.dim() != target.dim() {
        return Err(Error::ShapeMismatch {
            layer: "shrinkage_loss",
            expected: format!("{:?}", target.shape()),
            got: format!("{:?}", pred.shape()),
        });
    }
    if pred.iter().chain(target).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("shrinkage_loss input".into()));
    }
    let n = pred.len() as f64;
    let mut total = 0.0;
    let mut grad = Array2::zeros(pred.raw_dim());
    ndarray::Zip::from(&mut grad).and(pred).and(target).for_each(|g, &p, &t| {
        let d = p - t;
        let l = d.abs();
        total += cfg.element(l);
        *g = cfg.element_grad(l) * d.signum() / n;
    });
    let loss = total / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("shrinkage loss".into()));
    }
    Ok((loss, grad))
}

/// Largest relative error between the analytic gradient and central
/// differences with step `h`, floored at `1e-6` in the denominator.
pub fn shrinkage_gradient_error(pred: &Array2<f64>, target: &Array2<f64>, cfg: &ShrinkageCfg, h: f64) -> f64 {
    let (_, g) = shrinkage_loss(pred, target, cfg).expect("finite inputs");
    let mut worst = 0.0f64;
    let mut p = pred.clone();
    for idx in ndarray::indices(pred.raw_dim()) {
        let orig = p[idx];
        p[idx] = orig + h;
        let up = shrinkage_loss(&p, target, cfg).unwrap().0;
        p[idx] = orig - h;
        let down = shrinkage_loss(&p, target, cfg).unwrap().0;
        p[idx] = orig;
        let num = (up - down) / (2.0 * h);
        worst = worst.max((g[idx] - num).abs() / g[idx].abs().max(num.abs()).max(1e-6));
    }
    worst
}
