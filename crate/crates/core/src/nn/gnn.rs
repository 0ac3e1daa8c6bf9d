use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, Architecture, BatchNorm1d, GlobalMaxPool, Mlp, Model, Parameter, Relu, SageLayer};
use crate::graph::GraphBatch;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GnnConfig {
    pub hidden: usize,
    pub seed: u64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig { hidden: 64, seed: 0 }
    }
}

/// Three SAGE → batch-norm → relu blocks (3→h→h→h), max pooling per graph,
/// and an MLP head h→h→h/2→2.
#[derive(Debug, Clone)]
pub struct GnnModel {
    pub sage: Vec<SageLayer>,
    pub bn: Vec<BatchNorm1d>,
    relu: Vec<Relu>,
    pool: GlobalMaxPool,
    pub head: Mlp,
    config: GnnConfig,
}

impl GnnModel {
    pub fn new(config: GnnConfig) -> Self {
        let h = config.hidden;
        assert!(h >= 2, "hidden width must be at least 2");
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let widths = [3, h, h, h];
        let sage = widths
            .windows(2)
            .map(|w| SageLayer::new(w[0], w[1], Activation::Identity, &mut rng))
            .collect();
        GnnModel {
            sage,
            bn: (0..3).map(|_| BatchNorm1d::new(h)).collect(),
            relu: vec![Relu::default(); 3],
            pool: GlobalMaxPool::default(),
            head: Mlp::new(&[h, h, h / 2, 2], &mut rng),
            config,
        }
    }

    pub fn config(&self) -> GnnConfig {
        self.config
    }
}

impl Model for GnnModel {
    type Input = GraphBatch;

    fn forward(&mut self, batch: &GraphBatch) -> Result<Array2<f64>> {
        let adj = batch.adjacency();
        let mut h = batch.x.clone();
        for i in 0..3 {
            h = self.sage[i].forward(&h, &adj)?;
            h = self.bn[i].forward(&h)?;
            h = self.relu[i].forward_owned(h);
        }
        let pooled = self.pool.forward(&h, &batch.offsets)?;
        self.head.forward(&pooled)
    }

    fn backward(&mut self, grad_out: &Array2<f64>) -> Result<()> {
        let g = self.head.backward(grad_out)?;
        let mut g = self.pool.backward(&g)?;
        for i in (0..3).rev() {
            g = self.relu[i].backward(&g)?;
            g = self.bn[i].backward(&g)?;
            g = self.sage[i].backward(&g)?;
        }
        Ok(())
    }

    fn set_training(&mut self, training: bool) {
        for bn in &mut self.bn {
            bn.training = training;
        }
    }

    fn params(&self) -> Vec<&Parameter> {
        let mut out = Vec::new();
        for i in 0..3 {
            out.extend(self.sage[i].params());
            out.extend(self.bn[i].params());
        }
        out.extend(self.head.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        for (s, b) in self.sage.iter_mut().zip(self.bn.iter_mut()) {
            out.extend(s.params_mut());
            out.extend(b.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }

    fn buffers(&self) -> Vec<&Array1<f64>> {
        self.bn.iter().flat_map(|b| [&b.running_mean, &b.running_var]).collect()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Array1<f64>> {
        self.bn
            .iter_mut()
            .flat_map(|b| [&mut b.running_mean, &mut b.running_var])
            .collect()
    }

    fn architecture(&self) -> Architecture {
        Architecture::Gnn(self.config)
    }
}
