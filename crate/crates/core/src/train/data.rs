use ndarray::{Array3, Array4, Axis};

use crate::graph::{batch, CoordScaler, GraphBatch, RegressionGraph};
use crate::nn::{CnnConfig, CnnModel, GnnConfig, GnnModel, Model};
use crate::volume::Sex;
use crate::{Error, Result};

/// A labelled dataset the trainer can draw mini-batches from.
pub trait Samples {
    type Model: Model<Input = Self::Input>;
    type Input;
    /// Input normalisation fitted on a training fold.
    type Norm;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn id(&self, i: usize) -> &str;

    fn target(&self, i: usize) -> [f64; 2];

    fn sex(&self, i: usize) -> Sex;

    fn fit_norm(&self, train: &[usize]) -> Result<Self::Norm>;

    fn input(&self, idx: &[usize], norm: &Self::Norm) -> Result<Self::Input>;

    fn build_model(&self, seed: u64) -> Result<Self::Model>;

    fn kind(&self) -> &'static str;

    /// Face budget of the meshes, if the samples are meshes.
    fn decimation(&self) -> Option<usize> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct GraphSamples {
    pub graphs: Vec<RegressionGraph>,
    pub model: GnnConfig,
    pub decimation: Option<usize>,
}

impl Samples for GraphSamples {
    type Model = GnnModel;
    type Input = GraphBatch;
    type Norm = CoordScaler;

    fn len(&self) -> usize {
        self.graphs.len()
    }

    fn id(&self, i: usize) -> &str {
        &self.graphs[i].subject_id
    }

    fn target(&self, i: usize) -> [f64; 2] {
        self.graphs[i].y
    }

    fn sex(&self, i: usize) -> Sex {
        self.graphs[i].sex
    }

    fn fit_norm(&self, train: &[usize]) -> Result<CoordScaler> {
        CoordScaler::fit(train.iter().map(|&i| &self.graphs[i]))
    }

    fn input(&self, idx: &[usize], norm: &CoordScaler) -> Result<GraphBatch> {
        let scaled: Vec<RegressionGraph> = idx
            .iter()
            .map(|&i| {
                let g = &self.graphs[i];
                RegressionGraph {
                    x: norm.transform(&g.x),
                    ..g.clone()
                }
            })
            .collect();
        batch(&scaled)
    }

    fn build_model(&self, seed: u64) -> Result<GnnModel> {
        Ok(GnnModel::new(GnnConfig { seed, ..self.model }))
    }

    fn kind(&self) -> &'static str {
        "gnn"
    }

    fn decimation(&self) -> Option<usize> {
        self.decimation
    }
}

/// Per-subject C×H×W silhouette stacks (coronal and sagittal channels).
#[derive(Debug, Clone)]
pub struct ImageSamples {
    pub images: Vec<Array3<f64>>,
    pub targets: Vec<[f64; 2]>,
    pub sexes: Vec<Sex>,
    pub ids: Vec<String>,
    pub model: CnnConfig,
}

impl ImageSamples {
    pub fn new(images: Vec<Array3<f64>>, targets: Vec<[f64; 2]>, sexes: Vec<Sex>, ids: Vec<String>, model: CnnConfig) -> Result<Self> {
        let n = images.len();
        if targets.len() != n || sexes.len() != n || ids.len() != n {
            return Err(Error::InvalidInput("image samples: column lengths differ".into()));
        }
        let want = (model.in_channels, model.input[0], model.input[1]);
        if let Some(bad) = images.iter().find(|im| im.dim() != want) {
            return Err(Error::ShapeMismatch {
                layer: "cnn",
                expected: format!("{want:?}"),
                got: format!("{:?}", bad.shape()),
            });
        }
        Ok(ImageSamples { images, targets, sexes, ids, model })
    }
}

impl Samples for ImageSamples {
    type Model = CnnModel;
    type Input = Array4<f64>;
    type Norm = ();

    fn len(&self) -> usize {
        self.images.len()
    }

    fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    fn target(&self, i: usize) -> [f64; 2] {
        self.targets[i]
    }

    fn sex(&self, i: usize) -> Sex {
        self.sexes[i]
    }

    fn fit_norm(&self, _train: &[usize]) -> Result<()> {
        Ok(())
    }

    fn input(&self, idx: &[usize], _norm: &()) -> Result<Array4<f64>> {
        let views: Vec<_> = idx.iter().map(|&i| self.images[i].view()).collect();
        ndarray::stack(Axis(0), &views).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    fn build_model(&self, seed: u64) -> Result<CnnModel> {
        CnnModel::new(CnnConfig { seed, ..self.model })
    }

    fn kind(&self) -> &'static str {
        "cnn"
    }
}
