//! Meshes as graphs: node coordinates, undirected edges, per-graph targets.

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::surface::TriangleMesh;
use crate::volume::{Sex, SubjectLabels};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionGraph {
    /// N×3 node coordinates.
    pub x: Array2<f64>,
    /// Undirected edges `(lo, hi)`, `lo < hi`, sorted and unique.
    pub edges: Vec<[u32; 2]>,
    /// `[vat_mm3, asat_mm3]`.
    pub y: [f64; 2],
    pub subject_id: String,
    pub sex: Sex,
}

impl RegressionGraph {
    pub fn new(x: Array2<f64>, edges: Vec<[u32; 2]>, y: [f64; 2], subject_id: String, sex: Sex) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::InvalidInput(format!("{subject_id}: graph has no nodes")));
        }
        if x.ncols() != 3 {
            return Err(Error::InvalidInput(format!("{subject_id}: node features must be N×3")));
        }
        if y.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(format!("{subject_id}: targets must be finite and non-negative")));
        }
        for w in edges.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::InvalidInput(format!("{subject_id}: edges must be sorted and unique")));
            }
        }
        for &[a, b] in &edges {
            if a >= b || b as usize >= n {
                return Err(Error::InvalidInput(format!(
                    "{subject_id}: edge ({a}, {b}) is a self-loop, unordered or out of range"
                )));
            }
        }
        Ok(RegressionGraph { x, edges, y, subject_id, sex })
    }

    pub fn num_nodes(&self) -> usize {
        self.x.nrows()
    }
}

pub fn mesh_to_graph(m: &TriangleMesh, labels: &SubjectLabels) -> Result<RegressionGraph> {
    if m.is_empty() {
        return Err(Error::InvalidInput(format!("{}: empty mesh", labels.subject_id)));
    }
    let mut x = Array2::zeros((m.vertices.len(), 3));
    for (mut row, v) in x.rows_mut().into_iter().zip(&m.vertices) {
        row.assign(&ndarray::arr1(v));
    }
    RegressionGraph::new(
        x,
        m.edges(),
        [labels.vat_mm3, labels.asat_mm3],
        labels.subject_id.clone(),
        labels.sex,
    )
}

/// Several graphs as one disconnected graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub x: Array2<f64>,
    pub edges: Vec<[u32; 2]>,
    /// Graph index of every node; non-decreasing.
    pub graph_id: Vec<u32>,
    /// Node range of graph `g` is `offsets[g]..offsets[g + 1]`.
    pub offsets: Vec<usize>,
    /// B×2 targets.
    pub y: Array2<f64>,
    pub subject_ids: Vec<String>,
    pub sexes: Vec<Sex>,
    edge_offsets: Vec<usize>,
}

pub fn batch<'a>(graphs: impl IntoIterator<Item = &'a RegressionGraph>) -> Result<GraphBatch> {
    let graphs: Vec<&RegressionGraph> = graphs.into_iter().collect();
    if graphs.is_empty() {
        return Err(Error::InvalidInput("cannot batch an empty list of graphs".into()));
    }
    let n: usize = graphs.iter().map(|g| g.num_nodes()).sum();
    let e: usize = graphs.iter().map(|g| g.edges.len()).sum();
    let mut x = Array2::zeros((n, 3));
    let mut edges = Vec::with_capacity(e);
    let mut graph_id = Vec::with_capacity(n);
    let mut offsets = vec![0];
    let mut edge_offsets = vec![0];
    let mut y = Array2::zeros((graphs.len(), 2));
    for (gi, g) in graphs.iter().enumerate() {
        let start = *offsets.last().unwrap();
        let end = start + g.num_nodes();
        x.slice_mut(s![start..end, ..]).assign(&g.x);
        let shift = start as u32;
        edges.extend(g.edges.iter().map(|&[a, b]| [a + shift, b + shift]));
        graph_id.extend(std::iter::repeat_n(gi as u32, g.num_nodes()));
        offsets.push(end);
        edge_offsets.push(edges.len());
        y[[gi, 0]] = g.y[0];
        y[[gi, 1]] = g.y[1];
    }
    Ok(GraphBatch {
        x,
        edges,
        graph_id,
        offsets,
        y,
        subject_ids: graphs.iter().map(|g| g.subject_id.clone()).collect(),
        sexes: graphs.iter().map(|g| g.sex).collect(),
        edge_offsets,
    })
}

impl GraphBatch {
    pub fn num_graphs(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.x.nrows()
    }

    pub fn adjacency(&self) -> Adjacency {
        Adjacency::from_edges(self.num_nodes(), &self.edges)
    }

    pub fn unbatch(&self) -> Vec<RegressionGraph> {
        (0..self.num_graphs())
            .map(|g| {
                let (start, end) = (self.offsets[g], self.offsets[g + 1]);
                let shift = start as u32;
                RegressionGraph {
                    x: self.x.slice(s![start..end, ..]).to_owned(),
                    edges: self.edges[self.edge_offsets[g]..self.edge_offsets[g + 1]]
                        .iter()
                        .map(|&[a, b]| [a - shift, b - shift])
                        .collect(),
                    y: [self.y[[g, 0]], self.y[[g, 1]]],
                    subject_id: self.subject_ids[g].clone(),
                    sex: self.sexes[g],
                }
            })
            .collect()
    }
}

/// Compressed neighbour lists of an undirected graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    neighbours: Vec<u32>,
}

impl Adjacency {
    pub fn from_edges(n: usize, edges: &[[u32; 2]]) -> Self {
        let mut degree = vec![0usize; n];
        for &[a, b] in edges {
            degree[a as usize] += 1;
            degree[b as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n].to_vec();
        let mut neighbours = vec![0u32; offsets[n]];
        for &[a, b] in edges {
            neighbours[fill[a as usize]] = b;
            fill[a as usize] += 1;
            neighbours[fill[b as usize]] = a;
            fill[b as usize] += 1;
        }
        for v in 0..n {
            neighbours[offsets[v]..offsets[v + 1]].sort_unstable();
        }
        Adjacency { offsets, neighbours }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbours(&self, v: usize) -> &[u32] {
        &self.neighbours[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }
}

/// Per-axis standardisation of node coordinates, fitted on training graphs
/// only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordScaler {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl CoordScaler {
    pub fn fit<'a>(graphs: impl IntoIterator<Item = &'a RegressionGraph>) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = [0.0; 3];
        let mut sq = [0.0; 3];
        let graphs: Vec<_> = graphs.into_iter().collect();
        for g in &graphs {
            for row in g.x.rows() {
                for i in 0..3 {
                    sum[i] += row[i];
                }
            }
            n += g.num_nodes();
        }
        if n == 0 {
            return Err(Error::InvalidInput("no nodes to fit coordinate scaling".into()));
        }
        let mean = sum.map(|s| s / n as f64);
        for g in &graphs {
            for row in g.x.rows() {
                for i in 0..3 {
                    sq[i] += (row[i] - mean[i]).powi(2);
                }
            }
        }
        let std = sq.map(|s| {
            let sd = (s / n as f64).sqrt();
            if sd > 0.0 { sd } else { 1.0 }
        });
        Ok(CoordScaler { mean, std })
    }

    pub fn transform(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for (i, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| (v - self.mean[i]) / self.std[i]);
        }
        out
    }
}

/// One line of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub mesh_path: String,
    pub vat_mm3: f64,
    pub asat_mm3: f64,
    pub sex_tag: Sex,
    pub height: f64,
    pub weight: f64,
    pub age: f64,
    /// Face budget, or `None` for the full-resolution mesh.
    pub decimation: Option<usize>,
}

impl ManifestEntry {
    pub fn labels(&self) -> SubjectLabels {
        SubjectLabels {
            subject_id: self.subject_id.clone(),
            vat_mm3: self.vat_mm3,
            asat_mm3: self.asat_mm3,
            sex: self.sex_tag,
            height_mm: self.height,
            weight_kg: self.weight,
            age_years: self.age,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{decimate, shapes};
    use proptest::prelude::*;

    fn labels(id: &str) -> SubjectLabels {
        SubjectLabels {
            subject_id: id.into(),
            vat_mm3: 1.0,
            asat_mm3: 2.0,
            sex: Sex::M,
            height_mm: 1700.0,
            weight_kg: 70.0,
            age_years: 60.0,
        }
    }

    #[test]
    fn tetrahedron_graph() {
        let g = mesh_to_graph(&shapes::tetrahedron(), &labels("t")).unwrap();
        assert_eq!(g.num_nodes(), 4);
        assert_eq!(g.edges.len(), 6);
        assert_eq!(g.y, [1.0, 2.0]);
    }

    #[test]
    fn thousand_face_sphere_graph() {
        let m = decimate(&shapes::icosphere(50.0, 4), 1000).unwrap().mesh;
        let g = mesh_to_graph(&m, &labels("s")).unwrap();
        assert_eq!(g.num_nodes(), 502);
        assert_eq!(g.edges.len(), 1500);
    }

    #[test]
    fn shared_edges_appear_once() {
        let m = TriangleMesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]], vec![[0, 1, 2], [2, 1, 3]])
            .unwrap();
        let g = mesh_to_graph(&m, &labels("q")).unwrap();
        assert_eq!(g.edges, vec![[0, 1], [0, 2], [1, 2], [1, 3], [2, 3]]);
    }

    #[test]
    fn rejects_bad_graphs() {
        let x = Array2::zeros((2, 3));
        assert!(RegressionGraph::new(x.clone(), vec![[0, 0]], [0.0; 2], "a".into(), Sex::F).is_err());
        assert!(RegressionGraph::new(x.clone(), vec![[0, 2]], [0.0; 2], "a".into(), Sex::F).is_err());
        assert!(RegressionGraph::new(x.clone(), vec![[0, 1], [0, 1]], [0.0; 2], "a".into(), Sex::F).is_err());
        assert!(RegressionGraph::new(x.clone(), vec![], [-1.0, 0.0], "a".into(), Sex::F).is_err());
        assert!(RegressionGraph::new(x, vec![], [f64::NAN, 0.0], "a".into(), Sex::F).is_err());
        let empty = TriangleMesh { vertices: vec![], faces: vec![] };
        assert!(mesh_to_graph(&empty, &labels("e")).is_err());
    }

    #[test]
    fn batching_two_tetrahedra() {
        let g = mesh_to_graph(&shapes::tetrahedron(), &labels("t")).unwrap();
        let b = batch([&g, &g]).unwrap();
        assert_eq!(b.num_nodes(), 8);
        assert_eq!(b.graph_id, vec![0, 0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(b.edges[6], [g.edges[0][0] + 4, g.edges[0][1] + 4]);
        assert_eq!(b.y.shape(), &[2, 2]);
        let single = batch([&g]).unwrap();
        assert!(single.graph_id.iter().all(|&i| i == 0));
        assert!(batch(std::iter::empty()).is_err());
    }

    #[test]
    fn adjacency_lists() {
        let a = Adjacency::from_edges(4, &[[0, 1], [0, 2], [2, 3]]);
        assert_eq!(a.neighbours(0), &[1, 2]);
        assert_eq!(a.neighbours(2), &[0, 3]);
        assert_eq!(a.degree(3), 1);
        assert_eq!(Adjacency::from_edges(2, &[]).degree(1), 0);
    }

    #[test]
    fn scaler_standardises_training_nodes() {
        let g = mesh_to_graph(&shapes::icosphere(10.0, 2), &labels("s")).unwrap();
        let sc = CoordScaler::fit([&g]).unwrap();
        let z = sc.transform(&g.x);
        for col in z.columns() {
            let m = col.mean().unwrap();
            let v = col.mapv(|v| (v - m).powi(2)).mean().unwrap();
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
    }

    fn arb_graph() -> impl Strategy<Value = RegressionGraph> {
        (1usize..12).prop_flat_map(|n| {
            (
                prop::collection::vec(-100.0f64..100.0, n * 3),
                prop::collection::btree_set((0..n as u32, 0..n as u32), 0..20),
                prop::array::uniform2(0.0f64..1e6),
                any::<bool>(),
            )
                .prop_map(move |(xs, pairs, y, male)| {
                    let mut edges: Vec<[u32; 2]> = pairs
                        .into_iter()
                        .filter(|(a, b)| a != b)
                        .map(|(a, b)| [a.min(b), a.max(b)])
                        .collect();
                    edges.sort_unstable();
                    edges.dedup();
                    let x = Array2::from_shape_vec((n, 3), xs).unwrap();
                    let sex = if male { Sex::M } else { Sex::F };
                    RegressionGraph::new(x, edges, y, format!("g{n}"), sex).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn batch_round_trips(gs in prop::collection::vec(arb_graph(), 1..17)) {
            let b = batch(&gs).unwrap();
            prop_assert!(b.graph_id.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(b.unbatch(), gs);
        }
    }
}
