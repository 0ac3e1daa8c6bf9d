//! The pipeline commands. Every command reads its prerequisites' stage
//! records, writes its outputs under the output root and records them.

use std::collections::BTreeMap;
use std::path::Path;

use bodymesh::graph::{mesh_to_graph, ManifestEntry};
use bodymesh::nn::{load_checkpoint, save_checkpoint, GnnConfig, Model};
use bodymesh::register::{apply_transform, icp, select_reference, IcpReport, ReferenceChoice, RigidTransform};
use bodymesh::surface::{decimate, marching_cubes, read_obj, validate, write_obj};
use bodymesh::train::{
    evaluate_fold, kfold_split, mean, sample_std, timing_sweep, train_fold_model, FoldSplit, GraphSamples, ImageSamples,
    MetricsReport, Samples, SweepReport, TrainConfig,
};
use bodymesh::volume::{
    cohort_grid, generate_synthetic_body, read_volume, sample_body_spec, segment_body, silhouette, write_volume, Axis,
    Sex, SubjectLabels,
};
use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ModelKind, PipelineConfig};
use crate::error::{CliError, CliResult};
use crate::stage::{StageRecord, Workspace};

/// Extra empty voxels around the largest body of the cohort.
const GRID_MARGIN: usize = 2;

pub struct Context {
    pub config: PipelineConfig,
    pub ws: Workspace,
    pool: rayon::ThreadPool,
}

impl Context {
    /// `jobs = None` uses every available core.
    pub fn new(config: PipelineConfig, jobs: Option<usize>, force: bool) -> CliResult<Self> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(j) = jobs {
            if j == 0 {
                return Err(CliError::Config("--jobs must be at least 1".into()));
            }
            builder = builder.num_threads(j);
        }
        let pool = builder.build().map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
        let ws = Workspace {
            root: config.paths.root.clone(),
            force,
        };
        std::fs::create_dir_all(&ws.root).map_err(CliError::io(&ws.root))?;
        Ok(Context { config, ws, pool })
    }

    fn par_map<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(&T) -> CliResult<R> + Sync + Send) -> CliResult<Vec<R>> {
        self.pool.install(|| items.par_iter().map(f).collect())
    }
}

fn fingerprint(stage: &str, c: &PipelineConfig) -> serde_json::Value {
    let synth = json!({ "seed": c.seed, "cohort_size": c.cohort_size, "spacing_mm": c.spacing_mm });
    match stage {
        "synth" | "stats" => synth,
        "extract" => json!({ "synth": synth, "close_radius": c.close_radius }),
        "decimate" => json!({ "extract": fingerprint("extract", c), "levels": c.levels }),
        "register" => json!({ "decimate": fingerprint("decimate", c), "icp": c.icp }),
        other => json!({ "stage": other, "config": c }),
    }
}

fn volume_base(id: &str) -> String {
    format!("synth/volumes/{id}")
}

fn full_mesh(id: &str) -> String {
    format!("extract/meshes/{id}.obj")
}

fn decimated_mesh(level: usize, id: &str) -> String {
    format!("decimate/{level}/{id}.obj")
}

fn registered_mesh(level: usize, id: &str) -> String {
    format!("register/{level}/{id}.obj")
}

fn manifest_path(level: usize) -> String {
    format!("register/{level}/manifest.json")
}

fn require_synth(ctx: &Context) -> CliResult<(StageRecord, Vec<SubjectLabels>)> {
    let rec = ctx.ws.require("synth", "synth", &fingerprint("synth", &ctx.config))?;
    let labels = ctx.ws.read_json("synth/labels.json", "synth")?;
    Ok((rec, labels))
}

pub fn synth(ctx: &Context) -> CliResult<StageRecord> {
    let c = &ctx.config;
    let spacing = [c.spacing_mm; 3];
    let specs: Vec<_> = (0..c.cohort_size as u64).map(|i| sample_body_spec(c.seed, i)).collect();
    let dims = cohort_grid(&specs, spacing, GRID_MARGIN);
    log::info!("synth: {} subjects on a {dims:?} grid", specs.len());
    ctx.ws.create_dir("synth/volumes")?;
    let labels = ctx.par_map(&specs, |s| {
        let (v, labels) = generate_synthetic_body(s, dims, spacing)?;
        write_volume(&ctx.ws.path(&volume_base(&s.subject_id)), &v)?;
        Ok(labels)
    })?;
    ctx.ws.write_json("synth/labels.json", &labels)?;
    let mut outputs = vec!["synth/labels.json".to_string()];
    for l in &labels {
        let base = volume_base(&l.subject_id);
        outputs.push(format!("{base}.volhdr"));
        outputs.push(format!("{base}.volraw"));
    }
    ctx.ws.record("synth", c, fingerprint("synth", c), &[], outputs)
}

pub fn extract(ctx: &Context) -> CliResult<StageRecord> {
    let c = &ctx.config;
    let (up, labels) = require_synth(ctx)?;
    ctx.ws.create_dir("extract/meshes")?;
    let faces = ctx.par_map(&labels, |l| {
        let v = read_volume(&ctx.ws.path(&volume_base(&l.subject_id)))?;
        let mesh = marching_cubes(&segment_body(&v, c.close_radius), 0.5)?;
        let stats = validate(&mesh);
        if !stats.watertight {
            return Err(bodymesh::Error::NotWatertight {
                boundary_edges: stats.boundary_edges,
                nonmanifold_edges: stats.nonmanifold_edges,
            }
            .into());
        }
        write_obj(&ctx.ws.path(&full_mesh(&l.subject_id)), &mesh)?;
        Ok(mesh.faces.len())
    })?;
    log::info!(
        "extract: {} meshes, {}..{} faces",
        faces.len(),
        faces.iter().min().unwrap_or(&0),
        faces.iter().max().unwrap_or(&0)
    );
    let outputs = labels.iter().map(|l| full_mesh(&l.subject_id));
    ctx.ws.record("extract", c, fingerprint("extract", c), &[("synth", &up)], outputs)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecimationNote {
    pub subject_id: String,
    pub level: usize,
    pub faces: usize,
    pub target_reached: bool,
}

pub fn decimate_cmd(ctx: &Context) -> CliResult<StageRecord> {
    let c = &ctx.config;
    let (synth_rec, labels) = require_synth(ctx)?;
    let up = ctx.ws.require("extract", "extract", &fingerprint("extract", c))?;
    for &level in &c.levels {
        ctx.ws.create_dir(&format!("decimate/{level}"))?;
    }
    // Each level is decimated from the next finer one.
    let notes = ctx.par_map(&labels, |l| {
        let mut mesh = read_obj(&ctx.ws.path(&full_mesh(&l.subject_id)))?;
        let mut notes = Vec::new();
        for &level in c.levels.iter().rev() {
            let d = decimate(&mesh, level)?;
            mesh = d.mesh;
            write_obj(&ctx.ws.path(&decimated_mesh(level, &l.subject_id)), &mesh)?;
            notes.push(DecimationNote {
                subject_id: l.subject_id.clone(),
                level,
                faces: mesh.faces.len(),
                target_reached: d.target_reached,
            });
        }
        Ok(notes)
    })?;
    let notes: Vec<DecimationNote> = notes.into_iter().flatten().collect();
    let missed = notes.iter().filter(|n| !n.target_reached).count();
    if missed > 0 {
        log::warn!("decimate: {missed} meshes stopped above their face budget");
    }
    ctx.ws.write_json("decimate/report.json", &notes)?;
    let mut outputs = vec!["decimate/report.json".to_string()];
    for &level in &c.levels {
        outputs.extend(labels.iter().map(|l| decimated_mesh(level, &l.subject_id)));
    }
    ctx.ws.record("decimate", c, fingerprint("decimate", c), &[("synth", &synth_rec), ("extract", &up)], outputs)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Registration {
    pub transform: RigidTransform,
    pub iterations: usize,
    pub rmsd: f64,
    pub converged: bool,
}

impl From<&IcpReport> for Registration {
    fn from(r: &IcpReport) -> Self {
        Registration {
            transform: r.transform,
            iterations: r.iterations,
            rmsd: r.rmsd,
            converged: r.converged,
        }
    }
}

pub fn register(ctx: &Context) -> CliResult<StageRecord> {
    let c = &ctx.config;
    let (synth_rec, labels) = require_synth(ctx)?;
    let up = ctx.ws.require("decimate", "decimate", &fingerprint("decimate", c))?;
    let reference: ReferenceChoice = select_reference(&labels)?;
    log::info!("register: reference subject {}", reference.subject_id);
    ctx.ws.write_json("register/reference.json", &reference)?;
    let mut outputs = vec!["register/reference.json".to_string()];
    for &level in &c.levels {
        let target = read_obj(&ctx.ws.path(&decimated_mesh(level, &reference.subject_id)))?;
        ctx.ws.create_dir(&format!("register/{level}"))?;
        let results = ctx.par_map(&labels, |l| {
            let mesh = read_obj(&ctx.ws.path(&decimated_mesh(level, &l.subject_id)))?;
            let report = icp(&mesh, &target, c.icp.max_iters, c.icp.tol)?;
            write_obj(&ctx.ws.path(&registered_mesh(level, &l.subject_id)), &apply_transform(&mesh, &report.transform))?;
            Ok(Registration::from(&report))
        })?;
        let unconverged = results.iter().filter(|r| !r.converged).count();
        if unconverged > 0 {
            log::warn!("register: {unconverged} subjects at {level} faces hit the iteration cap");
        }
        let transforms: BTreeMap<&str, &Registration> =
            labels.iter().map(|l| l.subject_id.as_str()).zip(&results).collect();
        ctx.ws.write_json(&format!("register/{level}/transforms.json"), &transforms)?;
        let manifest: Vec<ManifestEntry> = labels
            .iter()
            .map(|l| ManifestEntry {
                subject_id: l.subject_id.clone(),
                mesh_path: registered_mesh(level, &l.subject_id),
                vat_mm3: l.vat_mm3,
                asat_mm3: l.asat_mm3,
                sex_tag: l.sex,
                height: l.height_mm,
                weight: l.weight_kg,
                age: l.age_years,
                decimation: Some(level),
            })
            .collect();
        ctx.ws.write_json(&manifest_path(level), &manifest)?;
        outputs.push(format!("register/{level}/transforms.json"));
        outputs.push(manifest_path(level));
        outputs.extend(labels.iter().map(|l| registered_mesh(level, &l.subject_id)));
    }
    ctx.ws.record("register", c, fingerprint("register", c), &[("synth", &synth_rec), ("decimate", &up)], outputs)
}

/// Graph samples from the registered meshes of one level; `limit` keeps the
/// first subjects of the manifest.
pub fn load_graphs(ctx: &Context, level: usize, limit: Option<usize>) -> CliResult<GraphSamples> {
    let mut manifest: Vec<ManifestEntry> = ctx.ws.read_json(&manifest_path(level), "register")?;
    if let Some(n) = limit {
        manifest.truncate(n);
    }
    let graphs = ctx.par_map(&manifest, |e| {
        let mesh = read_obj(&ctx.ws.path(&e.mesh_path))?;
        Ok(mesh_to_graph(&mesh, &e.labels())?)
    })?;
    Ok(GraphSamples {
        graphs,
        model: GnnConfig {
            hidden: ctx.config.gnn_hidden,
            seed: 0,
        },
        decimation: Some(level),
    })
}

/// Coronal and sagittal silhouettes, resampled to the CNN input size.
pub fn silhouette_image(v: &bodymesh::volume::VoxelVolume, input: [usize; 2]) -> Array3<f64> {
    let [h, w] = input;
    let mut out = Array3::zeros((2, h, w));
    for (ch, axis) in [Axis::Coronal, Axis::Sagittal].into_iter().enumerate() {
        let pixels = silhouette(v, axis).resample(w, h);
        for (i, p) in pixels.into_iter().enumerate() {
            out[[ch, i / w, i % w]] = p;
        }
    }
    out
}

pub fn load_images(ctx: &Context, labels: &[SubjectLabels]) -> CliResult<ImageSamples> {
    let model = ctx.config.cnn.model();
    let images = ctx.par_map(labels, |l| {
        let v = read_volume(&ctx.ws.path(&volume_base(&l.subject_id)))?;
        Ok(silhouette_image(&v, model.input))
    })?;
    Ok(ImageSamples::new(
        images,
        labels.iter().map(|l| [l.vat_mm3, l.asat_mm3]).collect(),
        labels.iter().map(|l| l.sex).collect(),
        labels.iter().map(|l| l.subject_id.clone()).collect(),
        model,
    )?)
}

/// Directory name of a training run.
pub fn run_tag(c: &PipelineConfig) -> String {
    match c.model {
        ModelKind::Gnn => format!("gnn-{}", c.train_level),
        ModelKind::Cnn => "cnn".to_string(),
    }
}

fn train_samples<S: Samples>(
    ctx: &Context,
    data: &S,
    cfg: &TrainConfig,
    dir: &str,
) -> CliResult<(MetricsReport, FoldSplit, Vec<String>)> {
    let split = kfold_split(data.len(), cfg.k, cfg.seed)?;
    let n_folds = cfg.max_folds.unwrap_or(cfg.k).min(cfg.k);
    let mut folds = Vec::with_capacity(n_folds);
    let mut outputs = Vec::new();
    for (i, fold) in split.folds.iter().take(n_folds).enumerate() {
        let (report, model) = train_fold_model(data, fold, i, cfg)?;
        log::info!(
            "{} fold {i}: R² VAT {:.4} ASAT {:.4} ({:.3} s/epoch)",
            data.kind(),
            report.r2[0],
            report.r2[1],
            report.epoch_seconds
        );
        let base = format!("{dir}/fold{i}");
        save_checkpoint(&model, &ctx.ws.path(&base))?;
        outputs.push(format!("{base}.json"));
        outputs.push(format!("{base}.bin"));
        folds.push(report);
    }
    let report = MetricsReport::new(data.kind(), data.decimation(), split.k, cfg, folds);
    Ok((report, split, outputs))
}

pub fn train(ctx: &Context) -> CliResult<MetricsReport> {
    let c = &ctx.config;
    let dir = format!("train/{}", run_tag(c));
    ctx.ws.create_dir(&dir)?;
    let cfg = c.train_config(c.model);
    let (synth_rec, labels) = require_synth(ctx)?;
    let (report, split, mut outputs, upstream) = match c.model {
        ModelKind::Gnn => {
            let up = ctx.ws.require("register", "register", &fingerprint("register", c))?;
            let data = load_graphs(ctx, c.train_level, None)?;
            let (r, s, o) = train_samples(ctx, &data, &cfg, &dir)?;
            (r, s, o, up)
        }
        ModelKind::Cnn => {
            let data = load_images(ctx, &labels)?;
            let (r, s, o) = train_samples(ctx, &data, &cfg, &dir)?;
            (r, s, o, synth_rec.clone())
        }
    };
    for (name, body) in [
        ("metrics.json", serde_json::to_string_pretty(&report).map_err(|e| CliError::Core(e.into()))? + "\n"),
        ("metrics.csv", report.to_csv()),
        ("split.json", serde_json::to_string_pretty(&split).map_err(|e| CliError::Core(e.into()))? + "\n"),
    ] {
        let rel = format!("{dir}/{name}");
        ctx.ws.write(&rel, body)?;
        outputs.push(rel);
    }
    let up_name = match c.model {
        ModelKind::Gnn => "register",
        ModelKind::Cnn => "synth",
    };
    ctx.ws.record(&dir, c, fingerprint(&dir, c), &[(up_name, &upstream)], outputs)?;
    Ok(report)
}

fn eval_samples<S: Samples>(ctx: &Context, data: &S, dir: &str, mut report: MetricsReport) -> CliResult<MetricsReport> {
    let split: FoldSplit = ctx.ws.read_json(&format!("{dir}/split.json"), "train")?;
    for f in &mut report.folds {
        let (meta, state) = load_checkpoint(&ctx.ws.path(&format!("{dir}/fold{}", f.fold)))?;
        let mut model = data.build_model(0)?;
        if unseeded(meta.architecture) != unseeded(model.architecture()) {
            return Err(CliError::Stale {
                command: "train",
                path: ctx.ws.path(&format!("{dir}/fold{}.json", f.fold)),
            });
        }
        model.load_state(&state)?;
        let eval = evaluate_fold(data, &split.folds[f.fold], f.fold, &mut model, report.config.batch_size)?;
        f.r2 = eval.r2;
        f.r2_female = eval.r2_female;
        f.r2_male = eval.r2_male;
        f.predictions = eval.predictions;
    }
    Ok(MetricsReport::new(&report.model, report.decimation, report.k, &report.config, report.folds))
}

/// Architecture with the initialisation seed cleared.
fn unseeded(a: bodymesh::nn::Architecture) -> bodymesh::nn::Architecture {
    use bodymesh::nn::Architecture;
    match a {
        Architecture::Gnn(g) => Architecture::Gnn(GnnConfig { seed: 0, ..g }),
        Architecture::Cnn(c) => Architecture::Cnn(bodymesh::nn::CnnConfig { seed: 0, ..c }),
    }
}

/// Re-evaluate the saved per-fold checkpoints on their test blocks.
pub fn eval(ctx: &Context) -> CliResult<MetricsReport> {
    let c = &ctx.config;
    let tag = run_tag(c);
    let train_dir = format!("train/{tag}");
    let train_rec = ctx.ws.require("train", &train_dir, &fingerprint(&train_dir, c))?;
    let trained: MetricsReport = ctx.ws.read_json(&format!("{train_dir}/metrics.json"), "train")?;
    let report = match c.model {
        ModelKind::Gnn => {
            ctx.ws.require("register", "register", &fingerprint("register", c))?;
            eval_samples(ctx, &load_graphs(ctx, c.train_level, None)?, &train_dir, trained)?
        }
        ModelKind::Cnn => {
            let (_, labels) = require_synth(ctx)?;
            eval_samples(ctx, &load_images(ctx, &labels)?, &train_dir, trained)?
        }
    };
    let dir = format!("eval/{tag}");
    ctx.ws.write_json(&format!("{dir}/metrics.json"), &report)?;
    ctx.ws.write(&format!("{dir}/metrics.csv"), report.to_csv())?;
    ctx.ws.record(
        &dir,
        c,
        fingerprint(&dir, c),
        &[("train", &train_rec)],
        [format!("{dir}/metrics.json"), format!("{dir}/metrics.csv")],
    )?;
    Ok(report)
}

pub fn sweep(ctx: &Context) -> CliResult<SweepReport> {
    let c = &ctx.config;
    let up = ctx.ws.require("register", "register", &fingerprint("register", c))?;
    let cfg = c.sweep_train_config();
    let report = timing_sweep(
        &c.sweep_levels(),
        |level| {
            if !ctx.ws.path(&manifest_path(level)).exists() {
                return Ok(None);
            }
            load_graphs(ctx, level, c.sweep.subjects).map(Some).map_err(|e| match e {
                CliError::Core(e) => e,
                other => bodymesh::Error::InvalidInput(other.to_string()),
            })
        },
        &cfg,
        c.device_watts,
    )?;
    if let Some(fit) = &report.fit {
        log::info!(
            "sweep: {:.3e} s per face per epoch + {:.3} s, fit R² {:.4}",
            fit.slope,
            fit.intercept,
            fit.r2
        );
    }
    ctx.ws.write_json("sweep/sweep.json", &report)?;
    ctx.ws.write("sweep/sweep.csv", report.to_csv())?;
    ctx.ws.record(
        "sweep",
        c,
        fingerprint("sweep", c),
        &[("register", &up)],
        ["sweep/sweep.json".to_string(), "sweep/sweep.csv".to_string()],
    )?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub tissue: String,
    pub sex: Sex,
    pub n: usize,
    pub mean_mm3: Option<f64>,
    pub std_mm3: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub tissue: String,
    pub sex: Sex,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Per-sex histograms of both labels over a shared set of bins.
pub fn histograms(labels: &[SubjectLabels], bins: usize) -> (Vec<HistogramBin>, Vec<GroupSummary>) {
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (tissue, get) in [
        ("VAT", (|l: &SubjectLabels| l.vat_mm3) as fn(&SubjectLabels) -> f64),
        ("ASAT", |l: &SubjectLabels| l.asat_mm3),
    ] {
        let all: Vec<f64> = labels.iter().map(get).collect();
        let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        for sex in [Sex::F, Sex::M] {
            let values: Vec<f64> = labels.iter().filter(|l| l.sex == sex).map(get).collect();
            let mut counts = vec![0usize; bins];
            for v in &values {
                let b = (((v - lo) / width) as usize).min(bins - 1);
                counts[b] += 1;
            }
            for (b, count) in counts.into_iter().enumerate() {
                rows.push(HistogramBin {
                    tissue: tissue.into(),
                    sex,
                    lo: lo + b as f64 * width,
                    hi: lo + (b + 1) as f64 * width,
                    count,
                });
            }
            summary.push(GroupSummary {
                tissue: tissue.into(),
                sex,
                n: values.len(),
                mean_mm3: mean(&values),
                std_mm3: sample_std(&values),
            });
        }
    }
    (rows, summary)
}

pub fn stats(ctx: &Context) -> CliResult<Vec<GroupSummary>> {
    let c = &ctx.config;
    let (up, labels) = require_synth(ctx)?;
    let (rows, summary) = histograms(&labels, c.stats.bins);
    let mut csv = String::from("tissue,sex,bin_lo_mm3,bin_hi_mm3,count\n");
    for r in &rows {
        csv += &format!("{},{},{},{},{}\n", r.tissue, r.sex, r.lo, r.hi, r.count);
    }
    ctx.ws.write("stats/histograms.csv", csv)?;
    ctx.ws.write_json("stats/summary.json", &summary)?;
    ctx.ws.record(
        "stats",
        c,
        fingerprint("stats", c),
        &[("synth", &up)],
        ["stats/histograms.csv".to_string(), "stats/summary.json".to_string()],
    )?;
    Ok(summary)
}

/// Run every stage in order.
pub fn run_all(ctx: &Context) -> CliResult<()> {
    synth(ctx)?;
    extract(ctx)?;
    decimate_cmd(ctx)?;
    register(ctx)?;
    train(ctx)?;
    eval(ctx)?;
    stats(ctx)?;
    Ok(())
}

pub fn exists(root: &Path, rel: &str) -> bool {
    root.join(rel).exists()
}
