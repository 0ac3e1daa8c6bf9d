use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{linear_fit, LinearFit};
use super::{train_model, GraphSamples, TrainConfig};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub faces: usize,
    pub epoch_seconds: f64,
    pub total_minutes: f64,
    pub r2_vat: f64,
    pub r2_asat: f64,
    /// `total_minutes` at the configured device power.
    pub energy_kwh: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Levels with no data.
    pub skipped: Vec<usize>,
    /// Least-squares fit of per-epoch seconds against face count.
    pub fit: Option<LinearFit>,
    pub strictly_increasing: bool,
    pub watts: Option<f64>,
}

/// Train at every decimation level and relate per-epoch time to face count.
/// `load` returns `None` for a level without meshes; that level is skipped.
pub fn timing_sweep(
    levels: &[usize],
    mut load: impl FnMut(usize) -> Result<Option<GraphSamples>>,
    cfg: &TrainConfig,
    watts: Option<f64>,
) -> Result<SweepReport> {
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &faces in levels {
        let Some(data) = load(faces)? else {
            log::warn!("sweep: no meshes at {faces} faces, skipping");
            skipped.push(faces);
            continue;
        };
        let report = train_model(&data, cfg)?;
        let n = report.folds.len() as f64;
        let epoch_seconds = report.folds.iter().map(|f| f.epoch_seconds).sum::<f64>() / n;
        let total_minutes = report.folds.iter().map(|f| f.total_minutes).sum::<f64>();
        let [r2_vat, r2_asat] = report.r2_mean();
        rows.push(SweepRow {
            faces,
            epoch_seconds,
            total_minutes,
            r2_vat,
            r2_asat,
            energy_kwh: watts.map(|w| total_minutes / 60.0 * w / 1000.0),
        });
    }
    let x: Vec<f64> = rows.iter().map(|r| r.faces as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.epoch_seconds).collect();
    let fit = linear_fit(&x, &y).ok();
    let strictly_increasing = rows.windows(2).all(|w| w[1].epoch_seconds > w[0].epoch_seconds);
    Ok(SweepReport {
        rows,
        skipped,
        fit,
        strictly_increasing,
        watts,
    })
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("faces,epoch_seconds,total_minutes,r2_vat,r2_asat,energy_kwh\n");
        for r in &self.rows {
            let energy = r.energy_kwh.map(|e| e.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{energy}",
                r.faces, r.epoch_seconds, r.total_minutes, r.r2_vat, r.r2_asat
            );
        }
        s
    }
}
