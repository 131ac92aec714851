//! Distance calibration: how learned distances track true path length.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::svg::scatter_svg;
use crate::buffer::TrajectoryLog;
use crate::embed::{AuxHeads, EmbeddingIndex};
use crate::env::oracle::GeodesicTable;
use crate::env::{Cell, Environment, GridEnv};
use crate::error::Result;
use crate::per::{segment_len_metric, PerConfig};
use crate::qlearn::{d_q, QFunction};
use crate::util::{l2, mean, spearman, std_dev};

/// One evaluated pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub bfs: usize,
    pub d_phi: f64,
    pub d_q: f64,
    pub max_q: f64,
    /// `+∞` when retrieval finds nothing.
    pub per_len: f64,
    pub t_mode: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub bfs: usize,
    pub count: usize,
    pub d_phi_mean: f64,
    pub d_phi_std: f64,
    pub d_q_mean: f64,
    pub d_q_std: f64,
    /// Over pairs where retrieval succeeded.
    pub per_len_mean: f64,
    pub per_len_std: f64,
    pub per_found: usize,
    pub t_mode_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub samples: Vec<CalibrationSample>,
    pub rows: Vec<CalibrationRow>,
}

/// The models whose distances are calibrated.
pub struct CalibrationInputs<'a> {
    pub q: &'a dyn QFunction,
    pub index: &'a EmbeddingIndex,
    pub heads: Option<&'a AuxHeads>,
    pub log: &'a TrajectoryLog,
    pub per: &'a PerConfig,
}

/// All ordered free-cell pairs grouped by true distance `0..=max_bfs`.
pub fn pairs_by_distance(env: &GridEnv, table: &GeodesicTable, max_bfs: usize) -> Vec<Vec<(Cell, Cell)>> {
    let mut bins = vec![Vec::new(); max_bfs + 1];
    let free = env.maze.free_cells();
    for &a in free {
        for &b in free {
            if let Some(d) = table.distance(a, b) {
                if d <= max_bfs {
                    bins[d].push((a, b));
                }
            }
        }
    }
    bins
}

/// Samples up to `pairs_per_bin` pairs per true-distance bin and records
/// every learned distance for each.
pub fn distance_calibration_report(
    env: &GridEnv,
    table: &GeodesicTable,
    models: &CalibrationInputs<'_>,
    max_bfs: usize,
    pairs_per_bin: usize,
    rng: &mut ChaCha8Rng,
) -> CalibrationReport {
    let mut samples = Vec::new();
    let mut rows = Vec::new();
    for (bfs, bin) in pairs_by_distance(env, table, max_bfs).into_iter().enumerate() {
        let take = pairs_per_bin.min(bin.len());
        let mut picked: Vec<usize> = sample(rng, bin.len(), take).into_vec();
        picked.sort_unstable();
        let bin_samples: Vec<CalibrationSample> = picked
            .into_iter()
            .map(|k| {
                let (a, b) = bin[k];
                let (oa, ob) = (env.observe(&a), env.observe(&b));
                let (za, zb) = (models.index.embed(oa.as_slice()), models.index.embed(ob.as_slice()));
                CalibrationSample {
                    bfs,
                    d_phi: l2(&za, &zb),
                    d_q: d_q(models.q, oa.as_slice(), ob.as_slice()),
                    max_q: models
                        .q
                        .q_values(oa.as_slice(), ob.as_slice())
                        .into_iter()
                        .fold(f64::NEG_INFINITY, f64::max),
                    per_len: segment_len_metric(models.index, models.log, oa.as_slice(), ob.as_slice(), models.per),
                    t_mode: models.heads.map(|h| h.time_mode(&za, &zb)),
                }
            })
            .collect();
        rows.push(summarize(bfs, &bin_samples));
        samples.extend(bin_samples);
    }
    CalibrationReport { samples, rows }
}

fn summarize(bfs: usize, s: &[CalibrationSample]) -> CalibrationRow {
    let d_phi: Vec<f64> = s.iter().map(|x| x.d_phi).collect();
    let dq: Vec<f64> = s.iter().map(|x| x.d_q).collect();
    let lens: Vec<f64> = s.iter().map(|x| x.per_len).filter(|l| l.is_finite()).collect();
    let t: Vec<f64> = s.iter().filter_map(|x| x.t_mode.map(|t| t as f64)).collect();
    let m = |v: &[f64]| if v.is_empty() { f64::NAN } else { mean(v) };
    let sd = |v: &[f64]| if v.is_empty() { f64::NAN } else { std_dev(v) };
    CalibrationRow {
        bfs,
        count: s.len(),
        d_phi_mean: m(&d_phi),
        d_phi_std: sd(&d_phi),
        d_q_mean: m(&dq),
        d_q_std: sd(&dq),
        per_len_mean: m(&lens),
        per_len_std: sd(&lens),
        per_found: lens.len(),
        t_mode_mean: m(&t),
    }
}

impl CalibrationReport {
    /// Spearman correlation of `d_φ` with true distance over pairs with
    /// true distance at most `max_bfs`.
    pub fn spearman_dphi(&self, max_bfs: usize) -> f64 {
        let (x, y): (Vec<f64>, Vec<f64>) = self
            .samples
            .iter()
            .filter(|s| s.bfs <= max_bfs)
            .map(|s| (s.d_phi, s.bfs as f64))
            .unzip();
        spearman(&x, &y)
    }

    /// Least-squares slope of the per-bin mean over bins `lo..=hi`, divided
    /// by the mean within-bin standard deviation.
    pub fn signal_to_noise(&self, lo: usize, hi: usize, value: impl Fn(&CalibrationSample) -> f64) -> f64 {
        let mut xs = Vec::new();
        let mut means = Vec::new();
        let mut stds = Vec::new();
        for b in lo..=hi {
            let v: Vec<f64> = self.samples.iter().filter(|s| s.bfs == b).map(&value).collect();
            if v.len() < 2 {
                continue;
            }
            xs.push(b as f64);
            means.push(mean(&v));
            stds.push(std_dev(&v));
        }
        if xs.len() < 2 {
            return f64::NAN;
        }
        let (mx, my) = (mean(&xs), mean(&means));
        let cov: f64 = xs.iter().zip(&means).map(|(x, y)| (x - mx) * (y - my)).sum();
        let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        (cov / var).abs() / mean(&stds).max(1e-12)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            f,
            "bfs,count,d_phi_mean,d_phi_std,d_q_mean,d_q_std,per_len_mean,per_len_std,per_found,t_mode_mean"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{},{}",
                r.bfs,
                r.count,
                r.d_phi_mean,
                r.d_phi_std,
                r.d_q_mean,
                r.d_q_std,
                r.per_len_mean,
                r.per_len_std,
                r.per_found,
                r.t_mode_mean
            )?;
        }
        f.flush()?;
        Ok(())
    }

    /// Scatter of `d_φ` against true distance.
    pub fn svg(&self) -> String {
        let pts: Vec<(f64, f64)> = self.samples.iter().map(|s| (s.bfs as f64, s.d_phi)).collect();
        scatter_svg(&pts, "true distance", "d_phi")
    }
}
