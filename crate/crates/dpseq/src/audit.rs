//! Empirical verification of the privacy-relevant contracts: neighboring-pair
//! sensitivity certification and a small-scale stopping-time ratio smoke test.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate, MultiStreamSeries};
use crate::engine::DetectorConfig;
use crate::error::{Error, Result};
use crate::mc::ChangeScenario;
use crate::noise::{NoiseSpec, RngHandle};

/// Single-cell edit turning a series into a neighbor: time `t0` (1-based,
/// matching detector time), stream `k0`, replacement observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborEdit {
    pub t0: u64,
    pub k0: usize,
    pub new_value: Vec<f64>,
}

/// Copy of `series` differing only at the edited cell.
pub fn make_neighbor(series: &MultiStreamSeries, edit: &NeighborEdit) -> Result<MultiStreamSeries> {
    if edit.t0 == 0 || edit.t0 as usize > series.t_len() {
        return Err(Error::Data(format!(
            "edit time {} out of range 1..={}",
            edit.t0,
            series.t_len()
        )));
    }
    if edit.k0 >= series.k() {
        return Err(Error::Data(format!(
            "edit stream {} out of range for K = {}",
            edit.k0,
            series.k()
        )));
    }
    let mut out = series.clone();
    out.set_cell(edit.t0 as usize - 1, edit.k0, &edit.new_value)?;
    Ok(out)
}

/// Result of a sensitivity certification run.
#[derive(Debug, Clone, Serialize)]
pub struct SensitivityReport {
    /// max over pairs and t of |U_t - U~_t|
    pub max_gap: f64,
    /// per-stream max over pairs and t of |S_t^k - S~_t^k|
    pub per_stream_max: Vec<f64>,
    pub delta_max: f64,
    pub n_pairs: u64,
    pub horizon: u64,
    pub pass: bool,
}

pub const SENSITIVITY_SLACK: f64 = 1e-9;
const EXTREME_EDIT: f64 = 1e6;

/// Noiseless per-stream CUSUM trajectories over `t_len` steps.
fn trajectories(config: &DetectorConfig, series: &MultiStreamSeries) -> Vec<Vec<f64>> {
    let k = config.k();
    let mut s = vec![0.0f64; k];
    let mut out = vec![Vec::with_capacity(series.t_len()); k];
    for t in 0..series.t_len() {
        for (i, m) in config.models.iter().enumerate() {
            let l = m.detector_llr_unchecked(series.cell(t, i));
            s[i] = (s[i] + l).max(0.0);
            out[i].push(s[i]);
        }
    }
    out
}

struct PairGaps {
    u_gap: f64,
    stream_gaps: Vec<f64>,
}

fn pair_gaps(config: &DetectorConfig, pair: u64, master_seed: u64, t_len: usize) -> PairGaps {
    let k = config.k();
    let mut data_rng = RngHandle::derive(master_seed, pair, "audit/sens/data");
    let mut edit_rng = RngHandle::derive(master_seed, pair, "audit/sens/edit");
    let series = generate(
        &config.models,
        &ChangeScenario::no_change(),
        t_len,
        &mut data_rng,
    );
    let t0 = 1 + (edit_rng.next_u53() % t_len as u64);
    let k0 = (edit_rng.next_u53() % k as u64) as usize;
    let d = config.models[k0].dim();
    // cycle edit kinds; extremes exercise the clip boundaries of truncated models
    let new_value: Vec<f64> = match pair % 4 {
        0 => {
            let mut v = Vec::new();
            config.models[k0].pre().sample_into(&mut edit_rng, &mut v);
            v
        }
        1 => {
            let mut v = Vec::new();
            config.models[k0].post().sample_into(&mut edit_rng, &mut v);
            for x in &mut v {
                *x += 5.0;
            }
            v
        }
        2 => vec![EXTREME_EDIT; d],
        _ => vec![-EXTREME_EDIT; d],
    };
    let edit = NeighborEdit { t0, k0, new_value };
    let neighbor = make_neighbor(&series, &edit).expect("in-range edit");
    let a = trajectories(config, &series);
    let b = trajectories(config, &neighbor);
    let mut stream_gaps = vec![0.0f64; k];
    let mut u_gap = 0.0f64;
    for t in 0..t_len {
        let mut du = 0.0;
        for i in 0..k {
            let g = (a[i][t] - b[i][t]).abs();
            if g > stream_gaps[i] {
                stream_gaps[i] = g;
            }
            du += a[i][t] - b[i][t];
        }
        u_gap = u_gap.max(du.abs());
    }
    // streams other than the edited one must be untouched
    for (i, &g) in stream_gaps.iter().enumerate() {
        if i != k0 {
            assert_eq!(g, 0.0, "edit on stream {k0} leaked into stream {i}");
        }
    }
    PairGaps { u_gap, stream_gaps }
}

/// Certify the sensitivity premise on random neighboring pairs: the noiseless
/// statistic paths of a series and its single-cell neighbor never differ by
/// more than the global sensitivity.
pub fn sensitivity_check(
    config: &DetectorConfig,
    n_pairs: u64,
    t_len: usize,
    master_seed: u64,
) -> Result<SensitivityReport> {
    if n_pairs == 0 || t_len == 0 {
        return Err(Error::InvalidConfig(
            "sensitivity_check needs n_pairs >= 1 and T >= 1".into(),
        ));
    }
    let gaps: Vec<PairGaps> = (0..n_pairs)
        .into_par_iter()
        .map(|p| pair_gaps(config, p, master_seed, t_len))
        .collect();
    let k = config.k();
    let mut max_gap = 0.0f64;
    let mut per_stream_max = vec![0.0f64; k];
    for g in &gaps {
        max_gap = max_gap.max(g.u_gap);
        for i in 0..k {
            per_stream_max[i] = per_stream_max[i].max(g.stream_gaps[i]);
        }
    }
    let delta_max = config.delta_max();
    let mut pass = max_gap <= delta_max + SENSITIVITY_SLACK;
    for (i, m) in config.models.iter().enumerate() {
        let delta_k = match m.sensitivity() {
            crate::model::Sensitivity::Bounded(d) => d,
            crate::model::Sensitivity::Unbounded => f64::INFINITY,
        };
        if per_stream_max[i] > delta_k + SENSITIVITY_SLACK {
            pass = false;
        }
    }
    Ok(SensitivityReport {
        max_gap,
        per_stream_max,
        delta_max,
        n_pairs,
        horizon: t_len as u64,
        pass,
    })
}

/// Built-in adversarial pair for the ratio audit: one truncated scalar
/// Gaussian stream whose clipped LLR saturates on extreme cells. The base
/// CUSUM path is 0, 1.25, 2.5, 1.25, 2.5 and the edit flips the last cell,
/// dropping the final statistic by the full sensitivity 2.5.
pub fn adversarial_scalar_pair(
    epsilon: f64,
) -> Result<(DetectorConfig, MultiStreamSeries, NeighborEdit)> {
    let model = crate::model::StreamModel::new(
        crate::model::DistributionSpec::Gaussian { mu: 0.0, sigma: 1.0 },
        crate::model::DistributionSpec::Gaussian { mu: 0.5, sigma: 1.0 },
        Some(2.5),
    )?;
    let cfg = DetectorConfig::live(vec![model], epsilon, 3.0, 5)?;
    let rows = [-1e6, 1e6, 1e6, -1e6, 1e6];
    let m = crate::data::Matrix::from_rows(&rows.map(|x| vec![x]).to_vec())?;
    let series = MultiStreamSeries::new(vec![m])?;
    let edit = NeighborEdit {
        t0: 5,
        k0: 0,
        new_value: vec![-1e6],
    };
    Ok((cfg, series, edit))
}

/// Advisory status of a privacy-ratio audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioStatus {
    /// every well-populated bin within epsilon + slack
    Pass,
    /// some bin exceeds epsilon + slack — signals a bug
    Flagged,
    /// no bin reached the count floor on both sides
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioBin {
    /// stopping time, or 0 for "no alarm by T"
    pub n: u64,
    pub count_base: u64,
    pub count_neighbor: u64,
    pub log_ratio: f64,
    pub slack: f64,
    pub within: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RatioReport {
    pub epsilon: f64,
    pub n_runs: u64,
    pub bins: Vec<RatioBin>,
    pub max_abs_log_ratio: Option<f64>,
    pub status: RatioStatus,
}

const RATIO_COUNT_FLOOR: u64 = 100;

/// Estimate the stopping-time distributions of a tiny noisy detector on one
/// fixed neighboring pair and compare their log ratios against epsilon.
///
/// ADVISORY ONLY: a pass does not certify differential privacy; a gross
/// violation signals a bug. `noise_override` exists for mutation tests that
/// deliberately mis-scale the noise.
pub fn empirical_privacy_ratio(
    config: &DetectorConfig,
    series: &MultiStreamSeries,
    edit: &NeighborEdit,
    n_runs: u64,
    master_seed: u64,
    noise_override: Option<NoiseSpec>,
) -> Result<RatioReport> {
    if config.k() > 2 || config.horizon > 5 {
        return Err(Error::InvalidConfig(
            "ratio audit requires a tiny config: K <= 2, T <= 5".into(),
        ));
    }
    if n_runs < 100_000 {
        return Err(Error::InvalidConfig(format!(
            "ratio audit needs n_runs >= 1e5, got {n_runs}"
        )));
    }
    let noise = noise_override.unwrap_or(config.noise);
    if noise.is_zero() {
        // deterministic stop: nothing to audit
        return Ok(RatioReport {
            epsilon: config.epsilon,
            n_runs,
            bins: Vec::new(),
            max_abs_log_ratio: None,
            status: RatioStatus::Inconclusive,
        });
    }
    if series.t_len() < config.horizon as usize {
        return Err(Error::Data(format!(
            "series length {} shorter than horizon {}",
            series.t_len(),
            config.horizon
        )));
    }
    let neighbor = make_neighbor(series, edit)?;
    let t = config.horizon;
    // precompute noiseless U_t for both series; each noisy run then only
    // redraws W and Z_t
    let u_path = |s: &MultiStreamSeries| -> Vec<f64> {
        let traj = trajectories(config, s);
        (0..t as usize)
            .map(|i| traj.iter().map(|row| row[i]).sum())
            .collect()
    };
    let u_base = u_path(series);
    let u_nb = u_path(&neighbor);
    let stop_with_noise = |u: &[f64], rng: &mut RngHandle| -> u64 {
        let w = noise.sample(rng);
        for (i, &ui) in u.iter().enumerate() {
            let z = noise.sample(rng);
            if ui + z >= config.threshold + w {
                return i as u64 + 1;
            }
        }
        0 // censored
    };
    let histo = |u: &[f64], role: &str| -> Vec<u64> {
        (0..n_runs)
            .into_par_iter()
            .fold(
                || vec![0u64; t as usize + 1],
                |mut h, run| {
                    let mut rng = RngHandle::derive(master_seed, run, role);
                    h[stop_with_noise(u, &mut rng) as usize] += 1;
                    h
                },
            )
            .reduce(
                || vec![0u64; t as usize + 1],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                    a
                },
            )
    };
    let h_base = histo(&u_base, "audit/ratio/base");
    let h_nb = histo(&u_nb, "audit/ratio/neighbor");
    let mut bins = Vec::new();
    let mut max_abs: Option<f64> = None;
    let mut flagged = false;
    for n in 0..=t as usize {
        let (cb, cn) = (h_base[n], h_nb[n]);
        if cb < RATIO_COUNT_FLOOR || cn < RATIO_COUNT_FLOOR {
            continue;
        }
        let p = cb as f64 / n_runs as f64;
        let q = cn as f64 / n_runs as f64;
        let log_ratio = (p / q).ln();
        // binomial delta-method stderr of the log ratio
        let se = ((1.0 - p) / (n_runs as f64 * p) + (1.0 - q) / (n_runs as f64 * q)).sqrt();
        let slack = 3.0 * se;
        let within = log_ratio.abs() <= config.epsilon + slack;
        if !within {
            flagged = true;
        }
        max_abs = Some(max_abs.map_or(log_ratio.abs(), |m: f64| m.max(log_ratio.abs())));
        bins.push(RatioBin {
            n: n as u64,
            count_base: cb,
            count_neighbor: cn,
            log_ratio,
            slack,
            within,
        });
    }
    let status = if bins.is_empty() {
        RatioStatus::Inconclusive
    } else if flagged {
        RatioStatus::Flagged
    } else {
        RatioStatus::Pass
    };
    Ok(RatioReport {
        epsilon: config.epsilon,
        n_runs,
        bins,
        max_abs_log_ratio: max_abs,
        status,
    })
}
