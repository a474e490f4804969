//! Monte Carlo estimation of ARL and detection delay, tradeoff-curve sweeps,
//! and threshold calibration.
//!
//! Trials are embarrassingly parallel: each trial owns RNG streams derived
//! from `(master_seed, trial_index, lane)` and results are reduced in trial
//! order, so outputs are byte-identical under any worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{h, PrivacyParams};
use crate::engine::{DetectorConfig, StopOutcome};
use crate::error::{Error, Result};
use crate::model::{LaplaceSaturation, StreamModel};
use crate::noise::{laplace_cdf, laplace_from_u, u53_to_open, NoiseSpec, RngHandle};

/// Ground-truth generative description of a trial: change time, affected
/// stream subset. `tau = None` is the no-change (ARL) regime.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeScenario {
    pub tau: Option<u64>,
    pub affected: Vec<usize>,
}

impl ChangeScenario {
    pub fn no_change() -> Self {
        ChangeScenario {
            tau: None,
            affected: Vec::new(),
        }
    }

    /// Change at tau = 0: affected streams draw post-change from t = 1.
    pub fn immediate(affected: Vec<usize>) -> Self {
        ChangeScenario {
            tau: Some(0),
            affected,
        }
    }

    pub fn all_streams(k: usize) -> Self {
        Self::immediate((0..k).collect())
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.tau.is_some() && self.affected.is_empty() {
            return Err(Error::UnsupportedScenario(
                "affected set must be nonempty when a change time is set".into(),
            ));
        }
        for &s in &self.affected {
            if s >= k {
                return Err(Error::UnsupportedScenario(format!(
                    "affected stream {s} out of range for K = {k}"
                )));
            }
        }
        Ok(())
    }
}

/// Trial budget: number of trials, horizon cap, master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub n_trials: u64,
    pub horizon: u64,
    pub master_seed: u64,
}

impl TrialPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::InvalidConfig("n_trials must be >= 1".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be >= 1".into()));
        }
        Ok(())
    }
}

/// Point estimate with its dispersion and censoring diagnostics. Censored
/// trials contribute the horizon (biasing the mean low), hence the 1%
/// censoring gate on `valid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub mean: f64,
    pub stderr: f64,
    pub censored_fraction: f64,
    pub n_trials: u64,
    pub valid: bool,
}

/// One record of a delay-vs-ARL tradeoff curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub arl: EstimateReport,
    pub delay: EstimateReport,
}

const RAW_MARGIN: u64 = 4096;
const U53_MAX: u64 = 1u64 << 53;

/// Saturation thresholds in raw 53-bit space for one sampling law of one
/// Laplace-shift stream.
#[derive(Debug, Clone, Copy)]
struct LapGate {
    lo_raw: u64,
    hi_raw: u64,
    mu: f64,
    scale: f64,
    l_lo: f64,
    l_hi: f64,
}

impl LapGate {
    fn new(sat: &LaplaceSaturation, mu_law: f64, scale_law: f64) -> Self {
        let f_lo = laplace_cdf(sat.x_lo, mu_law, scale_law);
        let f_hi = laplace_cdf(sat.x_hi, mu_law, scale_law);
        // Conservative margins: ambiguous draws fall through to the exact
        // computation so fast and exact paths agree bit-for-bit.
        let lo_raw = ((f_lo * U53_MAX as f64) as u64).saturating_sub(RAW_MARGIN);
        let hi_raw = (((f_hi * U53_MAX as f64) as u64) + RAW_MARGIN).min(U53_MAX);
        LapGate {
            lo_raw,
            hi_raw,
            mu: mu_law,
            scale: scale_law,
            l_lo: sat.l_lo,
            l_hi: sat.l_hi,
        }
    }
}

enum StreamSim<'a> {
    /// Equal-scale Laplace pair: most draws resolve to a saturation constant
    /// without evaluating any transcendental.
    LaplaceFast {
        model: &'a StreamModel,
        pre: LapGate,
        post: LapGate,
    },
    General {
        model: &'a StreamModel,
        buf: Vec<f64>,
    },
}

impl<'a> StreamSim<'a> {
    fn new(model: &'a StreamModel) -> Self {
        if let Some(sat) = model.laplace_saturation() {
            let law = |spec: &crate::model::DistributionSpec| match spec {
                crate::model::DistributionSpec::Laplace { mu, scale } => (*mu, *scale),
                _ => unreachable!(),
            };
            let (mu0, s0) = law(model.pre());
            let (mu1, s1) = law(model.post());
            return StreamSim::LaplaceFast {
                model,
                pre: LapGate::new(&sat, mu0, s0),
                post: LapGate::new(&sat, mu1, s1),
            };
        }
        StreamSim::General {
            model,
            buf: Vec::with_capacity(model.dim()),
        }
    }

    /// Sample one observation from the phase law and return the detector LLR.
    #[inline]
    fn draw(&mut self, rng: &mut RngHandle, post_phase: bool) -> f64 {
        match self {
            StreamSim::LaplaceFast { model, pre, post } => {
                let gate = if post_phase { post } else { pre };
                let r = rng.next_u53();
                if r <= gate.lo_raw {
                    gate.l_lo
                } else if r >= gate.hi_raw {
                    gate.l_hi
                } else {
                    let x = gate.mu + laplace_from_u(u53_to_open(r), gate.scale);
                    model.detector_llr_unchecked(&[x])
                }
            }
            StreamSim::General { model, buf } => {
                buf.clear();
                let law = if post_phase { model.post() } else { model.pre() };
                law.sample_into(rng, buf);
                model.detector_llr_unchecked(buf)
            }
        }
    }
}

/// Alarm gate: decides `U + Z >= b + W` per step while almost never paying
/// for the Laplace inverse CDF. A raw draw below the conservative threshold
/// cannot alarm; anything else is resolved exactly.
struct NoiseGate {
    live: bool,
    scale: f64,
    b_plus_w: f64,
    margin: f64,
    cap_u: f64,
    thr_raw: u64,
}

impl NoiseGate {
    fn new(noise: &NoiseSpec, threshold: f64, w: f64) -> Self {
        let mut g = NoiseGate {
            live: !noise.is_zero(),
            scale: noise.scale(),
            b_plus_w: threshold + w,
            margin: (2.0 * noise.scale()).max(1.0),
            cap_u: f64::NEG_INFINITY,
            thr_raw: 0,
        };
        g.refresh(0.0);
        g
    }

    fn refresh(&mut self, u_stat: f64) {
        self.cap_u = u_stat + self.margin;
        let gap = self.b_plus_w - self.cap_u;
        self.thr_raw = if gap <= 0.0 {
            0
        } else {
            let u_thr = 1.0 - 0.5 * (-gap / self.scale).exp();
            ((u_thr * U53_MAX as f64) as u64).saturating_sub(RAW_MARGIN)
        };
    }

    /// Returns true on alarm. Consumes exactly one raw draw in live mode.
    #[inline]
    fn check(&mut self, u_stat: f64, rng: &mut RngHandle) -> bool {
        if !self.live {
            return u_stat >= self.b_plus_w;
        }
        let r = rng.next_u53();
        if u_stat > self.cap_u {
            self.refresh(u_stat);
        }
        if r >= self.thr_raw {
            let z = laplace_from_u(u53_to_open(r), self.scale);
            if u_stat + z >= self.b_plus_w {
                return true;
            }
            if self.cap_u - u_stat > 2.0 * self.margin {
                self.refresh(u_stat);
            }
        }
        false
    }
}

/// Run one detector trial with streamed synthetic data. Semantically
/// identical to stepping the engine over rows generated from the scenario
/// with the same RNG streams.
pub fn run_trial(
    config: &DetectorConfig,
    scenario: &ChangeScenario,
    data_rng: &mut RngHandle,
    noise_rng: &mut RngHandle,
) -> StopOutcome {
    let k = config.k();
    let mut sims: Vec<StreamSim> = config.models.iter().map(StreamSim::new).collect();
    let affected: Vec<bool> = {
        let mut v = vec![false; k];
        for &s in &scenario.affected {
            v[s] = true;
        }
        v
    };
    let w = config.noise.sample(noise_rng);
    let mut gate = NoiseGate::new(&config.noise, config.threshold, w);
    let mut s = vec![0.0f64; k];
    let mut t = 0u64;
    while t < config.horizon {
        t += 1;
        let post_t = match scenario.tau {
            Some(tau) => t > tau,
            None => false,
        };
        let mut u = 0.0;
        for i in 0..k {
            let l = sims[i].draw(data_rng, post_t && affected[i]);
            let si = (s[i] + l).max(0.0);
            s[i] = si;
            u += si;
        }
        if gate.check(u, noise_rng) {
            return StopOutcome {
                stop_time: t,
                alarm: true,
                final_u: u,
            };
        }
    }
    StopOutcome {
        stop_time: config.horizon,
        alarm: false,
        final_u: s.iter().sum(),
    }
}

fn summarize(outcomes: &[StopOutcome]) -> EstimateReport {
    let n = outcomes.len() as f64;
    let mut sum = 0.0;
    let mut censored = 0u64;
    for o in outcomes {
        sum += o.stop_time as f64;
        if o.censored() {
            censored += 1;
        }
    }
    let mean = sum / n;
    let mut ss = 0.0;
    for o in outcomes {
        let d = o.stop_time as f64 - mean;
        ss += d * d;
    }
    let var = if outcomes.len() > 1 {
        ss / (n - 1.0)
    } else {
        0.0
    };
    let censored_fraction = censored as f64 / n;
    EstimateReport {
        mean,
        stderr: (var / n).sqrt(),
        censored_fraction,
        n_trials: outcomes.len() as u64,
        valid: censored_fraction < 0.01,
    }
}

fn run_lane(
    config: &DetectorConfig,
    scenario: &ChangeScenario,
    plan: &TrialPlan,
    lane: &str,
) -> Vec<StopOutcome> {
    let data_role = format!("{lane}/data");
    let noise_role = format!("{lane}/noise");
    (0..plan.n_trials)
        .into_par_iter()
        .map(|i| {
            let mut data_rng = RngHandle::derive(plan.master_seed, i, &data_role);
            let mut noise_rng = RngHandle::derive(plan.master_seed, i, &noise_role);
            run_trial(config, scenario, &mut data_rng, &mut noise_rng)
        })
        .collect()
}

/// Estimate the average run length to false alarm on pre-change-only data.
pub fn estimate_arl(config: &DetectorConfig, plan: &TrialPlan) -> Result<EstimateReport> {
    estimate_arl_lane(config, plan, "arl")
}

pub fn estimate_arl_lane(
    config: &DetectorConfig,
    plan: &TrialPlan,
    lane: &str,
) -> Result<EstimateReport> {
    plan.validate()?;
    let mut config = config.clone();
    config.horizon = plan.horizon;
    let outcomes = run_lane(&config, &ChangeScenario::no_change(), plan, lane);
    Ok(summarize(&outcomes))
}

/// Estimate detection delay for an immediate change (tau = 0).
pub fn estimate_delay(
    config: &DetectorConfig,
    plan: &TrialPlan,
    scenario: &ChangeScenario,
) -> Result<EstimateReport> {
    estimate_delay_lane(config, plan, scenario, "delay")
}

pub fn estimate_delay_lane(
    config: &DetectorConfig,
    plan: &TrialPlan,
    scenario: &ChangeScenario,
    lane: &str,
) -> Result<EstimateReport> {
    plan.validate()?;
    scenario.validate(config.k())?;
    if scenario.tau != Some(0) {
        return Err(Error::UnsupportedScenario(
            "delay estimation supports tau = 0 only".into(),
        ));
    }
    let mut config = config.clone();
    config.horizon = plan.horizon;
    let outcomes = run_lane(&config, scenario, plan, lane);
    Ok(summarize(&outcomes))
}

/// Template from which per-threshold detector configs are minted.
#[derive(Debug, Clone)]
pub struct ConfigTemplate {
    pub models: Vec<StreamModel>,
    /// `None` disables noise (non-private baseline).
    pub epsilon: Option<f64>,
}

impl ConfigTemplate {
    pub fn build(&self, threshold: f64, horizon: u64) -> Result<DetectorConfig> {
        match self.epsilon {
            Some(eps) => DetectorConfig::live(self.models.clone(), eps, threshold, horizon),
            None => DetectorConfig::baseline(self.models.clone(), threshold, horizon),
        }
    }
}

/// Sweep a strictly increasing threshold grid, estimating ARL and delay at
/// each point on disjoint seed lanes.
pub fn sweep_curve(
    template: &ConfigTemplate,
    thresholds: &[f64],
    plan: &TrialPlan,
    scenario: &ChangeScenario,
) -> Result<Vec<CurvePoint>> {
    if thresholds.is_empty() {
        return Err(Error::InvalidConfig("threshold grid is empty".into()));
    }
    if thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "thresholds must be strictly increasing".into(),
        ));
    }
    let mut points = Vec::with_capacity(thresholds.len());
    for (i, &b) in thresholds.iter().enumerate() {
        let config = template.build(b, plan.horizon)?;
        let arl = estimate_arl_lane(&config, plan, &format!("curve/{i}/arl"))?;
        let delay = estimate_delay_lane(&config, plan, scenario, &format!("curve/{i}/delay"))?;
        points.push(CurvePoint {
            threshold: b,
            arl,
            delay,
        });
    }
    Ok(points)
}

/// Result of stochastic threshold calibration.
#[derive(Debug, Clone, Serialize)]
pub struct CalibrationOutcome {
    pub threshold: f64,
    pub achieved_arl: f64,
    pub probes: Vec<(f64, f64)>,
}

const CALIBRATION_TOL: f64 = 0.10;
const CALIBRATION_MAX_PROBES: usize = 20;

/// Stochastic bisection on the threshold until the Monte Carlo ARL estimate
/// is within 10% of `target_gamma` (or the probe budget runs out). Probes
/// share one seed lane so per-trial stop times are monotone in the threshold
/// and bisection is well behaved.
pub fn calibrate_threshold(
    template: &ConfigTemplate,
    target_gamma: f64,
    plan: &TrialPlan,
) -> Result<CalibrationOutcome> {
    if !(target_gamma > 1.0) {
        return Err(Error::InvalidConfig(format!(
            "target_gamma must be > 1, got {target_gamma}"
        )));
    }
    plan.validate()?;
    if (plan.horizon as f64) < 2.0 * target_gamma {
        return Err(Error::CalibrationFailed(format!(
            "horizon {} too small for ARL target {target_gamma}; need >= 2x",
            plan.horizon
        )));
    }
    let h_eff = match template.epsilon {
        Some(eps) => {
            let delta = crate::model::global_sensitivity(&template.models)?;
            h(PrivacyParams::new(eps, delta)?)
        }
        None => 1.0,
    };
    let b0 = target_gamma.ln() / h_eff;
    let mut probes: Vec<(f64, f64)> = Vec::new();
    let probe = |b: f64, probes: &mut Vec<(f64, f64)>| -> Result<f64> {
        let config = template.build(b, plan.horizon)?;
        let rep = estimate_arl_lane(&config, plan, "cal")?;
        probes.push((b, rep.mean));
        Ok(rep.mean)
    };
    let mut lo = 0.25 * b0;
    let mut hi = 4.0 * b0;
    let mut arl_lo = probe(lo, &mut probes)?;
    let mut arl_hi = probe(hi, &mut probes)?;
    let mut expand = 0;
    while arl_hi < target_gamma {
        hi *= 2.0;
        arl_hi = probe(hi, &mut probes)?;
        expand += 1;
        if expand > 6 {
            return Err(Error::CalibrationFailed(format!(
                "ARL at upper bracket b = {hi} is {arl_hi}, still below target {target_gamma}"
            )));
        }
    }
    while arl_lo > target_gamma {
        lo *= 0.5;
        arl_lo = probe(lo, &mut probes)?;
        expand += 1;
        if expand > 12 {
            return Err(Error::CalibrationFailed(format!(
                "ARL at lower bracket b = {lo} is {arl_lo}, still above target {target_gamma}"
            )));
        }
    }
    let mut best = if (arl_hi / target_gamma).ln().abs() < (arl_lo / target_gamma).ln().abs() {
        (hi, arl_hi)
    } else {
        (lo, arl_lo)
    };
    while probes.len() < CALIBRATION_MAX_PROBES {
        if (best.1 / target_gamma - 1.0).abs() <= CALIBRATION_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let arl_mid = probe(mid, &mut probes)?;
        if (arl_mid / target_gamma).ln().abs() < (best.1 / target_gamma).ln().abs() {
            best = (mid, arl_mid);
        }
        if arl_mid < target_gamma {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CalibrationOutcome {
        threshold: best.0,
        achieved_arl: best.1,
        probes,
    })
}
