//! The DP-SUM-CUSUM state machine, its truncated variant, the non-private
//! baseline (noise disabled), and a brute-force test oracle for the CUSUM
//! recursion.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{global_sensitivity, StreamModel};
use crate::noise::{NoiseSpec, RngHandle};

/// Detector configuration: stream models, privacy budget, threshold, noise
/// law, and the per-trial horizon cap.
#[derive(Debug, Clone)]
pub struct DetectorConfig {
    pub models: Vec<StreamModel>,
    pub epsilon: f64,
    pub threshold: f64,
    pub noise: NoiseSpec,
    pub horizon: u64,
    /// Effective global sensitivity of the model set.
    delta_max: f64,
    /// Per-stream observation dimensions and the flattened row width.
    dims: Vec<usize>,
    total_dim: usize,
}

impl DetectorConfig {
    /// Build a live (noisy) detector with noise scale `2 * delta_max / epsilon`.
    pub fn live(
        models: Vec<StreamModel>,
        epsilon: f64,
        threshold: f64,
        horizon: u64,
    ) -> Result<Self> {
        let delta_max = global_sensitivity(&models)?;
        let noise = NoiseSpec::live(epsilon, delta_max)?;
        Self::with_noise(models, epsilon, threshold, noise, horizon)
    }

    /// Build the non-private baseline: identical statistic, zero noise.
    pub fn baseline(models: Vec<StreamModel>, threshold: f64, horizon: u64) -> Result<Self> {
        let epsilon = f64::INFINITY;
        Self::with_noise(models, epsilon, threshold, NoiseSpec::zero(), horizon)
    }

    pub fn with_noise(
        models: Vec<StreamModel>,
        epsilon: f64,
        threshold: f64,
        noise: NoiseSpec,
        horizon: u64,
    ) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::InvalidConfig("need at least one stream".into()));
        }
        if horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be positive".into()));
        }
        if !threshold.is_finite() && threshold != f64::INFINITY {
            return Err(Error::InvalidConfig(format!(
                "threshold must be finite or +inf, got {threshold}"
            )));
        }
        // A zero-noise baseline never adds noise, so unbounded sensitivity is
        // acceptable there (and only there).
        let delta_max = match global_sensitivity(&models) {
            Ok(d) => d,
            Err(Error::UnboundedStreams(_)) if noise.is_zero() => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if !noise.is_zero() {
            let expected = 2.0 * delta_max / epsilon;
            if (noise.scale() - expected).abs() > 1e-9 * expected.max(1.0) {
                return Err(Error::InvalidConfig(format!(
                    "noise scale {} inconsistent with 2*delta_max/epsilon = {}",
                    noise.scale(),
                    expected
                )));
            }
        }
        let dims: Vec<usize> = models.iter().map(|m| m.dim()).collect();
        let total_dim = dims.iter().sum();
        Ok(DetectorConfig {
            models,
            epsilon,
            threshold,
            noise,
            horizon,
            delta_max,
            dims,
            total_dim,
        })
    }

    pub fn k(&self) -> usize {
        self.models.len()
    }

    pub fn delta_max(&self) -> f64 {
        self.delta_max
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Width of one flattened observation row (K * d values).
    pub fn row_width(&self) -> usize {
        self.total_dim
    }
}

/// Detector lifecycle status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    Running,
    Alarmed(u64),
}

/// One step's outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Alarm(u64),
}

/// Live state of the detector: time index, per-stream CUSUM values, their
/// sum, and the one-shot threshold noise.
#[derive(Debug, Clone)]
pub struct DetectorState {
    pub t: u64,
    pub s: Vec<f64>,
    pub u: f64,
    pub w: f64,
    pub last_z: f64,
    pub status: Status,
}

impl DetectorState {
    /// Initialize: zero statistics, threshold noise W drawn exactly once.
    pub fn init(config: &DetectorConfig, rng: &mut RngHandle) -> Self {
        DetectorState {
            t: 0,
            s: vec![0.0; config.k()],
            u: 0.0,
            w: config.noise.sample(rng),
            last_z: 0.0,
            status: Status::Running,
        }
    }

    /// Advance one step on a flattened observation row. Update order is
    /// fixed: update S, recompute U, sample Z, compare `U + Z >= b + W`
    /// (ties at exact equality alarm).
    pub fn step(
        &mut self,
        config: &DetectorConfig,
        x: &[f64],
        rng: &mut RngHandle,
    ) -> Result<Decision> {
        if let Status::Alarmed(t) = self.status {
            return Err(Error::DetectorStopped(t));
        }
        if x.len() != config.total_dim {
            return Err(Error::DimensionMismatch {
                stream: usize::MAX,
                expected: config.total_dim,
                got: x.len(),
            });
        }
        self.t += 1;
        let mut offset = 0;
        for (k, model) in config.models.iter().enumerate() {
            let d = config.dims[k];
            let obs = &x[offset..offset + d];
            offset += d;
            let l = model.detector_llr(obs).map_err(|e| match e {
                Error::DimensionMismatch { expected, got, .. } => Error::DimensionMismatch {
                    stream: k,
                    expected,
                    got,
                },
                other => other,
            })?;
            self.s[k] = (self.s[k] + l).max(0.0);
        }
        self.u = self.s.iter().sum();
        self.last_z = config.noise.sample(rng);
        if self.u + self.last_z >= config.threshold + self.w {
            self.status = Status::Alarmed(self.t);
            Ok(Decision::Alarm(self.t))
        } else {
            Ok(Decision::Continue)
        }
    }
}

/// Final outcome of one detector run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StopOutcome {
    /// Alarm time, or the horizon when censored.
    pub stop_time: u64,
    pub alarm: bool,
    pub final_u: f64,
}

impl StopOutcome {
    pub fn censored(&self) -> bool {
        !self.alarm
    }
}

/// Run a detector over a row source until alarm or horizon. A source that
/// dries up before the horizon without an alarm is an error distinct from
/// censoring.
pub fn run<I>(config: &DetectorConfig, source: I, rng: &mut RngHandle) -> Result<StopOutcome>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut state = DetectorState::init(config, rng);
    let mut source = source.into_iter();
    while state.t < config.horizon {
        let row = source.next().ok_or(Error::SourceExhausted {
            at: state.t,
            horizon: config.horizon,
        })?;
        if let Decision::Alarm(t) = state.step(config, &row, rng)? {
            return Ok(StopOutcome {
                stop_time: t,
                alarm: true,
                final_u: state.u,
            });
        }
    }
    Ok(StopOutcome {
        stop_time: config.horizon,
        alarm: false,
        final_u: state.u,
    })
}

/// O(t^2) brute-force oracle for the CUSUM recursion:
/// `S_t = max(0, max_{1<=j<=t} sum_{i=j}^{t} l_i)`.
pub fn cusum_bruteforce(llr_sequence: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(llr_sequence.len());
    for t in 0..llr_sequence.len() {
        let mut best = 0.0f64;
        for j in 0..=t {
            let sum: f64 = llr_sequence[j..=t].iter().sum();
            best = best.max(sum);
        }
        out.push(best);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DistributionSpec;
    use proptest::prelude::*;

    /// Unit-drift model: Gaussian(0,1) -> Gaussian(1,1) has llr(x) = x - 0.5,
    /// so feeding x = l + 0.5 drives the recursion with arbitrary l values.
    fn unit_model() -> StreamModel {
        StreamModel::new(
            DistributionSpec::Gaussian { mu: 0.0, sigma: 1.0 },
            DistributionSpec::Gaussian { mu: 1.0, sigma: 1.0 },
            None,
        )
        .unwrap()
    }

    fn zero_noise_config(k: usize, threshold: f64, horizon: u64) -> DetectorConfig {
        let models = (0..k).map(|_| unit_model()).collect();
        DetectorConfig::baseline(models, threshold, horizon).unwrap()
    }

    fn laplace_k(k: usize) -> Vec<StreamModel> {
        (0..k)
            .map(|_| {
                StreamModel::new(
                    DistributionSpec::Laplace { mu: 0.0, scale: 1.0 },
                    DistributionSpec::Laplace { mu: 0.2, scale: 1.0 },
                    None,
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn init_state_is_zeroed() {
        let cfg = zero_noise_config(5, 10.0, 100);
        let mut rng = RngHandle::derive(1, 0, "t");
        let st = DetectorState::init(&cfg, &mut rng);
        assert_eq!(st.t, 0);
        assert_eq!(st.s, vec![0.0; 5]);
        assert_eq!(st.u, 0.0);
        assert_eq!(st.w, 0.0);
        assert_eq!(st.status, Status::Running);
    }

    #[test]
    fn live_init_w_is_reproducible() {
        let cfg = DetectorConfig::live(laplace_k(5), 0.2, 20.0, 100).unwrap();
        let w1 = DetectorState::init(&cfg, &mut RngHandle::derive(7, 3, "noise")).w;
        let w2 = DetectorState::init(&cfg, &mut RngHandle::derive(7, 3, "noise")).w;
        assert_eq!(w1, w2);
        assert_ne!(w1, 0.0);
    }

    #[test]
    fn recursion_example() {
        // llr sequence 1, -2, 0.5 via x = l + 0.5
        let cfg = zero_noise_config(1, 10.0, 100);
        let mut rng = RngHandle::derive(0, 0, "n");
        let mut st = DetectorState::init(&cfg, &mut rng);
        let mut seen = Vec::new();
        for l in [1.0, -2.0, 0.5] {
            st.step(&cfg, &[l + 0.5], &mut rng).unwrap();
            seen.push(st.s[0]);
        }
        for (got, want) in seen.iter().zip([1.0, 0.0, 0.5]) {
            assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
        }
        assert_eq!(st.status, Status::Running);
    }

    #[test]
    fn summation_across_streams() {
        let cfg = zero_noise_config(3, 100.0, 100);
        let mut rng = RngHandle::derive(0, 0, "n");
        let mut st = DetectorState::init(&cfg, &mut rng);
        st.step(&cfg, &[1.5, 0.5, 1.0], &mut rng).unwrap();
        // llrs: 1.0, 0.0, 0.5
        assert!((st.u - 1.5).abs() < 1e-12);
        assert_eq!(st.u, st.s.iter().sum::<f64>());
    }

    #[test]
    fn threshold_crossing_alarms_with_tie_semantics() {
        let cfg = zero_noise_config(1, 0.4, 100);
        let mut rng = RngHandle::derive(0, 0, "n");
        let mut st = DetectorState::init(&cfg, &mut rng);
        let d = st.step(&cfg, &[0.5 + 0.5], &mut rng).unwrap();
        assert_eq!(d, Decision::Alarm(1));
        assert_eq!(st.status, Status::Alarmed(1));
        // stepping an alarmed state errors
        assert!(matches!(
            st.step(&cfg, &[0.0], &mut rng),
            Err(Error::DetectorStopped(1))
        ));
    }

    #[test]
    fn exact_equality_alarms() {
        let cfg = zero_noise_config(1, 1.0, 100);
        let mut rng = RngHandle::derive(0, 0, "n");
        let mut st = DetectorState::init(&cfg, &mut rng);
        let d = st.step(&cfg, &[1.0 + 0.5], &mut rng).unwrap();
        assert_eq!(d, Decision::Alarm(1));
    }

    #[test]
    fn run_censors_at_horizon() {
        let cfg = zero_noise_config(1, 1e6, 100);
        let mut rng = RngHandle::derive(0, 0, "n");
        let out = run(&cfg, std::iter::repeat(vec![0.0]).take(200), &mut rng).unwrap();
        assert!(!out.alarm);
        assert_eq!(out.stop_time, 100);
    }

    #[test]
    fn run_immediate_crossing_at_zero_threshold() {
        let cfg = zero_noise_config(1, 0.0, 100);
        let mut rng = RngHandle::derive(0, 0, "n");
        let out = run(&cfg, std::iter::repeat(vec![1.5]).take(100), &mut rng).unwrap();
        assert!(out.alarm);
        assert_eq!(out.stop_time, 1);
    }

    #[test]
    fn run_source_exhaustion_is_an_error() {
        let cfg = zero_noise_config(1, 1e6, 100);
        let mut rng = RngHandle::derive(0, 0, "n");
        let r = run(&cfg, std::iter::repeat(vec![0.0]).take(10), &mut rng);
        assert!(matches!(r, Err(Error::SourceExhausted { at: 10, horizon: 100 })));
    }

    #[test]
    fn bruteforce_examples() {
        assert_eq!(cusum_bruteforce(&[1.0, -2.0, 0.5]), vec![1.0, 0.0, 0.5]);
        assert_eq!(cusum_bruteforce(&[-1.0, -0.5, -2.0]), vec![0.0, 0.0, 0.0]);
        assert_eq!(cusum_bruteforce(&[1.0, 2.0, 3.0]), vec![1.0, 3.0, 6.0]);
    }

    #[test]
    fn config_rejects_unbounded_models() {
        let models = vec![StreamModel::new(
            DistributionSpec::Gaussian { mu: 0.0, sigma: 1.0 },
            DistributionSpec::Gaussian { mu: 0.5, sigma: 1.0 },
            None,
        )
        .unwrap()];
        assert!(DetectorConfig::live(models, 1.0, 10.0, 100).is_err());
    }

    #[test]
    fn config_rejects_inconsistent_noise_scale() {
        let noise = NoiseSpec::live(0.2, 1.0).unwrap(); // wrong delta_max
        let r = DetectorConfig::with_noise(laplace_k(2), 0.2, 10.0, noise, 100);
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn monotone_stop_time_in_threshold() {
        // fixed data and fixed noise draws: stop_time(b1) <= stop_time(b2)
        let mut data_rng = RngHandle::derive(11, 0, "data");
        let models = laplace_k(3);
        let rows: Vec<Vec<f64>> = (0..400)
            .map(|_| {
                let mut row = Vec::new();
                for m in &models {
                    m.post().sample_into(&mut data_rng, &mut row);
                }
                row
            })
            .collect();
        let mut prev = 0u64;
        for b in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let cfg = DetectorConfig::live(laplace_k(3), 0.4, b, 400).unwrap();
            let mut rng = RngHandle::derive(11, 0, "noise");
            let out = run(&cfg, rows.iter().cloned(), &mut rng).unwrap();
            assert!(out.stop_time >= prev, "b = {b}");
            prev = out.stop_time;
        }
    }

    proptest! {
        #[test]
        fn recursion_matches_bruteforce(
            llrs in proptest::collection::vec(-3.0f64..3.0, 1..20)
        ) {
            let cfg = zero_noise_config(1, f64::INFINITY, 1000);
            let mut rng = RngHandle::derive(0, 0, "n");
            let mut st = DetectorState::init(&cfg, &mut rng);
            let oracle = cusum_bruteforce(&llrs);
            for (i, l) in llrs.iter().enumerate() {
                st.step(&cfg, &[l + 0.5], &mut rng).unwrap();
                prop_assert!((st.s[0] - oracle[i]).abs() < 1e-12);
                prop_assert!(st.s[0] >= 0.0);
                prop_assert!(st.u >= 0.0);
            }
        }
    }
}
