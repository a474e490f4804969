//! Canonical experiment presets.

use crate::error::{Error, Result};
use crate::model::{DistributionSpec, StreamModel};

/// K = 5 identical Laplace streams: Lap(0,1) -> Lap(0.2,1), untruncated
/// (the raw LLR is already bounded, sensitivity 0.4 per stream).
pub fn laplace_k5() -> Vec<StreamModel> {
    (0..5)
        .map(|_| {
            StreamModel::new(
                DistributionSpec::Laplace { mu: 0.0, scale: 1.0 },
                DistributionSpec::Laplace { mu: 0.2, scale: 1.0 },
                None,
            )
            .expect("preset is valid")
        })
        .collect()
}

/// K = 5 identical Gaussian streams: N(0,1) -> N(0.5,1), truncated at 2.5.
pub fn gauss_k5_trunc() -> Vec<StreamModel> {
    (0..5)
        .map(|_| {
            StreamModel::new(
                DistributionSpec::Gaussian { mu: 0.0, sigma: 1.0 },
                DistributionSpec::Gaussian { mu: 0.5, sigma: 1.0 },
                Some(2.5),
            )
            .expect("preset is valid")
        })
        .collect()
}

pub const PRESET_NAMES: &[&str] = &["laplace-k5", "gauss-k5-trunc2.5"];

pub fn by_name(name: &str) -> Result<Vec<StreamModel>> {
    match name {
        "laplace-k5" => Ok(laplace_k5()),
        "gauss-k5-trunc2.5" => Ok(gauss_k5_trunc()),
        other => Err(Error::Usage(format!(
            "unknown preset {other:?}; available: {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::global_sensitivity;

    #[test]
    fn laplace_preset_sensitivity() {
        let m = laplace_k5();
        assert_eq!(m.len(), 5);
        assert!((global_sensitivity(&m).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn gauss_preset_sensitivity() {
        let m = gauss_k5_trunc();
        assert_eq!(m.len(), 5);
        assert!((global_sensitivity(&m).unwrap() - 2.5).abs() < 1e-12);
        assert!(m.iter().all(|s| s.detector_ready()));
    }

    #[test]
    fn lookup() {
        assert!(by_name("laplace-k5").is_ok());
        assert!(by_name("gauss-k5-trunc2.5").is_ok());
        assert!(by_name("nope").is_err());
    }
}
