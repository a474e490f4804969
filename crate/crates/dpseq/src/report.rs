//! Run manifests and output serialization shared by all CLI commands.

use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::Result;
use crate::mc::CurvePoint;

pub const SPEC_VERSION: &str = "1";

/// Header present verbatim in every output file: schema version, the exact
/// command, the seed, a timestamp, and a build id.
///
/// The timestamp honors `SOURCE_DATE_EPOCH` so runs can be made byte-identical.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub spec_version: String,
    pub command: Vec<String>,
    pub master_seed: u64,
    pub unix_timestamp: u64,
    pub build: String,
}

impl RunManifest {
    pub fn new(command: Vec<String>, master_seed: u64) -> Self {
        let unix_timestamp = std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or_else(|| {
                SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0)
            });
        RunManifest {
            spec_version: SPEC_VERSION.to_string(),
            command,
            master_seed,
            unix_timestamp,
            build: format!("dpseq-{}", env!("CARGO_PKG_VERSION")),
        }
    }
}

/// Envelope for JSON reports: manifest + payload.
#[derive(Debug, Clone, Serialize)]
pub struct Report<T: Serialize> {
    pub manifest: RunManifest,
    pub result: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(manifest: RunManifest, result: T) -> Self {
        Report { manifest, result }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

pub const CURVE_CSV_HEADER: &str =
    "b,arl_mean,arl_stderr,delay_mean,delay_stderr,arl_censored_frac";

/// Curve CSV with the fixed column set, manifest echoed in `#` comment lines.
pub fn write_curve_csv(path: &Path, manifest: &RunManifest, points: &[CurvePoint]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "# spec_version={}", manifest.spec_version)?;
    writeln!(f, "# command={}", manifest.command.join(" "))?;
    writeln!(f, "# master_seed={}", manifest.master_seed)?;
    writeln!(f, "# unix_timestamp={}", manifest.unix_timestamp)?;
    writeln!(f, "# build={}", manifest.build)?;
    writeln!(f, "{CURVE_CSV_HEADER}")?;
    for p in points {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            p.threshold,
            p.arl.mean,
            p.arl.stderr,
            p.delay.mean,
            p.delay.stderr,
            p.arl.censored_fraction
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::EstimateReport;

    #[test]
    fn manifest_honors_source_date_epoch() {
        // run in-process: set, build, restore
        std::env::set_var("SOURCE_DATE_EPOCH", "1700000000");
        let m = RunManifest::new(vec!["dpseq".into(), "bounds".into()], 7);
        std::env::remove_var("SOURCE_DATE_EPOCH");
        assert_eq!(m.unix_timestamp, 1700000000);
        assert_eq!(m.spec_version, "1");
    }

    #[test]
    fn curve_csv_schema() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        let m = RunManifest::new(vec!["dpseq".into()], 1);
        let rep = EstimateReport {
            mean: 10.0,
            stderr: 0.5,
            censored_fraction: 0.0,
            n_trials: 100,
            valid: true,
        };
        let pts = vec![CurvePoint {
            threshold: 4.0,
            arl: rep.clone(),
            delay: rep,
        }];
        write_curve_csv(&p, &m, &pts).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains(CURVE_CSV_HEADER));
        assert!(text.contains("4,10,0.5,10,0.5,0"));
    }
}
