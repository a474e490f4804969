//! Synthetic multi-stream generation, CSV ingestion, standardization, PCA
//! reduction, and Gaussian model fitting.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc::ChangeScenario;
use crate::model::{DistributionSpec, StreamModel};
use crate::noise::RngHandle;

/// Dense row-major matrix of observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Data(format!(
                    "ragged rows: row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    /// Row slice `[a, b)` as a new matrix.
    pub fn slice_rows(&self, a: usize, b: usize) -> Result<Matrix> {
        if a >= b || b > self.rows {
            return Err(Error::Data(format!(
                "row range [{a}, {b}) invalid for matrix with {} rows",
                self.rows
            )));
        }
        Ok(Matrix {
            rows: b - a,
            cols: self.cols,
            data: self.data[a * self.cols..b * self.cols].to_vec(),
        })
    }
}

/// Time-aligned observations for K streams: stream k holds a (T, d_k) matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiStreamSeries {
    streams: Vec<Matrix>,
    t_len: usize,
}

impl MultiStreamSeries {
    pub fn new(streams: Vec<Matrix>) -> Result<Self> {
        let t_len = streams.first().map(|m| m.n_rows()).unwrap_or(0);
        for (k, m) in streams.iter().enumerate() {
            if m.n_rows() != t_len {
                return Err(Error::Data(format!(
                    "stream {k} has {} rows, expected {t_len} (all streams must share T)",
                    m.n_rows()
                )));
            }
            if m.n_cols() == 0 {
                return Err(Error::Data(format!("stream {k} has zero feature columns")));
            }
        }
        Ok(MultiStreamSeries { streams, t_len })
    }

    pub fn k(&self) -> usize {
        self.streams.len()
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn dims(&self) -> Vec<usize> {
        self.streams.iter().map(|m| m.n_cols()).collect()
    }

    pub fn stream(&self, k: usize) -> &Matrix {
        &self.streams[k]
    }

    pub fn cell(&self, t: usize, k: usize) -> &[f64] {
        self.streams[k].row(t)
    }

    pub fn set_cell(&mut self, t: usize, k: usize, value: &[f64]) -> Result<()> {
        if k >= self.streams.len() {
            return Err(Error::Data(format!("stream index {k} out of range")));
        }
        if t >= self.t_len {
            return Err(Error::Data(format!("time index {t} out of range")));
        }
        let row = self.streams[k].row_mut(t);
        if value.len() != row.len() {
            return Err(Error::DimensionMismatch {
                stream: k,
                expected: row.len(),
                got: value.len(),
            });
        }
        row.copy_from_slice(value);
        Ok(())
    }

    /// Rows flattened across streams in stream order, as consumed by the
    /// detector engine.
    pub fn rows(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        let width: usize = self.streams.iter().map(|m| m.n_cols()).sum();
        (0..self.t_len).map(move |t| {
            let mut row = Vec::with_capacity(width);
            for m in &self.streams {
                row.extend_from_slice(m.row(t));
            }
            row
        })
    }
}

/// Draw a synthetic series for a change scenario. Draw order is t, then
/// stream, then feature — the exact order used by the Monte Carlo trial
/// runner, so identical RNG streams yield identical observations.
///
/// The scenario must be valid for `models.len()` streams.
pub fn generate(
    models: &[StreamModel],
    scenario: &ChangeScenario,
    t_len: usize,
    rng: &mut RngHandle,
) -> MultiStreamSeries {
    let k = models.len();
    let mut affected = vec![false; k];
    for &s in &scenario.affected {
        affected[s] = true;
    }
    let mut streams: Vec<Matrix> = models
        .iter()
        .map(|m| Matrix::zeros(t_len, m.dim()))
        .collect();
    let mut buf = Vec::new();
    for t in 0..t_len {
        // times are 1-based in the detector; row t holds time t+1
        let post_t = match scenario.tau {
            Some(tau) => (t as u64 + 1) > tau,
            None => false,
        };
        for (i, m) in models.iter().enumerate() {
            let law = if post_t && affected[i] { m.post() } else { m.pre() };
            buf.clear();
            law.sample_into(rng, &mut buf);
            streams[i].row_mut(t).copy_from_slice(&buf);
        }
    }
    MultiStreamSeries {
        streams,
        t_len,
    }
}

/// A parsed CSV file: header names plus the numeric body.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub headers: Vec<String>,
    pub matrix: Matrix,
}

/// Parse a headered CSV of numeric rows. Non-numeric cells and ragged rows
/// are reported with their position.
pub fn load_csv(path: &Path) -> Result<CsvTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: bad header: {e}", path.display())))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let cols = headers.len();
    let mut data = Vec::new();
    let mut rows = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("{}: row {i}: {e}", path.display())))?;
        if record.len() != cols {
            return Err(Error::Data(format!(
                "{}: ragged row {i}: {} fields, expected {cols}",
                path.display(),
                record.len()
            )));
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::CsvCell {
                row: i,
                col: j,
                msg: format!("non-numeric cell {cell:?}"),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    Ok(CsvTable {
        headers,
        matrix: Matrix {
            rows,
            cols,
            data,
        },
    })
}

/// Per-feature z-scoring learned from a benign training segment. Standard
/// deviations are floored at 1e-12; floored feature indices are recorded so
/// callers can warn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub floored: Vec<usize>,
}

pub const VARIANCE_FLOOR: f64 = 1e-12;

impl Standardizer {
    pub fn fit(train: &Matrix) -> Result<Self> {
        if train.n_rows() < 2 {
            return Err(Error::Data(format!(
                "standardizer needs >= 2 training rows, got {}",
                train.n_rows()
            )));
        }
        let n = train.n_rows() as f64;
        let d = train.n_cols();
        let mut mean = vec![0.0; d];
        for row in train.rows_iter() {
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; d];
        for row in train.rows_iter() {
            for j in 0..d {
                let c = row[j] - mean[j];
                var[j] += c * c;
            }
        }
        let mut std = Vec::with_capacity(d);
        let mut floored = Vec::new();
        for (j, v) in var.iter().enumerate() {
            let s = (v / (n - 1.0)).sqrt();
            if s < VARIANCE_FLOOR {
                floored.push(j);
                std.push(VARIANCE_FLOOR);
            } else {
                std.push(s);
            }
        }
        Ok(Standardizer {
            mean,
            std,
            floored,
        })
    }

    pub fn apply(&self, m: &Matrix) -> Result<Matrix> {
        if m.n_cols() != self.mean.len() {
            return Err(Error::Data(format!(
                "standardizer fitted on {} features, input has {}",
                self.mean.len(),
                m.n_cols()
            )));
        }
        let mut out = m.clone();
        for i in 0..out.n_rows() {
            let row = out.row_mut(i);
            for j in 0..row.len() {
                row[j] = (row[j] - self.mean[j]) / self.std[j];
            }
        }
        Ok(out)
    }

    pub fn apply_row(&self, row: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for j in 0..row.len() {
            out.push((row[j] - self.mean[j]) / self.std[j]);
        }
    }
}

/// PCA projection: centering mean, retained components (orig_dim x retained,
/// columns orthonormal), and the full eigenvalue spectrum in descending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// components[j][c] = entry j of retained component c
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub retained: usize,
}

const JACOBI_TOL: f64 = 1e-10;
const JACOBI_MAX_SWEEPS: usize = 100;

fn off_diag_norm(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut s = 0.0;
    for p in 0..n {
        for q in 0..n {
            if p != q {
                s += a[p][q] * a[p][q];
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, eigenvectors as columns), unsorted.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = a.len();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let off = off_diag_norm(&a);
        if off <= JACOBI_TOL {
            let eig = (0..n).map(|i| a[i][i]).collect();
            return Ok((eig, v));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for i in 0..n {
                    let aip = a[i][p];
                    let aiq = a[i][q];
                    a[i][p] = c * aip - s * aiq;
                    a[i][q] = s * aip + c * aiq;
                }
                for j in 0..n {
                    let apj = a[p][j];
                    let aqj = a[q][j];
                    a[p][j] = c * apj - s * aqj;
                    a[q][j] = s * apj + c * aqj;
                }
                for i in 0..n {
                    let vip = v[i][p];
                    let viq = v[i][q];
                    v[i][p] = c * vip - s * viq;
                    v[i][q] = s * vip + c * viq;
                }
            }
        }
    }
    Err(Error::JacobiNonConvergence {
        sweeps: JACOBI_MAX_SWEEPS,
        off: off_diag_norm(&a),
    })
}

/// Fit PCA on a training matrix: two-pass mean-centered covariance, Jacobi
/// eigendecomposition, eigenpairs sorted descending, sign convention that
/// each component's largest-magnitude entry is positive.
pub fn pca_fit(train: &Matrix, retain: usize) -> Result<PcaProjection> {
    let d = train.n_cols();
    let n = train.n_rows();
    if retain == 0 || retain > d {
        return Err(Error::Data(format!(
            "retain must be in 1..={d}, got {retain}"
        )));
    }
    if n <= retain {
        return Err(Error::Data(format!(
            "need more than {retain} training rows, got {n}"
        )));
    }
    let mut mean = vec![0.0; d];
    for row in train.rows_iter() {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![vec![0.0; d]; d];
    for row in train.rows_iter() {
        for p in 0..d {
            let cp = row[p] - mean[p];
            for q in p..d {
                cov[p][q] += cp * (row[q] - mean[q]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for p in 0..d {
        for q in p..d {
            cov[p][q] /= denom;
            cov[q][p] = cov[p][q];
        }
    }
    let (eig, vecs) = jacobi_eigen(cov)?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig[j].partial_cmp(&eig[i]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig[i]).collect();
    let mut components = vec![vec![0.0; retain]; d];
    for (c, &src) in order.iter().take(retain).enumerate() {
        // sign fix: largest-magnitude entry positive
        let mut best = 0usize;
        for j in 1..d {
            if vecs[j][src].abs() > vecs[best][src].abs() {
                best = j;
            }
        }
        let flip = if vecs[best][src] < 0.0 { -1.0 } else { 1.0 };
        for (j, comp_row) in components.iter_mut().enumerate() {
            comp_row[c] = flip * vecs[j][src];
        }
    }
    Ok(PcaProjection {
        mean,
        components,
        eigenvalues,
        retained: retain,
    })
}

impl PcaProjection {
    pub fn transform(&self, m: &Matrix) -> Result<Matrix> {
        let d = self.mean.len();
        if m.n_cols() != d {
            return Err(Error::Data(format!(
                "projection fitted on {d} features, input has {}",
                m.n_cols()
            )));
        }
        let mut out = Matrix::zeros(m.n_rows(), self.retained);
        let mut buf = Vec::with_capacity(self.retained);
        for i in 0..m.n_rows() {
            self.transform_row(m.row(i), &mut buf);
            out.row_mut(i).copy_from_slice(&buf);
        }
        Ok(out)
    }

    pub fn transform_row(&self, row: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.retained, 0.0);
        for j in 0..self.mean.len() {
            let c = row[j] - self.mean[j];
            for (o, comp) in out.iter_mut().zip(&self.components[j]) {
                *o += c * comp;
            }
        }
    }
}

/// Fit a truncated DiagGaussian pre/post pair from two data segments by
/// per-dimension sample moments. Fails when the truncated information
/// numbers are not both positive (truncation validity).
pub fn fit_gaussian_models(
    pre_segment: &Matrix,
    post_segment: &Matrix,
    trunc_level: f64,
) -> Result<StreamModel> {
    if pre_segment.n_cols() != post_segment.n_cols() {
        return Err(Error::Data(format!(
            "segment dimensions differ: {} vs {}",
            pre_segment.n_cols(),
            post_segment.n_cols()
        )));
    }
    let pre = fit_diag_gaussian(pre_segment)?;
    let post = fit_diag_gaussian(post_segment)?;
    let model = StreamModel::new(pre, post, Some(trunc_level))?;
    let (i0, i1) = model.truncated_info()?;
    if !(i0 > 0.0 && i1 > 0.0) {
        return Err(Error::TruncationInvalid {
            tilde_i0: i0,
            tilde_i1: i1,
        });
    }
    Ok(model)
}

fn fit_diag_gaussian(seg: &Matrix) -> Result<DistributionSpec> {
    if seg.n_rows() < 2 {
        return Err(Error::Data(format!(
            "segment needs >= 2 rows, got {}",
            seg.n_rows()
        )));
    }
    let n = seg.n_rows() as f64;
    let d = seg.n_cols();
    let mut mu = vec![0.0; d];
    for row in seg.rows_iter() {
        for (m, &x) in mu.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mu {
        *m /= n;
    }
    let mut var = vec![0.0; d];
    for row in seg.rows_iter() {
        for j in 0..d {
            let c = row[j] - mu[j];
            var[j] += c * c;
        }
    }
    let sigma: Vec<f64> = var
        .iter()
        .map(|v| (v / (n - 1.0)).max(VARIANCE_FLOOR).sqrt())
        .collect();
    if d == 1 {
        Ok(DistributionSpec::Gaussian {
            mu: mu[0],
            sigma: sigma[0],
        })
    } else {
        Ok(DistributionSpec::DiagGaussian { mu, sigma })
    }
}

/// Smallest trunc level on a doubling grid making the truncated post-change
/// information at least half the untruncated KL.
pub fn auto_trunc_level(pre_segment: &Matrix, post_segment: &Matrix) -> Result<(f64, StreamModel)> {
    let pre = fit_diag_gaussian(pre_segment)?;
    let post = fit_diag_gaussian(post_segment)?;
    let untruncated = StreamModel::new(pre, post, None)?;
    let kl = untruncated.kl_info();
    if !(kl > 0.0) {
        return Err(Error::TruncationInvalid {
            tilde_i0: 0.0,
            tilde_i1: 0.0,
        });
    }
    let mut dp = 0.25f64;
    for _ in 0..40 {
        match fit_gaussian_models(pre_segment, post_segment, dp) {
            Ok(model) => {
                let (i0, _) = model.truncated_info()?;
                if i0 >= 0.5 * kl {
                    return Ok((dp, model));
                }
            }
            Err(Error::TruncationInvalid { .. }) => {}
            Err(e) => return Err(e),
        }
        dp *= 2.0;
    }
    Err(Error::Data(
        "auto truncation search failed: no level reaches 50% of the untruncated KL".into(),
    ))
}

/// Manifest binding per-stream CSV files to row segments:
/// `{streams: [{id, file, pre_rows: [a,b], post_rows: [c,d]}]}` with
/// half-open 0-based row ranges.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataManifest {
    pub streams: Vec<ManifestStream>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestStream {
    pub id: String,
    pub file: String,
    pub pre_rows: [usize; 2],
    pub post_rows: [usize; 2],
}

impl ManifestStream {
    pub fn validate(&self) -> Result<()> {
        let [a, b] = self.pre_rows;
        let [c, d] = self.post_rows;
        if a >= b || c >= d {
            return Err(Error::Data(format!(
                "stream {}: empty row range (pre {:?}, post {:?})",
                self.id, self.pre_rows, self.post_rows
            )));
        }
        if a < d && c < b {
            return Err(Error::Data(format!(
                "stream {}: pre rows {:?} overlap post rows {:?}",
                self.id, self.pre_rows, self.post_rows
            )));
        }
        Ok(())
    }
}

impl DataManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: DataManifest = serde_json::from_str(&text)?;
        if m.streams.is_empty() {
            return Err(Error::Data("manifest has no streams".into()));
        }
        for s in &m.streams {
            s.validate()?;
        }
        Ok(m)
    }
}

/// Per-stream raw-feature -> model-space preprocessing chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub standardizer: Standardizer,
    pub pca: PcaProjection,
}

impl Transform {
    pub fn apply_row(&self, row: &[f64], scratch: &mut Vec<f64>, out: &mut Vec<f64>) {
        self.standardizer.apply_row(row, scratch);
        self.pca.transform_row(scratch, out);
    }

    pub fn input_dim(&self) -> usize {
        self.standardizer.mean.len()
    }
}

/// One fitted stream: preprocessing chain plus the truncated Gaussian model
/// in the reduced space.
#[derive(Debug, Clone)]
pub struct FittedStream {
    pub id: String,
    pub transform: Transform,
    pub model: StreamModel,
    pub trunc_level: f64,
}

/// Full fitting pipeline for one stream: standardize on the pre-change
/// segment, PCA to `retain` components, project both segments, fit the
/// truncated Gaussian pair (auto trunc level unless given).
pub fn fit_stream(
    id: &str,
    pre_raw: &Matrix,
    post_raw: &Matrix,
    retain: usize,
    trunc_level: Option<f64>,
) -> Result<FittedStream> {
    let standardizer = Standardizer::fit(pre_raw)?;
    let z_pre = standardizer.apply(pre_raw)?;
    let z_post = standardizer.apply(post_raw)?;
    let pca = pca_fit(&z_pre, retain)?;
    let p_pre = pca.transform(&z_pre)?;
    let p_post = pca.transform(&z_post)?;
    let (dp, model) = match trunc_level {
        Some(dp) => (dp, fit_gaussian_models(&p_pre, &p_post, dp)?),
        None => auto_trunc_level(&p_pre, &p_post)?,
    };
    Ok(FittedStream {
        id: id.to_string(),
        transform: Transform {
            standardizer,
            pca,
        },
        model,
        trunc_level: dp,
    })
}

/// Fit every stream in a manifest. `base` resolves relative file paths.
pub fn fit_manifest(
    manifest: &DataManifest,
    base: &Path,
    retain: usize,
    trunc_level: Option<f64>,
) -> Result<Vec<FittedStream>> {
    let mut out = Vec::with_capacity(manifest.streams.len());
    for s in &manifest.streams {
        let path = base.join(&s.file);
        let table = load_csv(&path)?;
        let m = &table.matrix;
        if s.pre_rows[1] > m.n_rows() || s.post_rows[1] > m.n_rows() {
            return Err(Error::Data(format!(
                "stream {}: row ranges exceed file length {}",
                s.id,
                m.n_rows()
            )));
        }
        let pre = m.slice_rows(s.pre_rows[0], s.pre_rows[1])?;
        let post = m.slice_rows(s.post_rows[0], s.post_rows[1])?;
        out.push(fit_stream(&s.id, &pre, &post, retain, trunc_level)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DistributionSpec;
    use std::io::Write;

    fn laplace_model(mu0: f64, mu1: f64) -> StreamModel {
        StreamModel::new(
            DistributionSpec::Laplace { mu: mu0, scale: 1.0 },
            DistributionSpec::Laplace { mu: mu1, scale: 1.0 },
            None,
        )
        .unwrap()
    }

    #[test]
    fn generate_no_change_mean_lln() {
        let models = vec![laplace_model(0.0, 0.2)];
        let mut rng = RngHandle::derive(1, 0, "gen");
        let series = generate(&models, &ChangeScenario::no_change(), 1_000_000, &mut rng);
        let m = series.stream(0);
        let mean: f64 = m.rows_iter().map(|r| r[0]).sum::<f64>() / m.n_rows() as f64;
        assert!(mean.abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn generate_immediate_change_uses_post_law() {
        let models = vec![laplace_model(0.0, 3.0), laplace_model(0.0, 3.0)];
        let mut rng = RngHandle::derive(2, 0, "gen");
        let sc = ChangeScenario::immediate(vec![1]);
        let series = generate(&models, &sc, 100_000, &mut rng);
        let m0: f64 = series.stream(0).rows_iter().map(|r| r[0]).sum::<f64>() / 100_000.0;
        let m1: f64 = series.stream(1).rows_iter().map(|r| r[0]).sum::<f64>() / 100_000.0;
        assert!(m0.abs() < 0.05, "unaffected stream mean {m0}");
        assert!((m1 - 3.0).abs() < 0.05, "affected stream mean {m1}");
    }

    #[test]
    fn generate_tau_boundary() {
        // tau = 5: rows 0..5 (times 1..5) pre, rows 5.. post
        let models = vec![laplace_model(0.0, 100.0)];
        let mut rng = RngHandle::derive(3, 0, "gen");
        let sc = ChangeScenario {
            tau: Some(5),
            affected: vec![0],
        };
        let series = generate(&models, &sc, 10, &mut rng);
        for t in 0..5 {
            assert!(series.cell(t, 0)[0].abs() < 50.0);
        }
        for t in 5..10 {
            assert!(series.cell(t, 0)[0] > 50.0);
        }
    }

    #[test]
    fn csv_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ok.csv");
        std::fs::write(&p, "a,b\n1.0,2.0\n3.5,-4\n0,0.25\n").unwrap();
        let t = load_csv(&p).unwrap();
        assert_eq!(t.headers, vec!["a", "b"]);
        assert_eq!(t.matrix.n_rows(), 3);
        assert_eq!(t.matrix.n_cols(), 2);
        assert_eq!(t.matrix.row(1), &[3.5, -4.0]);

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "a,b\n1.0,x\n").unwrap();
        match load_csv(&bad) {
            Err(Error::CsvCell { row: 0, col: 1, .. }) => {}
            other => panic!("expected CsvCell error, got {other:?}"),
        }

        let ragged = dir.path().join("ragged.csv");
        std::fs::write(&ragged, "a,b\n1.0,2.0\n3.0\n").unwrap();
        assert!(matches!(load_csv(&ragged), Err(Error::Data(_))));
    }

    #[test]
    fn csv_wide_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("wide.csv");
        let mut f = std::fs::File::create(&p).unwrap();
        let headers: Vec<String> = (0..115).map(|i| format!("f{i}")).collect();
        writeln!(f, "{}", headers.join(",")).unwrap();
        for r in 0..3 {
            let row: Vec<String> = (0..115).map(|c| format!("{}", r * 115 + c)).collect();
            writeln!(f, "{}", row.join(",")).unwrap();
        }
        drop(f);
        let t = load_csv(&p).unwrap();
        assert_eq!(t.matrix.n_cols(), 115);
    }

    #[test]
    fn standardizer_roundtrip() {
        let mut rng = RngHandle::derive(4, 0, "std");
        let model = laplace_model(3.0, 0.0);
        let series = generate(&[model], &ChangeScenario::no_change(), 5000, &mut rng);
        let m = series.stream(0);
        let s = Standardizer::fit(m).unwrap();
        assert!(s.floored.is_empty());
        let z = s.apply(m).unwrap();
        let n = z.n_rows() as f64;
        let mean: f64 = z.rows_iter().map(|r| r[0]).sum::<f64>() / n;
        let var: f64 = z.rows_iter().map(|r| r[0] * r[0]).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 1e-10, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-8, "var {var}");
    }

    #[test]
    fn standardizer_floors_constant_column() {
        let m = Matrix::from_rows(&[vec![1.0, 7.0], vec![2.0, 7.0], vec![3.0, 7.0]]).unwrap();
        let s = Standardizer::fit(&m).unwrap();
        assert_eq!(s.floored, vec![1]);
        assert_eq!(s.std[1], VARIANCE_FLOOR);
        assert!(Standardizer::fit(&m.slice_rows(0, 1).unwrap()).is_err());
    }

    #[test]
    fn pca_rank_one_line() {
        // points exactly on the line y = 2x
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let x = (i as f64 - 25.0) * 0.1;
                vec![x, 2.0 * x]
            })
            .collect();
        let m = Matrix::from_rows(&rows).unwrap();
        let p = pca_fit(&m, 1).unwrap();
        let total: f64 = {
            let n = m.n_rows() as f64;
            let mx: f64 = m.rows_iter().map(|r| r[0]).sum::<f64>() / n;
            let my: f64 = m.rows_iter().map(|r| r[1]).sum::<f64>() / n;
            m.rows_iter()
                .map(|r| (r[0] - mx).powi(2) + (r[1] - my).powi(2))
                .sum::<f64>()
                / (n - 1.0)
        };
        assert!((p.eigenvalues[0] - total).abs() < 1e-8);
        assert!(p.eigenvalues[1].abs() <= 1e-10);
        // sign convention: largest-magnitude entry positive
        let col: Vec<f64> = (0..2).map(|j| p.components[j][0]).collect();
        let mag = col.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(col.iter().any(|&c| c.abs() == mag && c > 0.0));
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        use rand::Rng;
        let mut rng = RngHandle::derive(seed, 0, "mat");
        let data: Vec<Vec<f64>> = (0..rows)
            .map(|_| {
                (0..cols)
                    .map(|c| {
                        let base: f64 = rng.random::<f64>() - 0.5;
                        // correlate columns so the spectrum is interesting
                        base * (1.0 + c as f64)
                    })
                    .collect()
            })
            .collect();
        Matrix::from_rows(&data).unwrap()
    }

    #[test]
    fn pca_trace_identity_and_orthonormality() {
        let m = random_matrix(400, 10, 11);
        let p = pca_fit(&m, 5).unwrap();
        let n = m.n_rows() as f64;
        let mut mean = vec![0.0; 10];
        for r in m.rows_iter() {
            for (a, &b) in mean.iter_mut().zip(r) {
                *a += b;
            }
        }
        for a in &mut mean {
            *a /= n;
        }
        let trace: f64 = (0..10)
            .map(|j| {
                m.rows_iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0)
            })
            .sum();
        let eig_sum: f64 = p.eigenvalues.iter().sum();
        assert!((eig_sum - trace).abs() < 1e-6, "trace {trace} eig {eig_sum}");
        for w in p.eigenvalues.windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
        for c1 in 0..5 {
            for c2 in 0..5 {
                let dot: f64 = (0..10).map(|j| p.components[j][c1] * p.components[j][c2]).sum();
                let want = if c1 == c2 { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-8, "c{c1}.c{c2} = {dot}");
            }
        }
    }

    #[test]
    fn pca_transform_diagonalizes_training_covariance() {
        let m = random_matrix(600, 6, 13);
        let p = pca_fit(&m, 6).unwrap();
        let z = p.transform(&m).unwrap();
        let n = z.n_rows() as f64;
        for a in 0..6 {
            for b in 0..6 {
                let ma: f64 = z.rows_iter().map(|r| r[a]).sum::<f64>() / n;
                let mb: f64 = z.rows_iter().map(|r| r[b]).sum::<f64>() / n;
                let cov: f64 = z
                    .rows_iter()
                    .map(|r| (r[a] - ma) * (r[b] - mb))
                    .sum::<f64>()
                    / (n - 1.0);
                let want = if a == b { p.eigenvalues[a] } else { 0.0 };
                let scale = p.eigenvalues[0].max(1.0);
                assert!(
                    (cov - want).abs() <= 1e-6 * scale,
                    "cov[{a}][{b}] = {cov}, want {want}"
                );
            }
        }
    }

    #[test]
    fn fit_gaussian_recovers_means() {
        let pre_m = StreamModel::new(
            DistributionSpec::Gaussian { mu: 0.0, sigma: 1.0 },
            DistributionSpec::Gaussian { mu: 0.5, sigma: 1.0 },
            None,
        )
        .unwrap();
        let mut rng = RngHandle::derive(6, 0, "fit");
        let pre_series = generate(
            &[pre_m.clone()],
            &ChangeScenario::no_change(),
            100_000,
            &mut rng,
        );
        let post_series = generate(
            &[pre_m],
            &ChangeScenario::all_streams(1),
            100_000,
            &mut rng,
        );
        let model = fit_gaussian_models(pre_series.stream(0), post_series.stream(0), 2.5).unwrap();
        match (model.pre(), model.post()) {
            (
                DistributionSpec::Gaussian { mu: m0, .. },
                DistributionSpec::Gaussian { mu: m1, .. },
            ) => {
                assert!(m0.abs() < 0.02, "m0 {m0}");
                assert!((m1 - 0.5).abs() < 0.02, "m1 {m1}");
            }
            _ => panic!("expected scalar gaussians"),
        }
        assert!(model.detector_ready());
    }

    #[test]
    fn fit_rejects_identical_segments() {
        let m = random_matrix(500, 1, 7);
        assert!(fit_gaussian_models(&m, &m, 2.5).is_err());
    }

    #[test]
    fn auto_trunc_reaches_half_kl() {
        let base = StreamModel::new(
            DistributionSpec::Gaussian { mu: 0.0, sigma: 1.0 },
            DistributionSpec::Gaussian { mu: 1.0, sigma: 1.0 },
            None,
        )
        .unwrap();
        let mut rng = RngHandle::derive(8, 0, "auto");
        let pre = generate(&[base.clone()], &ChangeScenario::no_change(), 50_000, &mut rng);
        let post = generate(&[base], &ChangeScenario::all_streams(1), 50_000, &mut rng);
        let (dp, model) = auto_trunc_level(pre.stream(0), post.stream(0)).unwrap();
        let (i0, _) = model.truncated_info().unwrap();
        assert!(i0 >= 0.5 * model.kl_info() - 1e-12, "dp {dp} i0 {i0}");
    }

    #[test]
    fn manifest_validation() {
        let ok = ManifestStream {
            id: "d1".into(),
            file: "d1.csv".into(),
            pre_rows: [0, 100],
            post_rows: [100, 200],
        };
        assert!(ok.validate().is_ok());
        let overlap = ManifestStream {
            pre_rows: [0, 100],
            post_rows: [50, 150],
            ..ok.clone()
        };
        assert!(overlap.validate().is_err());
        let empty = ManifestStream {
            pre_rows: [10, 10],
            ..ok
        };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn series_rows_flatten_in_stream_order() {
        let s0 = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let s1 = Matrix::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let series = MultiStreamSeries::new(vec![s0, s1]).unwrap();
        let rows: Vec<Vec<f64>> = series.rows().collect();
        assert_eq!(rows, vec![vec![1.0, 2.0, 5.0], vec![3.0, 4.0, 6.0]]);
        assert_eq!(series.dims(), vec![2, 1]);
    }
}
