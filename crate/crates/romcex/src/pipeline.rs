//! Batch pipeline: JSON configuration, persisted artifacts, and the five
//! stage commands behind the command-line driver.
//!
//! Each stage reads its inputs from the run directory and writes its
//! outputs there, so a pipeline can be resumed per stage.  Artifacts are
//! CSV for numbers and JSON for structure; every CSV has a JSON sidecar
//! carrying shapes, provenance hashes, and the seed.  All writes are
//! atomic (temp file + rename) and byte-deterministic for a fixed
//! configuration and seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bayes::{
    bayes_quadrature_1d, cex_polynomial, gmkf_update, gpe_predict, gpe_train, sampled_loss,
    EnsembleState, KernelSpec, MeanMode,
};
use crate::darcy::{
    field_modes, generate_snapshots, qoi_inflow, sample_conductivity, solve_steady, BoundarySpec,
    DarcyModel, EdgeBc, Grid2D, KleFieldSpec, PlanEntry,
};
use crate::error::{Error, Result};
use crate::linalg::{chol_psd, DenseMatrix};
use crate::parametric_map::{kle, truncate_by_threshold, KleBasis, SnapshotSet};
use crate::rng::{standard_normal_vec, stream_rng, CH_ENSEMBLE, CH_FIELD, CH_OBS};
use crate::rom::{affine_darcy_operator, pod_basis, rbm_offline, rbm_online, tensor_als, Tensor3};
use crate::uq::{NoiseSpec, ProductSampler};

// ── artifact names ──────────────────────────────────────────────────

pub const SNAPSHOTS_CSV: &str = "snapshots.csv";
pub const SNAPSHOTS_JSON: &str = "snapshots.json";
pub const BASIS_CSV: &str = "basis.csv";
pub const SIGMAS_CSV: &str = "singular_values.csv";
pub const ROM_ERRORS_CSV: &str = "rom_errors.csv";
pub const ROM_JSON: &str = "rom.json";
pub const RBM_ENERGIES_CSV: &str = "rbm_energies.csv";
pub const TENSOR_CSV: &str = "tensor.csv";
pub const TENSOR_CP_JSON: &str = "tensor_cp.json";
pub const TENSOR_HISTORY_CSV: &str = "tensor_history.csv";
pub const PREDICTIONS_CSV: &str = "predictions.csv";
pub const LOO_CSV: &str = "loo.csv";
pub const EMULATOR_JSON: &str = "emulator.json";
pub const POSTERIOR_MEAN_CSV: &str = "posterior_mean.csv";
pub const UPDATED_ENSEMBLE_CSV: &str = "updated_ensemble.csv";
pub const COMPARISON_JSON: &str = "comparison.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";

/// Updated ensembles larger than this (entries) are summarized instead of
/// persisted in full.
const ENSEMBLE_PERSIST_CAP: usize = 200_000;

// ── configuration ───────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    #[serde(default)]
    pub rom: Option<RomConfig>,
    #[serde(default)]
    pub emulator: Option<EmulatorConfig>,
    #[serde(default)]
    pub assimilation: Option<AssimilationConfig>,
    #[serde(default)]
    pub uq: Option<UqConfig>,
}

/// Exactly one snapshot source: a Darcy generator or a directory that
/// already holds a snapshot artifact pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Darcy(DarcyGenConfig),
    Snapshots(SnapshotSource),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotSource {
    /// Directory containing snapshots.csv and snapshots.json.
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DarcyGenConfig {
    pub grid: GridConfig,
    pub field: KleFieldSpec,
    pub source: SourceConfig,
    pub boundary: BoundarySpec,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    #[serde(default)]
    pub extraction_cells: Vec<usize>,
}

/// Volumetric source term, per cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    /// The same value in every cell.
    Uniform { value: f64 },
    /// The value on the extraction cells, zero elsewhere.
    Extraction { value: f64 },
    /// One value per cell.
    Explicit { values: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RomMethod {
    Kle,
    Pod,
    Rbm,
    Tensor,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RomConfig {
    pub method: RomMethod,
    /// Number of modes to keep; None keeps every numerically nonzero one.
    #[serde(default)]
    pub rank: Option<usize>,
    /// Singular-value cutoff; mutually exclusive with rank.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub rbm: Option<RbmConfig>,
    #[serde(default)]
    pub tensor: Option<TensorConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbmConfig {
    /// Cell partition into conductivity subdomains; None splits the grid
    /// into left and right halves.
    #[serde(default)]
    pub subdomains: Option<Vec<Vec<usize>>>,
    /// Training conductivity vectors, one entry per subdomain, all > 0.
    pub train_params: Vec<Vec<f64>>,
}

fn default_tensor_rank() -> usize {
    3
}
fn default_tensor_sweeps() -> usize {
    50
}
fn default_tensor_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorConfig {
    #[serde(default = "default_tensor_rank")]
    pub rank: usize,
    #[serde(default = "default_tensor_sweeps")]
    pub sweeps: usize,
    #[serde(default = "default_tensor_tol")]
    pub tol: f64,
    /// State index whose noisy values fill the tensor; default 0.
    #[serde(default)]
    pub observe_index: usize,
}

impl Default for TensorConfig {
    fn default() -> Self {
        TensorConfig {
            rank: default_tensor_rank(),
            sweeps: default_tensor_sweeps(),
            tol: default_tensor_tol(),
            observe_index: 0,
        }
    }
}

fn default_mean_mode() -> MeanMode {
    MeanMode::ConstantFit
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmulatorConfig {
    pub kernel: KernelSpec,
    #[serde(default = "default_mean_mode")]
    pub mean: MeanMode,
    /// Parameter points to predict at; may be empty.
    #[serde(default)]
    pub queries: Vec<Vec<f64>>,
    /// Emit the leave-one-out error table.
    #[serde(default = "default_true")]
    pub loo: bool,
}

fn default_quadrature_nodes() -> usize {
    8001
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssimilationConfig {
    /// Observed state indices.
    pub observe_indices: Vec<usize>,
    /// Observation noise standard deviation.
    pub epsilon_scale: f64,
    /// Measured values, one per observed index.
    pub observed: Vec<f64>,
    pub ensemble_size: usize,
    /// Highest polynomial feature degree reported.
    pub degree: usize,
    #[serde(default = "default_quadrature_nodes")]
    pub quadrature_nodes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UqConfig {
    pub eta_m: NoiseSpec,
    pub eta_n: NoiseSpec,
    pub counts: (usize, usize),
    /// Perturb the generated snapshots in place.
    #[serde(default)]
    pub perturb: bool,
}

fn invalid_at(path: &str, message: impl Into<String>) -> Error {
    Error::Validation {
        path: path.to_string(),
        message: message.into(),
    }
}

impl PipelineConfig {
    /// Parse a config file without applying overrides.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.display().to_string(),
            source: e,
        })
    }

    /// Apply command-line overrides; the result is the effective config
    /// whose hash all artifacts carry.
    pub fn with_overrides(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out {
            self.output_dir = o;
        }
        self
    }

    /// Hash of the effective configuration.  The output location is
    /// normalized away: moving a run does not change its identity.
    pub fn hash(&self) -> String {
        let mut probe = self.clone();
        probe.output_dir = PathBuf::new();
        sha256_hex(serde_json::to_string(&probe).expect("config serializes").as_bytes())
    }

    /// Fail-fast validation with field paths.  Referenced files must
    /// exist; cross-field constraints are checked here so stages can
    /// assume a coherent config.
    pub fn validate(&self) -> Result<()> {
        match &self.model {
            ModelConfig::Darcy(d) => {
                if d.samples == 0 {
                    return Err(invalid_at("model.darcy.samples", "at least one sample"));
                }
                let grid = d.grid.build().map_err(|e| {
                    invalid_at("model.darcy.grid", e.to_string())
                })?;
                d.source_vector(&grid)
                    .map_err(|e| invalid_at("model.darcy.source", e.to_string()))?;
                // Probe the full model assembly once so bad boundary or
                // field settings surface now, not mid-run.
                let spec = d.field.clone();
                field_modes(&grid, &spec)
                    .map_err(|e| invalid_at("model.darcy.field", e.to_string()))?;
            }
            ModelConfig::Snapshots(s) => {
                for name in [SNAPSHOTS_CSV, SNAPSHOTS_JSON] {
                    let p = s.path.join(name);
                    if !p.is_file() {
                        return Err(invalid_at(
                            "model.snapshots.path",
                            format!("missing {}", p.display()),
                        ));
                    }
                }
            }
        }
        if let Some(rom) = &self.rom {
            if rom.rank.is_some() && rom.threshold.is_some() {
                return Err(invalid_at("rom", "set either rank or threshold, not both"));
            }
            if let Some(t) = rom.threshold {
                if !(t >= 0.0) {
                    return Err(invalid_at("rom.threshold", "must be nonnegative"));
                }
            }
            match rom.method {
                RomMethod::Rbm => {
                    let darcy = match &self.model {
                        ModelConfig::Darcy(d) => d,
                        _ => {
                            return Err(invalid_at(
                                "rom.method",
                                "the reduced basis method needs the Darcy model section",
                            ))
                        }
                    };
                    let rbm = rom
                        .rbm
                        .as_ref()
                        .ok_or_else(|| invalid_at("rom.rbm", "required when method is rbm"))?;
                    if rbm.train_params.is_empty() {
                        return Err(invalid_at("rom.rbm.train_params", "at least one point"));
                    }
                    let n_sub = rbm
                        .subdomains
                        .as_ref()
                        .map(|s| s.len())
                        .unwrap_or(2);
                    for (i, p) in rbm.train_params.iter().enumerate() {
                        if p.len() != n_sub {
                            return Err(invalid_at(
                                &format!("rom.rbm.train_params[{i}]"),
                                format!("{} entries for {n_sub} subdomains", p.len()),
                            ));
                        }
                        if p.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                            return Err(invalid_at(
                                &format!("rom.rbm.train_params[{i}]"),
                                "conductivities must be positive and finite",
                            ));
                        }
                    }
                    // An affine right-hand side needs homogeneous
                    // essential conditions.
                    let hom = |e: &EdgeBc| match e {
                        EdgeBc::Dirichlet { value } => *value == 0.0,
                        EdgeBc::DirichletProfile { values } => values.iter().all(|v| *v == 0.0),
                        EdgeBc::NoFlux => true,
                    };
                    let b = &darcy.boundary;
                    if !(hom(&b.left) && hom(&b.right) && hom(&b.bottom) && hom(&b.top)) {
                        return Err(invalid_at(
                            "model.darcy.boundary",
                            "the reduced basis method needs homogeneous boundary values",
                        ));
                    }
                }
                RomMethod::Tensor => {
                    if self.uq.is_none() {
                        return Err(invalid_at(
                            "uq",
                            "the tensor method needs the uq section for its noise grid",
                        ));
                    }
                }
                RomMethod::Kle | RomMethod::Pod => {}
            }
        }
        if let Some(em) = &self.emulator {
            em.kernel
                .validate()
                .map_err(|e| invalid_at("emulator.kernel", e.to_string()))?;
            for (i, q) in em.queries.iter().enumerate() {
                if q.is_empty() || q.iter().any(|v| !v.is_finite()) {
                    return Err(invalid_at(
                        &format!("emulator.queries[{i}]"),
                        "query points must be nonempty and finite",
                    ));
                }
            }
        }
        if let Some(a) = &self.assimilation {
            if a.observe_indices.is_empty() {
                return Err(invalid_at("assimilation.observe_indices", "at least one index"));
            }
            if a.observed.len() != a.observe_indices.len() {
                return Err(invalid_at(
                    "assimilation.observed",
                    format!(
                        "{} values for {} observed indices",
                        a.observed.len(),
                        a.observe_indices.len()
                    ),
                ));
            }
            if a.observed.iter().any(|v| !v.is_finite()) {
                return Err(invalid_at("assimilation.observed", "values must be finite"));
            }
            if !(a.epsilon_scale > 0.0) || !a.epsilon_scale.is_finite() {
                return Err(invalid_at(
                    "assimilation.epsilon_scale",
                    "must be positive and finite",
                ));
            }
            if a.ensemble_size < 2 {
                return Err(invalid_at("assimilation.ensemble_size", "at least 2 members"));
            }
            if a.degree == 0 {
                return Err(invalid_at("assimilation.degree", "at least degree 1"));
            }
            if a.quadrature_nodes < 2 {
                return Err(invalid_at("assimilation.quadrature_nodes", "at least 2 nodes"));
            }
        }
        if let Some(uq) = &self.uq {
            self.build_sampler(uq)
                .map_err(|e| invalid_at("uq", e.to_string()))?;
        }
        Ok(())
    }

    fn build_sampler(&self, uq: &UqConfig) -> Result<ProductSampler> {
        ProductSampler::new(uq.eta_m.clone(), uq.eta_n.clone(), self.seed, uq.counts)
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid2D> {
        Grid2D::new(self.nx, self.ny, self.hx, self.hy, self.extraction_cells.clone())
    }
}

impl DarcyGenConfig {
    fn source_vector(&self, grid: &Grid2D) -> Result<Vec<f64>> {
        let n = grid.n_cells();
        match &self.source {
            SourceConfig::Uniform { value } => {
                if !value.is_finite() {
                    return Err(Error::NonFinite { context: "source value" });
                }
                Ok(vec![*value; n])
            }
            SourceConfig::Extraction { value } => {
                if !value.is_finite() {
                    return Err(Error::NonFinite { context: "source value" });
                }
                if grid.extraction_cells().is_empty() {
                    return Err(Error::invalid(
                        "extraction source needs extraction cells on the grid",
                    ));
                }
                let mut v = vec![0.0; n];
                for &c in grid.extraction_cells() {
                    v[c] = *value;
                }
                Ok(v)
            }
            SourceConfig::Explicit { values } => {
                if values.len() != n {
                    return Err(Error::dim(format!(
                        "{} source values for {n} cells",
                        values.len()
                    )));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { context: "source values" });
                }
                Ok(values.clone())
            }
        }
    }

    fn build_model(&self) -> Result<DarcyModel> {
        let grid = self.grid.build()?;
        let source = self.source_vector(&grid)?;
        Ok(DarcyModel {
            grid,
            field_spec: self.field.clone(),
            source,
            boundary: self.boundary.clone(),
        })
    }
}

// ── file helpers ────────────────────────────────────────────────────

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Write through a sibling temp file and rename, so a crash never leaves
/// a partial artifact under the final name.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::invalid(format!("bad artifact path {}", path.display())))?;
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

fn read_file(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(Error::MissingArtifact {
            path: path.display().to_string(),
        });
    }
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Serialize as pretty JSON, write atomically, return the content hash.
fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.display().to_string(),
        source: e,
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(sha256_hex(text.as_bytes()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_file(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.display().to_string(),
        source: e,
    })
}

fn fmt_row(values: &[f64]) -> String {
    let mut line = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        let _ = write!(line, "{v}");
    }
    line
}

/// Headerless CSV, one line per matrix row; floats print in shortest
/// round-trip form so reload is exact.
pub fn matrix_to_csv(m: &DenseMatrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<f64> = (0..m.cols()).map(|j| m.get(i, j)).collect();
        out.push_str(&fmt_row(&row));
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str, path: &str) -> Result<DenseMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for piece in line.split(',') {
            let v: f64 = piece.trim().parse().map_err(|_| Error::Parse {
                path: path.to_string(),
                line: lineno + 1,
                message: format!("bad number {piece:?}"),
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse {
                    path: path.to_string(),
                    line: lineno + 1,
                    message: format!("{} fields, expected {}", row.len(), first.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.to_string(),
            line: 0,
            message: "empty matrix".to_string(),
        });
    }
    let (r, c) = (rows.len(), rows[0].len());
    DenseMatrix::from_vec(r, c, rows.into_iter().flatten().collect())
}

fn write_csv_atomic(path: &Path, content: &str) -> Result<String> {
    write_atomic(path, content.as_bytes())?;
    Ok(sha256_hex(content.as_bytes()))
}

// ── sidecars ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotSidecar {
    pub schema: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub state_dim: usize,
    pub count: usize,
    pub params: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub perturbed: bool,
    /// Per-sample extraction inflow, when the model defines one.
    pub qoi: Option<Vec<f64>>,
    pub csv_sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorRow {
    pub rank: usize,
    pub weighted_sq_error: f64,
    pub tail_energy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RomSidecar {
    pub schema: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub method: RomMethod,
    pub rank: usize,
    pub total_energy: f64,
    pub captured_energy: f64,
    pub singular_values: Vec<f64>,
    pub errors: Vec<ErrorRow>,
    /// Reduced basis data, present for the rbm method.
    pub rbm: Option<RbmSidecar>,
    /// Alternating-least-squares summary, present for the tensor method.
    pub tensor: Option<TensorSidecar>,
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RbmSidecar {
    pub subdomains: Vec<Vec<usize>>,
    pub train_params: Vec<Vec<f64>>,
    pub test_param: Vec<f64>,
    pub fom_energy: f64,
    /// (training prefix size, online energy, |energy - FOM energy|).
    pub energies: Vec<(usize, f64, f64)>,
    pub reduced_dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorSidecar {
    pub dims: (usize, usize, usize),
    pub observe_index: usize,
    pub cp_rank: usize,
    pub sweeps: usize,
    pub objective_first: f64,
    pub objective_last: f64,
    pub resets: usize,
    pub relative_fit_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmulatorSidecar {
    pub schema: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub kernel: KernelSpec,
    pub mean: MeanMode,
    pub resolved_length_scale: f64,
    pub train_count: usize,
    pub query_count: usize,
    /// Worst training-point reproduction error (euclidean).
    pub train_error_max: f64,
    /// Root-mean-square leave-one-out error, when computed.
    pub loo_rms: Option<f64>,
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentPair {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonBlock {
    pub observed: Vec<f64>,
    pub epsilon_scale: f64,
    /// Updated ensemble moments of the first observed component.
    pub gmkf: MomentPair,
    /// Quadrature posterior of the same component under a Gaussian fit
    /// of the prior ensemble.
    pub quadrature: MomentPair,
    /// Sampled loss per polynomial feature degree, ascending degree.
    pub losses: Vec<(usize, f64)>,
    pub prior: MomentPair,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssimilateSidecar {
    pub schema: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub ensemble_size: usize,
    pub observe_indices: Vec<usize>,
    pub ensemble_persisted: bool,
    pub comparison: ComparisonBlock,
    pub artifacts: BTreeMap<String, String>,
}

/// Consolidated run summary; every number is read back from a persisted
/// artifact, never recomputed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub snapshot_count: usize,
    pub state_dim: usize,
    pub singular_values: Vec<f64>,
    pub reconstruction_errors: Vec<ErrorRow>,
    pub emulator: Option<EmulatorSummary>,
    pub assimilation: Option<ComparisonBlock>,
    pub qoi: Option<QoiSummary>,
    /// Artifact file -> content hash, the traceability index.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmulatorSummary {
    pub train_error_max: f64,
    pub loo_rms: Option<f64>,
    pub query_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QoiSummary {
    pub mean: f64,
    /// Large-sample 95% half width, 1.96 s / sqrt(n).
    pub half_width_95: f64,
    pub count: usize,
}

// ── snapshot persistence ────────────────────────────────────────────

fn persist_snapshots(
    dir: &Path,
    set: &SnapshotSet,
    seed: u64,
    config_hash: &str,
    perturbed: bool,
    qoi: Option<Vec<f64>>,
) -> Result<()> {
    let csv = matrix_to_csv(set.states());
    let sha = write_csv_atomic(&dir.join(SNAPSHOTS_CSV), &csv)?;
    let sidecar = SnapshotSidecar {
        schema: "romcex.snapshots/1".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash.to_string(),
        seed,
        state_dim: set.state_dim(),
        count: set.len(),
        params: set.params().to_vec(),
        weights: set.weights().to_vec(),
        perturbed,
        qoi,
        csv_sha256: sha,
    };
    write_json(&dir.join(SNAPSHOTS_JSON), &sidecar)?;
    Ok(())
}

/// Load a persisted snapshot pair and verify the CSV against its
/// recorded hash.
pub fn load_snapshots(dir: &Path) -> Result<(SnapshotSet, SnapshotSidecar)> {
    let csv_path = dir.join(SNAPSHOTS_CSV);
    let text = read_file(&csv_path)?;
    let sidecar: SnapshotSidecar = read_json(&dir.join(SNAPSHOTS_JSON))?;
    if sha256_hex(text.as_bytes()) != sidecar.csv_sha256 {
        return Err(Error::Validation {
            path: csv_path.display().to_string(),
            message: "snapshot data does not match its recorded hash".to_string(),
        });
    }
    let states = matrix_from_csv(&text, &csv_path.display().to_string())?;
    if states.rows() != sidecar.state_dim || states.cols() != sidecar.count {
        return Err(Error::dim(format!(
            "snapshot matrix is {}x{}, sidecar says {}x{}",
            states.rows(),
            states.cols(),
            sidecar.state_dim,
            sidecar.count
        )));
    }
    let set = SnapshotSet::new(sidecar.params.clone(), states, sidecar.weights.clone())?;
    Ok((set, sidecar))
}

// ── stage: generate ─────────────────────────────────────────────────

/// Outcome summary returned by each stage for logging and tests.
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub artifacts: Vec<PathBuf>,
    pub summary: String,
}

pub fn cmd_generate(cfg: &PipelineConfig) -> Result<StageOutcome> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let hash = cfg.hash();

    let (mut set, qoi) = match &cfg.model {
        ModelConfig::Darcy(d) => {
            let model = d.build_model()?;
            let modes = field_modes(&model.grid, &model.field_spec)?;
            let plan: Vec<PlanEntry> = (0..d.samples)
                .map(|k| {
                    let xi = standard_normal_vec(
                        &mut stream_rng(cfg.seed, CH_FIELD, k as u64),
                        modes.n_modes(),
                    );
                    PlanEntry {
                        mu: xi.clone(),
                        xi: Some(xi),
                    }
                })
                .collect();
            let set = generate_snapshots(&model, &plan, cfg.seed)?;
            let qoi = if model.grid.extraction_cells().is_empty() {
                None
            } else {
                let mut values = Vec::with_capacity(plan.len());
                for entry in &plan {
                    let field =
                        sample_conductivity(&modes, entry.xi.as_deref(), cfg.seed)?;
                    let sol =
                        solve_steady(&model.grid, &field, &model.source, &model.boundary)?;
                    values.push(qoi_inflow(&model.grid, &field, &sol, 0)?);
                }
                Some(values)
            };
            (set, qoi)
        }
        ModelConfig::Snapshots(src) => {
            let (set, sidecar) = load_snapshots(&src.path)?;
            (set, sidecar.qoi)
        }
    };

    let mut perturbed = false;
    if let Some(uq) = &cfg.uq {
        if uq.perturb {
            let sampler = cfg.build_sampler(uq)?;
            set = crate::uq::perturb_snapshots(&set, &sampler)?;
            perturbed = true;
        }
    }

    persist_snapshots(dir, &set, cfg.seed, &hash, perturbed, qoi)?;
    Ok(StageOutcome {
        artifacts: vec![dir.join(SNAPSHOTS_CSV), dir.join(SNAPSHOTS_JSON)],
        summary: format!(
            "generate: {} snapshots of dimension {}{}",
            set.len(),
            set.state_dim(),
            if perturbed { ", perturbed" } else { "" }
        ),
    })
}

// ── stage: build-rom ────────────────────────────────────────────────

fn resolve_basis(cfg: &RomConfig, full: &KleBasis) -> Result<KleBasis> {
    if let Some(t) = cfg.threshold {
        return truncate_by_threshold(full, t);
    }
    let rank = match cfg.rank {
        None => full.rank(),
        Some(r) => {
            if r > full.rank() {
                return Err(Error::Validation {
                    path: "rom.rank".to_string(),
                    message: format!("rank {r} exceeds the numerical rank {}", full.rank()),
                });
            }
            r
        }
    };
    Ok(KleBasis {
        sigmas: full.sigmas[..rank].to_vec(),
        modes: DenseMatrix::from_fn(full.modes.rows(), rank, |i, j| full.modes.get(i, j)),
        param_functions: DenseMatrix::from_fn(full.param_functions.rows(), rank, |i, j| {
            full.param_functions.get(i, j)
        }),
        weights: full.weights.clone(),
    })
}

pub fn cmd_build_rom(cfg: &PipelineConfig) -> Result<StageOutcome> {
    cfg.validate()?;
    let rom = cfg
        .rom
        .as_ref()
        .ok_or_else(|| invalid_at("rom", "section required for build-rom"))?;
    let dir = &cfg.output_dir;
    let hash = cfg.hash();
    let (set, _sidecar) = load_snapshots(dir)?;

    let full = kle(&set, 0.0)?;
    let total_energy: f64 = full.sigmas.iter().map(|s| s * s).sum();
    let basis = resolve_basis(rom, &full)?;
    let rank = basis.rank();
    let captured: f64 = basis.sigmas.iter().map(|s| s * s).sum();

    // Error-versus-rank table over the full spectrum.
    let mut errors = Vec::with_capacity(full.rank() + 1);
    for r in 0..=full.rank() {
        let err = crate::parametric_map::reconstruction_energy_error(&set, &full, r)?;
        let tail: f64 = full.sigmas[r..].iter().map(|s| s * s).sum();
        errors.push(ErrorRow {
            rank: r,
            weighted_sq_error: err,
            tail_energy: tail,
        });
    }

    let mut artifacts = BTreeMap::new();
    let mut files = Vec::new();

    let mut push = |name: &str, sha: String, files: &mut Vec<PathBuf>| {
        artifacts.insert(name.to_string(), sha);
        files.push(dir.join(name));
    };

    let mut sig_csv = String::from("index,sigma\n");
    for (i, s) in full.sigmas.iter().enumerate() {
        let _ = writeln!(sig_csv, "{i},{s}");
    }
    push(SIGMAS_CSV, write_csv_atomic(&dir.join(SIGMAS_CSV), &sig_csv)?, &mut files);

    let mut err_csv = String::from("rank,weighted_sq_error,tail_energy\n");
    for row in &errors {
        let _ = writeln!(
            err_csv,
            "{},{},{}",
            row.rank, row.weighted_sq_error, row.tail_energy
        );
    }
    push(
        ROM_ERRORS_CSV,
        write_csv_atomic(&dir.join(ROM_ERRORS_CSV), &err_csv)?,
        &mut files,
    );

    let mut rbm_block = None;
    let mut tensor_block = None;

    match rom.method {
        RomMethod::Kle => {
            let csv = matrix_to_csv(&basis.modes);
            push(BASIS_CSV, write_csv_atomic(&dir.join(BASIS_CSV), &csv)?, &mut files);
        }
        RomMethod::Pod => {
            let k = if rank == 0 { 1 } else { rank };
            let pod = pod_basis(&set, k.min(full.rank().max(1)))?;
            let csv = matrix_to_csv(&pod.columns);
            push(BASIS_CSV, write_csv_atomic(&dir.join(BASIS_CSV), &csv)?, &mut files);
        }
        RomMethod::Rbm => {
            let darcy = match &cfg.model {
                ModelConfig::Darcy(d) => d,
                _ => unreachable!("validated"),
            };
            let rbm_cfg = rom.rbm.as_ref().expect("validated");
            let grid = darcy.grid.build()?;
            let subdomains = match &rbm_cfg.subdomains {
                Some(s) => s.clone(),
                None => half_split(&grid),
            };
            let operator = affine_darcy_operator(&grid, &subdomains, &darcy.boundary)?;
            let area = grid.cell_area();
            let load: Vec<f64> = darcy
                .source_vector(&grid)?
                .iter()
                .map(|v| v * area)
                .collect();
            let model = rbm_offline(&operator, &load, &rbm_cfg.train_params)?;
            let csv = matrix_to_csv(&model.basis);
            push(BASIS_CSV, write_csv_atomic(&dir.join(BASIS_CSV), &csv)?, &mut files);

            // Energy convergence under nested training prefixes at a
            // held-out midpoint parameter.
            let n_sub = subdomains.len();
            let test: Vec<f64> = (0..n_sub)
                .map(|q| {
                    let sum: f64 = rbm_cfg.train_params.iter().map(|p| p[q]).sum();
                    sum / rbm_cfg.train_params.len() as f64
                })
                .collect();
            let a_test = operator.assemble(&test)?;
            let u = chol_psd(&a_test, 0.0)?.solve_vec(&load);
            let fom_energy: f64 = u.iter().zip(&load).map(|(a, b)| a * b).sum();
            let mut energies = Vec::new();
            let mut energy_csv = String::from("n_train,energy,error\n");
            for i in 1..=rbm_cfg.train_params.len() {
                let sub_model = rbm_offline(&operator, &load, &rbm_cfg.train_params[..i])?;
                let sol = rbm_online(&sub_model, &test)?;
                let err = (fom_energy - sol.energy).abs();
                let _ = writeln!(energy_csv, "{i},{},{}", sol.energy, err);
                energies.push((i, sol.energy, err));
            }
            push(
                RBM_ENERGIES_CSV,
                write_csv_atomic(&dir.join(RBM_ENERGIES_CSV), &energy_csv)?,
                &mut files,
            );
            rbm_block = Some(RbmSidecar {
                subdomains,
                train_params: rbm_cfg.train_params.clone(),
                test_param: test,
                fom_energy,
                energies,
                reduced_dim: model.basis.cols(),
            });
        }
        RomMethod::Tensor => {
            let uq = cfg.uq.as_ref().expect("validated");
            let tensor_cfg = rom.tensor.clone().unwrap_or_default();
            let obs = tensor_cfg.observe_index;
            if obs >= set.state_dim() {
                return Err(invalid_at(
                    "rom.tensor.observe_index",
                    format!("index {obs} out of range for dimension {}", set.state_dim()),
                ));
            }
            let sampler = cfg.build_sampler(uq)?;
            let (n_m, n_n) = sampler.counts;
            let eta_m = sampler.draws_m(n_m, set.state_dim())?;
            let eta_n = sampler.draws_n(n_n, set.state_dim())?;
            let t = Tensor3::from_fn((set.len(), n_m, n_n), |k, m, n| {
                set.states().get(obs, k) + eta_m[m][obs] + eta_n[n][obs]
            })?;
            let csv = t.to_indexed_csv();
            push(TENSOR_CSV, write_csv_atomic(&dir.join(TENSOR_CSV), &csv)?, &mut files);
            let (cp, report) = tensor_als(&t, tensor_cfg.rank, tensor_cfg.sweeps, tensor_cfg.tol)?;
            push(
                TENSOR_CP_JSON,
                write_json(&dir.join(TENSOR_CP_JSON), &cp)?,
                &mut files,
            );
            let mut hist = String::from("update,objective\n");
            for (i, v) in report.objective_history.iter().enumerate() {
                let _ = writeln!(hist, "{i},{v}");
            }
            push(
                TENSOR_HISTORY_CSV,
                write_csv_atomic(&dir.join(TENSOR_HISTORY_CSV), &hist)?,
                &mut files,
            );
            let norm = t.frobenius_norm();
            let fit = cp.reconstruct()?;
            let mut diff = 0.0;
            let dims = t.dims();
            for i in 0..dims.0 {
                for j in 0..dims.1 {
                    for k in 0..dims.2 {
                        diff += (t.get(i, j, k) - fit.get(i, j, k)).powi(2);
                    }
                }
            }
            tensor_block = Some(TensorSidecar {
                dims,
                observe_index: obs,
                cp_rank: cp.rank,
                sweeps: tensor_cfg.sweeps,
                objective_first: report.objective_history.first().copied().unwrap_or(0.0),
                objective_last: report.objective_history.last().copied().unwrap_or(0.0),
                resets: report.resets,
                relative_fit_error: if norm > 0.0 { diff.sqrt() / norm } else { 0.0 },
            });
        }
    }

    let sidecar = RomSidecar {
        schema: "romcex.rom/1".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: hash,
        seed: cfg.seed,
        method: rom.method,
        rank,
        total_energy,
        captured_energy: captured,
        singular_values: full.sigmas.clone(),
        errors,
        rbm: rbm_block,
        tensor: tensor_block,
        artifacts,
    };
    write_json(&dir.join(ROM_JSON), &sidecar)?;
    let mut files = files;
    files.push(dir.join(ROM_JSON));
    Ok(StageOutcome {
        artifacts: files,
        summary: format!(
            "build-rom: method {:?}, rank {rank} of {}, captured {:.6} of {:.6}",
            rom.method,
            full.rank(),
            captured,
            total_energy
        ),
    })
}

/// Left/right half split of the grid cells, the default two-subdomain
/// layout.
pub fn half_split(grid: &Grid2D) -> Vec<Vec<usize>> {
    let mut left = Vec::new();
    let mut right = Vec::new();
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            if i < grid.nx() / 2 {
                left.push(grid.idx(i, j));
            } else {
                right.push(grid.idx(i, j));
            }
        }
    }
    vec![left, right]
}

// ── stage: emulate ──────────────────────────────────────────────────

pub fn cmd_emulate(cfg: &PipelineConfig) -> Result<StageOutcome> {
    cfg.validate()?;
    let em = cfg
        .emulator
        .as_ref()
        .ok_or_else(|| invalid_at("emulator", "section required for emulate"))?;
    let dir = &cfg.output_dir;
    let hash = cfg.hash();
    let (set, _) = load_snapshots(dir)?;

    let inputs: Vec<Vec<f64>> = set.params().to_vec();
    let values: Vec<Vec<f64>> = (0..set.len()).map(|k| set.state_col(k)).collect();
    let p_dim = inputs[0].len();
    for (i, q) in em.queries.iter().enumerate() {
        if q.len() != p_dim {
            return Err(invalid_at(
                &format!("emulator.queries[{i}]"),
                format!("{} coordinates for parameter dimension {p_dim}", q.len()),
            ));
        }
    }

    let emulator = gpe_train(&inputs, &values, em.kernel.clone(), em.mean)?;

    let mut artifacts = BTreeMap::new();
    let mut files = Vec::new();

    // Predictions table: header then one row per query.
    let mut pred_csv = String::new();
    for i in 0..p_dim {
        let _ = write!(pred_csv, "q{i},");
    }
    let d = set.state_dim();
    for i in 0..d {
        let _ = write!(pred_csv, "y{i}");
        pred_csv.push(if i + 1 == d { '\n' } else { ',' });
    }
    for q in &em.queries {
        let y = gpe_predict(&emulator, q)?;
        let mut row: Vec<f64> = q.clone();
        row.extend_from_slice(&y);
        pred_csv.push_str(&fmt_row(&row));
        pred_csv.push('\n');
    }
    artifacts.insert(
        PREDICTIONS_CSV.to_string(),
        write_csv_atomic(&dir.join(PREDICTIONS_CSV), &pred_csv)?,
    );
    files.push(dir.join(PREDICTIONS_CSV));

    // Training reproduction check against the emulator's own collapsed
    // training set; duplicate inputs were averaged at training time, so
    // compare with the nearest original value for that input.
    let collapsed: Vec<Vec<f64>> = emulator.train_inputs().to_vec();
    let mut train_error_max = 0.0f64;
    for q in &collapsed {
        let y = gpe_predict(&emulator, q)?;
        let mut best = f64::INFINITY;
        for (orig_q, orig_v) in inputs.iter().zip(&values) {
            if orig_q == q {
                let e: f64 = y
                    .iter()
                    .zip(orig_v)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                best = best.min(e);
            }
        }
        if best.is_finite() {
            train_error_max = train_error_max.max(best);
        }
    }

    // Leave-one-out table.
    let mut loo_rms = None;
    if em.loo && inputs.len() >= 3 {
        let mut loo_csv = String::from("index,error_norm\n");
        let mut sq_sum = 0.0;
        for leave in 0..inputs.len() {
            let tr_in: Vec<Vec<f64>> = inputs
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != leave)
                .map(|(_, v)| v.clone())
                .collect();
            let tr_val: Vec<Vec<f64>> = values
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != leave)
                .map(|(_, v)| v.clone())
                .collect();
            let sub = gpe_train(&tr_in, &tr_val, em.kernel.clone(), em.mean)?;
            let pred = gpe_predict(&sub, &inputs[leave])?;
            let err: f64 = pred
                .iter()
                .zip(&values[leave])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let _ = writeln!(loo_csv, "{leave},{err}");
            sq_sum += err * err;
        }
        artifacts.insert(
            LOO_CSV.to_string(),
            write_csv_atomic(&dir.join(LOO_CSV), &loo_csv)?,
        );
        files.push(dir.join(LOO_CSV));
        loo_rms = Some((sq_sum / inputs.len() as f64).sqrt());
    }

    let sidecar = EmulatorSidecar {
        schema: "romcex.emulator/1".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: hash,
        seed: cfg.seed,
        kernel: em.kernel.clone(),
        mean: em.mean,
        resolved_length_scale: emulator.length_scale(),
        train_count: emulator.train_inputs().len(),
        query_count: em.queries.len(),
        train_error_max,
        loo_rms,
        artifacts,
    };
    write_json(&dir.join(EMULATOR_JSON), &sidecar)?;
    files.push(dir.join(EMULATOR_JSON));
    Ok(StageOutcome {
        artifacts: files,
        summary: format!(
            "emulate: {} training points, {} queries, max training error {:.3e}",
            sidecar.train_count, sidecar.query_count, train_error_max
        ),
    })
}

// ── stage: assimilate ───────────────────────────────────────────────

pub fn cmd_assimilate(cfg: &PipelineConfig) -> Result<StageOutcome> {
    cfg.validate()?;
    let asml = cfg
        .assimilation
        .as_ref()
        .ok_or_else(|| invalid_at("assimilation", "section required for assimilate"))?;
    let dir = &cfg.output_dir;
    let hash = cfg.hash();
    let (set, _) = load_snapshots(dir)?;

    let d = set.state_dim();
    for (i, &idx) in asml.observe_indices.iter().enumerate() {
        if idx >= d {
            return Err(invalid_at(
                &format!("assimilation.observe_indices[{i}]"),
                format!("index {idx} out of range for dimension {d}"),
            ));
        }
    }

    // Gaussian prior ensemble synthesized from the snapshot spectrum:
    // x = sum_j sigma_j xi_j v_j has covariance equal to the snapshot
    // correlation, the measure the linear representation describes.
    let basis = kle(&set, 0.0)?;
    let rank = basis.rank();
    let n = asml.ensemble_size;
    let mut x = DenseMatrix::zeros(d, n);
    for k in 0..n {
        let xi = standard_normal_vec(&mut stream_rng(cfg.seed, CH_ENSEMBLE, k as u64), rank);
        for j in 0..rank {
            let a = basis.sigmas[j] * xi[j];
            for i in 0..d {
                let v = x.get(i, k) + a * basis.modes.get(i, j);
                x.set(i, k, v);
            }
        }
    }
    let p = asml.observe_indices.len();
    let mut z = DenseMatrix::zeros(p, n);
    for k in 0..n {
        let noise = standard_normal_vec(&mut stream_rng(cfg.seed, CH_OBS, k as u64), p);
        for (row, &idx) in asml.observe_indices.iter().enumerate() {
            z.set(row, k, x.get(idx, k) + asml.epsilon_scale * noise[row]);
        }
    }
    let ens = EnsembleState::new(x, z, cfg.seed)?;

    let update = gmkf_update(&ens, &asml.observed)?;

    // Moments of the first observed component, prior and updated.
    let i0 = asml.observe_indices[0];
    let moments = |m: &DenseMatrix, row: usize| -> MomentPair {
        let nn = m.cols() as f64;
        let mean: f64 = (0..m.cols()).map(|k| m.get(row, k)).sum::<f64>() / nn;
        let var: f64 = (0..m.cols())
            .map(|k| (m.get(row, k) - mean).powi(2))
            .sum::<f64>()
            / (nn - 1.0);
        MomentPair {
            mean,
            variance: var,
        }
    };
    let prior = moments(ens.x(), i0);
    let gmkf = moments(&update.updated, i0);

    // Quadrature posterior of the same component under a Gaussian fit of
    // the prior marginal and the Gaussian observation model.
    let eps = asml.epsilon_scale;
    let y0 = asml.observed[0];
    let (pm, pv) = (prior.mean, prior.variance.max(1e-300));
    let spread = (pv + eps * eps).sqrt();
    let lo = (pm.min(y0)) - 8.0 * spread;
    let hi = (pm.max(y0)) + 8.0 * spread;
    let nodes = asml.quadrature_nodes;
    let grid: Vec<f64> = (0..nodes)
        .map(|i| lo + (hi - lo) * i as f64 / (nodes - 1) as f64)
        .collect();
    let norm_prior = 1.0 / (2.0 * std::f64::consts::PI * pv).sqrt();
    let norm_lik = 1.0 / (2.0 * std::f64::consts::PI * eps * eps).sqrt();
    let posterior = bayes_quadrature_1d(
        |t| norm_prior * (-0.5 * (t - pm) * (t - pm) / pv).exp(),
        |y, t| norm_lik * (-0.5 * (y - t) * (y - t) / (eps * eps)).exp(),
        y0,
        &grid,
    )?;

    // Sampled loss per feature degree, non-increasing with nesting.
    let mut losses = Vec::new();
    for deg in 1..=asml.degree {
        let map = cex_polynomial(&ens, deg)?;
        losses.push((deg, sampled_loss(&ens, &map)?));
    }

    let comparison = ComparisonBlock {
        observed: asml.observed.clone(),
        epsilon_scale: eps,
        gmkf,
        quadrature: MomentPair {
            mean: posterior.mean,
            variance: posterior.variance,
        },
        losses,
        prior,
    };

    let mut artifacts = BTreeMap::new();
    let mut files = Vec::new();

    // Posterior state mean.
    let mean_mat = DenseMatrix::from_fn(d, 1, |i, _| {
        (0..n).map(|k| update.updated.get(i, k)).sum::<f64>() / n as f64
    });
    artifacts.insert(
        POSTERIOR_MEAN_CSV.to_string(),
        write_csv_atomic(&dir.join(POSTERIOR_MEAN_CSV), &matrix_to_csv(&mean_mat))?,
    );
    files.push(dir.join(POSTERIOR_MEAN_CSV));

    let persisted = d * n <= ENSEMBLE_PERSIST_CAP;
    if persisted {
        artifacts.insert(
            UPDATED_ENSEMBLE_CSV.to_string(),
            write_csv_atomic(&dir.join(UPDATED_ENSEMBLE_CSV), &matrix_to_csv(&update.updated))?,
        );
        files.push(dir.join(UPDATED_ENSEMBLE_CSV));
    }

    artifacts.insert(
        COMPARISON_JSON.to_string(),
        write_json(&dir.join(COMPARISON_JSON), &comparison)?,
    );
    files.push(dir.join(COMPARISON_JSON));

    let sidecar = AssimilateSidecar {
        schema: "romcex.assimilate/1".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: hash,
        seed: cfg.seed,
        ensemble_size: n,
        observe_indices: asml.observe_indices.clone(),
        ensemble_persisted: persisted,
        comparison: comparison.clone(),
        artifacts,
    };
    write_json(&dir.join("assimilate.json"), &sidecar)?;
    files.push(dir.join("assimilate.json"));
    Ok(StageOutcome {
        artifacts: files,
        summary: format!(
            "assimilate: ensemble {n}, component {i0}: gmkf mean {:.6}, quadrature mean {:.6}",
            comparison.gmkf.mean, comparison.quadrature.mean
        ),
    })
}

// ── stage: report ───────────────────────────────────────────────────

pub fn cmd_report(cfg: &PipelineConfig) -> Result<StageOutcome> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    let hash = cfg.hash();

    // Everything the config promises must be on disk.
    let mut expected = vec![SNAPSHOTS_CSV.to_string(), SNAPSHOTS_JSON.to_string()];
    if cfg.rom.is_some() {
        expected.push(ROM_JSON.to_string());
    }
    if cfg.emulator.is_some() {
        expected.push(EMULATOR_JSON.to_string());
    }
    if cfg.assimilation.is_some() {
        expected.push("assimilate.json".to_string());
    }
    let missing: Vec<String> = expected
        .iter()
        .filter(|name| !dir.join(name.as_str()).is_file())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifact {
            path: format!("{}: {}", dir.display(), missing.join(", ")),
        });
    }

    let snap: SnapshotSidecar = read_json(&dir.join(SNAPSHOTS_JSON))?;
    let mut artifacts = BTreeMap::new();
    artifacts.insert(SNAPSHOTS_CSV.to_string(), snap.csv_sha256.clone());

    let mut stale = Vec::new();
    if snap.config_hash != hash {
        stale.push(SNAPSHOTS_JSON.to_string());
    }

    let mut singular_values = Vec::new();
    let mut reconstruction_errors = Vec::new();
    if cfg.rom.is_some() {
        let rom: RomSidecar = read_json(&dir.join(ROM_JSON))?;
        if rom.config_hash != hash {
            stale.push(ROM_JSON.to_string());
        }
        singular_values = rom.singular_values;
        reconstruction_errors = rom.errors;
        artifacts.extend(rom.artifacts);
    }

    let mut emulator = None;
    if cfg.emulator.is_some() {
        let em: EmulatorSidecar = read_json(&dir.join(EMULATOR_JSON))?;
        if em.config_hash != hash {
            stale.push(EMULATOR_JSON.to_string());
        }
        emulator = Some(EmulatorSummary {
            train_error_max: em.train_error_max,
            loo_rms: em.loo_rms,
            query_count: em.query_count,
        });
        artifacts.extend(em.artifacts);
    }

    let mut assimilation = None;
    if cfg.assimilation.is_some() {
        let a: AssimilateSidecar = read_json(&dir.join("assimilate.json"))?;
        if a.config_hash != hash {
            stale.push("assimilate.json".to_string());
        }
        assimilation = Some(a.comparison);
        artifacts.extend(a.artifacts);
    }

    if !stale.is_empty() {
        return Err(Error::Validation {
            path: "report".to_string(),
            message: format!(
                "artifacts built from a different config: {}",
                stale.join(", ")
            ),
        });
    }

    let qoi = snap.qoi.as_ref().map(|values| {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        QoiSummary {
            mean,
            half_width_95: 1.96 * (var / n).sqrt(),
            count: values.len(),
        }
    });

    let report = RunReport {
        schema: "romcex.report/1".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: hash,
        seed: cfg.seed,
        snapshot_count: snap.count,
        state_dim: snap.state_dim,
        singular_values,
        reconstruction_errors,
        emulator,
        assimilation,
        qoi,
        artifacts,
    };
    write_json(&dir.join(REPORT_JSON), &report)?;

    let text = render_report_text(&report);
    write_atomic(&dir.join(REPORT_TXT), text.as_bytes())?;

    Ok(StageOutcome {
        artifacts: vec![dir.join(REPORT_JSON), dir.join(REPORT_TXT)],
        summary: format!(
            "report: {} artifacts indexed, config {}",
            report.artifacts.len(),
            &report.config_hash[..12]
        ),
    })
}

fn render_report_text(r: &RunReport) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "run report (schema {})", r.schema);
    let _ = writeln!(t, "version       {}", r.version);
    let _ = writeln!(t, "config hash   {}", r.config_hash);
    let _ = writeln!(t, "seed          {}", r.seed);
    let _ = writeln!(t, "snapshots     {} columns, dimension {}", r.snapshot_count, r.state_dim);
    if !r.singular_values.is_empty() {
        let _ = writeln!(t, "\nsingular values");
        for (i, s) in r.singular_values.iter().enumerate() {
            let _ = writeln!(t, "  {i:4}  {s:24.16e}");
        }
    }
    if !r.reconstruction_errors.is_empty() {
        let _ = writeln!(t, "\nreconstruction error vs rank");
        let _ = writeln!(t, "  rank  weighted_sq_error        tail_energy");
        for row in &r.reconstruction_errors {
            let _ = writeln!(
                t,
                "  {:4}  {:24.16e} {:24.16e}",
                row.rank, row.weighted_sq_error, row.tail_energy
            );
        }
    }
    if let Some(em) = &r.emulator {
        let _ = writeln!(t, "\nemulator");
        let _ = writeln!(t, "  max training error   {:.16e}", em.train_error_max);
        match em.loo_rms {
            Some(v) => {
                let _ = writeln!(t, "  leave-one-out rms    {v:.16e}");
            }
            None => {
                let _ = writeln!(t, "  leave-one-out rms    (not computed)");
            }
        }
        let _ = writeln!(t, "  queries              {}", em.query_count);
    }
    if let Some(a) = &r.assimilation {
        let _ = writeln!(t, "\nassimilation (first observed component)");
        let _ = writeln!(t, "  prior       mean {:.10e}  var {:.10e}", a.prior.mean, a.prior.variance);
        let _ = writeln!(t, "  gmkf        mean {:.10e}  var {:.10e}", a.gmkf.mean, a.gmkf.variance);
        let _ = writeln!(
            t,
            "  quadrature  mean {:.10e}  var {:.10e}",
            a.quadrature.mean, a.quadrature.variance
        );
        let _ = writeln!(t, "  losses by feature degree");
        for (deg, loss) in &a.losses {
            let _ = writeln!(t, "    degree {deg}  {loss:.16e}");
        }
    }
    if let Some(q) = &r.qoi {
        let _ = writeln!(t, "\nquantity of interest (extraction inflow)");
        let _ = writeln!(
            t,
            "  mean {:.10e} +- {:.10e} (95%, n = {})",
            q.mean, q.half_width_95, q.count
        );
    }
    let _ = writeln!(t, "\nartifacts");
    for (name, sha) in &r.artifacts {
        let _ = writeln!(t, "  {name:24} {sha}");
    }
    t
}

// ── tests ───────────────────────────────────────────────────────────
