//! Conditional expectation on Monte Carlo ensembles and its
//! approximations: sample means, the affine (Gauss-Markov) map and the
//! ensemble Kalman update built on it, polynomial-feature regressions,
//! conditional event probabilities, a one-dimensional quadrature oracle
//! for exact Bayesian reference answers, and Kriging emulation.
//!
//! Every fit here is the orthogonal projection of the state samples onto
//! a feature span of the observation samples, so the normal equations,
//! Galerkin orthogonality, and the Pythagoras split of the second moment
//! are the load-bearing invariants.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{chol_psd, CholFactor, DenseMatrix};

// ── ensembles ───────────────────────────────────────────────────────────

/// Column-paired samples of the state x and the observation z.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleState {
    x: DenseMatrix,
    z: DenseMatrix,
    seed: u64,
}

impl EnsembleState {
    pub fn new(x: DenseMatrix, z: DenseMatrix, seed: u64) -> Result<Self> {
        if x.cols() != z.cols() {
            return Err(Error::dim(format!(
                "x has {} columns, z has {}",
                x.cols(),
                z.cols()
            )));
        }
        Ok(Self { x, z, seed })
    }

    pub fn len(&self) -> usize {
        self.x.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.x.rows()
    }

    pub fn obs_dim(&self) -> usize {
        self.z.rows()
    }

    pub fn x(&self) -> &DenseMatrix {
        &self.x
    }

    pub fn z(&self) -> &DenseMatrix {
        &self.z
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Replaces the state block, keeping the pairing with z.
    pub fn with_x(&self, x: DenseMatrix) -> Result<Self> {
        Self::new(x, self.z.clone(), self.seed)
    }
}

/// Which block of the ensemble an operation reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    X,
    Z,
}

/// Sample mean of the selected block, the variational minimizer of the
/// squared loss over constant maps.
pub fn expectation(ens: &EnsembleState, block: Block) -> Result<Vec<f64>> {
    let m = match block {
        Block::X => &ens.x,
        Block::Z => &ens.z,
    };
    let n = m.cols();
    if n == 0 {
        return Err(Error::invalid("expectation of an empty ensemble"));
    }
    let mut mean = vec![0.0; m.rows()];
    for k in 0..n {
        for (r, mu) in mean.iter_mut().enumerate() {
            *mu += m.get(r, k);
        }
    }
    for mu in &mut mean {
        *mu /= n as f64;
    }
    Ok(mean)
}

/// A fitted map from observation samples to state predictions.
pub trait CexMap {
    fn eval(&self, z: &[f64]) -> Vec<f64>;
}

/// Mean squared prediction error of a map over the ensemble.
pub fn sampled_loss<M: CexMap + ?Sized>(ens: &EnsembleState, map: &M) -> Result<f64> {
    let n = ens.len();
    if n == 0 {
        return Err(Error::invalid("loss of an empty ensemble"));
    }
    let mut total = 0.0;
    for k in 0..n {
        let pred = map.eval(&ens.z.col(k));
        let xk = ens.x.col(k);
        total += xk
            .iter()
            .zip(&pred)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(total / n as f64)
}

// ── affine conditional expectation and the filter ──────────────────────

/// Best affine predictor z -> Kz + a in the sampled mean-square sense.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AffineCexMap {
    pub gain: DenseMatrix,
    pub offset: Vec<f64>,
}

impl CexMap for AffineCexMap {
    fn eval(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.gain.matvec(z);
        for (o, a) in out.iter_mut().zip(&self.offset) {
            *o += a;
        }
        out
    }
}

fn column_means(m: &DenseMatrix) -> Vec<f64> {
    let n = m.cols() as f64;
    let mut mean = vec![0.0; m.rows()];
    for k in 0..m.cols() {
        for (r, mu) in mean.iter_mut().enumerate() {
            *mu += m.get(r, k);
        }
    }
    for mu in &mut mean {
        *mu /= n;
    }
    mean
}

fn centered(m: &DenseMatrix, mean: &[f64]) -> DenseMatrix {
    DenseMatrix::from_fn(m.rows(), m.cols(), |r, c| m.get(r, c) - mean[r])
}

/// Fits the affine conditional expectation from sample moments: the gain
/// solves K C_z = C_xz with the shared jitter policy, and the offset
/// makes the map unbiased at the sample means.
pub fn cex_affine(ens: &EnsembleState) -> Result<AffineCexMap> {
    let n = ens.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "covariance estimation needs at least 2 samples, got {n}"
        )));
    }
    let x_mean = column_means(&ens.x);
    let z_mean = column_means(&ens.z);
    let xc = centered(&ens.x, &x_mean);
    let zc = centered(&ens.z, &z_mean);
    let scale = 1.0 / (n as f64 - 1.0);
    let c_z = zc.matmul(&zc.transpose()).scaled(scale);
    // Symmetrize roundoff before factorization.
    let c_z = c_z.add(&c_z.transpose()).scaled(0.5);
    let c_xz = xc.matmul(&zc.transpose()).scaled(scale);
    let factor = chol_psd(&c_z, 0.0)?;
    let gain = factor.solve_matrix(&c_xz.transpose()).transpose();
    let mut offset = x_mean;
    let kz = gain.matvec(&z_mean);
    for (o, v) in offset.iter_mut().zip(&kz) {
        *o -= v;
    }
    Ok(AffineCexMap { gain, offset })
}

/// The affine filter update together with the map that produced it.
#[derive(Debug, Clone)]
pub struct GmkfUpdate {
    pub map: AffineCexMap,
    /// Updated state samples, column-paired with the input ensemble.
    pub updated: DenseMatrix,
}

/// Column-wise update x_a = x_f + K(y - z) for an observed value y.
/// By linearity the updated sample mean is exactly the filter formula
/// applied to the forecast means.
pub fn gmkf_update(ens: &EnsembleState, observation: &[f64]) -> Result<GmkfUpdate> {
    if observation.len() != ens.obs_dim() {
        return Err(Error::dim(format!(
            "observation has {} components, ensemble observes {}",
            observation.len(),
            ens.obs_dim()
        )));
    }
    if observation.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "observed value",
        });
    }
    let map = cex_affine(ens)?;
    let n = ens.len();
    let mut updated = ens.x.clone();
    for k in 0..n {
        let zk = ens.z.col(k);
        let innovation: Vec<f64> = observation.iter().zip(&zk).map(|(y, z)| y - z).collect();
        let delta = map.gain.matvec(&innovation);
        for r in 0..updated.rows() {
            updated.set(r, k, updated.get(r, k) + delta[r]);
        }
    }
    Ok(GmkfUpdate { map, updated })
}

// ── polynomial conditional expectation ──────────────────────────────────

/// Hard cap on the monomial feature count.
pub const FEATURE_CAP: usize = 2000;

/// Total-degree monomial exponent tuples in d variables, degree 0 first,
/// graded lexicographic within each degree. The constant feature is
/// always index 0.
pub fn monomial_exponents(dim: usize, degree: usize) -> Result<Vec<Vec<u32>>> {
    // C(dim + degree, degree) with early overflow exit against the cap.
    let mut count: usize = 1;
    for i in 1..=degree {
        count = count.saturating_mul(dim + i) / i;
        if count > FEATURE_CAP {
            return Err(Error::FeatureCap {
                features: count,
                cap: FEATURE_CAP,
            });
        }
    }
    let mut out: Vec<Vec<u32>> = Vec::with_capacity(count);
    let mut current = vec![0u32; dim];
    fn fill(current: &mut Vec<u32>, pos: usize, left: u32, out: &mut Vec<Vec<u32>>) {
        if pos + 1 == current.len() {
            current[pos] = left;
            out.push(current.clone());
            return;
        }
        for e in (0..=left).rev() {
            current[pos] = e;
            fill(current, pos + 1, left - e, out);
        }
        current[pos] = 0;
    }
    for total in 0..=degree as u32 {
        if dim == 0 {
            if total == 0 {
                out.push(vec![]);
            }
            continue;
        }
        fill(&mut current, 0, total, &mut out);
    }
    Ok(out)
}

fn monomial(z: &[f64], exps: &[u32]) -> f64 {
    z.iter()
        .zip(exps)
        .map(|(v, &e)| v.powi(e as i32))
        .product()
}

/// Least-squares regression of the state on monomials of the
/// observation up to a total degree.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolynomialCexMap {
    pub degree: usize,
    pub exponents: Vec<Vec<u32>>,
    /// d_x x n_features coefficient matrix.
    pub coefficients: DenseMatrix,
}

impl CexMap for PolynomialCexMap {
    fn eval(&self, z: &[f64]) -> Vec<f64> {
        let phi: Vec<f64> = self.exponents.iter().map(|e| monomial(z, e)).collect();
        self.coefficients.matvec(&phi)
    }
}

/// Fits the polynomial conditional expectation by solving the feature
/// normal equations with the shared jitter policy. The feature space
/// nests the affine one, so the sampled loss can only go down with
/// degree.
pub fn cex_polynomial(ens: &EnsembleState, degree: usize) -> Result<PolynomialCexMap> {
    if degree == 0 {
        return Err(Error::invalid("polynomial degree must be at least 1"));
    }
    let n = ens.len();
    if n < 2 {
        return Err(Error::invalid(format!(
            "regression needs at least 2 samples, got {n}"
        )));
    }
    let exponents = monomial_exponents(ens.obs_dim(), degree)?;
    let nf = exponents.len();
    // Feature matrix, samples by features.
    let mut phi = DenseMatrix::zeros(n, nf);
    for k in 0..n {
        let zk = ens.z.col(k);
        for (f, e) in exponents.iter().enumerate() {
            phi.set(k, f, monomial(&zk, e));
        }
    }
    if !phi.is_finite() {
        return Err(Error::NonFinite {
            context: "monomial feature",
        });
    }
    let pt = phi.transpose();
    let gram = pt.matmul(&phi).scaled(1.0 / n as f64);
    let gram = gram.add(&gram.transpose()).scaled(0.5);
    let factor = chol_psd(&gram, 0.0)?;
    // Normal equations per state component: G c = (1/n) Phi^T x.
    let rhs = pt.matmul(&ens.x.transpose()).scaled(1.0 / n as f64);
    let coefficients = factor.solve_matrix(&rhs).transpose();
    Ok(PolynomialCexMap {
        degree,
        exponents,
        coefficients,
    })
}

/// A conditional probability estimate, with the raw regression value
/// kept next to the clamped one.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConditionalProbability {
    /// Regression output before clamping.
    pub raw: f64,
    /// raw clamped into [0, 1].
    pub value: f64,
    pub clamped: bool,
}

/// Conditional probability of an event over the state, given an
/// observed value: the polynomial conditional expectation of the event
/// indicator, evaluated at the observation.
pub fn conditional_probability(
    ens: &EnsembleState,
    event: impl Fn(&[f64]) -> bool,
    observation: &[f64],
    degree: usize,
) -> Result<ConditionalProbability> {
    let n = ens.len();
    let indicator = DenseMatrix::from_fn(1, n, |_, k| {
        if event(&ens.x.col(k)) {
            1.0
        } else {
            0.0
        }
    });
    let ind_ens = EnsembleState::new(indicator, ens.z.clone(), ens.seed)?;
    let map = cex_polynomial(&ind_ens, degree)?;
    let raw = map.eval(observation)[0];
    let value = raw.clamp(0.0, 1.0);
    Ok(ConditionalProbability {
        raw,
        value,
        clamped: value != raw,
    })
}

/// Sample correlations E[(x - map(z)) * feature(z)] for every monomial
/// test feature up to the given degree, one column per feature. An
/// exactly fitted map makes its own feature block vanish.
pub fn galerkin_residual<M: CexMap + ?Sized>(
    ens: &EnsembleState,
    map: &M,
    test_degree: usize,
) -> Result<DenseMatrix> {
    let n = ens.len();
    if n == 0 {
        return Err(Error::invalid("empty ensemble"));
    }
    let exponents = monomial_exponents(ens.obs_dim(), test_degree)?;
    let mut out = DenseMatrix::zeros(ens.state_dim(), exponents.len());
    for k in 0..n {
        let zk = ens.z.col(k);
        let pred = map.eval(&zk);
        let xk = ens.x.col(k);
        for (f, e) in exponents.iter().enumerate() {
            let chi = monomial(&zk, e);
            for r in 0..ens.state_dim() {
                out.set(r, f, out.get(r, f) + (xk[r] - pred[r]) * chi);
            }
        }
    }
    Ok(out.scaled(1.0 / n as f64))
}

// ── quadrature Bayes oracle ─────────────────────────────────────────────

/// Posterior summary from one-dimensional quadrature.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Posterior1d {
    pub mean: f64,
    pub variance: f64,
    /// Normalized posterior density at the grid nodes.
    pub pdf: Vec<f64>,
    /// The normalization constant that was divided out.
    pub evidence: f64,
}

const EVIDENCE_FLOOR: f64 = 1e-300;

/// Exact single-variable Bayesian update by trapezoid quadrature:
/// normalizes prior times likelihood on the grid and integrates the
/// first two moments. Serves as the reference answer for the filters.
pub fn bayes_quadrature_1d(
    prior_pdf: impl Fn(f64) -> f64,
    likelihood: impl Fn(f64, f64) -> f64,
    observation: f64,
    grid: &[f64],
) -> Result<Posterior1d> {
    if grid.len() < 2 {
        return Err(Error::invalid("quadrature grid needs at least 2 nodes"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("quadrature grid must be finite and strictly increasing"));
    }
    let unnorm: Vec<f64> = grid
        .iter()
        .map(|&x| {
            let v = prior_pdf(x) * likelihood(observation, x);
            if v.is_finite() && v >= 0.0 {
                Ok(v)
            } else {
                Err(Error::NonFinite {
                    context: "posterior integrand",
                })
            }
        })
        .collect::<Result<_>>()?;
    let trapezoid = |f: &dyn Fn(usize) -> f64| -> f64 {
        grid.windows(2)
            .enumerate()
            .map(|(i, w)| 0.5 * (w[1] - w[0]) * (f(i) + f(i + 1)))
            .sum()
    };
    let evidence = trapezoid(&|i| unnorm[i]);
    if !(evidence > EVIDENCE_FLOOR) {
        return Err(Error::EvidenceUnderflow { evidence });
    }
    let pdf: Vec<f64> = unnorm.iter().map(|v| v / evidence).collect();
    let mean = trapezoid(&|i| grid[i] * pdf[i]);
    let second = trapezoid(&|i| grid[i] * grid[i] * pdf[i]);
    Ok(Posterior1d {
        mean,
        variance: (second - mean * mean).max(0.0),
        pdf,
        evidence,
    })
}

// ── Kriging / Gaussian process emulation ────────────────────────────────

/// Kernel families for the emulator Gram matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelKind {
    SquaredExponential,
    Exponential,
    /// A user-supplied Gram matrix over the training inputs, e.g. a
    /// sample-estimated covariance. Prediction is then only defined at
    /// the training inputs themselves.
    EmpiricalGram { gram: DenseMatrix },
}

/// Covariance model for Kriging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// None defers to the median pairwise training distance.
    pub length_scale: Option<f64>,
    pub amplitude: f64,
    /// Output cross-covariance for vector targets under the separable
    /// model; None means independent components.
    pub cross_covariance: Option<DenseMatrix>,
}

impl KernelSpec {
    pub fn squared_exponential(length_scale: f64, amplitude: f64) -> Self {
        Self {
            kind: KernelKind::SquaredExponential,
            length_scale: Some(length_scale),
            amplitude,
            cross_covariance: None,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0) || !self.amplitude.is_finite() {
            return Err(Error::invalid(format!(
                "kernel amplitude must be positive, got {}",
                self.amplitude
            )));
        }
        if let Some(l) = self.length_scale {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::invalid(format!(
                    "length scale must be positive, got {l}"
                )));
            }
        }
        if let Some(sig) = &self.cross_covariance {
            if !sig.is_square() {
                return Err(Error::NotSquare {
                    rows: sig.rows(),
                    cols: sig.cols(),
                });
            }
        }
        Ok(())
    }
}

/// Mean model of the emulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanMode {
    Zero,
    ConstantFit,
}

/// Trained Kriging emulator: training data, resolved kernel, the
/// factored Gram matrix, and the fitted constant mean.
#[derive(Debug, Clone)]
pub struct GpeEmulator {
    train_inputs: Vec<Vec<f64>>,
    /// Centered training values, one column per training point.
    values_centered: DenseMatrix,
    kernel: KernelSpec,
    resolved_length_scale: f64,
    factor: CholFactor,
    mean_model: Vec<f64>,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn kernel_eval(spec: &KernelSpec, length_scale: f64, a: &[f64], b: &[f64]) -> f64 {
    let d = euclid(a, b);
    match spec.kind {
        KernelKind::SquaredExponential => {
            let t = d / length_scale;
            spec.amplitude * (-0.5 * t * t).exp()
        }
        KernelKind::Exponential => spec.amplitude * (-d / length_scale).exp(),
        KernelKind::EmpiricalGram { .. } => {
            unreachable!("empirical Gram kernels are read from the stored matrix")
        }
    }
}

/// Median pairwise distance of the inputs, the default length scale.
fn median_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut dists = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            dists.push(euclid(&points[i], &points[j]));
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = dists.len() / 2;
    let med = if dists.len() % 2 == 1 {
        dists[mid]
    } else {
        0.5 * (dists[mid - 1] + dists[mid])
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Trains the emulator. Exactly duplicated inputs are collapsed to one
/// point with averaged values (with a warning), matching the
/// interpolation view of Kriging.
pub fn gpe_train(
    train_inputs: &[Vec<f64>],
    train_values: &[Vec<f64>],
    kernel: KernelSpec,
    mean_mode: MeanMode,
) -> Result<GpeEmulator> {
    kernel.validate()?;
    if train_inputs.is_empty() {
        return Err(Error::invalid("emulator needs at least one training point"));
    }
    if train_inputs.len() != train_values.len() {
        return Err(Error::dim(format!(
            "{} training inputs but {} value vectors",
            train_inputs.len(),
            train_values.len()
        )));
    }
    let in_dim = train_inputs[0].len();
    let out_dim = train_values[0].len();
    if out_dim == 0 || in_dim == 0 {
        return Err(Error::invalid("training points must have positive dimension"));
    }
    for (k, (i, v)) in train_inputs.iter().zip(train_values).enumerate() {
        if i.len() != in_dim || v.len() != out_dim {
            return Err(Error::dim(format!("training point {k} has inconsistent shape")));
        }
        if i.iter().chain(v.iter()).any(|t| !t.is_finite()) {
            return Err(Error::NonFinite {
                context: "training data",
            });
        }
    }

    // Collapse exact duplicates, averaging their values.
    let mut inputs: Vec<Vec<f64>> = Vec::new();
    let mut sums: Vec<Vec<f64>> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for (i, v) in train_inputs.iter().zip(train_values) {
        if let Some(pos) = inputs.iter().position(|p| p == i) {
            for (s, t) in sums[pos].iter_mut().zip(v) {
                *s += t;
            }
            counts[pos] += 1;
        } else {
            inputs.push(i.clone());
            sums.push(v.clone());
            counts.push(1);
        }
    }
    if inputs.len() < train_inputs.len() {
        warn!(
            "collapsed {} duplicate training inputs (values averaged)",
            train_inputs.len() - inputs.len()
        );
    }
    let values: Vec<Vec<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s.iter().map(|v| v / c as f64).collect())
        .collect();
    let m = inputs.len();

    if let KernelKind::EmpiricalGram { gram } = &kernel.kind {
        if gram.rows() != m || gram.cols() != m {
            return Err(Error::dim(format!(
                "empirical Gram is {}x{}, need {m}x{m} after duplicate collapse",
                gram.rows(),
                gram.cols()
            )));
        }
    }

    let resolved_length_scale = match kernel.length_scale {
        Some(l) => l,
        None => median_pairwise_distance(&inputs),
    };

    let gram = match &kernel.kind {
        KernelKind::EmpiricalGram { gram } => gram.clone(),
        _ => {
            let g = DenseMatrix::from_fn(m, m, |i, j| {
                kernel_eval(&kernel, resolved_length_scale, &inputs[i], &inputs[j])
            });
            g.add(&g.transpose()).scaled(0.5)
        }
    };
    let factor = chol_psd(&gram, 0.0)?;

    let mean_model = match mean_mode {
        MeanMode::Zero => vec![0.0; out_dim],
        MeanMode::ConstantFit => {
            let mut mm = vec![0.0; out_dim];
            for v in &values {
                for (s, t) in mm.iter_mut().zip(v) {
                    *s += t;
                }
            }
            for s in &mut mm {
                *s /= m as f64;
            }
            mm
        }
    };
    let values_centered =
        DenseMatrix::from_fn(out_dim, m, |r, c| values[c][r] - mean_model[r]);
    Ok(GpeEmulator {
        train_inputs: inputs,
        values_centered,
        kernel,
        resolved_length_scale,
        factor,
        mean_model,
    })
}

impl GpeEmulator {
    pub fn train_inputs(&self) -> &[Vec<f64>] {
        &self.train_inputs
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn length_scale(&self) -> f64 {
        self.resolved_length_scale
    }

    pub fn mean_model(&self) -> &[f64] {
        &self.mean_model
    }

    pub fn output_dim(&self) -> usize {
        self.values_centered.rows()
    }

    /// Kernel vector between a query point and the training inputs.
    fn cross_vector(&self, mu: &[f64]) -> Result<Vec<f64>> {
        if mu.len() != self.train_inputs[0].len() {
            return Err(Error::dim(format!(
                "query point has {} coordinates, training inputs have {}",
                mu.len(),
                self.train_inputs[0].len()
            )));
        }
        match &self.kernel.kind {
            KernelKind::EmpiricalGram { gram } => {
                let pos = self
                    .train_inputs
                    .iter()
                    .position(|p| p.as_slice() == mu)
                    .ok_or_else(|| {
                        Error::invalid(
                            "empirical Gram kernels can only predict at training inputs",
                        )
                    })?;
                Ok(gram.col(pos))
            }
            _ => Ok(self
                .train_inputs
                .iter()
                .map(|p| kernel_eval(&self.kernel, self.resolved_length_scale, mu, p))
                .collect()),
        }
    }
}

/// Mean prediction: the fitted mean plus the weighted combination of
/// centered training values, with weights solving the Gram system.
pub fn gpe_predict(emulator: &GpeEmulator, mu: &[f64]) -> Result<Vec<f64>> {
    let g = emulator.cross_vector(mu)?;
    let w = emulator.factor.solve_vec(&g);
    let mut out = emulator.values_centered.matvec(&w);
    for (o, m) in out.iter_mut().zip(&emulator.mean_model) {
        *o += m;
    }
    Ok(out)
}

/// Cap on the blocked system size d*m for the general vector solve.
pub const BLOCKED_CAP: usize = 2000;

/// Vector prediction through the fully blocked Kronecker system, the
/// general form whose separable special case gpe_predict exploits. The
/// dense blocked solve is only allowed up to BLOCKED_CAP unknowns; it
/// exists as a cross-check, since under a separable cross-covariance it
/// must agree with the per-component path.
pub fn gpe_blocked_predict(emulator: &GpeEmulator, mu: &[f64]) -> Result<Vec<f64>> {
    let d = emulator.output_dim();
    let m = emulator.train_inputs.len();
    if d * m > BLOCKED_CAP {
        return Err(Error::FeatureCap {
            features: d * m,
            cap: BLOCKED_CAP,
        });
    }
    let sigma = match &emulator.kernel.cross_covariance {
        Some(s) => {
            if s.rows() != d {
                return Err(Error::dim(format!(
                    "cross-covariance is {}x{}, output dimension is {d}",
                    s.rows(),
                    s.cols()
                )));
            }
            s.clone()
        }
        None => DenseMatrix::identity(d),
    };
    let g = emulator.cross_vector(mu)?;
    // Blocked Gram: K_ij * Sigma, blocked right-hand side: g_i * Sigma.
    let mut big = DenseMatrix::zeros(m * d, m * d);
    let gram = {
        // Rebuild the scalar Gram from the factor: L L^T.
        let l = &emulator.factor.lower;
        l.matmul(&l.transpose())
    };
    for i in 0..m {
        for j in 0..m {
            let kij = gram.get(i, j);
            for a in 0..d {
                for b in 0..d {
                    big.set(i * d + a, j * d + b, kij * sigma.get(a, b));
                }
            }
        }
    }
    let mut rhs = DenseMatrix::zeros(m * d, d);
    for i in 0..m {
        for a in 0..d {
            for b in 0..d {
                rhs.set(i * d + a, b, g[i] * sigma.get(a, b));
            }
        }
    }
    let factor = chol_psd(&big, 0.0)?;
    let weights = factor.solve_matrix(&rhs);
    // Prediction component b: sum over training points and components of
    // W[(i,a), b] * value[a, i], i.e. the blocked weight matrix applied
    // to the stacked centered values.
    let mut out = emulator.mean_model.clone();
    for b in 0..d {
        let mut acc = 0.0;
        for i in 0..m {
            for a in 0..d {
                acc += weights.get(i * d + a, b) * emulator.values_centered.get(a, i);
            }
        }
        out[b] += acc;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal_vec, stream_rng, CH_ENSEMBLE};
    use rand::Rng;

    struct ConstMap(Vec<f64>);

    impl CexMap for ConstMap {
        fn eval(&self, _z: &[f64]) -> Vec<f64> {
            self.0.clone()
        }
    }

    fn gaussian_matrix(rows: usize, cols: usize, seed: u64, idx: u64) -> DenseMatrix {
        let mut rng = stream_rng(seed, CH_ENSEMBLE, idx);
        let data = standard_normal_vec(&mut rng, rows * cols);
        DenseMatrix::from_vec(rows, cols, data).unwrap()
    }

    /// x ~ N(0,1), eps ~ N(0,1), z = x + eps: the standard conjugate
    /// pair used across the filter tests.
    fn conjugate_ensemble(n: usize, seed: u64) -> EnsembleState {
        let x = gaussian_matrix(1, n, seed, 0);
        let eps = gaussian_matrix(1, n, seed, 1);
        let z = x.add(&eps);
        EnsembleState::new(x, z, seed).unwrap()
    }

    #[test]
    fn expectation_of_constant_and_antisymmetric_ensembles() {
        let x = DenseMatrix::from_fn(3, 5, |r, _| r as f64 + 1.0);
        let z = DenseMatrix::zeros(1, 5);
        let ens = EnsembleState::new(x, z, 0).unwrap();
        assert_eq!(expectation(&ens, Block::X).unwrap(), vec![1.0, 2.0, 3.0]);

        let v = [2.0, -3.0];
        let x = DenseMatrix::from_fn(2, 2, |r, c| if c == 0 { v[r] } else { -v[r] });
        let ens = EnsembleState::new(x, DenseMatrix::zeros(1, 2), 0).unwrap();
        let mean = expectation(&ens, Block::X).unwrap();
        assert!(mean.iter().all(|&m| m.abs() <= 1e-15));
    }

    #[test]
    fn expectation_of_empty_ensemble_errors() {
        let ens = EnsembleState::new(DenseMatrix::zeros(2, 0), DenseMatrix::zeros(1, 0), 0).unwrap();
        assert!(expectation(&ens, Block::X).is_err());
    }

    #[test]
    fn mean_minimizes_loss_over_constant_maps() {
        let ens = EnsembleState::new(
            gaussian_matrix(1, 2000, 5, 0),
            DenseMatrix::zeros(1, 2000),
            5,
        )
        .unwrap();
        let mean = expectation(&ens, Block::X).unwrap()[0];
        // Brute-force scan over constants on a grid around the mean.
        let mut best = (f64::INFINITY, f64::NAN);
        let mut c = mean - 1.0;
        while c <= mean + 1.0 {
            let loss = sampled_loss(&ens, &ConstMap(vec![c])).unwrap();
            if loss < best.0 {
                best = (loss, c);
            }
            c += 0.01;
        }
        assert!(
            (best.1 - mean).abs() <= 0.01 + 1e-12,
            "grid minimizer {} vs mean {mean}",
            best.1
        );
    }

    #[test]
    fn affine_identity_observation_has_unit_gain() {
        let z = gaussian_matrix(2, 4000, 7, 0);
        let ens = EnsembleState::new(z.clone(), z, 7).unwrap();
        let map = cex_affine(&ens).unwrap();
        let id = DenseMatrix::identity(2);
        assert!(map.gain.sub(&id).max_abs() <= 1e-8);
        assert!(map.offset.iter().all(|&a| a.abs() <= 1e-8));
    }

    #[test]
    fn affine_gain_vanishes_for_independent_blocks() {
        let x = gaussian_matrix(1, 100_000, 11, 0);
        let z = gaussian_matrix(1, 100_000, 11, 1);
        let ens = EnsembleState::new(x, z, 11).unwrap();
        let map = cex_affine(&ens).unwrap();
        assert!(map.gain.max_abs() <= 0.02, "gain {}", map.gain.max_abs());
    }

    #[test]
    fn affine_gain_matches_conjugate_gaussian_oracle() {
        let ens = conjugate_ensemble(100_000, 13);
        let map = cex_affine(&ens).unwrap();
        let k = map.gain.get(0, 0);
        // Closed form: K = var(x) / (var(x) + var(eps)) = 0.5.
        assert!((k - 0.5).abs() <= 0.02, "gain {k}");
    }

    #[test]
    fn affine_map_is_unbiased_at_sample_means() {
        let x = gaussian_matrix(3, 500, 17, 0);
        let z = gaussian_matrix(2, 500, 17, 1);
        let ens = EnsembleState::new(x, z, 17).unwrap();
        let map = cex_affine(&ens).unwrap();
        let xm = expectation(&ens, Block::X).unwrap();
        let zm = expectation(&ens, Block::Z).unwrap();
        let at_mean = map.eval(&zm);
        for (a, b) in at_mean.iter().zip(&xm) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn gmkf_mean_identity_and_fixed_point_at_observed_mean() {
        let ens = conjugate_ensemble(5000, 19);
        let zm = expectation(&ens, Block::Z).unwrap();
        let xm = expectation(&ens, Block::X).unwrap();
        let up = gmkf_update(&ens, &zm).unwrap();
        let updated = ens.with_x(up.updated.clone()).unwrap();
        let new_mean = expectation(&updated, Block::X).unwrap();
        assert!((new_mean[0] - xm[0]).abs() <= 1e-12, "mean moved at y = z mean");

        // The exact linearity identity at an arbitrary observation.
        let y = vec![0.7];
        let up = gmkf_update(&ens, &y).unwrap();
        let expect = xm[0] + up.map.gain.get(0, 0) * (y[0] - zm[0]);
        let got = expectation(&ens.with_x(up.updated).unwrap(), Block::X).unwrap()[0];
        assert!((got - expect).abs() <= 1e-12);
    }

    #[test]
    fn gmkf_matches_conjugate_posterior_at_large_n() {
        let n = 100_000;
        let ens = conjugate_ensemble(n, 23);
        let up = gmkf_update(&ens, &[1.0]).unwrap();
        let mean: f64 = (0..n).map(|k| up.updated.get(0, k)).sum::<f64>() / n as f64;
        let var: f64 = (0..n)
            .map(|k| (up.updated.get(0, k) - mean).powi(2))
            .sum::<f64>()
            / (n as f64 - 1.0);
        // Conjugate closed form: posterior N(0.5, 0.5).
        assert!((mean - 0.5).abs() <= 0.01, "posterior mean {mean}");
        assert!((var - 0.5).abs() <= 0.01, "posterior variance {var}");
    }

    #[test]
    fn polynomial_degree_one_equals_affine() {
        let ens = conjugate_ensemble(3000, 29);
        let affine = cex_affine(&ens).unwrap();
        let poly = cex_polynomial(&ens, 1).unwrap();
        for z in [-2.0, -0.5, 0.0, 1.3, 2.7] {
            let a = affine.eval(&[z])[0];
            let p = poly.eval(&[z])[0];
            assert!((a - p).abs() <= 1e-10, "at z={z}: {a} vs {p}");
        }
        let la = sampled_loss(&ens, &affine).unwrap();
        let lp = sampled_loss(&ens, &poly).unwrap();
        assert!((la - lp).abs() <= 1e-10);
    }

    #[test]
    fn polynomial_fits_realizable_square_exactly() {
        let n = 400;
        let mut rng = stream_rng(31, CH_ENSEMBLE, 0);
        let zdata: Vec<f64> = (0..n).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect();
        let z = DenseMatrix::from_vec(1, n, zdata.clone()).unwrap();
        let x = DenseMatrix::from_vec(1, n, zdata.iter().map(|v| v * v).collect()).unwrap();
        let ens = EnsembleState::new(x, z, 31).unwrap();
        let map = cex_polynomial(&ens, 2).unwrap();
        assert!(sampled_loss(&ens, &map).unwrap() <= 1e-10);
    }

    #[test]
    fn polynomial_loss_is_monotone_in_degree() {
        let n = 20_000;
        let z = gaussian_matrix(1, n, 37, 0);
        let x = DenseMatrix::from_fn(1, n, |_, k| z.get(0, k).sin());
        let ens = EnsembleState::new(x, z, 37).unwrap();
        let l1 = sampled_loss(&ens, &cex_polynomial(&ens, 1).unwrap()).unwrap();
        let l2 = sampled_loss(&ens, &cex_polynomial(&ens, 2).unwrap()).unwrap();
        let l3 = sampled_loss(&ens, &cex_polynomial(&ens, 3).unwrap()).unwrap();
        assert!(l2 <= l1 + 1e-12);
        assert!(l3 <= l2 + 1e-12);
        // sin is odd: the cubic must strictly improve on the affine fit.
        assert!(l3 < l1 - 1e-4, "degree 3 {l3} vs degree 1 {l1}");
    }

    #[test]
    fn feature_cap_is_enforced() {
        // 10 observation variables at degree 5 is 3003 monomials.
        let x = gaussian_matrix(1, 3, 41, 0);
        let z = gaussian_matrix(10, 3, 41, 1);
        let ens = EnsembleState::new(x, z, 41).unwrap();
        match cex_polynomial(&ens, 5) {
            Err(Error::FeatureCap { features, cap }) => {
                assert_eq!(features, 3003);
                assert_eq!(cap, FEATURE_CAP);
            }
            other => panic!("expected feature cap error, got {other:?}"),
        }
    }

    #[test]
    fn conditional_probability_preserves_sure_events() {
        let ens = conjugate_ensemble(2000, 43);
        let sure = conditional_probability(&ens, |_| true, &[0.3], 2).unwrap();
        assert!((sure.value - 1.0).abs() <= 1e-10);
        assert!(!sure.clamped || (sure.raw - 1.0).abs() <= 1e-10);
        let never = conditional_probability(&ens, |_| false, &[0.3], 2).unwrap();
        assert!(never.value.abs() <= 1e-10);
    }

    #[test]
    fn conditional_probability_matches_quadrature_oracle() {
        let ens = conjugate_ensemble(100_000, 47);
        let cp = conditional_probability(&ens, |x| x[0] > 0.0, &[1.0], 3).unwrap();
        // Quadrature reference for the same conjugate setup.
        let grid: Vec<f64> = (0..32001).map(|i| -8.0 + 16.0 * i as f64 / 32000.0).collect();
        let prior = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let lik = |y: f64, x: f64| {
            let d = y - x;
            (-0.5 * d * d).exp() / (2.0 * std::f64::consts::PI).sqrt()
        };
        let post = bayes_quadrature_1d(prior, lik, 1.0, &grid).unwrap();
        let mut prob = 0.0;
        for i in 0..grid.len() - 1 {
            if grid[i] >= 0.0 {
                prob += 0.5 * (grid[i + 1] - grid[i]) * (post.pdf[i] + post.pdf[i + 1]);
            }
        }
        assert!(
            (cp.value - prob).abs() <= 0.05,
            "regression {} vs quadrature {prob}",
            cp.value
        );
    }

    #[test]
    fn quadrature_matches_conjugate_closed_form() {
        let grid: Vec<f64> = (0..32001).map(|i| -8.0 + 16.0 * i as f64 / 32000.0).collect();
        let prior = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let lik = |y: f64, x: f64| {
            let d = y - x;
            (-0.5 * d * d).exp() / (2.0 * std::f64::consts::PI).sqrt()
        };
        let post = bayes_quadrature_1d(prior, lik, 1.0, &grid).unwrap();
        assert!((post.mean - 0.5).abs() <= 1e-6, "mean {}", post.mean);
        assert!((post.variance - 0.5).abs() <= 1e-6, "variance {}", post.variance);
    }

    #[test]
    fn quadrature_trivial_cases_and_errors() {
        let grid: Vec<f64> = (0..4001).map(|i| -6.0 + 12.0 * i as f64 / 4000.0).collect();
        let prior = |x: f64| (-0.5 * x * x).exp();
        // Likelihood independent of x: posterior is the normalized prior.
        let post = bayes_quadrature_1d(prior, |_, _| 0.37, 0.0, &grid).unwrap();
        let z: f64 = grid
            .windows(2)
            .enumerate()
            .map(|(i, w)| 0.5 * (w[1] - w[0]) * (prior(grid[i]) + prior(grid[i + 1])))
            .sum();
        for (i, &x) in grid.iter().enumerate() {
            assert!((post.pdf[i] - prior(x) / z).abs() <= 1e-10);
        }
        // Symmetric prior and likelihood at zero: mean zero.
        let sym = bayes_quadrature_1d(prior, |y, x| (-(y - x).powi(2)).exp(), 0.0, &grid).unwrap();
        assert!(sym.mean.abs() <= 1e-10);

        assert!(matches!(
            bayes_quadrature_1d(prior, |_, _| 0.0, 0.0, &grid),
            Err(Error::EvidenceUnderflow { .. })
        ));
        assert!(bayes_quadrature_1d(prior, |_, _| 1.0, 0.0, &[0.0]).is_err());
        assert!(bayes_quadrature_1d(prior, |_, _| 1.0, 0.0, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn galerkin_residual_vanishes_for_fitted_features() {
        let ens = conjugate_ensemble(5000, 53);
        let affine = cex_affine(&ens).unwrap();
        let corr = galerkin_residual(&ens, &affine, 1).unwrap();
        assert!(corr.max_abs() <= 1e-10, "normal equations violated: {}", corr.max_abs());

        let poly = cex_polynomial(&ens, 2).unwrap();
        let corr = galerkin_residual(&ens, &poly, 2).unwrap();
        assert!(corr.max_abs() <= 1e-10);
    }

    #[test]
    fn galerkin_residual_detects_unfitted_cubic() {
        let n = 50_000;
        let z = gaussian_matrix(1, n, 59, 0);
        let x = DenseMatrix::from_fn(1, n, |_, k| z.get(0, k).powi(3));
        let ens = EnsembleState::new(x, z, 59).unwrap();
        let map = cex_polynomial(&ens, 2).unwrap();
        let corr = galerkin_residual(&ens, &map, 3).unwrap();
        // Quadratic features are fitted out...
        let quad = monomial_exponents(1, 2).unwrap().len();
        for f in 0..quad {
            assert!(corr.get(0, f).abs() <= 1e-8);
        }
        // ...but the cubic correlation approaches E[(z^3 - 3z) z^3] = 6.
        let cubic = corr.get(0, 3);
        assert!(cubic > 1.0, "cubic correlation too small: {cubic}");
    }

    #[test]
    fn pythagoras_split_of_second_moment() {
        let n = 10_000;
        let z = gaussian_matrix(2, n, 61, 0);
        let x = DenseMatrix::from_fn(2, n, |r, k| {
            let a = z.get(0, k);
            let b = z.get(1, k);
            if r == 0 { a * b + 0.5 } else { a - 0.3 * b * b }
        });
        let ens = EnsembleState::new(x, z, 61).unwrap();
        // Center the state by its mean (the fitted constant), then fit.
        let xm = expectation(&ens, Block::X).unwrap();
        let xc = DenseMatrix::from_fn(2, n, |r, k| ens.x().get(r, k) - xm[r]);
        let cens = EnsembleState::new(xc.clone(), ens.z().clone(), 61).unwrap();
        let map = cex_polynomial(&cens, 2).unwrap();
        let total: f64 = (0..n).map(|k| {
            let c = xc.col(k);
            dot_slice(&c, &c)
        }).sum::<f64>() / n as f64;
        let resid = sampled_loss(&cens, &map).unwrap();
        let fitted: f64 = (0..n).map(|k| {
            let p = map.eval(&cens.z().col(k));
            dot_slice(&p, &p)
        }).sum::<f64>() / n as f64;
        assert!(
            (total - (resid + fitted)).abs() <= 1e-8 * total,
            "{total} vs {resid} + {fitted}"
        );
    }

    fn dot_slice(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    // ── Kriging ─────────────────────────────────────────────────────

    fn se_kernel(l: f64) -> KernelSpec {
        KernelSpec::squared_exponential(l, 1.0)
    }

    #[test]
    fn gpe_single_point_and_zero_values() {
        let em = gpe_train(
            &[vec![0.5]],
            &[vec![3.25]],
            se_kernel(1.0),
            MeanMode::Zero,
        )
        .unwrap();
        let at = gpe_predict(&em, &[0.5]).unwrap();
        assert!((at[0] - 3.25).abs() <= 1e-8);

        let zero = gpe_train(
            &[vec![0.0], vec![1.0], vec![2.0]],
            &[vec![0.0], vec![0.0], vec![0.0]],
            se_kernel(1.0),
            MeanMode::Zero,
        )
        .unwrap();
        for q in [-1.0, 0.3, 5.0] {
            assert_eq!(gpe_predict(&zero, &[q]).unwrap(), vec![0.0]);
        }
    }

    #[test]
    fn gpe_weights_satisfy_gram_system() {
        let inputs: Vec<Vec<f64>> = (0..5).map(|k| vec![0.4 * k as f64]).collect();
        let values: Vec<Vec<f64>> = inputs.iter().map(|p| vec![(2.0 * p[0]).sin()]).collect();
        let em = gpe_train(&inputs, &values, se_kernel(0.7), MeanMode::Zero).unwrap();
        let q = [0.55];
        let g = em.cross_vector(&q).unwrap();
        let w = em.factor.solve_vec(&g);
        // Residual of the defining linear system.
        let l = &em.factor.lower;
        let k = l.matmul(&l.transpose());
        let back = k.matvec(&w);
        for (a, b) in back.iter().zip(&g) {
            assert!((a - b).abs() <= 1e-8, "Gram system residual");
        }
    }

    #[test]
    fn gpe_interpolates_and_decays() {
        let inputs: Vec<Vec<f64>> = (0..6).map(|k| vec![0.3 * k as f64]).collect();
        let values: Vec<Vec<f64>> = inputs
            .iter()
            .map(|p| vec![1.0 + p[0] * p[0], (3.0 * p[0]).cos()])
            .collect();
        let em = gpe_train(&inputs, &values, se_kernel(0.5), MeanMode::Zero).unwrap();
        let mut max_train = 0.0f64;
        for (p, v) in inputs.iter().zip(&values) {
            let pred = gpe_predict(&em, p).unwrap();
            for (a, b) in pred.iter().zip(v) {
                assert!(
                    (a - b).abs() <= 1e-6 * b.abs().max(1.0),
                    "training point not interpolated: {a} vs {b}"
                );
                max_train = max_train.max(b.abs());
            }
        }
        // Ten length scales past the last training point.
        let far = gpe_predict(&em, &[1.5 + 10.0 * 0.5]).unwrap();
        let norm: f64 = far.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 1e-6 * max_train, "no decay far away: {norm}");
    }

    #[test]
    fn gpe_loo_beats_constant_predictor() {
        let inputs: Vec<Vec<f64>> = (0..8).map(|k| vec![0.25 * k as f64]).collect();
        let f = |t: f64| (2.0 * t).sin() + 0.3 * t;
        let values: Vec<Vec<f64>> = inputs.iter().map(|p| vec![f(p[0])]).collect();
        let mut gpe_err = 0.0;
        let mut const_err = 0.0;
        for leave in 0..inputs.len() {
            let tr_in: Vec<Vec<f64>> = inputs
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != leave)
                .map(|(_, p)| p.clone())
                .collect();
            let tr_val: Vec<Vec<f64>> = values
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != leave)
                .map(|(_, v)| v.clone())
                .collect();
            let em = gpe_train(&tr_in, &tr_val, se_kernel(0.5), MeanMode::ConstantFit).unwrap();
            let pred = gpe_predict(&em, &inputs[leave]).unwrap()[0];
            gpe_err += (pred - values[leave][0]).powi(2);
            let cmean: f64 = tr_val.iter().map(|v| v[0]).sum::<f64>() / tr_val.len() as f64;
            const_err += (cmean - values[leave][0]).powi(2);
        }
        assert!(
            gpe_err < const_err,
            "LOO error {gpe_err} not below constant predictor {const_err}"
        );
    }

    #[test]
    fn gpe_collapses_duplicates_with_averaged_values() {
        let em = gpe_train(
            &[vec![1.0], vec![1.0], vec![2.0]],
            &[vec![4.0], vec![6.0], vec![1.0]],
            se_kernel(0.8),
            MeanMode::Zero,
        )
        .unwrap();
        assert_eq!(em.train_inputs().len(), 2);
        let at = gpe_predict(&em, &[1.0]).unwrap();
        assert!((at[0] - 5.0).abs() <= 1e-6, "averaged duplicate value: {}", at[0]);
    }

    #[test]
    fn gpe_length_scale_defaults_to_median_pairwise_distance() {
        let inputs = vec![vec![0.0], vec![1.0], vec![3.0]];
        let values = vec![vec![1.0], vec![2.0], vec![3.0]];
        let mut spec = se_kernel(1.0);
        spec.length_scale = None;
        let em = gpe_train(&inputs, &values, spec, MeanMode::Zero).unwrap();
        // Pairwise distances 1, 2, 3; median 2.
        assert_eq!(em.length_scale(), 2.0);
    }

    #[test]
    fn gpe_blocked_solve_agrees_with_separable_path() {
        let inputs: Vec<Vec<f64>> = (0..4).map(|k| vec![0.5 * k as f64, 1.0 - 0.2 * k as f64]).collect();
        let values: Vec<Vec<f64>> = (0..4)
            .map(|k| vec![k as f64, (k as f64).sin(), 2.0 - k as f64])
            .collect();
        let sigma = DenseMatrix::from_vec(
            3,
            3,
            vec![2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 1.0],
        )
        .unwrap();
        let mut spec = se_kernel(0.9);
        spec.cross_covariance = Some(sigma);
        let em = gpe_train(&inputs, &values, spec, MeanMode::ConstantFit).unwrap();
        for q in [[0.3, 0.9], [1.2, 0.5], [0.0, 1.0]] {
            let fast = gpe_predict(&em, &q).unwrap();
            let blocked = gpe_blocked_predict(&em, &q).unwrap();
            for (a, b) in fast.iter().zip(&blocked) {
                assert!((a - b).abs() <= 1e-8, "separable identity violated: {a} vs {b}");
            }
        }
    }

    #[test]
    fn gpe_blocked_solve_respects_cap() {
        let inputs = vec![vec![0.0]];
        let values = vec![vec![1.0; 2001]];
        let em = gpe_train(&inputs, &values, se_kernel(1.0), MeanMode::Zero).unwrap();
        assert!(matches!(
            gpe_blocked_predict(&em, &[0.0]),
            Err(Error::FeatureCap { .. })
        ));
    }

    #[test]
    fn empirical_gram_predicts_only_at_training_inputs() {
        let gram = DenseMatrix::identity(2);
        let spec = KernelSpec {
            kind: KernelKind::EmpiricalGram { gram },
            length_scale: None,
            amplitude: 1.0,
            cross_covariance: None,
        };
        let em = gpe_train(
            &[vec![0.0], vec![1.0]],
            &[vec![2.0], vec![-1.0]],
            spec,
            MeanMode::Zero,
        )
        .unwrap();
        let at = gpe_predict(&em, &[1.0]).unwrap();
        assert!((at[0] + 1.0).abs() <= 1e-10);
        assert!(gpe_predict(&em, &[0.5]).is_err());
    }
}
