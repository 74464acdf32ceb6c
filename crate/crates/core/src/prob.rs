//! Discrete probability primitives and the P-T conversions between
//! likelihood, truth, distortion and relatedness representations.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Result, SvbError};
use crate::scalar::{log_sum_exp, Real};

/// Ordered sample points of a discretized domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<S: Real> {
    values: Array1<S>,
}

impl<S: Real> Grid<S> {
    pub fn new(values: Vec<S>) -> Result<Self> {
        if values.len() < 2 {
            return Err(SvbError::InvalidParameter(format!("grid needs at least 2 points, got {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SvbError::InvalidParameter("grid values must be finite".into()));
        }
        if let Some(k) = values.windows(2).position(|w| w[1] <= w[0]) {
            return Err(SvbError::InvalidParameter(format!("grid not strictly increasing at index {}", k + 1)));
        }
        Ok(Self { values: Array1::from(values) })
    }

    /// Points `min, min + step, ...` up to `max` (inclusive when it lands on the lattice).
    pub fn uniform(min: S, max: S, step: S) -> Result<Self> {
        if !(step > S::zero()) || !(max > min) {
            return Err(SvbError::InvalidParameter(format!(
                "uniform grid needs step > 0 and max > min (min={min}, max={max}, step={step})"
            )));
        }
        let span = ((max - min) / step + S::lit(1e-9)).floor();
        let count = span.to_usize().unwrap_or(0) + 1;
        if count > 10_000_000 {
            return Err(SvbError::InvalidParameter("grid too large".into()));
        }
        let values = (0..count).map(|k| min + step * S::from_usize(k).unwrap()).collect();
        Self::new(values)
    }

    /// Integers `lo..=hi`.
    pub fn integers(lo: i64, hi: i64) -> Result<Self> {
        Self::new((lo..=hi).map(|k| S::from_i64(k).unwrap()).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &Array1<S> {
        &self.values
    }

    pub fn min(&self) -> S {
        self.values[0]
    }

    pub fn max(&self) -> S {
        self.values[self.values.len() - 1]
    }

    /// Smallest spacing between neighbouring points.
    pub fn min_step(&self) -> S {
        self.values.windows(2).into_iter().map(|w| w[1] - w[0]).fold(S::infinity(), |a, b| a.min(b))
    }

    /// Mean and population standard deviation of the weights over the grid.
    pub fn moments(&self, weights: ArrayView1<S>) -> Result<(S, S)> {
        check_len(self.len(), weights.len())?;
        let total: S = weights.sum();
        if !(total > S::zero()) {
            return Err(SvbError::DegenerateFit("weights have no mass".into()));
        }
        let mean = weights.iter().zip(self.values.iter()).map(|(&w, &x)| w * x).sum::<S>() / total;
        let var = weights.iter().zip(self.values.iter()).map(|(&w, &x)| w * (x - mean) * (x - mean)).sum::<S>() / total;
        Ok((mean, var.max(S::zero()).sqrt()))
    }
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(SvbError::GridMismatch { expected, found })
    }
}

/// Normalized probability vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution<S: Real> {
    probs: Array1<S>,
}

impl<S: Real> Distribution<S> {
    /// Validates non-negativity and unit sum (within [`Real::norm_tol`]).
    pub fn new(probs: Array1<S>) -> Result<Self> {
        if probs.is_empty() {
            return Err(SvbError::InvalidDistribution("empty".into()));
        }
        if let Some(i) = probs.iter().position(|p| !(p.is_finite() && *p >= S::zero())) {
            return Err(SvbError::InvalidDistribution(format!("entry {i} is {}", probs[i])));
        }
        let total: S = probs.sum();
        if (total - S::one()).abs() > S::norm_tol() {
            return Err(SvbError::InvalidDistribution(format!("sums to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn from_vec(probs: Vec<S>) -> Result<Self> {
        Self::new(Array1::from(probs))
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(weights: Array1<S>) -> Result<Self> {
        if let Some(i) = weights.iter().position(|p| !(p.is_finite() && *p >= S::zero())) {
            return Err(SvbError::InvalidDistribution(format!("weight {i} is {}", weights[i])));
        }
        let total: S = weights.sum();
        if !(total > S::zero()) {
            return Err(SvbError::InvalidDistribution("weights have no mass".into()));
        }
        Ok(Self { probs: weights.mapv(|w| w / total) })
    }

    /// Normalizes `exp(log_weights)` without overflow or total underflow.
    pub fn from_log_weights(log_weights: ArrayView1<S>) -> Result<Self> {
        let lse = log_sum_exp(log_weights.iter().copied());
        if !lse.is_finite() {
            return Err(SvbError::InvalidDistribution("log weights have no finite mass".into()));
        }
        Ok(Self { probs: log_weights.mapv(|l| (l - lse).exp()) })
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform distribution over zero points");
        let p = S::one() / S::from_usize(n).unwrap();
        Self { probs: Array1::from_elem(n, p) }
    }

    /// Caller guarantees the vector is already normalized.
    pub(crate) fn from_normalized(probs: Array1<S>) -> Self {
        debug_assert!((probs.sum() - S::one()).abs() <= S::norm_tol() * S::lit(10.0));
        Self { probs }
    }

    pub fn probs(&self) -> &Array1<S> {
        &self.probs
    }

    pub fn view(&self) -> ArrayView1<'_, S> {
        self.probs.view()
    }

    pub fn into_inner(self) -> Array1<S> {
        self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, i: usize) -> S {
        self.probs[i]
    }

    pub fn max_abs_diff(&self, other: &Self) -> S {
        self.probs.iter().zip(other.probs.iter()).map(|(a, b)| (*a - *b).abs()).fold(S::zero(), |a, b| a.max(b))
    }

    /// Raises entries below `floor` to `floor` and renormalizes.
    pub fn floored(&self, floor: S) -> Self {
        if self.probs.iter().all(|&p| p >= floor) {
            return self.clone();
        }
        let raised = self.probs.mapv(|p| p.max(floor));
        let total = raised.sum();
        Self { probs: raised.mapv(|p| p / total) }
    }

    /// Shannon entropy in bits.
    pub fn entropy_bits(&self) -> S {
        -self.probs.iter().filter(|&&p| p > S::prob_floor()).map(|&p| p * p.log2()).sum::<S>()
    }

    /// Discretized Gaussian renormalized over the grid.
    pub fn discretized_gaussian(grid: &Grid<S>, mu: S, sigma: S) -> Result<Self> {
        if !(sigma > S::zero()) || !mu.is_finite() {
            return Err(SvbError::InvalidParameter(format!(
                "gaussian needs finite mu and sigma > 0 (mu={mu}, sigma={sigma})"
            )));
        }
        let two = S::lit(2.0);
        let logs = grid.values().mapv(|x| -(x - mu) * (x - mu) / (two * sigma * sigma));
        Self::from_log_weights(logs.view())
    }

    /// Relative frequencies of `n` independent draws.
    pub fn sample_frequencies<R: rand::Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Self> {
        if n == 0 {
            return Err(SvbError::InvalidParameter("sample size must be positive".into()));
        }
        let mut cdf = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        for &p in self.probs.iter() {
            acc += p.to_f64_lossy();
            cdf.push(acc);
        }
        let mut counts = vec![0usize; self.len()];
        for _ in 0..n {
            let u = rng.random::<f64>() * acc;
            let k = cdf.partition_point(|&c| c <= u).min(self.len() - 1);
            counts[k] += 1;
        }
        let total = S::lit(n as f64);
        Ok(Self::from_normalized(counts.iter().map(|&c| S::lit(c as f64) / total).collect()))
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        check_len(n, self.len())
    }
}

/// Which variable a channel conditions on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    /// Row `i` is `P(y | x_i)`; shape `m x n`.
    GivenX,
    /// Row `j` is `P(x | y_j)`; shape `n x m`.
    GivenY,
}

/// Row-stochastic matrix of conditional distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct Channel<S: Real> {
    matrix: Array2<S>,
    orientation: Orientation,
}

impl<S: Real> Channel<S> {
    pub fn new(matrix: Array2<S>, orientation: Orientation) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(SvbError::InvalidChannel("empty matrix".into()));
        }
        for (k, row) in matrix.axis_iter(Axis(0)).enumerate() {
            if row.iter().any(|p| !(p.is_finite() && *p >= S::zero())) {
                return Err(SvbError::InvalidChannel(format!("row {k} has an invalid entry")));
            }
            let total: S = row.sum();
            if (total - S::one()).abs() > S::norm_tol() {
                return Err(SvbError::InvalidChannel(format!("row {k} sums to {total}")));
            }
        }
        Ok(Self { matrix, orientation })
    }

    pub fn given_x(matrix: Array2<S>) -> Result<Self> {
        Self::new(matrix, Orientation::GivenX)
    }

    pub fn given_y(matrix: Array2<S>) -> Result<Self> {
        Self::new(matrix, Orientation::GivenY)
    }

    pub(crate) fn from_normalized(matrix: Array2<S>, orientation: Orientation) -> Self {
        Self { matrix, orientation }
    }

    /// Stacks distributions as rows.
    pub fn from_rows(rows: &[Distribution<S>], orientation: Orientation) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(SvbError::InvalidChannel("no rows".into()));
        };
        let mut matrix = Array2::zeros((rows.len(), first.len()));
        for (k, r) in rows.iter().enumerate() {
            r.check_len(first.len())?;
            matrix.row_mut(k).assign(r.probs());
        }
        Ok(Self { matrix, orientation })
    }

    pub fn matrix(&self) -> &Array2<S> {
        &self.matrix
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn row(&self, k: usize) -> ArrayView1<'_, S> {
        self.matrix.row(k)
    }

    pub fn row_distribution(&self, k: usize) -> Distribution<S> {
        Distribution::from_normalized(self.matrix.row(k).to_owned())
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub(crate) fn require(&self, orientation: Orientation) -> Result<()> {
        if self.orientation == orientation {
            Ok(())
        } else {
            Err(SvbError::InvalidChannel(format!("expected {orientation:?} orientation, got {:?}", self.orientation)))
        }
    }

    /// Output marginal `Σ_k prior_k * row_k`.
    pub fn marginal(&self, prior: &Distribution<S>) -> Result<Distribution<S>> {
        prior.check_len(self.nrows())?;
        let out = prior.probs().dot(&self.matrix);
        let total = out.sum();
        Ok(Distribution::from_normalized(out.mapv(|p| p / total)))
    }

    /// Bayes inversion: returns the reversed channel and the output marginal.
    /// Rows for outputs with no mass are set to the prior.
    pub fn invert(&self, prior: &Distribution<S>) -> Result<(Channel<S>, Distribution<S>)> {
        let out = self.marginal(prior)?;
        let (rows, cols) = self.matrix.dim();
        let mut inv = Array2::zeros((cols, rows));
        for j in 0..cols {
            let q = out.get(j);
            if q > S::zero() {
                for i in 0..rows {
                    inv[[j, i]] = prior.get(i) * self.matrix[[i, j]];
                }
                let total = inv.row(j).sum();
                inv.row_mut(j).mapv_inplace(|v| v / total);
            } else {
                inv.row_mut(j).assign(prior.probs());
            }
        }
        let orientation = match self.orientation {
            Orientation::GivenX => Orientation::GivenY,
            Orientation::GivenY => Orientation::GivenX,
        };
        Ok((Channel { matrix: inv, orientation }, out))
    }
}

/// One truth (membership) function per label; not normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticChannel<S: Real> {
    truth: Array2<S>,
    labels: Vec<String>,
}

impl<S: Real> SemanticChannel<S> {
    /// `truth[[j, i]] = T(θ_j | x_i)`.
    pub fn new(truth: Array2<S>, labels: Vec<String>) -> Result<Self> {
        if truth.nrows() == 0 || truth.ncols() == 0 {
            return Err(SvbError::InvalidTruth("empty matrix".into()));
        }
        if labels.len() != truth.nrows() {
            return Err(SvbError::InvalidTruth(format!("{} labels for {} rows", labels.len(), truth.nrows())));
        }
        for (j, row) in truth.axis_iter(Axis(0)).enumerate() {
            if row.iter().any(|t| !(*t >= S::zero() && *t <= S::one())) {
                return Err(SvbError::InvalidTruth(format!("row {j} has a value outside [0, 1]")));
            }
            if !(row.fold(S::zero(), |a, &b| a.max(b)) > S::zero()) {
                return Err(SvbError::InvalidTruth(format!("row {j} is identically zero")));
            }
        }
        Ok(Self { truth, labels })
    }

    /// Labels default to `y1, y2, ...`.
    pub fn unlabeled(truth: Array2<S>) -> Result<Self> {
        let labels = (1..=truth.nrows()).map(|j| format!("y{j}")).collect();
        Self::new(truth, labels)
    }

    pub fn from_rows(rows: &[Array1<S>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(SvbError::InvalidTruth("no rows".into()));
        };
        let mut truth = Array2::zeros((rows.len(), first.len()));
        for (j, r) in rows.iter().enumerate() {
            check_len(first.len(), r.len())?;
            truth.row_mut(j).assign(r);
        }
        Self::unlabeled(truth)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.truth.nrows() {
            return Err(SvbError::InvalidTruth("label count mismatch".into()));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn truth(&self) -> &Array2<S> {
        &self.truth
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn row(&self, j: usize) -> ArrayView1<'_, S> {
        self.truth.row(j)
    }

    pub fn n_labels(&self) -> usize {
        self.truth.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.truth.ncols()
    }

    /// `T(θ_j)` for every label.
    pub fn logical_probabilities(&self, px: &Distribution<S>) -> Result<Array1<S>> {
        px.check_len(self.n_points())?;
        Ok(self.truth.dot(px.probs()))
    }

    /// Likelihood rows `P(x | θ_j)` as a given-y channel.
    pub fn likelihoods(&self, px: &Distribution<S>) -> Result<Channel<S>> {
        let mut rows = Vec::with_capacity(self.n_labels());
        for j in 0..self.n_labels() {
            rows.push(semantic_bayes(self.row(j), px).map_err(|e| match e {
                SvbError::EmptyFuzzySet { .. } => SvbError::EmptyFuzzySet { label: Some(j) },
                other => other,
            })?);
        }
        Channel::from_rows(&rows, Orientation::GivenY)
    }

    /// Applies a permutation to the labels: new row `k` is old row `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut truth = Array2::zeros(self.truth.dim());
        let mut labels = Vec::with_capacity(perm.len());
        for (k, &p) in perm.iter().enumerate() {
            truth.row_mut(k).assign(&self.truth.row(p));
            labels.push(self.labels[p].clone());
        }
        Self { truth, labels }
    }
}

/// Row divided by its maximum, with the location of that maximum.
#[derive(Clone, Debug, PartialEq)]
pub struct MaxNormalized<S: Real> {
    pub row: Array1<S>,
    /// Lowest index attaining the maximum.
    pub argmax: usize,
    /// Another entry lies within 1e-12 (relative) of the maximum.
    pub multiple_maxima: bool,
}

/// Divides by the maximum entry; lowest index wins ties.
pub fn max_normalize<S: Real>(values: ArrayView1<S>) -> Result<MaxNormalized<S>> {
    let mut argmax = 0;
    let mut max = S::neg_infinity();
    for (k, &v) in values.iter().enumerate() {
        if v.is_nan() {
            return Err(SvbError::InvalidParameter(format!("NaN at index {k}")));
        }
        if v > max {
            max = v;
            argmax = k;
        }
    }
    if !(max > S::zero()) || !max.is_finite() {
        return Err(SvbError::ZeroRatio);
    }
    let row = values.mapv(|v| v / max);
    let near = S::one() - S::lit(1e-12);
    let multiple_maxima = row.iter().enumerate().any(|(k, &v)| k != argmax && v >= near);
    let mut row = row;
    row[argmax] = S::one();
    Ok(MaxNormalized { row, argmax, multiple_maxima })
}

/// `T(θ_j) = Σ_i P(x_i) T(θ_j | x_i)`.
pub fn logical_probability<S: Real>(t: ArrayView1<S>, px: &Distribution<S>) -> Result<S> {
    px.check_len(t.len())?;
    Ok(t.dot(px.probs()))
}

/// `P(x | θ_j) = T(θ_j | x) P(x) / T(θ_j)`.
pub fn semantic_bayes<S: Real>(t: ArrayView1<S>, px: &Distribution<S>) -> Result<Distribution<S>> {
    let tp = logical_probability(t, px)?;
    if !(tp > S::zero()) {
        return Err(SvbError::EmptyFuzzySet { label: None });
    }
    let mut out = Array1::zeros(t.len());
    for i in 0..t.len() {
        out[i] = t[i] * px.get(i) / tp;
    }
    let total = out.sum();
    Ok(Distribution::from_normalized(out.mapv(|p| p / total)))
}

/// `T*(θ_j | x) = [P(x|y_j)/P(x)] / max_x [P(x|y_j)/P(x)]`.
pub fn truth_from_likelihood<S: Real>(pxy: &Distribution<S>, px: &Distribution<S>) -> Result<MaxNormalized<S>> {
    px.check_len(pxy.len())?;
    let mut ratio = Array1::zeros(px.len());
    for i in 0..px.len() {
        let (a, b) = (pxy.get(i), px.get(i));
        if b > S::zero() {
            ratio[i] = a / b;
        } else if a > S::zero() {
            return Err(SvbError::AbsoluteContinuity { index: i, p: a.to_f64_lossy() });
        }
    }
    max_normalize(ratio.view())
}

/// `T(θ_j | x) = P(y_j | x) / max_x P(y_j | x)` for every label of a given-x channel.
pub fn truth_from_posterior<S: Real>(pygx: &Channel<S>) -> Result<SemanticChannel<S>> {
    pygx.require(Orientation::GivenX)?;
    let n = pygx.ncols();
    let mut truth = Array2::zeros((n, pygx.nrows()));
    for j in 0..n {
        let col = pygx.matrix().column(j);
        truth.row_mut(j).assign(&max_normalize(col)?.row);
    }
    SemanticChannel::unlabeled(truth)
}

/// `T = exp(-d)`; distortions at or beyond the cap map to exactly zero.
pub fn truth_from_distortion<S: Real>(d: ArrayView1<S>) -> Result<Array1<S>> {
    let cap = S::distortion_cap();
    let mut out = Array1::zeros(d.len());
    for (i, &v) in d.iter().enumerate() {
        if v.is_nan() {
            return Err(SvbError::InvalidParameter(format!("NaN distortion at index {i}")));
        }
        if v < S::zero() {
            return Err(SvbError::NegativeDistortion { index: i, value: v.to_f64_lossy() });
        }
        out[i] = if v >= cap { S::zero() } else { (-v).exp() };
    }
    Ok(out)
}

/// `d = -ln T`, with zero truth mapped to the distortion cap.
pub fn distortion_from_truth<S: Real>(t: ArrayView1<S>) -> Array1<S> {
    let cap = S::distortion_cap();
    t.mapv(|v| if v > S::zero() { (-v.ln()).min(cap).max(S::zero()) } else { cap })
}

/// Relatedness `c(x_i, y_j) = P(x_i | y_j) / P(x_i)`, shape `m x n`.
pub fn relatedness<S: Real>(pxgy: &Channel<S>, px: &Distribution<S>, py: &Distribution<S>) -> Result<Array2<S>> {
    pxgy.require(Orientation::GivenY)?;
    px.check_len(pxgy.ncols())?;
    py.check_len(pxgy.nrows())?;
    let (n, m) = pxgy.matrix().dim();
    let mut c = Array2::zeros((m, n));
    for i in 0..m {
        let p = px.get(i);
        for j in 0..n {
            let q = pxgy.matrix()[[j, i]];
            if p > S::zero() {
                c[[i, j]] = q / p;
            } else if q * py.get(j) > S::zero() {
                return Err(SvbError::AbsoluteContinuity { index: i, p: (q * py.get(j)).to_f64_lossy() });
            }
        }
    }
    Ok(c)
}

/// Relatedness from a posterior channel: `c(x_i, y_j) = P(y_j|x_i) / P(y_j)`, shape `m x n`.
/// Labels with zero prior mass get a zero column.
pub fn relatedness_from_posterior<S: Real>(pygx: &Channel<S>, py: &Distribution<S>) -> Result<Array2<S>> {
    pygx.require(Orientation::GivenX)?;
    py.check_len(pygx.ncols())?;
    let mut c = pygx.matrix().clone();
    for ((_, j), v) in c.indexed_iter_mut() {
        let q = py.get(j);
        *v = if q > S::zero() { *v / q } else { S::zero() };
    }
    Ok(c)
}

/// Per-label normalization residuals of a relatedness matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidityReport<S: Real> {
    /// `|Σ_i P(x_i) c(x_i, y_j) - 1|` for each label.
    pub residuals: Vec<S>,
    /// Labels with `P(y_j) > 1e-9`; unused labels do not affect `passed`.
    pub active: Vec<bool>,
    pub tol: S,
    pub passed: bool,
}

impl<S: Real> ValidityReport<S> {
    pub fn max_active_residual(&self) -> S {
        self.residuals.iter().zip(&self.active).filter(|(_, &a)| a).map(|(r, _)| *r).fold(S::zero(), |a, b| a.max(b))
    }
}

pub fn channel_validity_check<S: Real>(
    c: ArrayView2<S>,
    px: &Distribution<S>,
    py: &Distribution<S>,
    tol: S,
) -> Result<ValidityReport<S>> {
    let (m, n) = c.dim();
    px.check_len(m)?;
    py.check_len(n)?;
    let sums = px.probs().dot(&c);
    let residuals: Vec<S> = sums.iter().map(|&s| (s - S::one()).abs()).collect();
    let active: Vec<bool> = py.probs().iter().map(|&p| p > S::lit(1e-9)).collect();
    let passed = residuals.iter().zip(&active).all(|(&r, &a)| !a || r <= tol);
    Ok(ValidityReport { residuals, active, tol, passed })
}

/// Dual truth function `T(θ_xi | y_j) = P(x_i|y_j) / max_y P(x_i|y)`, a row over labels.
pub fn dual_truth_function<S: Real>(pxgy: &Channel<S>, i: usize) -> Result<MaxNormalized<S>> {
    pxgy.require(Orientation::GivenY)?;
    if i >= pxgy.ncols() {
        return Err(SvbError::InvalidParameter(format!("index {i} out of range for {} points", pxgy.ncols())));
    }
    max_normalize(pxgy.matrix().column(i)).map_err(|e| match e {
        SvbError::ZeroRatio => SvbError::UnreachableSource { index: i },
        other => other,
    })
}

/// Unnormalized Gaussian truth row `exp(-(x-mu)^2 / (2 sigma^2))`.
pub fn gaussian_truth<S: Real>(grid: &Grid<S>, mu: S, sigma: S) -> Array1<S> {
    let two = S::lit(2.0);
    grid.values().mapv(|x| (-(x - mu) * (x - mu) / (two * sigma * sigma)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_seeded_and_converges() {
        use rand::SeedableRng;
        let p = Distribution::from_vec(vec![0.2, 0.0, 0.5, 0.3]).unwrap();
        let mut a = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut b = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let fa = p.sample_frequencies(200_000, &mut a).unwrap();
        assert_eq!(fa, p.sample_frequencies(200_000, &mut b).unwrap());
        assert_eq!(fa.get(1), 0.0);
        assert!(fa.max_abs_diff(&p) < 0.01);
    }
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    type Channel64 = Channel<f64>;

    fn grid100() -> Grid<f64> {
        Grid::integers(0, 100).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::<f64>::new(vec![0.0]).is_err());
        assert!(Grid::<f64>::new(vec![0.0, 0.0]).is_err());
        assert!(Grid::<f64>::new(vec![1.0, 0.0]).is_err());
        let g = Grid::<f64>::uniform(0.0, 100.0, 0.5).unwrap();
        assert_eq!(g.len(), 201);
        assert_eq!(g.max(), 100.0);
        assert_eq!(grid100().min_step(), 1.0);
    }

    #[test]
    fn distribution_validation() {
        assert!(Distribution::from_vec(vec![0.5, 0.6]).is_err());
        assert!(Distribution::from_vec(vec![-0.1, 1.1]).is_err());
        assert!(Distribution::from_vec(vec![0.25; 4]).is_ok());
        let d = Distribution::from_weights(array![1.0, 3.0]).unwrap();
        assert_abs_diff_eq!(d.get(1), 0.75);
    }

    #[test]
    fn tautology_has_logical_probability_one() {
        let px = Distribution::from_weights(array![0.1, 0.2, 0.3, 0.4]).unwrap();
        let t = Array1::from_elem(4, 1.0);
        assert_abs_diff_eq!(logical_probability(t.view(), &px).unwrap(), 1.0, epsilon = 1e-15);
        let ind = array![1.0, 0.0, 0.0, 0.0];
        let u = Distribution::uniform(4);
        assert_abs_diff_eq!(logical_probability(ind.view(), &u).unwrap(), 0.25);
    }

    #[test]
    fn logical_probability_matches_direct_summation() {
        let g = grid100();
        let px = Distribution::discretized_gaussian(&g, 50.0, 15.0).unwrap();
        let t = g.values().mapv(|x| 1.0 / (1.0 + (-0.8 * (x - 75.0)).exp()));
        let mut oracle = 0.0;
        for k in 0..=100 {
            let x = k as f64;
            let w = (-(x - 50.0) * (x - 50.0) / 450.0).exp();
            oracle += w / (1.0 + (-0.8 * (x - 75.0)).exp());
        }
        let z: f64 = (0..=100).map(|k| (-((k as f64) - 50.0).powi(2) / 450.0).exp()).sum();
        oracle /= z;
        assert_abs_diff_eq!(logical_probability(t.view(), &px).unwrap(), oracle, epsilon = 1e-14);
    }

    #[test]
    fn semantic_bayes_cases() {
        let px = Distribution::from_weights(array![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = semantic_bayes(Array1::from_elem(4, 1.0).view(), &px).unwrap();
        assert_abs_diff_eq!(out.probs(), px.probs(), epsilon = 1e-15);

        let u = Distribution::uniform(4);
        let crisp = array![0.0, 1.0, 1.0, 0.0];
        let out = semantic_bayes(crisp.view(), &u).unwrap();
        assert_abs_diff_eq!(out.probs(), &array![0.0, 0.5, 0.5, 0.0], epsilon = 1e-15);

        let zero = array![0.0, 0.0, 0.0, 0.0];
        assert!(matches!(semantic_bayes(zero.view(), &u), Err(SvbError::EmptyFuzzySet { .. })));
    }

    #[test]
    fn semantic_bayes_gaussian_matches_elementwise_oracle() {
        let g = grid100();
        let u = Distribution::uniform(101);
        let t = gaussian_truth(&g, 35.0, 8.0);
        let out = semantic_bayes(t.view(), &u).unwrap();
        let w: Vec<f64> = (0..=100).map(|k| (-((k as f64) - 35.0).powi(2) / 128.0).exp()).collect();
        let z: f64 = w.iter().sum();
        for (i, wi) in w.iter().enumerate() {
            assert_abs_diff_eq!(out.get(i), wi / z, epsilon = 1e-15);
        }
    }

    #[test]
    fn truth_from_likelihood_cases() {
        let px = Distribution::from_weights(array![1.0, 2.0, 3.0]).unwrap();
        let same = truth_from_likelihood(&px, &px).unwrap();
        assert_abs_diff_eq!(same.row, array![1.0, 1.0, 1.0], epsilon = 1e-15);
        assert!(same.multiple_maxima);
        assert_eq!(same.argmax, 0);

        let u = Distribution::uniform(3);
        let point = Distribution::from_vec(vec![1.0, 0.0, 0.0]).unwrap();
        let ind = truth_from_likelihood(&point, &u).unwrap();
        assert_eq!(ind.row, array![1.0, 0.0, 0.0]);
        assert!(!ind.multiple_maxima);

        let g = grid100();
        let u = Distribution::uniform(101);
        let pxy = Distribution::discretized_gaussian(&g, 35.0, 8.0).unwrap();
        let t = truth_from_likelihood(&pxy, &u).unwrap();
        assert_eq!(t.argmax, 35);
        let oracle = gaussian_truth(&g, 35.0, 8.0);
        assert_abs_diff_eq!(t.row, oracle, epsilon = 1e-13);

        let holes = Distribution::from_vec(vec![0.5, 0.5, 0.0]).unwrap();
        assert!(matches!(
            truth_from_likelihood(&Distribution::uniform(3), &holes),
            Err(SvbError::AbsoluteContinuity { index: 2, .. })
        ));
    }

    #[test]
    fn distortion_conversions() {
        let d0 = Array1::<f64>::zeros(3);
        assert_eq!(truth_from_distortion(d0.view()).unwrap(), array![1.0, 1.0, 1.0]);
        let g = grid100();
        let d = g.values().mapv(|x| (x - 40.0) * (x - 40.0) / (2.0 * 6.0 * 6.0));
        let t = truth_from_distortion(d.view()).unwrap();
        assert_abs_diff_eq!(t, gaussian_truth(&g, 40.0, 6.0), epsilon = 1e-15);
        let back = distortion_from_truth(t.view());
        for i in 0..101 {
            if t[i] > 0.0 {
                assert_abs_diff_eq!(back[i], d[i], epsilon = 1e-12 * d[i].max(1.0));
            }
        }
        let t = array![1.0, (-2.0f64).exp(), 0.0];
        let d = distortion_from_truth(t.view());
        assert_eq!(d[0], 0.0);
        assert_abs_diff_eq!(d[1], 2.0, epsilon = 1e-15);
        assert_eq!(d[2], 745.0);
        assert_eq!(truth_from_distortion(d.view()).unwrap()[2], 0.0);
        assert!(matches!(
            truth_from_distortion(array![0.0, -1.0].view()),
            Err(SvbError::NegativeDistortion { index: 1, .. })
        ));
    }

    #[test]
    fn relatedness_cases() {
        let px = Distribution::from_weights(array![1.0, 3.0]).unwrap();
        let py = Distribution::from_weights(array![2.0, 1.0, 1.0]).unwrap();
        let indep = Channel::from_rows(&[px.clone(), px.clone(), px.clone()], Orientation::GivenY).unwrap();
        let c = relatedness(&indep, &px, &py).unwrap();
        assert_abs_diff_eq!(c, Array2::from_elem((2, 3), 1.0), epsilon = 1e-15);

        // y = x on two equiprobable points: joint diag(0.5, 0.5)
        let u = Distribution::uniform(2);
        let det = Channel::given_y(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let c = relatedness(&det, &u, &u).unwrap();
        assert_eq!(c, array![[2.0, 0.0], [0.0, 2.0]]);
        let rep = channel_validity_check(c.view(), &u, &u, 1e-12).unwrap();
        assert!(rep.passed);

        let zero = Distribution::from_vec(vec![1.0, 0.0]).unwrap();
        assert!(relatedness(&det, &zero, &u).is_err());
    }

    #[test]
    fn validity_flags_bad_matrix() {
        let u = Distribution::uniform(2);
        let c = array![[1.5, 1.0], [1.0, 1.0]];
        let rep = channel_validity_check(c.view(), &u, &u, 1e-9).unwrap();
        assert!(!rep.passed);
        assert_abs_diff_eq!(rep.residuals[0], 0.25);
        assert_eq!(rep.residuals[1], 0.0);
        let py = Distribution::from_vec(vec![0.0, 1.0]).unwrap();
        assert!(channel_validity_check(c.view(), &u, &py, 1e-9).unwrap().passed);
    }

    #[test]
    fn dual_truth_cases() {
        // P(y|x) = [[0.9, 0.1], [0.4, 0.6]] with uniform P(x)
        let pygx: Channel64 = Channel::given_x(array![[0.9, 0.1], [0.4, 0.6]]).unwrap();
        let (pxgy, _) = pygx.invert(&Distribution::uniform(2)).unwrap();
        let p = pxgy.matrix();
        let oracle = [p[[0, 0]], p[[1, 0]]];
        let mx: f64 = oracle[0].max(oracle[1]);
        let d = dual_truth_function(&pxgy, 0).unwrap();
        assert_abs_diff_eq!(d.row[0], oracle[0] / mx, epsilon = 1e-15);
        assert_abs_diff_eq!(d.row[1], oracle[1] / mx, epsilon = 1e-15);

        let only_first = Channel::given_y(array![[0.5, 0.5], [0.0, 1.0]]).unwrap();
        assert_eq!(dual_truth_function(&only_first, 0).unwrap().row, array![1.0, 0.0]);

        let unreachable = Channel::given_y(array![[0.0, 1.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(dual_truth_function(&unreachable, 0), Err(SvbError::UnreachableSource { index: 0 })));
    }

    #[test]
    fn dual_truth_of_symmetric_channel_is_similarity() {
        // Circulant similarity on a ring with uniform P(x): every row shares one normalizer.
        let m = 20;
        let sim = |i: usize, j: usize| {
            let d = (i as f64 - j as f64).abs();
            let d = d.min(m as f64 - d);
            (-d * d / 18.0).exp()
        };
        let rows: Vec<_> =
            (0..m).map(|j| Distribution::from_weights(Array1::from_iter((0..m).map(|i| sim(i, j)))).unwrap()).collect();
        let pxgy = Channel::from_rows(&rows, Orientation::GivenY).unwrap();
        for i in [0, 7, 19] {
            let d = dual_truth_function(&pxgy, i).unwrap();
            for j in 0..m {
                assert_abs_diff_eq!(d.row[j], sim(i, j), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn max_normalize_ties_lowest_index() {
        let r = max_normalize(array![0.5, 2.0, 2.0, 1.0].view()).unwrap();
        assert_eq!(r.argmax, 1);
        assert!(r.multiple_maxima);
        assert!(matches!(max_normalize(array![0.0, 0.0].view()), Err(SvbError::ZeroRatio)));
    }

    #[test]
    fn channel_inversion_round_trip() {
        let px = Distribution::from_weights(array![1.0, 2.0, 1.0]).unwrap();
        let pygx = Channel::given_x(array![[0.7, 0.3], [0.2, 0.8], [0.5, 0.5]]).unwrap();
        let (pxgy, py) = pygx.invert(&px).unwrap();
        let (back, px2) = pxgy.invert(&py).unwrap();
        assert_abs_diff_eq!(back.matrix(), pygx.matrix(), epsilon = 1e-15);
        assert_abs_diff_eq!(px2.probs(), px.probs(), epsilon = 1e-15);
    }

    #[test]
    fn moments_population() {
        let g = Grid::<f64>::new(vec![0.0, 1.0]).unwrap();
        let (m, s) = g.moments(array![0.5, 0.5].view()).unwrap();
        assert_eq!(m, 0.5);
        assert_eq!(s, 0.5);
    }
}
