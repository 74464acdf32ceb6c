//! Minimum-mutual-information iteration and the parametric solutions of
//! R(G), R(Θ) and R(D).

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Result, SvbError};
use crate::info::{log2_capped, shannon_mi};
use crate::prob::{check_len, truth_from_distortion, Channel, Distribution, Orientation, SemanticChannel};
use crate::scalar::{log_sum_exp, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MmiOptions<S: Real> {
    /// Stop when `max_j |P⁺¹(y_j) - P(y_j)| < eps` and no label grows by more than
    /// a factor `1 + sqrt(eps)` per sweep.
    pub eps: S,
    pub max_iter: usize,
    /// Masses below this are raised and the vector renormalized after every sweep.
    pub py_floor: S,
}

impl<S: Real> Default for MmiOptions<S> {
    fn default() -> Self {
        Self { eps: S::lit(1e-8), max_iter: 5000, py_floor: S::lit(1e-15) }
    }
}

impl<S: Real> MmiOptions<S> {
    pub fn with_eps(mut self, eps: S) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps > S::zero()) || self.max_iter == 0 {
            return Err(SvbError::InvalidParameter("eps must be > 0 and max_iter >= 1".into()));
        }
        Ok(())
    }
}

/// Which constraint the kernel encodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Criterion {
    /// Kernel `m_ij^s` with `m_ij = T(θ_j|x_i) / T(θ_j)`.
    G,
    /// Kernel `T(θ_j|x_i)^s` (maximum truth).
    Theta,
    /// Kernel `exp(-s d(x_i, y_j))`.
    D,
}

impl Criterion {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::G => "G",
            Self::Theta => "Theta",
            Self::D => "D",
        }
    }
}

/// Per-sweep record of an MMI run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRecord<S: Real> {
    /// Semantic mutual information of the current channel (bits).
    pub g: S,
    /// Shannon mutual information of the current channel (bits).
    pub r: S,
    /// `-Σ_i P(x_i) log2 λ_i`, the Lagrangian `R - sG` minimized over channels.
    pub objective: S,
}

/// One point of a rate-fidelity curve.
#[derive(Clone, Debug)]
pub struct RgPoint<S: Real> {
    pub s: S,
    pub criterion: Criterion,
    /// Semantic mutual information `Σ P(x_i) P(y_j|x_i) log2 m_ij` (bits).
    pub g: S,
    /// Rate in bits: `sG - Σ P(x_i) log2 λ_i` for the G criterion, Shannon information otherwise.
    pub r: S,
    /// Shannon mutual information of the returned channel (bits).
    pub r_shannon: S,
    pub py: Distribution<S>,
    /// `P(y|x)`, given-x orientation.
    pub channel: Channel<S>,
    pub lambdas: Array1<S>,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<SweepRecord<S>>,
}

impl<S: Real> RgPoint<S> {
    pub fn efficiency(&self) -> S {
        self.g / self.r
    }

    /// Relatedness `c_ij = K_ij / λ_i` implied by the kernel at this point, shape `m x n`.
    pub fn bayes_core(&self) -> Array2<S> {
        let mut c = self.channel.matrix().clone();
        for ((_, j), v) in c.indexed_iter_mut() {
            *v /= self.py.get(j);
        }
        c
    }
}

/// Ratio matrix `m_ij = T(θ_j|x_i) / T(θ_j)`, shape `m x n`.
pub fn ratio_matrix<S: Real>(px: &Distribution<S>, sem: &SemanticChannel<S>) -> Result<Array2<S>> {
    let tp = sem.logical_probabilities(px)?;
    let (n, m) = sem.truth().dim();
    let mut out = Array2::zeros((m, n));
    for j in 0..n {
        if !(tp[j] > S::zero()) {
            return Err(SvbError::EmptyFuzzySet { label: Some(j) });
        }
        for i in 0..m {
            out[[i, j]] = sem.truth()[[j, i]] / tp[j];
        }
    }
    Ok(out)
}

/// `s ln v`, with `0^0 = 1` and zero bases floored at `exp(-cap)` for negative `s`.
fn scaled_log<S: Real>(v: S, s: S) -> S {
    if s == S::zero() {
        return S::zero();
    }
    if v > S::zero() {
        s * v.ln()
    } else if s > S::zero() {
        S::neg_infinity()
    } else {
        -s * S::distortion_cap()
    }
}

pub(crate) fn log_kernel<S: Real>(base: ArrayView2<S>, s: S) -> Array2<S> {
    base.mapv(|v| scaled_log(v, s))
}

/// Channel from a log kernel: `P(y_j|x_i) ∝ P(y_j) exp(lk_ij)`. Returns the channel and `ln λ_i`.
pub(crate) fn channel_from_log_kernel<S: Real>(lk: &Array2<S>, py: &Distribution<S>) -> Result<(Array2<S>, Array1<S>)> {
    let (m, n) = lk.dim();
    let lpy: Vec<S> = py.probs().iter().map(|&p| if p > S::zero() { p.ln() } else { S::neg_infinity() }).collect();
    let mut ch = Array2::zeros((m, n));
    let mut log_lambda = Array1::zeros(m);
    let mut a = vec![S::zero(); n];
    for i in 0..m {
        for j in 0..n {
            a[j] = lpy[j] + lk[[i, j]];
        }
        let l = log_sum_exp(a.iter().copied());
        if !l.is_finite() {
            return Err(SvbError::UnreachableSource { index: i });
        }
        for j in 0..n {
            ch[[i, j]] = (a[j] - l).exp();
        }
        log_lambda[i] = l;
    }
    Ok((ch, log_lambda))
}

fn marginal_of<S: Real>(px: &Distribution<S>, ch: &Array2<S>) -> Distribution<S> {
    let q = px.probs().dot(ch);
    let total = q.sum();
    Distribution::from_normalized(q.mapv(|v| v / total))
}

/// Generalized Bayes step: `P(y_j|x_i) = P(y_j) m_ij^s / λ_i`.
pub fn mmi_channel_step<S: Real>(
    px: &Distribution<S>,
    py: &Distribution<S>,
    m: ArrayView2<S>,
    s: S,
) -> Result<Channel<S>> {
    px.check_len(m.nrows())?;
    py.check_len(m.ncols())?;
    if let Some(v) = m.iter().find(|v| !(**v >= S::zero())) {
        return Err(SvbError::InvalidParameter(format!("kernel entry {v} is negative or NaN")));
    }
    let (ch, _) = channel_from_log_kernel(&log_kernel(m, s), py)?;
    Ok(Channel::from_normalized(ch, Orientation::GivenX))
}

/// `P(y_j) = Σ_i P(x_i) P(y_j|x_i)`.
pub fn mmi_marginal_step<S: Real>(px: &Distribution<S>, ch: &Channel<S>) -> Result<Distribution<S>> {
    ch.require(Orientation::GivenX)?;
    ch.marginal(px)
}

/// `-Σ_i P(x_i) log2 λ_i` with `λ_i = Σ_j P(y_j) m_ij^s`: the value of `R - sG`
/// after an optimal channel step from `py`.
pub fn mmi_objective<S: Real>(px: &Distribution<S>, py: &Distribution<S>, m: ArrayView2<S>, s: S) -> Result<S> {
    px.check_len(m.nrows())?;
    py.check_len(m.ncols())?;
    let (_, ll) = channel_from_log_kernel(&log_kernel(m, s), py)?;
    Ok(objective_from_log_lambda(px, &ll))
}

fn objective_from_log_lambda<S: Real>(px: &Distribution<S>, ll: &Array1<S>) -> S {
    -px.probs().iter().zip(ll.iter()).map(|(&p, &l)| p * l).sum::<S>() / S::ln2()
}

fn semantic_mi_of<S: Real>(px: &Distribution<S>, ch: &Array2<S>, log2m: &Array2<S>) -> S {
    let mut g = S::zero();
    for (i, row) in ch.outer_iter().enumerate() {
        let p = px.get(i);
        if p <= S::prob_floor() {
            continue;
        }
        let mut inner = S::zero();
        for (j, &c) in row.iter().enumerate() {
            if c > S::zero() {
                inner += c * log2m[[i, j]];
            }
        }
        g += p * inner;
    }
    g
}

struct KernelRun<S: Real> {
    py: Distribution<S>,
    channel: Array2<S>,
    log_lambda: Array1<S>,
    iterations: usize,
    converged: bool,
    trace: Vec<SweepRecord<S>>,
}

/// Alternates the channel and marginal steps for a fixed log kernel.
fn run_kernel<S: Real>(
    px: &Distribution<S>,
    lk: &Array2<S>,
    log2m: &Array2<S>,
    py0: &Distribution<S>,
    opts: &MmiOptions<S>,
) -> Result<KernelRun<S>> {
    opts.validate()?;
    px.check_len(lk.nrows())?;
    py0.check_len(lk.ncols())?;
    let mut py = py0.floored(opts.py_floor);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_iter {
        let (ch, ll) = channel_from_log_kernel(lk, &py)?;
        let next = marginal_of(px, &ch);
        let cm = Channel::from_normalized(ch, Orientation::GivenX);
        trace.push(SweepRecord {
            g: semantic_mi_of(px, cm.matrix(), log2m),
            r: shannon_mi(px, &cm)?,
            objective: objective_from_log_lambda(px, &ll),
        });
        let diff = next.max_abs_diff(&py);
        // A label still growing is not at the optimum, however small its mass.
        let growth = (0..py.len()).map(|j| next.get(j) / py.get(j)).fold(S::zero(), |a, b| a.max(b));
        py = next.floored(opts.py_floor);
        iterations = it;
        if diff < opts.eps && growth <= S::one() + opts.eps.sqrt() {
            converged = true;
            break;
        }
    }
    let (channel, log_lambda) = channel_from_log_kernel(lk, &py)?;
    Ok(KernelRun { py, channel, log_lambda, iterations, converged, trace })
}

fn log2_ratio<S: Real>(m: &Array2<S>) -> Array2<S> {
    m.mapv(log2_capped)
}

/// MMI iteration for the R(G) parametric solution at multiplier `s`.
pub fn mmi_iterate<S: Real>(
    px: &Distribution<S>,
    sem: &SemanticChannel<S>,
    s: S,
    py0: &Distribution<S>,
    opts: &MmiOptions<S>,
) -> Result<RgPoint<S>> {
    let m = ratio_matrix(px, sem)?;
    let lk = log_kernel(m.view(), s);
    let log2m = log2_ratio(&m);
    let run = run_kernel(px, &lk, &log2m, py0, opts)?;
    let g = semantic_mi_of(px, &run.channel, &log2m);
    let r = s * g + objective_from_log_lambda(px, &run.log_lambda);
    finish(px, s, Criterion::G, g, Some(r), run)
}

fn finish<S: Real>(
    px: &Distribution<S>,
    s: S,
    criterion: Criterion,
    g: S,
    r: Option<S>,
    run: KernelRun<S>,
) -> Result<RgPoint<S>> {
    let channel = Channel::from_normalized(run.channel, Orientation::GivenX);
    let r_shannon = shannon_mi(px, &channel)?;
    Ok(RgPoint {
        s,
        criterion,
        g,
        r: r.unwrap_or(r_shannon).max(S::zero()),
        r_shannon,
        py: run.py,
        channel,
        lambdas: run.log_lambda.mapv(|l| l.exp()),
        converged: run.converged,
        iterations: run.iterations,
        trace: run.trace,
    })
}

/// Channel step of the maximum-truth criterion:
/// `P(y_j|x_i) = P(y_j) T(θ_xi|y_j)^s / Σ_k P(y_k) T(θ_xi|y_k)^s`, with `sem_dual[[i, j]] = T(θ_xi|y_j)`.
pub fn r_theta_channel_step<S: Real>(
    px: &Distribution<S>,
    py: &Distribution<S>,
    sem_dual: ArrayView2<S>,
    s: S,
) -> Result<Channel<S>> {
    if let Some(v) = sem_dual.iter().find(|v| !(**v >= S::zero() && **v <= S::one())) {
        return Err(SvbError::InvalidTruth(format!("truth value {v} outside [0, 1]")));
    }
    mmi_channel_step(px, py, sem_dual, s)
}

/// MMI iteration with truth values as the kernel: the R(Θ) solution.
/// `g` reports semantic information against the ratio form.
pub fn r_theta_iterate<S: Real>(
    px: &Distribution<S>,
    sem: &SemanticChannel<S>,
    s: S,
    py0: &Distribution<S>,
    opts: &MmiOptions<S>,
) -> Result<RgPoint<S>> {
    let m = ratio_matrix(px, sem)?;
    let log2m = log2_ratio(&m);
    let t = sem.truth().t().to_owned();
    let lk = log_kernel(t.view(), s);
    let run = run_kernel(px, &lk, &log2m, py0, opts)?;
    let g = semantic_mi_of(px, &run.channel, &log2m);
    finish(px, s, Criterion::Theta, g, None, run)
}

/// R(D) solution for a distortion matrix `d[[j, i]] = d(x_i, y_j)` (nats),
/// using truth `exp(-d)` as the kernel base.
pub fn rd_iterate<S: Real>(
    px: &Distribution<S>,
    d: ArrayView2<S>,
    s: S,
    py0: &Distribution<S>,
    opts: &MmiOptions<S>,
) -> Result<RgPoint<S>> {
    let mut rows = Vec::with_capacity(d.nrows());
    for row in d.outer_iter() {
        rows.push(truth_from_distortion(row)?);
    }
    let sem = SemanticChannel::from_rows(&rows)?;
    let mut point = r_theta_iterate(px, &sem, s, py0, opts)?;
    point.criterion = Criterion::D;
    Ok(point)
}

/// Expected distortion `Σ_i Σ_j P(x_i) P(y_j|x_i) d(x_i, y_j)` for `d[[j, i]]`.
pub fn mean_distortion<S: Real>(px: &Distribution<S>, ch: &Channel<S>, d: ArrayView2<S>) -> Result<S> {
    ch.require(Orientation::GivenX)?;
    check_len(ch.nrows(), d.ncols())?;
    check_len(ch.ncols(), d.nrows())?;
    let mut total = S::zero();
    for i in 0..ch.nrows() {
        for j in 0..ch.ncols() {
            let c = ch.matrix()[[i, j]];
            if c > S::zero() {
                total += px.get(i) * c * d[[j, i]];
            }
        }
    }
    Ok(total)
}

/// Ordered sweep of points over the multiplier.
#[derive(Clone, Debug)]
pub struct RgCurve<S: Real> {
    pub points: Vec<RgPoint<S>>,
    pub criterion: Criterion,
}

impl<S: Real> RgCurve<S> {
    /// Largest violation of convexity of R versus G: successive chord slopes must not
    /// decrease. Returns zero when convex.
    pub fn convexity_violation(&self) -> S {
        let slopes: Vec<S> = self
            .points
            .windows(2)
            .filter_map(|w| {
                let dg = w[1].g - w[0].g;
                (dg.abs() > S::lit(1e-12)).then(|| (w[1].r - w[0].r) / dg)
            })
            .collect();
        slopes.windows(2).map(|w| (w[0] - w[1]).max(S::zero())).fold(S::zero(), |a, b| a.max(b))
    }

    /// Largest drop of G between consecutive points (zero when non-decreasing).
    pub fn g_monotonicity_violation(&self) -> S {
        self.points.windows(2).map(|w| (w[0].g - w[1].g).max(S::zero())).fold(S::zero(), |a, b| a.max(b))
    }

    /// Relative deviation between `s_k` and the central difference `ΔR/ΔG` at each interior point.
    pub fn slope_errors(&self) -> Vec<(S, S)> {
        self.points
            .windows(3)
            .filter_map(|w| {
                let dg = w[2].g - w[0].g;
                if dg.abs() < S::lit(1e-12) || w[1].s == S::zero() {
                    return None;
                }
                let slope = (w[2].r - w[0].r) / dg;
                Some((w[1].s, ((slope - w[1].s) / w[1].s).abs()))
            })
            .collect()
    }

    pub fn all_converged(&self) -> bool {
        self.points.iter().all(|p| p.converged)
    }
}

/// Sweeps `s_grid` (ascending) warm-starting each point from the previous `P(y)`.
pub fn rg_curve<S: Real>(
    px: &Distribution<S>,
    sem: &SemanticChannel<S>,
    s_grid: &[S],
    opts: &MmiOptions<S>,
) -> Result<RgCurve<S>> {
    if s_grid.is_empty() {
        return Err(SvbError::InvalidParameter("empty s grid".into()));
    }
    if s_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(SvbError::InvalidParameter("s grid must be strictly ascending".into()));
    }
    let mut py = Distribution::uniform(sem.n_labels());
    let mut points = Vec::with_capacity(s_grid.len());
    for &s in s_grid {
        let p = mmi_iterate(px, sem, s, &py, opts)?;
        py = p.py.clone();
        points.push(p);
    }
    Ok(RgCurve { points, criterion: Criterion::G })
}

/// Result of the exhaustive lattice search.
#[derive(Clone, Debug)]
pub struct SimplexSearch<S: Real> {
    /// Best lattice point with its channel.
    pub best: RgPoint<S>,
    /// Smallest and largest Shannon rate over lattice points whose objective is within
    /// `tie_tol` of the best; the optimum is a set when labels outnumber the points.
    pub r_range: (S, S),
    pub points: usize,
}

/// Exhaustive reference solver: evaluates `Σ_i P(x_i) log2 λ_i` on every point of the
/// simplex lattice with spacing `step`. Cost grows as `step^(1-n)`; meant for `n <= 3`.
pub fn simplex_search<S: Real>(
    px: &Distribution<S>,
    sem: &SemanticChannel<S>,
    s: S,
    step: f64,
    tie_tol: S,
) -> Result<SimplexSearch<S>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(SvbError::InvalidParameter(format!("lattice step {step} outside (0, 1]")));
    }
    let m = ratio_matrix(px, sem)?;
    let lk = log_kernel(m.view(), s);
    let log2m = log2_ratio(&m);
    let n = sem.n_labels();
    let k = (1.0 / step).round() as usize;
    let mut head = vec![0usize; n - 1];
    // (objective, rate) per visited lattice point.
    let mut scored: Vec<(S, S, Vec<usize>)> = Vec::new();
    'lattice: loop {
        let used: usize = head.iter().sum();
        let counts: Vec<usize> = head.iter().copied().chain(std::iter::once(k - used)).collect();
        let q = Distribution::from_normalized(counts.iter().map(|&c| S::lit(c as f64 / k as f64)).collect());
        if let Ok((ch, log_lambda)) = channel_from_log_kernel(&lk, &q) {
            let value = -objective_from_log_lambda(px, &log_lambda);
            let r = shannon_mi(px, &Channel::from_normalized(ch, Orientation::GivenX))?;
            scored.push((value, r, counts));
        }
        let mut p = 0;
        loop {
            if p == head.len() {
                break 'lattice;
            }
            head[p] += 1;
            if head.iter().sum::<usize>() <= k {
                break;
            }
            head[p] = 0;
            p += 1;
        }
    }
    let top = scored
        .iter()
        .enumerate()
        .fold(None::<(usize, S)>, |acc, (idx, (v, _, _))| match acc {
            Some((_, b)) if *v <= b => acc,
            _ => Some((idx, *v)),
        })
        .ok_or(SvbError::UnreachableSource { index: 0 })?;
    let mut r_range = (S::infinity(), S::neg_infinity());
    for (v, r, _) in &scored {
        if *v >= top.1 - tie_tol {
            r_range = (r_range.0.min(*r), r_range.1.max(*r));
        }
    }
    let counts = &scored[top.0].2;
    let py = Distribution::from_normalized(counts.iter().map(|&c| S::lit(c as f64 / k as f64)).collect());
    let (ch, log_lambda) = channel_from_log_kernel(&lk, &py)?;
    let g = semantic_mi_of(px, &ch, &log2m);
    let run = KernelRun { py, channel: ch, log_lambda, iterations: 1, converged: true, trace: Vec::new() };
    let best = finish(px, s, Criterion::G, g, None, run)?;
    Ok(SimplexSearch { best, r_range, points: scored.len() })
}

/// The rejected shortcut `P(y_j) = T(θ_j) / Σ_k T(θ_k)`, `P(y_j|x) = T(θ_j|x) P(y_j) / T(θ_j)`.
#[derive(Clone, Debug)]
pub struct ProportionalSplit<S: Real> {
    pub py: Array1<S>,
    /// `m x n` pseudo-channel; rows need not sum to one.
    pub pseudo_channel: Array2<S>,
    pub row_sums: Array1<S>,
}

impl<S: Real> ProportionalSplit<S> {
    pub fn max_row_defect(&self) -> S {
        self.row_sums.iter().map(|&r| (r - S::one()).abs()).fold(S::zero(), |a, b| a.max(b))
    }
}

pub fn proportional_split<S: Real>(px: &Distribution<S>, sem: &SemanticChannel<S>) -> Result<ProportionalSplit<S>> {
    let tp = sem.logical_probabilities(px)?;
    let total = tp.sum();
    if !(total > S::zero()) {
        return Err(SvbError::EmptyFuzzySet { label: None });
    }
    let py = tp.mapv(|t| t / total);
    let pseudo = sem.truth().t().mapv(|t| t / total);
    let row_sums = pseudo.sum_axis(ndarray::Axis(1));
    Ok(ProportionalSplit { py, pseudo_channel: pseudo, row_sums })
}
