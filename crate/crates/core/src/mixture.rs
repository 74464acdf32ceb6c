//! Gaussian mixture models on a grid: EM, EnM and the channel mixture model.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Result, SvbError};
use crate::info::{estep_channel, estep_diagnostics, q_and_f, relative_entropy, shannon_mi, InfoReport};
use crate::prob::{check_len, Channel, Distribution, Grid, Orientation, SemanticChannel};
use crate::rate::{mmi_channel_step, ratio_matrix};
use crate::scalar::{log_sum_exp, Real};

/// One Gaussian component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianParams<S: Real> {
    pub mu: S,
    pub sigma: S,
    pub weight: S,
}

impl<S: Real> GaussianParams<S> {
    pub fn new(mu: S, sigma: S, weight: S) -> Self {
        Self { mu, sigma, weight }
    }
}

/// Discretized Gaussian likelihood row, renormalized on the grid.
pub fn realize_gaussian_row<S: Real>(grid: &Grid<S>, mu: S, sigma: S) -> Result<Distribution<S>> {
    Distribution::discretized_gaussian(grid, mu, sigma)
}

/// Parameters whose discretized Gaussian row has the same grid mean and variance as
/// `weights`: the exact maximum-likelihood projection onto the grid family. Targets
/// narrower than `sigma_floor` return the floor. Variances beyond the flattest member
/// with `sigma <= sigma_max` saturate there.
pub fn fit_grid_gaussian<S: Real>(grid: &Grid<S>, weights: ArrayView1<S>, sigma_floor: S) -> Result<(S, S)> {
    let (mean, sd) = grid.moments(weights)?;
    if !(sd > sigma_floor) {
        return Ok((mean, sigma_floor));
    }
    let scale = (grid.max() - grid.min()).max(S::one());
    let z: Array1<S> = grid.values().mapv(|x| (x - mean) / scale);
    let t2 = (sd / scale) * (sd / scale);
    let sigma_max = S::lit(1e3);
    let eta2_max = -S::lit(0.5) / (sigma_max * sigma_max);
    let two = S::lit(2.0);
    // Dual objective A(eta) - eta . t with t = (0, t2), convex in eta.
    let dual = |e1: S, e2: S| log_sum_exp(z.iter().map(|&v| e1 * v + e2 * v * v)) - e2 * t2;
    let (mut e1, mut e2) = (S::zero(), (-S::lit(0.5) / t2).min(eta2_max));
    let mut f = dual(e1, e2);
    for _ in 0..200 {
        let a = log_sum_exp(z.iter().map(|&v| e1 * v + e2 * v * v));
        let (mut m1, mut m2, mut m3, mut m4) = (S::zero(), S::zero(), S::zero(), S::zero());
        for &v in z.iter() {
            let w = (e1 * v + e2 * v * v - a).exp();
            let v2 = v * v;
            m1 += w * v;
            m2 += w * v2;
            m3 += w * v2 * v;
            m4 += w * v2 * v2;
        }
        let (g1, g2) = (m1, m2 - t2);
        if g1.abs() <= S::lit(1e-14) && g2.abs() <= t2 * S::lit(1e-12) {
            break;
        }
        let (h11, h12, h22) = (m2 - m1 * m1, m3 - m1 * m2, m4 - m2 * m2);
        let det = h11 * h22 - h12 * h12;
        if !(det > S::zero()) {
            break;
        }
        let d1 = -(h22 * g1 - h12 * g2) / det;
        let d2 = -(h11 * g2 - h12 * g1) / det;
        let mut step = S::one();
        let mut moved = false;
        for _ in 0..60 {
            let (n1, n2) = (e1 + step * d1, (e2 + step * d2).min(eta2_max));
            let fn_ = dual(n1, n2);
            if fn_ <= f {
                moved = fn_ < f || (n1 != e1 || n2 != e2);
                e1 = n1;
                e2 = n2;
                f = fn_;
                break;
            }
            step /= two;
        }
        if !moved {
            break;
        }
    }
    let var_z = -S::lit(0.5) / e2;
    let mu = mean + scale * e1 * var_z;
    let sigma = (var_z.sqrt() * scale).max(sigma_floor);
    if !mu.is_finite() || !sigma.is_finite() {
        return Err(SvbError::DegenerateFit("gaussian projection diverged".into()));
    }
    Ok((mu, sigma))
}

/// Mixture parameters with their likelihood rows realized on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureState<S: Real> {
    grid: Grid<S>,
    components: Vec<GaussianParams<S>>,
    rows: Channel<S>,
    sigma_floor: S,
    /// Components whose sigma was raised to the floor when this state was built.
    clamped: Vec<bool>,
}

impl<S: Real> MixtureState<S> {
    /// Sigma floor defaults to half the smallest grid step.
    pub fn new(grid: Grid<S>, components: Vec<GaussianParams<S>>) -> Result<Self> {
        let floor = grid.min_step() * S::lit(0.5);
        Self::with_floor(grid, components, floor)
    }

    pub fn with_floor(grid: Grid<S>, components: Vec<GaussianParams<S>>, sigma_floor: S) -> Result<Self> {
        if components.is_empty() {
            return Err(SvbError::InvalidParameter("mixture needs at least one component".into()));
        }
        if !(sigma_floor > S::zero()) {
            return Err(SvbError::InvalidParameter("sigma floor must be positive".into()));
        }
        let weights: Array1<S> = components.iter().map(|c| c.weight).collect();
        Distribution::new(weights)?;
        let mut comps = components;
        let mut clamped = Vec::with_capacity(comps.len());
        let mut rows = Vec::with_capacity(comps.len());
        for c in comps.iter_mut() {
            if !c.mu.is_finite() || !(c.sigma >= S::zero()) {
                return Err(SvbError::InvalidParameter(format!(
                    "component needs finite mu and sigma >= 0 (mu={}, sigma={})",
                    c.mu, c.sigma
                )));
            }
            let low = c.sigma <= sigma_floor;
            if low {
                c.sigma = sigma_floor;
            }
            clamped.push(low);
            rows.push(realize_gaussian_row(&grid, c.mu, c.sigma)?);
        }
        let rows = Channel::from_rows(&rows, Orientation::GivenY)?;
        Ok(Self { grid, components: comps, rows, sigma_floor, clamped })
    }

    pub fn grid(&self) -> &Grid<S> {
        &self.grid
    }

    pub fn components(&self) -> &[GaussianParams<S>] {
        &self.components
    }

    /// Likelihood rows `P(x|θ_j)`.
    pub fn likelihoods(&self) -> &Channel<S> {
        &self.rows
    }

    pub fn weights(&self) -> Distribution<S> {
        Distribution::from_normalized(self.components.iter().map(|c| c.weight).collect())
    }

    pub fn sigma_floor(&self) -> S {
        self.sigma_floor
    }

    pub fn clamped(&self) -> &[bool] {
        &self.clamped
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Same components with new weights (rows unchanged).
    pub fn reweighted(&self, py: &Distribution<S>) -> Result<Self> {
        py.check_len(self.components.len())?;
        let mut out = self.clone();
        for (c, &w) in out.components.iter_mut().zip(py.probs().iter()) {
            c.weight = w;
        }
        Ok(out)
    }

    /// Reorders components: new component `k` is old component `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let comps = perm.iter().map(|&p| self.components[p]).collect();
        Self::with_floor(self.grid.clone(), comps, self.sigma_floor)
    }
}

/// Predictive mixture `P_θ(x) = Σ_j P(y_j) P(x|θ_j)`.
pub fn mixture_predict<S: Real>(state: &MixtureState<S>) -> Distribution<S> {
    let p = state.weights().probs().dot(state.likelihoods().matrix());
    let total = p.sum();
    Distribution::from_normalized(p.mapv(|v| v / total))
}

/// Largest absolute violation of `Σ_j P(x_i|θ_j) P(y_j) = P(x_i)` over the grid.
pub fn mixture_residual<S: Real>(px: &Distribution<S>, state: &MixtureState<S>) -> Result<S> {
    px.check_len(state.grid().len())?;
    Ok(mixture_predict(state).max_abs_diff(px))
}

/// E-step: `P(y_j|x) = P(y_j) P(x|θ_j) / P_θ(x)`.
pub fn e_step<S: Real>(px: &Distribution<S>, state: &MixtureState<S>) -> Result<Channel<S>> {
    px.check_len(state.grid().len())?;
    let (ch, pred) = estep_channel(state.likelihoods(), &state.weights())?;
    for i in 0..px.len() {
        if px.get(i) > S::prob_floor() && !(pred.get(i) > S::zero()) {
            return Err(SvbError::VanishedDenominator { index: i });
        }
    }
    Ok(ch)
}

/// M1-step: `P⁺¹(y_j) = Σ_i P(x_i) P(y_j|x_i)`.
pub fn m1_step<S: Real>(px: &Distribution<S>, ch: &Channel<S>) -> Result<Distribution<S>> {
    ch.require(Orientation::GivenX)?;
    ch.marginal(px)
}

/// M2-step: target rows `P(x) P(y_j|x) / P⁺¹(y_j)` projected onto the discretized Gaussian
/// family by matching grid mean and variance. Weights become `py_next`.
pub fn m2_step<S: Real>(
    px: &Distribution<S>,
    ch: &Channel<S>,
    py_next: &Distribution<S>,
    template: &MixtureState<S>,
) -> Result<MixtureState<S>> {
    ch.require(Orientation::GivenX)?;
    let grid = template.grid();
    px.check_len(grid.len())?;
    check_len(grid.len(), ch.nrows())?;
    py_next.check_len(ch.ncols())?;
    let mut comps = Vec::with_capacity(ch.ncols());
    for j in 0..ch.ncols() {
        if !(py_next.get(j) > S::zero()) {
            return Err(SvbError::DegenerateFit(format!("component {j} lost all mass")));
        }
        let target: Array1<S> = (0..grid.len()).map(|i| px.get(i) * ch.matrix()[[i, j]]).collect();
        let (mu, sigma) = fit_grid_gaussian(grid, target.view(), template.sigma_floor())?;
        comps.push(GaussianParams::new(mu, sigma, py_next.get(j)));
    }
    MixtureState::with_floor(grid.clone(), comps, template.sigma_floor())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopRule<S: Real> {
    /// Converged once `H(P||P_θ)` drops below this (bits).
    pub kl_bits: S,
    pub max_outer: usize,
}

impl<S: Real> Default for StopRule<S> {
    fn default() -> Self {
        Self { kl_bits: S::lit(1e-3), max_outer: 2000 }
    }
}

impl<S: Real> StopRule<S> {
    /// Exactly `outer` model updates, no early stop.
    pub fn fixed(outer: usize) -> Self {
        Self { kl_bits: S::zero(), max_outer: outer }
    }
}

/// One recorded outer iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow<S: Real> {
    pub step: usize,
    pub report: InfoReport<S>,
    /// Parameters the diagnostics were evaluated at (weights after the n-step).
    pub components: Vec<GaussianParams<S>>,
    /// Largest normalization residual of the E-step Bayes core `P(y_j|x)/P(y_j)`, before the n-step.
    pub first_estep_residual: S,
    /// Inner E/M1 repetitions performed.
    pub inner_steps: usize,
}

#[derive(Clone, Debug)]
pub struct MixtureRun<S: Real> {
    pub state: MixtureState<S>,
    pub trace: Vec<TraceRow<S>>,
    pub converged: bool,
    /// Model updates applied.
    pub iterations: usize,
    /// `H(P||P_θ)` of the returned state.
    pub final_kl_x: S,
    /// Components that hit the sigma floor at any update.
    pub sigma_clamped: bool,
}

fn estep_residual<S: Real>(px: &Distribution<S>, likelihoods: &Channel<S>, py: &Distribution<S>) -> Result<S> {
    let (ch, _) = estep_channel(likelihoods, py)?;
    let next = ch.marginal(px)?;
    let mut worst = S::zero();
    for j in 0..py.len() {
        if py.get(j) > S::lit(1e-9) {
            worst = worst.max((next.get(j) / py.get(j) - S::one()).abs());
        }
    }
    Ok(worst)
}

fn params_with_weights<S: Real>(state: &MixtureState<S>, py: &Distribution<S>) -> Vec<GaussianParams<S>> {
    state.components().iter().zip(py.probs().iter()).map(|(c, &w)| GaussianParams::new(c.mu, c.sigma, w)).collect()
}

/// Inner-loop tolerance of the n-step on `max_j |ΔP(y_j)|`.
pub const NSTEP_TOL: f64 = 1e-8;

/// EnM: each outer iteration repeats E and M1 up to `n` times (stopping early once
/// `max_j |ΔP(y_j)| < 1e-8`), then refits every component from the last E-step.
pub fn run_enm<S: Real>(
    px: &Distribution<S>,
    init: &MixtureState<S>,
    n: usize,
    stop: &StopRule<S>,
) -> Result<MixtureRun<S>> {
    if n == 0 {
        return Err(SvbError::InvalidParameter("n must be at least 1".into()));
    }
    px.check_len(init.grid().len())?;
    let tol = S::lit(NSTEP_TOL);
    let mut state = init.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut sigma_clamped = false;
    for t in 0..=stop.max_outer {
        let first_estep_residual = estep_residual(px, state.likelihoods(), &state.weights())?;
        let mut py = state.weights();
        let mut inner = 0;
        let diag = loop {
            inner += 1;
            let d = estep_diagnostics(px, state.likelihoods(), &py)?;
            let change = d.py_next.max_abs_diff(&py);
            if inner >= n || change < tol {
                break d;
            }
            py = d.py_next.clone();
        };
        let candidate = m2_step(px, &diag.channel, &diag.py_next, &state)?;
        let (q, f) = q_and_f(px, &diag.channel, candidate.likelihoods(), &diag.py_next)?;
        let report =
            InfoReport { g: diag.g, r: diag.r, r_dprime: diag.r_dprime, q, f, kl_x: diag.kl_x, kl_y: diag.kl_y };
        trace.push(TraceRow {
            step: t,
            report,
            components: params_with_weights(&state, &py),
            first_estep_residual,
            inner_steps: inner,
        });
        if report.kl_x < stop.kl_bits {
            converged = true;
            state = state.reweighted(&py)?;
            break;
        }
        if t == stop.max_outer {
            break;
        }
        sigma_clamped |= candidate.clamped().iter().any(|&c| c);
        state = candidate;
        iterations += 1;
    }
    let final_kl_x = relative_entropy(px, &mixture_predict(&state))?;
    Ok(MixtureRun { state, trace, converged, iterations, final_kl_x, sigma_clamped })
}

/// Classic EM: one E-step, M1-step and M2-step per iteration.
pub fn run_em<S: Real>(px: &Distribution<S>, init: &MixtureState<S>, stop: &StopRule<S>) -> Result<MixtureRun<S>> {
    px.check_len(init.grid().len())?;
    let mut state = init.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut sigma_clamped = false;
    for t in 0..=stop.max_outer {
        let py = state.weights();
        let d = estep_diagnostics(px, state.likelihoods(), &py)?;
        let next = m2_step(px, &d.channel, &d.py_next, &state)?;
        let (q, f) = q_and_f(px, &d.channel, next.likelihoods(), &d.py_next)?;
        let residual = estep_residual(px, state.likelihoods(), &py)?;
        let report = InfoReport { g: d.g, r: d.r, r_dprime: d.r_dprime, q, f, kl_x: d.kl_x, kl_y: d.kl_y };
        trace.push(TraceRow {
            step: t,
            report,
            components: state.components().to_vec(),
            first_estep_residual: residual,
            inner_steps: 1,
        });
        if d.kl_x < stop.kl_bits {
            converged = true;
            break;
        }
        if t == stop.max_outer {
            break;
        }
        sigma_clamped |= next.clamped().iter().any(|&c| c);
        state = next;
        iterations += 1;
    }
    let final_kl_x = relative_entropy(px, &mixture_predict(&state))?;
    Ok(MixtureRun { state, trace, converged, iterations, final_kl_x, sigma_clamped })
}

/// How the channel mixture's truth functions evolve.
#[derive(Clone, Debug, PartialEq)]
pub enum TruthModel<S: Real> {
    /// Gaussian truth functions `(mu, sigma)`, refit from the mean and standard
    /// deviation of `P(y_j|x)` over x after every E-step.
    Gaussian(Vec<(S, S)>),
    /// Truth rows held fixed; only `P(y)` is iterated.
    Fixed(SemanticChannel<S>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelMixtureOptions<S: Real> {
    pub s: S,
    /// Stop when `P(y)` and every truth parameter move less than this.
    pub eps: S,
    pub max_iter: usize,
}

impl<S: Real> Default for ChannelMixtureOptions<S> {
    fn default() -> Self {
        Self { s: S::one(), eps: S::lit(1e-10), max_iter: 20000 }
    }
}

#[derive(Clone, Debug)]
pub struct ChannelMixtureRun<S: Real> {
    pub py: Distribution<S>,
    pub semantic: SemanticChannel<S>,
    /// Gaussian truth parameters when refitting.
    pub truth_params: Option<Vec<(S, S)>>,
    /// `P(y|x)` from the final E-step.
    pub channel: Channel<S>,
    /// `Σ_j P(y_j) P(x|θ_j)` with `P(x|θ_j)` from semantic Bayes.
    pub predictive: Distribution<S>,
    pub kl_x: S,
    /// (G, R) per iteration, bits.
    pub trace: Vec<(S, S)>,
    pub converged: bool,
    pub iterations: usize,
}

fn gaussian_semantic<S: Real>(grid: &Grid<S>, params: &[(S, S)]) -> Result<SemanticChannel<S>> {
    let rows: Vec<Array1<S>> = params.iter().map(|&(mu, sigma)| crate::prob::gaussian_truth(grid, mu, sigma)).collect();
    SemanticChannel::from_rows(&rows)
}

/// Channel mixture model: E-step `P(y_j|x) ∝ P(y_j) [T(θ_j|x)/T(θ_j)]^s`, marginal update
/// of `P(y)`, and (for Gaussian truth) refit of the truth functions.
pub fn run_channel_mixture<S: Real>(
    px: &Distribution<S>,
    grid: &Grid<S>,
    model: &TruthModel<S>,
    py0: &Distribution<S>,
    opts: &ChannelMixtureOptions<S>,
) -> Result<ChannelMixtureRun<S>> {
    px.check_len(grid.len())?;
    let floor = grid.min_step() * S::lit(0.5);
    let mut params = match model {
        TruthModel::Gaussian(p) => {
            if p.iter().any(|&(m, s)| !m.is_finite() || !(s > S::zero())) {
                return Err(SvbError::InvalidParameter("truth parameters need sigma > 0".into()));
            }
            Some(p.clone())
        }
        TruthModel::Fixed(_) => None,
    };
    let mut sem = match model {
        TruthModel::Gaussian(p) => gaussian_semantic(grid, p)?,
        TruthModel::Fixed(s) => s.clone(),
    };
    check_len(sem.n_points(), grid.len())?;
    py0.check_len(sem.n_labels())?;
    let mut py = py0.floored(S::lit(1e-15));
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut channel;
    loop {
        iterations += 1;
        let m = ratio_matrix(px, &sem)?;
        channel = mmi_channel_step(px, &py, m.view(), opts.s)?;
        let next = channel.marginal(px)?;
        let g = semantic_g(px, &channel, &m);
        trace.push((g, shannon_mi(px, &channel)?));
        let mut change = next.max_abs_diff(&py);
        py = next.floored(S::lit(1e-15));
        if let Some(p) = params.as_mut() {
            for (j, slot) in p.iter_mut().enumerate() {
                let col = channel.matrix().column(j);
                let (mu, sigma) = grid.moments(col)?;
                let sigma = sigma.max(floor);
                change = change.max((mu - slot.0).abs()).max((sigma - slot.1).abs());
                *slot = (mu, sigma);
            }
            sem = gaussian_semantic(grid, p)?;
        }
        if change < opts.eps {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
    }
    let lik = sem.likelihoods(px)?;
    let pred = lik.marginal(&py)?;
    let kl_x = relative_entropy(px, &pred)?;
    Ok(ChannelMixtureRun {
        py,
        semantic: sem,
        truth_params: params,
        channel,
        predictive: pred,
        kl_x,
        trace,
        converged,
        iterations,
    })
}

fn semantic_g<S: Real>(px: &Distribution<S>, ch: &Channel<S>, m: &Array2<S>) -> S {
    let mut g = S::zero();
    for i in 0..ch.nrows() {
        for j in 0..ch.ncols() {
            let c = ch.matrix()[[i, j]];
            if c > S::zero() && m[[i, j]] > S::zero() && px.get(i) > S::prob_floor() {
                g += px.get(i) * c * m[[i, j]].log2();
            }
        }
    }
    g
}

/// Minimum-distortion E-step `P(y_j|x_i) ∝ P(y_j) exp(-s d(x_i, y_j))` for `d[[j, i]]`.
pub fn distortion_estep<S: Real>(
    px: &Distribution<S>,
    py: &Distribution<S>,
    d: &Array2<S>,
    s: S,
) -> Result<Channel<S>> {
    let t = d.t().mapv(|v| (-v).exp());
    crate::rate::r_theta_channel_step(px, py, t.view(), s)
}
