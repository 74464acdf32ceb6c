//! Goal-oriented information and constraint control under fuzzy targets.

use ndarray::{Array1, Array2, ArrayView1};

use crate::constraint::{ConstraintSpec, Form};
use crate::error::{Result, SvbError};
use crate::info::{relative_entropy, semantic_kl};
use crate::mixture::fit_grid_gaussian;
use crate::prob::{check_len, Channel, Distribution, Grid, Orientation, SemanticChannel};
use crate::rate::{channel_from_log_kernel, log_kernel};
use crate::scalar::{log_sum_exp, Real};

/// Uncontrolled state distribution, one objective truth row per action, and the strength `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlProblem<S: Real> {
    pub px: Distribution<S>,
    pub objectives: SemanticChannel<S>,
    pub s: S,
}

impl<S: Real> ControlProblem<S> {
    pub fn new(px: Distribution<S>, objectives: SemanticChannel<S>, s: S) -> Result<Self> {
        px.check_len(objectives.n_points())?;
        if !(s >= S::zero()) || !s.is_finite() {
            return Err(SvbError::InvalidParameter(format!("strength s must be finite and >= 0, got {s}")));
        }
        let tp = objectives.logical_probabilities(&px)?;
        if let Some(j) = tp.iter().position(|&t| !(t > S::zero())) {
            return Err(SvbError::EmptyFuzzySet { label: Some(j) });
        }
        Ok(Self { px, objectives, s })
    }

    /// `ln[T(θ_j|x_i)^s / Σ_k P(x_k) T(θ_j|x_k)^s]`, shape `m x n`.
    fn log_kernel(&self) -> Array2<S> {
        let mut lk = log_kernel(self.objectives.truth().t(), self.s);
        let lpx: Vec<S> =
            self.px.probs().iter().map(|&p| if p > S::zero() { p.ln() } else { S::neg_infinity() }).collect();
        for mut col in lk.columns_mut() {
            let norm = log_sum_exp(col.iter().zip(&lpx).map(|(&l, &p)| l + p));
            col.mapv_inplace(|l| l - norm);
        }
        lk
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlOptions<S: Real> {
    pub eps: S,
    pub max_iter: usize,
}

impl<S: Real> Default for ControlOptions<S> {
    fn default() -> Self {
        Self { eps: S::lit(1e-13), max_iter: 100_000 }
    }
}

#[derive(Clone, Debug)]
pub struct ControlSolution<S: Real> {
    pub pa: Distribution<S>,
    /// `P(a_j|x_i)`, given-x.
    pub pa_given_x: Channel<S>,
    /// Target outcomes `P(x|θ_j, s)`: semantic Bayes of `T^s`.
    pub outcomes: Channel<S>,
    /// Outcomes implied by the action channel: `P(x_i) P(a_j|x_i) / P(a_j)`.
    pub induced_outcomes: Channel<S>,
    pub g: S,
    pub r: S,
    pub converged: bool,
    pub iterations: usize,
}

impl<S: Real> ControlSolution<S> {
    pub fn efficiency(&self) -> S {
        self.g / self.r
    }
}

/// `I(X; a_j/θ_j) = Σ_i P(x_i|a_j) log2[T(θ_j|x_i) / T(θ_j)]`.
pub fn goal_info_single<S: Real>(pxa: &Distribution<S>, t: ArrayView1<S>, px: &Distribution<S>) -> Result<S> {
    semantic_kl(pxa, px, t)
}

/// `G = Σ_j P(a_j) I(X; a_j/θ_j)`.
pub fn goal_info_total<S: Real>(
    pa: &Distribution<S>,
    outcomes: &Channel<S>,
    objectives: &SemanticChannel<S>,
    px: &Distribution<S>,
) -> Result<S> {
    outcomes.require(Orientation::GivenY)?;
    pa.check_len(outcomes.nrows())?;
    check_len(objectives.n_labels(), outcomes.nrows())?;
    let mut g = S::zero();
    for j in 0..pa.len() {
        if pa.get(j) > S::zero() {
            g += pa.get(j) * goal_info_single(&outcomes.row_distribution(j), objectives.row(j), px)?;
        }
    }
    Ok(g)
}

/// `R = Σ_j P(a_j) KL(P(x|a_j) || P(x))`.
pub fn control_rate<S: Real>(pa: &Distribution<S>, outcomes: &Channel<S>, px: &Distribution<S>) -> Result<S> {
    outcomes.require(Orientation::GivenY)?;
    pa.check_len(outcomes.nrows())?;
    let mut r = S::zero();
    for j in 0..pa.len() {
        if pa.get(j) > S::zero() {
            r += pa.get(j) * relative_entropy(&outcomes.row_distribution(j), px)?;
        }
    }
    Ok(r)
}

/// Alternates the action channel `P(a_j|x_i) = P(a_j) K_ij / λ_i` with the marginal update
/// of `P(a)` until `P(a)` stops moving, where `K` is the renormalized `T^s` kernel.
pub fn solve_control<S: Real>(
    problem: &ControlProblem<S>,
    pa0: &Distribution<S>,
    opts: &ControlOptions<S>,
) -> Result<ControlSolution<S>> {
    let n = problem.objectives.n_labels();
    pa0.check_len(n)?;
    let px = &problem.px;
    let lk = problem.log_kernel();
    let mut pa = pa0.clone();
    let mut converged = false;
    let mut iterations = 0;
    let mut ch;
    loop {
        iterations += 1;
        ch = channel_from_log_kernel(&lk, &pa)?.0;
        let next = Channel::from_normalized(ch.clone(), Orientation::GivenX).marginal(px)?;
        let change = next.max_abs_diff(&pa);
        pa = next;
        if change < opts.eps {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
    }
    let pa_given_x = Channel::from_normalized(ch, Orientation::GivenX);
    let m = px.len();
    let mut out = Array2::zeros((n, m));
    for (j, col) in lk.columns().into_iter().enumerate() {
        for i in 0..m {
            out[[j, i]] = px.get(i) * col[i].exp();
        }
        let total = out.row(j).sum();
        out.row_mut(j).mapv_inplace(|v| v / total);
    }
    let outcomes = Channel::from_normalized(out, Orientation::GivenY);
    let (induced_outcomes, _) = pa_given_x.invert(px)?;
    let g = goal_info_total(&pa, &outcomes, &problem.objectives, px)?;
    let r = control_rate(&pa, &outcomes, px)?;
    Ok(ControlSolution { pa, pa_given_x, outcomes, induced_outcomes, g, r, converged, iterations })
}

/// Gaussian stand-in for one outcome row.
#[derive(Clone, Debug)]
pub struct GaussianProjection<S: Real> {
    pub mu: S,
    pub sigma: S,
    pub row: Distribution<S>,
    /// `KL(outcome || row)`, bits: large for multimodal outcomes.
    pub divergence: S,
}

/// Projects an outcome onto the grid Gaussian with the same mean and standard deviation.
pub fn gaussian_projection<S: Real>(grid: &Grid<S>, outcome: &Distribution<S>) -> Result<GaussianProjection<S>> {
    outcome.check_len(grid.len())?;
    let (_, sd) = grid.moments(outcome.view())?;
    if !(sd > S::zero()) {
        return Err(SvbError::DegenerateFit("outcome has zero variance".into()));
    }
    let floor = grid.min_step() * S::lit(0.5);
    let (mu, sigma) = fit_grid_gaussian(grid, outcome.view(), floor)?;
    let row = Distribution::discretized_gaussian(grid, mu, sigma)?;
    let divergence = relative_entropy(outcome, &row)?;
    Ok(GaussianProjection { mu, sigma, row, divergence })
}

/// Goal information of a solution with every outcome replaced by its Gaussian projection.
#[derive(Clone, Debug)]
pub struct ProjectedControl<S: Real> {
    pub projections: Vec<GaussianProjection<S>>,
    pub g: S,
    pub r: S,
    /// `(G' - G) / G`.
    pub g_shift: S,
    /// `G'/R' - G/R`.
    pub efficiency_shift: S,
}

pub fn project_solution<S: Real>(
    grid: &Grid<S>,
    problem: &ControlProblem<S>,
    sol: &ControlSolution<S>,
) -> Result<ProjectedControl<S>> {
    let projections = (0..sol.outcomes.nrows())
        .map(|j| gaussian_projection(grid, &sol.outcomes.row_distribution(j)))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Distribution<S>> = projections.iter().map(|p| p.row.clone()).collect();
    let ch = Channel::from_rows(&rows, Orientation::GivenY)?;
    let g = goal_info_total(&sol.pa, &ch, &problem.objectives, &problem.px)?;
    let r = control_rate(&sol.pa, &ch, &problem.px)?;
    Ok(ProjectedControl { projections, g, r, g_shift: (g - sol.g) / sol.g, efficiency_shift: g / r - sol.efficiency() })
}

/// Truth row of a parametric objective on the grid.
pub fn objective_library<S: Real>(grid: &Grid<S>, form: &Form) -> Result<Array1<S>> {
    let t = ConstraintSpec::truth(form.clone()).log_values(grid)?;
    Ok(t.mapv(|l| l.exp()))
}
