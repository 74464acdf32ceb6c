//! Derivative-free fitting of parametric truth functions by maximizing
//! semantic KL information.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constraint::{ConstraintKind, ConstraintSpec, Form};
use crate::error::{Result, SvbError};
use crate::info::semantic_kl;
use crate::prob::{Distribution, Grid};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    /// Random restarts in addition to the coarse-scan start.
    pub restarts: usize,
    /// Objective evaluations per one-dimensional search.
    pub evals_per_coordinate: usize,
    pub max_sweeps: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { restarts: 3, evals_per_coordinate: 200, max_sweeps: 40, seed: 0x5eed }
    }
}

/// Search box for one parameter. Scale parameters are searched in log space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
    pub log_scale: bool,
}

impl Bound {
    fn search_of(self, v: f64) -> f64 {
        if self.log_scale {
            v.ln()
        } else {
            v
        }
    }

    fn param_of(self, u: f64) -> f64 {
        if self.log_scale {
            u.exp()
        } else {
            u
        }
    }

    fn search_range(self) -> (f64, f64) {
        (self.search_of(self.lo), self.search_of(self.hi))
    }
}

/// Default search boxes for a family on a grid.
pub fn default_bounds<S: Real>(family: &Form, grid: &Grid<S>) -> Vec<Bound> {
    let (xmin, xmax) = (grid.min().to_f64_lossy(), grid.max().to_f64_lossy());
    let h = grid.min_step().to_f64_lossy();
    let range = xmax - xmin;
    let loc = Bound { lo: xmin, hi: xmax, log_scale: false };
    let scale = Bound { lo: 0.05 * h, hi: range, log_scale: true };
    match family {
        Form::Gaussian { .. } => vec![loc, scale],
        Form::Logistic { .. } => vec![Bound { lo: -10.0 / h, hi: 10.0 / h, log_scale: false }, loc],
        Form::RaisedComplement { .. } => vec![
            loc,
            Bound { lo: (0.05 * h).powi(2), hi: range * range, log_scale: true },
            Bound { lo: 0.1, hi: 20.0, log_scale: true },
        ],
        Form::Tabulated { .. } => Vec::new(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub spec: ConstraintSpec,
    /// Semantic KL information at the fitted parameters (bits).
    pub objective: f64,
    /// The target has a single support point or a scale parameter hit its lower bound.
    pub collapsed: bool,
    pub evaluations: usize,
}

struct Objective<'a, S: Real> {
    pxy: &'a Distribution<S>,
    px: &'a Distribution<S>,
    grid: &'a Grid<S>,
    family: &'a Form,
    bounds: &'a [Bound],
    evaluations: usize,
}

impl<S: Real> Objective<'_, S> {
    /// Objective at search coordinates `u`; infeasible points score `-inf`.
    fn eval(&mut self, u: &[f64]) -> f64 {
        self.evaluations += 1;
        let params: Vec<f64> = u.iter().zip(self.bounds).map(|(&v, b)| b.param_of(v)).collect();
        let Ok(form) = self.family.with_params(&params) else { return f64::NEG_INFINITY };
        let spec = ConstraintSpec::truth(form);
        let Ok(t) = spec.truth_row(self.grid, self.px) else { return f64::NEG_INFINITY };
        match semantic_kl(self.pxy, self.px, t.view()) {
            Ok(v) if v.is_finite() => v.to_f64_lossy(),
            _ => f64::NEG_INFINITY,
        }
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Maximizes along coordinate `k`: a coarse scan to bracket, then golden section.
fn line_search<S: Real>(obj: &mut Objective<'_, S>, u: &mut [f64], best: &mut f64, k: usize, budget: usize) {
    let (lo, hi) = obj.bounds[k].search_range();
    let scan = (budget / 8).clamp(5, 32);
    let step = (hi - lo) / (scan - 1) as f64;
    let mut trial = u.to_vec();
    let at = |obj: &mut Objective<'_, S>, v: f64, trial: &mut Vec<f64>| {
        trial[k] = v;
        obj.eval(trial)
    };
    let mut best_k = None;
    let mut best_v = *best;
    for q in 0..scan {
        let v = lo + step * q as f64;
        let f = at(obj, v, &mut trial);
        if f > best_v {
            best_v = f;
            best_k = Some(v);
        }
    }
    let centre = best_k.unwrap_or(u[k]);
    let (mut a, mut b) = ((centre - step).max(lo), (centre + step).min(hi));
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = at(obj, c, &mut trial);
    let mut fd = at(obj, d, &mut trial);
    let mut used = scan + 2;
    while used < budget && (b - a) > 1e-13 * (1.0 + a.abs().max(b.abs())) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = at(obj, c, &mut trial);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = at(obj, d, &mut trial);
        }
        used += 1;
    }
    for (v, f) in [(c, fc), (d, fd)] {
        if f > best_v {
            best_v = f;
            best_k = Some(v);
        }
    }
    if let Some(v) = best_k {
        if best_v > *best {
            u[k] = v;
            *best = best_v;
        }
    }
}

fn coordinate_search<S: Real>(obj: &mut Objective<'_, S>, start: Vec<f64>, opts: &FitOptions) -> (Vec<f64>, f64) {
    let mut u = start;
    let mut best = obj.eval(&u);
    for _ in 0..opts.max_sweeps {
        let before = best;
        for k in 0..u.len() {
            line_search(obj, &mut u, &mut best, k, opts.evals_per_coordinate);
        }
        if best - before <= 1e-14 * (1.0 + best.abs()) && best.is_finite() {
            break;
        }
    }
    (u, best)
}

/// Coarse joint scan used as the deterministic starting point.
fn coarse_start<S: Real>(obj: &mut Objective<'_, S>) -> Vec<f64> {
    let dims = obj.bounds.len();
    let per = match dims {
        1 => 64,
        2 => 16,
        _ => 7,
    };
    let ranges: Vec<(f64, f64)> = obj.bounds.iter().map(|b| b.search_range()).collect();
    let mut idx = vec![0usize; dims];
    let mut best = (f64::NEG_INFINITY, ranges.iter().map(|r| 0.5 * (r.0 + r.1)).collect::<Vec<_>>());
    loop {
        let u: Vec<f64> =
            idx.iter().zip(&ranges).map(|(&q, &(lo, hi))| lo + (hi - lo) * (q as f64 + 0.5) / per as f64).collect();
        let f = obj.eval(&u);
        if f > best.0 {
            best = (f, u);
        }
        let mut k = 0;
        loop {
            if k == dims {
                return best.1;
            }
            idx[k] += 1;
            if idx[k] < per {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Fits `family` to the (possibly non-smooth) `P(x|y_j)` by maximizing `I(X;θ_j)`.
pub fn fit_truth_params<S: Real>(
    pxy: &Distribution<S>,
    px: &Distribution<S>,
    grid: &Grid<S>,
    family: &Form,
    opts: &FitOptions,
) -> Result<FitResult> {
    fit_truth_params_bounded(pxy, px, grid, family, &default_bounds(family, grid), opts)
}

pub fn fit_truth_params_bounded<S: Real>(
    pxy: &Distribution<S>,
    px: &Distribution<S>,
    grid: &Grid<S>,
    family: &Form,
    bounds: &[Bound],
    opts: &FitOptions,
) -> Result<FitResult> {
    pxy.check_len(grid.len())?;
    px.check_len(grid.len())?;
    if bounds.len() != family.params().len() {
        return Err(SvbError::InvalidParameter(format!(
            "{} bounds for {} parameters",
            bounds.len(),
            family.params().len()
        )));
    }
    if bounds.iter().any(|b| !(b.hi > b.lo) || (b.log_scale && b.lo <= 0.0)) {
        return Err(SvbError::InvalidParameter("invalid search bounds".into()));
    }
    let support = pxy.probs().iter().filter(|&&p| p > S::prob_floor()).count();
    let mut obj = Objective { pxy, px, grid, family, bounds, evaluations: 0 };

    if bounds.is_empty() {
        let spec = ConstraintSpec::truth(family.clone());
        let t = spec.truth_row(grid, px)?;
        let objective = semantic_kl(pxy, px, t.view())?.to_f64_lossy();
        return Ok(FitResult { spec, objective, collapsed: support <= 1, evaluations: 1 });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![coarse_start(&mut obj)];
    for _ in 0..opts.restarts {
        starts.push(
            bounds
                .iter()
                .map(|b| {
                    let (lo, hi) = b.search_range();
                    rng.random_range(lo..hi)
                })
                .collect(),
        );
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in starts {
        let (u, f) = coordinate_search(&mut obj, start, opts);
        if best.as_ref().is_none_or(|b| f > b.1) {
            best = Some((u, f));
        }
    }
    let (u, f) = best.expect("at least one start");
    if !f.is_finite() {
        return Err(SvbError::DegenerateFit("no feasible parameters in the search box".into()));
    }
    let params: Vec<f64> = u.iter().zip(bounds).map(|(&v, b)| b.param_of(v)).collect();
    let at_floor = u.iter().zip(bounds).any(|(&v, b)| b.log_scale && v <= b.search_range().0 + 1e-9);
    Ok(FitResult {
        spec: ConstraintSpec::new(ConstraintKind::Truth, family.with_params(&params)?),
        objective: f,
        collapsed: support <= 1 || at_floor,
        evaluations: obj.evaluations,
    })
}

/// Objective on a dense `k x k` grid over a two-parameter family (test oracle and diagnostics).
pub fn grid_scan_2d<S: Real>(
    pxy: &Distribution<S>,
    px: &Distribution<S>,
    grid: &Grid<S>,
    family: &Form,
    bounds: &[Bound],
    k: usize,
) -> Result<(Vec<f64>, f64)> {
    if bounds.len() != 2 {
        return Err(SvbError::InvalidParameter("grid scan needs two parameters".into()));
    }
    let mut obj = Objective { pxy, px, grid, family, bounds, evaluations: 0 };
    let r: Vec<(f64, f64)> = bounds.iter().map(|b| b.search_range()).collect();
    let mut best = (vec![0.0, 0.0], f64::NEG_INFINITY);
    for a in 0..k {
        for b in 0..k {
            let u = [
                r[0].0 + (r[0].1 - r[0].0) * a as f64 / (k - 1) as f64,
                r[1].0 + (r[1].1 - r[1].0) * b as f64 / (k - 1) as f64,
            ];
            let f = obj.eval(&u);
            if f > best.1 {
                best = (u.iter().zip(bounds).map(|(&v, bd)| bd.param_of(v)).collect(), f);
            }
        }
    }
    Ok(best)
}
