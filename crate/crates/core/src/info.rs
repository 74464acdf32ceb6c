//! Shannon and semantic information measures, in bits.

use ndarray::{Array1, ArrayView1};

use crate::error::{Result, SvbError};
use crate::prob::{check_len, logical_probability, Channel, Distribution, Orientation, SemanticChannel};
use crate::scalar::{fmt17, Real};

/// `log2 v`, with zero mapped to `-cap / ln 2` (the distortion cap in bits).
pub(crate) fn log2_capped<S: Real>(v: S) -> S {
    let floor = -S::distortion_cap() / S::ln2();
    if v > S::zero() {
        v.log2().max(floor)
    } else {
        floor
    }
}

/// Whether `x_i` takes part in x-weighted sums.
fn x_active<S: Real>(p: S) -> bool {
    p > S::prob_floor()
}

/// Diagnostics recorded at every mixture iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct InfoReport<S: Real> {
    pub g: S,
    pub r: S,
    pub r_dprime: S,
    pub q: S,
    pub f: S,
    pub kl_x: S,
    pub kl_y: S,
}

impl<S: Real> InfoReport<S> {
    pub const CSV_HEADER: &'static str = "step,G,R,R_dprime,Q,F,kl_x,kl_y";

    pub fn csv_row(&self, step: usize) -> String {
        let v = [self.g, self.r, self.r_dprime, self.q, self.f, self.kl_x, self.kl_y];
        let cells: Vec<String> = v.iter().map(|x| fmt17(x.to_f64_lossy())).collect();
        format!("{step},{}", cells.join(","))
    }
}

/// `I(X;Y)` for a given-x channel; the output marginal is computed internally.
pub fn shannon_mi<S: Real>(px: &Distribution<S>, ch: &Channel<S>) -> Result<S> {
    ch.require(Orientation::GivenX)?;
    let py = ch.marginal(px)?;
    let mut total = S::zero();
    for i in 0..ch.nrows() {
        let p = px.get(i);
        if !x_active(p) {
            continue;
        }
        let mut inner = S::zero();
        for (j, &c) in ch.row(i).iter().enumerate() {
            if c > S::zero() {
                inner += c * (c / py.get(j)).log2();
            }
        }
        total += p * inner;
    }
    Ok(total.max(S::zero()))
}

/// `I(X;Y_θ) = Σ_i Σ_j P(x_i) P(y_j|x_i) log2[T(θ_j|x_i) / T(θ_j)]`.
pub fn semantic_mi<S: Real>(px: &Distribution<S>, ch: &Channel<S>, sem: &SemanticChannel<S>) -> Result<S> {
    ch.require(Orientation::GivenX)?;
    check_len(sem.n_labels(), ch.ncols())?;
    check_len(sem.n_points(), ch.nrows())?;
    let tp = sem.logical_probabilities(px)?;
    let usage = ch.marginal(px)?;
    for j in 0..tp.len() {
        if !(tp[j] > S::zero()) && usage.get(j) > S::zero() {
            return Err(SvbError::EmptyFuzzySet { label: Some(j) });
        }
    }
    let mut total = S::zero();
    for i in 0..ch.nrows() {
        let p = px.get(i);
        if !x_active(p) {
            continue;
        }
        let mut inner = S::zero();
        for (j, &c) in ch.row(i).iter().enumerate() {
            if c > S::zero() {
                inner += c * (log2_capped(sem.truth()[[j, i]]) - tp[j].log2());
            }
        }
        total += p * inner;
    }
    Ok(total)
}

/// `I(X;θ_j) = Σ_i P(x_i|y_j) log2[T(θ_j|x_i) / T(θ_j)]`.
pub fn semantic_kl<S: Real>(pxy: &Distribution<S>, px: &Distribution<S>, t: ArrayView1<S>) -> Result<S> {
    pxy.check_len(t.len())?;
    let tp = logical_probability(t, px)?;
    if !(tp > S::zero()) {
        return Err(SvbError::EmptyFuzzySet { label: None });
    }
    let ltp = tp.log2();
    let mut total = S::zero();
    for (i, &q) in pxy.probs().iter().enumerate() {
        if x_active(q) {
            total += q * (log2_capped(t[i]) - ltp);
        }
    }
    Ok(total)
}

/// `log2[T(θ_j|x_i) / T(θ_j)]`; a zero truth value yields `S::min_value()`.
pub fn semantic_point_info<S: Real>(i: usize, t: ArrayView1<S>, px: &Distribution<S>) -> Result<S> {
    let tp = logical_probability(t, px)?;
    if !(tp > S::zero()) {
        return Err(SvbError::EmptyFuzzySet { label: None });
    }
    if i >= t.len() {
        return Err(SvbError::InvalidParameter(format!("index {i} out of range")));
    }
    if t[i] > S::zero() {
        Ok((t[i] / tp).log2())
    } else {
        Ok(S::min_value())
    }
}

/// Semantic entropy `H(Y_θ)` and mean distortion `d̄` (bits), with `G = H(Y_θ) - d̄`.
pub fn entropy_decomposition<S: Real>(
    px: &Distribution<S>,
    ch: &Channel<S>,
    sem: &SemanticChannel<S>,
) -> Result<(S, S)> {
    ch.require(Orientation::GivenX)?;
    check_len(sem.n_labels(), ch.ncols())?;
    check_len(sem.n_points(), ch.nrows())?;
    let tp = sem.logical_probabilities(px)?;
    // Marginal restricted to the same x-support as the distortion sum so the identity is exact.
    let mut py = Array1::<S>::zeros(ch.ncols());
    let mut d_bar = S::zero();
    for i in 0..ch.nrows() {
        let p = px.get(i);
        if !x_active(p) {
            continue;
        }
        for (j, &c) in ch.row(i).iter().enumerate() {
            if c > S::zero() {
                py[j] += p * c;
                d_bar -= p * c * log2_capped(sem.truth()[[j, i]]);
            }
        }
    }
    let mut h = S::zero();
    for j in 0..py.len() {
        if py[j] > S::zero() {
            if !(tp[j] > S::zero()) {
                return Err(SvbError::EmptyFuzzySet { label: Some(j) });
            }
            h -= py[j] * tp[j].log2();
        }
    }
    Ok((h, d_bar))
}

/// `Σ p log2(p / q)`.
pub fn relative_entropy<S: Real>(p: &Distribution<S>, q: &Distribution<S>) -> Result<S> {
    q.check_len(p.len())?;
    let mut total = S::zero();
    for i in 0..p.len() {
        let a = p.get(i);
        if !x_active(a) {
            continue;
        }
        let b = q.get(i);
        if !(b > S::zero()) {
            return Err(SvbError::AbsoluteContinuity { index: i, p: a.to_f64_lossy() });
        }
        total += a * (a / b).log2();
    }
    Ok(total.max(S::zero()))
}

/// E-step channel `P(y_j|x_i) = P(y_j) P(x_i|θ_j) / P_θ(x_i)` and the predictive `P_θ`.
pub(crate) fn estep_channel<S: Real>(
    likelihoods: &Channel<S>,
    py: &Distribution<S>,
) -> Result<(Channel<S>, Distribution<S>)> {
    likelihoods.require(Orientation::GivenY)?;
    py.check_len(likelihoods.nrows())?;
    let pred = likelihoods.marginal(py)?;
    let (n, m) = likelihoods.matrix().dim();
    let mut ch = ndarray::Array2::zeros((m, n));
    for i in 0..m {
        let denom: S = (0..n).map(|j| py.get(j) * likelihoods.matrix()[[j, i]]).sum();
        if !(denom > S::zero()) {
            // Leave the row at the prior; it carries no observed mass when P(x_i) = 0.
            ch.row_mut(i).assign(py.probs());
            continue;
        }
        for j in 0..n {
            ch[[i, j]] = py.get(j) * likelihoods.matrix()[[j, i]] / denom;
        }
    }
    Ok((Channel::from_normalized(ch, Orientation::GivenX), pred))
}

fn check_predictive<S: Real>(px: &Distribution<S>, pred: &Distribution<S>) -> Result<()> {
    for i in 0..px.len() {
        if x_active(px.get(i)) && !(pred.get(i) > S::zero()) {
            return Err(SvbError::VanishedDenominator { index: i });
        }
    }
    Ok(())
}

/// Shannon information after an E-step: `R = Σ_i Σ_j P(x_i) P(y_j|x_i) log2[P(y_j|x_i) / P⁺¹(y_j)]`
/// with the E-step channel built from `likelihoods` and `py`.
pub fn post_estep_r<S: Real>(
    px: &Distribution<S>,
    likelihoods: &Channel<S>,
    py: &Distribution<S>,
    py_next: &Distribution<S>,
) -> Result<S> {
    px.check_len(likelihoods.ncols())?;
    py_next.check_len(py.len())?;
    let (ch, pred) = estep_channel(likelihoods, py)?;
    check_predictive(px, &pred)?;
    let mut total = S::zero();
    for i in 0..ch.nrows() {
        let p = px.get(i);
        if !x_active(p) {
            continue;
        }
        for (j, &c) in ch.row(i).iter().enumerate() {
            if c > S::zero() {
                total += p * c * (c / py_next.get(j)).log2();
            }
        }
    }
    Ok(total)
}

/// `R'' = Σ_i Σ_j P(x_i) P(y_j|x_i) log2[P(x_i|θ_j) / P_θ(x_i)]` with the E-step channel.
pub fn r_dprime<S: Real>(px: &Distribution<S>, likelihoods: &Channel<S>, py: &Distribution<S>) -> Result<S> {
    px.check_len(likelihoods.ncols())?;
    let (ch, pred) = estep_channel(likelihoods, py)?;
    check_predictive(px, &pred)?;
    let mut total = S::zero();
    for i in 0..ch.nrows() {
        let p = px.get(i);
        if !x_active(p) {
            continue;
        }
        for (j, &c) in ch.row(i).iter().enumerate() {
            if c > S::zero() {
                total += p * c * (likelihoods.matrix()[[j, i]] / pred.get(i)).log2();
            }
        }
    }
    Ok(total)
}

/// `Q = Σ_i Σ_j P(x_i) P(y_j|x_i) log2[P(y_j) P(x_i|θ_j)]` and `F = Q + H(Y)`.
pub fn q_and_f<S: Real>(
    px: &Distribution<S>,
    ch: &Channel<S>,
    likelihoods: &Channel<S>,
    py: &Distribution<S>,
) -> Result<(S, S)> {
    ch.require(Orientation::GivenX)?;
    likelihoods.require(Orientation::GivenY)?;
    px.check_len(ch.nrows())?;
    check_len(ch.ncols(), likelihoods.nrows())?;
    check_len(ch.nrows(), likelihoods.ncols())?;
    py.check_len(ch.ncols())?;
    let mut q = S::zero();
    for i in 0..ch.nrows() {
        let p = px.get(i);
        if !x_active(p) {
            continue;
        }
        for (j, &c) in ch.row(i).iter().enumerate() {
            if c > S::zero() {
                q += p * c * log2_capped(py.get(j) * likelihoods.matrix()[[j, i]]);
            }
        }
    }
    Ok((q, q + py.entropy_bits()))
}

/// E-step diagnostics of a mixture state: everything in [`InfoReport`] except `Q` and `F`.
#[derive(Clone, Debug)]
pub struct EStepDiagnostics<S: Real> {
    pub channel: Channel<S>,
    pub predictive: Distribution<S>,
    pub py_next: Distribution<S>,
    pub g: S,
    pub r: S,
    pub r_dprime: S,
    pub kl_x: S,
    pub kl_y: S,
}

/// Evaluates `G`, `R`, `R''`, `H(P||P_θ)` and `H(P⁺¹_Y||P_Y)` in one pass over one E-step.
pub fn estep_diagnostics<S: Real>(
    px: &Distribution<S>,
    likelihoods: &Channel<S>,
    py: &Distribution<S>,
) -> Result<EStepDiagnostics<S>> {
    px.check_len(likelihoods.ncols())?;
    let (ch, pred) = estep_channel(likelihoods, py)?;
    check_predictive(px, &pred)?;
    let py_next = ch.marginal(px)?;
    let (mut g, mut r, mut rdd) = (S::zero(), S::zero(), S::zero());
    for i in 0..ch.nrows() {
        let p = px.get(i);
        if !x_active(p) {
            continue;
        }
        for (j, &c) in ch.row(i).iter().enumerate() {
            if c > S::zero() {
                let l = likelihoods.matrix()[[j, i]];
                let w = p * c;
                g += w * (l / p).log2();
                r += w * (c / py_next.get(j)).log2();
                rdd += w * (l / pred.get(i)).log2();
            }
        }
    }
    let kl_x = relative_entropy(px, &pred)?;
    let kl_y = relative_entropy(&py_next, py)?;
    Ok(EStepDiagnostics { channel: ch, predictive: pred, py_next, g, r, r_dprime: rdd, kl_x, kl_y })
}
