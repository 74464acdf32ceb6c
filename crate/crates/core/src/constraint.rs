//! Parametric constraint functions: likelihood, truth, similarity and distortion rows.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvbError};
use crate::prob::{check_len, truth_from_likelihood, Distribution, Grid};
use crate::scalar::{fmt17, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Likelihood,
    Truth,
    Similarity,
    Distortion,
}

impl ConstraintKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Likelihood => "likelihood",
            Self::Truth => "truth",
            Self::Similarity => "similarity",
            Self::Distortion => "distortion",
        }
    }
}

/// Shape of a constraint row. Parameters are in grid units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum Form {
    /// `exp(-(x - mu)^2 / (2 sigma^2))`.
    Gaussian { mu: f64, sigma: f64 },
    /// `1 / (1 + exp(-rate (x - center)))`.
    Logistic { rate: f64, center: f64 },
    /// `1 - [1 - exp(-(x - center)^2 / (2 width))]^exponent`.
    RaisedComplement { center: f64, width: f64, exponent: f64 },
    /// Explicit values, one per grid point.
    Tabulated { values: Vec<f64> },
}

impl Form {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Gaussian { .. } => "gaussian",
            Self::Logistic { .. } => "logistic",
            Self::RaisedComplement { .. } => "raised_complement",
            Self::Tabulated { .. } => "tabulated",
        }
    }

    /// Scalar parameters in declaration order (empty for tabulated rows).
    pub fn params(&self) -> Vec<f64> {
        match *self {
            Self::Gaussian { mu, sigma } => vec![mu, sigma],
            Self::Logistic { rate, center } => vec![rate, center],
            Self::RaisedComplement { center, width, exponent } => vec![center, width, exponent],
            Self::Tabulated { .. } => Vec::new(),
        }
    }

    /// Same family with new scalar parameters.
    pub fn with_params(&self, p: &[f64]) -> Result<Self> {
        let need = self.params().len();
        if p.len() != need {
            return Err(SvbError::InvalidParameter(format!(
                "{} takes {need} parameters, got {}",
                self.name(),
                p.len()
            )));
        }
        Ok(match self {
            Self::Gaussian { .. } => Self::Gaussian { mu: p[0], sigma: p[1] },
            Self::Logistic { .. } => Self::Logistic { rate: p[0], center: p[1] },
            Self::RaisedComplement { .. } => Self::RaisedComplement { center: p[0], width: p[1], exponent: p[2] },
            Self::Tabulated { values } => Self::Tabulated { values: values.clone() },
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SvbError::InvalidParameter(msg));
        if self.params().iter().any(|v| !v.is_finite()) {
            return bad(format!("{} parameters must be finite", self.name()));
        }
        match *self {
            Self::Gaussian { sigma, .. } if sigma <= 0.0 => bad(format!("sigma must be > 0, got {sigma}")),
            Self::RaisedComplement { width, .. } if width <= 0.0 => bad(format!("width must be > 0, got {width}")),
            Self::RaisedComplement { exponent, .. } if exponent <= 0.0 => {
                bad(format!("exponent must be > 0, got {exponent}"))
            }
            Self::Tabulated { ref values } if values.iter().any(|v| !v.is_finite()) => {
                bad("tabulated values must be finite".into())
            }
            _ => Ok(()),
        }
    }

    /// Natural log of the shape at `x`. Tabulated forms are handled by the caller.
    fn log_at<S: Real>(&self, x: S) -> S {
        let two = S::lit(2.0);
        match *self {
            Self::Gaussian { mu, sigma } => {
                let (mu, sigma) = (S::lit(mu), S::lit(sigma));
                -(x - mu) * (x - mu) / (two * sigma * sigma)
            }
            Self::Logistic { rate, center } => {
                let z = -S::lit(rate) * (x - S::lit(center));
                -softplus(z)
            }
            Self::RaisedComplement { center, width, exponent } => {
                let c = S::lit(center);
                let lq = -(x - c) * (x - c) / (two * S::lit(width));
                log_raised_complement(lq, S::lit(exponent))
            }
            Self::Tabulated { .. } => unreachable!("tabulated rows have no closed form"),
        }
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus<S: Real>(z: S) -> S {
    z.max(S::zero()) + (-z.abs()).exp().ln_1p()
}

/// `ln(1 - (1 - q)^e)` given `lq = ln q`, accurate for tiny `q` and at `q = 1`.
fn log_raised_complement<S: Real>(lq: S, e: S) -> S {
    if lq < S::lit(-40.0) {
        return e.ln() + lq;
    }
    let q = lq.exp();
    let inner = e * (-q).ln_1p();
    (-inner.exp_m1()).ln()
}

/// A tagged constraint row: kind plus parametric form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub kind: ConstraintKind,
    #[serde(flatten)]
    pub form: Form,
}

/// A constraint realized on a grid.
#[derive(Clone, Debug, PartialEq)]
pub enum Realized<S: Real> {
    Truth(Array1<S>),
    Likelihood(Distribution<S>),
    Distortion(Array1<S>),
}

impl ConstraintSpec {
    pub fn new(kind: ConstraintKind, form: Form) -> Self {
        Self { kind, form }
    }

    pub fn truth(form: Form) -> Self {
        Self::new(ConstraintKind::Truth, form)
    }

    /// Natural-log shape values on the grid: `ln T` for truth and similarity,
    /// unnormalized log weights for likelihoods, `-d` for distortions.
    pub fn log_values<S: Real>(&self, grid: &Grid<S>) -> Result<Array1<S>> {
        self.form.validate()?;
        match &self.form {
            Form::Tabulated { values } => {
                check_len(grid.len(), values.len())?;
                let v: Array1<S> = values.iter().map(|&v| S::lit(v)).collect();
                match self.kind {
                    ConstraintKind::Truth | ConstraintKind::Similarity => {
                        check_unit_interval(&v)?;
                        Ok(v.mapv(|t| t.ln()))
                    }
                    ConstraintKind::Likelihood => {
                        if v.iter().any(|&w| w < S::zero()) {
                            return Err(SvbError::InvalidParameter("likelihood weights must be non-negative".into()));
                        }
                        Ok(v.mapv(|t| t.ln()))
                    }
                    ConstraintKind::Distortion => {
                        if let Some(i) = v.iter().position(|&d| d < S::zero()) {
                            return Err(SvbError::NegativeDistortion { index: i, value: values[i] });
                        }
                        Ok(v.mapv(|d| -d))
                    }
                }
            }
            form => Ok(grid.values().mapv(|x| form.log_at(x))),
        }
    }

    pub fn realize<S: Real>(&self, grid: &Grid<S>) -> Result<Realized<S>> {
        let logs = self.log_values(grid)?;
        Ok(match self.kind {
            ConstraintKind::Truth | ConstraintKind::Similarity => Realized::Truth(logs.mapv(|l| l.exp())),
            ConstraintKind::Likelihood => Realized::Likelihood(Distribution::from_log_weights(logs.view())?),
            ConstraintKind::Distortion => Realized::Distortion(logs.mapv(|l| -l)),
        })
    }

    /// Truth row on the grid; likelihood constraints are converted against `px`.
    pub fn truth_row<S: Real>(&self, grid: &Grid<S>, px: &Distribution<S>) -> Result<Array1<S>> {
        match self.realize(grid)? {
            Realized::Truth(t) => Ok(t),
            Realized::Distortion(d) => crate::prob::truth_from_distortion(d.view()),
            Realized::Likelihood(l) => Ok(truth_from_likelihood(&l, px)?.row),
        }
    }

    /// JSON object with 17-significant-digit numbers.
    pub fn to_json_string(&self) -> String {
        let mut out = format!("{{\"kind\":\"{}\",\"form\":\"{}\"", self.kind.as_str(), self.form.name());
        let field = |out: &mut String, k: &str, v: f64| out.push_str(&format!(",\"{k}\":{}", fmt17(v)));
        match self.form {
            Form::Gaussian { mu, sigma } => {
                field(&mut out, "mu", mu);
                field(&mut out, "sigma", sigma);
            }
            Form::Logistic { rate, center } => {
                field(&mut out, "rate", rate);
                field(&mut out, "center", center);
            }
            Form::RaisedComplement { center, width, exponent } => {
                field(&mut out, "center", center);
                field(&mut out, "width", width);
                field(&mut out, "exponent", exponent);
            }
            Form::Tabulated { ref values } => {
                let items: Vec<String> = values.iter().map(|&v| fmt17(v)).collect();
                out.push_str(&format!(",\"values\":[{}]", items.join(",")));
            }
        }
        out.push('}');
        out
    }
}

fn check_unit_interval<S: Real>(v: &Array1<S>) -> Result<()> {
    if let Some(i) = v.iter().position(|&t| !(t >= S::zero() && t <= S::one())) {
        return Err(SvbError::InvalidTruth(format!("value {} at index {i} outside [0, 1]", v[i])));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid() -> Grid<f64> {
        Grid::integers(0, 100).unwrap()
    }

    #[test]
    fn json_round_trip() {
        let spec: ConstraintSpec =
            serde_json::from_str(r#"{"kind":"truth","form":"logistic","rate":0.8,"center":75.0}"#).unwrap();
        assert_eq!(spec, ConstraintSpec::truth(Form::Logistic { rate: 0.8, center: 75.0 }));
        let text = spec.to_json_string();
        assert_eq!(
            text,
            r#"{"kind":"truth","form":"logistic","rate":8.0000000000000004e-1,"center":7.5000000000000000e1}"#
        );
        let back: ConstraintSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);

        let tab = ConstraintSpec::new(ConstraintKind::Distortion, Form::Tabulated { values: vec![0.0, 0.1, 2.5] });
        let back: ConstraintSpec = serde_json::from_str(&tab.to_json_string()).unwrap();
        assert_eq!(back, tab);
    }

    #[test]
    fn raised_complement_peak_and_tail() {
        let spec = ConstraintSpec::truth(Form::RaisedComplement { center: 20.0, width: 25.0, exponent: 3.0 });
        let t = spec.truth_row(&grid(), &Distribution::uniform(101)).unwrap();
        assert_eq!(t[20], 1.0);
        for x in [0usize, 15, 30, 60, 100] {
            let q = (-((x as f64) - 20.0).powi(2) / 50.0).exp();
            let direct = 1.0 - (1.0 - q).powi(3);
            let tol = 1e-12 * direct.max(1e-300);
            assert!((t[x] - direct).abs() <= tol.max(1e-15), "x={x} {} vs {direct}", t[x]);
        }
        // The log form stays finite where the linear form underflows.
        let l = spec.log_values(&Grid::<f64>::new(vec![20.0, 400.0]).unwrap()).unwrap();
        assert!(l[1].is_finite());
        assert_abs_diff_eq!(l[1], 3f64.ln() - 380.0 * 380.0 / 50.0, epsilon = 1e-9);
    }

    #[test]
    fn logistic_midpoint_and_tail() {
        let spec = ConstraintSpec::truth(Form::Logistic { rate: 0.8, center: 75.0 });
        let t = spec.truth_row(&grid(), &Distribution::uniform(101)).unwrap();
        assert_eq!(t[75], 0.5);
        let oracle = 1.0 / (1.0 + 20f64.exp());
        assert_abs_diff_eq!(t[50], oracle, epsilon = 1e-22);
        assert!((t[50] - 2.06e-9).abs() < 1e-11);
    }

    #[test]
    fn distortion_and_likelihood_kinds() {
        let g = grid();
        let d = ConstraintSpec::new(ConstraintKind::Distortion, Form::Gaussian { mu: 40.0, sigma: 6.0 });
        let Realized::Distortion(dv) = d.realize(&g).unwrap() else { panic!() };
        assert_abs_diff_eq!(dv[46], 0.5, epsilon = 1e-15);
        let t = d.truth_row(&g, &Distribution::uniform(101)).unwrap();
        assert_abs_diff_eq!(t, crate::prob::gaussian_truth(&g, 40.0, 6.0), epsilon = 1e-15);

        let l = ConstraintSpec::new(ConstraintKind::Likelihood, Form::Gaussian { mu: 35.0, sigma: 8.0 });
        let Realized::Likelihood(p) = l.realize(&g).unwrap() else { panic!() };
        assert_abs_diff_eq!(p.probs().sum(), 1.0, epsilon = 1e-12);
        let t = l.truth_row(&g, &Distribution::uniform(101)).unwrap();
        assert_eq!(t[35], 1.0);
    }

    #[test]
    fn invalid_parameters_rejected() {
        let g = grid();
        let bad = ConstraintSpec::truth(Form::Gaussian { mu: 0.0, sigma: 0.0 });
        assert!(bad.log_values(&g).is_err());
        let short = ConstraintSpec::truth(Form::Tabulated { values: vec![0.5; 3] });
        assert!(matches!(short.log_values(&g), Err(SvbError::GridMismatch { .. })));
        let out_of_range = ConstraintSpec::truth(Form::Tabulated { values: vec![1.5, 0.5] });
        assert!(out_of_range.log_values(&Grid::<f64>::integers(0, 1).unwrap()).is_err());
        let neg = ConstraintSpec::new(ConstraintKind::Distortion, Form::Tabulated { values: vec![-1.0, 0.5] });
        assert!(matches!(
            neg.log_values(&Grid::<f64>::integers(0, 1).unwrap()),
            Err(SvbError::NegativeDistortion { index: 0, .. })
        ));
    }

    #[test]
    fn with_params_round_trip() {
        let f = Form::RaisedComplement { center: 1.0, width: 2.0, exponent: 3.0 };
        assert_eq!(f.with_params(&f.params()).unwrap(), f);
        assert!(f.with_params(&[1.0]).is_err());
    }
}
