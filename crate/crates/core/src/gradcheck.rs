//! Central finite differences, used as an independent oracle for
//! [`Tape::backward`](crate::tape::Tape::backward).

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// A named, ordered collection of parameter tensors.
pub trait ParamSet {
    fn tensors(&self) -> Vec<(String, &Matrix)>;
    fn tensors_mut(&mut self) -> Vec<&mut Matrix>;

    fn scalar_count(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }
}

impl ParamSet for Matrix {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        alloc::vec![(String::from("x"), self)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        alloc::vec![self]
    }
}

impl ParamSet for Vec<Matrix> {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        self.iter()
            .enumerate()
            .map(|(i, m)| (alloc::format!("{i}"), m))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.iter_mut().collect()
    }
}

/// `(f(θ+εe) − f(θ−εe)) / 2ε` for every scalar of `params`. The result has the
/// same structure as `params`.
pub fn finite_diff_grad<S, F>(mut f: F, params: &S, epsilon: f64) -> Result<S>
where
    S: ParamSet + Clone,
    F: FnMut(&S) -> Result<f64>,
{
    if !(epsilon > 0.0) {
        return Err(Error::contract("finite-difference epsilon must be positive"));
    }
    let mut work = params.clone();
    let mut grad = params.clone();
    let n_tensors = params.tensors().len();
    for k in 0..n_tensors {
        let len = params.tensors()[k].1.len();
        for j in 0..len {
            let original = work.tensors_mut()[k].data()[j];
            work.tensors_mut()[k].data_mut()[j] = original + epsilon;
            let plus = f(&work)?;
            work.tensors_mut()[k].data_mut()[j] = original - epsilon;
            let minus = f(&work)?;
            work.tensors_mut()[k].data_mut()[j] = original;
            grad.tensors_mut()[k].data_mut()[j] = (plus - minus) / (2.0 * epsilon);
        }
    }
    Ok(grad)
}

/// `|a − b| / max(|a|, |b|, 1e-8)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorError {
    pub name: String,
    pub max_relative_error: f64,
    pub max_abs_error: f64,
    /// Analytic and numeric values of the element with the largest relative
    /// error.
    pub worst: (f64, f64),
}

/// Per-tensor maximum relative error between two gradient sets of identical
/// structure.
pub fn compare<S: ParamSet>(analytic: &S, numeric: &S) -> Result<Vec<TensorError>> {
    let a = analytic.tensors();
    let n = numeric.tensors();
    if a.len() != n.len() {
        return Err(Error::contract("gradient sets differ in tensor count"));
    }
    a.iter()
        .zip(&n)
        .map(|((name, ga), (_, gn))| {
            if ga.shape() != gn.shape() {
                return Err(Error::dim("compare", ga.shape(), gn.shape()));
            }
            let mut out = TensorError {
                name: name.clone(),
                max_relative_error: 0.0,
                max_abs_error: 0.0,
                worst: (0.0, 0.0),
            };
            for (&x, &y) in ga.data().iter().zip(gn.data()) {
                let rel = relative_error(x, y);
                if rel > out.max_relative_error {
                    out.max_relative_error = rel;
                    out.worst = (x, y);
                }
                out.max_abs_error = out.max_abs_error.max((x - y).abs());
            }
            Ok(out)
        })
        .collect()
}
