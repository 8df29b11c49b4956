//! Dense f64 building blocks shared by the auction and CommNet models.
//!
//! Nothing here allocates a computation graph. Every model in this crate
//! derives its own gradients by hand and accumulates them into a
//! [`ParamStore`], which [`sgd_step`] then consumes.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("{op}: dimension mismatch (expected {expected}, found {found})")]
    DimensionMismatch {
        op: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("softmax temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("non-finite gradient in parameter `{name}` at index {index}")]
    NonFiniteGradient { name: String, index: usize },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("parameter `{0}` already registered")]
    DuplicateParam(String),
}

pub type Result<T> = std::result::Result<T, NumError>;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(NumError::DimensionMismatch {
                op: "Matrix::from_vec",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(NumError::DimensionMismatch {
                    op: "Matrix::from_rows",
                    expected: cols,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// `W x + b`.
pub fn affine_eval(w: &Matrix, x: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if w.cols != x.len() {
        return Err(NumError::DimensionMismatch {
            op: "affine_eval (columns vs input)",
            expected: w.cols,
            found: x.len(),
        });
    }
    if w.rows != b.len() {
        return Err(NumError::DimensionMismatch {
            op: "affine_eval (rows vs bias)",
            expected: w.rows,
            found: b.len(),
        });
    }
    Ok(matvec_raw(&w.data, w.rows, w.cols, x, Some(b)))
}

/// Unchecked row-major mat-vec used on hot paths once shapes are known.
pub(crate) fn matvec_raw(
    w: &[f64],
    rows: usize,
    cols: usize,
    x: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    (0..rows)
        .map(|r| {
            let row = &w[r * cols..(r + 1) * cols];
            let dot: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            dot + bias.map_or(0.0, |b| b[r])
        })
        .collect()
}

/// `y += W^T x` for a row-major `W`.
pub(crate) fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), rows);
    debug_assert_eq!(y.len(), cols);
    for r in 0..rows {
        let xr = x[r];
        if xr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (yc, wc) in y.iter_mut().zip(row) {
            *yc += wc * xr;
        }
    }
}

/// `G += a b^T` for a row-major `G` of shape `len(a) x len(b)`.
pub(crate) fn outer_acc(g: &mut [f64], a: &[f64], b: &[f64]) {
    debug_assert_eq!(g.len(), a.len() * b.len());
    let cols = b.len();
    for (r, ar) in a.iter().enumerate() {
        if *ar == 0.0 {
            continue;
        }
        for (gc, bc) in g[r * cols..(r + 1) * cols].iter_mut().zip(b) {
            *gc += ar * bc;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    #[default]
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply_scalar(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// Derivative expressed through the activation's own output `y`.
    /// ReLU uses the subgradient 0 at the origin.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

pub fn activation(kind: Activation, x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| kind.apply_scalar(v)).collect()
}

/// Softmax of `k * x`, shifted by the maximum so large inputs cannot overflow.
pub fn softmax_temp(x: &[f64], k: f64) -> Result<Vec<f64>> {
    if !(k > 0.0) {
        return Err(NumError::NonPositiveTemperature(k));
    }
    if x.is_empty() {
        return Err(NumError::Empty("softmax_temp"));
    }
    Ok(softmax_unchecked(x, k))
}

pub(crate) fn softmax_unchecked(x: &[f64], k: f64) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|&v| (k * (v - max)).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

/// Index of the first maximum. Ties resolve to the lowest index.
pub fn argmax_first(x: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in x.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Which affine piece produced a max-of-min (or min-of-max) value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActivePiece {
    pub group: usize,
    pub unit: usize,
}

/// `max_k min_j (w[k][j] * x + theta[k][j])` over `groups x units` row-major
/// coefficients, together with the attaining piece (first index on ties).
pub fn group_max_of_min(
    x: f64,
    weights: &[f64],
    biases: &[f64],
    groups: usize,
    units: usize,
) -> Result<(f64, ActivePiece)> {
    check_grouped("group_max_of_min", weights, biases, groups, units)?;
    Ok(max_of_min_unchecked(x, weights, biases, groups, units))
}

pub(crate) fn max_of_min_unchecked(
    x: f64,
    weights: &[f64],
    biases: &[f64],
    groups: usize,
    units: usize,
) -> (f64, ActivePiece) {
    let mut best = f64::NEG_INFINITY;
    let mut piece = ActivePiece { group: 0, unit: 0 };
    for g in 0..groups {
        let base = g * units;
        let mut low = f64::INFINITY;
        let mut low_unit = 0;
        for u in 0..units {
            let v = weights[base + u] * x + biases[base + u];
            if v < low {
                low = v;
                low_unit = u;
            }
        }
        if low > best {
            best = low;
            piece = ActivePiece {
                group: g,
                unit: low_unit,
            };
        }
    }
    (best, piece)
}

/// `min_k max_j ((y - theta[k][j]) / w[k][j])`: the exact inverse of
/// [`group_max_of_min`] when every weight is positive.
pub fn group_min_of_max_inverse(
    y: f64,
    weights: &[f64],
    biases: &[f64],
    groups: usize,
    units: usize,
) -> Result<(f64, ActivePiece)> {
    check_grouped("group_min_of_max_inverse", weights, biases, groups, units)?;
    Ok(min_of_max_inverse_unchecked(y, weights, biases, groups, units))
}

pub(crate) fn min_of_max_inverse_unchecked(
    y: f64,
    weights: &[f64],
    biases: &[f64],
    groups: usize,
    units: usize,
) -> (f64, ActivePiece) {
    let mut best = f64::INFINITY;
    let mut piece = ActivePiece { group: 0, unit: 0 };
    for g in 0..groups {
        let base = g * units;
        let mut high = f64::NEG_INFINITY;
        let mut high_unit = 0;
        for u in 0..units {
            let v = (y - biases[base + u]) / weights[base + u];
            if v > high {
                high = v;
                high_unit = u;
            }
        }
        if high < best {
            best = high;
            piece = ActivePiece {
                group: g,
                unit: high_unit,
            };
        }
    }
    (best, piece)
}

fn check_grouped(
    op: &'static str,
    weights: &[f64],
    biases: &[f64],
    groups: usize,
    units: usize,
) -> Result<()> {
    if groups == 0 || units == 0 {
        return Err(NumError::Empty(op));
    }
    for len in [weights.len(), biases.len()] {
        if len != groups * units {
            return Err(NumError::DimensionMismatch {
                op,
                expected: groups * units,
                found: len,
            });
        }
    }
    Ok(())
}

/// One named tensor plus its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

/// Insertion-ordered collection of named parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter and returns its slot index.
    pub fn insert(&mut self, name: &str, shape: Vec<usize>, values: Vec<f64>) -> Result<usize> {
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(NumError::DimensionMismatch {
                op: "ParamStore::insert",
                expected,
                found: values.len(),
            });
        }
        if self.index_of(name).is_some() {
            return Err(NumError::DuplicateParam(name.to_owned()));
        }
        self.params.push(Param {
            name: name.to_owned(),
            shape,
            grad: vec![0.0; values.len()],
            values,
        });
        Ok(self.params.len() - 1)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| NumError::UnknownParam(name.to_owned()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| NumError::UnknownParam(name.to_owned()))
    }

    pub fn slot(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn slot_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.values.iter().copied()).collect()
    }

    pub fn flat_grad(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.grad.iter().copied()).collect()
    }

    pub fn set_flat_values(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.numel() {
            return Err(NumError::DimensionMismatch {
                op: "ParamStore::set_flat_values",
                expected: self.numel(),
                found: flat.len(),
            });
        }
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.values.len();
            p.values.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn scalar_mut(&mut self, mut flat_idx: usize) -> &mut f64 {
        for p in &mut self.params {
            if flat_idx < p.values.len() {
                return &mut p.values[flat_idx];
            }
            flat_idx -= p.values.len();
        }
        panic!("flat parameter index out of range");
    }

    fn first_non_finite_grad(&self) -> Option<(&str, usize)> {
        self.params.iter().find_map(|p| {
            p.grad
                .iter()
                .position(|g| !g.is_finite())
                .map(|i| (p.name.as_str(), i))
        })
    }
}

/// Plain SGD: `p <- p - lr * grad`, then clears gradients. A non-finite
/// gradient anywhere leaves every parameter untouched.
pub fn sgd_step(store: &mut ParamStore, lr: f64) -> Result<()> {
    if let Some((name, index)) = store.first_non_finite_grad() {
        return Err(NumError::NonFiniteGradient {
            name: name.to_owned(),
            index,
        });
    }
    for p in &mut store.params {
        for (v, g) in p.values.iter_mut().zip(p.grad.iter_mut()) {
            *v -= lr * *g;
            *g = 0.0;
        }
    }
    Ok(())
}

pub const DEFAULT_FD_EPS: f64 = 1e-5;

/// Central-difference gradient of `f` over every scalar in `store`, in
/// flat insertion order. `store` is restored before returning.
pub fn finite_diff_grad<F>(store: &mut ParamStore, eps: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&ParamStore) -> f64,
{
    let n = store.numel();
    let mut grad = Vec::with_capacity(n);
    for i in 0..n {
        let orig = *store.scalar_mut(i);
        *store.scalar_mut(i) = orig + eps;
        let up = f(store);
        *store.scalar_mut(i) = orig - eps;
        let down = f(store);
        *store.scalar_mut(i) = orig;
        grad.push((up - down) / (2.0 * eps));
    }
    grad
}

/// `||a - b|| / max(||a||, ||b||)`, or 0 when both vectors vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_identity_scalar_and_sum() {
        let out = affine_eval(&Matrix::identity(2), &[1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert_eq!(out, vec![1.0, 2.0]);
        let w = Matrix::from_rows(&[vec![2.0]]).unwrap();
        assert_eq!(affine_eval(&w, &[0.75], &[-1.0]).unwrap(), vec![0.5]);
        let w = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert_eq!(affine_eval(&w, &[3.0, 4.0], &[0.0]).unwrap(), vec![7.0]);
    }

    #[test]
    fn affine_rejects_mismatch() {
        let w = Matrix::identity(2);
        assert!(matches!(
            affine_eval(&w, &[1.0], &[0.0, 0.0]),
            Err(NumError::DimensionMismatch { .. })
        ));
        assert!(affine_eval(&w, &[1.0, 2.0], &[0.0]).is_err());
    }

    #[test]
    fn activations() {
        assert_eq!(activation(Activation::Relu, &[-0.5, 0.5]), vec![0.0, 0.5]);
        assert_eq!(activation(Activation::Tanh, &[0.0]), vec![0.0]);
        assert_eq!(activation(Activation::Sigmoid, &[0.0]), vec![0.5]);
        let big = activation(Activation::Sigmoid, &[-800.0, 800.0]);
        assert!(big.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_temp(&[0.0, 0.0, 0.0], 3.7).unwrap();
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let e = std::f64::consts::E;
        let p = softmax_temp(&[1.0, 0.0], 1.0).unwrap();
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        let p = softmax_temp(&[1.0, 0.0], 1000.0).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] < 1e-300);
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        assert_eq!(
            softmax_temp(&[1.0], 0.0),
            Err(NumError::NonPositiveTemperature(0.0))
        );
        assert!(softmax_temp(&[1.0], -2.0).is_err());
        assert!(softmax_temp(&[], 1.0).is_err());
    }

    #[test]
    fn max_of_min_examples() {
        let (v, _) = group_max_of_min(0.3, &[1.0], &[0.0], 1, 1).unwrap();
        assert_eq!(v, 0.3);
        // groups {2x - 1} and {x}
        let w = [2.0, 1.0];
        let b = [-1.0, 0.0];
        let (v, piece) = group_max_of_min(0.4, &w, &b, 2, 1).unwrap();
        assert!((v - 0.4).abs() < 1e-15);
        assert_eq!(piece.group, 1);
        let (v, piece) = group_max_of_min(1.5, &w, &b, 2, 1).unwrap();
        assert_eq!(v, 2.0);
        assert_eq!(piece.group, 0);
        assert!(group_max_of_min(1.0, &[], &[], 0, 1).is_err());
    }

    #[test]
    fn max_of_min_tie_takes_first_index() {
        let (_, piece) = group_max_of_min(1.0, &[1.0, 1.0], &[0.0, 0.0], 2, 1).unwrap();
        assert_eq!(piece, ActivePiece { group: 0, unit: 0 });
        let (_, piece) = group_max_of_min(1.0, &[1.0, 1.0], &[0.0, 0.0], 1, 2).unwrap();
        assert_eq!(piece, ActivePiece { group: 0, unit: 0 });
    }

    #[test]
    fn sgd_examples() {
        let mut store = ParamStore::new();
        store.insert("p", vec![1], vec![1.0]).unwrap();
        store.get_mut("p").unwrap().grad[0] = 2.0;
        sgd_step(&mut store, 0.1).unwrap();
        assert!((store.get("p").unwrap().values[0] - 0.8).abs() < 1e-15);
        assert_eq!(store.get("p").unwrap().grad[0], 0.0);

        sgd_step(&mut store, 0.1).unwrap();
        assert!((store.get("p").unwrap().values[0] - 0.8).abs() < 1e-15);

        store.get_mut("p").unwrap().grad[0] = f64::NAN;
        let before = store.flat_values();
        assert!(matches!(
            sgd_step(&mut store, 0.1),
            Err(NumError::NonFiniteGradient { .. })
        ));
        assert_eq!(store.flat_values(), before);
    }

    #[test]
    fn param_store_rejects_duplicates_and_bad_shapes() {
        let mut store = ParamStore::new();
        store.insert("a", vec![2, 2], vec![0.0; 4]).unwrap();
        assert!(store.insert("a", vec![1], vec![0.0]).is_err());
        assert!(store.insert("b", vec![3], vec![0.0; 2]).is_err());
        assert!(store.get("missing").is_err());
    }

    #[test]
    fn finite_diff_examples() {
        let mut store = ParamStore::new();
        store.insert("p", vec![1], vec![3.0]).unwrap();
        let g = finite_diff_grad(&mut store, DEFAULT_FD_EPS, |s| s.slot(0).values[0].powi(2));
        assert!((g[0] - 6.0).abs() < 1e-6);
        assert_eq!(store.slot(0).values[0], 3.0);

        store.slot_mut(0).values[0] = 1.0;
        let g = finite_diff_grad(&mut store, DEFAULT_FD_EPS, |s| s.slot(0).values[0].max(0.0));
        assert!((g[0] - 1.0).abs() < 1e-9);
    }
}
