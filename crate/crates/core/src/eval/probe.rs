//! Linear probes: multinomial and independent-binary logistic regression
//! on standardized features, fit by full-batch gradient descent.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

const EPOCHS: usize = 400;
const STEP: f64 = 0.5;
const L2: f64 = 1e-3;

#[derive(Debug, Clone)]
struct Standardizer {
    mean: Array1<f64>,
    inv_std: Array1<f64>,
}

impl Standardizer {
    fn fit(x: &ArrayView2<f64>) -> Self {
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let var = x.var_axis(Axis(0), 0.0);
        let inv_std = var.mapv(|v| if v > 1e-12 { 1.0 / v.sqrt() } else { 0.0 });
        Standardizer { mean, inv_std }
    }

    fn apply(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        (x - &self.mean) * &self.inv_std
    }
}

fn check_xy(x: &ArrayView2<f64>, n: usize) -> Result<()> {
    if x.nrows() == 0 || x.nrows() != n {
        return Err(Error::shape(format!(
            "probe needs one label per row: {} rows, {n} labels",
            x.nrows()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("probe features must be finite"));
    }
    Ok(())
}

/// Softmax classifier over `n_classes` labels.
#[derive(Debug, Clone)]
pub struct SoftmaxProbe {
    norm: Standardizer,
    w: Array2<f64>,
    b: Array1<f64>,
}

impl SoftmaxProbe {
    pub fn fit(x: &ArrayView2<f64>, y: &[usize], n_classes: usize) -> Result<Self> {
        check_xy(x, y.len())?;
        if n_classes == 0 || y.iter().any(|&c| c >= n_classes) {
            return Err(Error::invalid("probe labels out of range"));
        }
        let norm = Standardizer::fit(x);
        let xs = norm.apply(x);
        let (n, d) = xs.dim();
        let mut w = Array2::<f64>::zeros((d, n_classes));
        let mut b = Array1::<f64>::zeros(n_classes);
        for _ in 0..EPOCHS {
            let mut p = softmax_rows(xs.dot(&w) + &b);
            for (i, &c) in y.iter().enumerate() {
                p[[i, c]] -= 1.0;
            }
            p /= n as f64;
            let gw = xs.t().dot(&p) + &w * L2;
            let gb = p.sum_axis(Axis(0));
            w.scaled_add(-STEP, &gw);
            b.scaled_add(-STEP, &gb);
        }
        Ok(SoftmaxProbe { norm, w, b })
    }

    /// `[N x n_classes]` class posteriors.
    pub fn posteriors(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        softmax_rows(self.norm.apply(x).dot(&self.w) + &self.b)
    }

    pub fn predict(&self, x: &ArrayView2<f64>) -> Vec<usize> {
        self.posteriors(x)
            .rows()
            .into_iter()
            .map(|r| argmax(r.iter().copied()))
            .collect()
    }

    pub fn accuracy(&self, x: &ArrayView2<f64>, y: &[usize]) -> Result<f64> {
        check_xy(x, y.len())?;
        let hits = self.predict(x).iter().zip(y).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / y.len() as f64)
    }
}

/// One independent logistic unit per label column.
#[derive(Debug, Clone)]
pub struct PresenceProbe {
    norm: Standardizer,
    w: Array2<f64>,
    b: Array1<f64>,
}

impl PresenceProbe {
    pub fn fit(x: &ArrayView2<f64>, y: &Array2<bool>) -> Result<Self> {
        check_xy(x, y.nrows())?;
        let norm = Standardizer::fit(x);
        let xs = norm.apply(x);
        let (n, d) = xs.dim();
        let k = y.ncols();
        let t = y.mapv(|v| if v { 1.0 } else { 0.0 });
        let mut w = Array2::<f64>::zeros((d, k));
        // Start at the label base rates.
        let mut b = t
            .mean_axis(Axis(0))
            .expect("non-empty")
            .mapv(|p: f64| logit(p.clamp(1e-3, 1.0 - 1e-3)));
        for _ in 0..EPOCHS {
            let mut p = (xs.dot(&w) + &b).mapv(sigmoid);
            p -= &t;
            p /= n as f64;
            let gw = xs.t().dot(&p) + &w * L2;
            let gb = p.sum_axis(Axis(0));
            w.scaled_add(-STEP, &gw);
            b.scaled_add(-STEP, &gb);
        }
        Ok(PresenceProbe { norm, w, b })
    }

    pub fn predict(&self, x: &ArrayView2<f64>) -> Array2<bool> {
        (self.norm.apply(x).dot(&self.w) + &self.b).mapv(|z| z > 0.0)
    }

    /// Fraction of (row, label) entries predicted correctly.
    pub fn accuracy(&self, x: &ArrayView2<f64>, y: &Array2<bool>) -> Result<f64> {
        check_xy(x, y.nrows())?;
        let p = self.predict(x);
        if p.ncols() != y.ncols() {
            return Err(Error::shape("label width differs from the fitted probe"));
        }
        let hits = p.iter().zip(y.iter()).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / y.len() as f64)
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn softmax_rows(mut z: Array2<f64>) -> Array2<f64> {
    for mut row in z.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    z
}

pub(crate) fn argmax(it: impl Iterator<Item = f64>) -> usize {
    it.enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}
