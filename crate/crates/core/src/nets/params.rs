//! Flat parameter vectors with named, shaped slots.

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Init {
    Zeros,
    Uniform(f64),
    Normal(f64),
}

/// A `[rows x cols]` region of a flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn mat<'a, F: Scalar>(&self, p: &'a [F]) -> ArrayView2<'a, F> {
        ArrayView2::from_shape((self.rows, self.cols), &p[self.range()]).expect("slot shape")
    }

    pub fn mat_mut<'a, F: Scalar>(&self, p: &'a mut [F]) -> ArrayViewMut2<'a, F> {
        ArrayViewMut2::from_shape((self.rows, self.cols), &mut p[self.range()]).expect("slot shape")
    }

    pub fn vec<'a, F: Scalar>(&self, p: &'a [F]) -> ArrayView1<'a, F> {
        ArrayView1::from(&p[self.range()])
    }

    pub fn vec_mut<'a, F: Scalar>(&self, p: &'a mut [F]) -> ArrayViewMut1<'a, F> {
        ArrayViewMut1::from(&mut p[self.range()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub init: Init,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Registry of every tensor in a model, in allocation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Layout {
    tensors: Vec<TensorInfo>,
    len: usize,
    prefix: Vec<String>,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    pub fn push_scope(&mut self, name: &str) {
        self.prefix.push(name.to_string());
    }

    pub fn pop_scope(&mut self) {
        self.prefix.pop();
    }

    fn full_name(&self, name: &str) -> String {
        let mut s = self.prefix.join(".");
        if !s.is_empty() {
            s.push('.');
        }
        s.push_str(name);
        s
    }

    pub fn matrix(&mut self, name: &str, rows: usize, cols: usize, init: Init) -> Slot {
        self.add(name, vec![rows, cols], rows, cols, init)
    }

    pub fn vector(&mut self, name: &str, n: usize, init: Init) -> Slot {
        self.add(name, vec![n], 1, n, init)
    }

    fn add(&mut self, name: &str, shape: Vec<usize>, rows: usize, cols: usize, init: Init) -> Slot {
        let slot = Slot {
            offset: self.len,
            rows,
            cols,
        };
        self.tensors.push(TensorInfo {
            name: self.full_name(name),
            shape,
            offset: self.len,
            init,
        });
        self.len += rows * cols;
        slot
    }

    /// Draws initial values for every tensor from `rng`, in allocation order.
    pub fn init<F: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<F> {
        use rand_distr::{Distribution, StandardNormal};
        let mut p = vec![F::zero(); self.len];
        for t in &self.tensors {
            let dst = &mut p[t.offset..t.offset + t.len()];
            match t.init {
                Init::Zeros => {}
                Init::Uniform(a) => {
                    for v in dst {
                        *v = F::of(rng.random_range(-a..=a));
                    }
                }
                Init::Normal(s) => {
                    for v in dst {
                        let x: f64 = StandardNormal.sample(rng);
                        *v = F::of(x * s);
                    }
                }
            }
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn slots_tile_the_vector() {
        let mut l = Layout::new();
        l.push_scope("enc");
        let a = l.matrix("w", 3, 4, Init::Uniform(0.1));
        let b = l.vector("b", 4, Init::Zeros);
        l.pop_scope();
        assert_eq!(l.len(), 16);
        assert_eq!(b.offset, a.len());
        assert_eq!(l.tensors()[0].name, "enc.w");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let p: Vec<f64> = l.init(&mut rng);
        assert!(b.vec(&p).iter().all(|&v| v == 0.0));
        assert!(a.mat(&p).iter().all(|&v| v.abs() <= 0.1));
        assert!(a.mat(&p).iter().any(|&v| v != 0.0));
    }
}
