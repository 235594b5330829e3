//! Layers over packed variable-length sequences.
//!
//! A batch is a `[N x C]` matrix holding every frame of every sequence back to
//! back, plus the per-sequence lengths. No frame is ever padding, so
//! per-sequence results are independent of what else shares the batch.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::params::{Init, Layout, Slot};
use super::Scalar;

pub fn offsets(lens: &[usize]) -> Vec<usize> {
    let mut o = Vec::with_capacity(lens.len() + 1);
    o.push(0);
    for &l in lens {
        o.push(o.last().unwrap() + l);
    }
    o
}

/// `out += a . b` (or `a^T . b` etc. via views).
fn gemm_acc<F: Scalar>(a: &ArrayView2<F>, b: &ArrayView2<F>, out: &mut ndarray::ArrayViewMut2<F>) {
    general_mat_mul(F::one(), a, b, F::one(), out);
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Slot,
    pub b: Slot,
}

impl Linear {
    pub fn new(l: &mut Layout, name: &str, n_in: usize, n_out: usize) -> Self {
        let bound = 1.0 / (n_in.max(1) as f64).sqrt();
        l.push_scope(name);
        let w = l.matrix("weight", n_in, n_out, Init::Uniform(bound));
        let b = l.vector("bias", n_out, Init::Uniform(bound));
        l.pop_scope();
        Linear { w, b }
    }

    pub fn n_out(&self) -> usize {
        self.w.cols
    }

    pub fn forward<F: Scalar>(&self, p: &[F], x: &ArrayView2<F>) -> Array2<F> {
        let mut y = x.dot(&self.w.mat(p));
        y += &self.b.vec(p);
        y
    }

    /// Accumulates parameter gradients into `g`; returns `dL/dx` if asked.
    pub fn backward<F: Scalar>(
        &self,
        p: &[F],
        x: &ArrayView2<F>,
        dy: &ArrayView2<F>,
        g: &mut [F],
        need_dx: bool,
    ) -> Option<Array2<F>> {
        gemm_acc(&x.t(), dy, &mut self.w.mat_mut(g));
        let mut gb = self.b.vec_mut(g);
        gb += &dy.sum_axis(Axis(0));
        need_dx.then(|| dy.dot(&self.w.mat(p).t()))
    }
}

/// Same-length 1-D convolution with zero padding at each sequence's edges,
/// followed by ReLU.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub kernel: usize,
    pub n_in: usize,
    pub w: Slot,
    pub b: Slot,
}

pub struct ConvCache<F> {
    cols: Array2<F>,
    pub y: Array2<F>,
}

impl Conv1d {
    pub fn new(l: &mut Layout, name: &str, n_in: usize, n_out: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "odd kernel");
        let bound = 1.0 / ((n_in * kernel).max(1) as f64).sqrt();
        l.push_scope(name);
        let w = l.matrix("weight", kernel * n_in, n_out, Init::Uniform(bound));
        let b = l.vector("bias", n_out, Init::Uniform(bound));
        l.pop_scope();
        Conv1d { kernel, n_in, w, b }
    }

    fn im2col<F: Scalar>(&self, x: &ArrayView2<F>, lens: &[usize]) -> Array2<F> {
        let (k, c) = (self.kernel, self.n_in);
        let half = k / 2;
        let mut cols = Array2::zeros((x.nrows(), k * c));
        let off = offsets(lens);
        for (s, &len) in lens.iter().enumerate() {
            let base = off[s];
            for t in 0..len {
                let mut row = cols.row_mut(base + t);
                for j in 0..k {
                    let src = t as isize + j as isize - half as isize;
                    if src >= 0 && (src as usize) < len {
                        row.slice_mut(s![j * c..(j + 1) * c])
                            .assign(&x.row(base + src as usize));
                    }
                }
            }
        }
        cols
    }

    fn col2im<F: Scalar>(&self, dcols: &Array2<F>, lens: &[usize]) -> Array2<F> {
        let (k, c) = (self.kernel, self.n_in);
        let half = k / 2;
        let mut dx = Array2::zeros((dcols.nrows(), c));
        let off = offsets(lens);
        for (s, &len) in lens.iter().enumerate() {
            let base = off[s];
            for t in 0..len {
                let row = dcols.row(base + t);
                for j in 0..k {
                    let src = t as isize + j as isize - half as isize;
                    if src >= 0 && (src as usize) < len {
                        let mut d = dx.row_mut(base + src as usize);
                        d += &row.slice(s![j * c..(j + 1) * c]);
                    }
                }
            }
        }
        dx
    }

    pub fn forward<F: Scalar>(&self, p: &[F], x: &ArrayView2<F>, lens: &[usize]) -> ConvCache<F> {
        let cols = self.im2col(x, lens);
        let mut y = cols.dot(&self.w.mat(p));
        y += &self.b.vec(p);
        y.mapv_inplace(|v| v.max(F::zero()));
        ConvCache { cols, y }
    }

    pub fn backward<F: Scalar>(
        &self,
        p: &[F],
        cache: &ConvCache<F>,
        dy: &ArrayView2<F>,
        lens: &[usize],
        g: &mut [F],
        need_dx: bool,
    ) -> Option<Array2<F>> {
        let mut dpre = dy.to_owned();
        ndarray::Zip::from(&mut dpre)
            .and(&cache.y)
            .for_each(|d, &y| {
                if y <= F::zero() {
                    *d = F::zero();
                }
            });
        gemm_acc(&cache.cols.t(), &dpre.view(), &mut self.w.mat_mut(g));
        let mut gb = self.b.vec_mut(g);
        gb += &dpre.sum_axis(Axis(0));
        need_dx.then(|| self.col2im(&dpre.dot(&self.w.mat(p).t()), lens))
    }
}

/// One direction of a GRU with PyTorch's gate equations.
#[derive(Debug, Clone)]
pub struct Gru {
    pub hidden: usize,
    pub reverse: bool,
    pub wi: Slot,
    pub bi: Slot,
    pub wh: Slot,
    pub bh: Slot,
}

pub struct GruCache<F> {
    /// `[N x 3H]` post-activation r | z | n.
    gates: Array2<F>,
    /// `[N x H]` W_hn h_prev + b_hn.
    hn: Array2<F>,
    pub h: Array2<F>,
}

/// Frame indices visited at each time step, with the previous frame of each.
struct Schedule {
    steps: Vec<(Vec<usize>, Vec<usize>)>,
}

impl Schedule {
    fn new(lens: &[usize], reverse: bool) -> Self {
        let off = offsets(lens);
        let max = lens.iter().copied().max().unwrap_or(0);
        let steps = (0..max)
            .map(|t| {
                let mut cur = Vec::new();
                let mut prev = Vec::new();
                for (s, &len) in lens.iter().enumerate() {
                    if t < len {
                        let at = |i: usize| {
                            if reverse {
                                off[s] + len - 1 - i
                            } else {
                                off[s] + i
                            }
                        };
                        cur.push(at(t));
                        if t > 0 {
                            prev.push(at(t - 1));
                        }
                    }
                }
                (cur, prev)
            })
            .collect();
        Schedule { steps }
    }
}

fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

fn gather<F: Scalar>(m: &Array2<F>, rows: &[usize]) -> Array2<F> {
    m.select(Axis(0), rows)
}

impl Gru {
    pub fn new(l: &mut Layout, name: &str, n_in: usize, hidden: usize, reverse: bool) -> Self {
        let bound = 1.0 / (hidden.max(1) as f64).sqrt();
        l.push_scope(name);
        let wi = l.matrix("weight_ih", n_in, 3 * hidden, Init::Uniform(bound));
        let bi = l.vector("bias_ih", 3 * hidden, Init::Uniform(bound));
        let wh = l.matrix("weight_hh", hidden, 3 * hidden, Init::Uniform(bound));
        let bh = l.vector("bias_hh", 3 * hidden, Init::Uniform(bound));
        l.pop_scope();
        Gru {
            hidden,
            reverse,
            wi,
            bi,
            wh,
            bh,
        }
    }

    pub fn forward<F: Scalar>(&self, p: &[F], x: &ArrayView2<F>, lens: &[usize]) -> GruCache<F> {
        let h_dim = self.hidden;
        let n = x.nrows();
        let mut xi = x.dot(&self.wi.mat(p));
        xi += &self.bi.vec(p);
        let wh = self.wh.mat(p);
        let bh = self.bh.vec(p);
        let mut gates = Array2::zeros((n, 3 * h_dim));
        let mut hn_all = Array2::zeros((n, h_dim));
        let mut h = Array2::zeros((n, h_dim));
        for (cur, prev) in Schedule::new(lens, self.reverse).steps {
            let hp = if prev.is_empty() {
                Array2::zeros((cur.len(), h_dim))
            } else {
                gather(&h, &prev)
            };
            let mut gh = hp.dot(&wh);
            gh += &bh;
            for (k, &f) in cur.iter().enumerate() {
                let xr = xi.row(f);
                let ghr = gh.row(k);
                for j in 0..h_dim {
                    let r = sigmoid(xr[j] + ghr[j]);
                    let z = sigmoid(xr[h_dim + j] + ghr[h_dim + j]);
                    let hn = ghr[2 * h_dim + j];
                    let nn = (xr[2 * h_dim + j] + r * hn).tanh();
                    gates[[f, j]] = r;
                    gates[[f, h_dim + j]] = z;
                    gates[[f, 2 * h_dim + j]] = nn;
                    hn_all[[f, j]] = hn;
                    h[[f, j]] = (F::one() - z) * nn + z * hp[[k, j]];
                }
            }
        }
        GruCache {
            gates,
            hn: hn_all,
            h,
        }
    }

    pub fn backward<F: Scalar>(
        &self,
        p: &[F],
        x: &ArrayView2<F>,
        lens: &[usize],
        cache: &GruCache<F>,
        dy: &ArrayView2<F>,
        g: &mut [F],
        need_dx: bool,
    ) -> Option<Array2<F>> {
        let h_dim = self.hidden;
        let n = x.nrows();
        let wh = self.wh.mat(p);
        let mut dh_all = dy.to_owned();
        let mut dgi = Array2::zeros((n, 3 * h_dim));
        let mut dwh = Array2::<F>::zeros((h_dim, 3 * h_dim));
        let mut dbh = Array1::<F>::zeros(3 * h_dim);
        let sched = Schedule::new(lens, self.reverse);
        for (cur, prev) in sched.steps.iter().rev() {
            let first = prev.is_empty();
            let hp = if first {
                Array2::zeros((cur.len(), h_dim))
            } else {
                gather(&cache.h, prev)
            };
            let mut dgh = Array2::zeros((cur.len(), 3 * h_dim));
            let mut dhp_direct = Array2::zeros((cur.len(), h_dim));
            for (k, &f) in cur.iter().enumerate() {
                for j in 0..h_dim {
                    let r = cache.gates[[f, j]];
                    let z = cache.gates[[f, h_dim + j]];
                    let nn = cache.gates[[f, 2 * h_dim + j]];
                    let hn = cache.hn[[f, j]];
                    let dh = dh_all[[f, j]];
                    let hpv = hp[[k, j]];
                    let dn_pre = dh * (F::one() - z) * (F::one() - nn * nn);
                    let dz_pre = dh * (hpv - nn) * z * (F::one() - z);
                    let dr_pre = dn_pre * hn * r * (F::one() - r);
                    dgi[[f, j]] = dr_pre;
                    dgi[[f, h_dim + j]] = dz_pre;
                    dgi[[f, 2 * h_dim + j]] = dn_pre;
                    dgh[[k, j]] = dr_pre;
                    dgh[[k, h_dim + j]] = dz_pre;
                    dgh[[k, 2 * h_dim + j]] = dn_pre * r;
                    dhp_direct[[k, j]] = dh * z;
                }
            }
            dbh += &dgh.sum_axis(Axis(0));
            if !first {
                general_mat_mul(F::one(), &hp.t(), &dgh, F::one(), &mut dwh);
                let dhp = dgh.dot(&wh.t()) + dhp_direct;
                for (k, &pf) in prev.iter().enumerate() {
                    let mut row = dh_all.row_mut(pf);
                    row += &dhp.row(k);
                }
            }
        }
        let mut gwh = self.wh.mat_mut(g);
        gwh += &dwh;
        let mut gbh = self.bh.vec_mut(g);
        gbh += &dbh;
        gemm_acc(&x.t(), &dgi.view(), &mut self.wi.mat_mut(g));
        let mut gbi = self.bi.vec_mut(g);
        gbi += &dgi.sum_axis(Axis(0));
        need_dx.then(|| dgi.dot(&self.wi.mat(p).t()))
    }
}

/// Forward and reverse GRUs with concatenated outputs.
#[derive(Debug, Clone)]
pub struct BiGru {
    pub fwd: Gru,
    pub bwd: Gru,
}

pub struct BiGruCache<F> {
    f: GruCache<F>,
    b: GruCache<F>,
    pub y: Array2<F>,
}

impl BiGru {
    pub fn new(l: &mut Layout, name: &str, n_in: usize, hidden: usize) -> Self {
        l.push_scope(name);
        let fwd = Gru::new(l, "forward", n_in, hidden, false);
        let bwd = Gru::new(l, "reverse", n_in, hidden, true);
        l.pop_scope();
        BiGru { fwd, bwd }
    }

    pub fn n_out(&self) -> usize {
        2 * self.fwd.hidden
    }

    pub fn forward<F: Scalar>(&self, p: &[F], x: &ArrayView2<F>, lens: &[usize]) -> BiGruCache<F> {
        let f = self.fwd.forward(p, x, lens);
        let b = self.bwd.forward(p, x, lens);
        let y = ndarray::concatenate(Axis(1), &[f.h.view(), b.h.view()]).expect("same rows");
        BiGruCache { f, b, y }
    }

    pub fn backward<F: Scalar>(
        &self,
        p: &[F],
        x: &ArrayView2<F>,
        lens: &[usize],
        cache: &BiGruCache<F>,
        dy: &ArrayView2<F>,
        g: &mut [F],
        need_dx: bool,
    ) -> Option<Array2<F>> {
        let h = self.fwd.hidden;
        let df = dy.slice(s![.., ..h]);
        let db = dy.slice(s![.., h..]);
        let a = self.fwd.backward(p, x, lens, &cache.f, &df, g, need_dx);
        let b = self.bwd.backward(p, x, lens, &cache.b, &db, g, need_dx);
        match (a, b) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        }
    }
}

#[cfg(test)]
pub(crate) mod gradcheck {
    /// Max relative error between analytic and central-difference gradients
    /// over the given coordinates.
    pub fn check<L>(p: &[f64], analytic: &[f64], coords: &[usize], mut loss: L) -> f64
    where
        L: FnMut(&[f64]) -> f64,
    {
        let h = 1e-4;
        let mut q = p.to_vec();
        let mut worst = 0.0f64;
        for &i in coords {
            q[i] = p[i] + h;
            let up = loss(&q);
            q[i] = p[i] - h;
            let down = loss(&q);
            q[i] = p[i];
            let fd = (up - down) / (2.0 * h);
            let err = (fd - analytic[i]).abs() / (fd.abs() + analytic[i].abs()).max(1e-6);
            worst = worst.max(err);
        }
        worst
    }

    pub fn coords(n: usize, count: usize, seed: u64) -> Vec<usize> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        if n <= count {
            return (0..n).collect();
        }
        (0..count).map(|_| rng.random_range(0..n)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::gradcheck::{check, coords};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn input(n: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut l = Layout::new();
        let s = l.matrix("x", n, c, Init::Normal(1.0));
        let v: Vec<f64> = l.init(&mut rng);
        s.mat(&v).to_owned()
    }

    /// Weighted-sum loss so every output coordinate gets a distinct gradient.
    fn weights(n: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, c), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.4)
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut l = Layout::new();
        let conv = Conv1d::new(&mut l, "c", 3, 4, 5);
        let p: Vec<f64> = l.init(&mut ChaCha8Rng::seed_from_u64(1));
        let lens = [4, 7];
        let x = input(11, 3, 2);
        let w = weights(11, 4);
        let loss = |q: &[f64]| (conv.forward(q, &x.view(), &lens).y * &w).sum();
        let cache = conv.forward(&p, &x.view(), &lens);
        let mut g = vec![0.0; l.len()];
        conv.backward(&p, &cache, &w.view(), &lens, &mut g, false);
        assert!(check(&p, &g, &coords(l.len(), 100, 3), loss) < 1e-3);
    }

    #[test]
    fn conv_input_gradient() {
        let mut l = Layout::new();
        let conv = Conv1d::new(&mut l, "c", 2, 3, 3);
        let p: Vec<f64> = l.init(&mut ChaCha8Rng::seed_from_u64(4));
        let lens = [3, 5];
        let x = input(8, 2, 5);
        let w = weights(8, 3);
        let cache = conv.forward(&p, &x.view(), &lens);
        let mut g = vec![0.0; l.len()];
        let dx = conv.backward(&p, &cache, &w.view(), &lens, &mut g, true).unwrap();
        let flat: Vec<f64> = x.iter().copied().collect();
        let err = check(&flat, dx.as_slice().unwrap(), &(0..16).collect::<Vec<_>>(), |q| {
            let xq = ArrayView2::from_shape((8, 2), q).unwrap();
            (conv.forward(&p, &xq, &lens).y * &w).sum()
        });
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn bigru_gradients_match_finite_differences() {
        let mut l = Layout::new();
        let gru = BiGru::new(&mut l, "g", 3, 4);
        let p: Vec<f64> = l.init(&mut ChaCha8Rng::seed_from_u64(6));
        let lens = [5, 2, 6];
        let x = input(13, 3, 7);
        let w = weights(13, 8);
        let cache = gru.forward(&p, &x.view(), &lens);
        let mut g = vec![0.0; l.len()];
        let dx = gru
            .backward(&p, &x.view(), &lens, &cache, &w.view(), &mut g, true)
            .unwrap();
        let loss = |q: &[f64]| (gru.forward(q, &x.view(), &lens).y * &w).sum();
        assert!(check(&p, &g, &coords(l.len(), 100, 8), loss) < 1e-3);
        let flat: Vec<f64> = x.iter().copied().collect();
        let err = check(&flat, dx.as_slice().unwrap(), &(0..39).collect::<Vec<_>>(), |q| {
            let xq = ArrayView2::from_shape((13, 3), q).unwrap();
            (gru.forward(&p, &xq, &lens).y * &w).sum()
        });
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn sequences_do_not_interact() {
        let mut l = Layout::new();
        let conv = Conv1d::new(&mut l, "c", 3, 4, 5);
        let gru = BiGru::new(&mut l, "g", 4, 3);
        let p: Vec<f64> = l.init(&mut ChaCha8Rng::seed_from_u64(9));
        let x = input(10, 3, 10);
        let run = |x: ArrayView2<f64>, lens: &[usize]| {
            let c = conv.forward(&p, &x, lens);
            gru.forward(&p, &c.y.view(), lens).y
        };
        let joint = run(x.view(), &[6, 4]);
        let alone = run(x.slice(s![..6, ..]), &[6]);
        assert_eq!(joint.slice(s![..6, ..]), alone);
    }

    #[test]
    fn gru_is_order_sensitive() {
        let mut l = Layout::new();
        let gru = Gru::new(&mut l, "g", 2, 3, false);
        let p: Vec<f64> = l.init(&mut ChaCha8Rng::seed_from_u64(11));
        let x = input(4, 2, 12);
        let mut rev = x.clone();
        rev.invert_axis(Axis(0));
        let a = gru.forward(&p, &x.view(), &[4]).h;
        let b = gru.forward(&p, &rev.view(), &[4]).h;
        assert_ne!(a.row(3), b.row(3));
    }
}
