#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rdvc::losses::{info_nce_grad, rank_pair_grad, ContrastiveSet, RankPair};
use rdvc::nets::{DecoderConfig, DecoderNet, EncoderConfig, EncoderGrads, EncoderNet};

/// A tiny end-to-end graph: the three encoders with their heads feed the
/// rank and contrastive losses, and the decoder reconstructs the original
/// half of the batch from the latents. Everything runs in `f64`.
pub struct TinyGraph {
    pub enc: EncoderNet,
    pub dec: DecoderNet,
    mel: Array2<f64>,
    pitch: Array2<f64>,
    lens: Vec<usize>,
    taus: Vec<(f64, f64)>,
    speakers: Vec<usize>,
}

impl TinyGraph {
    pub fn new(seed: u64) -> (Self, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = EncoderNet::new(EncoderConfig::tiny()).unwrap();
        let dec = DecoderNet::new(DecoderConfig::tiny(3)).unwrap();
        // Two originals then their augmented copies.
        let lens = vec![7, 5, 9, 4];
        let n: usize = lens.iter().sum();
        let mel = Array2::from_shape_fn((n, 80), |_| rng.random_range(-14.0..-10.0));
        let pitch = Array2::from_shape_fn((n, 2), |(_, j)| {
            if j == 0 {
                rng.random_range(-1.5..1.5)
            } else {
                f64::from(u8::from(rng.random_bool(0.7)))
            }
        });
        let mut p: Vec<f64> = enc.layout.init(&mut rng);
        let pd: Vec<f64> = dec.layout.init(&mut rng);
        p.extend(pd);
        let g = TinyGraph {
            enc,
            dec,
            mel,
            pitch,
            lens,
            taus: vec![(0.2, 0.8), (0.7, 0.35)],
            speakers: vec![2, 0],
        };
        (g, p)
    }

    pub fn parameter_count(&self) -> usize {
        self.enc.parameter_count() + self.dec.parameter_count()
    }

    /// Total loss and, if asked, its gradient.
    pub fn eval(&self, p: &[f64], want_grad: bool) -> (f64, Option<Vec<f64>>) {
        let (pe, pd) = p.split_at(self.enc.parameter_count());
        let pass = self.enc.forward(pe, &self.mel.view(), &self.pitch.view(), &self.lens);
        let b = self.taus.len();
        let mut loss = 0.0;
        let mut ds_r = Array1::<f64>::zeros(2 * b);
        let mut ds_p = Array1::<f64>::zeros(2 * b);
        let mut dh = Array2::<f64>::zeros(pass.h.dim());
        for (i, &(tau_r, tau_p)) in self.taus.iter().enumerate() {
            for (s, ds, tau) in [(&pass.s_r, &mut ds_r, tau_r), (&pass.s_p, &mut ds_p, tau_p)] {
                let g = rank_pair_grad(&RankPair {
                    s: s[i],
                    s_aug: s[b + i],
                    tau,
                })
                .unwrap();
                loss += g.loss;
                ds[i] += g.ds;
                ds[b + i] += g.ds_aug;
            }
            let others: Vec<usize> = (0..b).filter(|&j| j != i).collect();
            let g = info_nce_grad(&ContrastiveSet {
                h: pass.h.row(i).to_owned(),
                h_aug: pass.h.row(b + i).to_owned(),
                negatives: others.iter().map(|&j| pass.h.row(j).to_owned()).collect(),
                temperature: 0.1,
            })
            .unwrap();
            loss += g.loss;
            dh.row_mut(i).scaled_add(1.0, &g.dh);
            dh.row_mut(b + i).scaled_add(1.0, &g.dh_aug);
            for (&j, d) in others.iter().zip(&g.dnegatives) {
                dh.row_mut(j).scaled_add(1.0, d);
            }
        }

        // Reconstruction of the originals, mean squared error in f64.
        let n0: usize = self.lens[..b].iter().sum();
        let rows = ndarray::s![..n0, ..];
        let (z_c, z_r, z_p) = (
            pass.z_c().slice(rows).to_owned(),
            pass.z_r().slice(rows).to_owned(),
            pass.z_p().slice(rows).to_owned(),
        );
        let dpass = self.dec.forward(
            pd,
            &z_c.view(),
            &z_r.view(),
            &z_p.view(),
            &self.lens[..b],
            &self.speakers,
        );
        let target = self.mel.slice(rows);
        let diff = &dpass.mel - &target;
        let count = diff.len() as f64;
        loss += diff.iter().map(|d| d * d).sum::<f64>() / count;
        if !want_grad {
            return (loss, None);
        }
        let dmel = diff.mapv(|d| 2.0 * d / count);
        let (gd, lat) = self.dec.backward(pd, &dpass, &dmel.view(), true);
        let lat = lat.expect("latent gradients requested");
        let pad = |g: Array2<f64>, width: usize| {
            let mut full = Array2::zeros((self.mel.nrows(), width));
            full.slice_mut(rows).assign(&g);
            full
        };
        let cfg = &self.enc.cfg;
        let ge = self.enc.backward(
            pe,
            &pass,
            &EncoderGrads {
                z_c: Some(pad(lat.z_c, cfg.d_content)),
                z_r: Some(pad(lat.z_r, cfg.d_rhythm)),
                z_p: Some(pad(lat.z_p, cfg.d_pitch)),
                h: Some(dh),
                s_r: Some(ds_r),
                s_p: Some(ds_p),
            },
        );
        let mut g = ge;
        g.extend(gd);
        (loss, Some(g))
    }
}

/// Worst relative error between analytic and central-difference gradients
/// over `count` random coordinates.
pub fn worst_gradient_error(seed: u64, count: usize) -> f64 {
    let (graph, p) = TinyGraph::new(seed);
    let (_, g) = graph.eval(&p, true);
    let g = g.unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf00d);
    let h = 1e-5;
    let mut q = p.clone();
    let mut worst = 0.0f64;
    for _ in 0..count {
        let i = rng.random_range(0..p.len());
        q[i] = p[i] + h;
        let up = graph.eval(&q, false).0;
        q[i] = p[i] - h;
        let down = graph.eval(&q, false).0;
        q[i] = p[i];
        let fd = (up - down) / (2.0 * h);
        let err = (fd - g[i]).abs() / (fd.abs() + g[i].abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}
