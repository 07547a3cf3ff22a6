//! Kolmogorov–Arnold network with learnable edge activations
//! `φ(x) = w · (silu(x) + Σ_s c_s B_s(x))`.
//!
//! A layer with `n_in` inputs and `n_out` outputs holds an `n_out × n_in`
//! matrix of edges and computes `y_j = Σ_i φ_{j,i}(x_i)`. Layers compose
//! directly; hidden activations are not renormalized, and the splines
//! extrapolate their boundary pieces when activations leave the grid.
//!
//! Parameters are stored flat, layer-major, then by output index, input
//! index, and within an edge `w` followed by the `G + k_b` coefficients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::diff::{silu_derivs, Jet2};
use crate::network::{check_len, check_shape, Affine, NetError, Surrogate};
use crate::splines::{LocalBasis, SplineSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct KanNetwork {
    shape: Vec<usize>,
    spec: SplineSpec,
    params: Vec<f64>,
    offsets: Vec<usize>,
    input_affine: Vec<Affine>,
    output_affine: Vec<Affine>,
    train_scale: bool,
    seed: u64,
}

/// Per-layer intermediates from a jet forward pass.
#[derive(Debug, Default)]
pub struct KanCache {
    layers: Vec<LayerCache>,
    output: Vec<Jet2>,
}

#[derive(Debug, Default)]
struct LayerCache {
    inputs: Vec<Jet2>,
    bases: Vec<LocalBasis>,
    /// `g^{(r)}` for `g = silu + spline`, one entry per edge (row-major j, i).
    g: Vec<[f64; 4]>,
}

impl KanNetwork {
    /// Draws `c_s ~ N(0, 0.1²)` and Xavier-uniform `w` for every edge.
    pub fn new(shape: &[usize], spec: SplineSpec, seed: u64) -> Result<Self, NetError> {
        check_shape(shape)?;
        let nb = spec.num_basis();
        let mut offsets = Vec::with_capacity(shape.len());
        let mut total = 0;
        for win in shape.windows(2) {
            offsets.push(total);
            total += win[0] * win[1] * (nb + 1);
        }
        offsets.push(total);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeff_dist = Normal::new(0.0, 0.1).expect("valid normal");
        let mut params = Vec::with_capacity(total);
        for win in shape.windows(2) {
            let (n_in, n_out) = (win[0], win[1]);
            let bound = (6.0 / (n_in + n_out) as f64).sqrt();
            for _ in 0..n_in * n_out {
                params.push(rng.random_range(-bound..=bound));
                for _ in 0..nb {
                    params.push(coeff_dist.sample(&mut rng));
                }
            }
        }

        Ok(Self {
            input_affine: vec![Affine::IDENTITY; shape[0]],
            output_affine: vec![Affine::IDENTITY; *shape.last().unwrap()],
            shape: shape.to_vec(),
            spec,
            params,
            offsets,
            train_scale: true,
            seed,
        })
    }

    pub fn with_input_affine(mut self, affine: Vec<Affine>) -> Result<Self, NetError> {
        check_len(self.shape[0], affine.len())?;
        self.input_affine = affine;
        Ok(self)
    }

    /// Normalizes each raw input range onto the spline domain `[-1, 1]`.
    pub fn with_input_ranges(self, ranges: &[(f64, f64)]) -> Result<Self, NetError> {
        let affine = ranges.iter().map(|&(lo, hi)| Affine::normalizing(lo, hi)).collect();
        self.with_input_affine(affine)
    }

    pub fn with_output_affine(mut self, affine: Vec<Affine>) -> Result<Self, NetError> {
        check_len(*self.shape.last().unwrap(), affine.len())?;
        self.output_affine = affine;
        Ok(self)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn spec(&self) -> &SplineSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_affine(&self) -> &[Affine] {
        &self.input_affine
    }

    pub fn output_affine(&self) -> &[Affine] {
        &self.output_affine
    }

    /// Whether the edge scale factors `w` receive gradients.
    pub fn train_scale(&self) -> bool {
        self.train_scale
    }

    pub fn set_train_scale(&mut self, on: bool) {
        self.train_scale = on;
    }

    pub fn n_edges(&self) -> usize {
        self.shape.windows(2).map(|w| w[0] * w[1]).sum()
    }

    /// Flat index of the scale factor on edge `(layer, out, inp)`.
    pub fn scale_index(&self, layer: usize, out: usize, inp: usize) -> usize {
        let n_in = self.shape[layer];
        self.offsets[layer] + (out * n_in + inp) * (self.spec.num_basis() + 1)
    }

    /// Flat index of coefficient `s` on edge `(layer, out, inp)`.
    pub fn coeff_index(&self, layer: usize, out: usize, inp: usize, s: usize) -> usize {
        self.scale_index(layer, out, inp) + 1 + s
    }

    /// Evaluates one edge activation at a plain input.
    pub fn phi(&self, layer: usize, out: usize, inp: usize, x: f64) -> f64 {
        let mut lb = LocalBasis::default();
        self.spec.local_basis(x, 0, &mut lb);
        let e = self.scale_index(layer, out, inp);
        let w = self.params[e];
        w * (silu_derivs(x)[0] + lb.combine(&self.params[e + 1..e + 1 + self.spec.num_basis()])[0])
    }

    /// Evaluates one edge activation on a jet.
    pub fn phi_jet(&self, layer: usize, out: usize, inp: usize, x: Jet2) -> Jet2 {
        let mut lb = LocalBasis::default();
        self.spec.local_basis(x.v, 2, &mut lb);
        let e = self.scale_index(layer, out, inp);
        let w = self.params[e];
        let s = silu_derivs(x.v);
        let c = lb.combine(&self.params[e + 1..e + 1 + self.spec.num_basis()]);
        x.compose(s[0] + c[0], s[1] + c[1], s[2] + c[2]).scale(w)
    }
}

impl Surrogate for KanNetwork {
    type Cache = KanCache;

    fn n_inputs(&self) -> usize {
        self.shape[0]
    }

    fn n_outputs(&self) -> usize {
        *self.shape.last().unwrap()
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn set_params(&mut self, p: &[f64]) -> Result<(), NetError> {
        check_len(self.params.len(), p.len())?;
        self.params.copy_from_slice(p);
        Ok(())
    }

    /// `(Σ edges) · (G + k_b)`: spline coefficients only, excluding `w`.
    fn reported_param_count(&self) -> usize {
        self.n_edges() * self.spec.num_basis()
    }

    fn forward_with(&self, params: &[f64], input: &[f64], out: &mut [f64]) {
        let nb = self.spec.num_basis();
        let mut x: Vec<f64> = input.iter().zip(&self.input_affine).map(|(v, a)| a.apply(*v)).collect();
        let mut lb = LocalBasis::default();
        for (l, win) in self.shape.windows(2).enumerate() {
            let (n_in, n_out) = (win[0], win[1]);
            let mut y = vec![0.0; n_out];
            for (i, &xi) in x.iter().enumerate() {
                self.spec.local_basis(xi, 0, &mut lb);
                let silu = silu_derivs(xi)[0];
                for (j, yj) in y.iter_mut().enumerate() {
                    let e = self.offsets[l] + (j * n_in + i) * (nb + 1);
                    *yj += params[e] * (silu + lb.combine(&params[e + 1..e + 1 + nb])[0]);
                }
            }
            x = y;
        }
        for ((o, v), a) in out.iter_mut().zip(&x).zip(&self.output_affine) {
            *o = a.apply(*v);
        }
    }

    fn jet_forward(&self, params: &[f64], input: &[Jet2], cache: &mut KanCache, out: &mut [Jet2]) {
        let nb = self.spec.num_basis();
        let n_layers = self.shape.len() - 1;
        cache.layers.resize_with(n_layers, LayerCache::default);

        let mut x: Vec<Jet2> =
            input.iter().zip(&self.input_affine).map(|(v, a)| a.apply_jet(*v)).collect();
        for (l, win) in self.shape.windows(2).enumerate() {
            let (n_in, n_out) = (win[0], win[1]);
            let lc = &mut cache.layers[l];
            lc.bases.resize(n_in, LocalBasis::default());
            lc.g.resize(n_in * n_out, [0.0; 4]);
            let mut y = vec![Jet2::ZERO; n_out];
            for (i, &xi) in x.iter().enumerate() {
                let lb = &mut lc.bases[i];
                self.spec.local_basis(xi.v, 3, lb);
                let s = silu_derivs(xi.v);
                let x1sq = xi.d1 * xi.d1;
                for (j, yj) in y.iter_mut().enumerate() {
                    let edge = j * n_in + i;
                    let e = self.offsets[l] + edge * (nb + 1);
                    let w = params[e];
                    let c = lb.combine(&params[e + 1..e + 1 + nb]);
                    let g = [s[0] + c[0], s[1] + c[1], s[2] + c[2], s[3] + c[3]];
                    lc.g[edge] = g;
                    yj.v += w * g[0];
                    yj.d1 += w * g[1] * xi.d1;
                    yj.d2 += w * (g[2] * x1sq + g[1] * xi.d2);
                }
            }
            lc.inputs = std::mem::replace(&mut x, y);
        }
        cache.output.clone_from(&x);
        for ((o, v), a) in out.iter_mut().zip(&x).zip(&self.output_affine) {
            *o = a.apply_jet(*v);
        }
    }

    fn jet_backward(&self, params: &[f64], cache: &KanCache, out_adj: &[[f64; 3]], grad: &mut [f64]) {
        let nb = self.spec.num_basis();
        let mut ybar: Vec<[f64; 3]> = out_adj
            .iter()
            .zip(&self.output_affine)
            .map(|(a, aff)| [a[0] * aff.scale, a[1] * aff.scale, a[2] * aff.scale])
            .collect();

        for (l, win) in self.shape.windows(2).enumerate().rev() {
            let (n_in, n_out) = (win[0], win[1]);
            let lc = &cache.layers[l];
            let mut xbar = vec![[0.0f64; 3]; n_in];
            for j in 0..n_out {
                let [a0, a1, a2] = ybar[j];
                if a0 == 0.0 && a1 == 0.0 && a2 == 0.0 {
                    continue;
                }
                for i in 0..n_in {
                    let edge = j * n_in + i;
                    let e = self.offsets[l] + edge * (nb + 1);
                    let w = params[e];
                    let g = lc.g[edge];
                    let x = lc.inputs[i];
                    let x1sq = x.d1 * x.d1;

                    if self.train_scale {
                        grad[e] += a0 * g[0] + a1 * g[1] * x.d1 + a2 * (g[2] * x1sq + g[1] * x.d2);
                    }
                    let m0 = w * a0;
                    let m1 = w * (a1 * x.d1 + a2 * x.d2);
                    let m2 = w * a2 * x1sq;
                    let lb = &lc.bases[i];
                    let gc = &mut grad[e + 1 + lb.start..e + 1 + lb.start + lb.len];
                    for (s, gs) in gc.iter_mut().enumerate() {
                        *gs += m0 * lb.ders[0][s] + m1 * lb.ders[1][s] + m2 * lb.ders[2][s];
                    }
                    if l > 0 {
                        let xb = &mut xbar[i];
                        xb[0] += w * (a0 * g[1] + a1 * g[2] * x.d1 + a2 * (g[3] * x1sq + g[2] * x.d2));
                        xb[1] += w * (a1 * g[1] + 2.0 * a2 * g[2] * x.d1);
                        xb[2] += w * a2 * g[1];
                    }
                }
            }
            ybar = xbar;
        }
    }
}
