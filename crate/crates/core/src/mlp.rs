//! Fully connected baseline: affine layers with `tanh` on hidden layers
//! and an identity output layer.
//!
//! Flat layout per layer: the `n_out × n_in` weight matrix (row-major)
//! followed by the `n_out` biases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff::{tanh_derivs, Jet2};
use crate::network::{check_len, check_shape, Affine, NetError, Surrogate};

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    widths: Vec<usize>,
    params: Vec<f64>,
    offsets: Vec<usize>,
    input_affine: Vec<Affine>,
    output_affine: Vec<Affine>,
    seed: u64,
}

#[derive(Debug, Default)]
pub struct MlpCache {
    /// Layer inputs (after activation of the previous layer).
    inputs: Vec<Vec<Jet2>>,
    /// `tanh` derivatives at the pre-activations of hidden layers.
    act: Vec<Vec<[f64; 4]>>,
    /// Pre-activation jets of hidden layers.
    pre: Vec<Vec<Jet2>>,
}

impl MlpNetwork {
    /// Xavier-uniform weights, zero biases.
    pub fn new(widths: &[usize], seed: u64) -> Result<Self, NetError> {
        check_shape(widths)?;
        let mut offsets = Vec::with_capacity(widths.len());
        let mut total = 0;
        for w in widths.windows(2) {
            offsets.push(total);
            total += w[0] * w[1] + w[1];
        }
        offsets.push(total);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(total);
        for w in widths.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let bound = (6.0 / (n_in + n_out) as f64).sqrt();
            params.extend((0..n_in * n_out).map(|_| rng.random_range(-bound..=bound)));
            params.extend(std::iter::repeat_n(0.0, n_out));
        }
        Ok(Self {
            input_affine: vec![Affine::IDENTITY; widths[0]],
            output_affine: vec![Affine::IDENTITY; *widths.last().unwrap()],
            widths: widths.to_vec(),
            params,
            offsets,
            seed,
        })
    }

    pub fn with_input_affine(mut self, affine: Vec<Affine>) -> Result<Self, NetError> {
        check_len(self.widths[0], affine.len())?;
        self.input_affine = affine;
        Ok(self)
    }

    pub fn with_input_ranges(self, ranges: &[(f64, f64)]) -> Result<Self, NetError> {
        let affine = ranges.iter().map(|&(lo, hi)| Affine::normalizing(lo, hi)).collect();
        self.with_input_affine(affine)
    }

    pub fn with_output_affine(mut self, affine: Vec<Affine>) -> Result<Self, NetError> {
        check_len(*self.widths.last().unwrap(), affine.len())?;
        self.output_affine = affine;
        Ok(self)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
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

    fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }
}

impl Surrogate for MlpNetwork {
    type Cache = MlpCache;

    fn n_inputs(&self) -> usize {
        self.widths[0]
    }

    fn n_outputs(&self) -> usize {
        *self.widths.last().unwrap()
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn set_params(&mut self, p: &[f64]) -> Result<(), NetError> {
        check_len(self.params.len(), p.len())?;
        self.params.copy_from_slice(p);
        Ok(())
    }

    fn reported_param_count(&self) -> usize {
        self.params.len()
    }

    fn forward_with(&self, params: &[f64], input: &[f64], out: &mut [f64]) {
        let mut x: Vec<f64> = input.iter().zip(&self.input_affine).map(|(v, a)| a.apply(*v)).collect();
        let last = self.n_layers() - 1;
        for (l, win) in self.widths.windows(2).enumerate() {
            let (n_in, n_out) = (win[0], win[1]);
            let w = &params[self.offsets[l]..self.offsets[l] + n_in * n_out];
            let b = &params[self.offsets[l] + n_in * n_out..self.offsets[l + 1]];
            x = (0..n_out)
                .map(|j| {
                    let z = b[j] + w[j * n_in..(j + 1) * n_in].iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
                    if l < last { z.tanh() } else { z }
                })
                .collect();
        }
        for ((o, v), a) in out.iter_mut().zip(&x).zip(&self.output_affine) {
            *o = a.apply(*v);
        }
    }

    fn jet_forward(&self, params: &[f64], input: &[Jet2], cache: &mut MlpCache, out: &mut [Jet2]) {
        let nl = self.n_layers();
        cache.inputs.resize_with(nl, Vec::new);
        cache.act.resize_with(nl, Vec::new);
        cache.pre.resize_with(nl, Vec::new);
        let mut x: Vec<Jet2> =
            input.iter().zip(&self.input_affine).map(|(v, a)| a.apply_jet(*v)).collect();
        for (l, win) in self.widths.windows(2).enumerate() {
            let (n_in, n_out) = (win[0], win[1]);
            let w = &params[self.offsets[l]..self.offsets[l] + n_in * n_out];
            let b = &params[self.offsets[l] + n_in * n_out..self.offsets[l + 1]];
            let mut z = vec![Jet2::ZERO; n_out];
            for (j, zj) in z.iter_mut().enumerate() {
                let row = &w[j * n_in..(j + 1) * n_in];
                let mut acc = Jet2::constant(b[j]);
                for (wij, xi) in row.iter().zip(&x) {
                    acc.v += wij * xi.v;
                    acc.d1 += wij * xi.d1;
                    acc.d2 += wij * xi.d2;
                }
                *zj = acc;
            }
            let y = if l + 1 < nl {
                let act: Vec<[f64; 4]> = z.iter().map(|zj| tanh_derivs(zj.v)).collect();
                let y = z.iter().zip(&act).map(|(zj, d)| zj.compose(d[0], d[1], d[2])).collect();
                cache.act[l] = act;
                y
            } else {
                z.clone()
            };
            cache.pre[l] = z;
            cache.inputs[l] = std::mem::replace(&mut x, y);
        }
        for ((o, v), a) in out.iter_mut().zip(&x).zip(&self.output_affine) {
            *o = a.apply_jet(*v);
        }
    }

    fn jet_backward(&self, params: &[f64], cache: &MlpCache, out_adj: &[[f64; 3]], grad: &mut [f64]) {
        let nl = self.n_layers();
        let mut abar: Vec<[f64; 3]> = out_adj
            .iter()
            .zip(&self.output_affine)
            .map(|(a, aff)| [a[0] * aff.scale, a[1] * aff.scale, a[2] * aff.scale])
            .collect();
        for (l, win) in self.widths.windows(2).enumerate().rev() {
            let (n_in, n_out) = (win[0], win[1]);
            // Pull the adjoint through the activation onto the pre-activation.
            let zbar: Vec<[f64; 3]> = if l + 1 < nl {
                abar.iter()
                    .zip(&cache.act[l])
                    .zip(&cache.pre[l])
                    .map(|((a, t), z)| {
                        let z1sq = z.d1 * z.d1;
                        [
                            a[0] * t[1] + a[1] * t[2] * z.d1 + a[2] * (t[3] * z1sq + t[2] * z.d2),
                            a[1] * t[1] + 2.0 * a[2] * t[2] * z.d1,
                            a[2] * t[1],
                        ]
                    })
                    .collect()
            } else {
                abar
            };
            let x = &cache.inputs[l];
            let woff = self.offsets[l];
            let boff = woff + n_in * n_out;
            let mut xbar = vec![[0.0f64; 3]; n_in];
            for (j, zb) in zbar.iter().enumerate() {
                grad[boff + j] += zb[0];
                for i in 0..n_in {
                    let xi = x[i];
                    grad[woff + j * n_in + i] += zb[0] * xi.v + zb[1] * xi.d1 + zb[2] * xi.d2;
                    if l > 0 {
                        let wij = params[woff + j * n_in + i];
                        xbar[i][0] += wij * zb[0];
                        xbar[i][1] += wij * zb[1];
                        xbar[i][2] += wij * zb[2];
                    }
                }
            }
            abar = xbar;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts() {
        assert_eq!(MlpNetwork::new(&[2, 10, 10, 10, 10, 10, 1], 0).unwrap().reported_param_count(), 481);
        assert_eq!(MlpNetwork::new(&[5, 30, 30, 4], 0).unwrap().reported_param_count(), 1234);
        assert_eq!(MlpNetwork::new(&[1, 1], 0).unwrap().reported_param_count(), 2);
    }

    #[test]
    fn rejects_bad_widths() {
        assert!(MlpNetwork::new(&[4], 0).is_err());
        assert!(MlpNetwork::new(&[2, 0, 1], 0).is_err());
    }

    #[test]
    fn zero_weights_give_zero() {
        let mut n = MlpNetwork::new(&[2, 10, 1], 3).unwrap();
        n.set_params(&vec![0.0; n.n_params()]).unwrap();
        let j = n.forward_jet(&[Jet2::variable(0.3), Jet2::constant(0.1)]).unwrap()[0];
        assert_eq!(j, Jet2::ZERO);
    }

    #[test]
    fn single_linear_layer() {
        let mut n = MlpNetwork::new(&[1, 1], 0).unwrap();
        n.set_params(&[3.0, 1.0]).unwrap();
        let t = 0.7;
        assert_eq!(n.forward_jet(&[Jet2::variable(t)]).unwrap()[0], Jet2::new(3.0 * t + 1.0, 3.0, 0.0));
    }

    #[test]
    fn deterministic_and_zero_bias() {
        let a = MlpNetwork::new(&[2, 10, 10, 1], 5).unwrap();
        let b = MlpNetwork::new(&[2, 10, 10, 1], 5).unwrap();
        assert_eq!(a, b);
        assert!(a.params()[20..30].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn jet_matches_finite_difference() {
        let n = MlpNetwork::new(&[2, 10, 1], 17).unwrap();
        let (t, pm) = (0.4, 0.12);
        let j = n.forward_jet(&[Jet2::variable(t), Jet2::constant(pm)]).unwrap()[0];
        let h = 1e-5;
        let f = |t: f64| n.forward(&[t, pm]).unwrap()[0];
        let fd = (f(t + h) - f(t - h)) / (2.0 * h);
        assert!((j.d1 - fd).abs() <= 1e-5 * fd.abs().max(1e-3));
    }
}
