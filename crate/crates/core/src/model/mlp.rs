//! Dense MLPs with ReLU hidden layers and an optional trailing layer norm,
//! with hand-written reverse-mode gradients.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::Uniform;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `fan_in x fan_out`; rows are multiplied from the left.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Per-row normalization over the feature axis with learned scale and offset.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub scale: Array1<f64>,
    pub offset: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Linear>,
    pub norm: Option<LayerNorm>,
}

/// Activations kept by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    norm: Option<(Array2<f64>, Array1<f64>)>,
}

impl MlpParams {
    /// Glorot-uniform weights, zero biases, unit norm scale.
    pub fn init<R: Rng>(widths: &[usize], layer_norm: bool, rng: &mut R) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| {
                let s = (6.0 / (w[0] + w[1]) as f64).sqrt();
                let dist = Uniform::new_inclusive(-s, s);
                Linear {
                    weight: Array2::from_shape_fn((w[0], w[1]), |_| rng.sample(dist)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        let out = *widths.last().expect("at least one width");
        let norm = layer_norm.then(|| LayerNorm {
            scale: Array1::ones(out),
            offset: Array1::zeros(out),
        });
        Self { layers, norm }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
            norm: self.norm.as_ref().map(|n| LayerNorm {
                scale: Array1::zeros(n.scale.raw_dim()),
                offset: Array1::zeros(n.offset.raw_dim()),
            }),
        }
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn out_width(&self) -> usize {
        self.layers.last().unwrap().weight.ncols()
    }

    pub(crate) fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [f64])>) {
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.layers.{i}.weight"), l.weight.as_slice().unwrap()));
            out.push((format!("{prefix}.layers.{i}.bias"), l.bias.as_slice().unwrap()));
        }
        if let Some(n) = &self.norm {
            out.push((format!("{prefix}.norm.scale"), n.scale.as_slice().unwrap()));
            out.push((format!("{prefix}.norm.offset"), n.offset.as_slice().unwrap()));
        }
    }

    pub(crate) fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().unwrap());
            out.push(l.bias.as_slice_mut().unwrap());
        }
        if let Some(n) = &mut self.norm {
            out.push(n.scale.as_slice_mut().unwrap());
            out.push(n.offset.as_slice_mut().unwrap());
        }
    }

    /// Row-wise application without keeping activations.
    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.forward(x).0
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, MlpCache) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(h);
            h = z;
        }
        let norm = match &self.norm {
            None => None,
            Some(ln) => {
                let width = h.ncols() as f64;
                let mut inv_std = Array1::zeros(h.nrows());
                for (mut row, inv) in h.rows_mut().into_iter().zip(inv_std.iter_mut()) {
                    let mean = row.sum() / width;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width;
                    *inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    row.mapv_inplace(|v| (v - mean) * *inv);
                }
                let xhat = h.clone();
                h *= &ln.scale;
                h += &ln.offset;
                Some((xhat, inv_std))
            }
        };
        (h, MlpCache { inputs, norm })
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input rows.
    pub fn backward(&self, cache: &MlpCache, dy: ArrayView2<'_, f64>, grads: &mut MlpParams) -> Array2<f64> {
        let mut dz = match (&self.norm, &cache.norm) {
            (Some(ln), Some((xhat, inv_std))) => {
                let g = grads.norm.as_mut().expect("grads mirror params");
                g.scale += &(&dy * xhat).sum_axis(Axis(0));
                g.offset += &dy.sum_axis(Axis(0));
                let width = dy.ncols() as f64;
                let mut dx = &dy * &ln.scale;
                for ((mut row, xh), inv) in dx.rows_mut().into_iter().zip(xhat.rows()).zip(inv_std) {
                    let mean_d = row.sum() / width;
                    let mean_dx = row.dot(&xh) / width;
                    Zip::from(&mut row)
                        .and(&xh)
                        .for_each(|d, &x| *d = inv * (*d - mean_d - x * mean_dx));
                }
                dx
            }
            _ => dy.to_owned(),
        };
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[i];
            let g = &mut grads.layers[i];
            g.weight += &x.t().dot(&dz);
            g.bias += &dz.sum_axis(Axis(0));
            let mut dx = dz.dot(&layer.weight.t());
            if i > 0 {
                Zip::from(&mut dx).and(x).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            dz = dx;
        }
        dz
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_linear_layer_by_hand() {
        let mlp = MlpParams {
            layers: vec![Linear {
                weight: array![[2.0]],
                bias: array![1.0],
            }],
            norm: None,
        };
        assert_eq!(mlp.apply(array![[3.0]].view()), array![[7.0]]);
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = MlpParams::init(&[3, 5, 4], true, &mut rng);
        let x = array![[1.0, -2.0, 0.5], [0.3, 0.1, 4.0]];
        let y = mlp.apply(x.view());
        let raw = MlpParams {
            layers: mlp.layers.clone(),
            norm: None,
        }
        .apply(x.view());
        let var_of = |row: ndarray::ArrayView1<f64>| {
            let mean = row.sum() / 4.0;
            (mean, row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0)
        };
        for (row, pre) in y.rows().into_iter().zip(raw.rows()) {
            let (mean, var) = var_of(row);
            let (_, pre_var) = var_of(pre);
            assert!(mean.abs() < 1e-12);
            assert!((var - pre_var / (pre_var + LAYER_NORM_EPS)).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mlp = MlpParams::init(&[3, 6, 6, 2], true, &mut rng);
        let x = array![[0.4, -1.2, 0.7], [1.1, 0.2, -0.3], [-0.5, 0.9, 0.05]];
        let w = array![[0.3, -1.0], [0.7, 0.2], [-0.4, 0.9]];
        let loss = |m: &MlpParams, x: &Array2<f64>| (&m.apply(x.view()) * &w).sum();
        let (_, cache) = mlp.forward(x.view());
        let mut grads = mlp.zeros_like();
        let dx = mlp.backward(&cache, w.view(), &mut grads);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[i] += h;
            xm.as_slice_mut().unwrap()[i] -= h;
            let fd = (loss(&mlp, &xp) - loss(&mlp, &xm)) / (2.0 * h);
            assert!((fd - dx.as_slice().unwrap()[i]).abs() < 1e-7, "input {i}");
        }
        let mut names = Vec::new();
        grads.visit("g", &mut names);
        let analytic: Vec<Vec<f64>> = names.iter().map(|(_, s)| s.to_vec()).collect();
        for (t, an) in analytic.iter().enumerate() {
            for j in 0..an.len() {
                let mut plus = mlp.clone();
                let mut minus = mlp.clone();
                {
                    let mut v = Vec::new();
                    plus.visit_mut(&mut v);
                    v[t][j] += h;
                }
                {
                    let mut v = Vec::new();
                    minus.visit_mut(&mut v);
                    v[t][j] -= h;
                }
                let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h);
                assert!((fd - an[j]).abs() < 1e-7, "tensor {} elem {j}: {fd} vs {}", names[t].0, an[j]);
            }
        }
    }
}
