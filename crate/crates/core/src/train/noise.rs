use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::mesh::ChannelSchema;

/// Adds independent Gaussian noise to the dynamical input channels of a state.
/// `noise_std` holds one standard deviation per input channel.
pub fn inject_noise<R: Rng>(
    q: ArrayView2<'_, f64>,
    schema: &ChannelSchema,
    noise_std: &[f64],
    rng: &mut R,
) -> Result<Array2<f64>> {
    if noise_std.len() != schema.inputs().len() {
        return Err(Error::Validation(format!(
            "{} noise levels for {} input channels",
            noise_std.len(),
            schema.inputs().len()
        )));
    }
    let mut out = q.to_owned();
    for (&ch, &std) in schema.inputs().iter().zip(noise_std) {
        if std < 0.0 || !std.is_finite() {
            return Err(Error::Validation(format!("noise std {std} must be finite and >= 0")));
        }
        if std == 0.0 {
            continue;
        }
        let dist = Normal::new(0.0, std).expect("valid std");
        for v in out.column_mut(ch) {
            *v += dist.sample(rng);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{node_features, Mesh};
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_std_is_identity() {
        let schema = ChannelSchema::all_delta(&["u", "v"]).unwrap();
        let q = array![[1.0, 2.0], [3.0, 4.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(inject_noise(q.view(), &schema, &[0.0, 0.0], &mut rng).unwrap(), q);
    }

    #[test]
    fn noise_mean_is_zero() {
        let schema = ChannelSchema::all_delta(&["u"]).unwrap();
        let n = 100_000;
        let q = Array2::zeros((n, 1));
        let std = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noisy = inject_noise(q.view(), &schema, &[std], &mut rng).unwrap();
        let mean = noisy.sum() / n as f64;
        assert!(mean.abs() < 3.0 * std / (n as f64).sqrt(), "{mean}");
    }

    #[test]
    fn only_input_channels_change_and_type_block_is_untouched() {
        let schema = ChannelSchema::new(&["u", "p"], &["u"], &["u", "p"], &[]).unwrap();
        let mesh = Mesh::from_undirected(array![[0.0, 0.0], [1.0, 0.0]], vec![0, 2], 3, &[[0, 1]]).unwrap();
        let q = array![[1.0, 5.0], [2.0, 6.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noisy = inject_noise(q.view(), &schema, &[0.1], &mut rng).unwrap();
        assert_eq!(noisy.column(1), q.column(1));
        assert_ne!(noisy.column(0), q.column(0));
        let f = node_features(&mesh, &schema, noisy.view());
        assert_eq!(f.row(0).slice(ndarray::s![1..]).to_vec(), vec![1.0, 0.0, 0.0]);
        assert_eq!(f.row(1).slice(ndarray::s![1..]).to_vec(), vec![0.0, 0.0, 1.0]);
        assert!(inject_noise(q.view(), &schema, &[-1.0], &mut rng).is_err());
    }
}
