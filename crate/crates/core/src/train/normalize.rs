//! Running per-feature statistics used to standardize inputs and targets.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

pub const NORMALIZER_EPS: f64 = 1e-8;

/// Sufficient statistics of a batch: count, per-feature sum and sum of squares.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub count: f64,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl BatchStats {
    pub fn of(rows: ArrayView2<'_, f64>) -> Self {
        let w = rows.ncols();
        let mut sum = vec![0.0; w];
        let mut sum_sq = vec![0.0; w];
        for row in rows.rows() {
            for (j, &x) in row.iter().enumerate() {
                sum[j] += x;
                sum_sq[j] += x * x;
            }
        }
        Self {
            count: rows.nrows() as f64,
            sum,
            sum_sq,
        }
    }

    /// `[count, sum.., sum_sq..]`, the layout exchanged by allreduce.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + 2 * self.sum.len());
        v.push(self.count);
        v.extend_from_slice(&self.sum);
        v.extend_from_slice(&self.sum_sq);
        v
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        let w = (flat.len() - 1) / 2;
        Self {
            count: flat[0],
            sum: flat[1..1 + w].to_vec(),
            sum_sq: flat[1 + w..].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub count: f64,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
    pub eps: f64,
    /// Number of folded batches after which statistics stop changing.
    pub max_accumulations: u64,
    pub accumulations: u64,
}

impl Normalizer {
    pub fn new(width: usize, max_accumulations: u64) -> Self {
        Self {
            count: 0.0,
            sum: vec![0.0; width],
            sum_sq: vec![0.0; width],
            eps: NORMALIZER_EPS,
            max_accumulations,
            accumulations: 0,
        }
    }

    pub fn width(&self) -> usize {
        self.sum.len()
    }

    pub fn is_frozen(&self) -> bool {
        self.accumulations >= self.max_accumulations
    }

    pub fn fold(&mut self, batch: &BatchStats) -> Result<()> {
        if batch.sum.len() != self.width() {
            return Err(Error::Validation(format!(
                "batch width {} for normalizer of width {}",
                batch.sum.len(),
                self.width()
            )));
        }
        if self.is_frozen() {
            return Ok(());
        }
        self.count += batch.count;
        for j in 0..self.width() {
            self.sum[j] += batch.sum[j];
            self.sum_sq[j] += batch.sum_sq[j];
        }
        self.accumulations += 1;
        Ok(())
    }

    pub fn update(&mut self, rows: ArrayView2<'_, f64>) -> Result<()> {
        self.fold(&BatchStats::of(rows))
    }

    pub fn mean(&self) -> Array1<f64> {
        if self.count == 0.0 {
            return Array1::zeros(self.width());
        }
        self.sum.iter().map(|s| s / self.count).collect()
    }

    /// Population standard deviation, floored at `eps`.
    pub fn std(&self) -> Array1<f64> {
        if self.count == 0.0 {
            return Array1::ones(self.width());
        }
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(s, sq)| {
                let mean = s / self.count;
                (sq / self.count - mean * mean).max(0.0).sqrt().max(self.eps)
            })
            .collect()
    }

    pub fn normalize(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        (&x - &self.mean()) / &self.std()
    }

    pub fn denormalize(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        &x * &self.std() + &self.mean()
    }
}

/// The three normalizers of a model: node inputs, edge inputs, targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizers {
    pub node: Normalizer,
    pub edge: Normalizer,
    pub target: Normalizer,
}

impl Normalizers {
    pub fn new(node_width: usize, edge_width: usize, target_width: usize, horizon: u64) -> Self {
        Self {
            node: Normalizer::new(node_width, horizon),
            edge: Normalizer::new(edge_width, horizon),
            target: Normalizer::new(target_width, horizon),
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.node.is_frozen() && self.edge.is_frozen() && self.target.is_frozen()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mean_and_population_std() {
        let mut n = Normalizer::new(1, 10);
        n.update(array![[0.0], [2.0]].view()).unwrap();
        assert_eq!(n.mean()[0], 1.0);
        assert_eq!(n.std()[0], 1.0);
        assert_eq!(n.normalize(array![[1.0]].view())[[0, 0]], 0.0);
    }

    #[test]
    fn denormalize_inverts() {
        let mut n = Normalizer::new(2, 10);
        n.update(array![[0.3, 10.0], [2.0, -4.0], [1.1, 7.0]].view()).unwrap();
        let x = array![[0.7, 3.0], [-12.0, 1e3]];
        let back = n.denormalize(n.normalize(x.view()).view());
        for (a, b) in back.iter().zip(x.iter()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn constant_feature_uses_eps_floor() {
        let mut n = Normalizer::new(1, 10);
        n.update(array![[3.0], [3.0]].view()).unwrap();
        assert_eq!(n.std()[0], NORMALIZER_EPS);
        assert_eq!(n.normalize(array![[3.0]].view())[[0, 0]], 0.0);
    }

    #[test]
    fn freezes_after_horizon() {
        let mut n = Normalizer::new(1, 1);
        n.update(array![[1.0]].view()).unwrap();
        n.update(array![[100.0]].view()).unwrap();
        assert_eq!(n.mean()[0], 1.0);
        assert!(n.is_frozen());
    }

    #[test]
    fn split_batches_fold_to_the_same_stats() {
        let x = array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.25]];
        let mut whole = Normalizer::new(2, 5);
        whole.update(x.view()).unwrap();
        let a = BatchStats::of(x.slice(ndarray::s![..1, ..]));
        let b = BatchStats::of(x.slice(ndarray::s![1.., ..]));
        let merged: Vec<f64> = a.to_flat().iter().zip(b.to_flat()).map(|(x, y)| x + y).collect();
        let mut split = Normalizer::new(2, 5);
        split.fold(&BatchStats::from_flat(&merged)).unwrap();
        assert_eq!(whole.count, split.count);
        for (u, v) in whole.mean().iter().zip(split.mean().iter()) {
            assert!((u - v).abs() < 1e-15);
        }
    }
}
