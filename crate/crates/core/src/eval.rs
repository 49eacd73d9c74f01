//! Rollouts and error metrics in physical units.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{output_channels, Trajectory};
use crate::model::apply_delta;
use crate::train::Simulator;

/// |e(σ)| above this marks a prediction as near-stationary.
pub const STATIONARY_THRESHOLD: f64 = 0.8;

/// Anything that maps a state to a physical-unit output (increments for
/// delta channels, values for direct channels).
pub trait Predictor {
    fn predict(&self, traj: &Trajectory, t: usize, state: ArrayView2<'_, f64>) -> Result<Array2<f64>>;
}

impl Predictor for Simulator {
    fn predict(&self, traj: &Trajectory, _t: usize, state: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.predict_state(traj.mesh(), state)
    }
}

/// Predicts "no change".
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityModel;

impl Predictor for IdentityModel {
    fn predict(&self, traj: &Trajectory, _t: usize, state: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let schema = traj.schema();
        let mut out = output_channels(schema, state);
        for (g, &direct) in schema.direct().iter().enumerate() {
            if !direct {
                out.column_mut(g).fill(0.0);
            }
        }
        Ok(out)
    }
}

/// Reads the answer off the trajectory: the output that maps `state` onto
/// the true state at `t + 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleModel;

impl Predictor for OracleModel {
    fn predict(&self, traj: &Trajectory, t: usize, state: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let schema = traj.schema();
        let next = traj
            .states()
            .get(t + 1)
            .ok_or_else(|| Error::Validation(format!("oracle has no state after {t}")))?;
        let mut out = output_channels(schema, next.view());
        let now = output_channels(schema, state);
        for (g, &direct) in schema.direct().iter().enumerate() {
            if !direct {
                let mut col = out.column_mut(g);
                col -= &now.column(g);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub t0: usize,
    /// Predicted full states for steps `t0 + 1 ..= t0 + k`.
    pub states: Vec<Array2<f64>>,
}

impl RolloutResult {
    pub fn steps(&self) -> usize {
        self.states.len()
    }
}

/// Feeds each prediction back as the next input, starting from the true
/// state at `t0`.
pub fn rollout<M: Predictor + ?Sized>(model: &M, traj: &Trajectory, t0: usize, k: usize) -> Result<RolloutResult> {
    if t0 + k >= traj.len() {
        return Err(Error::Validation(format!(
            "rollout of {k} steps from {t0} overruns trajectory of {} states",
            traj.len()
        )));
    }
    let mut state = traj.states()[t0].clone();
    let mut states = Vec::with_capacity(k);
    for t in t0..t0 + k {
        let out = model.predict(traj, t, state.view())?;
        state = apply_delta(state.view(), out.view(), traj.schema())?;
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("rollout produced non-finite state at step {}", t + 1)));
        }
        states.push(state.clone());
    }
    Ok(RolloutResult { t0, states })
}

fn squared_error(pred: &[Array2<f64>], truth: &[Array2<f64>], channels: &[usize]) -> Result<(f64, f64)> {
    if pred.len() != truth.len() {
        return Err(Error::Validation(format!("{} predicted vs {} true states", pred.len(), truth.len())));
    }
    let mut sse = 0.0;
    let mut count = 0.0;
    for (a, b) in pred.iter().zip(truth) {
        if a.dim() != b.dim() {
            return Err(Error::Validation(format!("state shapes {:?} vs {:?}", a.dim(), b.dim())));
        }
        for &c in channels {
            sse += a.column(c).iter().zip(b.column(c)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
            count += a.nrows() as f64;
        }
    }
    Ok((sse, count))
}

/// Root mean squared error over steps, nodes and the given channels.
pub fn rmse(pred: &[Array2<f64>], truth: &[Array2<f64>], channels: &[usize]) -> Result<f64> {
    let (sse, count) = squared_error(pred, truth, channels)?;
    if count == 0.0 {
        return Err(Error::Validation("rmse over nothing".into()));
    }
    Ok((sse / count).sqrt())
}

/// RMSE of a rollout against the trajectory it started from, output channels.
pub fn rollout_rmse(result: &RolloutResult, traj: &Trajectory) -> Result<f64> {
    let truth = &traj.states()[result.t0 + 1..result.t0 + 1 + result.steps()];
    rmse(&result.states, truth, traj.schema().outputs())
}

/// RMSE pooled over one-step predictions seeded at every time index.
pub fn nextstep_error<M: Predictor + ?Sized>(model: &M, traj: &Trajectory) -> Result<f64> {
    let mut sse = 0.0;
    let mut count = 0.0;
    for t in 0..traj.len() - 1 {
        let r = rollout(model, traj, t, 1)?;
        let (s, c) = squared_error(&r.states, &traj.states()[t + 1..t + 2], traj.schema().outputs())?;
        sse += s;
        count += c;
    }
    Ok((sse / count).sqrt())
}

/// `|pred - target| / (max(target) - min(target))` per node.
#[derive(Debug, Clone, PartialEq)]
pub enum NormalizedError {
    Field(Array1<f64>),
    /// The target is constant, so the range is zero.
    Undefined,
}

pub fn normalized_error_field(pred: ArrayView1<'_, f64>, target: ArrayView1<'_, f64>) -> Result<NormalizedError> {
    if pred.len() != target.len() {
        return Err(Error::Validation(format!("field lengths {} vs {}", pred.len(), target.len())));
    }
    let max = target.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = target.iter().copied().fold(f64::INFINITY, f64::min);
    let range = max - min;
    if !(range > 0.0) {
        return Ok(NormalizedError::Undefined);
    }
    Ok(NormalizedError::Field(
        pred.iter().zip(target).map(|(a, b)| (a - b).abs() / range).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalStats {
    /// Mean over nodes, channels and time.
    pub mean: f64,
    /// Per-(node, channel) temporal population std, averaged.
    pub std: f64,
}

/// Per-(node, channel) population standard deviation over time.
pub fn temporal_std_field(states: &[Array2<f64>]) -> Array2<f64> {
    let t = states.len() as f64;
    let mut sum = Array2::<f64>::zeros(states[0].raw_dim());
    for s in states {
        sum += s;
    }
    let mean = sum / t;
    let mut var = Array2::<f64>::zeros(mean.raw_dim());
    for s in states {
        var.zip_mut_with(&(s - &mean), |v, d| *v += d * d);
    }
    var.mapv(|v| (v / t).sqrt())
}

/// Temporal statistics of `T` states of shape `nodes x channels`.
pub fn temporal_stats(states: &[Array2<f64>]) -> Result<TemporalStats> {
    let first = states.first().ok_or_else(|| Error::Validation("temporal stats of no states".into()))?;
    if states.iter().any(|s| s.dim() != first.dim()) || first.is_empty() {
        return Err(Error::Validation("temporal stats need equal, non-empty state shapes".into()));
    }
    let cells = first.len() as f64;
    let total: f64 = states.iter().map(|s| s.sum()).sum();
    Ok(TemporalStats {
        mean: total / (cells * states.len() as f64),
        std: temporal_std_field(states).sum() / cells,
    })
}

/// `(pred - truth) / truth`, or `None` when `truth` is zero.
pub fn relative_error(pred: f64, truth: f64) -> Option<f64> {
    (truth != 0.0).then(|| (pred - truth) / truth)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Horizon {
    Steps(usize),
    /// Every remaining step of the trajectory from `t = 0`.
    Full,
}

impl Horizon {
    pub fn label(&self) -> String {
        match self {
            Horizon::Steps(n) => n.to_string(),
            Horizon::Full => "full".into(),
        }
    }

    /// Parses `"1,50,full"`.
    pub fn parse_list(s: &str) -> Result<Vec<Horizon>> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| match t {
                "full" | "all" => Ok(Horizon::Full),
                n => n
                    .parse::<usize>()
                    .ok()
                    .filter(|&n| n > 0)
                    .map(Horizon::Steps)
                    .ok_or_else(|| Error::Config(format!("bad horizon {t:?}"))),
            })
            .collect()
    }
}

/// Mean with sample-std standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
    /// Set when `n < 2`: the standard error is 0 by convention.
    pub single_sample: bool,
}

pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::Validation("aggregate of no values".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std_error = if n < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        var.sqrt() / (n as f64).sqrt()
    };
    Ok(Aggregate {
        mean,
        std_error,
        n,
        single_sample: n < 2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryMetrics {
    pub name: String,
    /// One RMSE per requested horizon.
    pub rmse: Vec<f64>,
    pub nextstep: f64,
    /// Relative error of the temporal mean over a full rollout; `None` when
    /// the true statistic is zero.
    pub e_mean: Option<f64>,
    pub e_std: Option<f64>,
    pub stationary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub horizons: Vec<Horizon>,
    pub trajectories: Vec<TrajectoryMetrics>,
    pub rmse: Vec<Aggregate>,
    pub nextstep: Aggregate,
    pub e_mean: Option<Aggregate>,
    pub e_std: Option<Aggregate>,
    /// Trajectories whose predicted temporal std is off by more than
    /// [`STATIONARY_THRESHOLD`].
    pub stationary_count: usize,
}

pub fn evaluate_trajectory<M: Predictor + ?Sized>(
    model: &M,
    traj: &Trajectory,
    name: &str,
    horizons: &[Horizon],
) -> Result<TrajectoryMetrics> {
    let full = traj.len() - 1;
    let outputs = traj.schema().outputs();
    let long = rollout(model, traj, 0, full)?;
    let mut rmse_values = Vec::with_capacity(horizons.len());
    for h in horizons {
        let k = match *h {
            Horizon::Full => full,
            Horizon::Steps(k) if k <= full => k,
            Horizon::Steps(k) => {
                return Err(Error::Validation(format!(
                    "horizon {k} exceeds the {full} steps of trajectory {name}"
                )))
            }
        };
        rmse_values.push(rmse(&long.states[..k], &traj.states()[1..=k], outputs)?);
    }
    let select = |s: &[Array2<f64>]| -> Vec<Array2<f64>> { s.iter().map(|x| output_channels(traj.schema(), x.view())).collect() };
    let pred_stats = temporal_stats(&select(&long.states))?;
    let true_stats = temporal_stats(&select(&traj.states()[1..]))?;
    let e_std = relative_error(pred_stats.std, true_stats.std);
    Ok(TrajectoryMetrics {
        name: name.to_string(),
        rmse: rmse_values,
        nextstep: nextstep_error(model, traj)?,
        e_mean: relative_error(pred_stats.mean, true_stats.mean),
        stationary: e_std.is_some_and(|e| e.abs() > STATIONARY_THRESHOLD),
        e_std,
    })
}

/// Metrics for every trajectory of a set, plus their aggregates.
pub fn evaluate_set<M: Predictor + ?Sized>(
    model: &M,
    trajectories: &[(String, Trajectory)],
    horizons: &[Horizon],
) -> Result<MetricReport> {
    if trajectories.is_empty() {
        return Err(Error::Validation("evaluation set is empty".into()));
    }
    if horizons.is_empty() {
        return Err(Error::Config("no evaluation horizons".into()));
    }
    let per = trajectories
        .iter()
        .map(|(name, t)| evaluate_trajectory(model, t, name, horizons))
        .collect::<Result<Vec<_>>>()?;
    let rmse = (0..horizons.len())
        .map(|h| aggregate(&per.iter().map(|m| m.rmse[h]).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    let opt_agg = |vals: Vec<f64>| if vals.is_empty() { Ok(None) } else { aggregate(&vals).map(Some) };
    Ok(MetricReport {
        horizons: horizons.to_vec(),
        rmse,
        nextstep: aggregate(&per.iter().map(|m| m.nextstep).collect::<Vec<_>>())?,
        e_mean: opt_agg(per.iter().filter_map(|m| m.e_mean).collect())?,
        e_std: opt_agg(per.iter().filter_map(|m| m.e_std).collect())?,
        stationary_count: per.iter().filter(|m| m.stationary).count(),
        trajectories: per,
    })
}

impl MetricReport {
    /// One row per (trajectory, horizon, metric); aggregate rows use the
    /// trajectory names `mean` and `std_error`. Relative errors are percent.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trajectory,horizon,metric,value\n");
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "undefined".into());
        for m in &self.trajectories {
            for (h, v) in self.horizons.iter().zip(&m.rmse) {
                writeln!(out, "{},{},rmse,{v}", m.name, h.label()).unwrap();
            }
            writeln!(out, "{},1,nextstep,{}", m.name, m.nextstep).unwrap();
            writeln!(out, "{},full,e_mean_pct,{}", m.name, fmt(m.e_mean.map(|e| 100.0 * e))).unwrap();
            writeln!(out, "{},full,e_std_pct,{}", m.name, fmt(m.e_std.map(|e| 100.0 * e))).unwrap();
            writeln!(out, "{},full,stationary,{}", m.name, m.stationary as u8).unwrap();
        }
        let mut agg = |metric: &str, h: &str, a: &Aggregate, scale: f64| {
            writeln!(out, "mean,{h},{metric},{}", scale * a.mean).unwrap();
            writeln!(out, "std_error,{h},{metric},{}", scale * a.std_error).unwrap();
        };
        for (h, a) in self.horizons.iter().zip(&self.rmse) {
            agg("rmse", &h.label(), a, 1.0);
        }
        agg("nextstep", "1", &self.nextstep, 1.0);
        if let Some(a) = &self.e_mean {
            agg("e_mean_pct", "full", a, 100.0);
        }
        if let Some(a) = &self.e_std {
            agg("e_std_pct", "full", a, 100.0);
        }
        writeln!(out, "count,full,stationary,{}", self.stationary_count).unwrap();
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for (h, a) in self.horizons.iter().zip(&self.rmse) {
            writeln!(out, "rmse[{}] = {:.4e} ± {:.2e}", h.label(), a.mean, a.std_error).unwrap();
        }
        writeln!(out, "nextstep = {:.4e} ± {:.2e}", self.nextstep.mean, self.nextstep.std_error).unwrap();
        if let Some(a) = &self.e_mean {
            writeln!(out, "e(mean) = {:+.1}%", 100.0 * a.mean).unwrap();
        }
        if let Some(a) = &self.e_std {
            writeln!(out, "e(std)  = {:+.1}%", 100.0 * a.mean).unwrap();
        }
        writeln!(
            out,
            "near-stationary predictions: {} of {}",
            self.stationary_count,
            self.trajectories.len()
        )
        .unwrap();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{ChannelSchema, Mesh};
    use ndarray::array;

    fn ramp(d: f64, t: usize) -> Trajectory {
        let mesh = Mesh::from_undirected(array![[0.0, 0.0], [1.0, 0.0]], vec![0, 0], 1, &[[0, 1]]).unwrap();
        let states = (0..t).map(|k| array![[k as f64 * d], [1.0 + k as f64 * d]]).collect();
        Trajectory::new(mesh, ChannelSchema::all_delta(&["u"]).unwrap(), states).unwrap()
    }

    #[test]
    fn identity_and_oracle_rollouts() {
        let traj = ramp(0.5, 6);
        let id = rollout(&IdentityModel, &traj, 1, 3).unwrap();
        assert!(id.states.iter().all(|s| s == &traj.states()[1]));
        let or = rollout(&OracleModel, &traj, 0, 5).unwrap();
        assert!(rollout_rmse(&or, &traj).unwrap() < 1e-12);
        assert!(rollout(&OracleModel, &traj, 2, 4).is_err());
    }

    #[test]
    fn rmse_examples() {
        let z = vec![array![[0.0], [0.0]]];
        assert_eq!(rmse(&z, &z, &[0]).unwrap(), 0.0);
        assert_eq!(rmse(&[array![[1.0], [1.0]]], &z, &[0]).unwrap(), 1.0);
        let e = rmse(&[array![[0.0], [2.0]]], &z, &[0]).unwrap();
        assert!((e - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn nextstep_closed_form() {
        let traj = ramp(0.25, 5);
        assert!((nextstep_error(&IdentityModel, &traj).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(nextstep_error(&OracleModel, &traj).unwrap(), 0.0);
        let two = ramp(0.3, 2);
        let one = rollout_rmse(&rollout(&IdentityModel, &two, 0, 1).unwrap(), &two).unwrap();
        assert_eq!(nextstep_error(&IdentityModel, &two).unwrap(), one);
    }

    #[test]
    fn normalized_error_examples() {
        let phi = array![0.0, 1.0, 4.0];
        let NormalizedError::Field(e) = normalized_error_field(array![0.0, 2.0, 4.0].view(), phi.view()).unwrap() else {
            panic!("defined")
        };
        assert_eq!(e, array![0.0, 0.25, 0.0]);
        assert_eq!(
            normalized_error_field(phi.view(), phi.view()).unwrap(),
            NormalizedError::Field(array![0.0, 0.0, 0.0])
        );
        let flat = array![2.0, 2.0];
        assert_eq!(normalized_error_field(flat.view(), flat.view()).unwrap(), NormalizedError::Undefined);
    }

    #[test]
    fn temporal_stats_examples() {
        let s = temporal_stats(&[array![[0.0]], array![[2.0]]]).unwrap();
        assert_eq!((s.mean, s.std), (1.0, 1.0));
        let c = temporal_stats(&[array![[3.0, 3.0]], array![[3.0, 3.0]]]).unwrap();
        assert_eq!((c.mean, c.std), (3.0, 0.0));
    }

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_error(1.0, 1.0), Some(0.0));
        assert!((relative_error(0.09, 1.0).unwrap() + 0.91).abs() < 1e-15);
        assert_eq!(relative_error(2.0, 1.0), Some(1.0));
        assert_eq!(relative_error(2.0, 0.0), None);
    }

    #[test]
    fn aggregate_examples() {
        let a = aggregate(&[1.0, 3.0]).unwrap();
        assert_eq!((a.mean, a.std_error), (2.0, 1.0));
        let s = aggregate(&[5.0]).unwrap();
        assert!(s.single_sample && s.std_error == 0.0);
    }

    #[test]
    fn oracle_report_is_zero() {
        let set = vec![("a".to_string(), ramp(0.1, 6)), ("b".to_string(), ramp(0.2, 6))];
        let r = evaluate_set(&OracleModel, &set, &[Horizon::Steps(1), Horizon::Full]).unwrap();
        assert!(r.rmse.iter().all(|a| a.mean < 1e-12));
        assert_eq!(r.stationary_count, 0);
        let id = evaluate_set(&IdentityModel, &set, &Horizon::parse_list("1,full").unwrap()).unwrap();
        assert_eq!(id.stationary_count, 2);
        assert!(id.to_csv().contains("a,full,e_std_pct,-100"));
    }
}
