//! k-cluster mixture extension of a forward model and its fitting.
//!
//! Every reading `i` is explained by one of `k` parameter vectors, selected by
//! a latent label `z_i` with prior probabilities `omega` (symmetric Dirichlet
//! hyper-prior with concentration `gamma`). Densities are kept in log space
//! and always omit the same additive constants, so values are comparable
//! between calls with the same `k`.
//!
//! Cluster labels are 0-based throughout the API; CSV output numbers clusters
//! from 1.
//!
//! Two fitting schemes are provided:
//! - [`em_fit`] maximizes the marginal posterior of `(thetas, omega)` and
//!   returns soft assignments (responsibilities);
//! - [`cem_fit`] maximizes the full posterior including the labels and returns
//!   hard assignments.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ForwardModel, ParameterSpace};
use crate::optimize::{nelder_mead, NmSettings};

/// Floor applied to weights produced by the closed-form update.
pub const MIN_WEIGHT: f64 = 1e-10;

/// Tolerance for flagging decreases of the EM objective.
pub const MONOTONICITY_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MStepMode {
    /// Closed-form weights plus one Nelder–Mead solve per cluster on the
    /// responsibility-weighted objective.
    #[default]
    Elbo,
    /// One Nelder–Mead solve on all parameters and softmax weights jointly,
    /// minimizing the negative log marginal posterior.
    Direct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixtureConfig {
    pub k: usize,
    pub gamma: f64,
    pub em_iters: usize,
    pub nm: NmSettings,
    pub seed: u64,
    pub restarts: usize,
    pub m_step: MStepMode,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        Self {
            k: 2,
            gamma: 1.0,
            em_iters: 50,
            nm: NmSettings::default(),
            seed: 0,
            restarts: 1,
            m_step: MStepMode::Elbo,
        }
    }
}

impl MixtureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::invalid("gamma must be positive"));
        }
        if self.em_iters == 0 {
            return Err(Error::invalid("em_iters must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be at least 1"));
        }
        self.nm.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Em,
    Cem,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureFit {
    pub method: FitMethod,
    pub thetas: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// `n x k`, row `i` holds `P(z_i = j)`.
    pub responsibilities: Vec<Vec<f64>>,
    pub hard_assignment: Vec<usize>,
    /// Objective after each iteration: the log marginal posterior for EM,
    /// the log full posterior for CEM.
    pub trace: Vec<f64>,
    /// Objective at the initial point of the returned run.
    pub initial_objective: f64,
    /// Iterations whose objective dropped by more than [`MONOTONICITY_TOL`].
    pub decreases: Vec<usize>,
    /// Which restart produced the returned fit.
    pub restart: usize,
}

impl MixtureFit {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn final_objective(&self) -> f64 {
        *self.trace.last().expect("trace is never empty")
    }

    /// Reading indices whose hard assignment is `cluster`.
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.hard_assignment
            .iter()
            .enumerate()
            .filter(|(_, &z)| z == cluster)
            .map(|(i, _)| i)
            .collect()
    }

    /// Index of the heaviest cluster (lowest index on ties).
    pub fn dominant_cluster(&self) -> usize {
        argmax(&self.weights)
    }

    /// Writes `cluster,weight,theta_1..theta_m`.
    pub fn write_params_csv<W: Write>(&self, writer: W) -> Result<()> {
        let m = self.thetas.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["cluster".to_string(), "weight".to_string()];
        header.extend((1..=m).map(|j| format!("theta_{j}")));
        w.write_record(&header)?;
        for (j, (theta, wt)) in self.thetas.iter().zip(&self.weights).enumerate() {
            let mut row = vec![(j + 1).to_string(), wt.to_string()];
            row.extend(theta.iter().map(|t| t.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `reading_index,sensor_id,time_index,p_1..p_k`.
    pub fn write_responsibilities_csv<W: Write>(&self, writer: W, data: &Dataset) -> Result<()> {
        if data.len() != self.responsibilities.len() {
            return Err(Error::DimensionMismatch {
                expected: self.responsibilities.len(),
                got: data.len(),
            });
        }
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![
            "reading_index".to_string(),
            "sensor_id".to_string(),
            "time_index".to_string(),
        ];
        header.extend((1..=self.k()).map(|j| format!("p_{j}")));
        w.write_record(&header)?;
        for (i, (row, x)) in self.responsibilities.iter().zip(data.inputs()).enumerate() {
            let mut rec = vec![i.to_string(), x.sensor_id.to_string(), x.time_index.to_string()];
            rec.extend(row.iter().map(|p| p.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads back a responsibilities CSV: `(sensor_id, time_index)` per row and the matrix.
pub fn read_responsibilities_csv<R: std::io::Read>(
    reader: R,
) -> Result<(Vec<(usize, usize)>, Vec<Vec<f64>>)> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    if header.len() < 4 || &header[0] != "reading_index" {
        return Err(Error::invalid("responsibilities header must start with reading_index"));
    }
    let mut labels = Vec::new();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |j: usize| -> Result<f64> {
            rec.get(j)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::invalid(format!("bad responsibilities field in column {j}")))
        };
        labels.push((num(1)? as usize, num(2)? as usize));
        rows.push((3..header.len()).map(num).collect::<Result<Vec<_>>>()?);
    }
    Ok((labels, rows))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (j, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = j;
        }
    }
    best
}

/// Order-independent log-sum-exp: terms are summed in sorted order so that
/// permuting the input gives a bitwise identical result.
fn log_sum_exp(values: &[f64]) -> f64 {
    let mx = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if mx == f64::INFINITY {
        return f64::INFINITY;
    }
    let mut shifted: Vec<f64> = values.iter().map(|v| (v - mx).exp()).collect();
    shifted.sort_by(f64::total_cmp);
    mx + shifted.iter().sum::<f64>().ln()
}

fn sorted_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

fn check_thetas(space: &ParameterSpace, thetas: &[Vec<f64>]) -> Result<()> {
    if thetas.is_empty() {
        return Err(Error::invalid("need at least one cluster"));
    }
    for t in thetas {
        if t.len() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                got: t.len(),
            });
        }
    }
    Ok(())
}

fn check_omega(omega: &[f64], k: usize) -> Result<()> {
    if omega.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: omega.len(),
        });
    }
    if omega.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::invalid("weights must be nonnegative"));
    }
    let s: f64 = omega.iter().sum();
    if (s - 1.0).abs() > 1e-8 {
        return Err(Error::invalid(format!("weights must sum to 1, got {s}")));
    }
    Ok(())
}

/// Log-kernel matrix `-(y_i - f(xi_i, theta_j))^2 / (2 sigma_i^2)`, `n x k`.
/// Clusters are evaluated concurrently.
pub fn log_kernels<M: ForwardModel + ?Sized>(
    data: &Dataset,
    model: &M,
    thetas: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let cols: Vec<Vec<f64>> = thetas
        .par_iter()
        .map(|t| cluster_log_kernel(data, model, t))
        .collect::<Result<_>>()?;
    Ok((0..data.len())
        .map(|i| cols.iter().map(|c| c[i]).collect())
        .collect())
}

fn cluster_log_kernel<M: ForwardModel + ?Sized>(
    data: &Dataset,
    model: &M,
    theta: &[f64],
) -> Result<Vec<f64>> {
    let pred = model.predict_batch(data.inputs(), theta)?;
    if pred.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            got: pred.len(),
        });
    }
    Ok(data
        .readings()
        .iter()
        .zip(&pred)
        .zip(data.noise_sd())
        .map(|((y, f), s)| {
            let r = (y - f) / s;
            -0.5 * r * r
        })
        .collect())
}

/// `sum_j [log pi(theta_j) + (gamma - 1) log omega_j]`.
fn log_parameter_prior(space: &ParameterSpace, thetas: &[Vec<f64>], omega: &[f64], gamma: f64) -> Result<f64> {
    let mut terms = Vec::with_capacity(thetas.len());
    for (t, &w) in thetas.iter().zip(omega) {
        let lp = space.log_prior(t)?;
        let hyper = if gamma == 1.0 {
            0.0
        } else if w <= 0.0 {
            f64::NEG_INFINITY
        } else {
            (gamma - 1.0) * w.ln()
        };
        terms.push(lp + hyper);
    }
    Ok(sorted_sum(terms))
}

/// Log of the likelihood kernel for a fixed assignment `z` (0-based labels).
pub fn log_likelihood<M: ForwardModel + ?Sized>(
    data: &Dataset,
    model: &M,
    z: &[usize],
    thetas: &[Vec<f64>],
) -> Result<f64> {
    if z.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            got: z.len(),
        });
    }
    if let Some(&bad) = z.iter().find(|&&j| j >= thetas.len()) {
        return Err(Error::invalid(format!("cluster label {bad} out of range for k={}", thetas.len())));
    }
    let l = log_kernels(data, model, thetas)?;
    Ok(l.iter().zip(z).map(|(row, &j)| row[j]).sum())
}

/// Log full posterior of `(z, thetas, omega)` up to a fixed additive constant.
pub fn log_full_posterior<M: ForwardModel + ?Sized>(
    data: &Dataset,
    model: &M,
    space: &ParameterSpace,
    z: &[usize],
    thetas: &[Vec<f64>],
    omega: &[f64],
    gamma: f64,
) -> Result<f64> {
    check_thetas(space, thetas)?;
    check_omega(omega, thetas.len())?;
    if z.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            got: z.len(),
        });
    }
    if let Some(&bad) = z.iter().find(|&&j| j >= thetas.len()) {
        return Err(Error::invalid(format!("cluster label {bad} out of range for k={}", thetas.len())));
    }
    let l = log_kernels(data, model, thetas)?;
    full_from_kernels(&l, space, z, thetas, omega, gamma)
}

fn full_from_kernels(
    l: &[Vec<f64>],
    space: &ParameterSpace,
    z: &[usize],
    thetas: &[Vec<f64>],
    omega: &[f64],
    gamma: f64,
) -> Result<f64> {
    let prior = log_parameter_prior(space, thetas, omega, gamma)?;
    let data_term: f64 = l
        .iter()
        .zip(z)
        .map(|(row, &j)| omega[j].ln() + row[j])
        .sum();
    Ok(data_term + prior)
}

/// Log marginal posterior of `(thetas, omega)` with the labels summed out.
pub fn log_marginal_posterior<M: ForwardModel + ?Sized>(
    data: &Dataset,
    model: &M,
    space: &ParameterSpace,
    thetas: &[Vec<f64>],
    omega: &[f64],
    gamma: f64,
) -> Result<f64> {
    check_thetas(space, thetas)?;
    check_omega(omega, thetas.len())?;
    let l = log_kernels(data, model, thetas)?;
    marginal_from_kernels(&l, space, thetas, omega, gamma)
}

fn marginal_from_kernels(
    l: &[Vec<f64>],
    space: &ParameterSpace,
    thetas: &[Vec<f64>],
    omega: &[f64],
    gamma: f64,
) -> Result<f64> {
    let prior = log_parameter_prior(space, thetas, omega, gamma)?;
    let log_w: Vec<f64> = omega.iter().map(|w| w.ln()).collect();
    let mut buf = vec![0.0; omega.len()];
    let mut total = 0.0;
    for row in l {
        for ((b, lw), lk) in buf.iter_mut().zip(&log_w).zip(row) {
            *b = lw + lk;
        }
        total += log_sum_exp(&buf);
    }
    Ok(total + prior)
}

fn responsibilities_from_kernels(l: &[Vec<f64>], omega: &[f64]) -> Vec<Vec<f64>> {
    let log_w: Vec<f64> = omega.iter().map(|w| w.ln()).collect();
    l.iter()
        .map(|row| {
            let num: Vec<f64> = row.iter().zip(&log_w).map(|(lk, lw)| lk + lw).collect();
            let lse = log_sum_exp(&num);
            num.iter().map(|v| (v - lse).exp()).collect()
        })
        .collect()
}

/// Posterior label probabilities `P(z_i = j)` given parameters and weights.
pub fn responsibilities<M: ForwardModel + ?Sized>(
    data: &Dataset,
    model: &M,
    thetas: &[Vec<f64>],
    omega: &[f64],
) -> Result<Vec<Vec<f64>>> {
    check_omega(omega, thetas.len())?;
    if omega.iter().all(|w| *w == 0.0) {
        return Err(Error::invalid("all weights are zero"));
    }
    let l = log_kernels(data, model, thetas)?;
    Ok(responsibilities_from_kernels(&l, omega))
}

/// Hard labels: per row the argmax, lowest index on ties.
pub fn hard_assignment(responsibilities: &[Vec<f64>]) -> Vec<usize> {
    responsibilities.iter().map(|r| argmax(r)).collect()
}

fn classify(l: &[Vec<f64>], omega: &[f64]) -> Vec<usize> {
    let log_w: Vec<f64> = omega.iter().map(|w| w.ln()).collect();
    l.iter()
        .map(|row| {
            let num: Vec<f64> = row.iter().zip(&log_w).map(|(a, b)| a + b).collect();
            argmax(&num)
        })
        .collect()
}

fn one_hot(z: &[usize], k: usize) -> Vec<Vec<f64>> {
    z.iter()
        .map(|&j| {
            let mut r = vec![0.0; k];
            r[j] = 1.0;
            r
        })
        .collect()
}

/// Closed-form Dirichlet-MAP weight update from column sums of `R`.
pub fn update_weights(responsibilities: &[Vec<f64>], k: usize, gamma: f64) -> Vec<f64> {
    let n = responsibilities.len() as f64;
    let mut counts = vec![0.0; k];
    for row in responsibilities {
        for (c, r) in counts.iter_mut().zip(row) {
            *c += r;
        }
    }
    let denom = n + k as f64 * (gamma - 1.0);
    let mut w: Vec<f64> = counts
        .iter()
        .map(|c| ((c + gamma - 1.0) / denom).max(MIN_WEIGHT))
        .collect();
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    w
}

/// Maximizes `sum_i w_i * (-(y_i - f)^2 / (2 sigma_i^2)) + log pi(theta)` over
/// the box with Nelder–Mead in unit coordinates.
fn fit_weighted<M: ForwardModel + ?Sized>(
    data: &Dataset,
    model: &M,
    space: &ParameterSpace,
    weights: &[f64],
    theta_init: &[f64],
    nm: &NmSettings,
) -> Result<Vec<f64>> {
    let (u0, _) = space.to_unit(theta_init)?;
    let objective = |u: &[f64]| -> Result<f64> {
        let (theta, _) = space.from_unit(u)?;
        let lp = space.log_prior(&theta)?;
        if lp == f64::NEG_INFINITY {
            return Ok(f64::INFINITY);
        }
        let lk = cluster_log_kernel(data, model, &theta)?;
        let ll: f64 = lk.iter().zip(weights).map(|(a, w)| a * w).sum();
        Ok(-(ll + lp))
    };
    let res = nelder_mead(objective, &u0, nm)?;
    Ok(space.from_unit(&res.x)?.0)
}

/// One M-step: closed-form weights and per-cluster parameter updates,
/// the clusters solved concurrently.
pub fn m_step<M: ForwardModel + ?Sized>(
    data: &Dataset,
    model: &M,
    space: &ParameterSpace,
    responsibilities: &[Vec<f64>],
    gamma: f64,
    nm: &NmSettings,
    thetas_init: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    check_thetas(space, thetas_init)?;
    let k = thetas_init.len();
    if responsibilities.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            got: responsibilities.len(),
        });
    }
    if let Some(row) = responsibilities.iter().find(|r| r.len() != k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: row.len(),
        });
    }
    let omega = update_weights(responsibilities, k, gamma);
    let thetas = thetas_init
        .par_iter()
        .enumerate()
        .map(|(j, t0)| {
            let w: Vec<f64> = responsibilities.iter().map(|r| r[j]).collect();
            fit_weighted(data, model, space, &w, t0, nm).map_err(|e| Error::Cluster {
                cluster: j,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((thetas, omega))
}

const LOGIT_SCALE: f64 = 20.0;

/// M-step variant that runs one Nelder–Mead on the stacked parameters and
/// softmax weight logits, minimizing the negative log marginal posterior.
pub fn m_step_direct<M: ForwardModel + ?Sized>(
    data: &Dataset,
    model: &M,
    space: &ParameterSpace,
    gamma: f64,
    nm: &NmSettings,
    thetas_init: &[Vec<f64>],
    omega_init: &[f64],
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    check_thetas(space, thetas_init)?;
    let k = thetas_init.len();
    check_omega(omega_init, k)?;
    let m = space.dim();
    let last = omega_init[k - 1].max(MIN_WEIGHT);
    let mut u0 = Vec::with_capacity(k * m + k - 1);
    for t in thetas_init {
        u0.extend(space.to_unit(t)?.0);
    }
    for w in &omega_init[..k - 1] {
        let logit = (w.max(MIN_WEIGHT) / last).ln();
        u0.push((0.5 + logit / LOGIT_SCALE).clamp(0.0, 1.0));
    }
    let unpack = |u: &[f64]| -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let thetas = (0..k)
            .map(|j| space.from_unit(&u[j * m..(j + 1) * m]).map(|r| r.0))
            .collect::<Result<Vec<_>>>()?;
        let mut logits: Vec<f64> = u[k * m..].iter().map(|v| (v - 0.5) * LOGIT_SCALE).collect();
        logits.push(0.0);
        let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        Ok((thetas, e.iter().map(|v| v / s).collect()))
    };
    let objective = |u: &[f64]| -> Result<f64> {
        let (thetas, omega) = unpack(u)?;
        let l = log_kernels(data, model, &thetas)?;
        Ok(-marginal_from_kernels(&l, space, &thetas, &omega, gamma)?)
    };
    let res = nelder_mead(objective, &u0, nm)?;
    unpack(&res.x)
}

struct RunState {
    thetas: Vec<Vec<f64>>,
    omega: Vec<f64>,
    trace: Vec<f64>,
    initial: f64,
    z: Vec<usize>,
    responsibilities: Vec<Vec<f64>>,
}

fn decreases(initial: f64, trace: &[f64]) -> Vec<usize> {
    let mut prev = initial;
    let mut out = Vec::new();
    for (i, &v) in trace.iter().enumerate() {
        if v < prev - MONOTONICITY_TOL {
            out.push(i);
        }
        prev = v;
    }
    out
}

fn run_restarts<F>(config: &MixtureConfig, method: FitMethod, mut run: F) -> Result<MixtureFit>
where
    F: FnMut(&mut ChaCha8Rng) -> Result<RunState>,
{
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(usize, RunState)> = None;
    for r in 0..config.restarts {
        let state = run(&mut rng)?;
        let better = match &best {
            None => true,
            Some((_, b)) => state.trace.last() > b.trace.last(),
        };
        if better {
            best = Some((r, state));
        }
    }
    let (restart, s) = best.expect("restarts >= 1");
    Ok(MixtureFit {
        method,
        decreases: decreases(s.initial, &s.trace),
        thetas: s.thetas,
        weights: s.omega,
        responsibilities: s.responsibilities,
        hard_assignment: s.z,
        trace: s.trace,
        initial_objective: s.initial,
        restart,
    })
}

/// Fits the mixture by expectation maximization of the marginal posterior.
///
/// Each restart draws the `k` initial parameter vectors from the prior
/// (seeded) with equal weights; the restart with the highest final log
/// marginal posterior is returned.
pub fn em_fit<M: ForwardModel + ?Sized>(
    data: &Dataset,
    model: &M,
    space: &ParameterSpace,
    config: &MixtureConfig,
) -> Result<MixtureFit> {
    let k = config.k;
    run_restarts(config, FitMethod::Em, |rng| {
        let mut thetas: Vec<Vec<f64>> = (0..k).map(|_| space.sample_prior(rng)).collect();
        let mut omega = vec![1.0 / k as f64; k];
        let mut l = log_kernels(data, model, &thetas)?;
        let initial = marginal_from_kernels(&l, space, &thetas, &omega, config.gamma)?;
        let mut trace = Vec::with_capacity(config.em_iters);
        for _ in 0..config.em_iters {
            (thetas, omega) = match config.m_step {
                MStepMode::Elbo => {
                    let r = responsibilities_from_kernels(&l, &omega);
                    m_step(data, model, space, &r, config.gamma, &config.nm, &thetas)?
                }
                MStepMode::Direct => {
                    m_step_direct(data, model, space, config.gamma, &config.nm, &thetas, &omega)?
                }
            };
            l = log_kernels(data, model, &thetas)?;
            trace.push(marginal_from_kernels(&l, space, &thetas, &omega, config.gamma)?);
        }
        let responsibilities = responsibilities_from_kernels(&l, &omega);
        let z = hard_assignment(&responsibilities);
        Ok(RunState {
            thetas,
            omega,
            trace,
            initial,
            z,
            responsibilities,
        })
    })
}

/// Classification EM: alternates hard labels with parameter/weight updates,
/// maximizing the full posterior. Returned responsibilities are 0/1.
///
/// A cluster that receives no readings keeps its previous parameters and gets
/// the pseudo-count weight of the Dirichlet term.
pub fn cem_fit<M: ForwardModel + ?Sized>(
    data: &Dataset,
    model: &M,
    space: &ParameterSpace,
    config: &MixtureConfig,
) -> Result<MixtureFit> {
    let k = config.k;
    run_restarts(config, FitMethod::Cem, |rng| {
        let mut thetas: Vec<Vec<f64>> = (0..k).map(|_| space.sample_prior(rng)).collect();
        let mut omega = vec![1.0 / k as f64; k];
        let mut l = log_kernels(data, model, &thetas)?;
        let mut z = classify(&l, &omega);
        let initial = full_from_kernels(&l, space, &z, &thetas, &omega, config.gamma)?;
        let mut trace = Vec::with_capacity(config.em_iters);
        for _ in 0..config.em_iters {
            z = classify(&l, &omega);
            let hard = one_hot(&z, k);
            omega = update_weights(&hard, k, config.gamma);
            thetas = thetas
                .par_iter()
                .enumerate()
                .map(|(j, t0)| {
                    if !z.contains(&j) {
                        return Ok(t0.clone());
                    }
                    let w: Vec<f64> = hard.iter().map(|r| r[j]).collect();
                    fit_weighted(data, model, space, &w, t0, &config.nm).map_err(|e| Error::Cluster {
                        cluster: j,
                        source: Box::new(e),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            l = log_kernels(data, model, &thetas)?;
            trace.push(full_from_kernels(&l, space, &z, &thetas, &omega, config.gamma)?);
        }
        let z = classify(&l, &omega);
        let responsibilities = one_hot(&z, k);
        Ok(RunState {
            thetas,
            omega,
            trace,
            initial,
            z,
            responsibilities,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InputPoint, ParamSpec, Prior};
    use proptest::prelude::*;

    /// f(xi; a, b) = a xi + b
    struct Line;

    impl ForwardModel for Line {
        fn n_params(&self) -> usize {
            2
        }
        fn predict(&self, x: &InputPoint, t: &[f64]) -> Result<f64> {
            Ok(t[0] * x.features[0] + t[1])
        }
    }

    fn space() -> ParameterSpace {
        ParameterSpace::new(vec![
            ParamSpec::new("a", -5.0, 5.0, Prior::Gaussian { mean: 0.0, sd: 1.0 }),
            ParamSpec::new("b", -5.0, 5.0, Prior::Gaussian { mean: 0.0, sd: 1.0 }),
        ])
        .unwrap()
    }

    fn data(xs: &[f64], ys: &[f64], sigma: f64) -> Dataset {
        Dataset::new(
            xs.iter().enumerate().map(|(i, &x)| InputPoint::scalar(i, x)).collect(),
            ys.to_vec(),
            vec![sigma; xs.len()],
        )
        .unwrap()
    }

    #[test]
    fn likelihood_basics() {
        let d = data(&[0.5], &[1.0], 0.1);
        let exact = vec![vec![0.0, 1.0]];
        assert_eq!(log_likelihood(&d, &Line, &[0], &exact).unwrap(), 0.0);
        let off = vec![vec![0.0, 0.9]];
        assert!((log_likelihood(&d, &Line, &[0], &off).unwrap() + 0.5).abs() < 1e-12);
        assert!(log_likelihood(&d, &Line, &[2], &off).is_err());
    }

    #[test]
    fn single_cluster_likelihood_matches_direct_sum() {
        let xs = [0.1, 0.4, 0.9, 0.3];
        let ys = [0.3, 0.2, 1.4, -0.1];
        let d = data(&xs, &ys, 0.2);
        let t = vec![vec![1.3, -0.2]];
        let direct: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| -(y - (1.3 * x - 0.2)).powi(2) / (2.0 * 0.04))
            .sum();
        let v = log_likelihood(&d, &Line, &[0; 4], &t).unwrap();
        assert!((v - direct).abs() < 1e-12);
        let lp = space().log_prior(&t[0]).unwrap();
        let full = log_full_posterior(&d, &Line, &space(), &[0; 4], &t, &[1.0], 1.0).unwrap();
        assert!((full - (direct + lp)).abs() < 1e-12);
        let marg = log_marginal_posterior(&d, &Line, &space(), &t, &[1.0], 1.0).unwrap();
        assert!((marg - full).abs() < 1e-12);
    }

    #[test]
    fn full_posterior_hand_computed() {
        // n=2, k=2
        let d = data(&[0.0, 1.0], &[0.5, 2.0], 0.5);
        let t = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let w = [0.3, 0.7];
        let g = 2.5;
        let z = [1, 0];
        // reading 0 under cluster 1: pred 1.0, r = -1.0 ; reading 1 under cluster 0: pred 1.0, r = 2.0
        let lk = -0.5 * 1.0 - 0.5 * 4.0;
        let s = space();
        let manual = 0.7f64.ln()
            + 0.3f64.ln()
            + lk
            + s.log_prior(&t[0]).unwrap()
            + s.log_prior(&t[1]).unwrap()
            + 1.5 * (0.3f64.ln() + 0.7f64.ln());
        let v = log_full_posterior(&d, &Line, &s, &z, &t, &w, g).unwrap();
        assert!((v - manual).abs() < 1e-12);
    }

    #[test]
    fn hyper_prior_edge_cases() {
        let d = data(&[0.0], &[0.0], 1.0);
        let t = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let s = space();
        let v = log_full_posterior(&d, &Line, &s, &[0], &t, &[1.0, 0.0], 0.5).unwrap();
        assert_eq!(v, f64::NEG_INFINITY);
        // gamma = 1: the weights only enter through the label term
        let a = log_full_posterior(&d, &Line, &s, &[0], &t, &[0.5, 0.5], 1.0).unwrap();
        let b = log_full_posterior(&d, &Line, &s, &[0], &t, &[0.5, 0.5], 1.0 + 1e-12).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn identical_clusters_collapse() {
        let d = data(&[0.1, 0.7, 0.3], &[0.2, 0.5, 0.9], 0.3);
        let t1 = vec![vec![0.4, 0.2]];
        let t2 = vec![vec![0.4, 0.2], vec![0.4, 0.2]];
        let s = space();
        let one = log_marginal_posterior(&d, &Line, &s, &t1, &[1.0], 1.0).unwrap();
        let two = log_marginal_posterior(&d, &Line, &s, &t2, &[0.5, 0.5], 1.0).unwrap();
        // only the extra cluster's prior term differs
        let extra = s.log_prior(&t1[0]).unwrap();
        assert!((two - one - extra).abs() < 1e-12);
    }

    #[test]
    fn responsibility_examples() {
        let d = data(&[0.0], &[0.0], 1.0);
        let t = vec![vec![0.0, 0.0], vec![0.0, 2.0]];
        let r = responsibilities(&d, &Line, &t, &[0.5, 0.5]).unwrap();
        let e = (-2.0f64).exp();
        assert!((r[0][0] - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((r[0][0] - 0.8808).abs() < 1e-4 && (r[0][1] - 0.1192).abs() < 1e-4);

        let same = vec![vec![1.0, 0.0]; 3];
        let r = responsibilities(&d, &Line, &same, &[1.0 / 3.0; 3]).unwrap();
        assert!(r[0].iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));

        let r = responsibilities(&d, &Line, &t, &[1.0, 0.0]).unwrap();
        assert_eq!(r[0], vec![1.0, 0.0]);
    }

    #[test]
    fn responsibilities_survive_underflow() {
        let d = data(&[0.0], &[0.0], 1e-6);
        let t = vec![vec![0.0, 1.0], vec![0.0, 2.0]];
        let r = responsibilities(&d, &Line, &t, &[0.5, 0.5]).unwrap();
        assert_eq!(r[0], vec![1.0, 0.0]);
    }

    #[test]
    fn weight_update_counts() {
        let r = one_hot(&[0, 0, 0, 1], 2);
        assert_eq!(update_weights(&r, 2, 1.0), vec![0.75, 0.25]);
        let w = update_weights(&one_hot(&[0, 0, 0, 0], 2), 2, 0.5);
        assert!(w[1] > 0.0 && w[1] <= MIN_WEIGHT && (w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn m_step_matches_weighted_least_squares() {
        // flat prior so the M-step is pure weighted regression
        let flat = ParameterSpace::new(vec![
            ParamSpec::new("a", -5.0, 5.0, Prior::Uniform),
            ParamSpec::new("b", -5.0, 5.0, Prior::Uniform),
        ])
        .unwrap();
        let xs: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| if *x < 0.5 { 2.0 * x } else { 0.3 * x + 0.8 })
            .collect();
        let d = data(&xs, &ys, 0.05);
        let r: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| {
                let p = 1.0 / (1.0 + ((x - 0.5) * 20.0f64).exp());
                vec![p, 1.0 - p]
            })
            .collect();
        let nm = NmSettings {
            max_iter: 400,
            atolx: 1e-7,
            ..Default::default()
        };
        let init = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        let (thetas, _) = m_step(&d, &Line, &flat, &r, 1.0, &nm, &init).unwrap();
        for j in 0..2 {
            // normal equations with weights r_ij / sigma^2
            let (mut sw, mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..xs.len() {
                let w = r[i][j];
                sw += w;
                sx += w * xs[i];
                sxx += w * xs[i] * xs[i];
                sy += w * ys[i];
                sxy += w * xs[i] * ys[i];
            }
            let det = sw * sxx - sx * sx;
            let a = (sw * sxy - sx * sy) / det;
            let b = (sxx * sy - sx * sxy) / det;
            assert!((thetas[j][0] - a).abs() < 2.0 * 3e-3 * 10.0, "{j}: {:?} vs {a},{b}", thetas[j]);
            assert!((thetas[j][1] - b).abs() < 2.0 * 3e-3 * 10.0);
        }
    }

    #[test]
    fn hard_m_step_on_subsets() {
        let d = data(&[0.0, 0.5, 1.0, 0.5], &[0.0, 0.5, 1.0, 3.0], 0.1);
        let r = one_hot(&[0, 0, 0, 1], 2);
        let init = vec![vec![0.5, 0.5], vec![0.0, 2.0]];
        let (_, w) = m_step(&d, &Line, &space(), &r, 1.0, &NmSettings::default(), &init).unwrap();
        assert_eq!(w, vec![0.75, 0.25]);
    }

    fn two_lines() -> Dataset {
        let xs: Vec<f64> = (0..24).map(|i| (i as f64 + 0.5) / 24.0).collect();
        let ys: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| if i % 2 == 0 { 1.5 * x } else { -x + 2.0 })
            .collect();
        data(&xs, &ys, 0.05)
    }

    #[test]
    fn em_recovers_two_lines() {
        let d = two_lines();
        let cfg = MixtureConfig {
            k: 2,
            em_iters: 30,
            seed: 3,
            restarts: 4,
            nm: NmSettings { max_iter: 200, ..Default::default() },
            ..Default::default()
        };
        let fit = em_fit(&d, &Line, &space(), &cfg).unwrap();
        let mut slopes: Vec<f64> = fit.thetas.iter().map(|t| t[0]).collect();
        slopes.sort_by(f64::total_cmp);
        assert!((slopes[0] + 1.0).abs() < 0.05 && (slopes[1] - 1.5).abs() < 0.05, "{:?}", fit.thetas);
        assert!(fit.decreases.is_empty(), "{:?}", fit.trace);
        assert!(fit.final_objective() >= fit.initial_objective);
        for row in &fit.responsibilities {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
        assert!((fit.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);

        let cem = cem_fit(&d, &Line, &space(), &cfg).unwrap();
        let thresholded: Vec<usize> = fit
            .responsibilities
            .iter()
            .map(|r| if r[0] > 0.5 { 0 } else { 1 })
            .collect();
        // same partition up to label swap
        let same = cem.hard_assignment == thresholded;
        let swapped = cem.hard_assignment.iter().zip(&thresholded).all(|(a, b)| a != b);
        assert!(same || swapped);
        assert!(cem.responsibilities.iter().flatten().all(|p| *p == 0.0 || *p == 1.0));
    }

    #[test]
    fn cem_trace_is_monotone() {
        let d = two_lines();
        let cfg = MixtureConfig {
            k: 3,
            em_iters: 15,
            seed: 9,
            ..Default::default()
        };
        let fit = cem_fit(&d, &Line, &space(), &cfg).unwrap();
        let mut prev = fit.initial_objective;
        for v in &fit.trace {
            assert!(*v >= prev - MONOTONICITY_TOL, "{:?}", fit.trace);
            prev = *v;
        }
    }

    #[test]
    fn k1_em_equals_k1_cem() {
        let d = two_lines();
        let cfg = MixtureConfig {
            k: 1,
            em_iters: 3,
            seed: 1,
            ..Default::default()
        };
        let a = em_fit(&d, &Line, &space(), &cfg).unwrap();
        let b = cem_fit(&d, &Line, &space(), &cfg).unwrap();
        assert_eq!(a.thetas, b.thetas);
        assert_eq!(a.weights, vec![1.0]);
    }

    #[test]
    fn direct_m_step_improves_marginal() {
        let d = two_lines();
        let s = space();
        let t0 = vec![vec![1.0, 0.2], vec![-0.5, 1.5]];
        let w0 = vec![0.5, 0.5];
        let before = log_marginal_posterior(&d, &Line, &s, &t0, &w0, 1.0).unwrap();
        let nm = NmSettings { max_iter: 300, ..Default::default() };
        let (t1, w1) = m_step_direct(&d, &Line, &s, 1.0, &nm, &t0, &w0).unwrap();
        let after = log_marginal_posterior(&d, &Line, &s, &t1, &w1, 1.0).unwrap();
        assert!(after > before);
        assert!((w1.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let d = two_lines();
        let cfg = MixtureConfig { em_iters: 0, ..Default::default() };
        assert!(em_fit(&d, &Line, &space(), &cfg).is_err());
        let cfg = MixtureConfig { gamma: 0.0, ..Default::default() };
        assert!(cem_fit(&d, &Line, &space(), &cfg).is_err());
    }

    #[test]
    fn csv_layouts() {
        let d = two_lines();
        let cfg = MixtureConfig { em_iters: 2, ..Default::default() };
        let fit = em_fit(&d, &Line, &space(), &cfg).unwrap();
        let mut buf = Vec::new();
        fit.write_params_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("cluster,weight,theta_1,theta_2\n1,"));
        let mut buf = Vec::new();
        fit.write_responsibilities_csv(&mut buf, &d).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("reading_index,sensor_id,time_index,p_1,p_2\n0,0,0,"));
        let (labels, rows) = read_responsibilities_csv(buf.as_slice()).unwrap();
        assert_eq!(labels.len(), d.len());
        assert_eq!(rows, fit.responsibilities);
    }

    fn toy_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<Vec<f64>>, f64, f64)> {
        (1usize..=8).prop_flat_map(|n| {
            (
                prop::collection::vec(0.0f64..1.0, n),
                prop::collection::vec(-1.0f64..2.0, n),
                prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 2), 2),
                0.05f64..0.95,
                0.3f64..3.0,
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn marginalization_identity((xs, ys, thetas, w, g) in toy_strategy()) {
            let d = data(&xs, &ys, 0.4);
            let s = space();
            let omega = vec![w, 1.0 - w];
            let n = xs.len();
            let marg = log_marginal_posterior(&d, &Line, &s, &thetas, &omega, g).unwrap();
            let mut fulls = Vec::new();
            for mask in 0..(1usize << n) {
                let z: Vec<usize> = (0..n).map(|i| (mask >> i) & 1).collect();
                fulls.push(log_full_posterior(&d, &Line, &s, &z, &thetas, &omega, g).unwrap());
            }
            let best = fulls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(marg >= best);
            let total = log_sum_exp(&fulls);
            // relative error of exp(.) equals the absolute error in log space
            prop_assert!((marg - total).abs() <= 1e-8, "{} vs {}", marg, total);
        }

        #[test]
        fn permutation_equivariance((xs, ys, thetas, w, g) in toy_strategy(), extra in prop::collection::vec(-2.0f64..2.0, 2)) {
            let d = data(&xs, &ys, 0.3);
            let s = space();
            let mut t3 = thetas.clone();
            t3.push(extra);
            let omega = vec![w * 0.5, 1.0 - w, w * 0.5];
            let perm = [2usize, 0, 1];
            let tp: Vec<Vec<f64>> = perm.iter().map(|&p| t3[p].clone()).collect();
            let wp: Vec<f64> = perm.iter().map(|&p| omega[p]).collect();
            let a = log_marginal_posterior(&d, &Line, &s, &t3, &omega, g).unwrap();
            let b = log_marginal_posterior(&d, &Line, &s, &tp, &wp, g).unwrap();
            prop_assert_eq!(a, b);
            let ra = responsibilities(&d, &Line, &t3, &omega).unwrap();
            let rb = responsibilities(&d, &Line, &tp, &wp).unwrap();
            for (rowa, rowb) in ra.iter().zip(&rb) {
                for (j, &p) in perm.iter().enumerate() {
                    prop_assert_eq!(rowb[j], rowa[p]);
                }
                prop_assert!((rowa.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
        }
    }
}
