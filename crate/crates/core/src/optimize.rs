//! Nelder–Mead simplex minimization on the unit cube.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmSettings {
    pub max_iter: usize,
    /// Stop once every vertex lies within this distance of the best one.
    pub atolx: f64,
    /// Edge length of the initial simplex, in unit coordinates.
    pub initial_step: f64,
}

impl Default for NmSettings {
    fn default() -> Self {
        Self {
            max_iter: 50,
            atolx: 3e-3,
            initial_step: 0.05,
        }
    }
}

impl NmSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.atolx > 0.0) {
            return Err(Error::invalid("atolx must be positive"));
        }
        if !(self.initial_step > 0.0 && self.initial_step <= 0.5) {
            return Err(Error::invalid("initial_step must be in (0, 0.5]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NmResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub n_evals: usize,
    pub iterations: usize,
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> Result<f64>> Counted<F> {
    fn eval(&mut self, x: &[f64]) -> Result<f64> {
        self.evals += 1;
        let v = (self.f)(x)?;
        // NaN and -inf are treated like infeasible points
        Ok(if v.is_nan() || v == f64::NEG_INFINITY { f64::INFINITY } else { v })
    }
}

fn clamp_unit(x: &mut [f64]) {
    for v in x {
        *v = v.clamp(0.0, 1.0);
    }
}

fn affine(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    // a + t * (b - a), clamped to the cube
    let mut out: Vec<f64> = a.iter().zip(b).map(|(a, b)| a + t * (b - a)).collect();
    clamp_unit(&mut out);
    out
}

/// Appends the `m` vertices `x + h e_j` (or `x - h e_j` near the upper face).
fn axis_vertices<F: FnMut(&[f64]) -> Result<f64>>(
    obj: &mut Counted<F>,
    simplex: &mut Vec<(Vec<f64>, f64)>,
    h: f64,
) -> Result<()> {
    let base = simplex[0].0.clone();
    for j in 0..base.len() {
        let mut v = base.clone();
        v[j] = if v[j] + h <= 1.0 { v[j] + h } else { v[j] - h };
        let fv = obj.eval(&v)?;
        simplex.push((v, fv));
    }
    Ok(())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Minimizes `objective` over `[0,1]^m` starting from `x0`.
///
/// Coefficients are the canonical (1, 2, 1/2, 1/2). Every trial point is
/// clamped to the cube before evaluation; `+inf` marks infeasible points.
pub fn nelder_mead<F>(objective: F, x0: &[f64], settings: &NmSettings) -> Result<NmResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    settings.validate()?;
    let m = x0.len();
    if m == 0 {
        return Err(Error::invalid("nelder_mead needs at least one dimension"));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("x0 must be finite"));
    }
    let mut obj = Counted { f: objective, evals: 0 };

    let mut start = x0.to_vec();
    clamp_unit(&mut start);
    let f0 = obj.eval(&start)?;
    let mut simplex = vec![(start, f0)];
    axis_vertices(&mut obj, &mut simplex, settings.initial_step)?;
    if simplex.iter().all(|(_, f)| !f.is_finite()) {
        return Err(Error::numerical("objective is not finite at any initial vertex"));
    }

    let order = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    order(&mut simplex);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < settings.max_iter {
        let best = &simplex[0].0;
        if simplex[1..].iter().all(|(x, _)| dist(x, best) < settings.atolx) {
            // Clamping can flatten the simplex against a face of the cube.
            // Rebuild it around the best vertex; stop only if that finds nothing better.
            iterations += 1;
            let f_best = simplex[0].1;
            simplex.truncate(1);
            axis_vertices(&mut obj, &mut simplex, settings.initial_step)?;
            order(&mut simplex);
            if simplex[0].1 >= f_best {
                converged = true;
                break;
            }
            continue;
        }
        iterations += 1;

        let mut centroid = vec![0.0; m];
        for (x, _) in &simplex[..m] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / m as f64;
            }
        }
        let (worst, f_worst) = simplex[m].clone();
        let f_second = simplex[m - 1].1;
        let f_best = simplex[0].1;

        let xr = affine(&centroid, &worst, -REFLECT);
        let fr = obj.eval(&xr)?;

        if fr < f_best {
            let xe = affine(&centroid, &worst, -EXPAND);
            let fe = obj.eval(&xe)?;
            simplex[m] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < f_second {
            simplex[m] = (xr, fr);
        } else {
            let shrink_needed = if fr < f_worst {
                let xc = affine(&centroid, &xr, CONTRACT);
                let fc = obj.eval(&xc)?;
                if fc <= fr {
                    simplex[m] = (xc, fc);
                    false
                } else {
                    true
                }
            } else {
                let xcc = affine(&centroid, &worst, CONTRACT);
                let fcc = obj.eval(&xcc)?;
                if fcc < f_worst {
                    simplex[m] = (xcc, fcc);
                    false
                } else {
                    true
                }
            };
            if shrink_needed {
                let anchor = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let x = affine(&anchor, &vertex.0, SHRINK);
                    let f = obj.eval(&x)?;
                    *vertex = (x, f);
                }
            }
        }
        order(&mut simplex);
    }
    if !converged {
        let best = &simplex[0].0;
        converged = simplex[1..].iter().all(|(x, _)| dist(x, best) < settings.atolx);
    }

    let (x, f) = simplex.swap_remove(0);
    Ok(NmResult {
        x,
        f,
        n_evals: obj.evals,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bowl(c: f64) -> impl FnMut(&[f64]) -> Result<f64> {
        move |x: &[f64]| Ok(x.iter().map(|v| (v - c) * (v - c)).sum())
    }

    #[test]
    fn convex_bowl() {
        let r = nelder_mead(bowl(0.3), &[0.7, 0.7], &NmSettings::default()).unwrap();
        assert!(r.x.iter().all(|v| (v - 0.3).abs() < 1e-2), "{:?}", r.x);
    }

    #[test]
    fn minimizer_outside_cube_lands_on_boundary() {
        let s = NmSettings::default();
        let r = nelder_mead(bowl(1.2), &[0.5, 0.5], &s).unwrap();
        assert!(r.x.iter().all(|v| (1.0 - v) < s.atolx), "{:?}", r.x);
    }

    #[test]
    fn rosenbrock() {
        let rosen = |x: &[f64]| -> Result<f64> {
            Ok(100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2))
        };
        let s = NmSettings {
            max_iter: 500,
            atolx: 1e-6,
            ..Default::default()
        };
        let r = nelder_mead(rosen, &[0.1, 0.1], &s).unwrap();
        assert!(r.f < 1e-3, "{r:?}");
    }

    #[test]
    fn infeasible_everywhere_is_an_error() {
        let r = nelder_mead(|_: &[f64]| Ok(f64::INFINITY), &[0.5], &NmSettings::default());
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn infeasible_region_is_avoided() {
        let f = |x: &[f64]| -> Result<f64> {
            if x[0] > 0.6 {
                Ok(f64::INFINITY)
            } else {
                Ok((x[0] - 0.8).powi(2) + (x[1] - 0.5).powi(2))
            }
        };
        let r = nelder_mead(f, &[0.2, 0.2], &NmSettings { max_iter: 200, ..Default::default() }).unwrap();
        assert!(r.f.is_finite());
        assert!((r.x[0] - 0.6).abs() < 0.02, "{:?}", r.x);
    }

    #[test]
    fn objective_errors_propagate() {
        let r = nelder_mead(|_: &[f64]| Err(Error::numerical("boom")), &[0.5], &NmSettings::default());
        assert!(r.is_err());
    }

    #[test]
    fn bad_settings_rejected() {
        let s = NmSettings { initial_step: 0.7, ..Default::default() };
        assert!(nelder_mead(bowl(0.3), &[0.5], &s).is_err());
    }

    proptest! {
        #[test]
        fn invariants(
            x0 in prop::collection::vec(0.0f64..=1.0, 1..5),
            c in prop::collection::vec(-0.5f64..1.5, 5),
            max_iter in 1usize..80,
        ) {
            let m = x0.len();
            let centre = c[..m].to_vec();
            let f = |x: &[f64]| -> Result<f64> {
                Ok(x.iter().zip(&centre).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            };
            let f_start = f(&x0).unwrap();
            let s = NmSettings { max_iter, ..Default::default() };
            let r = nelder_mead(f, &x0, &s).unwrap();
            prop_assert!(r.f <= f_start);
            prop_assert!(r.x.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(r.n_evals <= (m + 1) + max_iter * (m + 2));
            let again = nelder_mead(f, &x0, &s).unwrap();
            prop_assert_eq!(again, r);
        }
    }
}
