//! Limited-memory BFGS with an Armijo line search, and a central
//! finite-difference gradient used as an oracle in tests.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsConfig {
    /// Number of stored curvature pairs.
    pub history: usize,
    pub max_iters: usize,
    /// Converged once `||g||₂` falls below this.
    pub grad_tol: f64,
    pub armijo: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            history: 7,
            max_iters: 100,
            grad_tol: 1e-6,
            armijo: 1e-4,
            shrink: 0.5,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbfgsStatus {
    Converged,
    MaxIters,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub status: LbfgsStatus,
    /// Objective after every accepted step, starting with `f(x0)`.
    pub trace: Vec<f64>,
}

/// Curvature pairs below this `sᵀy` are dropped to keep the inverse Hessian
/// approximation positive definite.
const MIN_CURVATURE: f64 = 1e-12;

const MAX_EXPANSIONS: usize = 30;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct History {
    s: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    rho: Vec<f64>,
    cap: usize,
}

impl History {
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>, sy: f64) {
        if self.s.len() == self.cap {
            self.s.remove(0);
            self.y.remove(0);
            self.rho.remove(0);
        }
        self.s.push(s);
        self.y.push(y);
        self.rho.push(1.0 / sy);
    }

    fn clear(&mut self) {
        self.s.clear();
        self.y.clear();
        self.rho.clear();
    }

    /// Two-loop recursion: returns `-H g`.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let k = self.s.len();
        let mut q = g.to_vec();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            alpha[i] = self.rho[i] * dot(&self.s[i], &q);
            for (qj, yj) in q.iter_mut().zip(&self.y[i]) {
                *qj -= alpha[i] * yj;
            }
        }
        let gamma = match k {
            0 => 1.0,
            _ => dot(&self.s[k - 1], &self.y[k - 1]) / dot(&self.y[k - 1], &self.y[k - 1]),
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for i in 0..k {
            let beta = self.rho[i] * dot(&self.y[i], &q);
            for (qj, sj) in q.iter_mut().zip(&self.s[i]) {
                *qj += (alpha[i] - beta) * sj;
            }
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

/// Minimize `f` starting from `x0`.
///
/// Each iteration tries the unit quasi-Newton step and the minimizer of the
/// quadratic interpolating `f` along the search line, keeps the lower one if
/// it satisfies the Armijo condition, and otherwise backtracks. An accepted
/// first trial is extended by doubling while the objective keeps falling.
pub fn lbfgs_minimize<F, G>(mut f: F, mut g: G, x0: &[f64], cfg: &LbfgsConfig) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64]) -> Vec<f64>,
{
    if cfg.history == 0 {
        return Err(Error::InvalidConfig("lbfgs history must be at least 1".into()));
    }
    if !(cfg.grad_tol > 0.0 && cfg.armijo > 0.0 && cfg.shrink > 0.0 && cfg.shrink < 1.0) {
        return Err(Error::InvalidConfig("lbfgs tolerances out of range".into()));
    }
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut gx = g(&x);
    if !fx.is_finite() {
        return Err(Error::NonFinite("objective at starting point"));
    }
    if gx.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: gx.len(),
        });
    }
    if gx.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient at starting point"));
    }

    let mut hist = History {
        s: Vec::new(),
        y: Vec::new(),
        rho: Vec::new(),
        cap: cfg.history,
    };
    let mut trace = vec![fx];
    let mut status = LbfgsStatus::MaxIters;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        if norm(&gx) <= cfg.grad_tol {
            status = LbfgsStatus::Converged;
            break;
        }
        let mut d = hist.direction(&gx);
        let mut slope = dot(&gx, &d);
        if !(slope < 0.0) {
            hist.clear();
            d = gx.iter().map(|v| -v).collect();
            slope = dot(&gx, &d);
        }
        let mut t = if hist.s.is_empty() {
            (1.0 / norm(&gx)).min(1.0)
        } else {
            1.0
        };

        let trial = |t: f64, f: &mut F| -> (Vec<f64>, f64) {
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let fv = f(&xn);
            (xn, if fv.is_finite() { fv } else { f64::INFINITY })
        };
        let armijo_ok = |t: f64, fv: f64| fv <= fx + cfg.armijo * t * slope && fv < fx;

        let mut accepted = None;
        let (x1, f1) = trial(t, &mut f);
        if f1.is_finite() {
            let curv = f1 - fx - slope * t;
            if curv > 0.0 {
                let tq = -slope * t * t / (2.0 * curv);
                if tq.is_finite() && tq > 0.0 && (tq - t).abs() > 1e-12 * t {
                    let (xq, fq) = trial(tq, &mut f);
                    if armijo_ok(tq, fq) && fq < f1 {
                        accepted = Some((tq, xq, fq));
                    }
                }
            }
        }
        if accepted.is_none() && armijo_ok(t, f1) {
            accepted = Some((t, x1, f1));
        }
        let mut backtracks = 0;
        while accepted.is_none() && backtracks < cfg.max_backtracks {
            t *= cfg.shrink;
            backtracks += 1;
            let (xn, fv) = trial(t, &mut f);
            if armijo_ok(t, fv) {
                accepted = Some((t, xn, fv));
            }
        }
        let Some((mut ta, mut xn, mut fn_)) = accepted else {
            status = LbfgsStatus::LineSearchFailed;
            break;
        };
        // A stale inverse Hessian can make every step far too short; keep
        // doubling while that still lowers the objective.
        if backtracks == 0 {
            for _ in 0..MAX_EXPANSIONS {
                let (xe, fe) = trial(2.0 * ta, &mut f);
                if !(fe < fn_) {
                    break;
                }
                ta *= 2.0;
                xn = xe;
                fn_ = fe;
            }
        }
        let gn = g(&xn);
        if gn.iter().any(|v| !v.is_finite()) {
            status = LbfgsStatus::LineSearchFailed;
            break;
        }
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > MIN_CURVATURE {
            hist.push(s, y, sy);
        }
        x = xn;
        fx = fn_;
        gx = gn;
        trace.push(fx);
        iterations += 1;
    }
    if status == LbfgsStatus::MaxIters && norm(&gx) <= cfg.grad_tol {
        status = LbfgsStatus::Converged;
    }
    Ok(LbfgsResult {
        grad_norm: norm(&gx),
        x,
        f: fx,
        iterations,
        status,
        trace,
    })
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::InvalidConfig("finite-difference step must be positive".into()));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFinite("finite-difference evaluation"));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    fn rosenbrock_grad(x: &[f64]) -> Vec<f64> {
        vec![
            -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]),
            200.0 * (x[1] - x[0] * x[0]),
        ]
    }

    #[test]
    fn quadratic_bowl() {
        let a = [3.0, -1.0, 0.5, 7.0];
        let f = |x: &[f64]| x.iter().zip(&a).map(|(v, c)| (v - c) * (v - c)).sum::<f64>();
        let g = |x: &[f64]| x.iter().zip(&a).map(|(v, c)| 2.0 * (v - c)).collect::<Vec<_>>();
        let cfg = LbfgsConfig { grad_tol: 1e-10, ..Default::default() };
        for x0 in [[0.0; 4], [100.0, -50.0, 3.0, 1e3]] {
            let r = lbfgs_minimize(f, g, &x0, &cfg).unwrap();
            assert!(r.iterations <= 10);
            for (v, c) in r.x.iter().zip(&a) {
                assert!((v - c).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rosenbrock_from_classic_start() {
        let r = lbfgs_minimize(rosenbrock, rosenbrock_grad, &[-1.2, 1.0], &LbfgsConfig {
            grad_tol: 1e-9,
            ..Default::default()
        })
        .unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{r:?}");
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let r = lbfgs_minimize(
            |x: &[f64]| x[0] * x[0],
            |x: &[f64]| vec![2.0 * x[0]],
            &[0.0],
            &LbfgsConfig::default(),
        )
        .unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.status, LbfgsStatus::Converged);
        assert_eq!(r.x, vec![0.0]);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let r = lbfgs_minimize(|_: &[f64]| f64::NAN, |_: &[f64]| vec![0.0], &[1.0], &LbfgsConfig::default());
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn finite_diff_of_linear_and_quadratic() {
        let c = [1.5, -2.0, 0.25];
        let lin = finite_diff_grad(|x: &[f64]| x.iter().zip(&c).map(|(a, b)| a * b).sum(), &[0.3, 1.0, -4.0], 1e-3)
            .unwrap();
        for (a, b) in lin.iter().zip(&c) {
            assert!((a - b).abs() < 1e-10);
        }
        let q = [[2.0, 0.5], [0.5, 1.0]];
        let x = [0.7, -1.1];
        let quad = |v: &[f64]| 0.5 * (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| v[i] * q[i][j] * v[j]).sum::<f64>();
        let gq = finite_diff_grad(quad, &x, 1e-4).unwrap();
        for i in 0..2 {
            let exact = q[i][0] * x[0] + q[i][1] * x[1];
            assert!((gq[i] - exact).abs() < 1e-8);
        }
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
        let a: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| a[i][k] * a[j][k]).sum::<f64>() + if i == j { 0.5 } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn convex_quadratics_finish_within_n_plus_two(seed in 0u64..100_000, n in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_spd(&mut rng, n);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let qf = q.clone();
            let bf = b.clone();
            let f = move |x: &[f64]| {
                let mut v = 0.0;
                for i in 0..n { for j in 0..n { v += 0.5 * x[i] * qf[i][j] * x[j]; } v -= bf[i] * x[i]; }
                v
            };
            let g = move |x: &[f64]| (0..n).map(|i| (0..n).map(|j| q[i][j] * x[j]).sum::<f64>() - b[i]).collect::<Vec<_>>();
            let cfg = LbfgsConfig { grad_tol: 1e-10, history: 7, ..Default::default() };
            let r = lbfgs_minimize(f, g, &x0, &cfg).unwrap();
            prop_assert_eq!(r.status, LbfgsStatus::Converged);
            prop_assert!(r.iterations <= n + 2, "n={} iters={}", n, r.iterations);
            for w in r.trace.windows(2) {
                prop_assert!(w[1] < w[0]);
            }
        }

        #[test]
        fn deterministic_iterates(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x0 = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let a = lbfgs_minimize(rosenbrock, rosenbrock_grad, &x0, &LbfgsConfig::default()).unwrap();
            let b = lbfgs_minimize(rosenbrock, rosenbrock_grad, &x0, &LbfgsConfig::default()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
