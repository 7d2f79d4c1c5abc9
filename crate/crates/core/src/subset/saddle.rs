use std::f64::consts::PI;

use super::{check_m, InclusionProbs};
use crate::error::{Error, Result};

const TOL: f64 = 1e-10;
const MAX_ITERS: usize = 50;
const MAX_BRACKET_STEPS: usize = 200;

/// Converged saddle point of `ψ(t) = Σ log(1 - q + q eᵗ)` at `ψ'(t*) = m`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaddlePoint {
    pub t: f64,
    pub log_prob: f64,
    /// `ψ'(t*) - m`.
    pub residual: f64,
    /// `ψ''(t*)`.
    pub curvature: f64,
    pub iterations: usize,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ψ` and its first three derivatives at `t`.
struct Cumulants {
    psi: f64,
    d1: f64,
    d2: f64,
    d3: f64,
}

struct Cgf {
    q: Vec<f64>,
    logit: Vec<f64>,
    log_off: Vec<f64>,
}

impl Cgf {
    fn new(q: &InclusionProbs) -> Self {
        let q = q.as_slice().to_vec();
        Self {
            logit: q.iter().map(|&v| v.ln() - (1.0 - v).ln()).collect(),
            log_off: q.iter().map(|&v| (1.0 - v).ln()).collect(),
            q,
        }
    }

    fn tilted(&self, t: f64) -> impl Iterator<Item = f64> + '_ {
        self.logit.iter().map(move |&l| sigmoid(l + t))
    }

    fn eval(&self, t: f64) -> Cumulants {
        let mut c = Cumulants {
            psi: 0.0,
            d1: 0.0,
            d2: 0.0,
            d3: 0.0,
        };
        for ((&l, &off), p) in self.logit.iter().zip(&self.log_off).zip(self.tilted(t)) {
            c.psi += off + softplus(l + t);
            c.d1 += p;
            c.d2 += p * (1.0 - p);
            c.d3 += p * (1.0 - p) * (1.0 - 2.0 * p);
        }
        c
    }

    fn d1(&self, t: f64) -> f64 {
        self.tilted(t).sum()
    }

    /// Per-node partials `(∂ψ/∂q, ∂ψ'/∂q, ∂ψ''/∂q)` at fixed `t`.
    fn partials(&self, t: f64) -> Vec<[f64; 3]> {
        self.q
            .iter()
            .zip(self.tilted(t))
            .map(|(&q, p)| {
                let s = p * (1.0 - p) / (q * (1.0 - q));
                [p / q - (1.0 - p) / (1.0 - q), s, (1.0 - 2.0 * p) * s]
            })
            .collect()
    }
}

/// A Newton/bisection iterate together with its tangent `dt/dq`.
#[derive(Clone)]
struct Iterate {
    t: f64,
    grad: Option<Vec<f64>>,
}

fn solve(q: &InclusionProbs, m: usize, want_grad: bool) -> Result<(SaddlePoint, Option<Vec<f64>>)> {
    let n = q.len();
    check_m(n, m)?;
    let qs = q.as_slice();
    if m == 0 || m == n {
        let lp: f64 = if m == 0 {
            qs.iter().map(|v| (1.0 - v).ln()).sum()
        } else {
            qs.iter().map(|v| v.ln()).sum()
        };
        let grad = want_grad.then(|| {
            qs.iter()
                .map(|v| if m == 0 { -1.0 / (1.0 - v) } else { 1.0 / v })
                .collect()
        });
        let t = if m == 0 { f64::NEG_INFINITY } else { f64::INFINITY };
        let sp = SaddlePoint {
            t,
            log_prob: lp,
            residual: 0.0,
            curvature: 0.0,
            iterations: 0,
        };
        return Ok((sp, grad));
    }

    let cgf = Cgf::new(q);
    let (nf, mf) = (n as f64, m as f64);
    let mu = q.mean();
    let t0 = (mf / (nf - mf)).ln() + (nf - mu).ln() - mu.ln();
    let start = Iterate {
        t: t0,
        grad: want_grad.then(|| vec![-1.0 / (nf - mu) - 1.0 / mu; n]),
    };

    // bracket with ψ'(lo) < m < ψ'(hi); offsets from t0 share its tangent
    let expand = |sign: f64| -> Result<Iterate> {
        let mut step = 1.0;
        for _ in 0..MAX_BRACKET_STEPS {
            let t = t0 + sign * step;
            let r = cgf.d1(t) - mf;
            if (sign < 0.0 && r < 0.0) || (sign > 0.0 && r > 0.0) {
                return Ok(Iterate {
                    t,
                    grad: start.grad.clone(),
                });
            }
            step *= 2.0;
        }
        Err(Error::Numerical(format!("could not bracket the saddle point for m = {m}")))
    };
    let mut lo = expand(-1.0)?;
    let mut hi = expand(1.0)?;

    let mut cur = start;
    let mut iterations = 0;
    loop {
        let c = cgf.eval(cur.t);
        let r = c.d1 - mf;
        if r.abs() < TOL {
            let log_prob = c.psi - mf * cur.t - 0.5 * (2.0 * PI * c.d2).ln();
            let grad = cur.grad.map(|g| {
                cgf.partials(cur.t)
                    .iter()
                    .zip(&g)
                    .map(|(d, &gi)| d[0] + r * gi - 0.5 * (c.d3 * gi + d[2]) / c.d2)
                    .collect()
            });
            let sp = SaddlePoint {
                t: cur.t,
                log_prob,
                residual: r,
                curvature: c.d2,
                iterations,
            };
            return Ok((sp, grad));
        }
        if iterations == MAX_ITERS {
            return Err(Error::Numerical(format!(
                "saddle point did not converge in {MAX_ITERS} iterations (residual {r:e})"
            )));
        }
        iterations += 1;
        if r < 0.0 {
            lo = cur.clone();
        } else {
            hi = cur.clone();
        }
        let newton = cur.t - r / c.d2;
        cur = if newton > lo.t && newton < hi.t && newton.is_finite() {
            let grad = cur.grad.as_ref().map(|g| {
                let d2sq = c.d2 * c.d2;
                cgf.partials(cur.t)
                    .iter()
                    .zip(g)
                    .map(|(d, &gi)| gi - ((c.d2 * gi + d[1]) * c.d2 - r * (c.d3 * gi + d[2])) / d2sq)
                    .collect()
            });
            Iterate { t: newton, grad }
        } else {
            Iterate {
                t: 0.5 * (lo.t + hi.t),
                grad: lo
                    .grad
                    .as_ref()
                    .zip(hi.grad.as_ref())
                    .map(|(a, b)| a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()),
            }
        };
    }
}

/// Full saddle-point solve, exposing `t*` and convergence diagnostics.
pub fn saddlepoint(q: &InclusionProbs, m: usize) -> Result<SaddlePoint> {
    Ok(solve(q, m, false)?.0)
}

/// Saddle-point approximation of `log P(Σa = m)`.
pub fn saddlepoint_log_prob(q: &InclusionProbs, m: usize) -> Result<f64> {
    Ok(saddlepoint(q, m)?.log_prob)
}

/// Approximation and its gradient with respect to `q`, differentiated
/// through the unrolled root-finding iterations.
pub fn saddlepoint_log_prob_grad(q: &InclusionProbs, m: usize) -> Result<(f64, Vec<f64>)> {
    let (sp, grad) = solve(q, m, true)?;
    Ok((sp.log_prob, grad.unwrap()))
}
