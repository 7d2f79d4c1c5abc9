use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_m, InclusionProbs};
use crate::error::Result;
use crate::mesh::SensorMask;

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let hi = a.max(b);
    hi + (-(a - b).abs()).exp().ln_1p()
}

/// Rows `0..=n`; row `i` holds `log P(count of q[..i] = c)` for `c ≤ cap`.
fn prefix_table(q: &[f64], cap: usize) -> Vec<Vec<f64>> {
    let mut rows = Vec::with_capacity(q.len() + 1);
    let mut cur = vec![f64::NEG_INFINITY; cap + 1];
    cur[0] = 0.0;
    rows.push(cur.clone());
    for &qi in q {
        let (on, off) = (qi.ln(), (1.0 - qi).ln());
        let mut next = vec![f64::NEG_INFINITY; cap + 1];
        for c in 0..=cap {
            let stay = cur[c] + off;
            next[c] = if c > 0 { log_add(stay, cur[c - 1] + on) } else { stay };
        }
        rows.push(next.clone());
        cur = next;
    }
    rows
}

/// Row `i` holds `log P(count of q[i..] = c)` for `c ≤ cap`.
fn suffix_table(q: &[f64], cap: usize) -> Vec<Vec<f64>> {
    let mut rev: Vec<f64> = q.to_vec();
    rev.reverse();
    let mut rows = prefix_table(&rev, cap);
    rows.reverse();
    rows
}

/// Full Poisson-binomial log-pmf over `0..=n`.
pub fn dp_log_pmf(q: &InclusionProbs) -> Vec<f64> {
    prefix_table(q.as_slice(), q.len()).pop().unwrap()
}

/// Exact `log P(Σa = m)` by the forward count recursion.
pub fn dp_exact_log_prob(q: &InclusionProbs, m: usize) -> Result<f64> {
    check_m(q.len(), m)?;
    Ok(prefix_table(q.as_slice(), m).pop().unwrap()[m])
}

/// `log P(count without node i = c)` for every node and `c ∈ {m-1, m}`.
fn leave_one_out(q: &[f64], m: usize) -> Vec<[f64; 2]> {
    let pre = prefix_table(q, m);
    let suf = suffix_table(q, m);
    (0..q.len())
        .map(|i| {
            let conv = |c: usize| {
                (0..=c).fold(f64::NEG_INFINITY, |acc, k| log_add(acc, pre[i][k] + suf[i + 1][c - k]))
            };
            let below = if m > 0 { conv(m - 1) } else { f64::NEG_INFINITY };
            [below, conv(m)]
        })
        .collect()
}

/// `P(a_i = 1 | Σa = m)` for every node.
pub fn dp_conditional_marginals(q: &InclusionProbs, m: usize) -> Result<Vec<f64>> {
    let total = dp_exact_log_prob(q, m)?;
    Ok(leave_one_out(q.as_slice(), m)
        .iter()
        .zip(q.as_slice())
        .map(|(l, &qi)| (qi.ln() + l[0] - total).exp())
        .collect())
}

/// `log P(Σa = m)` and its gradient with respect to `q`.
pub fn dp_log_prob_grad(q: &InclusionProbs, m: usize) -> Result<(f64, Vec<f64>)> {
    let total = dp_exact_log_prob(q, m)?;
    let grad = leave_one_out(q.as_slice(), m)
        .iter()
        .map(|l| (l[0] - total).exp() - (l[1] - total).exp())
        .collect();
    Ok((total, grad))
}

/// Exact sampler of the Bernoulli law conditioned on `Σa = m`, reusing one
/// suffix table across draws.
#[derive(Clone, Debug)]
pub struct ExactSampler {
    log_q: Vec<f64>,
    suffix: Vec<Vec<f64>>,
    m: usize,
}

impl ExactSampler {
    pub fn new(q: &InclusionProbs, m: usize) -> Result<Self> {
        check_m(q.len(), m)?;
        Ok(Self {
            log_q: q.as_slice().iter().map(|v| v.ln()).collect(),
            suffix: suffix_table(q.as_slice(), m),
            m,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SensorMask {
        let n = self.log_q.len();
        let mut bits = vec![false; n];
        let mut left = self.m;
        for (i, bit) in bits.iter_mut().enumerate() {
            if left == 0 {
                break;
            }
            if left == n - i {
                *bit = true;
                left -= 1;
                continue;
            }
            let take = (self.log_q[i] + self.suffix[i + 1][left - 1] - self.suffix[i][left]).exp();
            if rng.random::<f64>() < take {
                *bit = true;
                left -= 1;
            }
        }
        debug_assert_eq!(left, 0);
        SensorMask::new(bits)
    }
}

pub fn dp_exact_sample(q: &InclusionProbs, m: usize, seed: u64) -> Result<SensorMask> {
    Ok(ExactSampler::new(q, m)?.sample(&mut ChaCha8Rng::seed_from_u64(seed)))
}
