use std::cmp::Reverse;
use std::collections::BinaryHeap;

use ordered_float::OrderedFloat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel};

use super::{check_m, InclusionProbs};
use crate::error::Result;
use crate::mesh::SensorMask;

/// Top-`m` of `log q + Gumbel noise`; ties go to the lower index.
pub fn gumbel_topk_sample(q: &InclusionProbs, m: usize, seed: u64) -> Result<SensorMask> {
    gumbel_topk_sample_with(q, m, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn gumbel_topk_sample_with<R: Rng + ?Sized>(q: &InclusionProbs, m: usize, rng: &mut R) -> Result<SensorMask> {
    let n = q.len();
    check_m(n, m)?;
    let gumbel = Gumbel::new(0.0, 1.0).unwrap();
    // min-heap of the m best (score, -index) keys seen so far
    let mut heap: BinaryHeap<Reverse<(OrderedFloat<f64>, Reverse<usize>)>> = BinaryHeap::with_capacity(m + 1);
    for (i, &qi) in q.as_slice().iter().enumerate() {
        let g: f64 = gumbel.sample(rng);
        let key = (OrderedFloat(qi.ln() + g), Reverse(i));
        if heap.len() < m {
            heap.push(Reverse(key));
        } else if m > 0 && key > heap.peek().unwrap().0 {
            heap.pop();
            heap.push(Reverse(key));
        }
    }
    let chosen: Vec<usize> = heap.into_iter().map(|Reverse((_, Reverse(i)))| i).collect();
    SensorMask::from_indices(n, &chosen)
}
