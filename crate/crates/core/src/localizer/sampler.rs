//! Weighted draws of distinct indices.

use rand::Rng;

/// Draws indices with probability proportional to fixed weights, without
/// replacement inside one [`WeightedSampler::draw_distinct`] call.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    /// Inclusive prefix sums of the weights.
    cumulative: Vec<f64>,
    positive: usize,
}

impl WeightedSampler {
    /// `None` if a weight is negative or non-finite.
    pub fn new(weights: &[f64]) -> Option<Self> {
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        let mut positive = 0;
        for &w in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return None;
            }
            if w > 0.0 {
                positive += 1;
            }
            acc += w;
            cumulative.push(acc);
        }
        Some(Self {
            cumulative,
            positive,
        })
    }

    /// Number of indices with non-zero weight.
    pub fn support(&self) -> usize {
        self.positive
    }

    fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    fn span(&self, i: usize) -> (f64, f64) {
        let start = if i == 0 { 0.0 } else { self.cumulative[i - 1] };
        (start, self.cumulative[i])
    }

    /// Index whose interval contains `u`, skipping zero-weight entries.
    fn locate(&self, u: f64) -> usize {
        let i = self.cumulative.partition_point(|&c| c <= u);
        if i < self.cumulative.len() {
            return i;
        }
        // u rounded onto the end: take the last positive entry
        (0..self.cumulative.len())
            .rev()
            .find(|&j| {
                let (s, e) = self.span(j);
                e > s
            })
            .unwrap_or(0)
    }

    /// One index drawn proportionally to the weights.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = rng.random::<f64>() * self.total();
        self.locate(u)
    }

    /// `N` distinct indices. Each draw is proportional to the weights of the
    /// indices not yet chosen. Requires `support() >= N`.
    pub fn draw_distinct<const N: usize, R: Rng + ?Sized>(&self, rng: &mut R) -> [usize; N] {
        assert!(self.positive >= N, "not enough positive weights");
        let mut out = [0usize; N];
        // chosen intervals, ordered by start
        let mut gaps: Vec<(f64, f64)> = Vec::with_capacity(N);
        let mut removed = 0.0;
        for slot in 0..N {
            let mut u = rng.random::<f64>() * (self.total() - removed);
            for &(s, e) in &gaps {
                if u >= s {
                    u += e - s;
                }
            }
            let mut i = self.locate(u);
            if out[..slot].contains(&i) {
                // rounding put u on a removed boundary
                i = (0..self.cumulative.len())
                    .find(|j| {
                        let (s, e) = self.span(*j);
                        e > s && !out[..slot].contains(j)
                    })
                    .expect("support checked above");
            }
            out[slot] = i;
            let span = self.span(i);
            removed += span.1 - span.0;
            let pos = gaps.partition_point(|g| g.0 < span.0);
            gaps.insert(pos, span);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_bad_weights() {
        assert!(WeightedSampler::new(&[1.0, -0.1]).is_none());
        assert!(WeightedSampler::new(&[1.0, f64::NAN]).is_none());
    }

    #[test]
    fn zero_weights_never_drawn() {
        let s = WeightedSampler::new(&[0.0, 1.0, 0.0, 2.0, 0.0, 1.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let d = s.draw_distinct::<3, _>(&mut rng);
            let mut sorted = d;
            sorted.sort();
            assert_eq!(sorted, [1, 3, 5]);
        }
    }

    #[test]
    fn second_draw_follows_remaining_weights() {
        // after drawing 0 (weight 0.5), index 1 and 2 are equally likely
        let s = WeightedSampler::new(&[0.5, 0.25, 0.25]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut after_zero = [0usize; 3];
        let mut n = 0;
        for _ in 0..50_000 {
            let [a, b] = s.draw_distinct::<2, _>(&mut rng);
            assert_ne!(a, b);
            if a == 0 {
                after_zero[b] += 1;
                n += 1;
            }
        }
        let f = after_zero[1] as f64 / n as f64;
        assert!((f - 0.5).abs() < 0.02, "{f}");
    }
}
