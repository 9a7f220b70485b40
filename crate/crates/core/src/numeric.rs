//! Order-stable summation helpers.

/// Terms accumulated sequentially before a block is pushed to the cascade.
const BLOCK: usize = 32;

/// Pairwise (cascade) summation of a slice.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    let mut acc = PairwiseAccumulator::new(1);
    for &v in values {
        acc.add_scaled(1.0, &[v]);
    }
    acc.finish()[0]
}

/// Vector-valued pairwise accumulator.
///
/// Terms are summed in blocks of fixed length; block sums are merged like a
/// binary counter so the rounding error grows as O(log n) rather than O(n).
/// The result depends only on the order of the terms, never on timing.
#[derive(Debug, Clone)]
pub struct PairwiseAccumulator {
    dim: usize,
    block: Vec<f64>,
    in_block: usize,
    // (level, partial sum)
    stack: Vec<(u32, Vec<f64>)>,
    spare: Vec<Vec<f64>>,
}

impl PairwiseAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            block: vec![0.0; dim],
            in_block: 0,
            stack: Vec::new(),
            spare: Vec::new(),
        }
    }

    pub fn reset(&mut self) {
        self.block.iter_mut().for_each(|v| *v = 0.0);
        self.in_block = 0;
        while let Some((_, v)) = self.stack.pop() {
            self.spare.push(v);
        }
    }

    /// Adds `scale * term`.
    #[inline]
    pub fn add_scaled(&mut self, scale: f64, term: &[f64]) {
        debug_assert_eq!(term.len(), self.dim);
        for (b, t) in self.block.iter_mut().zip(term) {
            *b += scale * t;
        }
        self.in_block += 1;
        if self.in_block == BLOCK {
            self.push_block();
        }
    }

    fn push_block(&mut self) {
        let mut fresh = self.spare.pop().unwrap_or_else(|| vec![0.0; self.dim]);
        fresh.copy_from_slice(&self.block);
        self.block.iter_mut().for_each(|v| *v = 0.0);
        self.in_block = 0;
        let mut level = 0u32;
        let mut current = fresh;
        while let Some((top_level, _)) = self.stack.last() {
            if *top_level != level {
                break;
            }
            let (_, mut top) = self.stack.pop().expect("non-empty");
            for (t, c) in top.iter_mut().zip(&current) {
                *t += c;
            }
            self.spare.push(current);
            current = top;
            level += 1;
        }
        self.stack.push((level, current));
    }

    /// Returns the total and leaves the accumulator reset.
    pub fn finish(&mut self) -> Vec<f64> {
        let mut total = vec![0.0; self.dim];
        self.finish_into(&mut total);
        total
    }

    pub fn finish_into(&mut self, out: &mut [f64]) {
        out.copy_from_slice(&self.block);
        // merge from the smallest partial upwards
        for (_, partial) in self.stack.iter().rev() {
            for (o, p) in out.iter_mut().zip(partial) {
                *o += p;
            }
        }
        self.reset();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_on_small_inputs() {
        let v: Vec<f64> = (0..1000).map(|k| (k as f64).sin()).collect();
        let naive: f64 = v.iter().sum();
        assert!((pairwise_sum(&v) - naive).abs() < 1e-10);
    }

    #[test]
    fn reuse_after_finish() {
        let mut acc = PairwiseAccumulator::new(2);
        for k in 0..100 {
            acc.add_scaled(2.0, &[k as f64, 1.0]);
        }
        assert_eq!(acc.finish(), vec![9900.0, 200.0]);
        acc.add_scaled(1.0, &[1.0, 2.0]);
        assert_eq!(acc.finish(), vec![1.0, 2.0]);
    }

    #[test]
    fn more_accurate_than_naive() {
        // 1 + many tiny terms: naive left fold loses them
        let mut v = vec![1.0];
        v.extend(std::iter::repeat(1e-16).take(1 << 16));
        let exact = 1.0 + 65536.0 * 1e-16;
        let naive: f64 = v.iter().sum();
        assert!((naive - exact).abs() > 1e-12);
        assert!((pairwise_sum(&v) - exact).abs() < 1e-14);
    }
}
