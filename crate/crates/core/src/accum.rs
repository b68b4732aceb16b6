//! Compensated (Kahan) accumulators for long Birkhoff sums.

/// Kahan-compensated vector accumulator. `n` up to 10^7 with bounded summands
/// keeps the absolute error far below 1e-8, which plain summation does not.
#[derive(Debug, Clone)]
pub struct KahanVec {
    sum: Vec<f64>,
    carry: Vec<f64>,
}

impl KahanVec {
    pub fn zeros(d: usize) -> Self {
        KahanVec {
            sum: vec![0.0; d],
            carry: vec![0.0; d],
        }
    }

    #[inline(always)]
    pub fn add(&mut self, term: &[f64]) {
        debug_assert_eq!(term.len(), self.sum.len());
        for i in 0..self.sum.len() {
            let y = term[i] - self.carry[i];
            let t = self.sum[i] + y;
            self.carry[i] = (t - self.sum[i]) - y;
            self.sum[i] = t;
        }
    }

    #[inline(always)]
    pub fn value(&self) -> &[f64] {
        &self.sum
    }
}

/// Scalar Kahan accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    #[inline(always)]
    pub fn add(&mut self, term: f64) {
        let y = term - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    #[inline(always)]
    pub fn value(&self) -> f64 {
        self.sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensates_small_terms() {
        let mut k = Kahan::default();
        k.add(1.0);
        for _ in 0..10_000_000 {
            k.add(1e-16);
        }
        // Plain f64 summation would stay at exactly 1.0.
        assert!((k.value() - (1.0 + 1e-9)).abs() < 1e-12);
    }
}
