use serde::{Deserialize, Serialize};

/// `y = sum_i weights[i] * in_i + bias`, weights indexed by in-edge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearCoupling {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearCoupling {
    pub fn new(weights: Vec<f64>, bias: f64) -> Self {
        Self { weights, bias }
    }

    /// Plain sum of `arity` inputs.
    pub fn sum(arity: usize) -> Self {
        Self::new(vec![1.0; arity], 0.0)
    }

    pub fn arity(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn eval(&self, inputs: &[f64]) -> f64 {
        debug_assert_eq!(inputs.len(), self.weights.len());
        self.weights
            .iter()
            .zip(inputs)
            .fold(self.bias, |acc, (w, x)| acc + w * x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_sum_plus_bias() {
        let l = LinearCoupling::new(vec![2.0, -1.0], 0.5);
        assert_eq!(l.eval(&[3.0, 4.0]), 2.5);
        assert_eq!(LinearCoupling::sum(3).eval(&[1.0, 2.0, 3.0]), 6.0);
    }
}
