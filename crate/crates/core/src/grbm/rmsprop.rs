/// Added under the square root of the accumulator.
pub const RMSPROP_EPS: f64 = 1e-8;

/// Per-parameter running mean of squared gradients.
///
/// Update for a gradient `g` (ascent):
/// `acc <- decay * acc + (1 - decay) * g^2`, `theta <- theta + lr * g / sqrt(acc + eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmspropState {
    pub accumulators: Vec<Vec<f64>>,
    pub epsilon: f64,
}

impl RmspropState {
    pub fn new(shapes: &[usize]) -> Self {
        RmspropState {
            accumulators: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            epsilon: RMSPROP_EPS,
        }
    }

    /// Applies one ascent step to each parameter group.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64, decay: f64) {
        assert_eq!(
            params.len(),
            self.accumulators.len(),
            "parameter group count"
        );
        assert_eq!(grads.len(), self.accumulators.len(), "gradient group count");
        for ((theta, g), acc) in params.iter_mut().zip(grads).zip(&mut self.accumulators) {
            assert_eq!(theta.len(), acc.len());
            assert_eq!(g.len(), acc.len());
            for ((t, &gi), a) in theta.iter_mut().zip(g.iter()).zip(acc.iter_mut()) {
                *a = decay * *a + (1.0 - decay) * gi * gi;
                *t += lr * gi / (*a + self.epsilon).sqrt();
            }
        }
    }
}
