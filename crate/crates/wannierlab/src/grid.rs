use crate::error::{Error, Result};

/// Uniform symmetric grid on [−1/2, 1/2] with `n` intervals.
///
/// Node `j` sits at `−1/2 + j/n`; nodes `0` and `n` are the identified
/// boundary pair and `n/2` is `k = 0`. With `n` a power of two every node is
/// exactly representable, so mirrored nodes are exact negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Grid1 {
    pub n: usize,
}

impl Grid1 {
    pub fn new(n: usize) -> Result<Self> {
        if n < 4 || n % 2 != 0 {
            return Err(Error::Input(format!("grid needs an even number of intervals >= 4, got {n}")));
        }
        Ok(Grid1 { n })
    }

    pub fn len(&self) -> usize {
        self.n + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn k(&self, j: usize) -> f64 {
        -0.5 + j as f64 / self.n as f64
    }

    pub fn step(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn zero(&self) -> usize {
        self.n / 2
    }

    pub fn mirror(&self, j: usize) -> usize {
        self.n - j
    }

    /// Periodic index of node `j` among the `n` distinct nodes.
    pub fn wrap(&self, j: usize) -> usize {
        j % self.n
    }

    pub fn ks(&self) -> Vec<f64> {
        (0..=self.n).map(|j| self.k(j)).collect()
    }
}
