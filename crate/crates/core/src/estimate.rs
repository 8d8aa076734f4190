//! Monte Carlo scalars with standard errors.

/// A sample mean with its standard error and sample size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub n_paths: u64,
}

impl Estimate {
    pub const fn exact(value: f64) -> Self {
        Self { value, stderr: 0.0, n_paths: 0 }
    }

    /// `self - other`, errors combined as if independent.
    pub fn sub_independent(&self, other: &Estimate) -> Estimate {
        Estimate {
            value: self.value - other.value,
            stderr: libm::hypot(self.stderr, other.stderr),
            n_paths: self.n_paths.min(other.n_paths),
        }
    }

    pub fn scale(&self, factor: f64) -> Estimate {
        Estimate { value: self.value * factor, stderr: self.stderr * factor.abs(), n_paths: self.n_paths }
    }

    /// Whether `target` lies within `k` standard errors (or `floor`, whichever
    /// is larger) of the estimate.
    pub fn within(&self, target: f64, k: f64, floor: f64) -> bool {
        (self.value - target).abs() <= (k * self.stderr).max(floor)
    }
}

/// Streaming mean/variance (Welford), mergeable in a fixed order with
/// Chan's pairwise update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Accumulator {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    pub const fn new() -> Self {
        Self { n: 0, mean: 0.0, m2: 0.0 }
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Two-pass mean and centered sum of squares of a slice.
    pub fn from_slice(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::new();
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let m2 = xs.iter().map(|&x| (x - mean) * (x - mean)).sum();
        Self { n: n as u64, mean, m2 }
    }

    pub fn merge(&mut self, other: &Accumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let w = other.n as f64 / n as f64;
        self.mean += delta * w;
        self.m2 += other.m2 + delta * delta * self.n as f64 * w;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn estimate(&self) -> Estimate {
        let se = if self.n < 2 { 0.0 } else { libm::sqrt(self.variance() / self.n as f64) };
        Estimate { value: self.mean, stderr: se, n_paths: self.n }
    }
}

/// Streaming sample covariance of a pair, mergeable like [`Accumulator`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CovAccumulator {
    n: u64,
    mean_x: f64,
    mean_y: f64,
    cxy: f64,
    m2x: f64,
    m2y: f64,
}

impl CovAccumulator {
    #[inline]
    pub fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        let n = self.n as f64;
        let dx = x - self.mean_x;
        self.mean_x += dx / n;
        let dy = y - self.mean_y;
        self.mean_y += dy / n;
        self.cxy += dx * (y - self.mean_y);
        self.m2x += dx * (x - self.mean_x);
        self.m2y += dy * (y - self.mean_y);
    }

    pub fn merge(&mut self, o: &CovAccumulator) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = (self.n + o.n) as f64;
        let (na, nb) = (self.n as f64, o.n as f64);
        let dx = o.mean_x - self.mean_x;
        let dy = o.mean_y - self.mean_y;
        self.cxy += o.cxy + dx * dy * na * nb / n;
        self.m2x += o.m2x + dx * dx * na * nb / n;
        self.m2y += o.m2y + dy * dy * na * nb / n;
        self.mean_x += dx * nb / n;
        self.mean_y += dy * nb / n;
        self.n += o.n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn covariance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.cxy / (self.n - 1) as f64
        }
    }

    pub fn variance_x(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2x / (self.n - 1) as f64
        }
    }

    pub fn variance_y(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2y / (self.n - 1) as f64
        }
    }
}
