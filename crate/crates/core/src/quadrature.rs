//! Gaussian quadrature rules used by the semi-analytic recursion.
//!
//! Nodes are eigenvalues of the symmetric Jacobi matrix of the orthogonal
//! polynomial family, located by Sturm bisection and polished with Newton
//! steps; weights come from the Christoffel function. This stays accurate
//! for a few hundred nodes without any linear-algebra dependency.

/// Node and weight counts for the deterministic and sampled integrators.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureSpec {
    /// Gauss-Hermite nodes for the lognormal inner expectation.
    pub hermite_nodes: usize,
    /// Gauss-Legendre nodes per time dimension.
    pub legendre_nodes: usize,
    /// Switch-path samples for iterations beyond the deterministic depth.
    pub path_samples: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            hermite_nodes: 64,
            legendre_nodes: 48,
            path_samples: 100_000,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> crate::Result<()> {
        if self.hermite_nodes < 2 || self.legendre_nodes < 2 || self.path_samples < 2 {
            return Err(crate::Error::invalid(
                "quadrature node and sample counts must be at least 2",
            ));
        }
        Ok(())
    }
}

/// Symmetric Jacobi matrix with zero diagonal, described by its
/// off-diagonal entries and the total mass of the weight measure.
struct JacobiMatrix {
    offdiag: Vec<f64>,
    mass: f64,
}

impl JacobiMatrix {
    fn legendre(n: usize) -> Self {
        let offdiag = (1..n)
            .map(|k| {
                let k = k as f64;
                k / (4.0 * k * k - 1.0).sqrt()
            })
            .collect();
        Self { offdiag, mass: 2.0 }
    }

    fn hermite(n: usize) -> Self {
        let offdiag = (1..n).map(|k| (k as f64 / 2.0).sqrt()).collect();
        Self {
            offdiag,
            mass: std::f64::consts::PI.sqrt(),
        }
    }

    /// Number of eigenvalues below `x` (Sturm sequence sign count). A zero
    /// pivot is nudged negative, which only moves the bracket by one ulp.
    fn count_below(&self, x: f64) -> usize {
        let n = self.offdiag.len() + 1;
        let mut count = 0;
        let mut d = -x;
        if d.abs() < 1e-300 {
            d = -1e-300;
        }
        if d < 0.0 {
            count += 1;
        }
        for k in 1..n {
            let b = self.offdiag[k - 1];
            d = -x - b * b / d;
            if d.abs() < 1e-300 {
                d = -1e-300;
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// Orthonormal polynomial values (p_{n-1}(x), p_n(x), p_n'(x)) and the
    /// Christoffel sum over degrees 0..n-1.
    fn recurrence_at(&self, x: f64) -> (f64, f64, f64, f64) {
        let n = self.offdiag.len() + 1;
        let mut p_prev = 0.0_f64;
        let mut p = 1.0 / self.mass.sqrt();
        let mut dp_prev = 0.0_f64;
        let mut dp = 0.0_f64;
        let mut christoffel = p * p;
        for k in 0..n {
            let b_next = if k < n - 1 { self.offdiag[k] } else { 1.0 };
            let b_prev = if k > 0 { self.offdiag[k - 1] } else { 0.0 };
            let p_next = (x * p - b_prev * p_prev) / b_next;
            let dp_next = (x * dp + p - b_prev * dp_prev) / b_next;
            p_prev = p;
            p = p_next;
            dp_prev = dp;
            dp = dp_next;
            if k < n - 1 {
                christoffel += p * p;
            }
        }
        (p_prev, p, dp, christoffel)
    }

    /// All eigenvalues in ascending order with Christoffel weights.
    fn nodes_and_weights(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.offdiag.len() + 1;
        let radius = {
            let mut r = 0.0_f64;
            for k in 0..n {
                let left = if k > 0 { self.offdiag[k - 1] } else { 0.0 };
                let right = if k < n - 1 { self.offdiag[k] } else { 0.0 };
                r = r.max(left + right);
            }
            r + 1.0
        };

        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for idx in 0..n {
            let mut lo = -radius;
            let mut hi = radius;
            while hi - lo > 1e-13 * radius {
                let mid = 0.5 * (lo + hi);
                if self.count_below(mid) > idx {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let mut x = 0.5 * (lo + hi);
            for _ in 0..4 {
                let (_, p_n, dp_n, _) = self.recurrence_at(x);
                if dp_n != 0.0 {
                    let step = p_n / dp_n;
                    if step.is_finite() && step.abs() < radius {
                        x -= step;
                    }
                }
            }
            let (_, _, _, christoffel) = self.recurrence_at(x);
            nodes.push(x);
            weights.push(1.0 / christoffel);
        }

        // Both families are symmetric about zero; average mirrored pairs to
        // remove the residual bisection asymmetry.
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let x = 0.5 * (nodes[j] - nodes[i]);
            nodes[i] = -x;
            nodes[j] = x;
            let w = 0.5 * (weights[i] + weights[j]);
            weights[i] = w;
            weights[j] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        (nodes, weights)
    }
}

/// Gauss-Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let (nodes, weights) = JacobiMatrix::legendre(n).nodes_and_weights();
        Self { nodes, weights }
    }

    /// Integrates `f` over [a, b].
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut sum = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            sum += w * f(mid + half * x);
        }
        half * sum
    }
}

/// Gauss-Hermite rule for the weight exp(-x^2) on the whole line.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Hermite rule needs at least one node");
        let (nodes, weights) = JacobiMatrix::hermite(n).nodes_and_weights();
        Self { nodes, weights }
    }

    /// Expectation of `f(Z)` for a standard normal `Z`.
    pub fn standard_normal_expectation<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        let scale = 1.0 / std::f64::consts::PI.sqrt();
        let mut sum = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            sum += w * f(std::f64::consts::SQRT_2 * x);
        }
        scale * sum
    }
}
