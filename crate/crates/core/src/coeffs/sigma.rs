//! Regularized square-root family `σ_n` and its derived functionals.
//!
//! Below the cap, with `ε = 1/n`,
//!
//! ```text
//! σ(η)  = √(η+ε) − √ε             σ'(η) = 1 / (2√(η+ε))
//! Σ(η)  = ¼·ln((η+ε)/(1+ε))       Θ(η)  = ln(√(η+ε)+√ε) − ln(√(1+ε)+√ε)
//! ```
//!
//! On `[n, n+1]` the derivative is blended to zero by the cubic
//! `q(u) = (1−u)²(σ'(n) + u(2σ'(n) + σ''(n)))`, `u = η − n`, which matches
//! `σ'` and `σ''` at `η = n`, is nonnegative, and vanishes with its
//! derivative at `u = 1`. Hence `σ` is C², nondecreasing and constant for
//! `η ≥ n+1`.

use crate::{Error, Result};

/// Noise coefficient `σ` as seen by the solver and diagnostics.
pub trait Mobility: Send + Sync {
    fn sigma(&self, eta: f64) -> f64;
    fn sigma_prime(&self, eta: f64) -> f64;
    /// Antiderivative of `σ'²` normalized by `Σ(1) = 0`.
    fn big_sigma(&self, eta: f64) -> f64;
    /// `sup_η σ'(η)²`, used in the explicit stability bound.
    fn sup_sigma_prime_sq(&self) -> f64;
}

/// Entropy density `Ψ(η) = η ln η − η` with `0·ln 0 = 0`.
pub fn psi(eta: f64) -> f64 {
    if eta <= 0.0 {
        0.0
    } else {
        eta * eta.ln() - eta
    }
}

/// Values of `σ_n` and its products at a single density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaProducts {
    pub sigma: f64,
    pub sigma_prime: f64,
    pub sigma_sigma_prime: f64,
    pub sigma_prime_sq: f64,
    pub big_sigma: f64,
    pub psi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedSqrt {
    n: u32,
    eps: f64,
    sqrt_eps: f64,
    /// σ(n), σ'(n)
    cap_start: (f64, f64),
    /// coefficients of q(u) = Σ q_i uⁱ on the cap
    q: [f64; 4],
    /// coefficients of q(u)² (degree 6)
    q_sq: [f64; 7],
    sigma_cap_end: f64,
    big_sigma_cap_start: f64,
    big_sigma_cap_end: f64,
}

impl RegularizedSqrt {
    pub fn new(n: u32) -> Result<Self> {
        if n < 1 {
            return Err(Error::Config("regularization index n must be ≥ 1".into()));
        }
        let eps = 1.0 / n as f64;
        let nf = n as f64;
        let w = (nf + eps).sqrt();
        let sig_n = nf / (w + eps.sqrt());
        let d = 0.5 / w;
        let c2 = -0.25 / (w * w * w);
        let e = 2.0 * d + c2;
        let q = [d, c2, d - 2.0 * e, e];
        let mut q_sq = [0.0; 7];
        for i in 0..4 {
            for j in 0..4 {
                q_sq[i + j] += q[i] * q[j];
            }
        }
        let mut rs = RegularizedSqrt {
            n,
            eps,
            sqrt_eps: eps.sqrt(),
            cap_start: (sig_n, d),
            q,
            q_sq,
            sigma_cap_end: 0.0,
            big_sigma_cap_start: 0.25 * ((nf + eps) / (1.0 + eps)).ln(),
            big_sigma_cap_end: 0.0,
        };
        rs.sigma_cap_end = rs.cap_sigma(1.0);
        rs.big_sigma_cap_end = rs.cap_big_sigma(1.0);
        Ok(rs)
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    fn cap_lo(&self) -> f64 {
        self.n as f64
    }

    fn cap_sigma(&self, u: f64) -> f64 {
        let q = &self.q;
        self.cap_start.0 + u * (q[0] + u * (q[1] / 2.0 + u * (q[2] / 3.0 + u * q[3] / 4.0)))
    }

    fn cap_q(&self, u: f64) -> f64 {
        let q = &self.q;
        q[0] + u * (q[1] + u * (q[2] + u * q[3]))
    }

    fn cap_big_sigma(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for (k, c) in self.q_sq.iter().enumerate().rev() {
            acc = acc * u + c / (k + 1) as f64;
        }
        self.big_sigma_cap_start + acc * u
    }

    /// Value of the cap plateau, `σ_n(η)` for `η ≥ n + 1`.
    pub fn plateau(&self) -> f64 {
        self.sigma_cap_end
    }

    pub fn sigma(&self, eta: f64) -> f64 {
        let eta = eta.max(0.0);
        let lo = self.cap_lo();
        if eta <= lo {
            // η / (√(η+ε) + √ε) avoids cancellation near 0
            eta / ((eta + self.eps).sqrt() + self.sqrt_eps)
        } else if eta < lo + 1.0 {
            self.cap_sigma(eta - lo)
        } else {
            self.sigma_cap_end
        }
    }

    pub fn sigma_prime(&self, eta: f64) -> f64 {
        if eta < 0.0 {
            return 0.0;
        }
        let lo = self.cap_lo();
        if eta <= lo {
            0.5 / (eta + self.eps).sqrt()
        } else if eta < lo + 1.0 {
            self.cap_q(eta - lo)
        } else {
            0.0
        }
    }

    pub fn sigma_sigma_prime(&self, eta: f64) -> f64 {
        self.sigma(eta) * self.sigma_prime(eta)
    }

    pub fn sigma_prime_sq(&self, eta: f64) -> f64 {
        self.sigma_prime(eta).powi(2)
    }

    /// `Σ_n` with `Σ_n' = σ_n'²` and `Σ_n(1) = 0`.
    pub fn big_sigma(&self, eta: f64) -> f64 {
        let eta = eta.max(0.0);
        let lo = self.cap_lo();
        if eta <= lo {
            0.25 * ((eta + self.eps) / (1.0 + self.eps)).ln()
        } else if eta < lo + 1.0 {
            self.cap_big_sigma(eta - lo)
        } else {
            self.big_sigma_cap_end
        }
    }

    /// `Θ_M` with `Θ_M(0) = 0` and `Θ_M' = σσ'·1_{[M, M+1]}`.
    pub fn theta_band(&self, m: f64, eta: f64) -> f64 {
        let top = eta.clamp(m, m + 1.0);
        0.5 * (self.sigma(top).powi(2) - self.sigma(m).powi(2))
    }

    /// Entropy-flux primitive `Θ` with `Θ' = σσ'/η` and `Θ(1) = 0`.
    ///
    /// Closed form below the cap; Gauss–Legendre quadrature on the cap.
    pub fn theta_entropy(&self, eta: f64) -> f64 {
        let eta = eta.max(0.0);
        let closed = |x: f64| {
            ((x + self.eps).sqrt() + self.sqrt_eps).ln() - ((1.0 + self.eps).sqrt() + self.sqrt_eps).ln()
        };
        let lo = self.cap_lo();
        if eta <= lo {
            return closed(eta);
        }
        let top = eta.min(lo + 1.0);
        let integrand = |x: f64| self.sigma_sigma_prime(x) / x;
        closed(lo) + gauss_legendre(integrand, lo, top)
    }

    /// Evaluates every product at `η ≥ 0`.
    pub fn evaluate(&self, eta: f64) -> Result<SigmaProducts> {
        if !(eta >= 0.0) {
            return Err(Error::Domain(format!("σ products need η ≥ 0, got {eta}")));
        }
        let sigma = self.sigma(eta);
        let sigma_prime = self.sigma_prime(eta);
        Ok(SigmaProducts {
            sigma,
            sigma_prime,
            sigma_sigma_prime: sigma * sigma_prime,
            sigma_prime_sq: sigma_prime * sigma_prime,
            big_sigma: self.big_sigma(eta),
            psi: psi(eta),
        })
    }
}

impl Mobility for RegularizedSqrt {
    fn sigma(&self, eta: f64) -> f64 {
        RegularizedSqrt::sigma(self, eta)
    }
    fn sigma_prime(&self, eta: f64) -> f64 {
        RegularizedSqrt::sigma_prime(self, eta)
    }
    fn big_sigma(&self, eta: f64) -> f64 {
        RegularizedSqrt::big_sigma(self, eta)
    }
    fn sup_sigma_prime_sq(&self) -> f64 {
        // attained at η = 0
        0.25 / self.eps
    }
}

/// Density-independent coefficient `σ ≡ c` (additive noise).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantMobility(pub f64);

impl Mobility for ConstantMobility {
    fn sigma(&self, _eta: f64) -> f64 {
        self.0
    }
    fn sigma_prime(&self, _eta: f64) -> f64 {
        0.0
    }
    fn big_sigma(&self, _eta: f64) -> f64 {
        0.0
    }
    fn sup_sigma_prime_sq(&self) -> f64 {
        0.0
    }
}

const GL8_NODES: [f64; 4] = [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
const GL8_WEIGHTS: [f64; 4] = [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];

fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    let mut acc = 0.0;
    for (x, w) in GL8_NODES.iter().zip(GL8_WEIGHTS) {
        acc += w * (f(mid - half * x) + f(mid + half * x));
    }
    acc * half
}
