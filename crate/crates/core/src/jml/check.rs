//! Seeded property suite for the Jaccard metric loss: range, symmetry,
//! agreement with the soft Jaccard loss on binary labels, the triangle
//! inequality, and the analytic gradient against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{jml_forward, jml_gradient, SoftVector};

pub const RANGE_TOL: f64 = 0.0;
pub const SYMMETRY_TOL: f64 = 1e-12;
pub const BINARY_EQUIVALENCE_TOL: f64 = 1e-12;
pub const TRIANGLE_SLACK: f64 = 1e-12;
pub const GRADIENT_REL_TOL: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-6;

const MAX_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckConfig {
    pub seed: u64,
    /// Trials for the value properties.
    pub trials: usize,
    /// Smooth-region points for the gradient check.
    pub gradient_trials: usize,
    /// Added to every analytic gradient component; nonzero only to prove the
    /// gradient check can fail.
    pub gradient_perturbation: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 100_000,
            gradient_trials: 1_000,
            gradient_perturbation: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyOutcome {
    pub name: &'static str,
    pub trials: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl PropertyOutcome {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

impl std::fmt::Display for PropertyOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<20} trials={:<7} max_err={:.3e} tol={:.1e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.trials,
            self.max_error,
            self.tolerance
        )
    }
}

fn unit_vec(rng: &mut ChaCha8Rng, p: usize) -> Vec<f64> {
    (0..p)
        .map(|_| match rng.gen_range(0..10) {
            // exercise the box boundary
            0 => 0.0,
            1 => 1.0,
            _ => rng.gen::<f64>(),
        })
        .collect()
}

fn binary_vec(rng: &mut ChaCha8Rng, p: usize) -> Vec<f64> {
    (0..p).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect()
}

fn sv(v: Vec<f64>) -> SoftVector {
    SoftVector::new(v).expect("generated in [0, 1]")
}

fn loss(x: &[f64], y: &[f64]) -> f64 {
    jml_forward(&sv(x.to_vec()), &sv(y.to_vec())).expect("equal lengths")
}

/// Dot-product soft Jaccard loss; undefined (NaN) when both are all-zero.
pub fn soft_jaccard_loss(x: &[f64], y: &[f64]) -> f64 {
    let inter: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let union = x.iter().sum::<f64>() + y.iter().sum::<f64>() - inter;
    1.0 - inter / union
}

pub fn check_range(rng: &mut ChaCha8Rng, trials: usize) -> PropertyOutcome {
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let p = rng.gen_range(1..=MAX_DIM);
        let v = loss(&unit_vec(rng, p), &unit_vec(rng, p));
        worst = worst.max(-v).max(v - 1.0);
    }
    PropertyOutcome {
        name: "range",
        trials,
        max_error: worst.max(0.0),
        tolerance: RANGE_TOL,
    }
}

pub fn check_symmetry(rng: &mut ChaCha8Rng, trials: usize) -> PropertyOutcome {
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let p = rng.gen_range(1..=MAX_DIM);
        let (x, y) = (unit_vec(rng, p), unit_vec(rng, p));
        worst = worst.max((loss(&x, &y) - loss(&y, &x)).abs());
    }
    PropertyOutcome {
        name: "symmetry",
        trials,
        max_error: worst,
        tolerance: SYMMETRY_TOL,
    }
}

pub fn check_binary_equivalence(rng: &mut ChaCha8Rng, trials: usize) -> PropertyOutcome {
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < trials {
        let p = rng.gen_range(1..=MAX_DIM);
        let x = unit_vec(rng, p);
        let y = binary_vec(rng, p);
        if x.iter().chain(&y).all(|&v| v == 0.0) {
            // both losses are conventions there, not formulas
            continue;
        }
        worst = worst.max((loss(&x, &y) - soft_jaccard_loss(&x, &y)).abs());
        done += 1;
    }
    PropertyOutcome {
        name: "binary_equivalence",
        trials,
        max_error: worst,
        tolerance: BINARY_EQUIVALENCE_TOL,
    }
}

pub fn check_triangle(rng: &mut ChaCha8Rng, trials: usize) -> PropertyOutcome {
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let p = rng.gen_range(1..=MAX_DIM);
        let (x, y, z) = (unit_vec(rng, p), unit_vec(rng, p), unit_vec(rng, p));
        let excess = loss(&x, &z) - loss(&x, &y) - loss(&y, &z);
        worst = worst.max(excess);
    }
    PropertyOutcome {
        name: "triangle_inequality",
        trials,
        max_error: worst.max(0.0),
        tolerance: TRIANGLE_SLACK,
    }
}

/// Point with every coordinate at least 0.01 away from its label and the
/// unit-box boundary, so central differences never cross a kink.
fn smooth_point(rng: &mut ChaCha8Rng, p: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::with_capacity(p);
    let mut y = Vec::with_capacity(p);
    for _ in 0..p {
        let yi: f64 = if rng.gen_bool(0.3) {
            rng.gen_range(0..2) as f64
        } else {
            rng.gen()
        };
        let xi = loop {
            let c = rng.gen_range(0.01..0.99);
            if (c - yi).abs() > 0.01 {
                break c;
            }
        };
        x.push(xi);
        y.push(yi);
    }
    (x, y)
}

pub fn check_gradient(rng: &mut ChaCha8Rng, trials: usize, perturbation: f64) -> PropertyOutcome {
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let p = rng.gen_range(1..=MAX_DIM);
        let (x, y) = smooth_point(rng, p);
        let analytic: Vec<f64> = jml_gradient(&sv(x.clone()), &sv(y.clone()))
            .expect("equal lengths")
            .into_iter()
            .map(|g| g + perturbation)
            .collect();
        let numeric: Vec<f64> = (0..p)
            .map(|i| {
                let mut up = x.clone();
                let mut down = x.clone();
                up[i] += FD_STEP;
                down[i] -= FD_STEP;
                (loss(&up, &y) - loss(&down, &y)) / (2.0 * FD_STEP)
            })
            .collect();
        let diff = l2(analytic.iter().zip(&numeric).map(|(a, b)| a - b));
        let scale = l2(analytic.iter().copied()).max(l2(numeric.iter().copied())).max(1e-12);
        worst = worst.max(diff / scale);
    }
    PropertyOutcome {
        name: "gradient",
        trials,
        max_error: worst,
        tolerance: GRADIENT_REL_TOL,
    }
}

fn l2(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Runs the five properties; each draws from its own seeded stream so the
/// outcome of one does not depend on the trial count of another.
pub fn run_suite(config: &CheckConfig) -> Vec<PropertyOutcome> {
    let stream = |k: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(k);
        rng
    };
    vec![
        check_range(&mut stream(1), config.trials),
        check_symmetry(&mut stream(2), config.trials),
        check_binary_equivalence(&mut stream(3), config.trials),
        check_triangle(&mut stream(4), config.trials),
        check_gradient(&mut stream(5), config.gradient_trials, config.gradient_perturbation),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes_and_is_deterministic() {
        let cfg = CheckConfig {
            seed: 7,
            trials: 2_000,
            gradient_trials: 200,
            gradient_perturbation: 0.0,
        };
        let a = run_suite(&cfg);
        assert!(a.iter().all(PropertyOutcome::passed), "{a:?}");
        assert_eq!(a, run_suite(&cfg));
    }

    #[test]
    fn perturbed_gradient_fails() {
        let cfg = CheckConfig {
            seed: 7,
            trials: 10,
            gradient_trials: 50,
            gradient_perturbation: 1e-3,
        };
        let out = run_suite(&cfg);
        let failed: Vec<_> = out.iter().filter(|o| !o.passed()).map(|o| o.name).collect();
        assert_eq!(failed, vec!["gradient"]);
    }
}
