//! Synthetic data generators. All generators are deterministic in the
//! seed, using a counter-based RNG so sequences are identical across
//! platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Transition mean of the scalar benchmark system whose graph bends
/// sharply near the origin.
pub fn kink_mean(x: f64) -> f64 {
    0.8 + (x + 0.2) * (1.0 - 5.0 / (1.0 + (-2.0 * x).exp()))
}

/// One scalar trajectory under the kink transition with additive
/// Gaussian process and measurement noise.
#[derive(Debug, Clone, PartialEq)]
pub struct KinkData {
    /// Latent states `x_0..x_{T-1}`.
    pub latent: Vec<f64>,
    /// Measurements `y_t = x_t + noise`, same length.
    pub measurements: Vec<f64>,
}

pub fn gen_kink(seed: u64, t_steps: usize, sigma_p2: f64, sigma_m2: f64) -> KinkData {
    assert!(t_steps >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sp = sigma_p2.sqrt();
    let sm = sigma_m2.sqrt();
    let mut latent = Vec::with_capacity(t_steps);
    let mut measurements = Vec::with_capacity(t_steps);
    let mut x = 0.0;
    for _ in 0..t_steps {
        latent.push(x);
        let em: f64 = StandardNormal.sample(&mut rng);
        measurements.push(x + sm * em);
        let ep: f64 = StandardNormal.sample(&mut rng);
        x = kink_mean(x) + sp * ep;
    }
    KinkData {
        latent,
        measurements,
    }
}

/// Periodic bang-bang excitation: `+amplitude` on the first half of
/// each period, `-amplitude` on the second.
pub fn square_wave(t: f64, amplitude: f64, period: f64) -> f64 {
    let phase = t.rem_euclid(period) / period;
    if phase < 0.5 {
        amplitude
    } else {
        -amplitude
    }
}

/// Excitation used by [`gen_tvparam`]: a square-wave dither plus a slow
/// cosine compensator that counters the system's secular drift, keeping
/// the trajectory inside a well-excited bounded range.
pub fn tvparam_control(t: f64, amplitude: f64, period: f64) -> f64 {
    square_wave(t, amplitude, period) - (0.2 * t).cos()
}

/// Trajectory of the scalar system `xdot = a(t) x + b(t) + c(t)` with
/// `a(t) = cos t` and `b(t) = cos 0.2 t`, discretized by forward Euler.
#[derive(Debug, Clone, PartialEq)]
pub struct TvParamData {
    /// Sample instants `t_k = k dt`.
    pub times: Vec<f64>,
    /// Latent states at those instants.
    pub latent: Vec<f64>,
    /// Excitation at those instants.
    pub controls: Vec<f64>,
    /// First coefficient truth `cos t_k`.
    pub theta1: Vec<f64>,
    /// Second coefficient truth `cos 0.2 t_k`.
    pub theta2: Vec<f64>,
    /// Noisy state measurements.
    pub measurements: Vec<f64>,
}

pub fn gen_tvparam(
    seed: u64,
    t_steps: usize,
    dt: f64,
    sigma_m: f64,
    amplitude: f64,
    period: f64,
) -> TvParamData {
    assert!(t_steps >= 1);
    assert!(dt > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = TvParamData {
        times: Vec::with_capacity(t_steps),
        latent: Vec::with_capacity(t_steps),
        controls: Vec::with_capacity(t_steps),
        theta1: Vec::with_capacity(t_steps),
        theta2: Vec::with_capacity(t_steps),
        measurements: Vec::with_capacity(t_steps),
    };
    let mut x = 0.0;
    for k in 0..t_steps {
        let t = k as f64 * dt;
        let c = tvparam_control(t, amplitude, period);
        let th1 = t.cos();
        let th2 = (0.2 * t).cos();
        out.times.push(t);
        out.latent.push(x);
        out.controls.push(c);
        out.theta1.push(th1);
        out.theta2.push(th2);
        let e: f64 = StandardNormal.sample(&mut rng);
        out.measurements.push(x + sigma_m * e);
        x += dt * (th1 * x + th2 + c);
    }
    out
}

/// Trajectory of a two-state linear system driven by one latent scalar
/// function of time, used as a backend-agreement playground.
#[derive(Debug, Clone, PartialEq)]
pub struct CustomData {
    pub times: Vec<f64>,
    /// Latent states, one pair per instant.
    pub latent: Vec<[f64; 2]>,
    /// The driving function truth `sin 0.3 t`.
    pub drive: Vec<f64>,
    /// Noisy measurements of both states.
    pub measurements: Vec<[f64; 2]>,
}

pub const CUSTOM_A: [[f64; 2]; 2] = [[0.92, 0.08], [-0.04, 0.96]];

pub fn custom_drive(t: f64) -> f64 {
    (0.3 * t).sin()
}

pub fn gen_custom(seed: u64, t_steps: usize, dt: f64, sigma_m2: f64) -> CustomData {
    assert!(t_steps >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sm = sigma_m2.sqrt();
    let mut out = CustomData {
        times: Vec::with_capacity(t_steps),
        latent: Vec::with_capacity(t_steps),
        drive: Vec::with_capacity(t_steps),
        measurements: Vec::with_capacity(t_steps),
    };
    let mut x = [0.3, -0.2];
    for k in 0..t_steps {
        let t = k as f64 * dt;
        let d = custom_drive(t);
        out.times.push(t);
        out.latent.push(x);
        out.drive.push(d);
        let e1: f64 = StandardNormal.sample(&mut rng);
        let e2: f64 = StandardNormal.sample(&mut rng);
        out.measurements.push([x[0] + sm * e1, x[1] + sm * e2]);
        x = [
            CUSTOM_A[0][0] * x[0] + CUSTOM_A[0][1] * x[1] + dt * d,
            CUSTOM_A[1][0] * x[0] + CUSTOM_A[1][1] * x[1],
        ];
    }
    out
}
