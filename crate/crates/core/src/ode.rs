//! Adaptive Dormand–Prince 5(4) stepper with a fourth-order continuous
//! extension, operating on flat complex state vectors.

use crate::error::{Error, Result};
use crate::operators::C64;


const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Tolerances and limits of the adaptive stepper.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    /// Largest step allowed (µs); 0 means unlimited.
    pub h_max: f64,
    /// Smallest step before declaring failure (µs).
    pub h_min: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { rtol: 1e-8, atol: 1e-10, h_max: 0.0, h_min: 1e-14 }
    }
}

/// Right-hand side `dy/dt = f(y)` of an autonomous system.
pub trait Rhs {
    fn eval(&mut self, y: &[C64], dy: &mut [C64]);
}

impl<F: FnMut(&[C64], &mut [C64])> Rhs for F {
    fn eval(&mut self, y: &[C64], dy: &mut [C64]) {
        self(y, dy)
    }
}

/// Dormand–Prince integrator state. After each accepted [`Dopri5::step`]
/// the interval `[t_prev, t]` can be densely sampled with
/// [`Dopri5::interpolate`].
pub struct Dopri5 {
    tol: Tolerances,
    n: usize,
    t: f64,
    t_prev: f64,
    h: f64,
    last_h: f64,
    y: Vec<C64>,
    y_prev: Vec<C64>,
    k: [Vec<C64>; 7],
    tmp: Vec<C64>,
    y_new: Vec<C64>,
    /// Continuous-extension coefficients; built lazily per step.
    cont: [Vec<C64>; 5],
    cont_valid: bool,
    fsal_valid: bool,
    steps: usize,
    rejected: usize,
    /// Derivative at `t_prev`, kept for the interpolant.
    k1_prev: Vec<C64>,
}

impl Dopri5 {
    pub fn new(t0: f64, y0: &[C64], tol: Tolerances) -> Self {
        let n = y0.len();
        let z = || vec![C64::new(0.0, 0.0); n];
        Dopri5 {
            tol,
            n,
            t: t0,
            t_prev: t0,
            h: 0.0,
            last_h: 0.0,
            y: y0.to_vec(),
            y_prev: y0.to_vec(),
            k: [z(), z(), z(), z(), z(), z(), z()],
            tmp: z(),
            y_new: z(),
            cont: [z(), z(), z(), z(), z()],
            cont_valid: false,
            fsal_valid: false,
            steps: 0,
            rejected: 0,
            k1_prev: z(),
        }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn t_prev(&self) -> f64 {
        self.t_prev
    }

    pub fn y(&self) -> &[C64] {
        &self.y
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn rejected(&self) -> usize {
        self.rejected
    }

    /// Replaces the current state (after a jump); the next step restarts
    /// the derivative cache and keeps the last step size as a guess.
    pub fn reset(&mut self, t: f64, y: &[C64]) {
        self.t = t;
        self.t_prev = t;
        self.y.copy_from_slice(y);
        self.y_prev.copy_from_slice(y);
        self.fsal_valid = false;
        self.cont_valid = false;
    }

    fn initial_step<R: Rhs>(&mut self, rhs: &mut R) -> f64 {
        // Hairer–Wanner starting-step heuristic.
        let n = self.n as f64;
        let (mut d0, mut d1) = (0.0, 0.0);
        for i in 0..self.n {
            let sc = self.tol.atol + self.tol.rtol * self.y[i].norm();
            d0 += (self.y[i].norm() / sc).powi(2);
            d1 += (self.k[0][i].norm() / sc).powi(2);
        }
        let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        for i in 0..self.n {
            self.tmp[i] = self.y[i] + self.k[0][i] * h0;
        }
        rhs.eval(&self.tmp, &mut self.k[1]);
        let mut d2 = 0.0;
        for i in 0..self.n {
            let sc = self.tol.atol + self.tol.rtol * self.y[i].norm();
            d2 += ((self.k[1][i] - self.k[0][i]).norm() / sc).powi(2);
        }
        let d2 = (d2 / n).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
        let mut h = (100.0 * h0).min(h1);
        if self.tol.h_max > 0.0 {
            h = h.min(self.tol.h_max);
        }
        h
    }

    /// Advances by one accepted step, never past `t_stop`.
    pub fn step<R: Rhs>(&mut self, rhs: &mut R, t_stop: f64) -> Result<()> {
        if !self.fsal_valid {
            rhs.eval(&self.y, &mut self.k[0]);
            self.fsal_valid = true;
            if self.h <= 0.0 {
                self.h = self.initial_step(rhs);
            }
        }
        let n = self.n;
        loop {
            let mut h = self.h;
            if self.tol.h_max > 0.0 {
                h = h.min(self.tol.h_max);
            }
            let last = self.t + h >= t_stop;
            if last {
                h = t_stop - self.t;
            }
            if h < self.tol.h_min {
                if last && h > 0.0 {
                    // tiny remainder: take it without error control
                } else {
                    return Err(Error::Integration(format!("step size underflow at t = {}", self.t)));
                }
            }

            let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
            let y = &self.y;
            let tmp = &mut self.tmp;
            for i in 0..n {
                tmp[i] = y[i] + k1[i] * (h * A21);
            }
            rhs.eval(tmp, k2);
            for i in 0..n {
                tmp[i] = y[i] + (k1[i] * A31 + k2[i] * A32) * h;
            }
            rhs.eval(tmp, k3);
            for i in 0..n {
                tmp[i] = y[i] + (k1[i] * A41 + k2[i] * A42 + k3[i] * A43) * h;
            }
            rhs.eval(tmp, k4);
            for i in 0..n {
                tmp[i] = y[i] + (k1[i] * A51 + k2[i] * A52 + k3[i] * A53 + k4[i] * A54) * h;
            }
            rhs.eval(tmp, k5);
            for i in 0..n {
                tmp[i] = y[i] + (k1[i] * A61 + k2[i] * A62 + k3[i] * A63 + k4[i] * A64 + k5[i] * A65) * h;
            }
            rhs.eval(tmp, k6);
            let y_new = &mut self.y_new;
            for i in 0..n {
                y_new[i] = y[i] + (k1[i] * A71 + k3[i] * A73 + k4[i] * A74 + k5[i] * A75 + k6[i] * A76) * h;
            }
            rhs.eval(y_new, k7);

            let mut err = 0.0;
            for i in 0..n {
                let e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * h;
                let sc = self.tol.atol + self.tol.rtol * y[i].norm().max(y_new[i].norm());
                err += (e.norm() / sc).powi(2);
            }
            let err = (err / n as f64).sqrt();

            let small_remainder = last && h < self.tol.h_min;
            if err <= 1.0 || small_remainder {
                self.t_prev = self.t;
                self.t = if last { t_stop } else { self.t + h };
                std::mem::swap(&mut self.y_prev, &mut self.y);
                std::mem::swap(&mut self.y, &mut self.y_new);
                self.k1_prev.copy_from_slice(&self.k[0]);
                // k1 of the next step equals k7 of this one.
                self.k.swap(0, 6);
                self.cont_valid = false;
                self.last_h = h;
                self.steps += 1;
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !last || fac < 1.0 {
                    self.h = h * fac;
                }
                return Ok(());
            }
            self.rejected += 1;
            self.h = h * (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
        }
    }

    fn build_cont(&mut self) {
        if self.cont_valid {
            return;
        }
        let h = self.last_h;
        let n = self.n;
        // After the swap, k[0] holds k7 (derivative at t) and k[6] holds the old k1.
        let k1 = &self.k1_prev;
        let k7 = &self.k[0];
        let (k3, k4, k5, k6) = (&self.k[2], &self.k[3], &self.k[4], &self.k[5]);
        for i in 0..n {
            let ydiff = self.y[i] - self.y_prev[i];
            let bspl = k1[i] * h - ydiff;
            self.cont[0][i] = self.y_prev[i];
            self.cont[1][i] = ydiff;
            self.cont[2][i] = bspl;
            self.cont[3][i] = ydiff - k7[i] * h - bspl;
            self.cont[4][i] = (k1[i] * D1 + k3[i] * D3 + k4[i] * D4 + k5[i] * D5 + k6[i] * D6 + k7[i] * D7) * h;
        }
        self.cont_valid = true;
    }

    /// Dense output at `t ∈ [t_prev, t]` of the last accepted step.
    pub fn interpolate(&mut self, t: f64, out: &mut [C64]) {
        if t >= self.t {
            out.copy_from_slice(&self.y);
            return;
        }
        if t <= self.t_prev {
            out.copy_from_slice(&self.y_prev);
            return;
        }
        self.build_cont();
        let theta = (t - self.t_prev) / self.last_h;
        let theta1 = 1.0 - theta;
        let c = &self.cont;
        for i in 0..self.n {
            out[i] = c[0][i] + (c[1][i] + (c[2][i] + (c[3][i] + c[4][i] * theta1) * theta) * theta1) * theta;
        }
    }
}
