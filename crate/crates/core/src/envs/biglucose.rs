//! Twelve-state insulin/glucagon model. State order:
//! `Q1, Q2, x1, x2, x3, S1, S2, I, Z1, Z2, N, Y`.

use super::params::BiGlucoseParams;
use super::Seam;

pub(crate) const STATES: [&str; 12] = ["Q1", "Q2", "x1", "x2", "x3", "S1", "S2", "I", "Z1", "Z2", "N", "Y"];
pub(crate) const ACTIONS: [&str; 2] = ["a_I", "a_N"];

const F01_KNEE: f64 = 81.0;
/// Renal clearance turns on at 152 mg/dL but its formula only becomes
/// positive above 9 mmol/L = 162 mg/dL.
const RENAL_ZERO: f64 = 162.0;
const RENAL_THRESHOLD: f64 = 152.0;

fn softplus(z: f64, width: f64) -> (f64, f64) {
    let u = z / width;
    let value = if u > 30.0 { z } else { width * u.exp().ln_1p() };
    let slope = 1.0 / (1.0 + (-u).exp());
    (value, slope)
}

impl BiGlucoseParams {
    pub fn glucose(&self, q1: f64) -> f64 {
        18.0 * q1 / self.v_g
    }

    pub fn meal_appearance(&self, t: f64) -> f64 {
        self.d_g * self.a_g / (self.t_max_g * self.t_max_g) * t * (-t / self.t_max_g).exp()
    }

    /// Non-insulin-dependent uptake `F01c(G)` and its slope in `G`.
    pub(crate) fn uptake(&self, g: f64, seam: Seam) -> (f64, f64) {
        match seam {
            Seam::Hard => {
                if g >= F01_KNEE {
                    (self.f01, 0.0)
                } else {
                    (self.f01 * g / F01_KNEE, self.f01 / F01_KNEE)
                }
            }
            Seam::Smooth { width } => {
                // F01 * min(G, 81) / 81 with a softplus corner
                let (sp, dsp) = softplus(F01_KNEE - g, width);
                (self.f01 * (F01_KNEE - sp) / F01_KNEE, self.f01 * dsp / F01_KNEE)
            }
        }
    }

    /// Renal clearance `F_R(G)`, clamped at zero, and its slope in `G`.
    pub(crate) fn renal(&self, g: f64, seam: Seam) -> (f64, f64) {
        let c = 0.003 * self.v_g / 18.0;
        match seam {
            Seam::Hard => {
                if g >= RENAL_THRESHOLD {
                    let v = 0.003 * (g / 18.0 - 9.0) * self.v_g;
                    if v > 0.0 {
                        (v, c)
                    } else {
                        (0.0, 0.0)
                    }
                } else {
                    (0.0, 0.0)
                }
            }
            Seam::Smooth { width } => {
                let (sp, dsp) = softplus(g - RENAL_ZERO, width);
                (c * sp, c * dsp)
            }
        }
    }

    pub(crate) fn rhs(&self, s: &[f64], a: &[f64], t: f64, seam: Seam, out: &mut [f64]) {
        let [q1, q2, x1, x2, x3, s1, s2, i, z1, z2, n, y] = s[..12] else {
            unreachable!("state has 12 entries")
        };
        let g = self.glucose(q1);
        let (f01c, _) = self.uptake(g, seam);
        let (fr, _) = self.renal(g, seam);
        let ti = self.t_max_i;
        let tn = self.t_max_n;
        out[0] = -f01c - x1 * q1 + self.k12 * q2 - fr + (1.0 - x3) * self.egp0
            + self.c_conv() * self.meal_appearance(t)
            + y * q1;
        out[1] = x1 * q1 - (self.k12 + x2) * q2;
        out[2] = -self.k_a1 * x1 + self.k_b1 * i;
        out[3] = -self.k_a2 * x2 + self.k_b2 * i;
        out[4] = -self.k_a3 * x3 + self.k_b3 * i;
        out[5] = a[0] - s1 / ti;
        out[6] = s1 / ti - s2 / ti;
        out[7] = s2 / (self.v_i * ti) - self.k_e * i;
        out[8] = a[1] - z1 / tn;
        out[9] = z1 / tn - z2 / tn;
        out[10] = -self.k_n * (n - self.n_b) + z2 / (self.v_n * tn);
        out[11] = -self.p * y + self.p * self.s_n * (n - self.n_b);
    }

    pub(crate) fn rhs_jacobian(&self, s: &[f64], seam: Seam, ds: &mut [f64], da: &mut [f64]) {
        const N: usize = 12;
        let [q1, q2, x1, x2, _x3, _s1, _s2, _i, _z1, _z2, _n, y] = s[..12] else {
            unreachable!("state has 12 entries")
        };
        let g = self.glucose(q1);
        let dg = 18.0 / self.v_g;
        let (_, df01) = self.uptake(g, seam);
        let (_, dfr) = self.renal(g, seam);
        ds.fill(0.0);
        da.fill(0.0);
        let mut set = |r: usize, c: usize, v: f64| ds[r * N + c] = v;
        let ti = self.t_max_i;
        let tn = self.t_max_n;
        set(0, 0, -df01 * dg - x1 - dfr * dg + y);
        set(0, 1, self.k12);
        set(0, 2, -q1);
        set(0, 4, -self.egp0);
        set(0, 11, q1);
        set(1, 0, x1);
        set(1, 1, -(self.k12 + x2));
        set(1, 2, q1);
        set(1, 3, -q2);
        set(2, 2, -self.k_a1);
        set(2, 7, self.k_b1);
        set(3, 3, -self.k_a2);
        set(3, 7, self.k_b2);
        set(4, 4, -self.k_a3);
        set(4, 7, self.k_b3);
        set(5, 5, -1.0 / ti);
        set(6, 5, 1.0 / ti);
        set(6, 6, -1.0 / ti);
        set(7, 6, 1.0 / (self.v_i * ti));
        set(7, 7, -self.k_e);
        set(8, 8, -1.0 / tn);
        set(9, 8, 1.0 / tn);
        set(9, 9, -1.0 / tn);
        set(10, 9, 1.0 / (self.v_n * tn));
        set(10, 10, -self.k_n);
        set(11, 10, self.p * self.s_n);
        set(11, 11, -self.p);
        // action columns: a_I feeds S1, a_N feeds Z1
        da[5 * 2] = 1.0;
        da[8 * 2 + 1] = 1.0;
    }

    /// Initial guess for the zero-input steady-state solve.
    pub(crate) fn equilibrium_guess(&self) -> Vec<f64> {
        let mut s = vec![0.0; 12];
        s[0] = 250.0 * self.v_g / 18.0;
        s[10] = self.n_b;
        s
    }
}
