use super::params::CstrParams;

pub(crate) const STATES: [&str; 4] = ["C_A", "C_B", "T_R", "T_K"];
pub(crate) const ACTIONS: [&str; 2] = ["a_F", "a_Q"];

pub(crate) const TARGET_CB: f64 = 0.6;

struct Rates {
    k1: f64,
    k2: f64,
    k3: f64,
    dk1: f64,
    dk2: f64,
    dk3: f64,
}

impl CstrParams {
    fn rates(&self, t_r: f64) -> Rates {
        let t = t_r + 273.15;
        let k1 = self.beta * self.k0_ab * (-self.e_a_ab / t).exp();
        let k2 = self.k0_bc * (-self.e_a_bc / t).exp();
        let k3 = self.k0_ad * (-self.alpha * self.e_a_ad / t).exp();
        let t2 = t * t;
        Rates {
            k1,
            k2,
            k3,
            dk1: k1 * self.e_a_ab / t2,
            dk2: k2 * self.e_a_bc / t2,
            dk3: k3 * self.alpha * self.e_a_ad / t2,
        }
    }

    pub(crate) fn rhs(&self, s: &[f64], a: &[f64], out: &mut [f64]) {
        let (ca, cb, tr, tk) = (s[0], s[1], s[2], s[3]);
        let (f, q) = (a[0], a[1]);
        let r = self.rates(tr);
        let rho_cp = self.rho * self.c_p;
        let exchange = self.k_w * self.a_r;
        out[0] = f * (self.c_a0 - ca) - r.k1 * ca - r.k3 * ca * ca;
        out[1] = -f * cb + r.k1 * ca - r.k2 * cb;
        out[2] = (r.k1 * ca * self.h_r_ab + r.k2 * cb * self.h_r_bc + r.k3 * ca * ca * self.h_r_ad) / -rho_cp
            + exchange * (tk - tr) / (rho_cp * self.v_r)
            + f * (self.t_in - tr);
        out[3] = (q + exchange * (tr - tk)) / (self.m_k * self.c_p_k);
    }

    pub(crate) fn rhs_jacobian(&self, s: &[f64], a: &[f64], ds: &mut [f64], da: &mut [f64]) {
        let (ca, cb, tr) = (s[0], s[1], s[2]);
        let f = a[0];
        let r = self.rates(tr);
        let rho_cp = self.rho * self.c_p;
        let exchange = self.k_w * self.a_r;
        let jacket = self.m_k * self.c_p_k;
        ds.copy_from_slice(&[
            -f - r.k1 - 2.0 * r.k3 * ca,
            0.0,
            -r.dk1 * ca - r.dk3 * ca * ca,
            0.0,
            //
            r.k1,
            -f - r.k2,
            r.dk1 * ca - r.dk2 * cb,
            0.0,
            //
            (r.k1 * self.h_r_ab + 2.0 * r.k3 * ca * self.h_r_ad) / -rho_cp,
            r.k2 * self.h_r_bc / -rho_cp,
            (r.dk1 * ca * self.h_r_ab + r.dk2 * cb * self.h_r_bc + r.dk3 * ca * ca * self.h_r_ad) / -rho_cp
                - exchange / (rho_cp * self.v_r)
                - f,
            exchange / (rho_cp * self.v_r),
            //
            0.0,
            0.0,
            exchange / jacket,
            -exchange / jacket,
        ]);
        da.copy_from_slice(&[
            self.c_a0 - ca,
            0.0,
            -cb,
            0.0,
            self.t_in - tr,
            0.0,
            0.0,
            1.0 / jacket,
        ]);
    }
}
