use super::params::CartPoleParams;

pub(crate) const STATES: [&str; 4] = ["x", "x_dot", "theta", "theta_dot"];
pub(crate) const ACTIONS: [&str; 1] = ["a_f"];

/// Normalized force command is scaled to newtons inside the dynamics.
pub(crate) const FORCE_GAIN: f64 = 10.0;

impl CartPoleParams {
    pub(crate) fn rhs(&self, s: &[f64], a: &[f64], out: &mut [f64]) {
        let (xd, th, om) = (s[1], s[2], s[3]);
        let total = self.m_p + self.m_c;
        let (sn, cs) = th.sin_cos();
        let d = (FORCE_GAIN * a[0] + self.m_p * self.l * om * om * sn) / total;
        let den = self.l * (4.0 / 3.0 - self.m_p * cs * cs / total);
        let th_acc = (self.g * sn - d * cs) / den;
        let x_acc = d - self.m_p * self.l * th_acc * cs / total;
        out[0] = xd;
        out[1] = x_acc;
        out[2] = om;
        out[3] = th_acc;
    }

    pub(crate) fn rhs_jacobian(&self, s: &[f64], a: &[f64], ds: &mut [f64], da: &mut [f64]) {
        let (th, om) = (s[2], s[3]);
        let total = self.m_p + self.m_c;
        let ml = self.m_p * self.l;
        let (sn, cs) = th.sin_cos();

        let d = (FORCE_GAIN * a[0] + ml * om * om * sn) / total;
        let d_th = ml * om * om * cs / total;
        let d_om = 2.0 * ml * om * sn / total;
        let d_a = FORCE_GAIN / total;

        let num = self.g * sn - d * cs;
        let num_th = self.g * cs - d_th * cs + d * sn;
        let num_om = -d_om * cs;
        let num_a = -d_a * cs;
        let den = self.l * (4.0 / 3.0 - self.m_p * cs * cs / total);
        let den_th = self.l * 2.0 * self.m_p * cs * sn / total;

        let acc = num / den;
        let acc_th = (num_th * den - num * den_th) / (den * den);
        let acc_om = num_om / den;
        let acc_a = num_a / den;

        let x_th = d_th - ml * (acc_th * cs - acc * sn) / total;
        let x_om = d_om - ml * acc_om * cs / total;
        let x_a = d_a - ml * acc_a * cs / total;

        ds.copy_from_slice(&[
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, x_th, x_om, //
            0.0, 0.0, 0.0, 1.0, //
            0.0, 0.0, acc_th, acc_om,
        ]);
        da.copy_from_slice(&[0.0, x_a, 0.0, acc_a]);
    }
}
