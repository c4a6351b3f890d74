use super::params::GlucoseParams;

pub(crate) const STATES: [&str; 3] = ["G", "X", "I"];
pub(crate) const ACTIONS: [&str; 1] = ["a_I"];

impl GlucoseParams {
    pub fn meal(&self, t: f64) -> f64 {
        self.d0 * (-0.01 * t).exp()
    }

    pub(crate) fn rhs(&self, s: &[f64], a: &[f64], t: f64, out: &mut [f64]) {
        let (g, x, i) = (s[0], s[1], s[2]);
        out[0] = -self.p1 * (g - self.g_b) - g * x + self.meal(t);
        out[1] = -self.p2 * x + self.p3 * (i - self.i_b);
        out[2] = -self.n * (i - self.i_b) + a[0];
    }

    pub(crate) fn rhs_jacobian(&self, s: &[f64], ds: &mut [f64], da: &mut [f64]) {
        let (g, x) = (s[0], s[1]);
        ds.copy_from_slice(&[
            -self.p1 - x, -g, 0.0, //
            0.0, -self.p2, self.p3, //
            0.0, 0.0, -self.n,
        ]);
        da.copy_from_slice(&[0.0, 0.0, 1.0]);
    }

    /// Fasting equilibrium with no insulin infusion and no meal.
    pub(crate) fn equilibrium(&self) -> Vec<f64> {
        vec![self.g_b, 0.0, self.i_b]
    }
}
