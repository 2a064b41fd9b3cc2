/// Numerical thresholds shared by every module.
///
/// All values are relative unless noted. `scaled` multiplies every field by the
/// same factor, which is how `QLIP_TOLERANCE_SCALE` is applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Minimum pivot ratio for a matrix to count as nonsingular.
    pub pivot: f64,
    pub resid: f64,
    pub sym: f64,
    pub eig: f64,
    pub psd: f64,
    pub feas: f64,
    pub strict: f64,
    /// Active-set threshold, applied as `act * (1 + |b_i|)`.
    pub act: f64,
    pub norm: f64,
}

pub const TOLERANCE_SCALE_ENV: &str = "QLIP_TOLERANCE_SCALE";

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { pivot: 1e-10, resid: 1e-9, sym: 1e-9, eig: 1e-8, psd: 1e-9, feas: 1e-9, strict: 1e-9, act: 1e-9, norm: 1e-8 }
    }
}

impl Tolerances {
    pub fn scaled(&self, factor: f64) -> Self {
        Tolerances {
            pivot: self.pivot * factor,
            resid: self.resid * factor,
            sym: self.sym * factor,
            eig: self.eig * factor,
            psd: self.psd * factor,
            feas: self.feas * factor,
            strict: self.strict * factor,
            act: self.act * factor,
            norm: self.norm * factor,
        }
    }

    /// Defaults multiplied by `QLIP_TOLERANCE_SCALE` when it is set to a
    /// positive finite number.
    pub fn from_env() -> Self {
        let scale = std::env::var(TOLERANCE_SCALE_ENV)
            .ok()
            .and_then(|s| s.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s > 0.0)
            .unwrap_or(1.0);
        Tolerances::default().scaled(scale)
    }
}
