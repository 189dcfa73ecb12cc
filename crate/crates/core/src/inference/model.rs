use serde::{Deserialize, Serialize};

use crate::covariance::{KernelFamily, KernelParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    /// Constant intercept, nugget only.
    M0,
    /// Varying intercept, independent in time.
    M1,
    /// Varying intercept following an AR(1) process.
    M2,
    /// AR(1) varying intercept plus fixed covariate slopes.
    M3,
    Generic,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::M0 => "M0",
            ModelKind::M1 => "M1",
            ModelKind::M2 => "M2",
            ModelKind::M3 => "M3",
            ModelKind::Generic => "generic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m0" | "0" => Ok(ModelKind::M0),
            "m1" | "1" => Ok(ModelKind::M1),
            "m2" | "2" => Ok(ModelKind::M2),
            "m3" | "3" => Ok(ModelKind::M3),
            "generic" => Ok(ModelKind::Generic),
            other => Err(Error::Config(format!("unknown model '{other}' (expected m0, m1, m2, m3)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemporalKind {
    Iid,
    Ar1,
}

/// Model structure. The AR(1) coefficient itself is a parameter, so only its presence lives here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Number of covariates.
    pub q: usize,
    pub temporal: TemporalKind,
    pub varying_slopes: bool,
    pub family: KernelFamily,
    /// Held fixed during fitting.
    pub smoothness: f64,
}

impl ModelSpec {
    fn base(kind: ModelKind, q: usize, temporal: TemporalKind, varying_slopes: bool) -> Self {
        ModelSpec {
            kind,
            q,
            temporal,
            varying_slopes,
            family: KernelFamily::Matern,
            smoothness: 1.0,
        }
    }

    pub fn m0() -> Self {
        Self::base(ModelKind::M0, 0, TemporalKind::Iid, false)
    }

    pub fn m1() -> Self {
        Self::base(ModelKind::M1, 0, TemporalKind::Iid, false)
    }

    pub fn m2() -> Self {
        Self::base(ModelKind::M2, 0, TemporalKind::Ar1, false)
    }

    pub fn m3(q: usize) -> Self {
        Self::base(ModelKind::M3, q, TemporalKind::Ar1, false)
    }

    pub fn generic(q: usize, temporal: TemporalKind, varying_slopes: bool) -> Self {
        Self::base(ModelKind::Generic, q, temporal, varying_slopes)
    }

    /// Named model with `q` covariates; M0 takes `q` fixed slopes, M1 and M2 ignore covariates.
    pub fn named(kind: ModelKind, q: usize) -> Self {
        match kind {
            ModelKind::M0 => ModelSpec { q, ..Self::m0() },
            ModelKind::M1 => Self::m1(),
            ModelKind::M2 => Self::m2(),
            ModelKind::M3 => Self::m3(q),
            ModelKind::Generic => Self::generic(q, TemporalKind::Iid, false),
        }
    }

    pub fn with_kernel(mut self, family: KernelFamily, smoothness: f64) -> Self {
        self.family = family;
        self.smoothness = if family == KernelFamily::Exponential { 0.5 } else { smoothness };
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("{}: {msg}", self.kind.as_str())));
        match self.kind {
            ModelKind::M0 if self.varying_slopes || self.temporal != TemporalKind::Iid => {
                return bad("has no varying terms")
            }
            ModelKind::M1 if self.temporal != TemporalKind::Iid || self.varying_slopes || self.q > 0 => {
                return bad("is an i.i.d.-in-time intercept-only model")
            }
            ModelKind::M2 if self.temporal != TemporalKind::Ar1 || self.varying_slopes || self.q > 0 => {
                return bad("is an AR(1) intercept-only model")
            }
            ModelKind::M3 if self.temporal != TemporalKind::Ar1 || self.varying_slopes || self.q == 0 => {
                return bad("needs AR(1) time structure and at least one fixed slope")
            }
            ModelKind::Generic if self.varying_slopes && self.q == 0 => {
                return bad("varying slopes need at least one covariate")
            }
            _ => {}
        }
        if !(self.smoothness > 0.0 && self.smoothness.is_finite()) {
            return bad("smoothness must be positive");
        }
        Ok(())
    }

    /// Whether the varying intercept process is present.
    pub fn has_intercept_process(&self) -> bool {
        self.kind != ModelKind::M0
    }

    pub fn kernel(&self, range: f64, sd: f64) -> KernelParams {
        KernelParams {
            family: self.family,
            range,
            sd,
            smoothness: self.smoothness,
        }
    }

    /// Number of fixed-effect coefficients (intercept included).
    pub fn fixed_effects(&self) -> usize {
        1 + self.q
    }
}

/// All estimable parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub beta0: f64,
    pub beta1: Vec<f64>,
    pub theta0: Option<KernelParams>,
    pub theta1: Option<KernelParams>,
    pub tau_sq: f64,
    pub rho_ar: Option<f64>,
}

impl ParamVector {
    pub fn validate_for(&self, model: &ModelSpec) -> Result<()> {
        model.validate()?;
        let shape_ok = self.beta1.len() == model.q
            && self.theta0.is_some() == model.has_intercept_process()
            && self.theta1.is_some() == model.varying_slopes
            && self.rho_ar.is_some() == (model.temporal == TemporalKind::Ar1);
        if !shape_ok {
            return Err(Error::Dimension(format!(
                "parameter vector does not fit model {}: {self:?}",
                model.kind.as_str()
            )));
        }
        for k in self.theta0.iter().chain(self.theta1.iter()) {
            k.validate()?;
        }
        if !(self.tau_sq > 0.0 && self.tau_sq.is_finite()) {
            return Err(Error::Domain(format!("tau_sq must be positive, got {}", self.tau_sq)));
        }
        if let Some(r) = self.rho_ar {
            if !(r.abs() < 1.0) {
                return Err(Error::Domain(format!("rho must lie in (-1, 1), got {r}")));
            }
        }
        if !self.beta0.is_finite() || self.beta1.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("fixed effects must be finite".into()));
        }
        Ok(())
    }

    pub fn fixed_effects(&self) -> Vec<f64> {
        std::iter::once(self.beta0).chain(self.beta1.iter().copied()).collect()
    }

    pub fn set_fixed_effects(&mut self, beta: &[f64]) {
        self.beta0 = beta[0];
        self.beta1 = beta[1..].to_vec();
    }

    /// Named scalar view used for CSV output and summaries.
    pub fn named_values(&self) -> Vec<(String, f64)> {
        let mut out = vec![("beta0".to_string(), self.beta0)];
        for (j, b) in self.beta1.iter().enumerate() {
            out.push((format!("beta1_{}", j + 1), *b));
        }
        if let Some(k) = &self.theta0 {
            out.push(("phi0".into(), k.range));
            out.push(("sigma0".into(), k.sd));
        }
        if let Some(k) = &self.theta1 {
            out.push(("phi1".into(), k.range));
            out.push(("sigma1".into(), k.sd));
        }
        out.push(("tau_sq".into(), self.tau_sq));
        if let Some(r) = self.rho_ar {
            out.push(("rho".into(), r));
        }
        out
    }

    /// Inverse of `named_values` for a given model.
    pub fn from_named(model: &ModelSpec, values: &[(String, f64)]) -> Result<Self> {
        let get = |name: &str| -> Result<f64> {
            values
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::Config(format!("missing parameter '{name}'")))
        };
        let p = ParamVector {
            beta0: get("beta0")?,
            beta1: (1..=model.q).map(|j| get(&format!("beta1_{j}"))).collect::<Result<_>>()?,
            theta0: if model.has_intercept_process() {
                Some(model.kernel(get("phi0")?, get("sigma0")?))
            } else {
                None
            },
            theta1: if model.varying_slopes {
                Some(model.kernel(get("phi1")?, get("sigma1")?))
            } else {
                None
            },
            tau_sq: get("tau_sq")?,
            rho_ar: if model.temporal == TemporalKind::Ar1 { Some(get("rho")?) } else { None },
        };
        p.validate_for(model)?;
        Ok(p)
    }
}

/// Map between a `ParamVector` and an unconstrained coordinate vector.
///
/// Positive parameters use logs and the AR(1) coefficient uses atanh; fixed
/// effects are optional (the ML path profiles them out) and the nugget can be
/// held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub model: ModelSpec,
    pub include_beta: bool,
    pub fix_nugget: bool,
}

impl Layout {
    pub fn new(model: ModelSpec, include_beta: bool, fix_nugget: bool) -> Self {
        Layout {
            model,
            include_beta,
            fix_nugget,
        }
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.include_beta {
            out.push("beta0".to_string());
            out.extend((1..=self.model.q).map(|j| format!("beta1_{j}")));
        }
        if self.model.has_intercept_process() {
            out.push("phi0".into());
            out.push("sigma0".into());
        }
        if self.model.varying_slopes {
            out.push("phi1".into());
            out.push("sigma1".into());
        }
        if !self.fix_nugget {
            out.push("tau_sq".into());
        }
        if self.model.temporal == TemporalKind::Ar1 {
            out.push("rho".into());
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.names().len()
    }

    pub fn to_free(&self, p: &ParamVector) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.dim());
        if self.include_beta {
            z.push(p.beta0);
            z.extend_from_slice(&p.beta1);
        }
        for k in p.theta0.iter().chain(p.theta1.iter()) {
            z.push(k.range.ln());
            z.push(k.sd.ln());
        }
        if !self.fix_nugget {
            z.push(p.tau_sq.ln());
        }
        if let Some(r) = p.rho_ar {
            z.push(r.atanh());
        }
        z
    }

    /// Coordinates back to parameters; entries not in the layout come from `template`.
    pub fn from_free(&self, z: &[f64], template: &ParamVector) -> ParamVector {
        let mut it = z.iter().copied();
        let mut p = template.clone();
        if self.include_beta {
            p.beta0 = it.next().expect("layout dimension");
            for b in p.beta1.iter_mut() {
                *b = it.next().expect("layout dimension");
            }
        }
        let m = &self.model;
        let mut kernel = |_: ()| {
            let range = it.next().expect("layout dimension").exp();
            let sd = it.next().expect("layout dimension").exp();
            m.kernel(range, sd)
        };
        if m.has_intercept_process() {
            p.theta0 = Some(kernel(()));
        }
        if m.varying_slopes {
            p.theta1 = Some(kernel(()));
        }
        if !self.fix_nugget {
            p.tau_sq = it.next().expect("layout dimension").exp();
        }
        if m.temporal == TemporalKind::Ar1 {
            p.rho_ar = Some(it.next().expect("layout dimension").tanh());
        }
        p
    }

    /// Log absolute Jacobian of `from_free` at `z`.
    pub fn log_jacobian(&self, z: &[f64]) -> f64 {
        let mut i = 0;
        let mut total = 0.0;
        if self.include_beta {
            i += 1 + self.model.q;
        }
        let mut logs = 0;
        if self.model.has_intercept_process() {
            logs += 2;
        }
        if self.model.varying_slopes {
            logs += 2;
        }
        if !self.fix_nugget {
            logs += 1;
        }
        for _ in 0..logs {
            total += z[i];
            i += 1;
        }
        if self.model.temporal == TemporalKind::Ar1 {
            let r = z[i].tanh();
            total += (1.0 - r * r).ln();
        }
        total
    }
}
