use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Bindings, ExpressionAst};

/// Shape of the pair `(E, B)` as functions of the collar coordinate `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum EnvelopeKind {
    /// `E = B = 1`.
    Unit,
    /// `E = C`, `B = (α + 1/2) / t`: polynomial vanishing `t^α`.
    Power { alpha: f64 },
    /// `E = C`, `B = 1 + α t^{-α-1}`: vanishing like `exp(-t^{-α})`.
    Stretched { alpha: f64 },
    /// `E = C (1 - ln t)`, `B = 1 / t`.
    Log,
    /// User expressions in `a` and `t`.
    Custom {
        #[serde(serialize_with = "ser_expr")]
        e: ExpressionAst,
        #[serde(serialize_with = "ser_expr")]
        b: ExpressionAst,
    },
}

fn ser_expr<S: serde::Serializer>(e: &ExpressionAst, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(e.source())
}

/// Candidate decay envelope `(E, B, A)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayEnvelope {
    pub name: String,
    pub kind: EnvelopeKind,
    /// Scale `C` of `E` (ignored by `Unit` and `Custom`).
    pub scale: f64,
    /// Closure constant `A`.
    pub a: f64,
}

impl DecayEnvelope {
    /// Builds the envelope and picks `A` as 5% above `sup_t E^k / B`, which
    /// makes the closure inequality hold with margin when the supremum is
    /// finite.
    pub fn new(name: impl Into<String>, kind: EnvelopeKind, scale: f64, k: usize) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "envelope scale must be positive, got {scale}"
            )));
        }
        let mut env = DecayEnvelope {
            name: name.into(),
            kind,
            scale,
            a: 1.0,
        };
        let mut sup = 0.0f64;
        for i in 0..=400 {
            let t = 10f64.powf(-8.0 * (1.0 - i as f64 / 400.0));
            sup = sup.max(env.e(0.0, t)?.powi(k as i32) / env.b(0.0, t)?);
        }
        if !sup.is_finite() {
            return Err(Error::InvalidParam(format!(
                "envelope `{}` admits no closure constant",
                env.name
            )));
        }
        env.a = 1.05 * sup;
        Ok(env)
    }

    /// Envelope with an explicit closure constant.
    pub fn with_constant(
        name: impl Into<String>,
        kind: EnvelopeKind,
        scale: f64,
        a: f64,
    ) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "closure constant must be positive, got {a}"
            )));
        }
        Ok(DecayEnvelope {
            name: name.into(),
            kind,
            scale,
            a,
        })
    }

    fn custom(e: &ExpressionAst, a: f64, t: f64) -> Result<f64> {
        e.eval(&Bindings { x: 0.0, a, t })
    }

    pub fn e(&self, a: f64, t: f64) -> Result<f64> {
        let c = self.scale;
        match &self.kind {
            EnvelopeKind::Unit => Ok(1.0),
            EnvelopeKind::Power { .. } | EnvelopeKind::Stretched { .. } => Ok(c),
            EnvelopeKind::Log => Ok(c * (1.0 - t.ln())),
            EnvelopeKind::Custom { e, .. } => Self::custom(e, a, t),
        }
    }

    pub fn b(&self, a: f64, t: f64) -> Result<f64> {
        match &self.kind {
            EnvelopeKind::Unit => Ok(1.0),
            EnvelopeKind::Power { alpha } => Ok((alpha + 0.5) / t),
            EnvelopeKind::Stretched { alpha } => Ok(1.0 + alpha * t.powf(-alpha - 1.0)),
            EnvelopeKind::Log => Ok(1.0 / t),
            EnvelopeKind::Custom { b, .. } => Self::custom(b, a, t),
        }
    }
}

/// Standard candidates for order `k`, scale `C = 2`.
pub fn envelope_library(k: usize) -> Vec<DecayEnvelope> {
    let mut out =
        vec![DecayEnvelope::new("unit", EnvelopeKind::Unit, 1.0, k).expect("unit envelope")];
    for alpha in [0.5, 1.0, 2.0, 3.0, 4.0, 5.0] {
        out.push(
            DecayEnvelope::new(
                format!("power({alpha})"),
                EnvelopeKind::Power { alpha },
                2.0,
                k,
            )
            .expect("power envelope"),
        );
    }
    for alpha in [0.5, 1.0, 2.0] {
        out.push(
            DecayEnvelope::new(
                format!("stretched({alpha})"),
                EnvelopeKind::Stretched { alpha },
                2.0,
                k,
            )
            .expect("stretched envelope"),
        );
    }
    out.push(DecayEnvelope::new("log", EnvelopeKind::Log, 2.0, k).expect("log envelope"));
    out
}
