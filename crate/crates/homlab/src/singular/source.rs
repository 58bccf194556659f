//! Singular source library.
//!
//! Every source is a nonnegative Caratheodory-style map `F(x, s)` together
//! with a declared envelope `F(x, s) <= h(x) / Gamma(s)` for `s > 0`, where
//! `Gamma` vanishes at zero and is strictly increasing. The envelope is
//! validated by sampling at construction and checked again at every solver
//! evaluation.

use crate::domain::Mesh;
use crate::error::{HomlabError, Stage};
use serde::{Deserialize, Serialize};

/// Envelope denominator `Gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaCurve {
    /// `s^gamma`, `gamma > 0`.
    Power { gamma: f64 },
    /// `s / (1 + s)`, bounded by one; pairs with bounded sources.
    Saturating,
    /// `scale * exp(-c / s)`; flat to every order at zero.
    ExpReciprocal { scale: f64, c: f64 },
}

impl GammaCurve {
    pub fn eval(&self, s: f64) -> f64 {
        debug_assert!(s >= 0.0);
        match *self {
            GammaCurve::Power { gamma } => s.powf(gamma),
            GammaCurve::Saturating => s / (1.0 + s),
            GammaCurve::ExpReciprocal { scale, c } => {
                if s == 0.0 {
                    0.0
                } else {
                    scale * (-c / s).exp()
                }
            }
        }
    }
}

/// Configuration-level source descriptor. Scalar fields are broadcast over
/// the mesh vertices at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    /// `F = f`, independent of `s`.
    Constant { f: f64 },
    /// `F = h / s^gamma`. `envelope_h` overrides the declared envelope
    /// numerator (the override is validated by sampling).
    Power {
        h: f64,
        gamma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        envelope_h: Option<f64>,
    },
    /// `F = f (a + sin(1/s)) exp(1/s)` with `a > 1`.
    OscillatingExp { f: f64, a: f64 },
    /// `F = f (a + sin(c/s)) exp(c/s) + g (b + sin(1/s)) / s^gamma + l`
    /// with `a > 1`, `b > 1`, `gamma > 0`, `c > 0`.
    Composite {
        f: f64,
        a: f64,
        g: f64,
        b: f64,
        gamma: f64,
        l: f64,
        #[serde(default = "default_one")]
        c: f64,
    },
}

fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone)]
enum Kind {
    Constant {
        f: Vec<f64>,
    },
    Power {
        h: Vec<f64>,
        gamma: f64,
    },
    OscillatingExp {
        f: Vec<f64>,
        a: f64,
    },
    Composite {
        f: Vec<f64>,
        a: f64,
        g: Vec<f64>,
        b: f64,
        gamma: f64,
        l: Vec<f64>,
        c: f64,
    },
}

/// Evaluable singular source with its envelope data.
#[derive(Debug, Clone)]
pub struct SingularSource {
    kind: Kind,
    /// Envelope numerator per vertex.
    pub envelope_h: Vec<f64>,
    pub gamma: GammaCurve,
    /// Set only for source kinds that are provably nonincreasing in `s`.
    pub nonincreasing: bool,
}

const ENVELOPE_SLACK: f64 = 1e-12;

impl SingularSource {
    /// Raw evaluation at `s > 0`.
    pub fn eval(&self, vertex: usize, s: f64) -> f64 {
        debug_assert!(s > 0.0, "singular source evaluated at s = {s}");
        match &self.kind {
            Kind::Constant { f } => f[vertex],
            Kind::Power { h, gamma } => h[vertex] / s.powf(*gamma),
            Kind::OscillatingExp { f, a } => f[vertex] * (a + (1.0 / s).sin()) * (1.0 / s).exp(),
            Kind::Composite {
                f,
                a,
                g,
                b,
                gamma,
                l,
                c,
            } => {
                f[vertex] * (a + (c / s).sin()) * (c / s).exp()
                    + g[vertex] * (b + (1.0 / s).sin()) / s.powf(*gamma)
                    + l[vertex]
            }
        }
    }

    /// Regularized evaluation `F(x, max(s, delta))`, bounded by
    /// `h(x) / Gamma(delta)`.
    pub fn eval_regularized(&self, vertex: usize, s: f64, delta: f64) -> f64 {
        self.eval(vertex, s.max(delta))
    }

    /// `F(x, s) * Gamma(s)` evaluated in combined form, so the exponential
    /// kinds stay finite where the bare factors would overflow or underflow.
    pub fn eval_times_gamma(&self, vertex: usize, s: f64) -> f64 {
        debug_assert!(s > 0.0);
        match &self.kind {
            Kind::Constant { f } => f[vertex] * s / (1.0 + s),
            Kind::Power { h, .. } => h[vertex],
            Kind::OscillatingExp { f, a } => f[vertex] * (a + (1.0 / s).sin()) / (a + 1.0),
            Kind::Composite {
                f,
                a,
                g,
                b,
                gamma,
                l,
                c,
            } => {
                let decay = (-c / s - gamma * s.ln()).exp();
                (f[vertex] * (a + (c / s).sin())
                    + g[vertex] * (b + (1.0 / s).sin()) * decay
                    + l[vertex] * (-c / s).exp())
                    / (a + 1.0)
            }
        }
    }

    /// Envelope check at one evaluation point: `F * Gamma <= h` with 1e-12
    /// relative slack.
    pub fn envelope_ok(&self, vertex: usize, s: f64) -> bool {
        let fg = self.eval_times_gamma(vertex, s);
        let bound = self.envelope_h[vertex];
        fg <= bound * (1.0 + ENVELOPE_SLACK) + 1e-300
    }

    pub fn n_vertices(&self) -> usize {
        self.envelope_h.len()
    }
}

fn require(cond: bool, msg: String) -> Result<(), HomlabError> {
    if cond {
        Ok(())
    } else {
        Err(HomlabError::stage(Stage::Solver, msg))
    }
}

/// Build an evaluable source on a mesh from its descriptor, deriving the
/// envelope and validating it on a sampling grid.
pub fn make_source(mesh: &Mesh, spec: &SourceSpec) -> Result<SingularSource, HomlabError> {
    let n = mesh.n_vertices();
    let broadcast = |v: f64| vec![v; n];
    let source = match *spec {
        SourceSpec::Constant { f } => {
            require(f >= 0.0, format!("constant source needs f >= 0, got {f}"))?;
            SingularSource {
                kind: Kind::Constant { f: broadcast(f) },
                // f <= f (1+s)/s for every s > 0
                envelope_h: broadcast(f),
                gamma: GammaCurve::Saturating,
                nonincreasing: true,
            }
        }
        SourceSpec::Power { h, gamma, envelope_h } => {
            require(h >= 0.0, format!("power source needs h >= 0, got {h}"))?;
            require(gamma > 0.0, format!("power source needs gamma > 0, got {gamma}"))?;
            SingularSource {
                kind: Kind::Power {
                    h: broadcast(h),
                    gamma,
                },
                envelope_h: broadcast(envelope_h.unwrap_or(h)),
                gamma: GammaCurve::Power { gamma },
                nonincreasing: true,
            }
        }
        SourceSpec::OscillatingExp { f, a } => {
            require(f >= 0.0, format!("oscillating source needs f >= 0, got {f}"))?;
            require(a > 1.0, format!("oscillating source needs a > 1, got {a}"))?;
            SingularSource {
                kind: Kind::OscillatingExp { f: broadcast(f), a },
                // (a + sin) / (a + 1) <= 1
                envelope_h: broadcast(f),
                gamma: GammaCurve::ExpReciprocal {
                    scale: 1.0 / (a + 1.0),
                    c: 1.0,
                },
                nonincreasing: false,
            }
        }
        SourceSpec::Composite {
            f,
            a,
            g,
            b,
            gamma,
            l,
            c,
        } => {
            require(f >= 0.0 && g >= 0.0 && l >= 0.0, "composite source fields must be >= 0".into())?;
            require(a > 1.0, format!("composite source needs a > 1, got {a}"))?;
            require(b > 1.0, format!("composite source needs b > 1, got {b}"))?;
            require(gamma > 0.0, format!("composite source needs gamma > 0, got {gamma}"))?;
            require(c > 0.0, format!("composite source needs c > 0, got {c}"))?;
            // sup_s s^(-gamma) exp(-c/s) = exp(-gamma) (gamma/c)^gamma
            let power_peak = (-gamma).exp() * (gamma / c).powf(gamma);
            let h = f + (g * (b + 1.0) * power_peak + l) / (a + 1.0);
            SingularSource {
                kind: Kind::Composite {
                    f: broadcast(f),
                    a,
                    g: broadcast(g),
                    b,
                    gamma,
                    l: broadcast(l),
                    c,
                },
                envelope_h: broadcast(h),
                gamma: GammaCurve::ExpReciprocal {
                    scale: 1.0 / (a + 1.0),
                    c,
                },
                nonincreasing: false,
            }
        }
    };
    // sampling check of the declared envelope over a log grid
    let mut s = 1e-8;
    while s <= 1e3 {
        for v in 0..n {
            if !source.envelope_ok(v, s) {
                return Err(HomlabError::stage(
                    Stage::Solver,
                    format!(
                        "envelope violation at construction: F * Gamma > h at s = {s:.3e} (vertex {v})"
                    ),
                ));
            }
        }
        s *= 2.7;
    }
    Ok(source)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_mesh, LatticeSpec, MeshParams};

    fn small_mesh() -> Mesh {
        let spec = LatticeSpec::unit_square(5.0, 200.0).unwrap();
        build_mesh(
            &spec,
            &MeshParams {
                target_h: 0.5,
                ..MeshParams::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn power_source_values() {
        let mesh = small_mesh();
        let s = make_source(&mesh, &SourceSpec::Power { h: 1.0, gamma: 2.0, envelope_h: None }).unwrap();
        assert!((s.eval(0, 2.0) - 0.25).abs() < 1e-15);
        assert!(s.nonincreasing);
        // regularization clamps below delta
        assert!((s.eval_regularized(0, 0.01, 0.1) - 100.0).abs() < 1e-10);
        assert!((s.eval_regularized(0, 0.5, 0.1) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn constant_source_values() {
        let mesh = small_mesh();
        let s = make_source(&mesh, &SourceSpec::Constant { f: 3.0 }).unwrap();
        for sv in [0.001, 0.5, 10.0] {
            assert_eq!(s.eval(0, sv), 3.0);
        }
        assert!(s.nonincreasing);
    }

    #[test]
    fn composite_matches_hand_value() {
        let mesh = small_mesh();
        let spec = SourceSpec::Composite {
            f: 0.0,
            a: 2.0,
            g: 1.0,
            b: 2.0,
            gamma: 1.0,
            l: 0.0,
            c: 1.0,
        };
        let s = make_source(&mesh, &spec).unwrap();
        // (2 + sin 2) * 2
        let expect = (2.0 + 2.0f64.sin()) * 2.0;
        assert!((s.eval(0, 0.5) - expect).abs() < 1e-12);
        assert!((expect - 5.819).abs() < 1e-3);
        assert!(!s.nonincreasing);
    }

    #[test]
    fn oscillating_envelope_holds() {
        let mesh = small_mesh();
        let s = make_source(&mesh, &SourceSpec::OscillatingExp { f: 2.0, a: 1.5 }).unwrap();
        // sup F * Gamma = f (a + sin)/(a+1) <= f
        let mut sv = 1e-6;
        while sv < 100.0 {
            assert!(s.envelope_ok(0, sv));
            sv *= 3.0;
        }
    }

    #[test]
    fn envelope_override_violation_detected() {
        let mesh = small_mesh();
        let err = make_source(
            &mesh,
            &SourceSpec::Power {
                h: 1.0,
                gamma: 2.0,
                envelope_h: Some(0.5),
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("envelope violation"));
    }

    #[test]
    fn parameter_ranges_enforced() {
        let mesh = small_mesh();
        assert!(make_source(&mesh, &SourceSpec::Power { h: 1.0, gamma: 0.0, envelope_h: None }).is_err());
        assert!(make_source(&mesh, &SourceSpec::OscillatingExp { f: 1.0, a: 1.0 }).is_err());
        assert!(make_source(
            &mesh,
            &SourceSpec::Composite {
                f: 1.0,
                a: 2.0,
                g: 1.0,
                b: 0.9,
                gamma: 1.0,
                l: 0.0,
                c: 1.0
            }
        )
        .is_err());
        assert!(make_source(&mesh, &SourceSpec::Constant { f: -1.0 }).is_err());
    }

    #[test]
    fn gamma_curves_vanish_at_zero_and_increase() {
        for g in [
            GammaCurve::Power { gamma: 2.0 },
            GammaCurve::Saturating,
            GammaCurve::ExpReciprocal { scale: 0.5, c: 1.0 },
        ] {
            assert_eq!(g.eval(0.0), 0.0);
            let mut prev = 0.0;
            for k in 1..40 {
                let s = k as f64 * 0.1;
                let v = g.eval(s);
                assert!(v > prev);
                prev = v;
            }
        }
    }
}
