//! Target eigenvalue regions for pole placement.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One convex constraint on closed-loop eigenvalues.
///
/// `Strip` keeps `-beta < Re(λ) < -alpha`; `Disk` keeps `|λ + q| < r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionConstraint {
    Strip { alpha: f64, beta: f64 },
    Disk { q: f64, r: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegionError {
    #[error("BadRegion: region has no constraints")]
    Empty,
    #[error("BadRegion: strip needs alpha < beta (alpha={alpha}, beta={beta})")]
    Strip { alpha: f64, beta: f64 },
    #[error("BadRegion: disk radius must be positive (r={r})")]
    Disk { r: f64 },
    #[error("BadRegion: constraints have an empty intersection")]
    EmptyIntersection,
}

impl RegionConstraint {
    pub fn validate(&self) -> Result<(), RegionError> {
        match *self {
            RegionConstraint::Strip { alpha, beta } if !(alpha < beta) => Err(RegionError::Strip { alpha, beta }),
            RegionConstraint::Disk { r, .. } if !(r > 0.0) => Err(RegionError::Disk { r }),
            _ => Ok(()),
        }
    }

    pub fn contains(&self, z: Complex64) -> bool {
        match *self {
            RegionConstraint::Strip { alpha, beta } => -beta < z.re && z.re < -alpha,
            RegionConstraint::Disk { q, r } => (z.re + q).powi(2) + z.im.powi(2) < r * r,
        }
    }

    /// Open interval of the real axis covered by the constraint.
    fn real_interval(&self) -> (f64, f64) {
        match *self {
            RegionConstraint::Strip { alpha, beta } => (-beta, -alpha),
            RegionConstraint::Disk { q, r } => (-q - r, -q + r),
        }
    }
}

/// Intersection of one or more constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StabilityRegion {
    pub constraints: Vec<RegionConstraint>,
}

impl StabilityRegion {
    pub fn new(constraints: Vec<RegionConstraint>) -> Result<Self, RegionError> {
        let region = StabilityRegion { constraints };
        region.validate()?;
        Ok(region)
    }

    pub fn strip(alpha: f64, beta: f64) -> Result<Self, RegionError> {
        Self::new(vec![RegionConstraint::Strip { alpha, beta }])
    }

    pub fn disk(q: f64, r: f64) -> Result<Self, RegionError> {
        Self::new(vec![RegionConstraint::Disk { q, r }])
    }

    /// Right half-plane attack region: `0 < Re(λ) < 0.5`, `|λ| < 0.5`.
    pub fn default_attack() -> Self {
        StabilityRegion {
            constraints: vec![
                RegionConstraint::Strip { alpha: -0.5, beta: 0.0 },
                RegionConstraint::Disk { q: 0.0, r: 0.5 },
            ],
        }
    }

    /// Every constraint is a convex set symmetric about the real axis, so
    /// the intersection is non-empty iff the real intervals overlap.
    pub fn validate(&self) -> Result<(), RegionError> {
        if self.constraints.is_empty() {
            return Err(RegionError::Empty);
        }
        for c in &self.constraints {
            c.validate()?;
        }
        let (lo, hi) = self.real_span();
        if lo < hi {
            Ok(())
        } else {
            Err(RegionError::EmptyIntersection)
        }
    }

    pub fn real_span(&self) -> (f64, f64) {
        self.constraints
            .iter()
            .map(RegionConstraint::real_interval)
            .fold((f64::NEG_INFINITY, f64::INFINITY), |(lo, hi), (a, b)| {
                (lo.max(a), hi.min(b))
            })
    }

    pub fn contains(&self, z: Complex64) -> bool {
        self.constraints.iter().all(|c| c.contains(z))
    }

    pub fn intersect(&self, other: &StabilityRegion) -> StabilityRegion {
        let mut constraints = self.constraints.clone();
        constraints.extend_from_slice(&other.constraints);
        StabilityRegion { constraints }
    }

    /// A point inside the region, on the real axis.
    pub fn interior_point(&self) -> f64 {
        let (lo, hi) = self.real_span();
        0.5 * (lo + hi)
    }
}
