//! Discrete complex measures on the circle `[0, 1)` or the interval `[-1, 1]`.
//!
//! A measure is stored in polar form: each atom carries a location, a strictly
//! positive amplitude and a phase in `[0, 2π)`. The total-variation norm of a
//! discrete measure is the sum of its amplitudes.

use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Error, Result};

/// Locations closer than this are treated as the same point.
pub const ATOM_MERGE_TOL: f64 = 1e-12;

/// The compact domain the measure lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    /// `R mod 1` with the wrap-around distance.
    Circle,
    /// `[-1, 1]` with the absolute-value distance.
    Interval,
}

impl Domain {
    pub fn distance(self, x: f64, y: f64) -> f64 {
        match self {
            Domain::Circle => {
                let d = (x - y).rem_euclid(1.0);
                d.min(1.0 - d)
            }
            Domain::Interval => (x - y).abs(),
        }
    }

    /// Signed displacement `x - y`, wrapped into `[-1/2, 1/2)` on the circle.
    pub fn displacement(self, x: f64, y: f64) -> f64 {
        match self {
            Domain::Circle => (x - y + 0.5).rem_euclid(1.0) - 0.5,
            Domain::Interval => x - y,
        }
    }

    /// Maps `x` onto its canonical representative, rejecting points outside
    /// the interval.
    pub fn canonical(self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return domain_err(format!("non-finite location {x}"));
        }
        match self {
            Domain::Circle => {
                let t = x.rem_euclid(1.0);
                // rem_euclid can round up to exactly 1.0 for tiny negative x
                Ok(if t >= 1.0 { 0.0 } else { t })
            }
            Domain::Interval => {
                if (-1.0..=1.0).contains(&x) {
                    Ok(x)
                } else {
                    domain_err(format!("location {x} outside [-1, 1]"))
                }
            }
        }
    }

    pub fn length(self) -> f64 {
        match self {
            Domain::Circle => 1.0,
            Domain::Interval => 2.0,
        }
    }
}

/// One atom `amplitude · exp(i·phase) · δ_location`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    #[serde(rename = "t")]
    pub location: f64,
    pub amplitude: f64,
    pub phase: f64,
}

impl Atom {
    pub fn weight(&self) -> Complex64 {
        Complex64::from_polar(self.amplitude, self.phase)
    }
}

/// A finite sum of weighted Dirac masses in canonical polar form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteMeasure {
    domain: Domain,
    atoms: Vec<Atom>,
}

impl DiscreteMeasure {
    pub fn empty(domain: Domain) -> Self {
        Self {
            domain,
            atoms: Vec::new(),
        }
    }

    /// Builds a measure from `(location, amplitude, phase)` triples.
    ///
    /// Zero-amplitude atoms are dropped, phases are reduced to `[0, 2π)`, and
    /// coincident locations are rejected (callers merge explicitly).
    pub fn new(domain: Domain, atoms: impl IntoIterator<Item = (f64, f64, f64)>) -> Result<Self> {
        let mut out = Vec::new();
        for (t, amplitude, phase) in atoms {
            if !amplitude.is_finite() || amplitude < 0.0 {
                return domain_err(format!("amplitude must be a finite nonnegative real, got {amplitude}"));
            }
            if !phase.is_finite() {
                return domain_err(format!("non-finite phase {phase}"));
            }
            if amplitude == 0.0 {
                continue;
            }
            out.push(Atom {
                location: domain.canonical(t)?,
                amplitude,
                phase: normalize_phase(phase),
            });
        }
        for i in 0..out.len() {
            for j in 0..i {
                if domain.distance(out[i].location, out[j].location) < ATOM_MERGE_TOL {
                    return Err(Error::Domain(format!(
                        "atoms {j} and {i} share location {}",
                        out[i].location
                    )));
                }
            }
        }
        Ok(Self { domain, atoms: out })
    }

    /// Builds a measure from complex weights, splitting each into polar form.
    /// Weights with modulus below `drop_below` are discarded.
    pub fn from_complex(
        domain: Domain,
        locations: &[f64],
        weights: &[Complex64],
        drop_below: f64,
    ) -> Result<Self> {
        if locations.len() != weights.len() {
            return domain_err(format!(
                "{} locations but {} weights",
                locations.len(),
                weights.len()
            ));
        }
        Self::new(
            domain,
            locations
                .iter()
                .zip(weights)
                .filter(|(_, w)| w.norm() >= drop_below && w.norm() > 0.0)
                .map(|(&t, w)| (t, w.norm(), w.arg())),
        )
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn locations(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.location).collect()
    }

    pub fn weights(&self) -> Vec<Complex64> {
        self.atoms.iter().map(Atom::weight).collect()
    }

    /// Multiplies every amplitude by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return domain_err(format!("scale factor must be positive, got {c}"));
        }
        Ok(Self {
            domain: self.domain,
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    amplitude: a.amplitude * c,
                    ..*a
                })
                .collect(),
        })
    }

    /// Union of two measures with disjoint supports.
    pub fn disjoint_union(&self, other: &Self) -> Result<Self> {
        if self.domain != other.domain {
            return domain_err("measures live on different domains");
        }
        Self::new(
            self.domain,
            self.atoms
                .iter()
                .chain(&other.atoms)
                .map(|a| (a.location, a.amplitude, a.phase)),
        )
    }
}

pub fn normalize_phase(phase: f64) -> f64 {
    let p = phase.rem_euclid(TAU);
    if p >= TAU {
        0.0
    } else {
        p
    }
}

pub fn tv_norm(mu: &DiscreteMeasure) -> f64 {
    mu.atoms.iter().map(|a| a.amplitude).sum()
}

/// Smallest pairwise distance between distinct support points.
pub fn min_separation(support: &[f64], domain: Domain) -> Result<f64> {
    if support.len() < 2 {
        return domain_err(format!(
            "minimum separation needs at least 2 points, got {}",
            support.len()
        ));
    }
    let mut best = f64::INFINITY;
    for i in 0..support.len() {
        for j in 0..i {
            best = best.min(domain.distance(support[i], support[j]));
        }
    }
    Ok(best)
}

/// Distance from `x` to the nearest support point, with the index of that point.
pub fn nearest(x: f64, support: &[f64], domain: Domain) -> Option<(usize, f64)> {
    support
        .iter()
        .enumerate()
        .map(|(i, &t)| (i, domain.distance(x, t)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// Split of a list of query points into those within `c0/m` of the support
/// and the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct NearFarPartition {
    pub radius_scale: f64,
    pub radius: f64,
    /// Indices into the queried point list.
    pub near: Vec<usize>,
    pub far: Vec<usize>,
}

impl NearFarPartition {
    pub fn is_near(&self, index: usize) -> bool {
        self.near.binary_search(&index).is_ok()
    }
}

pub fn partition_near_far(
    points: &[f64],
    support: &[f64],
    c0: f64,
    m: usize,
    domain: Domain,
) -> Result<NearFarPartition> {
    if support.is_empty() {
        return domain_err("near/far partition needs a nonempty support");
    }
    if !(c0 > 0.0) || m == 0 {
        return domain_err(format!("need c0 > 0 and m >= 1, got c0={c0}, m={m}"));
    }
    let radius = c0 / m as f64;
    let mut near = Vec::new();
    let mut far = Vec::new();
    for (i, &p) in points.iter().enumerate() {
        let (_, d) = nearest(p, support, domain).expect("support is nonempty");
        // boundary belongs to the near set; the slack absorbs the rounding of
        // points constructed as T + c0/m
        if d <= radius * (1.0 + 4.0 * f64::EPSILON) {
            near.push(i);
        } else {
            far.push(i);
        }
    }
    Ok(NearFarPartition {
        radius_scale: c0,
        radius,
        near,
        far,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MeasureFile {
    domain: Domain,
    atoms: Vec<Atom>,
}

impl<'de> Deserialize<'de> for DiscreteMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let raw = MeasureFile::deserialize(de)?;
        DiscreteMeasure::new(
            raw.domain,
            raw.atoms.iter().map(|a| (a.location, a.amplitude, a.phase)),
        )
        .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn tv_norm_examples() {
        assert_eq!(tv_norm(&DiscreteMeasure::empty(Domain::Circle)), 0.0);
        let mu = DiscreteMeasure::new(Domain::Circle, [(0.3, 1.0, 0.0), (0.7, 2.5, PI / 3.0)]).unwrap();
        assert_eq!(tv_norm(&mu), 3.5);
        let unit = DiscreteMeasure::new(Domain::Interval, [(0.1, 1.0, 0.0)]).unwrap();
        assert_eq!(tv_norm(&unit), 1.0);
    }

    #[test]
    fn min_separation_examples() {
        let s = min_separation(&[1.0 / 6.0, 5.0 / 6.0], Domain::Circle).unwrap();
        assert!((s - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(min_separation(&[0.0, 0.5], Domain::Circle).unwrap(), 0.5);
        assert_eq!(min_separation(&[-0.5, 0.0, 0.9], Domain::Interval).unwrap(), 0.5);
        assert!(matches!(min_separation(&[0.2], Domain::Circle), Err(Error::Domain(_))));
    }

    #[test]
    fn near_far_examples() {
        let r = 0.3313 / 256.0;
        let p = partition_near_far(&[0.5 + r, 0.9], &[0.5], 0.3313, 256, Domain::Circle).unwrap();
        assert_eq!(p.near, vec![0]);
        assert_eq!(p.far, vec![1]);
        // 0.99 is 0.19 from 0.8 and 0.21 from 0.2 (wrapping), both beyond 1/10
        let p = partition_near_far(&[0.99], &[0.2, 0.8], 1.0, 10, Domain::Circle).unwrap();
        assert!(p.near.is_empty());
        assert!(partition_near_far(&[0.1], &[], 1.0, 10, Domain::Circle).is_err());
    }

    #[test]
    fn construction_canonicalizes() {
        let mu = DiscreteMeasure::new(
            Domain::Circle,
            [(1.25, 1.0, -PI / 2.0), (0.5, 0.0, 0.0), (0.75, 2.0, 5.0 * PI)],
        )
        .unwrap();
        assert_eq!(mu.len(), 2);
        assert!((mu.atoms()[0].location - 0.25).abs() < 1e-15);
        assert!((mu.atoms()[0].phase - 1.5 * PI).abs() < 1e-12);
        assert!((mu.atoms()[1].phase - PI).abs() < 1e-12);
        assert!(DiscreteMeasure::new(Domain::Circle, [(0.1, 1.0, 0.0), (1.1, 1.0, 0.0)]).is_err());
        assert!(DiscreteMeasure::new(Domain::Interval, [(1.5, 1.0, 0.0)]).is_err());
        assert!(DiscreteMeasure::new(Domain::Interval, [(0.5, -1.0, 0.0)]).is_err());
    }

    #[test]
    fn measure_json_roundtrip() {
        let json = r#"{"domain":"circle","atoms":[{"t":0.25,"amplitude":2.0,"phase":1.0}]}"#;
        let mu: DiscreteMeasure = serde_json::from_str(json).unwrap();
        assert_eq!(mu.atoms()[0].location, 0.25);
        let back: DiscreteMeasure = serde_json::from_str(&serde_json::to_string(&mu).unwrap()).unwrap();
        assert_eq!(back, mu);
        let bad = r#"{"domain":"circle","atoms":[{"t":0.25,"amplitude":1.0,"phase":0.0},{"t":0.25,"amplitude":1.0,"phase":0.0}]}"#;
        assert!(serde_json::from_str::<DiscreteMeasure>(bad).is_err());
    }

    fn points() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, 2..8)
    }

    proptest! {
        #[test]
        fn tv_is_positively_homogeneous(amps in prop::collection::vec(0.01f64..10.0, 1..6), c in 0.01f64..100.0) {
            let atoms: Vec<_> = amps.iter().enumerate().map(|(i, &a)| (i as f64 / 8.0, a, 0.3 * i as f64)).collect();
            let mu = DiscreteMeasure::new(Domain::Circle, atoms).unwrap();
            let scaled = mu.scaled(c).unwrap();
            prop_assert!((tv_norm(&scaled) - c * tv_norm(&mu)).abs() <= 1e-12 * c * tv_norm(&mu));
        }

        #[test]
        fn tv_is_additive_on_disjoint_supports(a in prop::collection::vec(0.01f64..10.0, 1..4), b in prop::collection::vec(0.01f64..10.0, 1..4)) {
            let mu = DiscreteMeasure::new(Domain::Circle, a.iter().enumerate().map(|(i, &x)| (0.1 * i as f64, x, 0.0))).unwrap();
            let nu = DiscreteMeasure::new(Domain::Circle, b.iter().enumerate().map(|(i, &x)| (0.55 + 0.1 * i as f64, x, 1.0))).unwrap();
            let sum = mu.disjoint_union(&nu).unwrap();
            prop_assert!((tv_norm(&sum) - tv_norm(&mu) - tv_norm(&nu)).abs() < 1e-12);
        }

        #[test]
        fn separation_is_rotation_and_relabel_invariant(pts in points(), shift in 0.0f64..1.0) {
            let base = min_separation(&pts, Domain::Circle).unwrap();
            let mut rotated: Vec<f64> = pts.iter().map(|p| (p + shift).rem_euclid(1.0)).collect();
            rotated.reverse();
            let r = min_separation(&rotated, Domain::Circle).unwrap();
            prop_assert!((base - r).abs() < 1e-12);
        }

        #[test]
        fn circle_distance_is_a_metric(x in 0.0f64..1.0, y in 0.0f64..1.0, z in 0.0f64..1.0) {
            let d = |a, b| Domain::Circle.distance(a, b);
            prop_assert!(d(x, y) >= 0.0 && d(x, y) <= 0.5);
            prop_assert!((d(x, y) - d(y, x)).abs() < 1e-15);
            prop_assert!(d(x, z) <= d(x, y) + d(y, z) + 1e-15);
        }

        #[test]
        fn growing_c0_never_shrinks_near(pts in points(), c0 in 0.01f64..2.0, extra in 0.0f64..2.0) {
            let support = [0.3, 0.71];
            let small = partition_near_far(&pts, &support, c0, 10, Domain::Circle).unwrap();
            let big = partition_near_far(&pts, &support, c0 + extra, 10, Domain::Circle).unwrap();
            for i in &small.near {
                prop_assert!(big.is_near(*i));
            }
            prop_assert_eq!(small.near.len() + small.far.len(), pts.len());
        }
    }
}
