use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::law::WeightLaw;
use super::report::ValidationReport;
use super::shape::{plaquette, two_cycle, CycleShape};
use crate::error::{Error, Result};
use crate::lattice::{direction_of, unit_vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub shape: CycleShape,
    pub law: WeightLaw,
}

/// Cycle shapes based at the origin, one weight law per shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleCatalog {
    pub d: usize,
    pub entries: Vec<CatalogEntry>,
}

/// Named shape families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// `0 -> ±e_i -> 0` for all `2d` directions.
    #[serde(rename = "nn-2-cycles")]
    Nn2Cycles,
    /// Every re-basing of both orientations of the unit plaquette in every
    /// coordinate plane (8 shapes per plane).
    PlaquetteRotations,
}

impl Preset {
    pub fn shapes(self, d: usize) -> Vec<CycleShape> {
        match self {
            Preset::Nn2Cycles => (0..2 * d).map(|k| two_cycle(d, k)).collect(),
            Preset::PlaquetteRotations => {
                let mut out = Vec::new();
                for a in 0..d {
                    for b in a + 1..d {
                        let p = plaquette(d, a, b);
                        let r = p.reversed();
                        out.extend((0..4).map(|j| p.rebased(j)));
                        out.extend((0..4).map(|j| r.rebased(j)));
                    }
                }
                out
            }
        }
    }
}

/// One entry of a catalog config: a preset family or an explicit shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EntrySpec {
    Preset { preset: Preset, law: WeightLaw },
    Shape { steps: Vec<i64>, law: WeightLaw },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogSpec {
    pub d: usize,
    pub entries: Vec<EntrySpec>,
}

impl CatalogSpec {
    pub fn build(&self) -> Result<CycleCatalog> {
        let mut entries = Vec::new();
        for e in &self.entries {
            match e {
                EntrySpec::Preset { preset, law } => {
                    entries.extend(preset.shapes(self.d).into_iter().map(|shape| CatalogEntry {
                        shape,
                        law: *law,
                    }))
                }
                EntrySpec::Shape { steps, law } => entries.push(CatalogEntry {
                    shape: CycleShape::from_signed_axes(self.d, steps)?,
                    law: *law,
                }),
            }
        }
        CycleCatalog::new(self.d, entries)
    }
}

impl CycleCatalog {
    pub fn new(d: usize, entries: Vec<CatalogEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidInput("catalog is empty".into()));
        }
        for e in &entries {
            if e.shape.dim() != d {
                return Err(Error::InvalidShape(format!(
                    "shape of dimension {} in a {d}-dimensional catalog",
                    e.shape.dim()
                )));
            }
            e.law.validate()?;
        }
        Ok(CycleCatalog { d, entries })
    }

    pub fn preset(d: usize, preset: Preset, law: WeightLaw) -> Result<Self> {
        let entries = preset
            .shapes(d)
            .into_iter()
            .map(|shape| CatalogEntry { shape, law })
            .collect();
        Self::new(d, entries)
    }

    /// Nearest-neighbour 2-cycles with constant weight 1/2, so that every
    /// directed edge has weight 1.
    pub fn simple_random_walk(d: usize) -> Result<Self> {
        Self::preset(d, Preset::Nn2Cycles, WeightLaw::Constant { value: 0.5 })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn shapes(&self) -> impl Iterator<Item = &CycleShape> {
        self.entries.iter().map(|e| &e.shape)
    }

    pub fn max_diameter(&self) -> usize {
        self.shapes().map(|s| s.diameter()).max().unwrap_or(0)
    }

    /// Smallest admissible torus side.
    pub fn min_side(&self) -> usize {
        2 * self.max_diameter() + 1
    }

    pub fn max_length(&self) -> usize {
        self.shapes().map(|s| s.len()).max().unwrap_or(0)
    }

    /// Whether every shape has length at most two.
    pub fn all_short(&self) -> bool {
        self.shapes().all(|s| s.len() <= 2)
    }

    /// Neighbours `x` such that `(0, x)` or `(x, 0)` is an edge of some shape.
    pub fn covering_set(&self) -> BTreeSet<Vec<i64>> {
        self.shapes().flat_map(|s| s.origin_neighbors()).collect()
    }
}

/// Structural checks on a catalog: closedness and distinctness of every
/// shape, the covering condition at the origin, and per-direction
/// ellipticity of the assembled weights.
pub fn validate_catalog(catalog: &CycleCatalog) -> Result<ValidationReport> {
    if catalog.is_empty() {
        return Err(Error::InvalidInput("catalog is empty".into()));
    }
    let d = catalog.d;
    let mut report = ValidationReport::default();
    for (i, s) in catalog.shapes().enumerate() {
        // re-validate: shapes may have been deserialized by other code paths
        let closed = CycleShape::from_directions(d, s.steps().to_vec()).is_ok();
        report
            .push(format!("shape[{i}].closed_distinct"), closed, s.len() as f64)
            .with_detail(format!("{:?}", s.signed_axes()));
    }

    let covering = catalog.covering_set();
    let full: BTreeSet<Vec<i64>> = (0..2 * d).map(|k| unit_vector(d, k)).collect();
    let mut listed: Vec<String> = covering.iter().map(|v| format!("{v:?}")).collect();
    listed.sort();
    report
        .push("covering", covering == full, covering.len() as f64)
        .with_detail(listed.join(" "));

    for k in 0..2 * d {
        let axis = k / 2;
        let strict = catalog
            .entries
            .iter()
            .any(|e| e.law.is_strictly_positive() && e.shape.uses_axis(axis));
        let support = catalog
            .entries
            .iter()
            .any(|e| e.law.is_almost_surely_positive() && e.shape.uses_axis(axis));
        let name = format!("ellipticity[{:?}]", unit_vector(d, k));
        report
            .push(name, strict, if strict { 1.0 } else { 0.0 })
            .with_detail(if support {
                "some almost-surely positive shape uses this direction"
            } else {
                "no almost-surely positive shape uses this direction"
            });
    }
    Ok(report)
}

/// Direction index of the edge from `tail` to `head` if they are neighbours.
pub fn edge_direction(tail: &[i64], head: &[i64]) -> Option<usize> {
    let diff: Vec<i64> = head.iter().zip(tail).map(|(h, t)| h - t).collect();
    direction_of(&diff)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: WeightLaw = WeightLaw::Constant { value: 1.0 };

    #[test]
    fn nn_catalog_covers() {
        let c = CycleCatalog::preset(2, Preset::Nn2Cycles, ONE).unwrap();
        let r = validate_catalog(&c).unwrap();
        assert!(r.get("covering").unwrap().pass);
        assert!(r.passed());
    }

    #[test]
    fn single_plaquette_pair_does_not_cover() {
        let p = plaquette(2, 0, 1);
        let entries = vec![
            CatalogEntry { shape: p.clone(), law: ONE },
            CatalogEntry { shape: p.reversed(), law: ONE },
        ];
        let c = CycleCatalog::new(2, entries).unwrap();
        let r = validate_catalog(&c).unwrap();
        let cov = r.get("covering").unwrap();
        assert!(!cov.pass);
        // covering set is {e1, e2}
        assert_eq!(cov.witness, 2.0);
        assert_eq!(
            c.covering_set(),
            [vec![0, 1], vec![1, 0]].into_iter().collect::<BTreeSet<_>>()
        );
    }

    #[test]
    fn plaquette_rotations_cover() {
        let c = CycleCatalog::preset(2, Preset::PlaquetteRotations, ONE).unwrap();
        assert_eq!(c.len(), 8);
        assert!(validate_catalog(&c).unwrap().get("covering").unwrap().pass);
        let c3 = CycleCatalog::preset(3, Preset::PlaquetteRotations, ONE).unwrap();
        assert_eq!(c3.len(), 24);
        assert!(validate_catalog(&c3).unwrap().passed());
    }

    #[test]
    fn zero_law_breaks_ellipticity() {
        let mut c = CycleCatalog::preset(2, Preset::Nn2Cycles, ONE).unwrap();
        c.entries[0].law = WeightLaw::Constant { value: 0.0 };
        c.entries[1].law = WeightLaw::Constant { value: 0.0 };
        let r = validate_catalog(&c).unwrap();
        assert!(!r.get("ellipticity[[1, 0]]").unwrap().pass);
        assert!(r.get("ellipticity[[0, 1]]").unwrap().pass);
    }

    #[test]
    fn empty_catalog_is_invalid_input() {
        assert!(matches!(CycleCatalog::new(2, vec![]), Err(Error::InvalidInput(_))));
        let c = CycleCatalog { d: 2, entries: vec![] };
        assert!(matches!(validate_catalog(&c), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn catalog_spec_parses() {
        let spec: CatalogSpec = serde_json::from_str(
            r#"{"d":2,"entries":[
                {"preset":"nn-2-cycles","law":{"kind":"constant","value":1}},
                {"steps":[1,2,-1,-2],"law":{"kind":"uniform","low":0.5,"high":1.5}}]}"#,
        )
        .unwrap();
        let c = spec.build().unwrap();
        assert_eq!(c.len(), 5);
        assert_eq!(c.max_length(), 4);
        let bad: CatalogSpec =
            serde_json::from_str(r#"{"d":2,"entries":[{"steps":[1,1],"law":{"kind":"constant","value":1}}]}"#)
                .unwrap();
        assert!(matches!(bad.build(), Err(Error::InvalidShape(_))));
    }
}
