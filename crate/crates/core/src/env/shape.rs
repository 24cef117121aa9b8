use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{axis_of, direction, direction_of, sign_of, sup_norm, unit_vector};

/// A closed oriented nearest-neighbour cycle based at the origin.
///
/// Serialized as signed 1-based axes: `[1, 2, -1, -2]` is the
/// counter-clockwise unit plaquette `0 -> e1 -> e1+e2 -> e2 -> 0`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ShapeRepr", into = "ShapeRepr")]
pub struct CycleShape {
    d: usize,
    steps: Vec<usize>,
    vertices: Vec<Vec<i64>>,
}

#[derive(Serialize, Deserialize)]
struct ShapeRepr {
    d: usize,
    steps: Vec<i64>,
}

impl TryFrom<ShapeRepr> for CycleShape {
    type Error = Error;
    fn try_from(r: ShapeRepr) -> Result<Self> {
        CycleShape::from_signed_axes(r.d, &r.steps)
    }
}

impl From<CycleShape> for ShapeRepr {
    fn from(s: CycleShape) -> Self {
        ShapeRepr {
            d: s.d,
            steps: s.signed_axes(),
        }
    }
}

impl CycleShape {
    /// Builds a shape from direction indices (see [`crate::lattice`]).
    pub fn from_directions(d: usize, steps: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = steps.iter().find(|&&k| k >= 2 * d) {
            return Err(Error::InvalidShape(format!(
                "direction {bad} does not exist in dimension {d}"
            )));
        }
        let mut vertices = Vec::with_capacity(steps.len() + 1);
        let mut v = vec![0i64; d];
        vertices.push(v.clone());
        for &k in &steps {
            v[axis_of(k)] += sign_of(k);
            vertices.push(v.clone());
        }
        if steps.len() < 2 {
            return Err(Error::InvalidShape(format!(
                "cycle length {} is below 2",
                steps.len()
            )));
        }
        if vertices.last().unwrap().iter().any(|&c| c != 0) {
            return Err(Error::InvalidShape("cycle does not close".into()));
        }
        vertices.pop();
        for i in 0..vertices.len() {
            for j in 0..i {
                if vertices[i] == vertices[j] {
                    return Err(Error::InvalidShape(format!(
                        "vertex {:?} is visited twice",
                        vertices[i]
                    )));
                }
            }
        }
        Ok(CycleShape { d, steps, vertices })
    }

    /// Builds a shape from unit step vectors.
    pub fn from_vectors(d: usize, steps: &[Vec<i64>]) -> Result<Self> {
        let dirs = steps
            .iter()
            .map(|s| {
                if s.len() != d {
                    return Err(Error::InvalidShape(format!("step {s:?} is not {d}-dimensional")));
                }
                direction_of(s)
                    .ok_or_else(|| Error::InvalidShape(format!("step {s:?} is not a unit vector")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_directions(d, dirs)
    }

    pub fn from_signed_axes(d: usize, steps: &[i64]) -> Result<Self> {
        let dirs = steps
            .iter()
            .map(|&s| {
                let axis = s.unsigned_abs() as usize;
                if s == 0 || axis > d {
                    Err(Error::InvalidShape(format!("step {s} is not a unit step in dimension {d}")))
                } else {
                    Ok(direction(axis - 1, s > 0))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_directions(d, dirs)
    }

    pub fn signed_axes(&self) -> Vec<i64> {
        self.steps
            .iter()
            .map(|&k| sign_of(k) * (axis_of(k) as i64 + 1))
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of steps, `|γ|`.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Direction index of each step.
    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    /// Distinct vertices `v_0 = 0, v_1, ..., v_{n-1}`.
    pub fn vertices(&self) -> &[Vec<i64>] {
        &self.vertices
    }

    /// Directed edges as `(tail vertex, direction)`.
    pub fn edges(&self) -> impl Iterator<Item = (&[i64], usize)> {
        self.vertices
            .iter()
            .zip(&self.steps)
            .map(|(v, &k)| (v.as_slice(), k))
    }

    pub fn diameter(&self) -> usize {
        self.vertices.iter().map(|v| sup_norm(v)).max().unwrap_or(0) as usize
    }

    /// The same cycle traversed backwards.
    pub fn reversed(&self) -> Self {
        let steps = self.steps.iter().rev().map(|&k| k ^ 1).collect();
        Self::from_directions(self.d, steps).expect("reversal of a valid cycle")
    }

    /// The same geometric cycle re-based at its `j`-th vertex and translated
    /// so that the new base is the origin.
    pub fn rebased(&self, j: usize) -> Self {
        let n = self.steps.len();
        let steps = (0..n).map(|i| self.steps[(i + j) % n]).collect();
        Self::from_directions(self.d, steps).expect("rotation of a valid cycle")
    }

    /// Neighbours `x` with `(0, x)` or `(x, 0)` an edge of the shape.
    pub fn origin_neighbors(&self) -> [Vec<i64>; 2] {
        let first = unit_vector(self.d, self.steps[0]);
        let last = self.vertices[self.vertices.len() - 1].clone();
        [first, last]
    }

    /// Whether some step moves along `axis`.
    pub fn uses_axis(&self, axis: usize) -> bool {
        self.steps.iter().any(|&k| axis_of(k) == axis)
    }
}

/// The back-and-forth cycle `0 -> dir -> 0`.
pub fn two_cycle(d: usize, dir: usize) -> CycleShape {
    CycleShape::from_directions(d, vec![dir, dir ^ 1]).expect("two-cycle")
}

/// Counter-clockwise unit plaquette in the `(a, b)` plane.
pub fn plaquette(d: usize, a: usize, b: usize) -> CycleShape {
    CycleShape::from_directions(
        d,
        vec![
            direction(a, true),
            direction(b, true),
            direction(a, false),
            direction(b, false),
        ],
    )
    .expect("plaquette")
}
