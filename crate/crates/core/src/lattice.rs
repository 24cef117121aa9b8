//! Periodic lattice geometry.
//!
//! Sites of the torus `(Z/LZ)^d` are stored row-major with axis 0 slowest.
//! The `2d` nearest-neighbour directions are indexed so that direction `k`
//! moves along axis `k / 2`, in the positive sense when `k` is even.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a lattice direction in `0..2d`.
#[inline]
pub fn direction(axis: usize, positive: bool) -> usize {
    2 * axis + usize::from(!positive)
}

#[inline]
pub fn axis_of(dir: usize) -> usize {
    dir / 2
}

#[inline]
pub fn sign_of(dir: usize) -> i64 {
    if dir % 2 == 0 {
        1
    } else {
        -1
    }
}

#[inline]
pub fn opposite(dir: usize) -> usize {
    dir ^ 1
}

/// The unit vector of direction `dir` in dimension `d`.
pub fn unit_vector(d: usize, dir: usize) -> Vec<i64> {
    let mut v = vec![0; d];
    v[axis_of(dir)] = sign_of(dir);
    v
}

/// Direction index of a unit lattice vector, if it is one.
pub fn direction_of(v: &[i64]) -> Option<usize> {
    let mut found = None;
    for (axis, &c) in v.iter().enumerate() {
        match c {
            0 => {}
            1 | -1 if found.is_none() => found = Some(direction(axis, c == 1)),
            _ => return None,
        }
    }
    found
}

pub fn sup_norm(v: &[i64]) -> i64 {
    v.iter().map(|c| c.abs()).max().unwrap_or(0)
}

/// A `d`-dimensional discrete torus of side `side`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Torus {
    d: usize,
    side: usize,
    #[serde(skip)]
    neighbors: Vec<usize>,
}

impl Torus {
    pub fn new(d: usize, side: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidGeometry("dimension must be at least 1".into()));
        }
        if side < 2 {
            return Err(Error::InvalidGeometry(format!("side {side} is below 2")));
        }
        let n = side
            .checked_pow(d as u32)
            .filter(|&n| n <= 1 << 28)
            .ok_or_else(|| Error::InvalidGeometry(format!("{side}^{d} sites is too large")))?;
        let mut torus = Torus {
            d,
            side,
            neighbors: Vec::new(),
        };
        let mut neighbors = Vec::with_capacity(n * 2 * d);
        let mut coords = vec![0i64; d];
        for site in 0..n {
            torus.coords_into(site, &mut coords);
            for dir in 0..2 * d {
                let a = axis_of(dir);
                let saved = coords[a];
                coords[a] += sign_of(dir);
                neighbors.push(torus.index(&coords));
                coords[a] = saved;
            }
        }
        torus.neighbors = neighbors;
        Ok(torus)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    #[inline]
    pub fn num_sites(&self) -> usize {
        self.neighbors.len() / (2 * self.d)
    }

    #[inline]
    pub fn num_directions(&self) -> usize {
        2 * self.d
    }

    /// Site index of an arbitrary (unwrapped) lattice point.
    pub fn index(&self, point: &[i64]) -> usize {
        debug_assert_eq!(point.len(), self.d);
        let l = self.side as i64;
        point
            .iter()
            .fold(0usize, |acc, &c| acc * self.side + c.rem_euclid(l) as usize)
    }

    /// Canonical coordinates in `0..L` of a site.
    pub fn coords(&self, site: usize) -> Vec<i64> {
        let mut c = vec![0; self.d];
        self.coords_into(site, &mut c);
        c
    }

    pub fn coords_into(&self, mut site: usize, out: &mut [i64]) {
        for a in (0..self.d).rev() {
            out[a] = (site % self.side) as i64;
            site /= self.side;
        }
    }

    #[inline]
    pub fn neighbor(&self, site: usize, dir: usize) -> usize {
        self.neighbors[site * 2 * self.d + dir]
    }

    /// Site reached from `site` by the lattice offset `offset`.
    pub fn translate(&self, site: usize, offset: &[i64]) -> usize {
        let mut c = self.coords(site);
        for (ci, oi) in c.iter_mut().zip(offset) {
            *ci += oi;
        }
        self.index(&c)
    }

    /// Permutation `p` with `p[x] = x + offset` for every site.
    pub fn translation_map(&self, offset: &[i64]) -> Vec<usize> {
        (0..self.num_sites())
            .map(|s| self.translate(s, offset))
            .collect()
    }

    /// Representative of `site` with every coordinate in `-(L-1)/2 ..= L/2`.
    pub fn centered_coords(&self, site: usize) -> Vec<i64> {
        let l = self.side as i64;
        self.coords(site)
            .into_iter()
            .map(|c| if c > l / 2 { c - l } else { c })
            .collect()
    }
}

/// Sup-norm box `B(center, radius)` embedded in a torus.
///
/// Requires `2 * radius + 1 <= L` so that distinct box points are distinct sites.
#[derive(Debug, Clone)]
pub struct LatticeBox {
    pub center: Vec<i64>,
    pub radius: usize,
    /// Box points relative to the center, row-major.
    pub offsets: Vec<Vec<i64>>,
    /// Torus site of each box point.
    pub sites: Vec<usize>,
    /// Local index of each torus site, if it lies in the box.
    pub local: Vec<Option<usize>>,
}

impl LatticeBox {
    pub fn new(torus: &Torus, center: &[i64], radius: usize) -> Result<Self> {
        if center.len() != torus.dim() {
            return Err(Error::InvalidInput("box center has wrong dimension".into()));
        }
        if 2 * radius + 1 > torus.side() {
            return Err(Error::InvalidGeometry(format!(
                "box of radius {radius} does not fit in a torus of side {}",
                torus.side()
            )));
        }
        let d = torus.dim();
        let width = 2 * radius + 1;
        let count = width.pow(d as u32);
        let mut offsets = Vec::with_capacity(count);
        let mut sites = Vec::with_capacity(count);
        let mut local = vec![None; torus.num_sites()];
        for k in 0..count {
            let mut rem = k;
            let mut off = vec![0i64; d];
            for a in (0..d).rev() {
                off[a] = (rem % width) as i64 - radius as i64;
                rem /= width;
            }
            let point: Vec<i64> = center.iter().zip(&off).map(|(c, o)| c + o).collect();
            let site = torus.index(&point);
            local[site] = Some(k);
            sites.push(site);
            offsets.push(off);
        }
        Ok(LatticeBox {
            center: center.to_vec(),
            radius,
            offsets,
            sites,
            local,
        })
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Sup-norm distance of box point `k` from the center.
    pub fn dist(&self, k: usize) -> usize {
        sup_norm(&self.offsets[k]) as usize
    }

    pub fn is_boundary(&self, k: usize) -> bool {
        self.dist(k) == self.radius
    }

    /// Local indices of the points with `dist <= r`.
    pub fn within(&self, r: usize) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.dist(k) <= r).collect()
    }
}

/// Number of points in `B(n)` on `Z^d`.
pub fn box_volume(d: usize, n: usize) -> usize {
    (2 * n + 1).pow(d as u32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip_and_wrap() {
        let t = Torus::new(3, 5).unwrap();
        for s in 0..t.num_sites() {
            assert_eq!(t.index(&t.coords(s)), s);
        }
        assert_eq!(t.index(&[5, -1, 10]), t.index(&[0, 4, 0]));
    }

    #[test]
    fn neighbors_are_inverse() {
        let t = Torus::new(2, 4).unwrap();
        for s in 0..t.num_sites() {
            for k in 0..4 {
                assert_eq!(t.neighbor(t.neighbor(s, k), opposite(k)), s);
            }
        }
        // axis 0 is the slowest
        assert_eq!(t.neighbor(0, direction(0, true)), 4);
        assert_eq!(t.neighbor(0, direction(1, true)), 1);
    }

    #[test]
    fn direction_of_unit_vectors() {
        assert_eq!(direction_of(&[0, -1]), Some(3));
        assert_eq!(direction_of(&[1, 0]), Some(0));
        assert_eq!(direction_of(&[1, 1]), None);
        assert_eq!(direction_of(&[0, 0]), None);
        assert_eq!(direction_of(&[2, 0]), None);
    }

    #[test]
    fn box_volume_and_boundary() {
        let t = Torus::new(2, 9).unwrap();
        let b = LatticeBox::new(&t, &[0, 0], 2).unwrap();
        assert_eq!(b.len(), box_volume(2, 2));
        assert_eq!(b.len(), 25);
        assert_eq!((0..b.len()).filter(|&k| b.is_boundary(k)).count(), 16);
        assert!(LatticeBox::new(&t, &[0, 0], 5).is_err());
    }
}
