//! Finite hypercubic lattices (1D chains and small 2D grids) with open
//! boundaries, the graph metric, balls, cuts and boundary collars.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Lattice {
    extents: [usize; 2],
    dim: usize,
}

impl Lattice {
    pub fn chain(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Geometry("empty chain".into()));
        }
        Ok(Self { extents: [n, 1], dim: 1 })
    }

    pub fn grid(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Geometry("empty grid".into()));
        }
        Ok(Self { extents: [rows, cols], dim: 2 })
    }

    /// Build from an extent list of length 1 or 2.
    pub fn from_extents(extents: &[usize]) -> Result<Self> {
        match *extents {
            [n] => Self::chain(n),
            [r, c] => Self::grid(r, c),
            _ => Err(Error::Geometry(format!(
                "lattice dimension {} unsupported (1 or 2)",
                extents.len()
            ))),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents[..self.dim]
    }

    pub fn n_sites(&self) -> usize {
        self.extents[0] * self.extents[1]
    }

    /// Row-major coordinates; a chain has the single coordinate `(i, 0)`.
    pub fn coord(&self, site: usize) -> Result<(usize, usize)> {
        self.check(site)?;
        Ok((site / self.extents[1], site % self.extents[1]))
    }

    pub fn site(&self, coord: (usize, usize)) -> Result<usize> {
        if coord.0 >= self.extents[0] || coord.1 >= self.extents[1] {
            return Err(Error::domain(format!("coordinate {coord:?} outside the lattice")));
        }
        Ok(coord.0 * self.extents[1] + coord.1)
    }

    fn check(&self, site: usize) -> Result<()> {
        if site >= self.n_sites() {
            return Err(Error::domain(format!(
                "site {site} outside lattice of {} sites",
                self.n_sites()
            )));
        }
        Ok(())
    }

    /// Graph distance on nearest-neighbor edges (Manhattan distance).
    pub fn distance(&self, u: usize, v: usize) -> Result<usize> {
        let (a, b) = (self.coord(u)?, self.coord(v)?);
        Ok(a.0.abs_diff(b.0) + a.1.abs_diff(b.1))
    }

    fn dist_unchecked(&self, u: usize, v: usize) -> usize {
        let c = self.extents[1];
        (u / c).abs_diff(v / c) + (u % c).abs_diff(v % c)
    }

    /// Nearest-neighbor edges `(u, v)` with `u < v`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let [rows, cols] = self.extents;
        let mut edges = Vec::new();
        for i in 0..rows {
            for j in 0..cols {
                let u = i * cols + j;
                if j + 1 < cols {
                    edges.push((u, u + 1));
                }
                if i + 1 < rows {
                    edges.push((u, u + cols));
                }
            }
        }
        edges
    }

    /// Neighbors `v > u`, used to attach one bond term per edge to its
    /// lower endpoint.
    pub fn forward_neighbors(&self, u: usize) -> Vec<usize> {
        let cols = self.extents[1];
        let (i, j) = (u / cols, u % cols);
        let mut out = Vec::new();
        if j + 1 < cols {
            out.push(u + 1);
        }
        if i + 1 < self.extents[0] {
            out.push(u + cols);
        }
        out
    }

    pub fn diameter(&self) -> usize {
        self.extents[0] + self.extents[1] - 2
    }

    pub fn all(&self) -> Region {
        Region { sites: (0..self.n_sites()).collect(), lattice: *self }
    }

    pub fn empty(&self) -> Region {
        Region { sites: Vec::new(), lattice: *self }
    }

    pub fn region(&self, sites: impl IntoIterator<Item = usize>) -> Result<Region> {
        let mut sites: Vec<usize> = sites.into_iter().collect();
        for &s in &sites {
            self.check(s)?;
        }
        sites.sort_unstable();
        let before = sites.len();
        sites.dedup();
        if sites.len() != before {
            return Err(Error::domain("duplicate sites in region"));
        }
        Ok(Region { sites, lattice: *self })
    }

    /// Axis-aligned rectangle of rows `r0..r1` and columns `c0..c1` (half-open).
    pub fn rectangle(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Result<Region> {
        if rows.end > self.extents[0] || cols.end > self.extents[1] {
            return Err(Error::domain("rectangle exceeds the lattice"));
        }
        let c = self.extents[1];
        self.region(rows.flat_map(|i| cols.clone().map(move |j| i * c + j)))
    }

    pub fn ball(&self, u: usize, r: usize) -> Result<Region> {
        self.check(u)?;
        Ok(Region {
            sites: (0..self.n_sites()).filter(|&v| self.dist_unchecked(u, v) <= r).collect(),
            lattice: *self,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Region {
    sites: Vec<usize>,
    lattice: Lattice,
}

impl Region {
    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn contains(&self, site: usize) -> bool {
        self.sites.binary_search(&site).is_ok()
    }

    pub fn is_full(&self) -> bool {
        self.sites.len() == self.lattice.n_sites()
    }

    pub fn complement(&self) -> Region {
        Region {
            sites: (0..self.lattice.n_sites()).filter(|s| !self.contains(*s)).collect(),
            lattice: self.lattice,
        }
    }

    pub fn is_subset(&self, other: &Region) -> bool {
        self.sites.iter().all(|&s| other.contains(s))
    }

    pub fn union(&self, other: &Region) -> Region {
        let mut sites: Vec<usize> = self.sites.iter().chain(&other.sites).copied().collect();
        sites.sort_unstable();
        sites.dedup();
        Region { sites, lattice: self.lattice }
    }

    pub fn intersection(&self, other: &Region) -> Region {
        Region {
            sites: self.sites.iter().copied().filter(|&s| other.contains(s)).collect(),
            lattice: self.lattice,
        }
    }

    pub fn is_disjoint(&self, other: &Region) -> bool {
        self.sites.iter().all(|&s| !other.contains(s))
    }

    /// Contiguous interval in 1D, filled axis-aligned rectangle in 2D.
    pub fn is_convex(&self) -> bool {
        if self.sites.is_empty() {
            return true;
        }
        let coords: Vec<(usize, usize)> = self.sites.iter().map(|&s| self.lattice.coord(s).unwrap()).collect();
        let (r0, r1) = (coords.iter().map(|c| c.0).min().unwrap(), coords.iter().map(|c| c.0).max().unwrap());
        let (c0, c1) = (coords.iter().map(|c| c.1).min().unwrap(), coords.iter().map(|c| c.1).max().unwrap());
        (r1 - r0 + 1) * (c1 - c0 + 1) == self.sites.len()
    }
}

/// A bipartition `A : A^c` together with its crossing edges.
#[derive(Clone, Debug)]
pub struct Cut {
    a: Region,
    crossing: Vec<(usize, usize)>,
    endpoints: Vec<usize>,
}

impl Cut {
    pub fn new(a: Region) -> Result<Self> {
        let lattice = *a.lattice();
        let crossing: Vec<(usize, usize)> = lattice
            .edges()
            .into_iter()
            .filter(|&(u, v)| a.contains(u) != a.contains(v))
            .collect();
        if a.is_empty() || a.is_full() {
            return Err(Error::Geometry("a cut needs a proper nonempty region".into()));
        }
        let mut endpoints: Vec<usize> = crossing.iter().flat_map(|&(u, v)| [u, v]).collect();
        endpoints.sort_unstable();
        endpoints.dedup();
        Ok(Self { a, crossing, endpoints })
    }

    pub fn region(&self) -> &Region {
        &self.a
    }

    pub fn complement(&self) -> Region {
        self.a.complement()
    }

    pub fn lattice(&self) -> &Lattice {
        self.a.lattice()
    }

    pub fn crossing_edges(&self) -> &[(usize, usize)] {
        &self.crossing
    }

    /// |∂A|, counted in crossing edges.
    pub fn boundary_size(&self) -> usize {
        self.crossing.len()
    }

    /// Distance from `x` to the nearest endpoint of a crossing edge.
    pub fn distance_to_boundary(&self, x: usize) -> Result<usize> {
        self.lattice().check(x)?;
        Ok(self
            .endpoints
            .iter()
            .map(|&e| self.lattice().dist_unchecked(x, e))
            .min()
            .expect("a proper cut has crossing edges"))
    }

    fn select(&self, keep: impl Fn(usize, usize) -> bool) -> Region {
        let lattice = *self.lattice();
        let sites = (0..lattice.n_sites())
            .filter(|&x| keep(x, self.distance_to_boundary(x).unwrap()))
            .collect();
        Region { sites, lattice }
    }

    /// `I_A(R)`: sites of A within distance R of the boundary.
    pub fn inner_collar(&self, r: usize) -> Region {
        self.select(|x, d| self.a.contains(x) && d <= r)
    }

    /// `E_A(R)`: sites of A^c within distance R of the boundary.
    pub fn outer_collar(&self, r: usize) -> Region {
        self.select(|x, d| !self.a.contains(x) && d <= r)
    }

    /// `∂A(R) = I_A(R) ∪ E_A(R)`.
    pub fn boundary_collar(&self, r: usize) -> Region {
        self.select(|_, d| d <= r)
    }

    pub fn shell(&self, k: usize) -> Region {
        self.select(|_, d| d == k)
    }

    /// Largest distance to the boundary; shells beyond it are empty.
    pub fn max_shell(&self) -> usize {
        (0..self.lattice().n_sites())
            .map(|x| self.distance_to_boundary(x).unwrap())
            .max()
            .unwrap_or(0)
    }
}
