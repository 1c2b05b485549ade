//! Finite windows of the square lattice: boxes, annuli, tori and the
//! tessellations used by the renormalization experiments.
//!
//! A [`SiteGraph`] stores its sites inside a bounding rectangle with an O(1)
//! coordinate-to-index lookup, so breadth-first searches and field samplers
//! can run on flat arrays. Graphs are immutable after construction and are
//! shared across worker threads behind `Arc`.

use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};

pub type Coord = (i32, i32);

/// Metric used for k-jump adjacency. The default everywhere is `L1`
/// (graph distance); the alternatives exist as an explicit switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JumpMetric {
    #[default]
    L1,
    Linf,
    Euclid,
}

impl JumpMetric {
    pub fn dist(&self, a: Coord, b: Coord) -> f64 {
        let dx = (a.0 - b.0).abs() as f64;
        let dy = (a.1 - b.1).abs() as f64;
        match self {
            JumpMetric::L1 => dx + dy,
            JumpMetric::Linf => dx.max(dy),
            JumpMetric::Euclid => (dx * dx + dy * dy).sqrt(),
        }
    }

    /// Offsets (dx, dy) ≠ (0, 0) within distance k.
    pub fn ball_offsets(&self, k: i32) -> Vec<Coord> {
        let mut out = Vec::new();
        for dx in -k..=k {
            for dy in -k..=k {
                if (dx, dy) == (0, 0) {
                    continue;
                }
                if self.dist((0, 0), (dx, dy)) <= k as f64 + 1e-12 {
                    out.push((dx, dy));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    /// Box Λ_n = [-n, n]² with the outer ring designated as boundary.
    Box { n: i32 },
    /// Annulus Λ_m \ Λ_n with both rings marked as boundary.
    Annulus { m: i32, n: i32 },
    /// Torus (Z/side Z)², coordinates in [0, side), empty boundary.
    Torus { side: i32 },
    /// Box [-n, n]² with free boundary, a finite window standing in for
    /// the full plane.
    Window { n: i32 },
}

/// A finite subgraph of Z² (or a torus) with unit conductances.
pub struct SiteGraph {
    pub topology: Topology,
    xmin: i32,
    ymin: i32,
    width: usize,
    height: usize,
    lookup: Vec<i32>,
    coords: Vec<Coord>,
    boundary_mask: Vec<bool>,
    boundary: Vec<u32>,
    inner_boundary: Vec<u32>,
    outer_boundary: Vec<u32>,
    degrees: Vec<u8>,
    torus_side: Option<i32>,
    edges: OnceLock<Vec<(u32, u32)>>,
}

/// Build the box Λ_n with its outer ring as boundary.
pub fn build_box(n: i32) -> Result<Arc<SiteGraph>> {
    if n < 0 {
        return Err(Error::InvalidGeometry(format!("box radius {n} < 0")));
    }
    SiteGraph::from_predicate(
        Topology::Box { n },
        (-n, -n),
        (2 * n + 1) as usize,
        (2 * n + 1) as usize,
        |_| true,
        |(x, y)| x.abs() == n || y.abs() == n,
        None,
    )
}

/// Box [-n, n]² with free boundary (a plane window).
pub fn build_window(n: i32) -> Result<Arc<SiteGraph>> {
    if n < 0 {
        return Err(Error::InvalidGeometry(format!("window radius {n} < 0")));
    }
    SiteGraph::from_predicate(
        Topology::Window { n },
        (-n, -n),
        (2 * n + 1) as usize,
        (2 * n + 1) as usize,
        |_| true,
        |_| false,
        None,
    )
}

/// Annulus Λ_m \ Λ_n. Non-integer outer radii are truncated downward by the
/// caller before reaching this function.
pub fn build_annulus(m: i32, n: i32) -> Result<Arc<SiteGraph>> {
    if m <= n || n < 0 {
        return Err(Error::InvalidGeometry(format!(
            "annulus requires m > n >= 0, got m={m}, n={n}"
        )));
    }
    let g = SiteGraph::from_predicate(
        Topology::Annulus { m, n },
        (-m, -m),
        (2 * m + 1) as usize,
        (2 * m + 1) as usize,
        |(x, y)| x.abs().max(y.abs()) > n,
        |(x, y)| {
            let r = x.abs().max(y.abs());
            r == m || r == n + 1
        },
        None,
    )?;
    Ok(g)
}

/// Torus (Z/side Z)².
pub fn build_torus(side: i32) -> Result<Arc<SiteGraph>> {
    if side < 2 {
        return Err(Error::InvalidGeometry(format!("torus side {side} < 2")));
    }
    SiteGraph::from_predicate(
        Topology::Torus { side },
        (0, 0),
        side as usize,
        side as usize,
        |_| true,
        |_| false,
        Some(side),
    )
}

impl SiteGraph {
    #[allow(clippy::too_many_arguments)]
    fn from_predicate(
        topology: Topology,
        origin: Coord,
        width: usize,
        height: usize,
        member: impl Fn(Coord) -> bool,
        is_boundary: impl Fn(Coord) -> bool,
        torus_side: Option<i32>,
    ) -> Result<Arc<SiteGraph>> {
        let mut lookup = vec![-1i32; width * height];
        let mut coords = Vec::new();
        for iy in 0..height {
            for ix in 0..width {
                let c = (origin.0 + ix as i32, origin.1 + iy as i32);
                if member(c) {
                    lookup[iy * width + ix] = coords.len() as i32;
                    coords.push(c);
                }
            }
        }
        let mut g = SiteGraph {
            topology,
            xmin: origin.0,
            ymin: origin.1,
            width,
            height,
            lookup,
            coords,
            boundary_mask: Vec::new(),
            boundary: Vec::new(),
            inner_boundary: Vec::new(),
            outer_boundary: Vec::new(),
            degrees: Vec::new(),
            torus_side,
            edges: OnceLock::new(),
        };
        g.boundary_mask = g.coords.iter().map(|&c| is_boundary(c)).collect();
        g.boundary = (0..g.coords.len() as u32)
            .filter(|&i| g.boundary_mask[i as usize])
            .collect();
        if let Topology::Annulus { m, n } = topology {
            // the two rings coincide when m = n + 1
            for &i in &g.boundary {
                let (x, y) = g.coords[i as usize];
                let r = x.abs().max(y.abs());
                if r == n + 1 {
                    g.inner_boundary.push(i);
                }
                if r == m {
                    g.outer_boundary.push(i);
                }
            }
        }
        let mut degrees = vec![0u8; g.coords.len()];
        for i in 0..g.coords.len() {
            let mut d = 0;
            g.for_neighbors(i, |_| d += 1);
            degrees[i] = d;
        }
        g.degrees = degrees;
        Ok(Arc::new(g))
    }

    pub fn nsites(&self) -> usize {
        self.coords.len()
    }

    pub fn coord(&self, i: usize) -> Coord {
        self.coords[i]
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    /// Site index for a coordinate, applying torus wrapping when relevant.
    pub fn site(&self, c: Coord) -> Option<usize> {
        let (x, y) = match self.torus_side {
            Some(s) => (c.0.rem_euclid(s), c.1.rem_euclid(s)),
            None => c,
        };
        if x < self.xmin || y < self.ymin {
            return None;
        }
        let (ix, iy) = ((x - self.xmin) as usize, (y - self.ymin) as usize);
        if ix >= self.width || iy >= self.height {
            return None;
        }
        match self.lookup[iy * self.width + ix] {
            -1 => None,
            v => Some(v as usize),
        }
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary_mask[i]
    }

    pub fn boundary(&self) -> &[u32] {
        &self.boundary
    }

    /// Inner ring of an annulus (empty otherwise).
    pub fn inner_boundary(&self) -> &[u32] {
        &self.inner_boundary
    }

    /// Outer ring of an annulus (empty otherwise).
    pub fn outer_boundary(&self) -> &[u32] {
        &self.outer_boundary
    }

    pub fn degree(&self, i: usize) -> usize {
        self.degrees[i] as usize
    }

    pub fn for_neighbors(&self, i: usize, mut f: impl FnMut(usize)) {
        let (x, y) = self.coords[i];
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            if let Some(j) = self.site((x + dx, y + dy)) {
                f(j);
            }
        }
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut v = Vec::with_capacity(4);
        self.for_neighbors(i, |j| v.push(j));
        v
    }

    /// Undirected edge list with u < v, built once on first use.
    pub fn edges(&self) -> &[(u32, u32)] {
        self.edges.get_or_init(|| {
            let mut out = Vec::with_capacity(2 * self.nsites());
            for i in 0..self.nsites() {
                self.for_neighbors(i, |j| {
                    if i < j {
                        out.push((i as u32, j as u32));
                    }
                });
            }
            // a side-2 torus visits each wrap edge twice
            out.sort_unstable();
            out.dedup();
            out
        })
    }

    pub fn distance(&self, metric: JumpMetric, a: usize, b: usize) -> f64 {
        let (pa, pb) = (self.coords[a], self.coords[b]);
        match self.torus_side {
            None => metric.dist(pa, pb),
            Some(s) => {
                let mut best = f64::INFINITY;
                for wx in [-s, 0, s] {
                    for wy in [-s, 0, s] {
                        let d = metric.dist(pa, (pb.0 + wx, pb.1 + wy));
                        if d < best {
                            best = d;
                        }
                    }
                }
                best
            }
        }
    }

    /// Member sites within metric distance k of `x` (including `x`),
    /// clipped to the graph.
    pub fn kjump_ball(&self, x: usize, k: i32, metric: JumpMetric) -> Vec<usize> {
        let mut out = vec![x];
        let (cx, cy) = self.coords[x];
        for (dx, dy) in metric.ball_offsets(k) {
            if let Some(j) = self.site((cx + dx, cy + dy)) {
                if j != x && !out.contains(&j) {
                    out.push(j);
                }
            }
        }
        out
    }

    pub fn is_torus(&self) -> bool {
        self.torus_side.is_some()
    }

    /// Side length for boxes/windows/tori (number of sites per axis).
    pub fn side(&self) -> usize {
        self.width
    }
}

/// One cell of a tessellation together with its surrounding annulus.
pub struct Cell {
    /// Grid position of the cell inside the tessellation.
    pub grid: (i32, i32),
    /// Center of the cell in window coordinates.
    pub center: Coord,
    /// Cell excluded because its annulus-plus-cell region contains the root.
    pub excluded_root: bool,
    /// Cell excluded because its annulus does not fit inside the window.
    pub clipped: bool,
}

/// Tessellation of a window into translated boxes of radius `n` with
/// surrounding annuli Λ_⌊3n/2⌋ \ Λ_n.
pub struct Tessellation {
    pub cell_radius: i32,
    pub annulus_outer: i32,
    pub cells: Vec<Cell>,
    pub grid_width: i32,
    pub grid_height: i32,
    window: Arc<SiteGraph>,
}

/// Tessellate a window with cells Λ_n, annuli Λ_⌊3n/2⌋ \ Λ_n around each
/// cell, and grid adjacency between cells. Cells whose annulus region would
/// contain the root (the window origin) are flagged excluded.
pub fn tessellate(window: &Arc<SiteGraph>, n: i32) -> Result<Tessellation> {
    if n < 1 {
        return Err(Error::InvalidGeometry(format!("cell radius {n} < 1")));
    }
    let side = 2 * n + 1;
    let outer = 3 * n / 2;
    let half = match window.topology {
        Topology::Box { n } | Topology::Window { n } => n,
        _ => {
            return Err(Error::InvalidGeometry(
                "tessellation requires a box or window".into(),
            ))
        }
    };
    let q = (2 * half + 1) / side;
    if q < 1 {
        return Err(Error::InvalidGeometry(format!(
            "window of radius {half} smaller than one cell of side {side}"
        )));
    }
    let span = q * side;
    let start = -half + (2 * half + 1 - span) / 2 + n;
    let mut cells = Vec::new();
    for gy in 0..q {
        for gx in 0..q {
            let center = (start + gx * side, start + gy * side);
            let reach = outer;
            let contains_root = center.0.abs() <= reach && center.1.abs() <= reach;
            let clipped = center.0.abs() + outer > half || center.1.abs() + outer > half;
            cells.push(Cell {
                grid: (gx, gy),
                center,
                excluded_root: contains_root,
                clipped,
            });
        }
    }
    Ok(Tessellation {
        cell_radius: n,
        annulus_outer: outer,
        cells,
        grid_width: q,
        grid_height: q,
        window: Arc::clone(window),
    })
}

impl Tessellation {
    pub fn cell(&self, gx: i32, gy: i32) -> Option<&Cell> {
        if gx < 0 || gy < 0 || gx >= self.grid_width || gy >= self.grid_height {
            return None;
        }
        Some(&self.cells[(gy * self.grid_width + gx) as usize])
    }

    /// L∞ distance between two cells in grid units.
    pub fn cell_distance(&self, a: &Cell, b: &Cell) -> i32 {
        (a.grid.0 - b.grid.0).abs().max((a.grid.1 - b.grid.1).abs())
    }

    /// Annuli become independent data sources beyond this grid distance.
    pub fn independent(&self, a: &Cell, b: &Cell) -> bool {
        self.cell_distance(a, b) > 2
    }

    /// Window sites of the annulus around a cell.
    pub fn annulus_sites(&self, cell: &Cell) -> Vec<usize> {
        self.region_sites(cell, |r| r > self.cell_radius && r <= self.annulus_outer)
    }

    /// Window sites of the cell box itself.
    pub fn cell_sites(&self, cell: &Cell) -> Vec<usize> {
        self.region_sites(cell, |r| r <= self.cell_radius)
    }

    /// Window sites of the full cell-plus-annulus region.
    pub fn region(&self, cell: &Cell) -> Vec<usize> {
        self.region_sites(cell, |r| r <= self.annulus_outer)
    }

    fn region_sites(&self, cell: &Cell, keep: impl Fn(i32) -> bool) -> Vec<usize> {
        let mut out = Vec::new();
        let o = self.annulus_outer;
        for dy in -o..=o {
            for dx in -o..=o {
                if keep(dx.abs().max(dy.abs())) {
                    if let Some(i) = self.window.site((cell.center.0 + dx, cell.center.1 + dy)) {
                        out.push(i);
                    }
                }
            }
        }
        out
    }

    /// Inner ring of the annulus (adjacent to the cell).
    pub fn annulus_inner_ring(&self, cell: &Cell) -> Vec<usize> {
        self.region_sites(cell, |r| r == self.cell_radius + 1)
    }

    /// Outer ring of the annulus.
    pub fn annulus_outer_ring(&self, cell: &Cell) -> Vec<usize> {
        self.region_sites(cell, |r| r == self.annulus_outer)
    }

    pub fn window(&self) -> &Arc<SiteGraph> {
        &self.window
    }
}
