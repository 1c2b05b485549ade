//! Cluster analysis with k-jump adjacency, annulus crossings, coarse
//! renormalization to a finitely dependent cell process, exponential decay
//! fits on log-probabilities, and the nested masked-graph family cut out of
//! coupled massive fields.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gff::VectorField;
use crate::lattice::{Cell, JumpMetric, SiteGraph, Tessellation};
use crate::loopsoup::LoopSoup;
use crate::rngutil::stream_rng;
use crate::stats::{weighted_line_fit, LineFit};

pub struct UnionFind {
    parent: Vec<u32>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> UnionFind {
        UnionFind {
            parent: (0..n as u32).collect(),
            rank: vec![0; n],
        }
    }

    pub fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let gp = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = gp;
            x = gp;
        }
        x
    }

    pub fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra as usize].cmp(&self.rank[rb as usize]) {
            std::cmp::Ordering::Less => self.parent[ra as usize] = rb,
            std::cmp::Ordering::Greater => self.parent[rb as usize] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb as usize] = ra;
                self.rank[ra as usize] += 1;
            }
        }
    }
}

/// Partition of a site mask into k-jump connected clusters.
pub struct ClusterLabeling {
    /// Cluster id per site, -1 off the mask.
    pub labels: Vec<i32>,
    pub sizes: Vec<u32>,
    /// Diameter per cluster in the jump metric (L1 or L∞ windows only).
    pub diameters: Vec<f64>,
    pub count: usize,
}

impl ClusterLabeling {
    pub fn largest(&self) -> u32 {
        self.sizes.iter().copied().max().unwrap_or(0)
    }

    pub fn max_diameter(&self) -> f64 {
        self.diameters.iter().copied().fold(0.0, f64::max)
    }
}

/// Label the k-jump clusters of a mask.
pub fn clusters(
    graph: &SiteGraph,
    mask: &[bool],
    k: i32,
    metric: JumpMetric,
) -> Result<ClusterLabeling> {
    if k < 1 {
        return Err(Error::InvalidArgument(format!("jump {k} < 1")));
    }
    let offsets = metric.ball_offsets(k);
    let mut uf = UnionFind::new(graph.nsites());
    for s in 0..graph.nsites() {
        if !mask[s] {
            continue;
        }
        let (cx, cy) = graph.coord(s);
        for &(dx, dy) in &offsets {
            if let Some(t) = graph.site((cx + dx, cy + dy)) {
                if t > s && mask[t] {
                    uf.union(s as u32, t as u32);
                }
            }
        }
    }
    let mut labels = vec![-1i32; graph.nsites()];
    let mut ids: Vec<u32> = Vec::new();
    let mut sizes: Vec<u32> = Vec::new();
    // track spans of (x+y) and (x−y) for L1 diameters, plain spans for L∞
    let mut span_u: Vec<(i64, i64)> = Vec::new();
    let mut span_v: Vec<(i64, i64)> = Vec::new();
    for s in 0..graph.nsites() {
        if !mask[s] {
            continue;
        }
        let root = uf.find(s as u32);
        let id = match ids.iter().position(|&r| r == root) {
            Some(i) => i,
            None => {
                ids.push(root);
                sizes.push(0);
                span_u.push((i64::MAX, i64::MIN));
                span_v.push((i64::MAX, i64::MIN));
                ids.len() - 1
            }
        };
        labels[s] = id as i32;
        sizes[id] += 1;
        let (x, y) = graph.coord(s);
        let (u, v) = match metric {
            JumpMetric::L1 => ((x + y) as i64, (x - y) as i64),
            _ => (x as i64, y as i64),
        };
        span_u[id] = (span_u[id].0.min(u), span_u[id].1.max(u));
        span_v[id] = (span_v[id].0.min(v), span_v[id].1.max(v));
    }
    let diameters: Vec<f64> = span_u
        .iter()
        .zip(&span_v)
        .map(|(&(ulo, uhi), &(vlo, vhi))| ((uhi - ulo).max(vhi - vlo)).max(0) as f64)
        .collect();
    Ok(ClusterLabeling {
        labels,
        sizes,
        diameters,
        count: ids.len(),
    })
}

/// Quick connectivity query between two sites within a mask.
pub fn connected(
    graph: &SiteGraph,
    mask: &[bool],
    k: i32,
    metric: JumpMetric,
    a: usize,
    b: usize,
) -> Result<bool> {
    if !mask[a] || !mask[b] {
        return Ok(false);
    }
    if a == b {
        return Ok(true);
    }
    let offsets = metric.ball_offsets(k);
    let mut seen = vec![false; graph.nsites()];
    let mut queue = std::collections::VecDeque::new();
    seen[a] = true;
    queue.push_back(a);
    while let Some(x) = queue.pop_front() {
        let (cx, cy) = graph.coord(x);
        for &(dx, dy) in &offsets {
            if let Some(t) = graph.site((cx + dx, cy + dy)) {
                if t == b && mask[t] {
                    return Ok(true);
                }
                if !seen[t] && mask[t] {
                    seen[t] = true;
                    queue.push_back(t);
                }
            }
        }
    }
    Ok(false)
}

/// k-path crossing of one tessellation annulus inside a mask: true when the
/// inner ring connects to the outer ring through masked annulus sites.
pub fn annulus_crossing_mask(
    tess: &Tessellation,
    cell: &Cell,
    mask: &[bool],
    k: i32,
    metric: JumpMetric,
) -> bool {
    let graph = tess.window();
    let annulus = tess.annulus_sites(cell);
    let mut in_annulus = vec![false; graph.nsites()];
    for &s in &annulus {
        in_annulus[s] = true;
    }
    let inner = tess.annulus_inner_ring(cell);
    let outer_ring = tess.annulus_outer_ring(cell);
    let mut is_outer = vec![false; graph.nsites()];
    for &s in &outer_ring {
        is_outer[s] = true;
    }
    let offsets = metric.ball_offsets(k);
    let mut seen = vec![false; graph.nsites()];
    let mut queue = std::collections::VecDeque::new();
    for &s in &inner {
        if mask[s] {
            if is_outer[s] {
                return true;
            }
            seen[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(x) = queue.pop_front() {
        let (cx, cy) = graph.coord(x);
        for &(dx, dy) in &offsets {
            if let Some(t) = graph.site((cx + dx, cy + dy)) {
                if seen[t] || !in_annulus[t] || !mask[t] {
                    continue;
                }
                if is_outer[t] {
                    return true;
                }
                seen[t] = true;
                queue.push_back(t);
            }
        }
    }
    false
}

/// Crossing with the mask {values ≤ threshold} (values are squared norms).
pub fn annulus_crossing_level(
    tess: &Tessellation,
    cell: &Cell,
    values: &[f64],
    threshold: f64,
    k: i32,
) -> bool {
    let mask: Vec<bool> = values.iter().map(|&v| v <= threshold).collect();
    annulus_crossing_mask(tess, cell, &mask, k, JumpMetric::L1)
}

/// Coarse site process on the tessellation grid from per-cell indicators.
pub struct CoarseProcess {
    pub open: Vec<bool>,
    pub grid_width: i32,
    pub grid_height: i32,
}

impl CoarseProcess {
    /// Cluster sizes and L∞ grid diameters of the open cells (grid
    /// adjacency).
    pub fn cluster_stats(&self) -> (Vec<u32>, Vec<i32>) {
        let n = self.open.len();
        let mut uf = UnionFind::new(n);
        let w = self.grid_width;
        for i in 0..n as i32 {
            if !self.open[i as usize] {
                continue;
            }
            let (x, y) = (i % w, i / w);
            for (dx, dy) in [(1, 0), (0, 1)] {
                let (nx, ny) = (x + dx, y + dy);
                if nx < w && ny < self.grid_height {
                    let j = ny * w + nx;
                    if self.open[j as usize] {
                        uf.union(i as u32, j as u32);
                    }
                }
            }
        }
        let mut ids: Vec<u32> = Vec::new();
        let mut sizes = Vec::new();
        let mut bbox: Vec<(i32, i32, i32, i32)> = Vec::new();
        for i in 0..n {
            if !self.open[i] {
                continue;
            }
            let root = uf.find(i as u32);
            let id = match ids.iter().position(|&r| r == root) {
                Some(k) => k,
                None => {
                    ids.push(root);
                    sizes.push(0u32);
                    bbox.push((i32::MAX, i32::MIN, i32::MAX, i32::MIN));
                    ids.len() - 1
                }
            };
            sizes[id] += 1;
            let (x, y) = (i as i32 % w, i as i32 / w);
            let b = &mut bbox[id];
            b.0 = b.0.min(x);
            b.1 = b.1.max(x);
            b.2 = b.2.min(y);
            b.3 = b.3.max(y);
        }
        let diams = bbox
            .iter()
            .map(|&(x0, x1, y0, y1)| (x1 - x0).max(y1 - y0).max(0))
            .collect();
        (sizes, diams)
    }
}

/// Coarse process from a fine mask: a cell opens when its annulus is
/// crossed by a k-path inside the mask.
pub fn renormalize(tess: &Tessellation, mask: &[bool], k: i32) -> CoarseProcess {
    let open: Vec<bool> = tess
        .cells
        .iter()
        .map(|c| annulus_crossing_mask(tess, c, mask, k, JumpMetric::L1))
        .collect();
    CoarseProcess {
        open,
        grid_width: tess.grid_width,
        grid_height: tess.grid_height,
    }
}

/// One distance row of a connectivity scan.
#[derive(Debug, Clone, Copy)]
pub struct DecayRow {
    pub distance: f64,
    pub probability: f64,
    pub stderr: f64,
}

/// Exponential fit of probabilities against distance.
#[derive(Debug, Clone, Copy)]
pub struct DecayFit {
    /// Decay rate ψ (positive when probabilities fall off).
    pub rate: f64,
    pub rate_se: f64,
    pub log_intercept: f64,
    pub r_squared: f64,
    /// Rows dropped because their estimate was zero.
    pub dropped: usize,
    pub used: usize,
}

impl DecayFit {
    /// 95% confidence interval of the rate.
    pub fn rate_ci(&self) -> (f64, f64) {
        (
            self.rate - 1.96 * self.rate_se,
            self.rate + 1.96 * self.rate_se,
        )
    }
}

/// Weighted least squares on log-probabilities. Zero estimates are dropped
/// with a count in the result; at least two usable rows are required.
pub fn decay_scan(rows: &[DecayRow]) -> Result<DecayFit> {
    let usable: Vec<&DecayRow> = rows.iter().filter(|r| r.probability > 0.0).collect();
    let dropped = rows.len() - usable.len();
    if usable.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "decay fit needs at least 2 nonzero rows, got {}",
            usable.len()
        )));
    }
    let xs: Vec<f64> = usable.iter().map(|r| r.distance).collect();
    let ys: Vec<f64> = usable.iter().map(|r| r.probability.ln()).collect();
    let ws: Vec<f64> = usable
        .iter()
        .map(|r| {
            let sigma_log = (r.stderr / r.probability).max(1e-9);
            1.0 / (sigma_log * sigma_log)
        })
        .collect();
    let LineFit {
        slope,
        intercept,
        slope_se,
        r_squared,
    } = weighted_line_fit(&xs, &ys, &ws);
    Ok(DecayFit {
        rate: -slope,
        rate_se: slope_se,
        log_intercept: intercept,
        r_squared,
        dropped,
        used: usable.len(),
    })
}

/// Survival rows P(size ≥ s) of a cluster-size list on a grid of levels.
pub fn size_survival_rows(sizes: &[u32], levels: &[u32]) -> Vec<DecayRow> {
    let n = sizes.len().max(1) as f64;
    levels
        .iter()
        .map(|&s| {
            let k = sizes.iter().filter(|&&x| x >= s).count() as f64;
            let p = k / n;
            DecayRow {
                distance: s as f64,
                probability: p,
                stderr: (p * (1.0 - p) / n).sqrt(),
            }
        })
        .collect()
}

/// Nested family of masked graphs over a mass grid, cut from one coupled
/// loop ensemble: site kept when its total occupation exceeds β.
pub struct GmFamily {
    pub graph: Arc<SiteGraph>,
    pub beta: f64,
    pub masses: Vec<f64>,
    pub masks: Vec<Vec<bool>>,
}

pub fn build_gm_family(soup: &LoopSoup, masses: &[f64], beta: f64) -> Result<GmFamily> {
    if beta < 0.0 {
        return Err(Error::InvalidArgument("negative beta".into()));
    }
    let mut ms = masses.to_vec();
    ms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut masks = Vec::with_capacity(ms.len());
    for &m in &ms {
        let lt = soup.local_time(m)?;
        let mask: Vec<bool> = (0..soup.graph.nsites())
            .map(|s| lt.total(s) > beta)
            .collect();
        masks.push(mask);
    }
    Ok(GmFamily {
        graph: Arc::clone(&soup.graph),
        beta,
        masses: ms,
        masks,
    })
}

/// Single-mass mask straight from a sampled field: {‖φ(x)‖² > β}.
pub fn gm_mask_from_field(field: &VectorField, beta: f64) -> Vec<bool> {
    (0..field.graph.nsites())
        .map(|s| field.norm2(s) > beta)
        .collect()
}

/// Complement cluster sizes of a mask under k-jump adjacency.
pub fn complement_cluster_sizes(graph: &SiteGraph, mask: &[bool], k: i32) -> Result<Vec<u32>> {
    let comp: Vec<bool> = mask.iter().map(|&b| !b).collect();
    Ok(clusters(graph, &comp, k, JumpMetric::L1)?.sizes)
}

/// Independent edge percolation: open marks per graph edge.
pub fn bernoulli_edges(graph: &SiteGraph, p: f64, seed: u64) -> Vec<bool> {
    let mut rng = stream_rng(seed, 0xbe55);
    graph
        .edges()
        .iter()
        .map(|_| rng.random::<f64>() < p)
        .collect()
}

/// Does an open-edge cluster inside the site mask span the window from the
/// left edge to the right edge? Wrap edges of a torus are ignored so the
/// crossing is a genuine window crossing.
pub fn spans_horizontally(graph: &SiteGraph, site_mask: &[bool], open_edges: &[bool]) -> bool {
    let mut uf = UnionFind::new(graph.nsites());
    for (e, &(u, v)) in graph.edges().iter().enumerate() {
        if !open_edges[e] || !site_mask[u as usize] || !site_mask[v as usize] {
            continue;
        }
        let (a, b) = (graph.coord(u as usize), graph.coord(v as usize));
        if (a.0 - b.0).abs() > 1 || (a.1 - b.1).abs() > 1 {
            continue;
        }
        uf.union(u, v);
    }
    let (mut xmin, mut xmax) = (i32::MAX, i32::MIN);
    for s in 0..graph.nsites() {
        let c = graph.coord(s);
        xmin = xmin.min(c.0);
        xmax = xmax.max(c.0);
    }
    let mut left_roots = std::collections::HashSet::new();
    for s in 0..graph.nsites() {
        if site_mask[s] && graph.coord(s).0 == xmin {
            left_roots.insert(uf.find(s as u32));
        }
    }
    for s in 0..graph.nsites() {
        if site_mask[s] && graph.coord(s).0 == xmax && left_roots.contains(&uf.find(s as u32)) {
            return true;
        }
    }
    false
}

/// Cluster statistics of a set of edges seen through the dual lattice:
/// two member edges connect when their dual edges share a plaquette.
/// Returns (size, L∞ diameter in plaquette units) per cluster.
pub fn dual_edge_cluster_stats(graph: &SiteGraph, included: &[bool]) -> Vec<(u32, i32)> {
    let edges = graph.edges();
    let mut plaq_ids: std::collections::HashMap<(i32, i32), u32> = std::collections::HashMap::new();
    let mut next = 0u32;
    let mut pairs = Vec::new();
    let mut coords = Vec::new();
    for (e, &(u, v)) in edges.iter().enumerate() {
        if !included[e] {
            continue;
        }
        let (a, b) = (graph.coord(u as usize), graph.coord(v as usize));
        if (a.0 - b.0).abs() > 1 || (a.1 - b.1).abs() > 1 {
            continue; // wrap edges have no window plaquette pair
        }
        let (p, q) = if a.1 == b.1 {
            let x = a.0.min(b.0);
            ((x, a.1), (x, a.1 - 1))
        } else {
            let y = a.1.min(b.1);
            ((a.0, y), (a.0 - 1, y))
        };
        let mut id_of = |key: (i32, i32)| -> u32 {
            *plaq_ids.entry(key).or_insert_with(|| {
                let v = next;
                next += 1;
                coords.push(key);
                v
            })
        };
        let (ip, iq) = (id_of(p), id_of(q));
        pairs.push((ip, iq));
    }
    let mut uf = UnionFind::new(next as usize);
    for &(a, b) in &pairs {
        uf.union(a, b);
    }
    let mut stats: std::collections::HashMap<u32, (u32, i32, i32, i32, i32)> =
        std::collections::HashMap::new();
    for id in 0..next {
        let root = uf.find(id);
        let c = coords[id as usize];
        let e = stats
            .entry(root)
            .or_insert((0, i32::MAX, i32::MIN, i32::MAX, i32::MIN));
        e.0 += 1;
        e.1 = e.1.min(c.0);
        e.2 = e.2.max(c.0);
        e.3 = e.3.min(c.1);
        e.4 = e.4.max(c.1);
    }
    stats
        .into_values()
        .map(|(n, x0, x1, y0, y1)| (n, (x1 - x0).max(y1 - y0).max(0)))
        .collect()
}

/// Blocked edges of a diluted percolation on a masked graph: an edge is
/// blocked when it is closed or leaves the mask. Subcritical dilution makes
/// their dual clusters logarithmically small, which is the obstruction
/// diagnostic for strong percolation inside the mask.
pub fn blocked_edge_dual_stats(
    graph: &SiteGraph,
    site_mask: &[bool],
    open_edges: &[bool],
) -> Vec<(u32, i32)> {
    let blocked: Vec<bool> = graph
        .edges()
        .iter()
        .enumerate()
        .map(|(e, &(u, v))| !open_edges[e] || !site_mask[u as usize] || !site_mask[v as usize])
        .collect();
    dual_edge_cluster_stats(graph, &blocked)
}

/// L∞ dilation of a site set by radius 1 (the blocking neighborhood).
pub fn dilate_linf(graph: &SiteGraph, mask: &[bool]) -> Vec<bool> {
    let mut out = vec![false; graph.nsites()];
    for s in 0..graph.nsites() {
        if !mask[s] {
            continue;
        }
        let (cx, cy) = graph.coord(s);
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(t) = graph.site((cx + dx, cy + dy)) {
                    out[t] = true;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_box, build_window, tessellate};

    #[test]
    fn full_and_empty_masks() {
        let g = build_window(4).unwrap();
        let full = vec![true; g.nsites()];
        let lab = clusters(&g, &full, 1, JumpMetric::L1).unwrap();
        assert_eq!(lab.count, 1);
        assert_eq!(lab.largest() as usize, g.nsites());
        let empty = vec![false; g.nsites()];
        let lab2 = clusters(&g, &empty, 1, JumpMetric::L1).unwrap();
        assert_eq!(lab2.count, 0);
    }

    #[test]
    fn checkerboard_masks_depend_on_jump() {
        let g = build_window(5).unwrap();
        let mask: Vec<bool> = (0..g.nsites())
            .map(|s| {
                let c = g.coord(s);
                (c.0 + c.1).rem_euclid(2) == 0
            })
            .collect();
        let k1 = clusters(&g, &mask, 1, JumpMetric::L1).unwrap();
        assert!(k1.sizes.iter().all(|&s| s == 1), "k=1 gives singletons");
        let k2 = clusters(&g, &mask, 2, JumpMetric::L1).unwrap();
        assert_eq!(k2.count, 1, "k=2 joins the checkerboard");
    }

    #[test]
    fn diameters_in_l1() {
        let g = build_window(6).unwrap();
        let mut mask = vec![false; g.nsites()];
        // a horizontal segment of length 5
        for x in -2..=2 {
            mask[g.site((x, 0)).unwrap()] = true;
        }
        let lab = clusters(&g, &mask, 1, JumpMetric::L1).unwrap();
        assert_eq!(lab.count, 1);
        assert_eq!(lab.max_diameter(), 4.0);
    }

    #[test]
    fn crossing_thresholds() {
        let w = build_window(12).unwrap();
        let t = tessellate(&w, 2).unwrap();
        let cell = t
            .cells
            .iter()
            .find(|c| !c.excluded_root && !c.clipped)
            .unwrap();
        let lo = vec![0.5; w.nsites()];
        let hi = vec![2.0; w.nsites()];
        assert!(annulus_crossing_level(&t, cell, &lo, 1.0, 1));
        assert!(!annulus_crossing_level(&t, cell, &hi, 1.0, 1));
    }

    #[test]
    fn renormalization_diameter_transfer() {
        // a straight fine path of diameter ℓ forces a coarse cluster of
        // diameter at least 0.2·ℓ/n
        let w = build_window(40).unwrap();
        let n = 2;
        let t = tessellate(&w, n).unwrap();
        let mut mask = vec![false; w.nsites()];
        for x in -30..=30 {
            mask[w.site((x, 1)).unwrap()] = true;
        }
        let fine = clusters(&w, &mask, 1, JumpMetric::L1).unwrap();
        let ell = fine.max_diameter();
        let coarse = renormalize(&t, &mask, 1);
        let (_, diams) = coarse.cluster_stats();
        let max_coarse = diams.iter().copied().max().unwrap_or(0) as f64;
        assert!(
            max_coarse >= 0.2 * ell / n as f64,
            "coarse {max_coarse} fine {ell}"
        );
        // an L-shaped path as a second adversarial mask
        let mut mask2 = vec![false; w.nsites()];
        for x in -25..=0 {
            mask2[w.site((x, -3)).unwrap()] = true;
        }
        for y in -3..=25 {
            mask2[w.site((0, y)).unwrap()] = true;
        }
        let fine2 = clusters(&w, &mask2, 1, JumpMetric::L1).unwrap();
        let coarse2 = renormalize(&t, &mask2, 1);
        let (_, diams2) = coarse2.cluster_stats();
        let max_coarse2 = diams2.iter().copied().max().unwrap_or(0) as f64;
        assert!(max_coarse2 >= 0.2 * fine2.max_diameter() / n as f64);
    }

    #[test]
    fn coarse_degenerate_cases() {
        let w = build_window(12).unwrap();
        let t = tessellate(&w, 2).unwrap();
        let closed = CoarseProcess {
            open: vec![false; t.cells.len()],
            grid_width: t.grid_width,
            grid_height: t.grid_height,
        };
        assert_eq!(closed.cluster_stats().0.len(), 0);
        let open = CoarseProcess {
            open: vec![true; t.cells.len()],
            grid_width: t.grid_width,
            grid_height: t.grid_height,
        };
        let (sizes, diams) = open.cluster_stats();
        assert_eq!(sizes, vec![t.cells.len() as u32]);
        assert_eq!(diams[0], t.grid_width - 1);
    }

    #[test]
    fn decay_fit_recovers_exact_rate() {
        let rows: Vec<DecayRow> = (1..=8)
            .map(|r| DecayRow {
                distance: r as f64,
                probability: (-0.5 * r as f64).exp(),
                stderr: 0.0,
            })
            .collect();
        let fit = decay_scan(&rows).unwrap();
        assert!((fit.rate - 0.5).abs() < 1e-6, "rate {}", fit.rate);
        assert!(fit.r_squared > 0.999999);
        assert_eq!(fit.dropped, 0);
    }

    #[test]
    fn decay_fit_drops_zero_rows() {
        let mut rows: Vec<DecayRow> = (1..=5)
            .map(|r| DecayRow {
                distance: r as f64,
                probability: (-0.3 * r as f64).exp(),
                stderr: 1e-4,
            })
            .collect();
        rows.push(DecayRow {
            distance: 6.0,
            probability: 0.0,
            stderr: 0.0,
        });
        let fit = decay_scan(&rows).unwrap();
        assert_eq!(fit.dropped, 1);
        assert_eq!(fit.used, 5);
        assert!((fit.rate - 0.3).abs() < 1e-3);
    }

    #[test]
    fn gm_family_is_nested_and_shrinks_with_beta() {
        let g = build_box(6).unwrap();
        let zs: Vec<usize> = g.boundary().iter().map(|&b| b as usize).collect();
        let soup = crate::loopsoup::sample_soup(&g, &zs, 2, 0.0, 42).unwrap();
        let fam = build_gm_family(&soup, &[0.0, 0.3, 0.8], 0.5).unwrap();
        for w in fam.masks.windows(2) {
            for s in 0..g.nsites() {
                // larger mass keeps fewer sites
                assert!(!w[1][s] || w[0][s]);
            }
        }
        let fam_hi = build_gm_family(&soup, &[0.3], 2.0).unwrap();
        let count_lo: usize = fam.masks[1].iter().filter(|&&b| b).count();
        let count_hi: usize = fam_hi.masks[0].iter().filter(|&&b| b).count();
        assert!(count_hi <= count_lo);
        // β → 0 keeps every positive-occupation site (all interior)
        let fam0 = build_gm_family(&soup, &[0.0], 0.0).unwrap();
        let interior = g.nsites() - g.boundary().len();
        assert_eq!(fam0.masks[0].iter().filter(|&&b| b).count(), interior);
    }

    #[test]
    fn spanning_detection() {
        let g = build_window(5).unwrap();
        let mask = vec![true; g.nsites()];
        let all_open = vec![true; g.edges().len()];
        assert!(spans_horizontally(&g, &mask, &all_open));
        let all_closed = vec![false; g.edges().len()];
        assert!(!spans_horizontally(&g, &mask, &all_closed));
        // cutting a vertical column of sites blocks the span
        let mut cut = mask.clone();
        for y in -5..=5 {
            cut[g.site((0, y)).unwrap()] = false;
        }
        assert!(!spans_horizontally(&g, &cut, &all_open));
    }

    #[test]
    fn blocked_clusters_stay_logarithmic_when_subcritical() {
        let g = build_window(64).unwrap();
        let side = g.side() as f64;
        let mask = vec![true; g.nsites()];
        let mut worst = Vec::new();
        for (qi, q) in [0.25f64, 0.45].into_iter().enumerate() {
            let mut max_diam = 0i32;
            for seed in 0..8 {
                let open = bernoulli_edges(&g, 1.0 - q, 100 * qi as u64 + seed);
                let stats = blocked_edge_dual_stats(&g, &mask, &open);
                max_diam = max_diam.max(stats.iter().map(|s| s.1).max().unwrap_or(0));
            }
            worst.push(max_diam);
        }
        // deeper subcritical dilution gives smaller blocked clusters, and
        // both stay within a C·log n envelope at these parameters
        assert!(worst[0] < worst[1], "diameters {worst:?}");
        assert!(
            (worst[0] as f64) <= 12.0 * side.ln(),
            "q=0.25 max diameter {} vs C log n {}",
            worst[0],
            12.0 * side.ln()
        );
    }

    #[test]
    fn dilation_grows_by_one_ring() {
        let g = build_window(4).unwrap();
        let mut mask = vec![false; g.nsites()];
        mask[g.site((0, 0)).unwrap()] = true;
        let d = dilate_linf(&g, &mask);
        let count = d.iter().filter(|&&b| b).count();
        assert_eq!(count, 9);
    }
}
