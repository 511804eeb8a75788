//! Hierarchical icosahedral meshes.
//!
//! Vertices of an order-`k` mesh are laid out so that the first
//! `prefix_count(j)` vertices are exactly the order-`j` mesh for every
//! `j <= k`. Subdivision appends edge midpoints after all parent vertices,
//! ordered by their parent edge `(min, max)` index pair. Pooling is then a
//! slice and up-pooling a zero extension.

use std::collections::BTreeSet;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};

/// Highest supported subdivision order (655362 vertices).
pub const MAX_ORDER: usize = 8;

/// Length of a ring: six neighbor slots plus the closing repeat of the first.
pub const RING_LEN: usize = 7;

/// Number of vertices of the order-`order` icosphere, `10·4^order + 2`.
pub fn prefix_count(order: usize) -> usize {
    10 * (1usize << (2 * order)) + 2
}

/// Number of edges of the order-`order` icosphere.
pub fn edge_count(order: usize) -> usize {
    30 * (1usize << (2 * order))
}

/// Number of triangular faces of the order-`order` icosphere.
pub fn face_count(order: usize) -> usize {
    20 * (1usize << (2 * order))
}

const PHI: f64 = 1.618_033_988_749_895;

// Canonical base icosahedron. Index order is fixed; every downstream index
// (rings, atlases, checkpoints) depends on it.
const BASE_VERTICES: [[f64; 3]; 12] = [
    [-1.0, PHI, 0.0],
    [1.0, PHI, 0.0],
    [-1.0, -PHI, 0.0],
    [1.0, -PHI, 0.0],
    [0.0, -1.0, PHI],
    [0.0, 1.0, PHI],
    [0.0, -1.0, -PHI],
    [0.0, 1.0, -PHI],
    [PHI, 0.0, -1.0],
    [PHI, 0.0, 1.0],
    [-PHI, 0.0, -1.0],
    [-PHI, 0.0, 1.0],
];

// Counterclockwise when seen from outside the sphere.
const BASE_FACES: [[u32; 3]; 20] = [
    [0, 11, 5],
    [0, 5, 1],
    [0, 1, 7],
    [0, 7, 10],
    [0, 10, 11],
    [1, 5, 9],
    [5, 11, 4],
    [11, 10, 2],
    [10, 7, 6],
    [7, 1, 8],
    [3, 9, 4],
    [3, 4, 2],
    [3, 2, 6],
    [3, 6, 8],
    [3, 8, 9],
    [4, 9, 5],
    [2, 4, 11],
    [6, 2, 10],
    [8, 6, 7],
    [9, 8, 1],
];

/// An icosphere of a given subdivision order.
///
/// Immutable after construction; share it freely between threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Icosphere {
    order: usize,
    vertices: Vec<[f64; 3]>,
    faces: Vec<[u32; 3]>,
    /// Closed counterclockwise ring per vertex: slots 0..6 hold the
    /// neighbors (pentagons repeat the first neighbor in slot 5) and slot 6
    /// repeats slot 0.
    rings: Vec<[u32; RING_LEN]>,
    degrees: Vec<u8>,
}

impl Icosphere {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[u32; 3]] {
        &self.faces
    }

    /// All rings, indexed by vertex.
    pub fn rings(&self) -> &[[u32; RING_LEN]] {
        &self.rings
    }

    /// Vertex counts for orders `0..=order`.
    pub fn prefix_counts(&self) -> Vec<usize> {
        (0..=self.order).map(prefix_count).collect()
    }

    /// Number of distinct neighbors of `v` (5 or 6).
    pub fn degree(&self, v: usize) -> usize {
        self.degrees[v] as usize
    }

    /// Distinct neighbors of `v` in counterclockwise order.
    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.rings[v][..self.degree(v)]
    }

    /// Ordered 1-ring of `v`, see [`ordered_ring`].
    pub fn ordered_ring(&self, v: usize) -> Result<[u32; RING_LEN]> {
        if v >= self.vertex_count() {
            return Err(Error::range(
                "vertex index",
                v,
                format!("[0, {})", self.vertex_count()),
            ));
        }
        Ok(self.rings[v])
    }

    /// Sorted, deduplicated vertex set within `radius` edge hops of `v`
    /// (including `v`).
    pub fn k_ring(&self, v: usize, radius: usize) -> Vec<u32> {
        let mut seen = BTreeSet::new();
        seen.insert(v as u32);
        let mut frontier = vec![v as u32];
        for _ in 0..radius {
            let mut next = Vec::new();
            for &u in &frontier {
                for &w in self.neighbors(u as usize) {
                    if seen.insert(w) {
                        next.push(w);
                    }
                }
            }
            frontier = next;
        }
        seen.into_iter().collect()
    }

    /// All undirected edges as `(min, max)` pairs, sorted.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        sorted_edges(&self.faces)
    }
}

fn normalize(p: [f64; 3]) -> [f64; 3] {
    let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    [p[0] / n, p[1] / n, p[2] / n]
}

fn sorted_edges(faces: &[[u32; 3]]) -> Vec<(u32, u32)> {
    let mut edges: Vec<(u32, u32)> = faces
        .iter()
        .flat_map(|f| {
            [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])]
                .into_iter()
                .map(|(a, b)| (a.min(b), a.max(b)))
        })
        .collect();
    edges.sort_unstable();
    edges.dedup();
    edges
}

fn subdivide(vertices: &mut Vec<[f64; 3]>, faces: &[[u32; 3]]) -> Vec<[u32; 3]> {
    let edges = sorted_edges(faces);
    let base = vertices.len() as u32;
    for &(a, b) in &edges {
        let (pa, pb) = (vertices[a as usize], vertices[b as usize]);
        vertices.push(normalize([pa[0] + pb[0], pa[1] + pb[1], pa[2] + pb[2]]));
    }
    let midpoint = |a: u32, b: u32| -> u32 {
        let key = (a.min(b), a.max(b));
        base + edges.binary_search(&key).expect("edge present") as u32
    };
    let mut out = Vec::with_capacity(faces.len() * 4);
    for &[a, b, c] in faces {
        let (ab, bc, ca) = (midpoint(a, b), midpoint(b, c), midpoint(c, a));
        out.push([a, ab, ca]);
        out.push([b, bc, ab]);
        out.push([c, ca, bc]);
        out.push([ab, bc, ca]);
    }
    out
}

fn build_rings(n: usize, faces: &[[u32; 3]]) -> (Vec<[u32; RING_LEN]>, Vec<u8>) {
    // successor[v] holds (a, b) pairs meaning "after a comes b" going
    // counterclockwise around v.
    let mut successor: Vec<Vec<(u32, u32)>> = vec![Vec::with_capacity(6); n];
    for &[a, b, c] in faces {
        successor[a as usize].push((b, c));
        successor[b as usize].push((c, a));
        successor[c as usize].push((a, b));
    }
    let mut rings = Vec::with_capacity(n);
    let mut degrees = Vec::with_capacity(n);
    for succ in &successor {
        let start = succ
            .iter()
            .map(|&(a, _)| a)
            .min()
            .expect("vertex has faces");
        let mut ring = [start; RING_LEN];
        let mut cur = start;
        for slot in ring.iter_mut().take(succ.len()) {
            *slot = cur;
            cur = succ.iter().find(|&&(a, _)| a == cur).expect("closed fan").1;
        }
        debug_assert_eq!(cur, start);
        // Pentagons: slot 5 repeats the first neighbor; slot 6 closes the cycle.
        rings.push(ring);
        degrees.push(succ.len() as u8);
    }
    (rings, degrees)
}

/// Builds the order-`order` icosphere. Output is bit-identical across calls.
pub fn build_icosphere(order: usize) -> Result<Icosphere> {
    if order > MAX_ORDER {
        return Err(Error::range(
            "icosphere order",
            order,
            format!("[0, {MAX_ORDER}]"),
        ));
    }
    let mut vertices: Vec<[f64; 3]> = BASE_VERTICES.iter().map(|&p| normalize(p)).collect();
    vertices.reserve(prefix_count(order) - 12);
    let mut faces = BASE_FACES.to_vec();
    for _ in 0..order {
        faces = subdivide(&mut vertices, &faces);
    }
    let (rings, degrees) = build_rings(vertices.len(), &faces);
    Ok(Icosphere {
        order,
        vertices,
        faces,
        rings,
        degrees,
    })
}

static SHARED: [OnceLock<Arc<Icosphere>>; MAX_ORDER + 1] =
    [const { OnceLock::new() }; MAX_ORDER + 1];

/// Process-wide cached mesh of the given order, built on first use.
pub fn shared_icosphere(order: usize) -> Result<Arc<Icosphere>> {
    if order > MAX_ORDER {
        return Err(Error::range(
            "icosphere order",
            order,
            format!("[0, {MAX_ORDER}]"),
        ));
    }
    Ok(SHARED[order]
        .get_or_init(|| Arc::new(build_icosphere(order).expect("order checked")))
        .clone())
}

/// Ordered 1-ring of vertex `v` as a closed 7-entry cycle.
///
/// Neighbors run counterclockwise seen from outside the sphere, starting
/// from the smallest neighbor index. Entry 6 always repeats entry 0; for
/// the twelve degree-5 vertices entry 5 also repeats entry 0.
pub fn ordered_ring(mesh: &Icosphere, v: usize) -> Result<[u32; RING_LEN]> {
    mesh.ordered_ring(v)
}
