//! Conforming triangulations of axis-aligned rectangles.
//!
//! Every triangle is stored counter-clockwise as `[newest, a, b]`: the first
//! vertex is the newest vertex and `(a, b)` is the refinement edge that the
//! next bisection splits. Local edge `i` is the edge opposite local vertex
//! `i`, running from vertex `(i + 1) % 3` to vertex `(i + 2) % 3`.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named sides of the rectangular domain. For space-time meshes the second
/// coordinate is time, so `Bottom` is the initial-time edge and `Top` the
/// final-time edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryTag {
    Left,
    Right,
    Bottom,
    Top,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 4] = [
        BoundaryTag::Left,
        BoundaryTag::Right,
        BoundaryTag::Bottom,
        BoundaryTag::Top,
    ];
}

pub type EdgeKey = (usize, usize);

#[inline]
pub fn edge_key(a: usize, b: usize) -> EdgeKey {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Edge numbering derived from the triangle list.
#[derive(Debug, Clone)]
pub struct Topology {
    /// Sorted vertex pairs.
    pub edges: Vec<EdgeKey>,
    /// Edge id of local edge `i` of each triangle.
    pub tri_edges: Vec<[usize; 3]>,
    /// Incident triangles of each edge (one for boundary edges).
    pub edge_tris: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: BTreeMap<EdgeKey, BoundaryTag>,
    generation: Vec<u32>,
    parent: Vec<usize>,
    bounds: [f64; 4],
    topology: Topology,
}

impl TriMesh {
    fn assemble(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        boundary: BTreeMap<EdgeKey, BoundaryTag>,
        generation: Vec<u32>,
        parent: Vec<usize>,
        bounds: [f64; 4],
    ) -> Self {
        let topology = build_topology(&triangles);
        TriMesh {
            vertices,
            triangles,
            boundary,
            generation,
            parent,
            bounds,
            topology,
        }
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn boundary(&self) -> &BTreeMap<EdgeKey, BoundaryTag> {
        &self.boundary
    }

    pub fn boundary_tag(&self, a: usize, b: usize) -> Option<BoundaryTag> {
        self.boundary.get(&edge_key(a, b)).copied()
    }

    /// Number of bisections separating each triangle from the seed mesh.
    pub fn generation(&self) -> &[u32] {
        &self.generation
    }

    /// For every triangle, the index of the triangle of the previous mesh
    /// that contains it (identity for a freshly constructed mesh).
    pub fn parent(&self) -> &[usize] {
        &self.parent
    }

    /// `[x0, x1, y0, y1]` of the rectangular domain.
    pub fn bounds(&self) -> [f64; 4] {
        self.bounds
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn corners(&self, elem: usize) -> [[f64; 2]; 3] {
        let t = self.triangles[elem];
        [
            self.vertices[t[0]],
            self.vertices[t[1]],
            self.vertices[t[2]],
        ]
    }

    pub fn area(&self, elem: usize) -> f64 {
        signed_area(&self.corners(elem))
    }

    /// Element diameter `h_m`, the longest edge.
    pub fn diameter(&self, elem: usize) -> f64 {
        let c = self.corners(elem);
        (0..3)
            .map(|i| dist(c[i], c[(i + 1) % 3]))
            .fold(0.0, f64::max)
    }

    pub fn max_diameter(&self) -> f64 {
        (0..self.num_triangles())
            .map(|e| self.diameter(e))
            .fold(0.0, f64::max)
    }

    pub fn centroid(&self, elem: usize) -> [f64; 2] {
        let c = self.corners(elem);
        [
            (c[0][0] + c[1][0] + c[2][0]) / 3.0,
            (c[0][1] + c[1][1] + c[2][1]) / 3.0,
        ]
    }

    /// Checks orientation, edge incidences and boundary tagging.
    pub fn check_conformity(&self) -> Result<()> {
        for (e, _) in self.triangles.iter().enumerate() {
            if self.area(e) <= 0.0 {
                return Err(Error::Geometry(format!(
                    "triangle {e} has non-positive signed area"
                )));
            }
        }
        let topo = &self.topology;
        let mut boundary_edges = 0;
        for (id, tris) in topo.edge_tris.iter().enumerate() {
            let key = topo.edges[id];
            match tris.len() {
                1 => {
                    if !self.boundary.contains_key(&key) {
                        return Err(Error::Geometry(format!(
                            "edge {key:?} has one incident triangle but is not a tagged boundary edge (hanging node)"
                        )));
                    }
                    boundary_edges += 1;
                }
                2 => {
                    if self.boundary.contains_key(&key) {
                        return Err(Error::Geometry(format!(
                            "interior edge {key:?} carries a boundary tag"
                        )));
                    }
                }
                n => {
                    return Err(Error::Geometry(format!(
                        "edge {key:?} is shared by {n} triangles"
                    )))
                }
            }
        }
        if boundary_edges != self.boundary.len() {
            return Err(Error::Geometry(format!(
                "{} tagged boundary edges but {} edges with a single triangle",
                self.boundary.len(),
                boundary_edges
            )));
        }
        Ok(())
    }
}

pub fn signed_area(c: &[[f64; 2]; 3]) -> f64 {
    0.5 * ((c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1]))
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn midpoint(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

fn build_topology(triangles: &[[usize; 3]]) -> Topology {
    let mut ids: HashMap<EdgeKey, usize> = HashMap::with_capacity(triangles.len() * 2);
    let mut edges = Vec::new();
    let mut edge_tris: Vec<Vec<usize>> = Vec::new();
    let mut tri_edges = Vec::with_capacity(triangles.len());
    for (t, tri) in triangles.iter().enumerate() {
        let mut local = [0usize; 3];
        for (i, slot) in local.iter_mut().enumerate() {
            let key = edge_key(tri[(i + 1) % 3], tri[(i + 2) % 3]);
            let id = *ids.entry(key).or_insert_with(|| {
                edges.push(key);
                edge_tris.push(Vec::with_capacity(2));
                edges.len() - 1
            });
            edge_tris[id].push(t);
            *slot = id;
        }
        tri_edges.push(local);
    }
    Topology {
        edges,
        tri_edges,
        edge_tris,
    }
}

/// Structured mesh of `2 * nx * ny` right triangles; each cell is split along
/// its diagonal from lower-left to upper-right and the diagonal is the
/// refinement edge of both halves.
pub fn make_rect_mesh(x0: f64, x1: f64, y0: f64, y1: f64, nx: usize, ny: usize) -> Result<TriMesh> {
    if !(x1 > x0) || !(y1 > y0) || !x0.is_finite() || !x1.is_finite() || !y0.is_finite() || !y1.is_finite() {
        return Err(Error::Argument(format!(
            "rectangle [{x0}, {x1}] x [{y0}, {y1}] has non-positive extent"
        )));
    }
    if nx == 0 || ny == 0 {
        return Err(Error::Argument(format!(
            "cell counts must be positive, got {nx} x {ny}"
        )));
    }
    let vid = |i: usize, j: usize| j * (nx + 1) + i;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            // exact endpoints so boundary coordinates are reproduced bit-for-bit
            let x = if i == nx { x1 } else { x0 + (x1 - x0) * i as f64 / nx as f64 };
            let y = if j == ny { y1 } else { y0 + (y1 - y0) * j as f64 / ny as f64 };
            vertices.push([x, y]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let v00 = vid(i, j);
            let v10 = vid(i + 1, j);
            let v11 = vid(i + 1, j + 1);
            let v01 = vid(i, j + 1);
            triangles.push([v10, v11, v00]);
            triangles.push([v01, v00, v11]);
        }
    }
    let mut boundary = BTreeMap::new();
    for i in 0..nx {
        boundary.insert(edge_key(vid(i, 0), vid(i + 1, 0)), BoundaryTag::Bottom);
        boundary.insert(edge_key(vid(i, ny), vid(i + 1, ny)), BoundaryTag::Top);
    }
    for j in 0..ny {
        boundary.insert(edge_key(vid(0, j), vid(0, j + 1)), BoundaryTag::Left);
        boundary.insert(edge_key(vid(nx, j), vid(nx, j + 1)), BoundaryTag::Right);
    }
    let n = triangles.len();
    Ok(TriMesh::assemble(
        vertices,
        triangles,
        boundary,
        vec![0; n],
        (0..n).collect(),
        [x0, x1, y0, y1],
    ))
}

struct MidpointCache<'a> {
    vertices: &'a mut Vec<[f64; 2]>,
    mids: HashMap<EdgeKey, usize>,
}

impl MidpointCache<'_> {
    fn get(&mut self, a: usize, b: usize) -> usize {
        let key = edge_key(a, b);
        if let Some(&m) = self.mids.get(&key) {
            return m;
        }
        let p = midpoint(self.vertices[a], self.vertices[b]);
        self.vertices.push(p);
        let m = self.vertices.len() - 1;
        self.mids.insert(key, m);
        m
    }
}

fn split_boundary(
    boundary: &BTreeMap<EdgeKey, BoundaryTag>,
    mids: &HashMap<EdgeKey, usize>,
) -> BTreeMap<EdgeKey, BoundaryTag> {
    let mut out = BTreeMap::new();
    for (&(a, b), &tag) in boundary {
        match mids.get(&(a, b)) {
            Some(&m) => {
                out.insert(edge_key(a, m), tag);
                out.insert(edge_key(m, b), tag);
            }
            None => {
                out.insert((a, b), tag);
            }
        }
    }
    out
}

/// Red refinement: every triangle is replaced by four similar children.
/// Each child's refinement edge is the edge parallel to the parent's.
pub fn uniform_refine(mesh: &TriMesh) -> TriMesh {
    let mut vertices = mesh.vertices.clone();
    let mut cache = MidpointCache {
        vertices: &mut vertices,
        mids: HashMap::new(),
    };
    let mut triangles = Vec::with_capacity(4 * mesh.num_triangles());
    let mut generation = Vec::with_capacity(4 * mesh.num_triangles());
    let mut parent = Vec::with_capacity(4 * mesh.num_triangles());
    for (e, &[v0, v1, v2]) in mesh.triangles.iter().enumerate() {
        let m12 = cache.get(v1, v2);
        let m20 = cache.get(v2, v0);
        let m01 = cache.get(v0, v1);
        for child in [
            [v0, m01, m20],
            [m01, v1, m12],
            [m20, m12, v2],
            [m12, m20, m01],
        ] {
            triangles.push(child);
            generation.push(mesh.generation[e] + 2);
            parent.push(e);
        }
    }
    let mids = cache.mids;
    let boundary = split_boundary(&mesh.boundary, &mids);
    TriMesh::assemble(vertices, triangles, boundary, generation, parent, mesh.bounds)
}

/// Newest-vertex bisection of the marked triangles with conforming closure.
///
/// The set of edges to split is closed under "a triangle with any split edge
/// also splits its refinement edge"; triangles are then bisected until none of
/// their edges is marked. Unmarked edges are never split, so the result has no
/// hanging nodes.
pub fn refine(mesh: &TriMesh, marked: &[usize]) -> Result<TriMesh> {
    let n = mesh.num_triangles();
    if let Some(&bad) = marked.iter().find(|&&e| e >= n) {
        return Err(Error::Argument(format!(
            "marked element {bad} does not exist (mesh has {n} triangles)"
        )));
    }
    let topo = &mesh.topology;
    let mut split = vec![false; topo.edges.len()];
    let mut queue: Vec<usize> = Vec::new();
    for &e in marked {
        // local edge 0 is the refinement edge
        let r = topo.tri_edges[e][0];
        if !split[r] {
            split[r] = true;
            queue.push(r);
        }
    }
    while let Some(edge) = queue.pop() {
        for &t in &topo.edge_tris[edge] {
            let r = topo.tri_edges[t][0];
            if !split[r] {
                split[r] = true;
                queue.push(r);
            }
        }
    }
    let split_keys: HashSet<EdgeKey> = topo
        .edges
        .iter()
        .zip(&split)
        .filter_map(|(&k, &s)| s.then_some(k))
        .collect();

    let mut vertices = mesh.vertices.clone();
    let mut cache = MidpointCache {
        vertices: &mut vertices,
        mids: HashMap::new(),
    };
    let mut triangles = Vec::with_capacity(n + 2 * marked.len());
    let mut generation = Vec::with_capacity(n + 2 * marked.len());
    let mut parent = Vec::with_capacity(n + 2 * marked.len());
    let mut stack: Vec<([usize; 3], u32)> = Vec::new();
    for (e, &tri) in mesh.triangles.iter().enumerate() {
        stack.push((tri, mesh.generation[e]));
        while let Some((t, g)) = stack.pop() {
            let [v0, v1, v2] = t;
            if split_keys.contains(&edge_key(v1, v2)) {
                let m = cache.get(v1, v2);
                // pushed in reverse so the first child is emitted first
                stack.push(([m, v2, v0], g + 1));
                stack.push(([m, v0, v1], g + 1));
            } else {
                triangles.push(t);
                generation.push(g);
                parent.push(e);
            }
        }
    }
    let mids = cache.mids;
    let boundary = split_boundary(&mesh.boundary, &mids);
    Ok(TriMesh::assemble(
        vertices,
        triangles,
        boundary,
        generation,
        parent,
        mesh.bounds,
    ))
}
