//! Global finite element spaces, the eight-block mixed space, Dirichlet
//! tables and interpolation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basis::{ElementGeometry, Entity, Family, RefBasis, Tab};
use crate::error::{Error, Result};
use crate::mesh::{BoundaryTag, TriMesh};

/// Scalar data callback `f(x, y)`.
pub type ScalarFn = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;

/// Arrangement of the physical coordinates on the mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Both mesh coordinates are spatial.
    Stationary,
    /// First mesh coordinate is space, second is time.
    SpaceTime,
}

impl Layout {
    pub fn spatial_dims(self) -> usize {
        match self {
            Layout::Stationary => 2,
            Layout::SpaceTime => 1,
        }
    }

    /// Only one spatial dimension fits a triangular space-time mesh.
    pub fn space_time(spatial_dims: usize) -> Result<Layout> {
        match spatial_dims {
            1 => Ok(Layout::SpaceTime),
            d => Err(Error::Argument(format!(
                "space-time runs with {d} spatial dimensions need prismatic meshes, which are not supported"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxFamily {
    Rt,
    VectorLagrange,
}

/// The eight fields in block order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    U,
    Q,
    R,
    T,
    Psi,
    Phi,
    Xi,
    Eta,
}

impl Field {
    pub const ALL: [Field; 8] = [
        Field::U,
        Field::Q,
        Field::R,
        Field::T,
        Field::Psi,
        Field::Phi,
        Field::Xi,
        Field::Eta,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_trial(self) -> bool {
        self.index() < 4
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Field::U => "u",
            Field::Q => "q",
            Field::R => "r",
            Field::T => "t",
            Field::Psi => "psi",
            Field::Phi => "phi",
            Field::Xi => "xi",
            Field::Eta => "eta",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum DofKey {
    Vertex(usize, usize),
    Edge(usize, usize, usize, usize),
    Interior(usize, usize, usize),
}

/// One finite element space over a mesh with its global numbering.
#[derive(Debug, Clone)]
pub struct FeSpace {
    basis: Arc<RefBasis>,
    ndofs: usize,
    nloc: usize,
    cell_dofs: Vec<usize>,
    cell_signs: Vec<f64>,
}

impl FeSpace {
    pub fn new(mesh: &TriMesh, basis: RefBasis) -> Self {
        let nloc = basis.ndofs();
        let ne = mesh.num_triangles();
        let mut cell_dofs = Vec::with_capacity(ne * nloc);
        let mut cell_signs = Vec::with_capacity(ne * nloc);
        if !basis.family().is_continuous() {
            cell_dofs.extend(0..ne * nloc);
            cell_signs.resize(ne * nloc, 1.0);
            return FeSpace {
                basis: Arc::new(basis),
                ndofs: ne * nloc,
                nloc,
                cell_dofs,
                cell_signs,
            };
        }
        let p = basis.degree();
        let rt = basis.family() == Family::RaviartThomas;
        let mut numbering: HashMap<DofKey, usize> = HashMap::new();
        for (k, tri) in mesh.triangles().iter().enumerate() {
            for de in basis.entities() {
                let (key, sign) = match de.entity {
                    Entity::Vertex(v) => (DofKey::Vertex(tri[v], de.comp), 1.0),
                    Entity::Edge { edge, index } => {
                        let a = tri[(edge + 1) % 3];
                        let b = tri[(edge + 2) % 3];
                        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                        if rt {
                            let sign = if a < b || index % 2 == 1 { 1.0 } else { -1.0 };
                            (DofKey::Edge(lo, hi, index, de.comp), sign)
                        } else {
                            let j = if a < b { index } else { p - index };
                            (DofKey::Edge(lo, hi, j, de.comp), 1.0)
                        }
                    }
                    Entity::Interior(i) => (DofKey::Interior(k, i, de.comp), 1.0),
                };
                let next = numbering.len();
                let id = *numbering.entry(key).or_insert(next);
                cell_dofs.push(id);
                cell_signs.push(sign);
            }
        }
        FeSpace {
            basis: Arc::new(basis),
            ndofs: numbering.len(),
            nloc,
            cell_dofs,
            cell_signs,
        }
    }

    pub fn basis(&self) -> &RefBasis {
        &self.basis
    }

    pub fn family(&self) -> Family {
        self.basis.family()
    }

    pub fn ndofs(&self) -> usize {
        self.ndofs
    }

    /// Local dof count per element.
    pub fn nloc(&self) -> usize {
        self.nloc
    }

    pub fn dofs(&self, elem: usize) -> &[usize] {
        &self.cell_dofs[elem * self.nloc..(elem + 1) * self.nloc]
    }

    /// Orientation signs relating local shape functions to global ones.
    pub fn signs(&self, elem: usize) -> &[f64] {
        &self.cell_signs[elem * self.nloc..(elem + 1) * self.nloc]
    }

    /// Global shape functions of `elem` tabulated at reference points.
    pub fn tabulate(&self, geom: &ElementGeometry, pts: &[[f64; 2]], elem: usize) -> Tab {
        let mut tab = geom.push_forward_tab(self.family(), &self.basis.eval_unchecked(pts));
        tab.scale_rows(self.signs(elem));
        tab
    }

    /// Coefficients of the element's global shape functions, in the row
    /// order of [`FeSpace::tabulate`].
    pub fn gather(&self, coeffs: &[f64], elem: usize) -> Vec<f64> {
        self.dofs(elem).iter().map(|&d| coeffs[d]).collect()
    }

    /// Nodal / moment interpolant of `f`; scalar families use `f(x)[0]`.
    pub fn interpolate(&self, mesh: &TriMesh, f: &dyn Fn([f64; 2]) -> [f64; 2]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.ndofs];
        for elem in 0..mesh.num_triangles() {
            let geom = ElementGeometry::new(mesh.corners(elem))?;
            let fam = self.family();
            let local = self.basis.reference_dofs(&|xh| geom.pull_back(fam, f(geom.map(xh))));
            for ((&d, &s), v) in self.dofs(elem).iter().zip(self.signs(elem)).zip(local) {
                out[d] = s * v;
            }
        }
        Ok(out)
    }

    /// Value and gradient of a global field at reference point `xh` of `elem`.
    pub fn eval(
        &self,
        mesh: &TriMesh,
        coeffs: &[f64],
        elem: usize,
        xh: [f64; 2],
    ) -> Result<([f64; 2], [[f64; 2]; 2])> {
        let geom = ElementGeometry::new(mesh.corners(elem))?;
        let tab = self.tabulate(&geom, &[xh], elem);
        Ok(tab.combine(&self.gather(coeffs, elem), 0))
    }
}

/// The trial blocks `(u, q, r, t)` followed by the error-representation
/// blocks `(ψ, φ, ξ, η)`, numbered consecutively.
#[derive(Debug, Clone)]
pub struct MixedSpace {
    mesh: Arc<TriMesh>,
    layout: Layout,
    degree: usize,
    flux_family: FluxFamily,
    enrichment: usize,
    blocks: Vec<FeSpace>,
    offsets: [usize; 9],
}

pub fn build_mixed_space(
    mesh: Arc<TriMesh>,
    p: usize,
    flux_family: FluxFamily,
    layout: Layout,
    enrichment: usize,
) -> Result<MixedSpace> {
    if !(1..=3).contains(&p) {
        return Err(Error::Argument(format!("degree {p} outside 1..=3")));
    }
    if enrichment > 1 {
        return Err(Error::Argument(format!("test enrichment {enrichment} outside 0..=1")));
    }
    let ds = layout.spatial_dims();
    let flux = match (layout, flux_family) {
        (Layout::Stationary, FluxFamily::Rt) => RefBasis::new(Family::RaviartThomas, p)?,
        (Layout::Stationary, FluxFamily::VectorLagrange) => RefBasis::new(Family::VectorLagrange, p)?,
        (Layout::SpaceTime, FluxFamily::VectorLagrange) => {
            RefBasis::with_components(Family::VectorLagrange, p, 1)?
        }
        (Layout::SpaceTime, FluxFamily::Rt) => {
            return Err(Error::Argument(
                "space-time fluxes are one-component fields; use the vector_lagrange flux family".into(),
            ))
        }
    };
    let pt = p + enrichment;
    let scalar = RefBasis::new(Family::Lagrange, p)?;
    let scalar_dg = RefBasis::new(Family::LagrangeDg, pt)?;
    let vector_dg = RefBasis::with_components(Family::VectorLagrangeDg, pt, ds)?;
    let m = &*mesh;
    let blocks = vec![
        FeSpace::new(m, scalar.clone()),
        FeSpace::new(m, scalar),
        FeSpace::new(m, flux.clone()),
        FeSpace::new(m, flux),
        FeSpace::new(m, scalar_dg.clone()),
        FeSpace::new(m, scalar_dg),
        FeSpace::new(m, vector_dg.clone()),
        FeSpace::new(m, vector_dg),
    ];
    let mut offsets = [0; 9];
    for (i, b) in blocks.iter().enumerate() {
        offsets[i + 1] = offsets[i] + b.ndofs();
    }
    Ok(MixedSpace {
        mesh,
        layout,
        degree: p,
        flux_family,
        enrichment,
        blocks,
        offsets,
    })
}

impl MixedSpace {
    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn flux_family(&self) -> FluxFamily {
        self.flux_family
    }

    pub fn enrichment(&self) -> usize {
        self.enrichment
    }

    pub fn block(&self, f: Field) -> &FeSpace {
        &self.blocks[f.index()]
    }

    pub fn offsets(&self) -> &[usize; 9] {
        &self.offsets
    }

    pub fn offset(&self, f: Field) -> usize {
        self.offsets[f.index()]
    }

    pub fn range(&self, f: Field) -> std::ops::Range<usize> {
        self.offsets[f.index()]..self.offsets[f.index() + 1]
    }

    pub fn total_dim(&self) -> usize {
        self.offsets[8]
    }

    /// Dimension of the trial blocks.
    pub fn solution_dim(&self) -> usize {
        self.offsets[4]
    }

    /// Local dof count of all eight blocks on one element.
    pub fn nloc(&self) -> usize {
        self.blocks.iter().map(FeSpace::nloc).sum()
    }

    /// Global indices of the local dofs of `elem`, block by block.
    pub fn element_dofs(&self, elem: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nloc());
        for f in Field::ALL {
            let off = self.offset(f);
            out.extend(self.block(f).dofs(elem).iter().map(|d| d + off));
        }
        out
    }

    /// Offsets of each block inside the element-local vector.
    pub fn local_offsets(&self) -> [usize; 9] {
        let mut o = [0; 9];
        for (i, b) in self.blocks.iter().enumerate() {
            o[i + 1] = o[i] + b.nloc();
        }
        o
    }

    /// Writes an interpolant into the block of `field`.
    pub fn interpolate_into(
        &self,
        field: Field,
        state: &mut [f64],
        f: &dyn Fn([f64; 2]) -> [f64; 2],
    ) -> Result<()> {
        let vals = self.block(field).interpolate(&self.mesh, f)?;
        state[self.range(field)].copy_from_slice(&vals);
        Ok(())
    }

    /// Transfers the trial blocks of `state` from the parent mesh `coarse`
    /// onto this space, whose mesh refines it. Error-representation blocks
    /// start at zero.
    pub fn prolong(&self, coarse: &MixedSpace, state: &[f64]) -> Result<Vec<f64>> {
        let mesh = &*self.mesh;
        if mesh.parent().len() != mesh.num_triangles() {
            return Err(Error::Argument("mesh carries no parent map".into()));
        }
        let mut out = vec![0.0; self.total_dim()];
        let cmesh = coarse.mesh();
        let cgeoms = (0..cmesh.num_triangles())
            .map(|e| ElementGeometry::new(cmesh.corners(e)))
            .collect::<Result<Vec<_>>>()?;
        for field in [Field::U, Field::Q, Field::R, Field::T] {
            let fine = self.block(field);
            let cspace = coarse.block(field);
            let ccoef = &state[coarse.range(field)];
            let off = self.offset(field);
            for elem in 0..mesh.num_triangles() {
                let parent = mesh.parent()[elem];
                let cg = &cgeoms[parent];
                let cglobal = cspace.gather(ccoef, parent);
                let geom = ElementGeometry::new(mesh.corners(elem))?;
                let fam = fine.family();
                let local = fine.basis().reference_dofs(&|xh| {
                    let x = geom.map(xh);
                    let xc = cg.inverse_map(x);
                    let tab = cspace.tabulate(cg, &[xc], parent);
                    geom.pull_back(fam, tab.combine(&cglobal, 0).0)
                });
                for ((&d, &s), v) in fine.dofs(elem).iter().zip(fine.signs(elem)).zip(local) {
                    out[off + d] = s * v;
                }
            }
        }
        Ok(out)
    }
}

/// Boundary data for the strongly imposed `u` and `q` conditions, keyed by
/// boundary tag.
#[derive(Clone, Default)]
pub struct BoundaryData {
    pub u: BTreeMap<BoundaryTag, ScalarFn>,
    pub q: BTreeMap<BoundaryTag, ScalarFn>,
}

impl fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundaryData")
            .field("u", &self.u.keys().collect::<Vec<_>>())
            .field("q", &self.q.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl BoundaryData {
    /// Same callback on every listed tag.
    pub fn uniform(u: ScalarFn, u_tags: &[BoundaryTag], q: ScalarFn, q_tags: &[BoundaryTag]) -> Self {
        BoundaryData {
            u: u_tags.iter().map(|&t| (t, u.clone())).collect(),
            q: q_tags.iter().map(|&t| (t, q.clone())).collect(),
        }
    }
}

/// Tags on which `u` and `q` are prescribed for a layout. Space-time runs
/// fix `u` on the walls and at the initial time and `q` on the walls; the
/// final-time edge is free.
pub fn dirichlet_tags(layout: Layout) -> (&'static [BoundaryTag], &'static [BoundaryTag]) {
    use BoundaryTag::*;
    match layout {
        Layout::Stationary => (&[Left, Right, Bottom, Top], &[Left, Right, Bottom, Top]),
        Layout::SpaceTime => (&[Left, Right, Bottom], &[Left, Right]),
    }
}

/// Prescribed values of constrained dofs in the mixed numbering.
#[derive(Debug, Clone)]
pub struct DirichletTable {
    entries: BTreeMap<usize, f64>,
    mask: Vec<bool>,
    free: Vec<usize>,
}

impl DirichletTable {
    pub fn empty(n: usize) -> Self {
        DirichletTable::from_entries(n, BTreeMap::new())
    }

    fn from_entries(n: usize, entries: BTreeMap<usize, f64>) -> Self {
        let mut mask = vec![false; n];
        for &d in entries.keys() {
            mask[d] = true;
        }
        let free = (0..n).filter(|&i| !mask[i]).collect();
        DirichletTable { entries, mask, free }
    }

    pub fn entries(&self) -> &BTreeMap<usize, f64> {
        &self.entries
    }

    pub fn is_fixed(&self, dof: usize) -> bool {
        self.mask[dof]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Unconstrained dofs in increasing order.
    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Overwrites constrained entries of `state` with their values.
    pub fn impose(&self, state: &mut [f64]) {
        for (&d, &v) in &self.entries {
            state[d] = v;
        }
    }

    /// Same constrained dofs with all values zero.
    pub fn homogeneous(&self) -> Self {
        DirichletTable {
            entries: self.entries.keys().map(|&k| (k, 0.0)).collect(),
            mask: self.mask.clone(),
            free: self.free.clone(),
        }
    }
}

pub fn apply_dirichlet(ms: &MixedSpace, data: &BoundaryData) -> Result<DirichletTable> {
    let (u_tags, q_tags) = dirichlet_tags(ms.layout());
    let mesh = ms.mesh();
    let mut entries = BTreeMap::new();
    for (field, tags, map) in [(Field::U, u_tags, &data.u), (Field::Q, q_tags, &data.q)] {
        for tag in tags {
            if !map.contains_key(tag) {
                return Err(Error::Config(format!("no {field} boundary data for tag {tag:?}")));
            }
        }
        let space = ms.block(field);
        let basis = space.basis();
        let off = ms.offset(field);
        for &tag in tags {
            let g = &map[&tag];
            for (elem, tri) in mesh.triangles().iter().enumerate() {
                let geom = ElementGeometry::new(mesh.corners(elem))?;
                for e in 0..3 {
                    let a = tri[(e + 1) % 3];
                    let b = tri[(e + 2) % 3];
                    if mesh.boundary_tag(a, b) != Some(tag) {
                        continue;
                    }
                    for (i, de) in basis.entities().iter().enumerate() {
                        let on_edge = match de.entity {
                            Entity::Vertex(v) => v != e,
                            Entity::Edge { edge, .. } => edge == e,
                            Entity::Interior(_) => false,
                        };
                        if on_edge {
                            let x = geom.map(basis.nodes()[i]);
                            entries.entry(off + space.dofs(elem)[i]).or_insert_with(|| g(x));
                        }
                    }
                }
            }
        }
    }
    Ok(DirichletTable::from_entries(ms.total_dim(), entries))
}
